"""Command-line entry point.

Every subcommand writes its results under ``--out`` (a file or directory,
depending on the command) and exits 0. On failure a JSON object
``{"error": <type>, "message": <text>}`` goes to stderr and the exit code is 1.

``--config`` points at a JSON file with optional sections ``synth``,
``capture`` and ``train``, whose keys override the matching dataclass
defaults. ``--seed`` overrides any seed given there.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .action_parse import (
    ParserModel,
    TrainConfig,
    accuracy_report,
    diving_schema,
    load_schema,
    save_schema,
    train_parser,
)
from .capture import FitConfig, capture_clip
from .dataset import build_dataset
from .embedding import fit_space, load_spaces, save_space
from .formats import load_clips, load_mocap, load_states, save_clips, save_mocap, save_states
from .kinematics import default_skeleton, load_skeleton, save_skeleton
from .stgcn import StgcnConfig, load_params, save_params
from .synth import SynthConfig, generate, two_cluster_schema

log = logging.getLogger("sportmotion")


class CliError(RuntimeError):
    pass


def _section(args, name: str) -> dict:
    if not args.config:
        return {}
    with open(args.config) as fh:
        obj = json.load(fh)
    return dict(obj.get(name, {}))


def _dataclass_from(cls, values: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise CliError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})


def train_config_from(values: dict, seed: int | None) -> TrainConfig:
    values = dict(values)
    width = values.pop("width", None)
    stgcn = values.pop("stgcn", None)
    cfg = _dataclass_from(TrainConfig, values)
    if stgcn is not None:
        cfg = dataclasses.replace(cfg, stgcn=_dataclass_from(StgcnConfig, stgcn))
    elif width is not None:
        cfg = dataclasses.replace(cfg, stgcn=StgcnConfig.scaled(float(width)))
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _out(args) -> Path:
    if not args.out:
        raise CliError("--out is required")
    return Path(args.out)


def _skeleton(path):
    return load_skeleton(path) if path else default_skeleton()


def _schema(args):
    if getattr(args, "schema", None):
        return load_schema(args.schema)
    data = getattr(args, "data", None)
    if data and (Path(data) / "schema.json").exists():
        return load_schema(Path(data) / "schema.json")
    return diving_schema()


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args) -> dict:
    out = _out(args)
    values = _section(args, "synth")
    if args.seed is not None:
        values["seed"] = args.seed
    if args.n_clips is not None:
        values["n_clips"] = args.n_clips
    config = _dataclass_from(SynthConfig, values)
    schema = two_cluster_schema() if args.sport == "toy" else _schema(args)
    skel = _skeleton(args.skeleton)
    data = generate(schema, skel, None, config)
    (out / "spaces").mkdir(parents=True, exist_ok=True)
    save_schema(schema, out / "schema.json")
    save_skeleton(skel, out / "skeleton.json")
    save_mocap(out / "mocap.json", data.mocap)
    save_clips(out / "clips.json", data.clips)
    save_states(out / "states.json", data.states)
    for sp in data.spaces:
        save_space(sp, out / "spaces" / f"{sp.submotion}.json")
    return {"clips": len(data.clips), "out": str(out)}


def cmd_fit_embedding(args) -> dict:
    out = _out(args)
    seqs = [s for path in args.mocap for s in load_mocap(path)]
    if not seqs:
        raise CliError("no mocap sequences")
    theta = np.concatenate([s.theta for s in seqs])
    labels = np.concatenate([np.asarray(s.submotions) for s in seqs])
    if args.submotion:
        # one space written to the --out file
        mask = labels == args.submotion if args.submotion != "all" else np.ones(len(labels), bool)
        if not mask.any():
            raise CliError(f"no frames labeled {args.submotion!r}")
        save_space(fit_space(theta[mask], args.K, args.submotion), out)
        return {"spaces": [args.submotion]}
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in dict.fromkeys(labels.tolist()):
        space = fit_space(theta[labels == name], args.K, name)
        save_space(space, out / f"{name}.json")
        written.append(name)
    if args.pooled:
        save_space(fit_space(theta, args.K, "all"), out / "all.json")
    return {"spaces": written, "pooled": bool(args.pooled)}


def cmd_capture(args) -> dict:
    clips = load_clips(args.clip)
    spaces = load_spaces(args.spaces)
    skel = _skeleton(args.skeleton)
    config = _dataclass_from(FitConfig, _section(args, "capture"))
    results = []
    for clip in clips:
        labels = None if args.select else clip.submotions
        if labels is not None and not all(labels):
            labels = None
        frames = capture_clip(clip.frames(), spaces, skel, labels, config)
        results.append([f.to_json() for f in frames])
    payload = results[0] if len(results) == 1 else results
    _out(args).write_text(json.dumps(payload))
    failed = sum(1 for clip in results for f in clip if "error" in f)
    return {"frames": sum(len(c) for c in results), "failed": failed}


def _parse_data(args, schema):
    if args.data:
        root = Path(args.data)
        args.clips = args.clips or str(root / "clips.json")
        if args.states is None and (root / "states.json").exists():
            args.states = str(root / "states.json")
    if not args.clips:
        raise CliError("give --clips or --data")
    clips = load_clips(args.clips)
    states = load_states(args.states) if args.states else None
    if states is not None and len(states) != len(clips):
        raise CliError(f"{len(states)} state sequences for {len(clips)} clips")
    return clips, states


def _n_coeffs(states) -> int:
    return len(states[0][0]["alpha"]) if states else 0


def cmd_parse_train(args) -> dict:
    schema = _schema(args)
    clips, states = _parse_data(args, schema)
    config = train_config_from(_section(args, "train"), args.seed)
    if "p" in config.streams and states is None:
        raise CliError("the P-stream needs --states")
    data = build_dataset(clips, states, schema, _n_coeffs(states))
    val = None
    if args.val_fraction > 0:
        order = np.random.default_rng(config.seed).permutation(len(data))
        n_val = int(round(args.val_fraction * len(data)))
        val = data.take(np.sort(order[:n_val]))
        data = data.take(np.sort(order[n_val:]))
    result = train_parser(data, schema, config, val)
    save_params(args.checkpoint or _out(args), result.model.params, result.model.meta())
    last = result.curves[-1]
    return {"epochs": len(result.curves), "loss": last["loss"], "val": last.get("val")}


def load_model(path) -> ParserModel:
    params, meta = load_params(path)
    return ParserModel.from_meta(meta, params)


def cmd_parse_eval(args) -> dict:
    if not args.checkpoint:
        raise CliError("--checkpoint (or --model) is required")
    model = load_model(args.checkpoint)
    schema = model.schema
    clips, states = _parse_data(args, schema)
    n_coeffs = model.gcn.coeff_channels - len(schema.submotions)
    report = accuracy_report(model, build_dataset(clips, states, schema, n_coeffs))
    if args.out:
        Path(args.out).write_text(json.dumps(report))
    return report


def _pred_keypoints(path):
    """Reprojected keypoints from a capture output, or keypoints from a clip file."""
    with open(path) as fh:
        obj = json.load(fh)
    if isinstance(obj, list):
        states = obj if obj and isinstance(obj[0], dict) else [f for clip in obj for f in clip]
        if any("reproj2d" not in f for f in states):
            raise CliError("capture output has failed frames without reprojections")
        return np.array([f["reproj2d"] for f in states]), None
    clips = load_clips(path)
    return np.concatenate([c.keypoints for c in clips]), np.concatenate([c.visibility for c in clips])


def _numbers(path, key):
    with open(path) as fh:
        obj = json.load(fh)
    if isinstance(obj, dict):
        obj = obj[key]
    return np.asarray(obj, dtype=np.float64)


def cmd_eval(args) -> float:
    if args.metric in ("pck0.3", "pck0.5"):
        pred, _ = _pred_keypoints(args.pred)
        gt, vis = _pred_keypoints(args.gt)
        if vis is None:
            raise CliError("--gt must be a clip file with visibility flags")
        value = metrics.pck(pred, gt, vis, threshold=float(args.metric[3:]))
    elif args.metric == "top1":
        value = metrics.top1(_numbers(args.pred, "probs"), _numbers(args.gt, "labels").astype(np.int64))
    else:
        value = metrics.spearman(_numbers(args.pred, "scores"), _numbers(args.gt, "scores"))
    if args.out:
        Path(args.out).write_text(json.dumps(value))
    return value


# -- wiring -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def flags(default):
        group = argparse.ArgumentParser(add_help=False)
        group.add_argument("--seed", type=int, default=default)
        group.add_argument("--config", default=default, help="JSON file with synth/capture/train sections")
        group.add_argument("--out", default=default)
        group.add_argument("-v", "--verbose", action="store_true", default=default or False)
        return group

    # global flags may come before or after the subcommand
    p = argparse.ArgumentParser(prog="sportmotion", parents=[flags(None)])
    common = flags(argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset directory")
    s.add_argument("--sport", choices=("diving", "toy"), default="diving")
    s.add_argument("--schema", default=None)
    s.add_argument("--skeleton", default=None)
    s.add_argument("--n-clips", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit-embedding", parents=[common], help="fit one PCA space per sub-motion")
    s.add_argument("--mocap", nargs="+", required=True)
    s.add_argument("--K", "--k", dest="K", type=int, default=25)
    s.add_argument("--submotion", default=None, help="fit only this label ('all' pools every frame); --out is a file")
    s.add_argument("--pooled", action="store_true", help="also fit a space over all frames")
    s.set_defaults(func=cmd_fit_embedding)

    s = sub.add_parser("capture", parents=[common], help="fit per-frame states to keypoint clips")
    s.add_argument("--clip", required=True)
    s.add_argument("--spaces", required=True)
    s.add_argument("--skeleton", default=None)
    s.add_argument("--select", action="store_true", help="ignore sub-motion labels and select per frame")
    s.set_defaults(func=cmd_capture)

    for name, func, help_ in (
        ("parse-train", cmd_parse_train, "train the action parser"),
        ("parse-eval", cmd_parse_eval, "report parser accuracies"),
    ):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--data", default=None, help="dataset directory written by synth")
        s.add_argument("--clips", default=None)
        s.add_argument("--states", default=None)
        s.add_argument("--checkpoint", "--model", dest="checkpoint", default=None)
        if name == "parse-train":
            s.add_argument("--schema", default=None)
            s.add_argument("--val-fraction", type=float, default=0.0)
        s.set_defaults(func=func)

    s = sub.add_parser("eval", parents=[common], help="compute one metric")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--metric", choices=("pck0.3", "pck0.5", "top1", "spearman"), required=True)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        result = args.func(args)
    except Exception as exc:  # report every failure as JSON
        log.debug("command failed", exc_info=True)
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    sys.stdout.write(json.dumps(result) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
