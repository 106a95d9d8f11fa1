"""Semantic-attribute heads, action-label head, parsing losses and training.

The attribute mapping head predicts each semantic attribute (SA) with its own
two-layer classifier, stacks the SA probability vectors and maps only that
stack to the action label. A black-box head (one classifier straight to the
action label) is kept for comparison.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .stgcn import N_FRAMES, MultiStreamGCN, StgcnConfig, StreamInput

log = logging.getLogger(__name__)

N_SCORE_BINS = 49
LAMBDA_TASK = 2.0
SAMB, BLACK_BOX = "samb", "black_box"


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple          # ((name, n_classes), ...)
    action_labels: int
    combinations: tuple        # ((sa tuple), label) pairs
    sport: str = ""
    submotions: tuple = ()

    def __post_init__(self):
        attrs = tuple((str(n), int(c)) for n, c in self.attributes)
        combos = tuple((tuple(int(v) for v in sas), int(lab)) for sas, lab in self.combinations)
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "combinations", combos)
        object.__setattr__(self, "submotions", tuple(self.submotions))
        if not attrs:
            raise SchemaError("schema has no attributes")
        for name, c in attrs:
            if c < 2:
                raise SchemaError(f"attribute {name!r} needs at least 2 classes, has {c}")
        if self.action_labels < 1:
            raise SchemaError("action_labels must be positive")
        seen = set()
        for sas, lab in combos:
            if len(sas) != len(attrs):
                raise SchemaError(f"combination {sas} has {len(sas)} entries, schema has {len(attrs)} attributes")
            for v, (name, c) in zip(sas, attrs):
                if not 0 <= v < c:
                    raise SchemaError(f"combination {sas}: {name}={v} out of range")
            if not 0 <= lab < self.action_labels:
                raise SchemaError(f"combination {sas}: label {lab} out of range")
            if sas in seen:
                raise SchemaError(f"combination {sas} listed twice")
            seen.add(sas)
        missing = set(range(self.action_labels)) - {lab for _, lab in combos}
        if missing:
            raise SchemaError(f"action labels without any SA combination: {sorted(missing)}")

    @property
    def class_counts(self) -> list[int]:
        return [c for _, c in self.attributes]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.attributes]

    def label_of(self, sas: Sequence[int]) -> int:
        key = tuple(int(v) for v in sas)
        for combo, lab in self.combinations:
            if combo == key:
                return lab
        raise SchemaError(f"illegal SA combination {key}")

    def is_legal(self, sas: Sequence[int]) -> bool:
        key = tuple(int(v) for v in sas)
        return any(combo == key for combo, _ in self.combinations)

    def to_json(self) -> dict:
        out = {
            "attributes": [{"name": n, "classes": c} for n, c in self.attributes],
            "action_labels": self.action_labels,
            "combinations": [{"sas": list(s), "label": lab} for s, lab in self.combinations],
        }
        if self.sport:
            out["sport"] = self.sport
        if self.submotions:
            out["submotions"] = list(self.submotions)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "AttributeSchema":
        return cls(
            tuple((a["name"], a["classes"]) for a in obj["attributes"]),
            int(obj["action_labels"]),
            tuple((c["sas"], c["label"]) for c in obj["combinations"]),
            obj.get("sport", ""),
            tuple(obj.get("submotions", ())),
        )


def load_schema(path) -> AttributeSchema:
    with open(path) as fh:
        return AttributeSchema.from_json(json.load(fh))


def save_schema(schema: AttributeSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_json(), indent=1))


def diving_schema() -> AttributeSchema:
    """Bundled synthetic diving schema (5 SAs, 32 legal combinations)."""
    return load_schema(Path(__file__).with_name("data") / "diving_schema.json")


# -- heads ---------------------------------------------------------------------


def _dense(rng, n_in, n_out):
    return rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out)), np.zeros(n_out)


def init_head(schema: AttributeSchema, feature_dim: int, rng, kind: str = SAMB, hidden: int = 64) -> dict:
    params = {}
    if kind == SAMB:
        for ci, c in enumerate(schema.class_counts):
            params[f"sa{ci}.W1"], params[f"sa{ci}.b1"] = _dense(rng, feature_dim, hidden)
            params[f"sa{ci}.W2"], params[f"sa{ci}.b2"] = _dense(rng, hidden, c)
        n_stack = sum(schema.class_counts)
        params["act.W1"], params["act.b1"] = _dense(rng, n_stack, hidden)
    elif kind == BLACK_BOX:
        params["act.W1"], params["act.b1"] = _dense(rng, feature_dim, hidden)
    else:
        raise ValueError(f"unknown head kind {kind!r}")
    params["act.W2"], params["act.b2"] = _dense(rng, hidden, schema.action_labels)
    return params


def _mlp(x, params, prefix):
    h = ad.relu(ad.add(ad.matmul(x, params[prefix + "W1"]), params[prefix + "b1"]))
    return ad.softmax(ad.add(ad.matmul(h, params[prefix + "W2"]), params[prefix + "b2"]))


@dataclass
class ParsePrediction:
    attributes: list   # per attribute, (N, N_c) probabilities (Tensors)
    action: ad.Tensor  # (N, N_f)

    def numpy(self):
        return [a.numpy() for a in self.attributes], self.action.numpy()


def samb_forward(features, schema: AttributeSchema, params: Mapping, kind: str = SAMB) -> ParsePrediction:
    """Attribute and action probabilities for ``(N, F)`` or ``(F,)`` features.

    With the SAMB head the action classifier sees only the stacked SA
    probabilities.
    """
    features = ad.as_tensor(features)
    if kind == BLACK_BOX:
        _check_in(params, "act.W1", features)
        return ParsePrediction([], _mlp(features, params, "act."))
    attrs = []
    for ci in range(len(schema.attributes)):
        _check_in(params, f"sa{ci}.W1", features)
        attrs.append(_mlp(features, params, f"sa{ci}."))
    stacked = ad.concat(attrs, axis=-1)
    return ParsePrediction(attrs, _mlp(stacked, params, "act."))


def _check_in(params, key, features):
    if key not in params:
        raise SchemaError(f"head parameters lack {key!r}; schema and params do not match")
    w = ad.as_tensor(params[key])
    if w.shape[0] != features.shape[-1]:
        raise SchemaError(f"{key} expects {w.shape[0]} inputs, features have {features.shape[-1]}")


# -- losses --------------------------------------------------------------------


def nll(probs, targets) -> ad.Tensor:
    """Mean negative log-likelihood of integer targets under row-wise probabilities."""
    probs = ad.as_tensor(probs)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n_cls = probs.shape[-1]
    if ((targets < 0) | (targets >= n_cls)).any():
        raise IndexError(f"target index out of range [0, {n_cls})")
    if probs.ndim == 1:
        return ad.cross_entropy(probs, int(targets[0]))
    picked = ad.slice(probs, (np.arange(probs.shape[0]), targets))
    return ad.mul(ad.mean(ad.log(picked)), -1.0)


def loss_attr(pred: ParsePrediction, gt, schema: AttributeSchema) -> ad.Tensor:
    """Sum over attributes of the cross-entropy of each SA head.

    ``gt`` is ``(n_attributes,)`` for one sample or ``(N, n_attributes)``.
    """
    gt = np.asarray(gt, dtype=np.int64)
    gt = gt[None] if gt.ndim == 1 else gt
    if gt.shape[-1] != len(schema.attributes) or len(pred.attributes) != len(schema.attributes):
        raise SchemaError("attribute count mismatch between prediction, labels and schema")
    total = None
    for ci, probs in enumerate(pred.attributes):
        term = nll(probs, gt[:, ci])
        total = term if total is None else ad.add(total, term)
    return total


def loss_task(pred_action, gt) -> ad.Tensor:
    return nll(pred_action, gt)


def loss_apm(pred: ParsePrediction, gt_sas, gt_label, schema: AttributeSchema, lambda_task: float = LAMBDA_TASK):
    return ad.add(loss_attr(pred, gt_sas, schema), ad.mul(loss_task(pred.action, gt_label), lambda_task))


# -- score bins ----------------------------------------------------------------


def discretize_score(score: float, bins: int = N_SCORE_BINS) -> int:
    """Bin index of a 0-100 score; out-of-range scores are clamped with a warning."""
    score = float(score)
    if math.isnan(score):
        raise ValueError("score is NaN")
    if not 0.0 <= score <= 100.0:
        warnings.warn(f"score {score} outside [0, 100]; clamped", stacklevel=2)
        score = min(max(score, 0.0), 100.0)
    return min(int(math.floor(score / 100.0 * bins)), bins - 1)


def bin_center(index: int, bins: int = N_SCORE_BINS) -> float:
    if not 0 <= index < bins:
        raise IndexError(f"bin {index} out of range [0, {bins})")
    return (index + 0.5) * 100.0 / bins


# -- training ------------------------------------------------------------------


class TrainingError(RuntimeError):
    pass


@dataclass
class ParseDataset:
    inputs: StreamInput
    sas: np.ndarray     # (N, n_attributes)
    labels: np.ndarray  # (N,)

    def __post_init__(self):
        self.sas = np.asarray(self.sas, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.inputs) == len(self.sas) == len(self.labels)):
            raise ValueError("inputs and labels disagree on sample count")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "ParseDataset":
        return ParseDataset(self.inputs.take(idx), self.sas[idx], self.labels[idx])


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    lr_floor: float = 1e-5
    decay: float = 0.1
    patience: int = 3
    min_improvement: float = 1e-3
    seed: int = 0
    head: str = SAMB
    hidden: int = 64
    streams: tuple = ("j", "b", "p")
    stgcn: StgcnConfig = field(default_factory=lambda: StgcnConfig.scaled(1 / 16))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_train: bool = False
    target_accuracy: float | None = None  # stop early once validation action accuracy reaches this


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class ParserModel:
    schema: AttributeSchema
    gcn: MultiStreamGCN
    head: str
    params: dict

    def forward(self, inputs: StreamInput, params=None) -> ParsePrediction:
        params = self.params if params is None else params
        return samb_forward(self.gcn.forward(inputs, params), self.schema, params, self.head)

    def predict(self, inputs: StreamInput, batch_size: int = 64):
        """Argmax SA classes ``(N, n_attr)`` (SAMB only, else None) and action labels ``(N,)``."""
        sas, acts = [], []
        for lo in range(0, len(inputs), batch_size):
            pred = self.forward(inputs.take(slice(lo, lo + batch_size)))
            a, act = pred.numpy()
            acts.append(np.argmax(act, axis=1))
            if a:
                sas.append(np.stack([np.argmax(p, axis=1) for p in a], axis=1))
        return (np.concatenate(sas) if sas else None), np.concatenate(acts)

    def meta(self) -> dict:
        cfg = self.gcn.config
        return {
            "head": self.head,
            "streams": list(self.gcn.streams),
            "coeff_channels": self.gcn.coeff_channels,
            "channels": list(cfg.channels),
            "strides": list(cfg.strides),
            "kernel": cfg.kernel,
            "p_channels": list(cfg.p_channels),
            "p_kernel": cfg.p_kernel,
            "frames": cfg.frames,
            "schema": self.schema.to_json(),
        }

    @classmethod
    def from_meta(cls, meta: dict, params: dict) -> "ParserModel":
        cfg = StgcnConfig(
            channels=tuple(meta["channels"]),
            strides=tuple(meta["strides"]),
            kernel=meta["kernel"],
            p_channels=tuple(meta["p_channels"]),
            p_kernel=meta["p_kernel"],
            frames=meta.get("frames", N_FRAMES),
        )
        gcn = MultiStreamGCN(meta["coeff_channels"], cfg, tuple(meta["streams"]))
        return cls(AttributeSchema.from_json(meta["schema"]), gcn, meta["head"], params)


@dataclass
class TrainResult:
    model: ParserModel
    curves: list  # one dict per epoch


def accuracy_report(model: ParserModel, data: ParseDataset) -> dict:
    sas, acts = model.predict(data.inputs)
    out = {"action": float(np.mean(acts == data.labels) * 100.0)}
    if sas is not None:
        for ci, name in enumerate(model.schema.names):
            out[name] = float(np.mean(sas[:, ci] == data.sas[:, ci]) * 100.0)
        out["all_sas"] = float(np.mean((sas == data.sas).all(axis=1)) * 100.0)
    return out


def train_parser(
    train: ParseDataset,
    schema: AttributeSchema,
    config: TrainConfig | None = None,
    val: ParseDataset | None = None,
) -> TrainResult:
    """Train streams and head jointly with Adam; the step size drops by
    ``config.decay`` whenever the epoch loss stops improving for
    ``config.patience`` epochs (never below ``config.lr_floor``).
    """
    config = config or TrainConfig()
    if len(train) == 0:
        raise TrainingError("empty training set")
    init_rng, order_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    gcn = MultiStreamGCN(train.inputs.coeffs.shape[-1], config.stgcn, tuple(config.streams))
    params = gcn.init_params(init_rng)
    params.update(init_head(schema, gcn.feature_dim, init_rng, config.head, config.hidden))
    model = ParserModel(schema, gcn, config.head, params)
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    best, stall = math.inf, 0
    curves = []
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train))
        total, count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            idx = np.sort(order[lo:lo + config.batch_size])
            batch = train.take(idx)
            leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in model.params.items()}
            with ad.Tape() as tape:
                pred = model.forward(batch.inputs, leaves)
                if config.head == SAMB:
                    loss = loss_apm(pred, batch.sas, batch.labels, schema)
                else:
                    loss = loss_task(pred.action, batch.labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch starting {lo}")
            grads = tape.backward(loss)
            bad = [k for k, t in leaves.items() if not np.isfinite(grads[t]).all()]
            if bad:
                raise TrainingError(f"non-finite gradient for {bad[:3]} at epoch {epoch}, batch starting {lo}")
            opt.step(model.params, {k: grads[t] for k, t in leaves.items()})
            total += value * len(idx)
            count += len(idx)
        epoch_loss = total / count
        if epoch_loss < best * (1.0 - config.min_improvement):
            best, stall = epoch_loss, 0
        else:
            stall += 1
            if stall >= config.patience and opt.lr > config.lr_floor:
                opt.lr = max(opt.lr * config.decay, config.lr_floor)
                stall = 0
        row = {"epoch": epoch + 1, "loss": epoch_loss, "lr": opt.lr}
        if config.eval_train:
            row["train"] = accuracy_report(model, train)
        if val is not None:
            row["val"] = accuracy_report(model, val)
        curves.append(row)
        log.info("epoch %d loss %.4f %s", epoch + 1, epoch_loss, row.get("val", ""))
        if config.target_accuracy is not None and val is not None and row["val"]["action"] >= config.target_accuracy:
            break
    return TrainResult(model, curves)
