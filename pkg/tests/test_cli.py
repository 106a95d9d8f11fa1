import json

import pytest

from sportmotion import cli
from sportmotion.formats import AnnotatedClip, load_clips, save_clips


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "synth": {"frames": [30, 36], "K": 5},
        "train": {"epochs": 1, "batch_size": 4, "width": 0.0625, "streams": ["p"], "hidden": 8},
        "capture": {"max_iter": 40},
    }))
    assert cli.main(["synth", "--seed", "3", "--n-clips", "4", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root


def test_synth_writes_dataset(dataset):
    data = dataset / "data"
    for name in ("schema.json", "skeleton.json", "mocap.json", "clips.json", "states.json"):
        assert (data / name).exists()
    assert len(list((data / "spaces").glob("*.json"))) == 4
    assert len(load_clips(data / "clips.json")) == 4


def test_synth_is_deterministic(dataset, tmp_path, capsys):
    code, out, _ = run(capsys, "--seed", 3, "synth", "--n-clips", 4, "--config", dataset / "cfg.json", "--out", tmp_path)
    assert code == 0 and json.loads(out)["clips"] == 4
    assert (tmp_path / "clips.json").read_bytes() == (dataset / "data" / "clips.json").read_bytes()


def test_toy_synth(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"frames": [20, 24], "K": 4}}))
    code, _, _ = run(capsys, "synth", "--sport", "toy", "--n-clips", 2, "--config", cfg, "--out", tmp_path / "toy")
    assert code == 0
    assert json.loads((tmp_path / "toy" / "schema.json").read_text())


def test_fit_embedding(dataset, tmp_path, capsys):
    mocap = dataset / "data" / "mocap.json"
    code, out, _ = run(capsys, "fit-embedding", "--mocap", mocap, "--k", 5, "--pooled", "--out", tmp_path / "sp")
    assert code == 0
    report = json.loads(out)
    assert report["pooled"] and len(report["spaces"]) == 4
    assert (tmp_path / "sp" / "all.json").exists()
    name = report["spaces"][0]
    code, _, _ = run(capsys, "fit-embedding", "--mocap", mocap, "--submotion", name, "--k", 5, "--out", tmp_path / "one.json")
    assert code == 0 and (tmp_path / "one.json").exists()


def test_capture_and_pck(dataset, tmp_path, capsys):
    data = dataset / "data"
    clips = load_clips(data / "clips.json")
    c = clips[0]
    one = tmp_path / "one.json"
    save_clips(one, [AnnotatedClip(c.keypoints[:3], c.visibility[:3], c.submotions[:3], c.sas, c.action)])
    code, out, _ = run(
        capsys, "capture", "--clip", one, "--spaces", data / "spaces", "--skeleton", data / "skeleton.json",
        "--config", dataset / "cfg.json", "--out", tmp_path / "fit.json",
    )
    assert code == 0, out
    frames = json.loads((tmp_path / "fit.json").read_text())
    assert json.loads(out)["failed"] == 0 and len(frames) == json.loads(out)["frames"]
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "fit.json", "--gt", one, "--metric", "pck0.5")
    assert code == 0 and json.loads(out) == 100.0


def test_parse_train_and_eval(dataset, tmp_path, capsys):
    data = dataset / "data"
    ckpt = tmp_path / "m.ckpt"
    code, out, err = run(capsys, "parse-train", "--data", data, "--config", dataset / "cfg.json", "--seed", 1, "--checkpoint", ckpt)
    assert code == 0, err
    assert json.loads(out)["epochs"] == 1
    code, out, _ = run(capsys, "parse-eval", "--data", data, "--model", ckpt, "--out", tmp_path / "r.json")
    assert code == 0
    report = json.loads(out)
    assert 0.0 <= report["action"] <= 100.0
    assert json.loads((tmp_path / "r.json").read_text()) == report


def test_parse_train_needs_states(dataset, tmp_path, capsys):
    code, _, err = run(
        capsys, "parse-train", "--clips", dataset / "data" / "clips.json", "--config", dataset / "cfg.json",
        "--out", tmp_path / "m.ckpt",
    )
    assert code == 1 and "P-stream" in json.loads(err)["message"]


def test_eval_top1_and_spearman(tmp_path, capsys):
    (tmp_path / "p.json").write_text(json.dumps({"probs": [[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]], "scores": [1, 2, 3]}))
    (tmp_path / "g.json").write_text(json.dumps({"labels": [0, 1, 1], "scores": [10, 30, 20]}))
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "p.json", "--gt", tmp_path / "g.json", "--metric", "top1")
    assert code == 0 and json.loads(out) == pytest.approx(200 / 3)
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "p.json", "--gt", tmp_path / "g.json", "--metric", "spearman")
    assert code == 0 and json.loads(out) == pytest.approx(0.5)


def test_errors_are_json_on_stderr(tmp_path, capsys):
    code, out, err = run(capsys, "capture", "--clip", tmp_path / "missing.json", "--spaces", tmp_path, "--out", tmp_path / "x")
    assert code == 1 and out == ""
    payload = json.loads(err.strip().splitlines()[-1])
    assert set(payload) == {"error", "message"}


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"bogus": 1}}))
    code, _, err = run(capsys, "synth", "--config", cfg, "--out", tmp_path / "d")
    assert code == 1 and "bogus" in err


def test_missing_out(capsys):
    code, _, err = run(capsys, "synth", "--n-clips", 1)
    assert code == 1 and "--out" in err

