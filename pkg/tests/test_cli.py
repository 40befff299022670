import csv
import hashlib
import json

import numpy as np
import pytest

from fcdn import cli
from fcdn.data import load_epochset
from fcdn.model import load_checkpoint
from fcdn.pipeline import evaluate_holdout

from stubs import tagged_set

TINY = """\
seed = 0
synth_channels = 8
synth_samples = 250
synth_fs_hz = 250
synth_per_class = 20
synth_classes = 4
augment_factor = 1
conv_channels = 4, 8, 8
kernel_widths = 20, 20, 40
resize = 32
patch = 8
embed_dim = 32
depth = 2
heads = 2
epochs = 1
batch_size = 16
lr = 0.001
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY)
    assert run("--config", d / "tiny.cfg", "--quiet", "--out", d / "data", "synth") == 0
    assert run("--config", d / "tiny.cfg", "--quiet", "--out", d / "model", "train", "--data", d / "data") == 0
    return d


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- synth ------------------------------------------------------------------------------


def test_synth_loads_back(work):
    s = load_epochset(work / "data")
    assert (s.n_trials, s.n_channels, s.n_samples, s.fs_hz) == (80, 8, 250, 250.0)


def test_synth_same_seed_identical_bytes(work, tmp_path):
    assert run("--config", work / "tiny.cfg", "--quiet", "--out", tmp_path / "again", "synth") == 0
    assert (tmp_path / "again.f32").read_bytes() == (work / "data.f32").read_bytes()
    assert (tmp_path / "again.json").read_bytes() == (work / "data.json").read_bytes()
    assert run("--config", work / "tiny.cfg", "--seed", 5, "--quiet", "--out", tmp_path / "other", "synth") == 0
    assert (tmp_path / "other.f32").read_bytes() != (work / "data.f32").read_bytes()


def test_synth_missing_out_dir(tmp_path):
    assert run("--quiet", "--out", tmp_path / "nope" / "data", "synth") == cli.EXIT_USAGE


# --- connectivity --------------------------------------------------------------------------


def test_connectivity_coupled_pair_tops_edges(tmp_path):
    args = ["--seed", 1, "--set", "synth_classes=1", "--set", "synth_per_class=40", "--set", "synth_noise=0.2", "--quiet"]
    assert run(*args, "--out", tmp_path / "d", "synth") == 0
    assert run("--quiet", "--out", tmp_path / "x", "connectivity", "--data", tmp_path / "d", "--band", "alpha") == 0
    rows = list(csv.reader(open(tmp_path / "x.edges.csv")))
    assert rows[1][:2] == ["Fp1", "Fp2"]
    assert float(rows[1][2]) > 0.9
    weights = json.loads((tmp_path / "x.weights.json").read_text())["weights"]
    assert len(weights) == 8 and weights[0] == 1.0
    report = json.loads((tmp_path / "x.plv.json").read_text())
    assert report["config"]["threshold"] == 0.9 and len(report["config_sha256"]) == 64


def test_connectivity_errors(work, tmp_path):
    base = ["--quiet", "--out", tmp_path / "x", "connectivity", "--data", work / "data"]
    assert run(*base, "--threshold", 1.0) == cli.EXIT_USAGE
    assert run(*base, "--band", "gamma") == cli.EXIT_USAGE
    assert run("--quiet", "--out", tmp_path / "x", "connectivity", "--data", tmp_path / "missing") == cli.EXIT_USAGE


# --- train ------------------------------------------------------------------------------------


def test_train_one_epoch(work):
    assert len((work / "model.log.jsonl").read_text().splitlines()) == 1
    model = load_checkpoint(work / "model")
    assert model.config.T == 250 and model.config.epochs == 1
    report = json.loads((work / "model.report.json").read_text())
    assert report["seed"] == 0 and report["config"]["epochs"] == 1
    assert report["split"] == {"train": 48, "val": 16, "test": 16}
    assert 0 <= report["test_accuracy"] <= 1


def test_train_rerun_identical_bytes(work, tmp_path):
    assert run("--config", work / "tiny.cfg", "--quiet", "--out", tmp_path / "m", "train", "--data", work / "data") == 0
    for suffix in (".f32", ".json", ".report.json", ".log.jsonl"):
        assert _sha(tmp_path / f"m{suffix}") == _sha(work / f"model{suffix}")


def test_train_beta_without_teacher(work, tmp_path, capsys):
    code = run("--config", work / "tiny.cfg", "--set", "beta=0.1", "--out", tmp_path / "m", "train", "--data", work / "data")
    assert code == cli.EXIT_USAGE
    assert "teacher" in capsys.readouterr().err


def test_train_with_teacher(work, tmp_path):
    assert run("--config", work / "tiny.cfg", "--set", "beta=0.1", "--quiet", "--out", tmp_path / "s",
               "train", "--data", work / "data", "--teacher", work / "model") == 0
    assert load_checkpoint(tmp_path / "s").config.beta == 0.1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_numerical_failure(work, tmp_path):
    code = run("--config", work / "tiny.cfg", "--set", "lr=1e30", "--set", "epochs=3", "--quiet",
               "--out", tmp_path / "m", "train", "--data", work / "data")
    assert code == cli.EXIT_NUMERIC


# --- evaluate ----------------------------------------------------------------------------------


class _Perfect:
    def predict_proba(self, epochset):
        ids = epochset.epochs[:, 0, 0].astype(int)
        return np.eye(4)[self.labels[ids]]


def test_holdout_perfect_stub():
    labels = np.repeat(np.arange(4), 10)
    stub = _Perfect()
    stub.labels = labels
    res = evaluate_holdout(stub, tagged_set(labels, n_samples=8), seed=3)
    assert res["accuracy"] == 1.0 and res["n_test"] == 8


def test_evaluate_holdout_report(work, tmp_path):
    assert run("--config", work / "tiny.cfg", "--quiet", "--out", tmp_path / "r", "evaluate",
               "--model", work / "model", "--data", work / "data", "--mode", "holdout") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    train_report = json.loads((work / "model.report.json").read_text())
    assert report["accuracy"] == train_report["test_accuracy"]
    assert report["mode"] == "holdout" and report["seed"] == 0
    assert report["config_sha256"] == train_report["config_sha256"]


def test_evaluate_cv5_has_five_folds(work, tmp_path):
    assert run("--config", work / "tiny.cfg", "--set", "compare_ablation=true", "--quiet", "--out", tmp_path / "r",
               "evaluate", "--model", work / "model", "--data", work / "data", "--mode", "cv5") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert len(report["fold_accuracies"]) == 5 and len(report["ablation_accuracies"]) == 5
    assert 0 < report["p_value"] <= 1


def test_evaluate_loso_needs_two_subjects(work, tmp_path):
    code = run("--config", work / "tiny.cfg", "--quiet", "--out", tmp_path / "r", "evaluate",
               "--model", work / "model", "--data", work / "data", "--mode", "loso")
    assert code == cli.EXIT_USAGE


def test_evaluate_loso_two_subjects(work, tmp_path):
    assert run("--config", work / "tiny.cfg", "--seed", 9, "--quiet", "--out", tmp_path / "s2", "synth") == 0
    assert run("--config", work / "tiny.cfg", "--quiet", "--out", tmp_path / "r", "evaluate", "--model", work / "model",
               "--data", work / "data", tmp_path / "s2", "--mode", "loso", "--target", 1) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["target"] == 1 and len(report["accuracies"]) == 1


def test_pseudo_online_four_windows(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text(TINY.replace("synth_samples = 250", "synth_samples = 1250").replace("synth_per_class = 20", "synth_per_class = 5"))
    assert run("--config", cfg, "--quiet", "--out", tmp_path / "d", "synth") == 0
    assert run("--config", cfg, "--quiet", "--out", tmp_path / "m", "train", "--data", tmp_path / "d") == 0
    assert run("--config", cfg, "--quiet", "--out", tmp_path / "r", "pseudo-online",
               "--model", tmp_path / "m", "--data", tmp_path / "d") == 0
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0][1:5] == ["window1", "window2", "window3", "window4"] and len(rows) == 21
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["runs"][0]["n_windows"] == 4 and report["mode"] == "pseudo-online"


# --- export-features -------------------------------------------------------------------------------


def test_export_features(work, tmp_path):
    args = ["--config", work / "tiny.cfg", "--quiet", "export-features", "--model", work / "model", "--data", work / "data"]
    assert run(*args[:3], "--out", tmp_path / "f.csv", *args[3:]) == 0
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert len(rows) == 81
    header = rows[0]
    assert header[:2] == ["trial", "label"]
    assert sum(h.startswith("cls_token[") for h in header) == 32
    shapes = dict(load_checkpoint(work / "model").config.stage_shapes())
    for stage in ("conv1", "conv2", "conv3"):
        assert sum(h.startswith(f"band0.{stage}[") for h in header) == int(np.prod(shapes[stage]))
    assert run(*args[:3], "--out", tmp_path / "g.csv", *args[3:]) == 0
    assert (tmp_path / "f.csv").read_bytes() == (tmp_path / "g.csv").read_bytes()


# --- configuration and exit codes ------------------------------------------------------------------


def test_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    assert run("--config", bad, "--out", tmp_path / "d", "synth") == cli.EXIT_USAGE
    assert run("--set", "bogus=1", "--out", tmp_path / "d", "synth") == cli.EXIT_USAGE
    assert run("--config", tmp_path / "absent.cfg", "--out", tmp_path / "d", "synth") == cli.EXIT_USAGE
    assert run("frobnicate") == cli.EXIT_USAGE


def test_flags_override_file(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 3\nepochs = 7\n")
    assert run("--config", cfg, "--seed", 11, "show-config") == 0
    text = capsys.readouterr().out
    assert "seed = 11\n" in text and "epochs = 7\n" in text


def test_defaults_are_documented(capsys):
    assert run("show-config", "--defaults") == 0
    lines = capsys.readouterr().out.splitlines()
    keys = [ln.split(" = ")[0] for ln in lines if not ln.startswith("#")]
    comments = [ln for ln in lines if ln.startswith("#")]
    assert len(keys) == len(comments) and "threshold" in keys


def test_corrupt_data_exit_65(work, tmp_path):
    (tmp_path / "bad.json").write_text((work / "data.json").read_text())
    (tmp_path / "bad.f32").write_bytes((work / "data.f32").read_bytes()[:-8])
    code = run("--quiet", "--out", tmp_path / "x", "connectivity", "--data", tmp_path / "bad")
    assert code == cli.EXIT_FORMAT


def test_unexpected_error_exit_1(monkeypatch, tmp_path):
    def boom(args, cfg):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(cli.COMMANDS, "synth", boom)
    assert run("--out", tmp_path / "d", "synth") == cli.EXIT_OTHER


# --- spectrum ------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tone_data(tmp_path_factory):
    from fcdn.data import EpochSet, Montage, save_epochset

    d = tmp_path_factory.mktemp("tone")
    t = np.arange(1250) / 250.0
    x = np.zeros((4, 2, 1250), dtype=np.float32)
    x[:, 0] = np.sin(2 * np.pi * 10.0 * t)
    x[:, 1] = np.random.default_rng(0).standard_normal((4, 1250))
    save_epochset(EpochSet(250.0, x, [0, 0, 1, 1], ("a", "b"), Montage(("O1", "O2"))), d / "tone")
    return d / "tone"


def test_spectrum_psd(tone_data, tmp_path):
    assert run("--quiet", "--out", tmp_path / "s", "spectrum", "--data", tone_data, "--channel", "O1") == 0
    rows = list(csv.reader(open(tmp_path / "s.psd.csv")))
    assert rows[0] == ["freq_hz", "power"]
    report = json.loads((tmp_path / "s.json").read_text())
    assert report["peak_hz"] == 10.0 and report["n_freqs"] == len(rows) - 1
    assert report["config"]["channel"] == "O1"


def test_spectrum_ersp(tone_data, tmp_path):
    assert run("--quiet", "--out", tmp_path / "e", "spectrum", "--data", tone_data, "--kind", "ersp",
               "--channel", 0, "--tmin", -2.0, "--set", "n_times=20") == 0
    rows = list(csv.reader(open(tmp_path / "e.ersp.csv")))
    assert rows[0] == ["freq_hz", "time_s", "power_db"]
    report = json.loads((tmp_path / "e.json").read_text())
    assert len(rows) - 1 == report["n_freqs"] * report["n_times"] and report["n_times"] == 20
    # a stationary tone has no event-related change
    assert max(abs(float(r[2])) for r in rows[1:] if 9 <= float(r[0]) <= 11) < 1.0


def test_spectrum_errors(tone_data, tmp_path):
    base = ["--quiet", "--out", tmp_path / "e", "spectrum", "--data", tone_data]
    assert run(*base, "--channel", "Cz") == cli.EXIT_USAGE
    assert run(*base, "--channel", 5) == cli.EXIT_USAGE
    assert run(*base, "--kind", "ersp", "--tmin", 0.0) == cli.EXIT_USAGE
