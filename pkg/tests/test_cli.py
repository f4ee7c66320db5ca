import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from bundl_lab import cli, dataset, labelnoise, model
from bundl_lab.config import ConfigError, ExperimentConfig, load_config

FAST_INI = """
[experiment]
eval_labels = clean     ; score against the simulator's intervals

[train]
max_epochs = 1
pretrain_epochs = 1
n_mc = 3
batch_size = 512

[cv]
n_folds = 2
"""


@pytest.fixture(scope="module")
def fast_ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.ini"
    path.write_text(FAST_INI)
    return str(path)


@pytest.fixture(scope="module")
def sim5(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim5")
    rc = cli.main(["simulate", "--out", str(out), "--subjects", "5", "--min-recordings", "1",
                   "--max-recordings", "1", "--seed", "7", "--noise", "over0.3", "--force"])
    assert rc == 0
    return out


def _signal_bytes(root):
    return {p.name: p.read_bytes() for p in sorted((root / "signals").iterdir())}


# --- config -----------------------------------------------------------------

def test_load_config(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[experiment]\nmethod = cel  ; baseline\nnoise = under0.5\n"
                    "[train]\nz0 = estimated\nz1 = 0.001\n[cv]\nlr_grid = 0.001, 0.003\nwith_transition = yes\n")
    exp = load_config(path)
    assert exp.method == "cel" and exp.noise == "under0.5"
    assert exp.train.z0 is None and exp.train.z1 == 0.001
    assert exp.cv.lr_grid == (0.001, 0.003) and exp.cv.with_transition
    assert ExperimentConfig.from_dict(exp.to_dict()).to_dict() == exp.to_dict()


@pytest.mark.parametrize("text", ["[experiment]\nmethod = svm\n", "[bogus]\nx = 1\n", "[train]\nlr = 1\n",
                                  "[cv]\nn_folds = 1\n", "[experiment]\nnoise = sideways0.2\n"])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


# --- simulate / corrupt -----------------------------------------------------

def test_simulate_is_deterministic_and_guarded(tmp_path, capsys):
    args = ["--subjects", "2", "--min-recordings", "1", "--max-recordings", "1", "--seed", "7"]
    assert cli.main(["simulate", "--out", str(tmp_path / "a")] + args) == 0
    assert cli.main(["simulate", "--out", str(tmp_path / "b")] + args) == 0
    assert _signal_bytes(tmp_path / "a") == _signal_bytes(tmp_path / "b")
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    assert cli.main(["simulate", "--out", str(tmp_path / "a")] + args) == 2
    assert "--force" in capsys.readouterr().err
    assert cli.main(["simulate", "--out", str(tmp_path / "a"), "--force"] + args) == 0


def test_simulate_all_variants(tmp_path):
    assert cli.main(["simulate", "--out", str(tmp_path), "--subjects", "1", "--max-recordings", "1",
                     "--all-variants"]) == 0
    total = 0
    for band in ("high", "mid", "low"):
        corpus = dataset.Corpus(tmp_path / f"snr_{band}")
        noisy = [s for s in corpus.label_specs() if s != "clean"]
        assert sorted(noisy) == sorted(labelnoise.PAPER_VARIANTS)
        total += len(noisy)
    assert total == 21
    # the three bands mix the same sources
    mids = dataset.Corpus(tmp_path / "snr_mid").recordings[0]["clean_intervals"]
    assert mids == dataset.Corpus(tmp_path / "snr_low").recordings[0]["clean_intervals"]


def test_corrupt_command(sim5):
    assert cli.main(["corrupt", "--data", str(sim5), "--noise", "under0.1", "--noise", "random0.1"]) == 0
    assert {"under0.1", "random0.1", "over0.3", "clean"} <= set(dataset.Corpus(sim5).label_specs())
    assert cli.main(["corrupt", "--data", str(sim5), "--noise", "left0.2"]) == 2


# --- ingest -----------------------------------------------------------------

def _write_csv(path, n_ch, seconds, seed=0):
    r = np.random.default_rng(seed)
    data = r.normal(size=(seconds * 200, n_ch))
    header = ",".join(f"ch{i}" for i in range(n_ch))
    np.savetxt(path, data, delimiter=",", header=header, comments="")


def test_ingest_csv(tmp_path):
    sig = tmp_path / "sig"
    sig.mkdir()
    _write_csv(sig / "rec_a.csv", 19, 60, 0)
    _write_csv(sig / "rec_b.csv", 19, 60, 1)
    labels = tmp_path / "labels.json"
    labels.write_text(json.dumps({"rec_a": {"subject": "p1", "intervals": [[10, 30]]},
                                  "rec_b": {"subject": "p2", "intervals": []}}))
    out = tmp_path / "corpus"
    assert cli.main(["ingest", "--signals", str(sig), "--labels", str(labels), "--out", str(out)]) == 0
    corpus = dataset.Corpus(out)
    assert corpus.subjects == [0, 1] and not corpus.has_clean
    tracks = corpus.labels("noisy")
    key = next(r["key"] for r in corpus.recordings if r["source"] == "rec_a")
    assert tracks[key].intervals == [(10.0, 30.0)] and tracks[key].n_windows == 60
    assert corpus.read_signal(key).shape == (19, 12000)


def test_ingest_rejects_channel_mismatch(tmp_path, capsys):
    sig = tmp_path / "sig"
    sig.mkdir()
    _write_csv(sig / "r.csv", 21, 10)
    labels = tmp_path / "l.json"
    labels.write_text(json.dumps({"r": {"intervals": []}}))
    assert cli.main(["ingest", "--signals", str(sig), "--labels", str(labels), "--out", str(tmp_path / "o")]) == 2
    assert "21 channels" in capsys.readouterr().err


def test_ingest_rejects_interval_outside_recording(tmp_path, capsys):
    sig = tmp_path / "sig"
    sig.mkdir()
    _write_csv(sig / "r.csv", 19, 10)
    labels = tmp_path / "l.json"
    labels.write_text(json.dumps({"r": {"intervals": [[5, 15]]}}))
    assert cli.main(["ingest", "--signals", str(sig), "--labels", str(labels), "--out", str(tmp_path / "o")]) == 2
    assert "(5.0, 15.0)" in capsys.readouterr().err


# --- train / evaluate -------------------------------------------------------

def test_train_reduction_identity(tiny_corpus, tmp_path, fast_ini):
    common = ["--data", str(tiny_corpus.root), "--config", fast_ini, "--noise", "over0.3", "--seed", "4",
              "--epochs", "2"]
    assert cli.main(["train", "--out", str(tmp_path / "cel"), "--method", "cel"] + common) == 0
    assert cli.main(["train", "--out", str(tmp_path / "bz"), "--method", "bundl", "--z0", "0", "--z1", "0"]
                    + common) == 0
    a, ha = model.load_params(tmp_path / "cel" / "model.bin")
    b, hb = model.load_params(tmp_path / "bz" / "model.bin")
    assert a.equals(b)
    assert ha["method"] == "cel" and hb["method"] == "bundl"


def test_train_logs_uncertainty(tiny_corpus, tmp_path, fast_ini):
    out = tmp_path / "m"
    assert cli.main(["train", "--data", str(tiny_corpus.root), "--out", str(out), "--config", fast_ini,
                     "--noise", "over0.3", "--epochs", "2"]) == 0
    rows = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
    assert len(rows) == 2 and all(0 <= r["mean_z"] <= 1 for r in rows)
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["train"]["max_epochs"] == 2 and cfg["method"] == "bundl"


def test_train_missing_dataset(tmp_path, capsys):
    assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_evaluate_twice_identical(tiny_corpus, tmp_path, fast_ini):
    m = tmp_path / "m"
    cli.main(["train", "--data", str(tiny_corpus.root), "--out", str(m), "--config", fast_ini,
              "--noise", "under0.3", "--method", "cel"])
    for name in ("e1", "e2"):
        assert cli.main(["evaluate", "--model", str(m / "model.bin"), "--data", str(tiny_corpus.root),
                         "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "e1" / "report.json").read_bytes()
    assert a == (tmp_path / "e2" / "report.json").read_bytes()
    rep = json.loads(a)
    assert rep["config"]["noise"] == "under0.3" and rep["config"]["labels"] == "clean"
    assert len(rep["summary"]["transition"]) == 2
    assert (tmp_path / "e1" / "transition.csv").read_text().startswith("given,")
    assert cli.main(["report", "--reproduce", str(tmp_path / "e1" / "report.json")]) == 0


def test_evaluate_clean_labels_missing(tmp_path, tiny_corpus, fast_ini, capsys):
    sig = tmp_path / "sig"
    sig.mkdir()
    _write_csv(sig / "r.csv", 19, 30)
    labels = tmp_path / "l.json"
    labels.write_text(json.dumps({"r": {"intervals": [[5, 15]]}}))
    cli.main(["ingest", "--signals", str(sig), "--labels", str(labels), "--out", str(tmp_path / "c")])
    m = tmp_path / "m"
    cli.main(["train", "--data", str(tiny_corpus.root), "--out", str(m), "--config", fast_ini, "--method", "cel",
              "--noise", "over0.3", "--epochs", "1"])
    capsys.readouterr()
    rc = cli.main(["evaluate", "--model", str(m / "model.bin"), "--data", str(tmp_path / "c"),
                   "--labels", "clean", "--out", str(tmp_path / "e")])
    assert rc == 2 and "no clean labels" in capsys.readouterr().err
    assert cli.main(["evaluate", "--model", str(m / "model.bin"), "--data", str(tmp_path / "c"),
                     "--labels", "noisy", "--noise", "given", "--out", str(tmp_path / "e")]) == 0


# --- sweep / report ---------------------------------------------------------

def test_sweep_and_reproduce(sim5, tmp_path, fast_ini, capsys):
    out = tmp_path / "sweep"
    args = ["sweep", "--data", str(sim5), "--methods", "bundl,cel", "--noise", "over0.3", "--config", fast_ini,
            "--jobs", "1", "--out", str(out)]
    assert cli.main(args) == 0
    with open(out / "aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["method"], r["noise"]) for r in rows] == [("bundl", "over0.3"), ("cel", "over0.3")]
    assert all(r["n_folds"] == "2" for r in rows)
    with open(out / "long.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2 * 2 * 5
    capsys.readouterr()
    assert cli.main(args) == 0
    assert capsys.readouterr().err.count("(done)") == 2
    report = out / "all" / "over0.3" / "cel" / "report.json"
    assert cli.main(["report", "--reproduce", str(report)]) == 0
    assert capsys.readouterr().out.strip() == "identical"
    assert cli.main(["report", "--sweep", str(out)]) == 0
    assert capsys.readouterr().out.count("over0.3") == 2


def test_sweep_rejects_unknown_inputs(sim5, tmp_path):
    assert cli.main(["sweep", "--data", str(sim5), "--methods", "svm", "--out", str(tmp_path)]) == 2
    assert cli.main(["sweep", "--data", str(sim5), "--noise", "under0.5", "--out", str(tmp_path)]) == 2


def test_report_detects_tampering(tmp_path, sim5, fast_ini, capsys):
    out = tmp_path / "s"
    cli.main(["sweep", "--data", str(sim5), "--methods", "cel", "--config", fast_ini, "--out", str(out)])
    path = out / "all" / "over0.3" / "cel" / "report.json"
    rep = json.loads(path.read_text())
    rep["summary"]["auroc"]["mean"] = 0.123
    path.write_text(json.dumps(rep))
    capsys.readouterr()
    assert cli.main(["report", "--reproduce", str(path)]) == 1
    assert capsys.readouterr().out.strip() == "DIFFERENT"


def test_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "bundl_lab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("simulate", "ingest", "corrupt", "train", "evaluate", "sweep", "report"):
        assert name in res.stdout
