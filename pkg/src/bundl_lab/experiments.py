"""Experiment plumbing shared by the CLI: CV cells, reports, reproduction.

Reports carry no wall-clock data, so regenerating one from its embedded
configuration gives the same bytes (given the same kernel backend, which is
recorded too).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import dataset, evaluation, kernels, model
from .config import ExperimentConfig

REPORT_FORMAT = "bundl-lab-report"
REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
TRANSITION_CSV = "transition.csv"
CSV_FIELDS = ("method", "noise", "repeat", "fold", "threshold", "learning_rate", "train_seed",
              "auroc", "auprc", "sensitivity", "fpr_min_per_hr", "mean_latency_s")


def clean_json(obj):
    """Replace NaN/inf by ``None`` and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def render_json(obj):
    return json.dumps(clean_json(obj), sort_keys=True, indent=1) + "\n"


def file_digest(*paths):
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def corpus_digest(corpus: dataset.Corpus, *specs):
    files = [corpus.root / dataset.MANIFEST]
    files += [corpus.root / dataset.labels_filename(corpus.resolve_spec(s)) for s in specs]
    return file_digest(*files)


def eval_spec(corpus, which):
    if which == "clean" and not corpus.has_clean:
        raise dataset.DatasetError("corpus has no clean labels; use --labels noisy")
    return "clean" if which == "clean" else None


def load_windows(exp: ExperimentConfig):
    corpus = dataset.Corpus(exp.dataset)
    noise = corpus.resolve_spec(exp.noise) if exp.noise in ("noisy", "given") else exp.noise
    ev = eval_spec(corpus, exp.eval_labels)
    data = dataset.build_windows(corpus, noise, ev or noise)
    return corpus, data


def _history_rows(history):
    return [{k: v for k, v in h.items() if k != "wall_time_s"} for h in history]


def run_cv(exp: ExperimentConfig, progress=None, data=None):
    """Cross-validate one (dataset, noise, method) cell; returns the report dict."""
    exp.validate()
    corpus = dataset.Corpus(exp.dataset)
    if data is None:
        _, data = load_windows(exp)
    out = evaluation.cross_validate(data, exp.method, exp.train, exp.cv, progress=progress)
    for row in out["folds"]:
        row["history"] = _history_rows(row["history"])
        row["noise"] = exp.noise
    return {
        "format": REPORT_FORMAT,
        "version": 1,
        "kind": "cv",
        "config": exp.to_dict(),
        "dataset_digest": corpus_digest(corpus, exp.noise, *(["clean"] if exp.eval_labels == "clean" else [])),
        "backend": kernels.BACKEND,
        "folds": out["folds"],
        "summary": out["summary"],
    }


def report_csv(report):
    import io

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in report["folds"]:
        w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in CSV_FIELDS})
    return buf.getvalue()


def transition_csv(matrix, n_windows=("", "")):
    lines = ["given,p_clean_0,p_clean_1,n_windows"]
    for a in (0, 1):
        lines.append(f"{a},{float(matrix[a][0])!r},{float(matrix[a][1])!r},{n_windows[a]}")
    return "\n".join(lines) + "\n"


def write_report(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_JSON).write_text(render_json(report))
    (out / REPORT_CSV).write_text(report_csv(report))
    trans = report["summary"].get("transition")
    if trans is not None:
        (out / TRANSITION_CSV).write_text(transition_csv(trans))
    return out / REPORT_JSON


def evaluate_model(model_path, data_dir, labels="clean", threshold=0.5, noise=None, smooth_width=0):
    """Report for a saved model on a corpus."""
    from .training import TrainConfig

    params, header = model.load_params(model_path)
    corpus = dataset.Corpus(data_dir)
    train_cfg = TrainConfig.from_dict(header.get("train", {}))
    noise = noise or header.get("noise") or corpus.resolve_spec("noisy")
    ev = eval_spec(corpus, labels)
    data = dataset.build_windows(corpus, noise, ev or noise)
    if data.X.shape[1] != params.n_features:
        raise model.ModelError(f"model expects {params.n_features} features, dataset has {data.X.shape[1]}")
    rep = evaluation.evaluate(params, data, threshold, train_cfg, with_transition=True, smooth_width=smooth_width)
    d = rep.to_dict()
    row = {"method": header.get("method", ""), "noise": noise, "repeat": 0, "fold": 0,
           "learning_rate": train_cfg.learning_rate, "train_seed": train_cfg.seed, **d}
    summary = {k: d[k] for k in evaluation.METRIC_NAMES}
    summary["transition"] = d["transition"]["matrix"]
    return {
        "format": REPORT_FORMAT,
        "version": 1,
        "kind": "evaluate",
        "config": {"model": str(model_path), "dataset": str(data_dir), "labels": labels, "noise": noise,
                   "threshold": float(threshold), "smooth_width": int(smooth_width)},
        "model_digest": file_digest(model_path),
        "dataset_digest": corpus_digest(corpus, noise, *(["clean"] if labels == "clean" else [])),
        "backend": kernels.BACKEND,
        "folds": [row],
        "summary": summary,
    }


def regenerate(report):
    """Re-run the computation described by a report dict."""
    if report.get("format") != REPORT_FORMAT:
        raise ValueError("not a report file")
    if report["kind"] == "cv":
        return run_cv(ExperimentConfig.from_dict(report["config"]))
    if report["kind"] == "evaluate":
        c = report["config"]
        return evaluate_model(c["model"], c["dataset"], c["labels"], c["threshold"], c["noise"], c["smooth_width"])
    raise ValueError(f"unknown report kind {report['kind']!r}")


def reproduce(report_path):
    """``(identical, regenerated_text)`` for a report file."""
    original = Path(report_path).read_text()
    report = json.loads(original)
    previous = kernels.use_backend(report.get("backend", kernels.BACKEND))
    try:
        text = render_json(regenerate(report))
    finally:
        kernels.use_backend(previous)
    return text == original, text
