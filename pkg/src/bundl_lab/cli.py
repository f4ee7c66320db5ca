"""``bundl-lab`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Progress goes to stderr; results go to files.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset, eegsim, experiments, labelnoise, model
from .baselines import METHODS, train_model
from .config import ConfigError, ExperimentConfig, load_config
from .training import TrainConfig, TrainingError, parse_z

log = logging.getLogger("bundl_lab")

SNR_DIR = "snr_{}"
DONE_MARKER = "DONE"


class UsageError(Exception):
    """Bad arguments or configuration: exit code 2."""


def progress(msg):
    print(msg, file=sys.stderr, flush=True)


def _prepare_out(path, force):
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"{out} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _open_corpus(path):
    if not Path(path).is_dir():
        raise UsageError(f"dataset directory {path} does not exist")
    try:
        return dataset.Corpus(path)
    except dataset.DatasetError as exc:
        raise UsageError(str(exc)) from None


def _noise_spec(text):
    try:
        return labelnoise.NoiseSpec.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --- simulate ---------------------------------------------------------------

def cmd_simulate(args):
    bands = list(eegsim.SNR_BANDS) if args.all_variants else [args.snr]
    noise = labelnoise.PAPER_VARIANTS if args.all_variants else tuple(args.noise or ())
    specs = [_noise_spec(n) for n in noise]
    out = _prepare_out(args.out, args.force)
    for band in bands:
        cfg = eegsim.SimConfig(n_subjects=args.subjects, snr_band=band, seed=args.seed,
                               recordings_per_subject_range=(args.min_recordings, args.max_recordings))
        try:
            cfg.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        root = out / SNR_DIR.format(band) if args.all_variants else out
        progress(f"simulating {args.subjects} subjects, snr={band} -> {root}")
        corpus = dataset.write_simulated_corpus(
            root, cfg, progress=lambda sid: progress(f"  subject {sid + 1}/{args.subjects}"))
        for spec in specs:
            corpus.corrupt(spec, seed=args.seed)
    return 0


# --- ingest -----------------------------------------------------------------

def _read_signal_file(path, n_channels, sample_rate):
    if path.suffix == ".csv":
        with open(path) as fh:
            first = fh.readline()
        try:
            float(first.split(",")[0])
            skip = 0
        except ValueError:  # header row of channel names
            skip = 1
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
        sig = data.T  # file rows are samples
    elif path.suffix == ".f32":
        flat = np.fromfile(path, dtype="<f4")
        if flat.size % n_channels:
            raise UsageError(f"{path.name}: {flat.size} values is not a multiple of {n_channels} channels")
        sig = flat.reshape(n_channels, -1)
    else:
        raise UsageError(f"{path.name}: unsupported signal format (use .csv or .f32)")
    if sig.shape[0] != n_channels:
        raise UsageError(f"{path.name}: {sig.shape[0]} channels, montage has {n_channels}")
    if not np.isfinite(sig).all():
        raise UsageError(f"{path.name}: non-finite samples")
    return sig.astype("<f4")


def cmd_ingest(args):
    montage = eegsim.standard_montage(args.sample_rate)
    n_ch = len(montage.channel_names)
    src = Path(args.signals)
    if not src.is_dir():
        raise UsageError(f"signal directory {src} does not exist")
    try:
        with open(args.labels) as fh:
            label_doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read labels {args.labels}: {exc}") from None
    entries = label_doc.get("recordings", label_doc)
    out = _prepare_out(args.out, args.force)
    (out / "signals").mkdir()
    records, tracks = [], {}
    subj_ids, rec_counter = {}, {}
    for name in sorted(entries):
        entry = entries[name]
        if isinstance(entry, list):
            entry = {"intervals": entry}
        matches = [p for p in (src / f"{name}.csv", src / f"{name}.f32") if p.is_file()]
        if not matches:
            raise UsageError(f"no signal file for recording {name!r} in {src}")
        sig = _read_signal_file(matches[0], n_ch, args.sample_rate)
        n_win = int(sig.shape[1] // args.sample_rate)
        length = float(n_win)
        sig = sig[:, : int(n_win * args.sample_rate)]
        try:
            intervals = [(float(a), float(b)) for a, b in entry.get("intervals", [])]
        except (TypeError, ValueError):
            raise UsageError(f"{name}: unparseable intervals {entry.get('intervals')!r}") from None
        for a, b in intervals:
            if not 0 <= a < b <= length:
                raise UsageError(f"{name}: interval ({a}, {b}) outside recording [0, {length}]")
        subject = str(entry.get("subject", name))
        sid = subj_ids.setdefault(subject, len(subj_ids))
        rid = rec_counter.get(sid, 0)
        rec_counter[sid] = rid + 1
        key = f"s{sid:03d}_r{rid:02d}"
        fname = f"signals/{key}.f32"
        sig.tofile(out / fname)
        records.append({"key": key, "source": name, "subject_id": sid, "record_id": rid, "file": fname,
                        "n_channels": n_ch, "n_samples": int(sig.shape[1]), "sample_rate": args.sample_rate,
                        "recording_len_s": length, "clean_intervals": None})
        tracks[key] = labelnoise.window_labels(intervals, length)
    dataset.write_manifest(out, montage, {"ingest": {"signals": str(src.resolve()), "labels": str(Path(args.labels).resolve())}},
                           records, has_clean=False, default_noisy="given")
    dataset.Corpus(out).write_labels("given", tracks, source="ingest")
    progress(f"ingested {len(records)} recordings from {len(subj_ids)} subjects -> {out}")
    return 0


# --- corrupt ----------------------------------------------------------------

def cmd_corrupt(args):
    corpus = _open_corpus(args.data)
    for text in args.noise:
        spec = _noise_spec(text)
        try:
            corpus.corrupt(spec, seed=args.seed)
        except labelnoise.LabelError as exc:
            raise UsageError(str(exc)) from None
        progress(f"wrote {dataset.labels_filename(spec.name)}")
    return 0


# --- experiment config from flags ---------------------------------------------

def build_experiment(args):
    exp = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for attr in ("noise", "method", "eval_labels"):
        if getattr(args, attr, None) is not None:
            setattr(exp, attr, getattr(args, attr))
    if getattr(args, "data", None):
        exp.dataset = args.data
    if getattr(args, "out", None):
        exp.output = args.out
    t = exp.train
    if getattr(args, "seed", None) is not None:
        t.seed = args.seed
        exp.cv.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        t.max_epochs = args.epochs
    if getattr(args, "lr", None) is not None:
        t.learning_rate = args.lr
    if getattr(args, "z0", None) is not None:
        t.z0 = parse_z(args.z0)
    if getattr(args, "z1", None) is not None:
        t.z1 = parse_z(args.z1)
    if getattr(args, "folds", None) is not None:
        exp.cv.n_folds = args.folds
    if not exp.dataset:
        raise UsageError("no dataset given (--data or [experiment] dataset)")
    _open_corpus(exp.dataset)
    exp.dataset = str(Path(exp.dataset).resolve())
    return exp.validate()


# --- train / evaluate -------------------------------------------------------------

def cmd_train(args):
    exp = build_experiment(args)
    corpus = dataset.Corpus(exp.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        data = dataset.build_windows(corpus, exp.noise)
    except dataset.DatasetError as exc:
        raise UsageError(str(exc)) from None
    with open(out / "train_log.jsonl", "w") as log_file:
        params, history, method = train_model(data, exp.train, exp.method, log_file=log_file, progress=progress)
    extra = {"method": exp.method, "noise": exp.noise, "train": exp.train.to_dict(),
             "dataset": exp.dataset, "dataset_digest": experiments.corpus_digest(corpus, exp.noise)}
    if exp.method == "nal":
        extra["nal_transition"] = method.transition().tolist()
    model.save_params(params, out / "model.bin", extra=extra)
    (out / "config.json").write_text(experiments.render_json(exp.to_dict()))
    progress(f"model written to {out / 'model.bin'}")
    return 0


def cmd_evaluate(args):
    if not Path(args.model).is_file():
        raise UsageError(f"model file {args.model} does not exist")
    _open_corpus(args.data)
    try:
        report = experiments.evaluate_model(str(Path(args.model).resolve()), str(Path(args.data).resolve()),
                                            args.labels, args.threshold, args.noise, args.smooth)
    except (dataset.DatasetError, model.ModelError) as exc:
        raise UsageError(str(exc)) from None
    path = experiments.write_report(report, args.out)
    progress(f"report written to {path}")
    return 0


# --- sweep ------------------------------------------------------------------

def _sweep_cell(job):
    exp_dict, cell_dir = job
    exp = ExperimentConfig.from_dict(exp_dict)
    report = experiments.run_cv(exp, progress=progress)
    experiments.write_report(report, cell_dir)
    (Path(cell_dir) / DONE_MARKER).write_text("ok\n")
    return cell_dir


def _dataset_for(root, snr):
    root = Path(root)
    if snr == "-":
        return root
    return root / SNR_DIR.format(snr)


def write_sweep_tables(out, cells):
    agg_rows, long_rows = [], []
    for snr, noise, method, cell_dir in cells:
        path = Path(cell_dir) / experiments.REPORT_JSON
        if not (Path(cell_dir) / DONE_MARKER).is_file():
            continue
        rep = json.loads(path.read_text())
        row = {"snr": snr, "noise": noise, "method": method, "n_folds": len(rep["folds"])}
        for name, stats in rep["summary"].items():
            if name == "transition":
                continue
            row[f"{name}_mean"] = stats["mean"]
            row[f"{name}_std"] = stats["std"]
        agg_rows.append(row)
        for f in rep["folds"]:
            for name in ("auroc", "auprc", "sensitivity", "fpr_min_per_hr", "mean_latency_s"):
                long_rows.append({"snr": snr, "noise": noise, "method": method, "repeat": f["repeat"],
                                  "fold": f["fold"], "metric": name, "value": f[name]})
    for fname, rows in (("aggregate.csv", agg_rows), ("long.csv", long_rows)):
        fields = list(rows[0]) if rows else ["snr", "noise", "method"]
        with open(Path(out) / fname, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fields})
    return len(agg_rows)


def cmd_sweep(args):
    base = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        base.train.seed = args.seed
        base.cv.seed = args.seed
    if args.epochs is not None:
        base.train.max_epochs = args.epochs
    if args.folds is not None:
        base.cv.n_folds = args.folds
    methods = args.methods.split(",")
    noises = args.noise.split(",")
    snrs = args.snr.split(",") if args.snr else ["-"]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells, jobs = [], []
    for snr in snrs:
        root = _dataset_for(args.data, snr)
        corpus = _open_corpus(root)
        for noise in noises:
            if noise not in corpus.label_specs():
                raise UsageError(f"{root} has no labels_{noise}.json (run corrupt first)")
            for m in methods:
                cell_dir = out / snr.replace("-", "all") / noise / m
                cells.append((snr, noise, m, cell_dir))
                if (cell_dir / DONE_MARKER).is_file():
                    progress(f"skip {snr}/{noise}/{m} (done)")
                    continue
                exp = ExperimentConfig(dataset=str(root.resolve()), noise=noise, eval_labels=base.eval_labels,
                                       method=m, output=str(cell_dir), train=base.train, cv=base.cv).validate()
                jobs.append((exp.to_dict(), str(cell_dir)))
    failures = []
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {pool.submit(_sweep_cell, j): j for j in jobs}
            for fut, job in futures.items():
                try:
                    progress(f"finished {fut.result()}")
                except Exception as exc:  # keep other cells going
                    failures.append((job[1], exc))
    else:
        for job in jobs:
            try:
                progress(f"finished {_sweep_cell(job)}")
            except (TrainingError, ValueError, OSError) as exc:
                failures.append((job[1], exc))
    n = write_sweep_tables(out, cells)
    progress(f"{n} of {len(cells)} cells complete -> {out / 'aggregate.csv'}")
    for cell, exc in failures:
        progress(f"cell {cell} failed: {exc}")
    return 1 if failures else 0


# --- report -----------------------------------------------------------------

def cmd_report(args):
    if args.reproduce:
        path = Path(args.reproduce)
        if not path.is_file():
            raise UsageError(f"report {path} does not exist")
        same, text = experiments.reproduce(path)
        if args.out:
            Path(args.out).write_text(text)
        print("identical" if same else "DIFFERENT")
        return 0 if same else 1
    if not args.sweep:
        raise UsageError("give --reproduce REPORT or --sweep DIR")
    root = Path(args.sweep)
    cells = []
    for done in sorted(root.glob(f"*/*/*/{DONE_MARKER}")):
        cell = done.parent
        cells.append((cell.parent.parent.name, cell.parent.name, cell.name, cell))
    n = write_sweep_tables(root, cells)
    with open(root / "aggregate.csv") as fh:
        sys.stdout.write(fh.read())
    progress(f"{n} cells")
    return 0


# --- parser -----------------------------------------------------------------

def _jobs_default():
    try:
        return max(1, int(os.environ.get("BUNDL_LAB_JOBS", "1")))
    except ValueError:
        return 1


def _train_flags(p):
    p.add_argument("--config", help="experiment INI file")
    p.add_argument("--noise", help="training label spec, e.g. over0.3 (default from config)")
    p.add_argument("--method", choices=sorted(METHODS))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--z0", help="fixed value or 'estimated'")
    p.add_argument("--z1", help="fixed value or 'estimated'")


def build_parser():
    ap = argparse.ArgumentParser(prog="bundl-lab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--snr", choices=sorted(eegsim.SNR_BANDS), default="mid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-recordings", type=int, default=1)
    p.add_argument("--max-recordings", type=int, default=10)
    p.add_argument("--noise", action="append", help="also write this label corruption (repeatable)")
    p.add_argument("--all-variants", action="store_true",
                   help="one corpus per SNR band, each with all seven corrupted label sets")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="convert external recordings into a corpus")
    p.add_argument("--signals", required=True, help="directory of <name>.csv (samples x channels) or <name>.f32")
    p.add_argument("--labels", required=True, help="JSON {name: {subject, intervals: [[on, off], ...]}}")
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=float, default=200.0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("corrupt", help="derive noisy label files")
    p.add_argument("--data", required=True)
    p.add_argument("--noise", required=True, action="append")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", help="pretrain and train one model on a whole corpus")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", choices=("clean", "noisy"), default="clean")
    p.add_argument("--noise", help="label spec for transition matrix rows (default: the training spec)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--smooth", type=int, default=0, help="moving-average width before eventing")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="cross-validate method x noise x SNR cells")
    p.add_argument("--data", required=True, help="corpus, or a directory of snr_<band> corpora with --snr")
    p.add_argument("--methods", default="bundl,cel")
    p.add_argument("--noise", default="over0.3")
    p.add_argument("--snr", help="comma-separated SNR bands (needs snr_<band> subdirectories)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--jobs", type=int, default=_jobs_default())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a sweep or regenerate a report")
    p.add_argument("--sweep", help="sweep output directory")
    p.add_argument("--reproduce", help="report.json to regenerate from its embedded config")
    p.add_argument("--out", help="where to write the regenerated report")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"bundl-lab {args.command}: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, dataset.DatasetError, labelnoise.LabelError, model.ModelError, OSError, ValueError) as exc:
        print(f"bundl-lab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
