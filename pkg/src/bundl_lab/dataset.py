"""On-disk corpus container and the in-memory window table used for training.

Layout of a corpus directory::

    manifest.json            montage, config echo, per-recording metadata
    signals/<key>.f32        little-endian float32, channel-major, no header
    labels_<spec>.json       per-window 0/1 labels + intervals per recording
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import eegsim, labelnoise, model

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CORPUS_FORMAT = "bundl-lab-corpus"
FEATURE_CACHE = "features_cache.npz"


class DatasetError(ValueError):
    pass


def dump_json(obj, path):
    """Deterministic JSON (sorted keys, fixed separators, trailing newline)."""
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def labels_filename(spec_name):
    return f"labels_{spec_name}.json"


class Corpus:
    def __init__(self, root):
        self.root = Path(root)
        path = self.root / MANIFEST
        if not path.is_file():
            raise DatasetError(f"no {MANIFEST} in {self.root}")
        with open(path) as fh:
            self.manifest = json.load(fh)
        if self.manifest.get("format") != CORPUS_FORMAT:
            raise DatasetError(f"{path} is not a corpus manifest")
        self.montage = self.manifest["montage"]
        self.recordings = self.manifest["recordings"]
        self.window_len_s = float(self.manifest.get("window_len_s", 1.0))
        self._by_key = {r["key"]: r for r in self.recordings}

    @property
    def has_clean(self):
        return bool(self.manifest.get("has_clean", False))

    @property
    def n_channels(self):
        return len(self.montage["channel_names"])

    @property
    def sample_rate(self):
        return float(self.montage["sample_rate"])

    @property
    def subjects(self):
        return sorted({r["subject_id"] for r in self.recordings})

    def read_signal(self, key):
        r = self._by_key[key]
        data = np.fromfile(self.root / r["file"], dtype="<f4")
        expected = r["n_channels"] * r["n_samples"]
        if data.size != expected:
            raise DatasetError(f"{r['file']}: {data.size} samples, manifest says {expected}")
        return data.reshape(r["n_channels"], r["n_samples"])

    def label_specs(self):
        return sorted(p.name[len("labels_"):-len(".json")] for p in self.root.glob("labels_*.json"))

    def resolve_spec(self, which):
        """Map ``clean`` / ``noisy`` / explicit spec names to a label file name."""
        if which == "clean":
            if not self.has_clean:
                raise DatasetError("corpus has no clean labels")
            return "clean"
        if which in ("noisy", "given"):
            return self.manifest.get("default_noisy", "given" if not self.has_clean else "clean")
        return which

    def labels(self, spec_name):
        path = self.root / labels_filename(self.resolve_spec(spec_name))
        if not path.is_file():
            raise DatasetError(f"label file {path.name} not found in {self.root}")
        with open(path) as fh:
            payload = json.load(fh)
        return {k: labelnoise.LabelTrack.from_dict(v) for k, v in payload["recordings"].items()}

    def write_labels(self, spec_name, tracks, seed=None, source="clean"):
        payload = {
            "spec": spec_name,
            "seed": seed,
            "source": source,
            "recordings": {k: tracks[k].to_dict() for k in sorted(tracks)},
        }
        dump_json(payload, self.root / labels_filename(spec_name))

    def corrupt(self, spec: labelnoise.NoiseSpec, seed=0, source=None):
        """Write ``labels_<spec>.json`` derived from the clean (or given) track."""
        source = source or ("clean" if self.has_clean else "given")
        base = self.labels(source)
        out = {}
        for r in self.recordings:
            rs = eegsim.record_seed(seed, r["subject_id"], r["record_id"])
            out[r["key"]] = labelnoise.corrupt(base[r["key"]], spec, rs)
        self.write_labels(spec.name, out, seed=seed, source=source)
        return out

    # --- features ----------------------------------------------------------

    def compressed_features(self, use_cache=True):
        """``{key: (n_windows, n_features)}`` log-compressed raw features."""
        cache_path = self.root / FEATURE_CACHE
        if use_cache and cache_path.is_file():
            with np.load(cache_path) as z:
                if set(z.files) == set(self._by_key):
                    return {k: z[k] for k in z.files}
        out = {}
        for r in self.recordings:
            sig = self.read_signal(r["key"])
            wins = model.recording_windows(sig, self.sample_rate, self.window_len_s)
            out[r["key"]] = model.compress(model.raw_window_features(wins, self.sample_rate))
        if use_cache and os.access(self.root, os.W_OK):
            np.savez(cache_path, **out)
        return out


def write_manifest(root, montage: eegsim.MontageSpec, config, records, has_clean, default_noisy, extra=None):
    manifest = {
        "format": CORPUS_FORMAT,
        "version": 1,
        "montage": montage.to_dict(),
        "config": config,
        "has_clean": has_clean,
        "default_noisy": default_noisy,
        "window_len_s": 1.0,
        "recordings": records,
    }
    if extra:
        manifest.update(extra)
    dump_json(manifest, Path(root) / MANIFEST)


def write_simulated_corpus(root, cfg: eegsim.SimConfig, progress=None):
    """Stream a simulated corpus to disk, one subject at a time."""
    cfg.validate()
    root = Path(root)
    (root / "signals").mkdir(parents=True, exist_ok=True)
    montage = eegsim.standard_montage(cfg.sample_rate)
    records, clean = [], {}
    for sid in range(cfg.n_subjects):
        for rec in eegsim.generate_subject(cfg, sid, montage):
            fname = f"signals/{rec.key}.f32"
            rec.signal.astype("<f4").tofile(root / fname)
            records.append({
                "key": rec.key,
                "subject_id": rec.subject_id,
                "record_id": rec.record_id,
                "file": fname,
                "n_channels": int(rec.signal.shape[0]),
                "n_samples": int(rec.signal.shape[1]),
                "sample_rate": rec.sample_rate,
                "recording_len_s": cfg.recording_len_s,
                "snr_db": round(rec.snr_db, 12),
                "clean_intervals": [list(iv) for iv in rec.clean_intervals],
            })
            clean[rec.key] = labelnoise.window_labels(rec.clean_intervals, cfg.recording_len_s)
        if progress:
            progress(sid)
    write_manifest(root, montage, {"simulation": cfg.to_dict()}, records, True, "clean")
    corpus = Corpus(root)
    corpus.write_labels("clean", clean, seed=cfg.seed, source="simulation")
    return corpus


# --- window table ----------------------------------------------------------

@dataclass
class WindowSet:
    """Flat table of windows with features and labels.

    ``X`` is standardized per subject using only that subject's windows.
    """
    X: np.ndarray
    y_train: np.ndarray
    y_eval: np.ndarray | None
    rec_index: np.ndarray
    win_index: np.ndarray
    subject: np.ndarray
    boundary_dist: np.ndarray
    records: list  # dicts: key, subject_id, n_windows, recording_len_s, train_intervals, eval_intervals
    stats_sources: dict = field(default_factory=dict)

    def __len__(self):
        return self.X.shape[0]

    @property
    def subjects(self):
        return sorted({r["subject_id"] for r in self.records})

    def subset_subjects(self, subjects):
        subjects = set(int(s) for s in subjects)
        keep_recs = [i for i, r in enumerate(self.records) if r["subject_id"] in subjects]
        remap = {old: new for new, old in enumerate(keep_recs)}
        mask = np.isin(self.rec_index, keep_recs)
        return WindowSet(
            X=self.X[mask],
            y_train=self.y_train[mask],
            y_eval=None if self.y_eval is None else self.y_eval[mask],
            rec_index=np.array([remap[i] for i in self.rec_index[mask]], dtype=np.int64),
            win_index=self.win_index[mask],
            subject=self.subject[mask],
            boundary_dist=self.boundary_dist[mask],
            records=[self.records[i] for i in keep_recs],
            stats_sources={s: v for s, v in self.stats_sources.items() if s in subjects},
        )

    def per_recording(self, values):
        """Split a per-window array into one array per recording (in record order)."""
        out = []
        for i in range(len(self.records)):
            sel = self.rec_index == i
            order = np.argsort(self.win_index[sel], kind="stable")
            out.append(np.asarray(values)[sel][order])
        return out


def _boundary_distance(n_windows, intervals, window_len_s):
    centers = (np.arange(n_windows) + 0.5) * window_len_s
    bounds = np.array([b for iv in intervals for b in iv], dtype=float)
    if bounds.size == 0:
        return np.full(n_windows, np.inf)
    return np.abs(centers[:, None] - bounds[None, :]).min(axis=1)


def build_windows(corpus: Corpus, train_spec, eval_spec=None, features=None):
    """Window table for a whole corpus.

    ``train_spec`` names the label file used as training targets;
    ``eval_spec`` (``clean``/``noisy``/spec name, optional) provides the
    evaluation labels.
    """
    features = features if features is not None else corpus.compressed_features()
    train_tracks = corpus.labels(train_spec)
    eval_tracks = corpus.labels(eval_spec) if eval_spec else None
    by_subject = {}
    for r in corpus.recordings:
        by_subject.setdefault(r["subject_id"], []).append(r)

    blocks = {k: [] for k in ("X", "y", "ye", "rec", "win", "subj", "bd")}
    records, stats_sources = [], {}
    for sid in sorted(by_subject):
        recs = by_subject[sid]
        stats = model.SubjectStats.fit(np.concatenate([features[r["key"]] for r in recs]))
        stats_sources[sid] = [r["key"] for r in recs]
        for r in recs:
            key = r["key"]
            feats = stats.apply(features[key])
            n = feats.shape[0]
            tr = train_tracks[key]
            if tr.n_windows != n:
                raise DatasetError(f"{key}: {tr.n_windows} labels for {n} windows")
            idx = len(records)
            records.append({
                "key": key,
                "subject_id": sid,
                "n_windows": n,
                "recording_len_s": n * corpus.window_len_s,
                "train_intervals": list(tr.intervals),
                "eval_intervals": list(eval_tracks[key].intervals) if eval_tracks else None,
            })
            blocks["X"].append(feats)
            blocks["y"].append(tr.labels)
            if eval_tracks:
                blocks["ye"].append(eval_tracks[key].labels)
            blocks["rec"].append(np.full(n, idx, dtype=np.int64))
            blocks["win"].append(np.arange(n, dtype=np.int64))
            blocks["subj"].append(np.full(n, sid, dtype=np.int64))
            blocks["bd"].append(_boundary_distance(n, tr.intervals, corpus.window_len_s))
    return WindowSet(
        X=np.concatenate(blocks["X"]),
        y_train=np.concatenate(blocks["y"]),
        y_eval=np.concatenate(blocks["ye"]) if eval_tracks else None,
        rec_index=np.concatenate(blocks["rec"]),
        win_index=np.concatenate(blocks["win"]),
        subject=np.concatenate(blocks["subj"]),
        boundary_dist=np.concatenate(blocks["bd"]),
        records=records,
        stats_sources=stats_sources,
    )
