"""Window- and event-level metrics, threshold choice, transition matrices, CV.

Event metrics follow the usual seizure-detection conventions: a true
seizure counts as detected if any predicted event overlaps it, false alarm
time is the predicted time outside every true interval, expressed in minutes
per recording hour, and latency is measured from the true onset to the start
of the first overlapping event (never negative).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import bundl, model
from .training import TrainConfig, clamp_labels, stream

THRESHOLD_GRID = tuple(round(0.10 + 0.05 * i, 2) for i in range(15))
MAX_FPR_MIN_PER_HR = 3.0
TRANSITION_BAND_S = 60.0
METRIC_NAMES = ("auroc", "auprc", "sensitivity", "fpr_min_per_hr", "mean_latency_s")


class EvaluationError(ValueError):
    pass


# --- window level -----------------------------------------------------------

def _binary(labels):
    y = np.asarray(labels, dtype=np.float64)
    return y >= 0.5


def auroc(scores, labels):
    """Mann-Whitney AUC with ties counted as one half."""
    s = np.asarray(scores, dtype=np.float64)
    pos = _binary(labels)
    n1 = int(pos.sum())
    n0 = pos.size - n1
    if n1 == 0 or n0 == 0:
        raise EvaluationError("auroc needs both classes")
    ranks = rankdata(s)  # average ranks, so ties contribute 1/2
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def auprc(scores, labels):
    """Step-wise average precision over descending distinct score thresholds."""
    s = np.asarray(scores, dtype=np.float64)
    pos = _binary(labels)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise EvaluationError("auprc needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_sorted, p_sorted = s[order], pos[order]
    tp = np.cumsum(p_sorted)
    # last index of every block of tied scores is one operating point
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tps = tp[last]
    preds = last + 1
    d_tp = np.diff(np.r_[0, tps])
    terms = [(int(dt) / n_pos) * (int(t) / int(k)) for dt, t, k in zip(d_tp, tps, preds) if dt]
    return math.fsum(terms)


# --- event level ------------------------------------------------------------

@dataclass
class EventSet:
    events: list
    threshold: float

    def __len__(self):
        return len(self.events)

    @property
    def total_s(self):
        return sum(b - a for a, b in self.events)


def smooth_probs(probs, width):
    p = np.asarray(probs, dtype=np.float64)
    if width <= 1 or p.size == 0:
        return p
    kernel = np.ones(width) / width
    pad = width // 2
    padded = np.pad(p, (pad, width - 1 - pad), mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def events_from_probs(probs, threshold, window_len_s=1.0, smooth_width=0):
    """Maximal runs of windows with probability at or above ``threshold``."""
    if not 0 < threshold < 1:
        raise EvaluationError("threshold must lie in (0, 1)")
    above = smooth_probs(probs, smooth_width) >= threshold
    edges = np.diff(np.r_[0, above.astype(np.int8), 0])
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return EventSet([(float(a * window_len_s), float(b * window_len_s)) for a, b in zip(starts, ends)],
                    float(threshold))


def _merge(intervals):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _overlap(a, b, c, d):
    return max(0.0, min(b, d) - max(a, c))


@dataclass
class SeizureCounts:
    """Additive per-recording tallies; pooled metrics come from their sums."""
    n_seizures: int = 0
    n_detected: int = 0
    false_s: float = 0.0
    recording_s: float = 0.0
    latencies: list = field(default_factory=list)

    def __add__(self, other):
        return SeizureCounts(self.n_seizures + other.n_seizures, self.n_detected + other.n_detected,
                             self.false_s + other.false_s, self.recording_s + other.recording_s,
                             self.latencies + other.latencies)

    @property
    def sensitivity(self):
        return self.n_detected / self.n_seizures if self.n_seizures else float("nan")

    @property
    def fpr_min_per_hr(self):
        if self.recording_s <= 0:
            return float("nan")
        return (self.false_s / 60.0) / (self.recording_s / 3600.0)

    @property
    def mean_latency_s(self):
        return float(np.mean(self.latencies)) if self.latencies else float("nan")


def seizure_counts(events, true_intervals, recording_len_s):
    ev = events.events if isinstance(events, EventSet) else list(events)
    truth = _merge([tuple(map(float, iv)) for iv in true_intervals])
    detected, latencies = 0, []
    for on, off in truth:
        hits = [a for a, b in ev if _overlap(a, b, on, off) > 0]
        if hits:
            detected += 1
            latencies.append(max(0.0, min(hits) - on))
    false_s = 0.0
    for a, b in ev:
        false_s += (b - a) - sum(_overlap(a, b, on, off) for on, off in truth)
    return SeizureCounts(len(truth), detected, false_s, float(recording_len_s), latencies)


def seizure_metrics(events, true_intervals, recording_len_s):
    """``(sensitivity, fpr_min_per_hr, mean_latency_s)`` for one recording."""
    c = seizure_counts(events, true_intervals, recording_len_s)
    return c.sensitivity, c.fpr_min_per_hr, c.mean_latency_s


def pooled_counts(prob_list, interval_list, lengths, threshold, window_len_s=1.0, smooth_width=0):
    total = SeizureCounts()
    for p, ivs, n in zip(prob_list, interval_list, lengths):
        total = total + seizure_counts(events_from_probs(p, threshold, window_len_s, smooth_width), ivs, n)
    return total


def select_threshold(val_probs, val_intervals, lengths, grid=THRESHOLD_GRID, max_fpr=MAX_FPR_MIN_PER_HR,
                     window_len_s=1.0, smooth_width=0):
    """Best-sensitivity threshold with pooled FPR under ``max_fpr``.

    Falls back to the lowest-FPR threshold when none qualifies; remaining
    ties go to the lower threshold.
    """
    if len(val_probs) == 0:
        raise EvaluationError("empty validation set")
    rows = []
    for thr in grid:
        c = pooled_counts(val_probs, val_intervals, lengths, thr, window_len_s, smooth_width)
        sens = c.sensitivity if c.n_seizures else 0.0
        rows.append((float(thr), sens, c.fpr_min_per_hr))
    ok = [r for r in rows if r[2] < max_fpr]
    if ok:
        best = max(ok, key=lambda r: (r[1], -r[2], -r[0]))
    else:
        best = min(rows, key=lambda r: (r[2], -r[1], r[0]))
    return best[0]


# --- transition matrix ------------------------------------------------------

@dataclass
class TransitionMatrix:
    """``matrix[a, b] = p(y = b | y_hat = a)`` averaged over windows near onsets."""
    matrix: np.ndarray
    n_windows: tuple

    @property
    def p_seizure_given_baseline(self):
        return float(self.matrix[0, 1])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["given", "p_clean_0", "p_clean_1", "n_windows"])
        for a in (0, 1):
            w.writerow([a, repr(float(self.matrix[a, 0])), repr(float(self.matrix[a, 1])), self.n_windows[a]])
        return buf.getvalue()


def onset_band_mask(data, band_s=TRANSITION_BAND_S):
    """Windows whose centre lies within ``band_s`` of a training-label onset."""
    mask = np.zeros(len(data), dtype=bool)
    for i, rec in enumerate(data.records):
        sel = np.flatnonzero(data.rec_index == i)
        centers = (data.win_index[sel] + 0.5) * (rec["recording_len_s"] / rec["n_windows"])
        for on, _ in rec["train_intervals"]:
            mask[sel[np.abs(centers - on) <= band_s]] = True
    return mask


def transition_from_estimates(p_given, f_bar, z_est, z0, z1, eps=0.001):
    """Average of ``p_g (1 - z) + f_bar z`` per given-label row."""
    y_hat = _binary(p_given)
    p_g = clamp_labels(p_given, eps)
    z_base = bundl.resolve_z(z0, z_est) * np.ones_like(p_g)
    z_seiz = bundl.resolve_z(z1, z_est) * np.ones_like(p_g)
    z = np.where(y_hat, z_seiz, z_base)
    p1 = p_g * (1.0 - z) + np.asarray(f_bar) * z
    mat = np.empty((2, 2))
    counts = []
    for a in (0, 1):
        rows = y_hat == bool(a)
        if not rows.any():
            raise EvaluationError(f"no windows with given label {a} in the onset band")
        m = float(np.mean(p1[rows]))
        mat[a] = (1.0 - m, m)
        counts.append(int(rows.sum()))
    return TransitionMatrix(mat, tuple(counts))


def transition_matrix(params, data, cfg: TrainConfig, band_s=TRANSITION_BAND_S, seed=None):
    mask = onset_band_mask(data, band_s)
    if not mask.any():
        raise EvaluationError("no windows in the onset band")
    est = bundl.mc_uncertainty(params, data.X[mask], cfg.n_mc, seed=cfg.seed if seed is None else seed)
    return transition_from_estimates(data.y_train[mask], est.mean_pred, est.z, cfg.z0, cfg.z1, cfg.label_eps)


# --- reports ----------------------------------------------------------------

@dataclass
class MetricsReport:
    auroc: float
    auprc: float
    sensitivity: float
    fpr_min_per_hr: float
    mean_latency_s: float
    threshold: float
    per_recording: list = field(default_factory=list)
    transition: TransitionMatrix | None = None

    def to_dict(self):
        d = {k: getattr(self, k) for k in METRIC_NAMES + ("threshold", "per_recording")}
        d["transition"] = None if self.transition is None else {
            "matrix": self.transition.matrix.tolist(), "n_windows": list(self.transition.n_windows)}
        return d


def evaluate(params, data, threshold, cfg: TrainConfig | None = None, with_transition=False,
             smooth_width=0, probs=None):
    """Full report for ``data`` against its evaluation labels."""
    if data.y_eval is None:
        raise EvaluationError("window set has no evaluation labels")
    probs = model.predict(params, data.X) if probs is None else probs
    per_rec = data.per_recording(probs)
    total, rows = SeizureCounts(), []
    for rec, p in zip(data.records, per_rec):
        wl = rec["recording_len_s"] / rec["n_windows"]
        c = seizure_counts(events_from_probs(p, threshold, wl, smooth_width), rec["eval_intervals"],
                           rec["recording_len_s"])
        total = total + c
        rows.append({"key": rec["key"], "subject_id": rec["subject_id"], "n_seizures": c.n_seizures,
                     "n_detected": c.n_detected, "false_s": c.false_s, "latencies_s": c.latencies})
    y = data.y_eval
    has_both = _binary(y).any() and not _binary(y).all()
    report = MetricsReport(
        auroc=auroc(probs, y) if has_both else float("nan"),
        auprc=auprc(probs, y) if _binary(y).any() else float("nan"),
        sensitivity=total.sensitivity,
        fpr_min_per_hr=total.fpr_min_per_hr,
        mean_latency_s=total.mean_latency_s,
        threshold=float(threshold),
        per_recording=rows,
    )
    if with_transition:
        report.transition = transition_matrix(params, data, cfg or TrainConfig())
    return report


# --- cross-validation -------------------------------------------------------

@dataclass
class CVSpec:
    n_folds: int = 5
    n_repeats: int = 1
    val_fraction: float = 0.2
    seed: int = 0
    lr_grid: tuple = ()
    smooth_width: int = 0
    with_transition: bool = False
    transition_on: str = "train"  # "train" (subjects whose given labels were fit) or "test"

    def to_dict(self):
        d = asdict(self)
        d["lr_grid"] = list(self.lr_grid)
        return d


def subject_folds(subjects, n_folds, seed, repeat=0):
    subjects = np.asarray(sorted(subjects))
    if subjects.size < n_folds:
        raise EvaluationError(f"{subjects.size} subjects cannot fill {n_folds} folds")
    perm = stream(seed, repeat, 0xF01D).permutation(subjects)
    return [sorted(int(s) for s in f) for f in np.array_split(perm, n_folds)]


def inner_split(subjects, val_fraction, seed, repeat, fold):
    subjects = np.asarray(sorted(subjects))
    n_val = max(1, int(round(val_fraction * subjects.size)))
    if n_val >= subjects.size:
        raise EvaluationError("not enough training subjects for a validation split")
    perm = stream(seed, repeat, fold, 0x7A1).permutation(subjects)
    return sorted(int(s) for s in perm[n_val:]), sorted(int(s) for s in perm[:n_val])


def _val_score(params, val, smooth_width):
    """Validation objective for the learning-rate search (noisy labels only)."""
    probs = model.predict(params, val.X)
    thr = select_threshold(val.per_recording(probs), [r["train_intervals"] for r in val.records],
                           [r["recording_len_s"] for r in val.records], smooth_width=smooth_width)
    c = pooled_counts(val.per_recording(probs), [r["train_intervals"] for r in val.records],
                      [r["recording_len_s"] for r in val.records], thr, smooth_width=smooth_width)
    return thr, (c.sensitivity if c.n_seizures else 0.0) - c.fpr_min_per_hr / 60.0


def run_fold(data, method, cfg: TrainConfig, test_subjects, train_subjects, val_subjects, cv: CVSpec,
             progress=None):
    """Train on ``train_subjects``, tune on ``val_subjects``, report on ``test_subjects``."""
    from .baselines import train_model

    tr = data.subset_subjects(train_subjects)
    val = data.subset_subjects(val_subjects)
    test = data.subset_subjects(test_subjects)
    best = None
    for lr in (cv.lr_grid or (cfg.learning_rate,)):
        c = TrainConfig(**{**cfg.__dict__, "learning_rate": float(lr)})
        params, history, _ = train_model(tr, c, method, progress=progress)
        thr, score = _val_score(params, val, cv.smooth_width)
        if best is None or score > best[0]:
            best = (score, lr, thr, params, history, c)
    _, lr, thr, params, history, c = best
    report = evaluate(params, test, thr, c, smooth_width=cv.smooth_width)
    if cv.with_transition:
        report.transition = transition_matrix(params, tr if cv.transition_on == "train" else test, c)
    return report, {"learning_rate": float(lr), "history": history}


def aggregate(rows):
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([r[name] for r in rows], dtype=float)
        vals = vals[np.isfinite(vals)]
        out[name] = {
            "mean": float(vals.mean()) if vals.size else float("nan"),
            "std": float(vals.std()) if vals.size else float("nan"),
            "median": float(np.median(vals)) if vals.size else float("nan"),
        }
    return out


def cross_validate(data, method, cfg: TrainConfig, cv: CVSpec = CVSpec(), progress=None):
    """Subject-wise CV. Returns ``{"folds": [...], "summary": {...}}``."""
    folds_out = []
    for rep in range(cv.n_repeats):
        folds = subject_folds(data.subjects, cv.n_folds, cv.seed, rep)
        for k, test_subj in enumerate(folds):
            rest = [s for s in data.subjects if s not in test_subj]
            tr_subj, val_subj = inner_split(rest, cv.val_fraction, cv.seed, rep, k)
            if progress:
                progress(f"[{method}] repeat {rep + 1}/{cv.n_repeats} fold {k + 1}/{cv.n_folds} "
                         f"test subjects {test_subj}")
            fold_cfg = TrainConfig(**{**cfg.__dict__, "seed": int(stream(cfg.seed, rep, k).integers(2**31))})
            report, info = run_fold(data, method, fold_cfg, test_subj, tr_subj, val_subj, cv)
            row = {"method": method, "repeat": rep, "fold": k, "test_subjects": test_subj,
                   "train_subjects": tr_subj, "val_subjects": val_subj, "train_seed": fold_cfg.seed,
                   **info, **report.to_dict()}
            folds_out.append(row)
    summary = aggregate(folds_out)
    trans = [r["transition"]["matrix"] for r in folds_out if r.get("transition")]
    if trans:
        summary["transition"] = np.mean(np.array(trans), axis=0).tolist()
    return {"folds": folds_out, "summary": summary}
