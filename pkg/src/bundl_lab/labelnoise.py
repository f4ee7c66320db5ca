"""Per-window label tracks and the synthetic annotation corruptions.

Seven corruptions are produced for each corpus: random flips plus over- and
under-segmentation at 10/30/50 % of the seizure duration.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

MAX_OVER_EXTENSION_S = 60.0
MIN_UNDER_DURATION_S = 29.0
DEFAULT_RANDOM_SEVERITY = 0.1
NOISE_KINDS = ("clean", "random", "over", "under")
PAPER_VARIANTS = ("random0.1", "over0.1", "over0.3", "over0.5", "under0.1", "under0.3", "under0.5")


class LabelError(ValueError):
    pass


@dataclass
class LabelTrack:
    labels: np.ndarray
    intervals: list
    recording_len_s: float
    window_len_s: float = 1.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.intervals = [(float(a), float(b)) for a, b in self.intervals]

    @property
    def n_windows(self):
        return self.labels.size

    def copy(self):
        return LabelTrack(self.labels.copy(), list(self.intervals), self.recording_len_s, self.window_len_s)

    def to_dict(self):
        return {
            "labels": [int(v) if float(v).is_integer() else float(v) for v in self.labels],
            "intervals": [[a, b] for a, b in self.intervals],
            "recording_len_s": self.recording_len_s,
            "window_len_s": self.window_len_s,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["labels"], float), [tuple(x) for x in d["intervals"]],
                   float(d["recording_len_s"]), float(d.get("window_len_s", 1.0)))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "clean"
    severity: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise LabelError(f"unknown noise kind {self.kind!r}")
        if self.kind != "clean" and not 0 < self.severity < 1:
            raise LabelError("severity must lie in (0, 1)")

    @property
    def name(self):
        if self.kind == "clean":
            return "clean"
        return f"{self.kind}{self.severity:g}"

    @classmethod
    def parse(cls, text):
        text = text.strip().lower()
        if text in ("clean", "given"):
            return cls("clean")
        if text in ("random", "rand"):
            return cls("random", DEFAULT_RANDOM_SEVERITY)
        m = re.fullmatch(r"(random|rand|over|under)[-_:]?([0-9]*\.?[0-9]+)", text)
        if not m:
            raise LabelError(f"cannot parse noise spec {text!r}")
        kind = "random" if m.group(1) == "rand" else m.group(1)
        return cls(kind, float(m.group(2)))


def _check_intervals(intervals, recording_len_s):
    prev = 0.0
    for a, b in intervals:
        if not (0 <= a < b <= recording_len_s + 1e-9):
            raise LabelError(f"interval ({a}, {b}) outside recording of {recording_len_s}s")
        if a < prev - 1e-12:
            raise LabelError("intervals must be sorted and non-overlapping")
        prev = b


def window_labels(intervals, recording_len_s, window_len_s=1.0):
    """Binary per-window labels: 1 when at least half the window overlaps an interval."""
    ratio = recording_len_s / window_len_s
    n = int(round(ratio))
    if window_len_s <= 0 or abs(ratio - n) > 1e-9:
        raise LabelError(f"window length {window_len_s}s does not divide {recording_len_s}s")
    intervals = sorted((float(a), float(b)) for a, b in intervals)
    _check_intervals(intervals, recording_len_s)
    starts = np.arange(n) * window_len_s
    overlap = np.zeros(n)
    for a, b in intervals:
        overlap += np.clip(np.minimum(starts + window_len_s, b) - np.maximum(starts, a), 0.0, None)
    labels = (overlap >= 0.5 * window_len_s - 1e-12).astype(np.float64)
    return LabelTrack(labels, intervals, float(recording_len_s), float(window_len_s))


def intervals_from_labels(labels, window_len_s=1.0, threshold=0.5):
    """Maximal runs of windows with label >= threshold as (start_s, end_s)."""
    on = np.asarray(labels) >= threshold
    if not on.any():
        return []
    edges = np.diff(np.concatenate([[0], on.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(float(s * window_len_s), float(e * window_len_s)) for s, e in zip(starts, ends)]


def _split(total_units, unit):
    # odd remainder goes to the offset side
    pre = (total_units // 2) * unit
    return pre, total_units * unit - pre


def over_segment(onset, offset, severity, recording_len_s, unit=1.0):
    """Noisy interval extended by ``severity * duration`` split across both sides."""
    units = math.floor(severity * (offset - onset) / unit + 0.5)
    pre, post = _split(units, unit)
    room_pre, room_post = onset, recording_len_s - offset
    if pre > room_pre:
        post += pre - room_pre
        pre = room_pre
    if post > room_post:
        pre += post - room_post
        post = room_post
    pre = min(pre, room_pre, MAX_OVER_EXTENSION_S)
    post = min(post, room_post, MAX_OVER_EXTENSION_S)
    return onset - pre, offset + post


def under_segment(onset, offset, severity, unit=1.0):
    """Noisy interval shrunk by ``severity * duration`` split across both ends, floored at 29 s."""
    duration = offset - onset
    units = math.floor(severity * duration / unit + 0.5)
    max_units = max(0, math.floor((duration - MIN_UNDER_DURATION_S) / unit + 1e-9))
    units = min(units, max_units)
    pre, post = _split(units, unit)
    return onset + pre, offset - post


def corrupt(track: LabelTrack, spec: NoiseSpec, seed=0):
    """Apply one corruption scheme; the input track is left untouched."""
    if spec.kind == "clean":
        return track.copy()
    if spec.kind == "random":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5EED])))
        flips = rng.random(track.n_windows) < spec.severity
        binary = track.labels >= 0.5
        labels = np.where(flips, ~binary, binary).astype(np.float64)
        return LabelTrack(labels, intervals_from_labels(labels, track.window_len_s),
                          track.recording_len_s, track.window_len_s)
    if len(track.intervals) != 1:
        raise LabelError(f"{spec.kind}-segmentation needs exactly one interval, got {len(track.intervals)}")
    onset, offset = track.intervals[0]
    if spec.kind == "over":
        new = over_segment(onset, offset, spec.severity, track.recording_len_s, track.window_len_s)
    else:
        new = under_segment(onset, offset, spec.severity, track.window_len_s)
    return window_labels([new], track.recording_len_s, track.window_len_s)
