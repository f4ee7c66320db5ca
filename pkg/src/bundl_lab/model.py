"""Window features and the dropout MLP used as the reference predictor.

The network is ``114 -> 64 -> 32 -> 1`` with ReLU hidden layers, inverted
dropout on both hidden layers and a clamped sigmoid output. Any layer sizes
are accepted so tiny nets can be checked by hand.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels

BANDS_HZ = (("delta", 1.0, 4.0), ("theta", 4.0, 8.0), ("alpha", 8.0, 13.0), ("beta", 13.0, 30.0))
FEATURE_NAMES = tuple(b[0] for b in BANDS_HZ) + ("line_length", "variance")
N_PER_CHANNEL = len(FEATURE_NAMES)
DEFAULT_LAYERS = (114, 64, 32, 1)
DEFAULT_DROPOUT = 0.2
PARAMS_MAGIC = "bundl-lab-params"


class ModelError(ValueError):
    pass


# --- features -------------------------------------------------------------

def raw_window_features(windows, sample_rate=200.0):
    """Raw per-channel features for a stack of windows.

    ``windows`` is ``(n_windows, n_channels, n_samples)``; returns
    ``(n_windows, n_channels * 6)`` ordered channel-major as
    ``delta, theta, alpha, beta, line_length, variance``.
    """
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    if not np.isfinite(w).all():
        raise ModelError("window contains non-finite samples")
    n_win, n_ch, n_s = w.shape
    spec = np.fft.rfft(w, axis=-1)
    # one-sided periodogram density
    psd = (np.abs(spec) ** 2) / (sample_rate * n_s)
    if n_s % 2 == 0:
        psd[..., 1:-1] *= 2
    else:
        psd[..., 1:] *= 2
    freqs = np.fft.rfftfreq(n_s, 1.0 / sample_rate)
    df = sample_rate / n_s
    feats = np.empty((n_win, n_ch, N_PER_CHANNEL))
    for k, (_, lo, hi) in enumerate(BANDS_HZ):
        sel = (freqs >= lo) & ((freqs < hi) if hi < 30.0 else (freqs <= hi))
        feats[..., k] = psd[..., sel].sum(axis=-1) * df
    feats[..., 4] = np.abs(np.diff(w, axis=-1)).sum(axis=-1)
    feats[..., 5] = w.var(axis=-1)
    return feats.reshape(n_win, n_ch * N_PER_CHANNEL)


def compress(raw):
    """Variance-stabilizing transform applied before standardization."""
    return np.log1p(raw)


def recording_windows(signal, sample_rate=200.0, window_len_s=1.0):
    """Reshape a channel-major signal into ``(n_windows, channels, samples)``."""
    n = int(round(window_len_s * sample_rate))
    n_win = signal.shape[1] // n
    return signal[:, : n_win * n].reshape(signal.shape[0], n_win, n).transpose(1, 0, 2)


@dataclass
class SubjectStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, compressed):
        mean = compressed.mean(axis=0)
        std = compressed.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def apply(self, compressed):
        return (compressed - self.mean) / self.std


def extract_features(window, subject_stats: SubjectStats | None = None, sample_rate=200.0):
    """Feature vector for one ``(channels, samples)`` window.

    Without ``subject_stats`` the raw (uncompressed, unstandardized) features
    are returned.
    """
    raw = raw_window_features(np.asarray(window)[None], sample_rate)[0]
    if subject_stats is None:
        return raw
    return subject_stats.apply(compress(raw))


# --- network --------------------------------------------------------------

@dataclass
class PredictorParams:
    weights: list
    biases: list
    dropout_rate: float = DEFAULT_DROPOUT
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ModelError("dropout_rate must lie in [0, 1)")

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def hidden_sizes(self):
        return self.layer_sizes[1:-1]

    @property
    def n_features(self):
        return self.layer_sizes[0]

    def arrays(self):
        """Flat list of parameter arrays (weights then biases, by layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return PredictorParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                               self.dropout_rate, self.seed, dict(self.meta))

    def is_finite(self):
        return all(np.isfinite(a).all() for a in self.arrays())

    def equals(self, other):
        return (self.layer_sizes == other.layer_sizes
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))


def init_params(seed, layer_sizes=DEFAULT_LAYERS, dropout_rate=DEFAULT_DROPOUT):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x1417])))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return PredictorParams(weights, biases, dropout_rate, int(seed))


MASK_RESOLUTION = 1 << 16


def mask_scale(params: PredictorParams):
    return 1.0 / (1.0 - params.dropout_rate)


def draw_masks(rng, n_rows, params: PredictorParams, n_samples=None):
    """Boolean keep masks for every hidden layer.

    A unit is kept when a 16-bit uniform draw falls below
    ``round((1 - rate) * 2**16)``; kept units are later multiplied by
    :func:`mask_scale`. With ``n_samples`` each mask gets a leading sample
    axis for MC dropout.
    """
    cut = int(round((1.0 - params.dropout_rate) * MASK_RESOLUTION))
    lead = (n_rows,) if n_samples is None else (n_samples, n_rows)
    masks = []
    for h in params.hidden_sizes:
        u = rng.integers(0, MASK_RESOLUTION, size=lead + (h,), dtype=np.uint16)
        masks.append(u < cut)
    return masks


def forward(params: PredictorParams, features, mask=None):
    """Probabilities for a batch (or a single vector) of features.

    ``mask=None`` is deterministic inference; pass masks from
    :func:`draw_masks` for a stochastic pass.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    probs, _ = kernels.forward(params.weights, params.biases, x, mask, mask_scale(params))
    return probs if np.ndim(features) > 1 else float(probs[0])


def forward_cached(params, features, mask=None):
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return kernels.forward(params.weights, params.biases, x, mask, mask_scale(params))


def mc_predictions(params, features, masks, n_samples):
    """``(n_samples, rows)`` MC-dropout predictions under the given masks."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return kernels.mc_samples(params.weights, params.biases, x, masks, n_samples, mask_scale(params))


def backward(params: PredictorParams, cache, upstream):
    """Gradient of ``sum_i upstream[i] * f_i``; returns a params-shaped object."""
    gw, gb = kernels.backward(params.weights, cache, np.atleast_1d(np.asarray(upstream, dtype=np.float64)))
    return PredictorParams(gw, gb, params.dropout_rate, params.seed)


def predict(params, features, batch_size=8192):
    x = np.asarray(features, dtype=np.float64)
    out = np.empty(x.shape[0])
    for i in range(0, x.shape[0], batch_size):
        out[i:i + batch_size] = forward(params, x[i:i + batch_size])
    return out


# --- serialization --------------------------------------------------------

def save_params(params: PredictorParams, path, extra=None):
    """JSON header line followed by little-endian float64 data."""
    header = {
        "format": PARAMS_MAGIC,
        "version": 1,
        "layer_sizes": list(params.layer_sizes),
        "dropout_rate": params.dropout_rate,
        "seed": params.seed,
        "dtype": "<f8",
        "order": "per layer: weights (fan_in x fan_out, row-major) then biases",
        "meta": params.meta,
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(blob + b"\n")
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if header.get("format") != PARAMS_MAGIC:
        raise ModelError(f"{path} is not a parameter file")
    sizes = header["layer_sizes"]
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(data[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(data[pos:pos + fan_out].copy())
        pos += fan_out
    if pos != data.size:
        raise ModelError(f"{path}: payload size does not match header")
    params = PredictorParams(weights, biases, float(header["dropout_rate"]), int(header["seed"]),
                             header.get("meta", {}))
    return params, header
