"""Shared training loop, Adam, and the Bernoulli cross-entropy.

Every method (BUNDL and the baselines) runs through :func:`fit`; they differ
only in how the per-window target is formed and, for NAL, in an extra output
transform. Randomness comes from three independent streams derived from the
config seed: batch order, training dropout masks, and MC dropout masks. CEL
never touches the MC stream, so swapping losses leaves the other two
streams, and hence the trajectory, unchanged.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import model

log = logging.getLogger(__name__)

PROB_EPS = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 30
    batch_size: int = 256
    n_mc: int = 20
    z0: float | None = 0.001  # None means "estimated from MC dropout"
    z1: float | None = None
    label_eps: float = 0.001
    pretrain_margin_s: float = 30.0
    pretrain_epochs: int = 5
    seed: int = 0
    selfadapt_alpha: float = 0.7
    selfadapt_warmup: int = 5
    selfadapt_momentum: float = 0.9
    nal_diag_logit: float = 2.0

    def validate(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.label_eps < 0.5:
            raise ValueError("label_eps must lie in (0, 0.5)")
        if self.max_epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.n_mc < 2:
            raise ValueError("n_mc must be at least 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        for z in (self.z0, self.z1):
            if z is not None and not 0 <= z <= 1:
                raise ValueError("fixed uncertainty must lie in [0, 1]")
        return self

    def to_dict(self):
        d = asdict(self)
        d["z0"] = "estimated" if self.z0 is None else self.z0
        d["z1"] = "estimated" if self.z1 is None else self.z1
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        for k, v in d.items():
            if k not in cls.__dataclass_fields__:
                raise ValueError(f"unknown training option {k!r}")
            if k in ("z0", "z1"):
                kwargs[k] = parse_z(v)
            elif k in _INT_FIELDS:
                kwargs[k] = int(v)
            else:
                kwargs[k] = float(v)
        return cls(**kwargs).validate()


_INT_FIELDS = {"max_epochs", "batch_size", "n_mc", "pretrain_epochs", "seed", "selfadapt_warmup"}


def parse_z(value):
    if value is None:
        return None
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("estimated", "est", "mc", "none"):
            return None
        if v.startswith("fixed:"):
            v = v[len("fixed:"):]
        return float(v)
    return float(value)


def bernoulli_xent(target, prob):
    """Elementwise ``-[t log p + (1-t) log(1-p)]`` and its derivative in ``p``."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(prob, dtype=np.float64)
    loss = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    grad = -t / p + (1.0 - t) / (1.0 - p)
    return loss, grad


def clamp_labels(labels, eps):
    return np.clip(np.asarray(labels, dtype=np.float64), eps, 1.0 - eps)


def stream(seed, *words):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed)] + [int(w) for w in words])))


class Adam:
    """Adam over a fixed list of arrays, updated in place."""

    def __init__(self, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.arrays = arrays
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            a -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class LossMethod:
    """Plain cross-entropy against the (clamped) given labels.

    Subclasses override the hooks; the default implementations make the
    method behave exactly like CEL.
    """

    name = "cel"
    uses_mc = False

    def setup(self, params, data, indices, cfg):
        self.cfg = cfg

    def extra_arrays(self):
        return []

    def targets(self, params, x, p_g, idx, rng_mc):
        return p_g, None

    def output(self, f):
        return f, None

    def extra_grads(self, f, g_out):
        return []

    def after_batch(self, idx, f):
        pass

    def end_epoch(self, epoch):
        pass


def fit(params, data, cfg: TrainConfig, method: LossMethod, epochs=None, indices=None,
        stream_tag=0, log_file=None, progress=None):
    """Run ``epochs`` (default ``cfg.max_epochs``) of minibatch Adam.

    Returns ``(params, history)``; the input params are not modified.
    """
    cfg.validate()
    epochs = cfg.max_epochs if epochs is None else epochs
    params = params.copy()
    indices = np.arange(len(data)) if indices is None else np.asarray(indices)
    history = []
    if epochs == 0 or indices.size == 0:
        return params, history
    rng_order = stream(cfg.seed, stream_tag, 1)
    rng_drop = stream(cfg.seed, stream_tag, 2)
    rng_mc = stream(cfg.seed, stream_tag, 3)
    method.setup(params, data, indices, cfg)
    opt = Adam(params.arrays() + method.extra_arrays(), lr=cfg.learning_rate)
    bs = cfg.batch_size
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = indices[rng_order.permutation(indices.size)]
        loss_sum, z_sum, z_count = 0.0, 0.0, 0
        for b, start in enumerate(range(0, order.size, bs)):
            idx = order[start:start + bs]
            x = data.X[idx]
            p_g = clamp_labels(data.y_train[idx], cfg.label_eps)
            target, z = method.targets(params, x, p_g, idx, rng_mc)
            masks = model.draw_masks(rng_drop, idx.size, params)
            f, cache = model.forward_cached(params, x, masks)
            out, dout = method.output(f)
            loss_vec, dl_dout = bernoulli_xent(target, out)
            loss = float(loss_vec.mean())
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}, batch {b} (windows {idx[:5].tolist()}...)")
            g_out = dl_dout / idx.size
            upstream = g_out if dout is None else g_out * dout
            grads = model.backward(params, cache, upstream)
            opt.step(grads.arrays() + method.extra_grads(f, g_out))
            method.after_batch(idx, f)
            loss_sum += loss * idx.size
            if z is not None:
                z_sum += float(z.sum())
                z_count += z.size
        method.end_epoch(epoch)
        if not params.is_finite():
            raise TrainingError(f"parameters became non-finite in epoch {epoch}")
        rec = {
            "epoch": epoch + 1,
            "mean_loss": loss_sum / order.size,
            "mean_z": z_sum / z_count if z_count else None,
            "wall_time_s": round(time.perf_counter() - t0, 4),
        }
        history.append(rec)
        if log_file is not None:
            log_file.write(json.dumps(rec) + "\n")
            log_file.flush()
        if progress:
            progress(f"[{method.name}] epoch {epoch + 1}/{epochs} loss={rec['mean_loss']:.4f}"
                     + (f" z={rec['mean_z']:.3f}" if rec["mean_z"] is not None else ""))
    return params, history
