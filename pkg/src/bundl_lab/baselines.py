"""Comparison strategies: plain cross-entropy, SelfAdapt soft targets, and NAL.

All three share :func:`bundl_lab.training.fit` with BUNDL so an experiment
only switches the ``method`` name.
"""
from __future__ import annotations

import numpy as np

from .bundl import BundlMethod, pretrain
from .training import LossMethod, bernoulli_xent, fit


def cel_loss(p_g, f):
    loss, grad = bernoulli_xent(p_g, f)
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def selfadapt_target(p_g, ema, alpha_mix):
    return alpha_mix * np.asarray(p_g, dtype=np.float64) + (1.0 - alpha_mix) * np.asarray(ema, dtype=np.float64)


def _softmax_rows(logits):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def nal_forward(f, transition_logits):
    """Noisy-label probability through the 2x2 transition (rows = clean class)."""
    t = _softmax_rows(np.asarray(transition_logits, dtype=np.float64))
    f = np.asarray(f, dtype=np.float64)
    return f * t[1, 1] + (1.0 - f) * t[0, 1]


class CelMethod(LossMethod):
    name = "cel"


class SelfAdaptMethod(LossMethod):
    """Soft targets mixing the given label with an EMA of past predictions."""

    name = "selfadapt"

    def setup(self, params, data, indices, cfg):
        super().setup(params, data, indices, cfg)
        from .training import clamp_labels

        self.ema = clamp_labels(data.y_train, cfg.label_eps)
        self.pending = np.full(len(data), np.nan)
        self.epoch = 0

    def targets(self, params, x, p_g, idx, rng_mc):
        return selfadapt_target(p_g, self.ema[idx], self.cfg.selfadapt_alpha), None

    def after_batch(self, idx, f):
        self.pending[idx] = f

    def end_epoch(self, epoch):
        # EMA stays at the given labels until warm-up is over
        if epoch + 1 >= self.cfg.selfadapt_warmup:
            seen = ~np.isnan(self.pending)
            mom = self.cfg.selfadapt_momentum
            self.ema[seen] = mom * self.ema[seen] + (1.0 - mom) * self.pending[seen]
        self.pending[:] = np.nan


class NalMethod(LossMethod):
    """Simple noise adaptation layer: input-independent 2x2 transition on top."""

    name = "nal"

    def setup(self, params, data, indices, cfg):
        super().setup(params, data, indices, cfg)
        self.logits = np.diag([cfg.nal_diag_logit, cfg.nal_diag_logit]).astype(np.float64)

    def extra_arrays(self):
        return [self.logits]

    def output(self, f):
        t = _softmax_rows(self.logits)
        return f * t[1, 1] + (1.0 - f) * t[0, 1], np.full_like(f, t[1, 1] - t[0, 1])

    def extra_grads(self, f, g_out):
        t = _softmax_rows(self.logits)
        d_t11 = float(np.sum(g_out * f))
        d_t01 = float(np.sum(g_out * (1.0 - f)))
        grad = np.zeros_like(self.logits)
        # d softmax_r[1] / d logit_r[j] = t[r,1] (delta_1j - t[r,j])
        for r, d in ((1, d_t11), (0, d_t01)):
            grad[r] = d * t[r, 1] * (np.array([0.0, 1.0]) - t[r])
        return [grad]

    def transition(self):
        return _softmax_rows(self.logits)


METHODS = {
    "bundl": BundlMethod,
    "cel": CelMethod,
    "selfadapt": SelfAdaptMethod,
    "nal": NalMethod,
}


def make_method(name):
    try:
        return METHODS[name]()
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None


def train(params, data, cfg, method="cel", indices=None, log_file=None, progress=None):
    """Same contract as :func:`bundl_lab.bundl.train` for any registered method."""
    m = make_method(method) if isinstance(method, str) else method
    return fit(params, data, cfg, m, indices=indices, stream_tag=1, log_file=log_file, progress=progress)


def train_model(data, cfg, method="bundl", indices=None, init_seed=None, log_file=None, progress=None):
    """init -> pretrain -> method training. Returns ``(params, history, method_obj)``."""
    from .model import init_params

    params = init_params(cfg.seed if init_seed is None else init_seed, (data.X.shape[1], 64, 32, 1))
    params = pretrain(params, data, cfg, indices=indices, progress=progress)
    m = make_method(method) if isinstance(method, str) else method
    params, history = fit(params, data, cfg, m, indices=indices, stream_tag=1,
                          log_file=log_file, progress=progress)
    return params, history, m
