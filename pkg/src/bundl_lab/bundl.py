"""Uncertainty-aware KL training against noisy labels.

Per window the method draws ``N`` MC-dropout predictions, turns their mean
Bernoulli entropy into an uncertainty ``z`` in ``[0, 1]``, and blends the given
label with the model's own mean prediction into a clean-label parameter
``p_yc``. The network is then fit to ``p_yc`` by Bernoulli cross-entropy, which
has the same gradient as the KL divergence since ``p_yc`` is held constant.

Which side of the label gets an estimated uncertainty encodes the prior on
the noise: over-segmented annotations fix ``z0`` near zero (trust baseline
labels) and estimate ``z1``; under-segmentation does the reverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .training import LossMethod, TrainConfig, bernoulli_xent, fit, stream

PROB_EPS = 1e-7
LN2 = np.log(2.0)

Z_PRESETS = {
    "over": (0.001, None),
    "under": (None, 0.001),
    "symmetric": (None, None),
    "none": (0.0, 0.0),
}


@dataclass
class UncertaintyEstimate:
    mean_pred: np.ndarray
    z: np.ndarray
    samples: np.ndarray  # (n_samples, n_windows)

    @property
    def n_samples(self):
        return self.samples.shape[0]


def uncertainty_from_samples(samples):
    """Mean prediction and normalized self-entropy from ``(N, ...)`` MC samples."""
    f = np.clip(np.asarray(samples, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    if f.shape[0] < 2:
        raise ValueError("need at least 2 MC samples")
    # normalize each sample's entropy before averaging so z(0.5) is exactly 1
    h = -(f * np.log(f) + (1.0 - f) * np.log(1.0 - f)) / LN2
    z = np.clip(h.mean(axis=0), 0.0, 1.0)
    return UncertaintyEstimate(mean_pred=f.mean(axis=0), z=z, samples=f)


def mc_uncertainty(params: model.PredictorParams, features, n_samples=20, seed=0, rng=None,
                   batch_size=4096):
    """MC-dropout uncertainty for each row of ``features``.

    Masks come from ``rng`` if given, else from a stream seeded by ``seed``.
    No gradients are involved; parameters are only read.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    rng = rng if rng is not None else stream(seed, 0xC0FFEE)
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    parts = []
    for i in range(0, x.shape[0], batch_size):
        xb = x[i:i + batch_size]
        masks = model.draw_masks(rng, xb.shape[0], params, n_samples)
        parts.append(model.mc_predictions(params, xb, masks, n_samples))
    samples = np.concatenate(parts, axis=1) if parts else np.empty((n_samples, 0))
    return uncertainty_from_samples(samples)


def clean_param(p_g, f_bar, z0, z1):
    """Clean-label Bernoulli parameter, evaluated term by term as published.

    ``p_g * (z1*f + p_g*(1-z1)) + (1-p_g) * (z0*f + p_g*(1-z0))``, clamped to
    ``[1e-7, 1-1e-7]``.
    """
    p_g = np.asarray(p_g, dtype=np.float64)
    f = np.asarray(f_bar, dtype=np.float64)
    p = p_g * (z1 * f + p_g * (1 - z1)) + (1 - p_g) * (z0 * f + p_g * (1 - z0))
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(p) if p.ndim == 0 else p


def bundl_loss(p_yc, f):
    """Loss against a fixed ``p_yc`` and its derivative in the model output."""
    loss, grad = bernoulli_xent(p_yc, f)
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def resolve_z(z_fixed, z_est):
    return z_est if z_fixed is None else z_fixed


class BundlMethod(LossMethod):
    name = "bundl"
    uses_mc = True

    def targets(self, params, x, p_g, idx, rng_mc):
        est = mc_uncertainty(params, x, self.cfg.n_mc, rng=rng_mc)
        z0 = resolve_z(self.cfg.z0, est.z)
        z1 = resolve_z(self.cfg.z1, est.z)
        return clean_param(p_g, est.mean_pred, z0, z1), est.z


def eligible_pretrain(data, margin_s):
    """Windows whose centre lies at least ``margin_s`` from every noisy boundary."""
    if margin_s <= 0:
        return np.arange(len(data))
    return np.flatnonzero(data.boundary_dist >= margin_s)


def pretrain(params, data, cfg: TrainConfig, indices=None, progress=None):
    """Cross-entropy warm start on windows far from any annotated boundary."""
    idx = eligible_pretrain(data, cfg.pretrain_margin_s)
    if indices is not None:
        idx = np.intersect1d(idx, indices)
    labels = data.y_train[idx]
    if not (labels >= 0.5).any() or not (labels < 0.5).any():
        raise ValueError(
            f"pretraining margin of {cfg.pretrain_margin_s}s leaves an empty class "
            f"({int((labels >= 0.5).sum())} seizure, {int((labels < 0.5).sum())} baseline windows)"
        )
    out, _ = fit(params, data, cfg, LossMethod(), epochs=cfg.pretrain_epochs, indices=idx,
                 stream_tag=0x9E, progress=progress)
    return out


def train(params, data, cfg: TrainConfig, indices=None, log_file=None, progress=None):
    """Main BUNDL training loop starting from (pretrained) ``params``."""
    return fit(params, data, cfg, BundlMethod(), indices=indices, stream_tag=1,
               log_file=log_file, progress=progress)
