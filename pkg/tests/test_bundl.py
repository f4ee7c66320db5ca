import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bundl_lab import bundl, model
from bundl_lab.baselines import CelMethod
from bundl_lab.training import Adam, TrainConfig, clamp_labels, fit, stream

from conftest import make_toy_windows

# frozen from 40-digit mpmath evaluations of the closed forms
Z_ALL_0P9 = 0.468995593589281221
H_0P6 = 0.673011667009256436
H_0P999 = 0.007907255112232087

probs = st.floats(1e-7, 1 - 1e-7)


def _sym_clean(p_g, f, z0, z1):
    p, f_, a, b = sympy.symbols("p f a b")
    expr = p * (b * f_ + p * (1 - b)) + (1 - p) * (a * f_ + p * (1 - a))
    return expr.subs({p: sympy.Rational(p_g), f_: sympy.Rational(f), a: sympy.Rational(z0), b: sympy.Rational(z1)})


# --- uncertainty ------------------------------------------------------------

def test_uncertainty_examples():
    assert bundl.uncertainty_from_samples(np.full((20, 3), 0.5)).z.tolist() == [1.0, 1.0, 1.0]
    assert bundl.uncertainty_from_samples(np.array([[0.0, 1.0]] * 20)).z.max() < 1e-5
    est = bundl.uncertainty_from_samples(np.full((20, 1), 0.9))
    assert est.z[0] == pytest.approx(Z_ALL_0P9, abs=1e-12)
    assert est.n_samples == 20


def test_uncertainty_rejects_single_sample(small_params):
    with pytest.raises(ValueError):
        bundl.uncertainty_from_samples(np.full((1, 3), 0.5))
    with pytest.raises(ValueError):
        bundl.mc_uncertainty(small_params, np.zeros((2, 7)), n_samples=1)


@settings(max_examples=200, deadline=None)
@given(s=arrays(np.float64, (5, 4), elements=probs))
def test_uncertainty_range_and_symmetry(s):
    a = bundl.uncertainty_from_samples(s)
    b = bundl.uncertainty_from_samples(1 - s)
    assert np.all((a.z >= 0) & (a.z <= 1))
    np.testing.assert_allclose(a.z, b.z, atol=1e-12)
    np.testing.assert_allclose(a.mean_pred, np.clip(s, 1e-7, 1 - 1e-7).mean(axis=0))


def test_mc_uncertainty_is_seeded(small_params, rng):
    x = rng.normal(size=(40, 7))
    a = bundl.mc_uncertainty(small_params, x, 8, seed=1)
    b = bundl.mc_uncertainty(small_params, x, 8, seed=1)
    c = bundl.mc_uncertainty(small_params, x, 8, seed=2)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    # batching must not change the draws' distribution shape
    d = bundl.mc_uncertainty(small_params, x, 8, seed=1, batch_size=7)
    assert d.samples.shape == (8, 40)
    assert np.all((d.z >= 0) & (d.z <= 1))


def test_mc_samples_differ_from_deterministic(small_params, rng):
    x = rng.normal(size=(10, 7))
    est = bundl.mc_uncertainty(small_params, x, 20, seed=0)
    assert not np.allclose(est.samples[0], est.samples[1])
    np.testing.assert_allclose(est.mean_pred, est.samples.mean(axis=0))


# --- clean posterior --------------------------------------------------------

def test_clean_param_examples():
    assert bundl.clean_param(1.0, 0.2, 0.0, 0.5) == pytest.approx(0.6, abs=1e-15)
    assert bundl.clean_param(0.0, 0.7, 0.8, 0.0) == pytest.approx(0.56, abs=1e-15)
    assert _sym_clean(1, sympy.Rational(1, 5), 0, sympy.Rational(1, 2)) == sympy.Rational(3, 5)
    assert _sym_clean(0, sympy.Rational(7, 10), sympy.Rational(4, 5), 0) == sympy.Rational(14, 25)


@settings(max_examples=200, deadline=None)
@given(p_g=st.floats(0.001, 0.999), f=st.floats(0, 1))
def test_clean_param_identities(p_g, f):
    assert bundl.clean_param(p_g, f, 0.0, 0.0) == pytest.approx(p_g, abs=1e-12)
    assert bundl.clean_param(1.0, f, 1.0, 1.0) == pytest.approx(np.clip(f, 1e-7, 1 - 1e-7), abs=1e-12)
    assert bundl.clean_param(0.0, f, 1.0, 1.0) == pytest.approx(np.clip(f, 1e-7, 1 - 1e-7), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(p_g=st.sampled_from([0.001, 0.999]) | st.floats(0.001, 0.999), f=st.floats(0, 1),
       z0=st.floats(0, 1), z1=st.floats(0, 1))
def test_clean_param_matches_symbolic_oracle(p_g, f, z0, z1):
    want = float(_sym_clean(p_g, f, z0, z1))
    assert bundl.clean_param(p_g, f, z0, z1) == pytest.approx(min(max(want, 1e-7), 1 - 1e-7), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(p_g=st.floats(0.001, 0.999), f1=st.floats(0, 1), f2=st.floats(0, 1),
       z0=st.floats(1e-3, 1), z1=st.floats(1e-3, 1))
def test_clean_param_monotone_in_mean_prediction(p_g, f1, f2, z0, z1):
    lo, hi = sorted((f1, f2))
    assert bundl.clean_param(p_g, lo, z0, z1) <= bundl.clean_param(p_g, hi, z0, z1) + 1e-15


def test_clean_param_vectorized():
    out = bundl.clean_param(np.array([0.001, 0.999]), np.array([0.9, 0.1]), 0.001, np.array([0.3, 0.3]))
    assert out.shape == (2,)
    assert 0 < out[0] < out[1] < 1


# --- loss -------------------------------------------------------------------

def test_loss_examples():
    assert bundl.bundl_loss(0.6, 0.6)[0] == pytest.approx(H_0P6, abs=1e-12)
    assert bundl.bundl_loss(0.999, 0.999)[0] == pytest.approx(H_0P999, abs=1e-12)
    assert bundl.bundl_loss(0.6, 0.6)[1] == pytest.approx(0.0, abs=1e-12)


def test_loss_reduces_to_cross_entropy_at_zero_uncertainty():
    p_g = clamp_labels(np.array([0, 1, 1, 0]), 0.001)
    f = np.array([0.2, 0.7, 0.4, 0.9])
    target = bundl.clean_param(p_g, np.full(4, 0.5), 0.0, 0.0)
    np.testing.assert_array_equal(bundl.bundl_loss(target, f)[0],
                                  -(p_g * np.log(f) + (1 - p_g) * np.log(1 - f)))


@settings(max_examples=200, deadline=None)
@given(p=st.floats(1e-4, 1 - 1e-4), f=st.floats(1e-3, 1 - 1e-3))
def test_loss_gradient_matches_central_difference(p, f):
    h = 1e-7 * min(f, 1 - f)
    num = (bundl.bundl_loss(p, f + h)[0] - bundl.bundl_loss(p, f - h)[0]) / (2 * h)
    ana = bundl.bundl_loss(p, f)[1]
    assert abs(num - ana) <= 1e-6 * max(abs(ana), 1.0)


def test_resolve_z_and_presets():
    est = np.array([0.2, 0.4])
    assert bundl.resolve_z(0.001, est) == 0.001
    assert bundl.resolve_z(None, est) is est
    assert bundl.Z_PRESETS["over"] == (0.001, None)
    assert bundl.Z_PRESETS["under"] == (None, 0.001)


# --- pretraining ------------------------------------------------------------

def test_pretrain_eligibility_example(toy_windows):
    idx = bundl.eligible_pretrain(toy_windows, 30.0)
    first = idx[toy_windows.rec_index[idx] == 0]
    seizure = first[toy_windows.y_train[first] == 1]
    np.testing.assert_array_equal(seizure, np.arange(130, 170))
    baseline = set(first[toy_windows.y_train[first] == 0].tolist())
    assert baseline.isdisjoint(range(70, 230))
    assert baseline == set(range(70)) | set(range(230, 600))
    assert bundl.eligible_pretrain(toy_windows, 0).size == len(toy_windows)


def test_pretrain_rejects_empty_class():
    data = make_toy_windows(interval=(100, 159))
    params = model.init_params(0, (7, 6, 5, 1))
    with pytest.raises(ValueError, match="empty class"):
        bundl.pretrain(params, data, TrainConfig(pretrain_epochs=1))


def test_pretrain_only_touches_eligible_windows(toy_windows):
    # poisoning every ineligible label must not change the pretrained weights
    cfg = TrainConfig(pretrain_epochs=2, batch_size=64)
    params = model.init_params(0, (7, 6, 5, 1))
    a = bundl.pretrain(params, toy_windows, cfg)
    poisoned = make_toy_windows()
    bad = toy_windows.boundary_dist < 30
    poisoned.y_train[bad] = 1 - poisoned.y_train[bad]
    b = bundl.pretrain(params, poisoned, cfg)
    assert a.equals(b) and not a.equals(params)


# --- training ---------------------------------------------------------------

def test_zero_epochs_returns_input(toy_windows):
    params = model.init_params(0, (7, 6, 5, 1))
    out, hist = bundl.train(params, toy_windows, TrainConfig(max_epochs=0))
    assert out.equals(params) and hist == []


def test_zero_uncertainty_matches_cross_entropy_bitwise(toy_windows):
    params = model.init_params(0, (7, 6, 5, 1))
    cfg = TrainConfig(max_epochs=2, batch_size=128, z0=0.0, z1=0.0, n_mc=4)
    a, ha = fit(params, toy_windows, cfg, bundl.BundlMethod(), stream_tag=1)
    b, hb = fit(params, toy_windows, cfg, CelMethod(), stream_tag=1)
    assert a.equals(b)
    assert [h["mean_loss"] for h in ha] == [h["mean_loss"] for h in hb]


def test_training_is_deterministic(toy_windows):
    params = model.init_params(0, (7, 6, 5, 1))
    cfg = TrainConfig(max_epochs=2, batch_size=128, n_mc=4, seed=5)
    a, ha = bundl.train(params, toy_windows, cfg)
    b, hb = bundl.train(params, toy_windows, cfg)
    assert a.equals(b)
    assert all(0 <= h["mean_z"] <= 1 for h in ha)
    c, _ = bundl.train(params, toy_windows, TrainConfig(max_epochs=2, batch_size=128, n_mc=4, seed=6))
    assert not a.equals(c)


def test_single_step_descends(toy_windows):
    params = model.init_params(0, (7, 6, 5, 1))
    idx = np.arange(64)
    x = toy_windows.X[idx]
    p_g = clamp_labels(toy_windows.y_train[idx], 0.001)
    est = bundl.mc_uncertainty(params, x, 20, seed=0)
    target = bundl.clean_param(p_g, est.mean_pred, 0.001, est.z)
    masks = model.draw_masks(stream(0, 2), 64, params)

    def loss_at(p):
        return float(bundl.bundl_loss(target, model.forward(p, x, masks))[0].mean())

    before = loss_at(params)
    f, cache = model.forward_cached(params, x, masks)
    g = model.backward(params, cache, bundl.bundl_loss(target, f)[1] / 64)
    Adam(params.arrays(), lr=1e-3).step(g.arrays())
    assert loss_at(params) < before


def test_training_log_lines(toy_windows, tmp_path):
    import json

    params = model.init_params(0, (7, 6, 5, 1))
    path = tmp_path / "log.jsonl"
    with open(path, "w") as fh:
        bundl.train(params, toy_windows, TrainConfig(max_epochs=2, batch_size=256, n_mc=3), log_file=fh)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]
    assert set(rows[0]) == {"epoch", "mean_loss", "mean_z", "wall_time_s"}
    assert all(math.isfinite(r["mean_loss"]) for r in rows)
