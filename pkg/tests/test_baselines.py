import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bundl_lab import baselines, model
from bundl_lab.bundl import BundlMethod
from bundl_lab.training import TrainConfig, bernoulli_xent, clamp_labels, fit

# frozen from a 40-digit mpmath evaluation of -[0.999 ln 0.9 + 0.001 ln 0.1]
CEL_0P999_0P9 = 0.10755774023516252


def test_cel_examples():
    assert baselines.cel_loss(1.0, 0.5)[0] == pytest.approx(math.log(2), abs=1e-15)
    assert baselines.cel_loss(0.999, 0.9)[0] == pytest.approx(CEL_0P999_0P9, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(p=st.floats(1e-6, 1 - 1e-6))
def test_cel_at_own_label_is_entropy(p):
    assert baselines.cel_loss(p, p)[0] == pytest.approx(-(p * math.log(p) + (1 - p) * math.log(1 - p)), rel=1e-12)


def test_selfadapt_examples():
    assert baselines.selfadapt_target(0.999, 0.2, 1.0) == pytest.approx(0.999)
    assert baselines.selfadapt_target(1.0, 0.3, 0.0) == pytest.approx(0.3)
    assert baselines.selfadapt_target(1.0, 0.2, 0.5) == pytest.approx(0.6)


def test_nal_examples():
    f = np.array([0.0, 0.5, 1.0])
    np.testing.assert_allclose(baselines.nal_forward(f, np.diag([50.0, 50.0])), f, atol=1e-15)
    logits = np.log(np.array([[0.9, 0.1], [0.2, 0.8]]))
    assert baselines.nal_forward(0.5, logits) == pytest.approx(0.45, abs=1e-15)
    assert baselines.nal_forward(0.0, logits) == pytest.approx(0.1, abs=1e-15)


def test_make_method():
    assert set(baselines.METHODS) == {"bundl", "cel", "selfadapt", "nal"}
    assert isinstance(baselines.make_method("bundl"), BundlMethod)
    with pytest.raises(ValueError):
        baselines.make_method("coteach")


# --- gradients through the model --------------------------------------------

def _method_loss(method, params, x, target, masks):
    f, cache = model.forward_cached(params, x, masks)
    out, dout = method.output(f)
    loss, dl = bernoulli_xent(target, out)
    g_out = dl / x.shape[0]
    up = g_out if dout is None else g_out * dout
    return float(loss.mean()), model.backward(params, cache, up), method.extra_grads(f, g_out)


@pytest.mark.parametrize("name", ["cel", "selfadapt", "nal", "bundl"])
def test_full_pipeline_gradient(name, toy_windows, rng):
    cfg = TrainConfig()
    params = model.init_params(1, (7, 6, 5, 1))
    # zero biases put fully-dropped rows exactly on a ReLU kink
    for b in params.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    method = baselines.make_method(name)
    method.setup(params, toy_windows, np.arange(len(toy_windows)), cfg)
    if name == "nal":
        method.logits[:] = rng.normal(size=(2, 2))
    idx = np.arange(100, 140)
    x = toy_windows.X[idx]
    p_g = clamp_labels(toy_windows.y_train[idx], cfg.label_eps)
    # the target is a constant for the gradient in every method
    target, _ = method.targets(params, x, p_g, idx, np.random.default_rng(0))
    masks = model.draw_masks(rng, idx.size, params)
    _, grads, extra = _method_loss(method, params, x, target, masks)
    h = 1e-5
    worst = 0.0
    pairs = list(zip(params.arrays(), grads.arrays())) + list(zip(method.extra_arrays(), extra))
    for a, g in pairs:
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = _method_loss(method, params, x, target, masks)[0]
            flat[i] = old - h
            lm = _method_loss(method, params, x, target, masks)[0]
            flat[i] = old
            num = (lp - lm) / (2 * h)
            worst = max(worst, abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-6))
    assert worst < 1e-4


# --- training behaviour -----------------------------------------------------

def test_selfadapt_alpha_one_matches_cel(toy_windows):
    params = model.init_params(0, (7, 6, 5, 1))
    cfg = TrainConfig(max_epochs=3, batch_size=200, selfadapt_alpha=1.0, selfadapt_warmup=1)
    a, _ = fit(params, toy_windows, cfg, baselines.SelfAdaptMethod(), stream_tag=1)
    b, _ = fit(params, toy_windows, cfg, baselines.CelMethod(), stream_tag=1)
    assert a.equals(b)


def test_selfadapt_ema_waits_for_warmup(toy_windows):
    params = model.init_params(0, (7, 6, 5, 1))
    m = baselines.SelfAdaptMethod()
    cfg = TrainConfig(max_epochs=2, batch_size=300, selfadapt_warmup=3)
    fit(params, toy_windows, cfg, m, stream_tag=1)
    np.testing.assert_array_equal(m.ema, clamp_labels(toy_windows.y_train, cfg.label_eps))
    m2 = baselines.SelfAdaptMethod()
    fit(params, toy_windows, TrainConfig(max_epochs=2, batch_size=300, selfadapt_warmup=1), m2, stream_tag=1)
    assert not np.array_equal(m2.ema, clamp_labels(toy_windows.y_train, cfg.label_eps))
    assert np.all((m2.ema >= 0) & (m2.ema <= 1))


def test_selfadapt_ema_update_rule(toy_windows):
    m = baselines.SelfAdaptMethod()
    cfg = TrainConfig(selfadapt_warmup=1)
    m.setup(None, toy_windows, None, cfg)
    start = m.ema.copy()
    m.after_batch(np.array([0, 5]), np.array([0.5, 0.25]))
    m.end_epoch(0)
    assert m.ema[0] == pytest.approx(0.9 * start[0] + 0.1 * 0.5)
    assert m.ema[5] == pytest.approx(0.9 * start[5] + 0.1 * 0.25)
    np.testing.assert_array_equal(m.ema[6:], start[6:])


def test_nal_transition_rows_are_distributions(toy_windows):
    params = model.init_params(0, (7, 6, 5, 1))
    m = baselines.NalMethod()
    out, _ = fit(params, toy_windows, TrainConfig(max_epochs=2, batch_size=200), m, stream_tag=1)
    t = m.transition()
    np.testing.assert_allclose(t.sum(axis=1), 1.0)
    assert not np.allclose(m.logits, np.diag([2.0, 2.0]))
    # inference uses the clean head only
    x = toy_windows.X[:5]
    np.testing.assert_array_equal(model.predict(out, x), model.forward(out, x))


def test_train_model_runs_every_method(toy_windows):
    cfg = TrainConfig(max_epochs=1, pretrain_epochs=1, batch_size=300, n_mc=3)
    for name in baselines.METHODS:
        params, hist, m = baselines.train_model(toy_windows, cfg, name)
        assert params.layer_sizes == (7, 64, 32, 1)
        assert len(hist) == 1 and m.name == name
