"""Pure-numpy MLP kernels; fallback for the compiled ``_core`` extension.

Layout shared by both backends:

* ``weights[l]`` is ``(fan_in, fan_out)`` and ``biases[l]`` is ``(fan_out,)``;
  the last layer has ``fan_out == 1``.
* Hidden layers use ReLU followed by an (optional) 0/1 keep mask; kept units
  are multiplied by ``scale``, the inverted-dropout factor ``1 / (1 - rate)``.
* The output is a sigmoid clamped to ``[1e-7, 1 - 1e-7]``.
"""
import numpy as np

PROB_EPS = 1e-7


def _sigmoid_clamped(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, PROB_EPS, 1.0 - PROB_EPS)


def forward(weights, biases, x, masks, scale=1.0):
    """Forward pass with optional per-row dropout masks.

    Returns ``(probs, cache)``; ``cache`` feeds :func:`backward`.
    """
    acts = [x]
    gates = []
    a = x
    for layer in range(len(weights) - 1):
        z = a @ weights[layer] + biases[layer]
        active = z > 0
        a = np.where(active, z, 0.0)
        if masks is None or masks[layer] is None:
            gate = active.astype(np.float64)
        else:
            gate = np.where(active & (masks[layer] != 0), scale, 0.0)
            a = a * gate
        acts.append(a)
        gates.append(gate)
    logits = (a @ weights[-1])[:, 0] + biases[-1][0]
    return _sigmoid_clamped(logits), (acts, gates, logits)


def backward(weights, cache, upstream):
    """Gradients of ``sum_i upstream[i] * prob_i`` w.r.t. every weight and bias.

    Rows whose sigmoid sits on the clamp get zero gradient, matching the
    clamped forward map exactly.
    """
    acts, gates, logits = cache
    p = 1.0 / (1.0 + np.exp(-logits))
    live = (p >= PROB_EPS) & (p <= 1.0 - PROB_EPS)
    d = np.where(live, upstream * p * (1.0 - p), 0.0)[:, None]
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ d
        grads_b[layer] = d.sum(axis=0)
        if layer > 0:
            d = (d @ weights[layer].T) * gates[layer - 1]
    return grads_w, grads_b


def mc_samples(weights, biases, x, masks, n_samples, scale=1.0):
    """``(n_samples, rows)`` predictions, one dropout mask set per sample.

    ``masks[l]`` has shape ``(n_samples, rows, width_l)``. The first hidden
    layer is evaluated once since masking happens after its activation.
    """
    if len(weights) == 1:
        probs, _ = forward(weights, biases, x, None)
        return np.tile(probs, (n_samples, 1))
    h1 = np.maximum(x @ weights[0] + biases[0], 0.0)
    a = np.where(masks[0] != 0, h1[None, :, :] * scale, 0.0)
    for layer in range(1, len(weights) - 1):
        z = a @ weights[layer] + biases[layer]
        a = np.where((z > 0) & (masks[layer] != 0), z * scale, 0.0)
    logits = (a @ weights[-1])[..., 0] + biases[-1][0]
    return _sigmoid_clamped(logits)
