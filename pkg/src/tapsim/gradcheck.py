"""Finite-difference verification of the analytic BPTT gradients."""

from __future__ import annotations

import numpy as np

from .gru import GruNetwork, forward_batch, init_gru
from .training import loss_and_gradients

__all__ = ["numerical_gradient", "max_relative_error", "run_gradient_checks"]


def _loss(net: GruNetwork, windows, labels) -> float:
    outputs = forward_batch(net, windows, labels.shape[1])
    diff = outputs - labels
    return float(np.mean(diff * diff))


def numerical_gradient(net: GruNetwork, windows, labels, step: float = 1e-5) -> dict:
    """Central-difference gradient of the training loss for every weight."""
    grads = {}
    for name, arr in net.weights.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            hi = _loss(net, windows, labels)
            flat[i] = original - step
            lo = _loss(net, windows, labels)
            flat[i] = original
            gflat[i] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict) -> float:
    """Worst elementwise relative error between two gradient sets.

    Entries where both gradients vanish are treated as exact matches.
    """
    worst = 0.0
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def run_gradient_checks(step: float = 1e-5, seed: int = 20):
    """Check small network/sequence shapes; returns (label, max rel error) pairs.

    Covers one and two layers, hidden sizes up to 4, and one- and
    two-dimensional inputs with a short window and a two-step decode.
    """
    results = []
    configs = [
        (1, 2, 1),
        (1, 4, 2),
        (2, 2, 1),
        (2, 4, 2),
    ]
    lookback, horizon, batch = 3, 2, 3
    rng = np.random.default_rng(seed)
    for layer_count, hidden_dim, input_dim in configs:
        net = init_gru(seed + layer_count, layer_count, input_dim, hidden_dim, lookback, horizon)
        # Non-trivial weights exercise every path, including biases.
        for name, arr in net.weights.items():
            arr += rng.normal(0.0, 0.3, size=arr.shape)
        windows = rng.uniform(0.0, 1.0, size=(batch, lookback + 1, input_dim))
        labels = rng.uniform(0.0, 1.0, size=(batch, horizon, input_dim))
        _, analytic = loss_and_gradients(net, windows, labels)
        numeric = numerical_gradient(net, windows, labels, step=step)
        err = max_relative_error(analytic, numeric)
        results.append((f"layers={layer_count} hidden={hidden_dim} dim={input_dim}", err))
    return results
