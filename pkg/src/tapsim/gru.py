"""Stacked GRU sequence predictor with autoregressive multi-step decoding.

Gate convention, per layer, with input x and previous hidden state h:

    r = sigmoid(Wr x + Ur h + br)
    z = sigmoid(Wz x + Uz h + bz)
    n = tanh(Wn x + Un (r * h) + bn)
    h' = (1 - z) * n + z * h

The top hidden state feeds a sigmoid output layer, so predictions live in
(0, 1). A forward pass starts from zero state, consumes the input window
(encoder phase, readouts discarded), then runs ``horizon`` decode steps
where each step's input is the previous step's readout. The first decode
input is the readout computed after the final encoder step.

Weight files use a fixed binary layout (magic ``TAPW``) so that a
save/load round trip is bit-exact; see :func:`save_weights`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GruNetwork",
    "WeightFormatError",
    "init_gru",
    "save_weights",
    "load_weights",
]

WEIGHT_MAGIC = b"TAPW"
WEIGHT_VERSION = 1

_GATES = ("r", "z", "n")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class WeightFormatError(ValueError):
    """Weight file is corrupt, truncated, or shaped for a different network."""


def weight_layout(layer_count: int, input_dim: int, hidden_dim: int):
    """Ordered (name, shape) pairs defining both memory and file layout."""
    layout = []
    for layer in range(layer_count):
        fan_in = input_dim if layer == 0 else hidden_dim
        for gate in _GATES:
            layout.append((f"l{layer}_W{gate}", (hidden_dim, fan_in)))
            layout.append((f"l{layer}_U{gate}", (hidden_dim, hidden_dim)))
            layout.append((f"l{layer}_b{gate}", (hidden_dim,)))
    layout.append(("out_W", (input_dim, hidden_dim)))
    layout.append(("out_b", (input_dim,)))
    return layout


@dataclass
class GruNetwork:
    """Weight container for the stacked GRU predictor.

    ``lookback`` is the number of past commands preceding the newest one in
    each input window (windows hold lookback + 1 vectors); ``horizon`` is
    the default number of decode steps.
    """

    layer_count: int
    input_dim: int
    hidden_dim: int
    lookback: int
    horizon: int
    weights: dict

    def __post_init__(self):
        expected = weight_layout(self.layer_count, self.input_dim, self.hidden_dim)
        for name, shape in expected:
            arr = self.weights.get(name)
            if arr is None or arr.shape != shape:
                got = None if arr is None else arr.shape
                raise ValueError(f"weight {name}: expected shape {shape}, got {got}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"weight {name} contains non-finite values")

    @property
    def window_size(self) -> int:
        return self.lookback + 1

    def parameter_count(self) -> int:
        return sum(arr.size for arr in self.weights.values())

    def copy(self) -> "GruNetwork":
        return GruNetwork(
            self.layer_count,
            self.input_dim,
            self.hidden_dim,
            self.lookback,
            self.horizon,
            {name: arr.copy() for name, arr in self.weights.items()},
        )

    def copy_weights_from(self, other: "GruNetwork") -> None:
        """Adopt another network's weights as one atomic snapshot swap.

        The fresh weight dict is fully built before a single attribute
        assignment publishes it, so a concurrent reader of ``forward``
        sees either the old or the new weight set, never a mix.
        """
        if (self.layer_count, self.input_dim, self.hidden_dim) != (
            other.layer_count,
            other.input_dim,
            other.hidden_dim,
        ):
            raise ValueError("cannot copy weights between differently shaped networks")
        self.weights = {name: arr.copy() for name, arr in other.weights.items()}

    def forward(self, window, horizon: int | None = None) -> np.ndarray:
        """Predict the next ``horizon`` commands from a (lookback+1, D) window."""
        window = np.asarray(window, dtype=float)
        if window.ndim != 2:
            raise ValueError(f"window must be 2-D, got shape {window.shape}")
        steps = self.horizon if horizon is None else horizon
        out = forward_batch(self, window[None, :, :], steps)
        return out[0]

    def step(self, x, state):
        """Advance all layers one step; returns (top output pre-readout, new state)."""
        new_state = []
        w = self.weights
        for layer in range(self.layer_count):
            p = f"l{layer}_"
            h = state[layer]
            r = _sigmoid(x @ w[p + "Wr"].T + h @ w[p + "Ur"].T + w[p + "br"])
            z = _sigmoid(x @ w[p + "Wz"].T + h @ w[p + "Uz"].T + w[p + "bz"])
            n = np.tanh(x @ w[p + "Wn"].T + (r * h) @ w[p + "Un"].T + w[p + "bn"])
            h_new = (1.0 - z) * n + z * h
            new_state.append(h_new)
            x = h_new
        return x, new_state

    def readout(self, h_top):
        return _sigmoid(h_top @ self.weights["out_W"].T + self.weights["out_b"])


def init_gru(
    seed: int,
    layer_count: int,
    input_dim: int,
    hidden_dim: int,
    lookback: int = 16,
    horizon: int = 5,
) -> GruNetwork:
    """Fresh network with uniform(+-1/sqrt(fan-in)) weights and zero biases.

    Recurrent matrices use fan-in = hidden_dim. Deterministic in the seed.
    """
    if min(layer_count, input_dim, hidden_dim) < 1:
        raise ValueError("layer_count, input_dim, and hidden_dim must all be >= 1")
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_layout(layer_count, input_dim, hidden_dim):
        if name.endswith(("br", "bz", "bn")) or name == "out_b":
            weights[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            weights[name] = rng.uniform(-bound, bound, size=shape)
    return GruNetwork(layer_count, input_dim, hidden_dim, lookback, horizon, weights)


def forward_batch(net: GruNetwork, windows, horizon: int, want_cache: bool = False):
    """Run the encoder/decoder pass over a (B, lookback+1, D) batch.

    Returns (B, horizon, D) predictions, plus per-step caches when
    ``want_cache`` (used by backpropagation through time).
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or windows.shape[2] != net.input_dim:
        raise ValueError(
            f"windows must be (B, {net.window_size}, {net.input_dim}), "
            f"got {windows.shape}"
        )
    if windows.shape[1] != net.window_size:
        raise ValueError(
            f"window holds {windows.shape[1]} vectors, network expects "
            f"{net.window_size}"
        )
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    batch = windows.shape[0]
    encode_steps = net.window_size
    total = encode_steps + horizon
    state = [np.zeros((batch, net.hidden_dim)) for _ in range(net.layer_count)]
    caches = [] if want_cache else None
    outputs = np.empty((batch, horizon, net.input_dim))
    y = None
    w = net.weights
    for k in range(total):
        x = windows[:, k, :] if k < encode_steps else y
        step_layers = []
        for layer in range(net.layer_count):
            p = f"l{layer}_"
            h = state[layer]
            r = _sigmoid(x @ w[p + "Wr"].T + h @ w[p + "Ur"].T + w[p + "br"])
            z = _sigmoid(x @ w[p + "Wz"].T + h @ w[p + "Uz"].T + w[p + "bz"])
            n = np.tanh(x @ w[p + "Wn"].T + (r * h) @ w[p + "Un"].T + w[p + "bn"])
            h_new = (1.0 - z) * n + z * h
            if want_cache:
                step_layers.append({"x": x, "h_prev": h, "r": r, "z": z, "n": n})
            state[layer] = h_new
            x = h_new
        if k >= encode_steps - 1:
            y = _sigmoid(state[-1] @ w["out_W"].T + w["out_b"])
            if k >= encode_steps:
                outputs[:, k - encode_steps, :] = y
        if want_cache:
            caches.append({"layers": step_layers, "h_top": state[-1], "y": y})
    if want_cache:
        return outputs, caches
    return outputs


def save_weights(net: GruNetwork, path) -> None:
    """Serialize a network: TAPW magic, version, dims, then raw float64 arrays."""
    path = Path(path)
    header = WEIGHT_MAGIC + struct.pack(
        "<6I",
        WEIGHT_VERSION,
        net.layer_count,
        net.input_dim,
        net.hidden_dim,
        net.lookback,
        net.horizon,
    )
    with path.open("wb") as fh:
        fh.write(header)
        for _, arr in _ordered_weights(net):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(
    path,
    expect_input_dim: int | None = None,
    expect_hidden_dim: int | None = None,
) -> GruNetwork:
    """Load a TAPW weight file; inverse of :func:`save_weights`, bit-exact.

    Optional ``expect_*`` arguments reject files whose declared dimensions
    do not match the caller's context.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != WEIGHT_MAGIC:
        raise WeightFormatError(f"{path}: not a TAPW weight file (bad magic bytes)")
    if len(data) < 28:
        raise WeightFormatError(f"{path}: truncated header")
    version, layers, input_dim, hidden, lookback, horizon = struct.unpack(
        "<6I", data[4:28]
    )
    if version != WEIGHT_VERSION:
        raise WeightFormatError(
            f"{path}: unsupported format version {version}, expected {WEIGHT_VERSION}"
        )
    if min(layers, input_dim, hidden) < 1:
        raise WeightFormatError(f"{path}: invalid dimensions in header")
    if expect_input_dim is not None and input_dim != expect_input_dim:
        raise WeightFormatError(
            f"{path}: file declares input_dim={input_dim}, context expects "
            f"{expect_input_dim}"
        )
    if expect_hidden_dim is not None and hidden != expect_hidden_dim:
        raise WeightFormatError(
            f"{path}: file declares hidden_dim={hidden}, context expects "
            f"{expect_hidden_dim}"
        )
    offset = 28
    weights = {}
    for name, shape in weight_layout(layers, input_dim, hidden):
        nbytes = int(np.prod(shape)) * 8
        chunk = data[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise WeightFormatError(f"{path}: truncated file while reading {name}")
        weights[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise WeightFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return GruNetwork(layers, input_dim, hidden, lookback, horizon, weights)


def _ordered_weights(net: GruNetwork):
    for name, _ in weight_layout(net.layer_count, net.input_dim, net.hidden_dim):
        yield name, net.weights[name]
