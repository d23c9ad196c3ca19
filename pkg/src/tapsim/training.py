"""Training machinery for the long-term predictor.

The serving ("generation") network is never touched by gradient updates;
a structurally identical "evaluation" twin trains on replayed samples and
its weights are promoted to the generation network only once it measures
better on held-out validation windows. Training runs free (no teacher
forcing): the loss is taken on the same autoregressive decode the engine
uses at inference time, and gradients flow through the output-to-input
feedback path.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .ar import ArPredictor
from .gru import GruNetwork, forward_batch, init_gru

__all__ = [
    "TrainingDivergedError",
    "AdamOptimizer",
    "TrainingBuffer",
    "PredictorPair",
    "GruForecaster",
    "OnlineTrainer",
    "loss_and_gradients",
    "evaluate_avg_ae",
    "evaluate_ar_avg_ae",
    "make_samples",
    "clip_gradients",
]


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; reduce the learning rate or re-initialize."""


def loss_and_gradients(net: GruNetwork, windows, labels):
    """Mean-squared-error loss and its gradient for every weight.

    ``windows`` is (B, lookback+1, D) and ``labels`` is (B, horizon, D).
    The loss averages over batch, decode steps, and dimensions. The
    backward pass walks the unrolled sequence in reverse, including the
    path where each decode output becomes the next step's input.
    """
    windows = np.asarray(windows, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if labels.ndim != 3 or labels.shape[2] != net.input_dim:
        raise ValueError(f"labels must be (B, horizon, {net.input_dim}), got {labels.shape}")
    horizon = labels.shape[1]
    outputs, caches = forward_batch(net, windows, horizon, want_cache=True)
    diff = outputs - labels
    loss = float(np.mean(diff * diff))

    batch = windows.shape[0]
    encode_steps = net.window_size
    total = encode_steps + horizon
    w = net.weights
    grads = {name: np.zeros_like(arr) for name, arr in w.items()}
    d_outputs = 2.0 * diff / diff.size
    dh_next = [np.zeros((batch, net.hidden_dim)) for _ in range(net.layer_count)]
    dy_feedback = None  # gradient w.r.t. the readout consumed by the step above

    for k in reversed(range(total)):
        cache = caches[k]
        dy = None
        if k >= encode_steps:
            dy = d_outputs[:, k - encode_steps, :].copy()
        if dy_feedback is not None:
            dy = dy_feedback if dy is None else dy + dy_feedback
        dy_feedback = None

        dabove = np.zeros((batch, net.hidden_dim))
        if dy is not None:
            y = cache["y"]
            dpre = dy * y * (1.0 - y)
            grads["out_W"] += dpre.T @ cache["h_top"]
            grads["out_b"] += dpre.sum(axis=0)
            dabove = dpre @ w["out_W"]

        for layer in reversed(range(net.layer_count)):
            c = cache["layers"][layer]
            p = f"l{layer}_"
            dh = dh_next[layer] + dabove
            dz = dh * (c["h_prev"] - c["n"])
            dn = dh * (1.0 - c["z"])
            dh_prev = dh * c["z"]

            dn_pre = dn * (1.0 - c["n"] * c["n"])
            grads[p + "Wn"] += dn_pre.T @ c["x"]
            grads[p + "Un"] += dn_pre.T @ (c["r"] * c["h_prev"])
            grads[p + "bn"] += dn_pre.sum(axis=0)
            d_rh = dn_pre @ w[p + "Un"]
            dr = d_rh * c["h_prev"]
            dh_prev = dh_prev + d_rh * c["r"]

            dz_pre = dz * c["z"] * (1.0 - c["z"])
            grads[p + "Wz"] += dz_pre.T @ c["x"]
            grads[p + "Uz"] += dz_pre.T @ c["h_prev"]
            grads[p + "bz"] += dz_pre.sum(axis=0)
            dh_prev = dh_prev + dz_pre @ w[p + "Uz"]

            dr_pre = dr * c["r"] * (1.0 - c["r"])
            grads[p + "Wr"] += dr_pre.T @ c["x"]
            grads[p + "Ur"] += dr_pre.T @ c["h_prev"]
            grads[p + "br"] += dr_pre.sum(axis=0)
            dh_prev = dh_prev + dr_pre @ w[p + "Ur"]

            dh_next[layer] = dh_prev
            dabove = dn_pre @ w[p + "Wn"] + dz_pre @ w[p + "Wz"] + dr_pre @ w[p + "Wr"]

        if k >= encode_steps:
            dy_feedback = dabove  # this step's input was the previous readout

    return loss, grads


def clip_gradients(grads: dict, max_norm: float = 5.0) -> float:
    """Scale all gradients in place to a global norm cap; returns the raw norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class AdamOptimizer:
    """Adaptive-moment gradient descent with bias correction."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    step_count: int = field(default=0, init=False)
    _m: dict = field(default_factory=dict, init=False, repr=False)
    _v: dict = field(default_factory=dict, init=False, repr=False)

    def apply(self, weights: dict, grads: dict) -> None:
        clip_gradients(grads, self.clip_norm)
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            weights[name] -= self.learning_rate * (m / bias1) / (
                np.sqrt(v / bias2) + self.epsilon
            )


class TrainingBuffer:
    """Ring buffer of (window, label) replay samples with a held-out tail.

    The newest ``validation_fraction`` of stored samples form the
    validation subset; batches are drawn from the remainder.
    """

    def __init__(self, capacity: int = 4096, validation_fraction: float = 0.1):
        if capacity < 2:
            raise ValueError(f"capacity must be >= 2, got {capacity}")
        if not 0.0 < validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must be in (0, 1), got {validation_fraction}")
        self.capacity = capacity
        self.validation_fraction = validation_fraction
        self._samples = deque(maxlen=capacity)

    def append(self, window, label) -> None:
        window = np.asarray(window, dtype=float)
        label = np.asarray(label, dtype=float)
        if window.ndim != 2 or label.ndim != 2 or window.shape[1] != label.shape[1]:
            raise ValueError(
                f"inconsistent sample shapes {window.shape} / {label.shape}"
            )
        lo = min(window.min(), label.min())
        hi = max(window.max(), label.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"sample values outside [0, 1]: range [{lo}, {hi}]")
        self._samples.append((window, label))

    def __len__(self) -> int:
        return len(self._samples)

    def _split_point(self) -> int:
        n = len(self._samples)
        n_val = int(np.ceil(n * self.validation_fraction))
        return n - min(n_val, n - 1) if n > 1 else n

    @property
    def validation(self) -> list:
        return list(self._samples)[self._split_point() :]

    @property
    def training_size(self) -> int:
        return self._split_point()

    def sample_batch(self, rng: np.random.Generator, size: int):
        """Draw a (windows, labels) batch from the training portion."""
        if len(self._samples) == 0:
            raise ValueError("cannot sample from an empty buffer")
        pool = self._split_point()
        if pool == 0:
            pool = len(self._samples)
        idx = rng.integers(0, pool, size=size)
        items = list(self._samples)
        windows = np.stack([items[i][0] for i in idx])
        labels = np.stack([items[i][1] for i in idx])
        return windows, labels


def make_samples(series, lookback: int, horizon: int):
    """Slide over a (T, D) series producing stacked (window, label) arrays."""
    series = np.asarray(series, dtype=float)
    count = series.shape[0] - lookback - horizon
    if count < 1:
        raise ValueError(
            f"series of {series.shape[0]} slots too short for lookback={lookback}, "
            f"horizon={horizon}"
        )
    windows = np.stack([series[t : t + lookback + 1] for t in range(count)])
    labels = np.stack(
        [series[t + lookback + 1 : t + lookback + 1 + horizon] for t in range(count)]
    )
    return windows, labels


def _stack_samples(samples):
    windows = np.stack([s[0] for s in samples])
    labels = np.stack([s[1] for s in samples])
    return windows, labels


def evaluate_avg_ae(net: GruNetwork, samples) -> float:
    """Average absolute error of the free-running decode over a sample set."""
    if isinstance(samples, tuple):
        windows, labels = samples
    else:
        if not samples:
            raise ValueError("validation set is empty")
        windows, labels = _stack_samples(samples)
    outputs = forward_batch(net, windows, labels.shape[1])
    return float(np.mean(np.abs(outputs - labels)))


def evaluate_ar_avg_ae(samples, order: int = 3, ridge: float = 1e-6) -> float:
    """Average absolute error of recursive AR forecasts on the same samples.

    Each sample's window gets a fresh fit, matching how the engine refits
    on every receipt.
    """
    if isinstance(samples, tuple):
        windows, labels = samples
    else:
        if not samples:
            raise ValueError("validation set is empty")
        windows, labels = _stack_samples(samples)
    total = 0.0
    for window, label in zip(windows, labels):
        model = ArPredictor(order=order, ridge=ridge).fit(window)
        pred = model.predict(window[-order:], steps=label.shape[0])
        total += float(np.mean(np.abs(pred - label)))
    return total / len(windows)


class PredictorPair:
    """Serving network plus its training twin and optimizer.

    Only the evaluation network is mutated by :meth:`train_step`; the
    generation network changes solely through :meth:`maybe_promote`, which
    swaps in a full copy of the evaluation weights once they validate
    strictly better.
    """

    def __init__(self, generation: GruNetwork, optimizer: AdamOptimizer | None = None):
        self.generation = generation
        self.evaluation = generation.copy()
        self.optimizer = optimizer if optimizer is not None else AdamOptimizer()
        self.generation_val_ae: float | None = None
        self.evaluation_val_ae: float | None = None

    def train_step(self, windows, labels) -> float:
        loss, grads = loss_and_gradients(self.evaluation, windows, labels)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite training loss {loss}; reduce the learning rate"
            )
        self.optimizer.apply(self.evaluation.weights, grads)
        return loss

    def evaluate(self, samples) -> tuple[float, float]:
        """Measure both networks on the same validation samples."""
        self.generation_val_ae = evaluate_avg_ae(self.generation, samples)
        self.evaluation_val_ae = evaluate_avg_ae(self.evaluation, samples)
        return self.generation_val_ae, self.evaluation_val_ae

    def maybe_promote(self) -> bool:
        """Copy evaluation weights into the generation network if strictly better."""
        if self.generation_val_ae is None or self.evaluation_val_ae is None:
            raise RuntimeError("call evaluate() before maybe_promote()")
        if self.evaluation_val_ae < self.generation_val_ae:
            self.generation.copy_weights_from(self.evaluation)
            self.generation_val_ae = self.evaluation_val_ae
            return True
        return False


class GruForecaster(BaseEstimator):
    """Offline pre-trainer with a fit/predict surface.

    ``fit`` consumes a normalized (T, D) series, builds sliding replay
    samples, trains the evaluation network, and keeps the best-validating
    weights in ``network_``.
    """

    def __init__(
        self,
        layer_count: int = 2,
        hidden_dim: int = 64,
        lookback: int = 16,
        horizon: int = 5,
        learning_rate: float = 1e-3,
        batch_size: int = 32,
        train_steps: int = 2000,
        eval_every: int = 100,
        validation_fraction: float = 0.1,
        buffer_capacity: int = 4096,
        clip_norm: float = 5.0,
        seed: int = 0,
    ):
        self.layer_count = layer_count
        self.hidden_dim = hidden_dim
        self.lookback = lookback
        self.horizon = horizon
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.train_steps = train_steps
        self.eval_every = eval_every
        self.validation_fraction = validation_fraction
        self.buffer_capacity = buffer_capacity
        self.clip_norm = clip_norm
        self.seed = seed

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        rng = np.random.default_rng(self.seed)
        windows, labels = make_samples(X, self.lookback, self.horizon)
        buffer = TrainingBuffer(self.buffer_capacity, self.validation_fraction)
        for win, lab in zip(windows, labels):
            buffer.append(win, lab)
        net = init_gru(
            self.seed,
            self.layer_count,
            X.shape[1],
            self.hidden_dim,
            self.lookback,
            self.horizon,
        )
        optimizer = AdamOptimizer(learning_rate=self.learning_rate, clip_norm=self.clip_norm)
        pair = PredictorPair(net, optimizer)
        validation = _stack_samples(buffer.validation)
        losses = []
        for step in range(1, self.train_steps + 1):
            batch = buffer.sample_batch(rng, self.batch_size)
            losses.append(pair.train_step(*batch))
            if step % self.eval_every == 0 or step == self.train_steps:
                pair.evaluate(validation)
                pair.maybe_promote()
        self.pair_ = pair
        self.network_ = pair.generation
        self.validation_ae_ = pair.generation_val_ae
        self.loss_history_ = losses
        return self

    def predict(self, window):
        if not hasattr(self, "network_"):
            raise RuntimeError("GruForecaster is not fitted; call fit(series) first")
        return self.network_.forward(window)


class OnlineTrainer:
    """Deterministic single-threaded online bootstrap.

    Collects received commands, emits replay samples whenever a contiguous
    run of slots completes one, trains the evaluation network a fixed
    number of steps per slot, and periodically re-measures both the
    long-term networks and the short-term AR baseline on the buffer's
    validation tail. The simulator reads ``short_term_val_ae`` and
    ``long_term_val_ae`` to drive engine mode switching.
    """

    def __init__(
        self,
        pair: PredictorPair,
        *,
        ar_order: int = 3,
        ar_ridge: float = 1e-6,
        batch_size: int = 16,
        buffer_capacity: int = 4096,
        validation_fraction: float = 0.1,
        steps_per_slot: int = 1,
        eval_every: int = 50,
        min_validation: int = 4,
        seed: int = 0,
    ):
        self.pair = pair
        self.ar_order = ar_order
        self.ar_ridge = ar_ridge
        self.batch_size = batch_size
        self.steps_per_slot = steps_per_slot
        self.eval_every = eval_every
        self.min_validation = min_validation
        self.buffer = TrainingBuffer(buffer_capacity, validation_fraction)
        self.rng = np.random.default_rng(seed)
        self.total_steps = 0
        self.short_term_val_ae: float | None = None
        self.long_term_val_ae: float | None = None
        self._seen: dict[int, np.ndarray] = {}
        self._emitted: set[int] = set()
        self._max_slot = -1

    @property
    def _span(self) -> int:
        return self.pair.generation.lookback + self.pair.generation.horizon

    def observe(self, slot: int, vector) -> None:
        """Record a received command and emit any replay samples it completes."""
        if slot in self._seen:
            return
        self._seen[slot] = np.asarray(vector, dtype=float)
        self._max_slot = max(self._max_slot, slot)
        span = self._span
        lookback = self.pair.generation.lookback
        for end in range(slot, slot + span + 1):
            if end not in self._seen or end in self._emitted:
                continue
            lo = end - span
            if lo < 0:
                continue
            if all(s in self._seen for s in range(lo, end + 1)):
                window = np.stack([self._seen[s] for s in range(lo, lo + lookback + 1)])
                label = np.stack([self._seen[s] for s in range(lo + lookback + 1, end + 1)])
                self.buffer.append(window, label)
                self._emitted.add(end)
        floor = self._max_slot - 2 * span
        for s in [s for s in self._seen if s < floor]:
            del self._seen[s]
        self._emitted = {s for s in self._emitted if s >= floor}

    def train_slot(self) -> None:
        """Run this slot's training quota, evaluating on schedule."""
        if self.buffer.training_size < 1:
            return
        for _ in range(self.steps_per_slot):
            batch = self.buffer.sample_batch(self.rng, self.batch_size)
            self.pair.train_step(*batch)
            self.total_steps += 1
            if self.total_steps % self.eval_every == 0:
                self.evaluate_now()

    def evaluate_now(self) -> bool:
        """Refresh validation accuracies; returns True if anything was measured."""
        validation = self.buffer.validation
        if len(validation) < self.min_validation:
            return False
        stacked = _stack_samples(validation)
        self.pair.evaluate(stacked)
        self.pair.maybe_promote()
        self.long_term_val_ae = self.pair.generation_val_ae
        self.short_term_val_ae = evaluate_ar_avg_ae(
            stacked, order=self.ar_order, ridge=self.ar_ridge
        )
        return True
