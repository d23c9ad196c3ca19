"""Multi-DoF command trajectories: CSV loading, synthesis, and splitting.

A trace is a slot-indexed sequence of control commands. Each slot carries
one value per dimension, where a dimension is either a bare DoF position
(``signals_per_dof=1``) or a position/velocity/acceleration triple per DoF
(``signals_per_dof=3``, DoF-major column order).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CommandMatrix",
    "TraceDataset",
    "SyntheticSpec",
    "TraceFormatError",
    "load_trace_csv",
    "save_trace_csv",
    "generate_synthetic",
]


class TraceFormatError(ValueError):
    """Raised when a trace file or synthetic spec is malformed."""


@dataclass(frozen=True)
class CommandMatrix:
    """One slot's control signal: a (dof_count, signals_per_dof) value matrix."""

    slot: int
    values: np.ndarray

    def __post_init__(self):
        if self.slot < 0:
            raise ValueError(f"slot must be non-negative, got {self.slot}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] not in (1, 3):
            raise ValueError(f"values must have shape (dof, 1|3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite command values at slot {self.slot}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_vector(cls, slot: int, vector: np.ndarray, signals_per_dof: int) -> "CommandMatrix":
        vec = np.asarray(vector, dtype=float).reshape(-1)
        if vec.size % signals_per_dof != 0:
            raise ValueError(
                f"vector length {vec.size} not divisible by signals_per_dof={signals_per_dof}"
            )
        return cls(slot, vec.reshape(-1, signals_per_dof))

    @property
    def flat(self) -> np.ndarray:
        """The command as a flat vector of length dof_count * signals_per_dof."""
        return self.values.reshape(-1)


@dataclass
class TraceDataset:
    """A (T, D) matrix of commands sampled at ``sample_rate_hz``."""

    samples: np.ndarray
    signals_per_dof: int
    sample_rate_hz: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {self.samples.shape}")
        if self.samples.shape[0] < 2:
            raise TraceFormatError(
                f"dataset needs at least 2 slots, got {self.samples.shape[0]}"
            )
        if self.signals_per_dof not in (1, 3):
            raise ValueError(f"signals_per_dof must be 1 or 3, got {self.signals_per_dof}")
        if self.samples.shape[1] % self.signals_per_dof != 0:
            raise TraceFormatError(
                f"{self.samples.shape[1]} columns not divisible by "
                f"signals_per_dof={self.signals_per_dof}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise TraceFormatError("dataset contains non-finite values")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def dof_count(self) -> int:
        return self.dim // self.signals_per_dof

    @property
    def position_dims(self) -> np.ndarray:
        """Column indices holding positions (every signals_per_dof-th column)."""
        return np.arange(0, self.dim, self.signals_per_dof)

    def command(self, slot: int) -> CommandMatrix:
        return CommandMatrix.from_vector(slot, self.samples[slot], self.signals_per_dof)

    def split(self, fraction: float) -> tuple["TraceDataset", "TraceDataset"]:
        """Split into (head, tail) at round(T * fraction), each at least 2 slots."""
        if not 0.0 < fraction < 1.0:
            raise ValueError(f"fraction must be in (0, 1), got {fraction}")
        cut = int(round(self.length * fraction))
        cut = min(max(cut, 2), self.length - 2)
        head = TraceDataset(self.samples[:cut], self.signals_per_dof, self.sample_rate_hz)
        tail = TraceDataset(self.samples[cut:], self.signals_per_dof, self.sample_rate_hz)
        return head, tail


def load_trace_csv(path, signals_per_dof: int = 1, sample_rate_hz: float = 100.0) -> TraceDataset:
    """Load a trace from CSV: header row, then one row of decimal reals per slot.

    Columns are DoF-major (then pos/vel/acc when ``signals_per_dof=3``).
    Raises :class:`TraceFormatError` naming the offending row/column on
    malformed input, and ``FileNotFoundError`` for a missing file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace file not found: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError(f"{path}: empty file, expected a header row") from None
        width = len(header)
        if width == 0:
            raise TraceFormatError(f"{path}: header row has no columns")
        for i, raw in enumerate(reader, start=1):
            if len(raw) != width:
                raise TraceFormatError(
                    f"{path}: row {i} has {len(raw)} fields, expected {width}"
                )
            parsed = np.empty(width)
            for j, cell in enumerate(raw):
                try:
                    parsed[j] = float(cell)
                except ValueError:
                    raise TraceFormatError(
                        f"{path}: non-numeric value {cell!r} at row {i}, column {j + 1}"
                    ) from None
            rows.append(parsed)
    if len(rows) < 2:
        raise TraceFormatError(f"{path}: found {len(rows)} data rows, need at least 2")
    samples = np.vstack(rows)
    if samples.shape[1] % signals_per_dof != 0:
        raise TraceFormatError(
            f"{path}: {samples.shape[1]} columns not divisible by "
            f"signals_per_dof={signals_per_dof}"
        )
    return TraceDataset(samples, signals_per_dof, sample_rate_hz)


def save_trace_csv(dataset: TraceDataset, path) -> None:
    """Write a trace in the format :func:`load_trace_csv` reads.

    Values are written with ``repr`` so a load/save round trip is exact.
    """
    path = Path(path)
    names = []
    suffixes = [""] if dataset.signals_per_dof == 1 else ["_pos", "_vel", "_acc"]
    for d in range(dataset.dof_count):
        for suffix in suffixes:
            names.append(f"dof{d}{suffix}")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in dataset.samples:
            writer.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for a generated stand-in trajectory.

    ``kind`` selects the profile:

    * ``minimum-jerk-waypoints``: piecewise quintic segments through
      ``waypoints``, a sequence of (slot, per-DoF values). The profile is
      10 tau^3 - 15 tau^4 + 6 tau^5 within each segment, so the trace
      passes exactly through every waypoint and pauses there with zero
      velocity and acceleration. When ``waypoints`` is None a random
      schedule is drawn from ``seed``.
    * ``sinusoid-mixture``: per DoF a sum of ``components`` sinusoids with
      random frequencies/phases, centered at ``offset`` and bounded by
      ``amplitude``. With ``freq_grid_hz`` > 0 frequencies snap to integer
      multiples of the grid, making the signal exactly periodic.
    * ``triangle``: constant-speed sweeps between 0 and 1 with period
      ``period_slots``, phase-staggered across DoF.
    """

    dof_count: int
    duration_slots: int
    kind: str
    seed: int = 0
    signals_per_dof: int = 1
    sample_rate_hz: float = 100.0
    waypoints: tuple = ()
    waypoint_spacing: int = 80
    components: int = 3
    amplitude: float = 0.4
    offset: float = 0.5
    min_freq_hz: float = 0.2
    max_freq_hz: float = 2.0
    freq_grid_hz: float = 0.0
    period_slots: int = 40

    def __post_init__(self):
        if self.duration_slots < 2:
            raise ValueError(f"duration_slots must be >= 2, got {self.duration_slots}")
        if self.dof_count < 1:
            raise ValueError(f"dof_count must be >= 1, got {self.dof_count}")
        if self.kind not in ("minimum-jerk-waypoints", "sinusoid-mixture", "triangle"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")


def _min_jerk_profile(tau: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized minimum-jerk position and its first two tau-derivatives."""
    pos = 10.0 * tau**3 - 15.0 * tau**4 + 6.0 * tau**5
    vel = 30.0 * tau**2 - 60.0 * tau**3 + 30.0 * tau**4
    acc = 60.0 * tau - 180.0 * tau**2 + 120.0 * tau**3
    return pos, vel, acc


def _random_waypoints(spec: SyntheticSpec) -> list[tuple[int, np.ndarray]]:
    rng = np.random.default_rng(spec.seed)
    slots = list(range(0, spec.duration_slots, max(2, spec.waypoint_spacing)))
    if slots[-1] != spec.duration_slots - 1:
        slots.append(spec.duration_slots - 1)
    return [(s, rng.uniform(0.05, 0.95, size=spec.dof_count)) for s in slots]


def _generate_min_jerk(spec: SyntheticSpec) -> np.ndarray:
    if spec.waypoints:
        waypoints = []
        for slot, values in spec.waypoints:
            vals = np.atleast_1d(np.asarray(values, dtype=float))
            if vals.size == 1 and spec.dof_count > 1:
                vals = np.full(spec.dof_count, vals[0])
            if vals.size != spec.dof_count:
                raise TraceFormatError(
                    f"waypoint at slot {slot} has {vals.size} values, "
                    f"expected {spec.dof_count}"
                )
            waypoints.append((int(slot), vals))
    else:
        waypoints = _random_waypoints(spec)
    if len(waypoints) < 2:
        raise TraceFormatError("minimum-jerk generation needs at least 2 waypoints")
    slots = [w[0] for w in waypoints]
    if any(b <= a for a, b in zip(slots, slots[1:])):
        raise TraceFormatError(f"waypoint slots must be strictly increasing, got {slots}")
    if slots[0] < 0 or slots[-1] >= spec.duration_slots:
        raise TraceFormatError(
            f"waypoint slots {slots[0]}..{slots[-1]} outside 0..{spec.duration_slots - 1}"
        )

    dt = 1.0 / spec.sample_rate_hz
    pos = np.empty((spec.duration_slots, spec.dof_count))
    vel = np.zeros_like(pos)
    acc = np.zeros_like(pos)
    pos[: slots[0] + 1] = waypoints[0][1]
    pos[slots[-1] :] = waypoints[-1][1]
    for (s0, v0), (s1, v1) in zip(waypoints, waypoints[1:]):
        span = s1 - s0
        tau = np.arange(span + 1) / span
        p, dp, ddp = _min_jerk_profile(tau)
        seg_dt = span * dt
        delta = (v1 - v0)[None, :]
        pos[s0 : s1 + 1] = v0[None, :] + delta * p[:, None]
        vel[s0 : s1 + 1] = delta * dp[:, None] / seg_dt
        acc[s0 : s1 + 1] = delta * ddp[:, None] / seg_dt**2
    # Segment boundaries have zero velocity/acceleration, so overwrites agree.
    return _assemble(spec, pos, vel, acc)


def _generate_sinusoid(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.duration_slots) / spec.sample_rate_hz
    pos = np.full((spec.duration_slots, spec.dof_count), spec.offset)
    vel = np.zeros_like(pos)
    acc = np.zeros_like(pos)
    for d in range(spec.dof_count):
        if spec.freq_grid_hz > 0:
            lo = int(np.ceil(spec.min_freq_hz / spec.freq_grid_hz))
            hi = int(np.floor(spec.max_freq_hz / spec.freq_grid_hz))
            if hi < lo:
                raise TraceFormatError(
                    f"freq_grid_hz={spec.freq_grid_hz} leaves no multiples in "
                    f"[{spec.min_freq_hz}, {spec.max_freq_hz}]"
                )
            freqs = spec.freq_grid_hz * rng.integers(lo, hi + 1, size=spec.components)
        else:
            freqs = rng.uniform(spec.min_freq_hz, spec.max_freq_hz, size=spec.components)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.components)
        weights = rng.uniform(0.3, 1.0, size=spec.components)
        amps = spec.amplitude * weights / weights.sum()
        for a, f, ph in zip(amps, freqs, phases):
            w = 2.0 * np.pi * f
            pos[:, d] += a * np.sin(w * t + ph)
            vel[:, d] += a * w * np.cos(w * t + ph)
            acc[:, d] -= a * w**2 * np.sin(w * t + ph)
    return _assemble(spec, pos, vel, acc)


def _generate_triangle(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    half = max(2, spec.period_slots // 2)
    slope = 1.0 / half
    n = np.arange(spec.duration_slots)
    pos = np.empty((spec.duration_slots, spec.dof_count))
    for d in range(spec.dof_count):
        phase = int(rng.integers(0, 2 * half))
        saw = (n + phase) % (2 * half)
        pos[:, d] = np.where(saw < half, saw * slope, 2.0 - saw * slope)
    dt = 1.0 / spec.sample_rate_hz
    vel = np.gradient(pos, dt, axis=0)
    acc = np.gradient(vel, dt, axis=0)
    return _assemble(spec, pos, vel, acc)


def _assemble(spec: SyntheticSpec, pos, vel, acc) -> np.ndarray:
    if spec.signals_per_dof == 1:
        return pos
    out = np.empty((spec.duration_slots, spec.dof_count * 3))
    out[:, 0::3] = pos
    out[:, 1::3] = vel
    out[:, 2::3] = acc
    return out


_GENERATORS = {
    "minimum-jerk-waypoints": _generate_min_jerk,
    "sinusoid-mixture": _generate_sinusoid,
    "triangle": _generate_triangle,
}


def generate_synthetic(spec: SyntheticSpec) -> TraceDataset:
    """Generate a deterministic stand-in trajectory from a spec.

    The same spec (including seed) always yields the same dataset.
    """
    samples = _GENERATORS[spec.kind](spec)
    return TraceDataset(samples, spec.signals_per_dof, spec.sample_rate_hz)
