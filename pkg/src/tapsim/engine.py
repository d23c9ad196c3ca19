"""Edge support engine: routes actuation between received and predicted commands.

Per slot, after channel deliveries are ingested, the engine picks what the
actuator executes:

* a command received on time this slot (source ``actual``),
* the short-term AR forecast on the first slot of a gap,
* the cached long-term prediction block deeper into a gap (TAP mode),
* or the last actuated command once the horizon is exhausted.

The prediction block computed at the last receipt covers the following
``horizon`` slots and is discarded the moment a fresh command arrives.
Late-but-kept deliveries only enrich the history buffer feeding both
predictors.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .ar import ArPredictor
from .channel import ChannelError
from .gru import GruNetwork
from .trace import CommandMatrix

__all__ = [
    "Strategy",
    "Mode",
    "Source",
    "EngineConfig",
    "ActuationDecision",
    "SupportEngine",
    "commands_per_packet",
    "bundle_commands",
]


class Strategy(str, Enum):
    """What the slave domain falls back on when commands go missing."""

    NON_PREDICTIVE = "NonPredictive"
    SINGLE_PREDICTIVE = "SinglePredictive"
    TAP = "TAP"


class Mode(str, Enum):
    SINGLE_PREDICTION = "SinglePrediction"
    TAP = "TAP"


class Source(str, Enum):
    ACTUAL = "Actual"
    SHORT_TERM = "ShortTerm"
    LONG_TERM = "LongTerm"
    HOLD_LAST = "HoldLast"


@dataclass(frozen=True)
class EngineConfig:
    """Support-engine parameters.

    ``lookback`` past commands plus the newest form each predictor window;
    ``horizon`` bounds how many slots predictions may cover. ``mode_policy``
    "offline" starts straight in TAP mode (weights assumed pre-trained),
    "online" starts in single-prediction mode until the long-term
    predictor qualifies.
    """

    lookback: int = 16
    horizon: int = 5
    ar_order: int = 3
    ar_ridge: float = 1e-6
    sample_rate_hz: float = 100.0
    transmit_rate_hz: float = 100.0
    bundling: bool = False
    mode_policy: str = "offline"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.lookback < max(self.ar_order + 2, 2):
            raise ValueError(
                f"lookback={self.lookback} too small; need at least "
                f"max(ar_order + 2, 2) = {max(self.ar_order + 2, 2)}"
            )
        if self.transmit_rate_hz <= 0 or self.sample_rate_hz < self.transmit_rate_hz:
            raise ValueError(
                f"need sample_rate_hz >= transmit_rate_hz > 0, got "
                f"{self.sample_rate_hz} / {self.transmit_rate_hz}"
            )
        if self.mode_policy not in ("offline", "online"):
            raise ValueError(f"unknown mode_policy {self.mode_policy!r}")


@dataclass(frozen=True)
class ActuationDecision:
    command: np.ndarray
    source: Source
    slots_since_receipt: int


def commands_per_packet(sample_rate_hz: float, transmit_rate_hz: float) -> int:
    """Bundle size: ceil(sampling rate / transmission rate)."""
    if sample_rate_hz <= 0 or transmit_rate_hz <= 0:
        raise ValueError(
            f"rates must be positive, got {sample_rate_hz} / {transmit_rate_hz}"
        )
    return math.ceil(sample_rate_hz / transmit_rate_hz)


def bundle_commands(commands, bundle_size: int) -> tuple:
    """Validate and freeze a bundle payload of consecutive-slot commands.

    On receipt only the newest command is an actuation candidate; the
    older ones are history fodder for the predictors.
    """
    commands = tuple(commands)
    if len(commands) != bundle_size:
        raise ChannelError(
            f"bundle has {len(commands)} commands, expected {bundle_size}"
        )
    slots = [cm.slot for cm in commands]
    if any(b != a + 1 for a, b in zip(slots, slots[1:])):
        raise ChannelError(f"bundle slots {slots} are not consecutive")
    return commands


class SupportEngine:
    """Single-owner per-slot decision state machine.

    Call :meth:`ingest` for each delivery of the current slot, then
    :meth:`decide` exactly once per slot.
    """

    def __init__(
        self,
        config: EngineConfig,
        strategy: Strategy = Strategy.TAP,
        gru: GruNetwork | None = None,
        initial_command: np.ndarray | None = None,
    ):
        self.config = config
        self.strategy = Strategy(strategy)
        self.gru = gru
        if self.strategy is Strategy.TAP:
            self.mode = (
                Mode.TAP if config.mode_policy == "offline" else Mode.SINGLE_PREDICTION
            )
        else:
            self.mode = Mode.SINGLE_PREDICTION
        self._history_slots: list[int] = []
        self._history: dict[int, np.ndarray] = {}
        self._capacity = config.lookback + 2 * config.horizon + 8
        self.slots_since_receipt = 0
        self.cached_block: np.ndarray | None = None
        self._block_base: int | None = None
        self.last_actuated = (
            None if initial_command is None else np.asarray(initial_command, dtype=float)
        )
        self.holdlast_fallbacks = 0
        self._ar: ArPredictor | None = None
        self._candidate: np.ndarray | None = None
        self._fresh_slot: int | None = None
        self._last_decided: int | None = None

    # -- history ---------------------------------------------------------

    def _remember(self, command: CommandMatrix) -> None:
        slot = command.slot
        if slot in self._history:
            return
        bisect.insort(self._history_slots, slot)
        self._history[slot] = command.flat
        while len(self._history_slots) > self._capacity:
            dropped = self._history_slots.pop(0)
            del self._history[dropped]

    def history_window(self, length: int) -> np.ndarray | None:
        """The last ``length`` slots ending at the newest received command.

        Returns None until at least ``length`` commands were received.
        Received slots need not be contiguous (losses, in-flight packets,
        late arrivals); interior holes on the slot grid are filled by
        linear interpolation between the bracketing received commands so
        the predictors always see an evenly sampled window.
        """
        if len(self._history_slots) < length:
            return None
        newest = self._history_slots[-1]
        tail = self._history_slots[-length:]
        if tail[0] == newest - length + 1:
            return np.stack([self._history[s] for s in tail])  # contiguous
        grid = np.arange(newest - length + 1, newest + 1)
        known = np.asarray(self._history_slots, dtype=float)
        values = np.stack([self._history[s] for s in self._history_slots])
        window = np.empty((length, values.shape[1]))
        for j, col in enumerate(values.T):
            window[:, j] = np.interp(grid, known, col)
        return window

    @property
    def history_size(self) -> int:
        return len(self._history_slots)

    @property
    def history_slots(self) -> list[int]:
        return list(self._history_slots)

    # -- per-slot protocol -------------------------------------------------

    def ingest(self, payload, on_time: bool, now: int) -> None:
        """Absorb one delivery: history always grows, freshness only if on time."""
        for command in payload:
            self._remember(command)
        if not on_time:
            return
        self._fresh_slot = now
        self._candidate = payload[-1].flat
        self.slots_since_receipt = 0
        self.cached_block = None
        self._block_base = None
        if self.strategy is Strategy.NON_PREDICTIVE:
            return
        self._refit_short_term()
        if self.strategy is Strategy.TAP and self.mode is Mode.TAP:
            self._cache_block()

    def _refit_short_term(self) -> None:
        window = self.history_window(
            min(self.config.lookback + 1, self.history_size)
        )
        if window is None or window.shape[0] < self.config.ar_order + 2:
            self._ar = None
            return
        self._ar = ArPredictor(self.config.ar_order, self.config.ar_ridge).fit(window)

    def _cache_block(self) -> None:
        if self.gru is None:
            return
        window = self.history_window(self.gru.window_size)
        if window is None:
            return
        self.cached_block = self.gru.forward(window, self.config.horizon)
        self._block_base = self._history_slots[-1]

    def decide(self, now: int) -> ActuationDecision:
        """Pick this slot's actuated command; call once per slot after ingest."""
        if self._last_decided is not None and now == self._last_decided:
            raise RuntimeError(f"decide() called twice for slot {now}")
        self._last_decided = now
        if self._fresh_slot != now:
            self.slots_since_receipt += 1
        gap = self.slots_since_receipt

        if gap == 0:
            command, source = self._candidate, Source.ACTUAL
        elif self.strategy is Strategy.NON_PREDICTIVE:
            command, source = self._hold()
        elif gap <= self.config.horizon and (
            gap == 1 or self.mode is Mode.SINGLE_PREDICTION
        ):
            command, source = self._short_term(now)
        elif (
            self.mode is Mode.TAP
            and self.strategy is Strategy.TAP
            and 2 <= gap <= self.config.horizon
        ):
            command, source = self._long_term(now)
        else:
            command, source = self._hold()
        self.last_actuated = command
        return ActuationDecision(command, source, gap)

    def _short_term(self, now: int):
        # Predict for the current slot: step count is measured from the
        # newest buffered command, not from the receipt slot, so a command
        # that arrived one slot late does not shift every forecast.
        recent = self.history_window(self.config.ar_order)
        if self._ar is None or recent is None:
            return self._hold()
        steps = now - self._history_slots[-1]
        if steps < 1 or steps > self.config.horizon:
            return self._hold()
        return self._ar.predict(recent, steps=steps)[-1], Source.SHORT_TERM

    def _long_term(self, now: int):
        if self.cached_block is None or self._block_base is None:
            return self._hold()
        index = now - self._block_base
        if index < 1 or index > self.cached_block.shape[0]:
            return self._hold()
        return self.cached_block[index - 1], Source.LONG_TERM

    def _hold(self):
        self.holdlast_fallbacks += 1
        command = self.last_actuated
        if command is None:
            command = np.zeros(self._dim())
        return command, Source.HOLD_LAST

    def _dim(self) -> int:
        if self._history_slots:
            return self._history[self._history_slots[-1]].size
        return 1

    def maybe_switch_mode(self, short_val_ae: float, long_val_ae: float) -> Mode:
        """Latch into TAP mode once the long-term predictor validates better."""
        if (
            self.strategy is Strategy.TAP
            and self.mode is Mode.SINGLE_PREDICTION
            and long_val_ae < short_val_ae
        ):
            self.mode = Mode.TAP
        return self.mode
