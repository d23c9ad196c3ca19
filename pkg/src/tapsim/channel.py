"""Imperfect command link: stochastic latency, loss, and periodic rate gating.

Packets are injected with :meth:`Channel.transmit` and come back out of
:meth:`Channel.advance_slot` as delivery events against a per-slot
deadline. Latency is sampled from a Normal distribution truncated at zero
(negative mass clamps to zero, so a draw never consumes extra randomness)
and converted to whole slots by ceiling division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ChannelConfig", "Packet", "DeliveryEvent", "Channel", "ChannelError"]


class ChannelError(ValueError):
    """Invalid channel configuration or protocol misuse."""


@dataclass(frozen=True)
class ChannelConfig:
    """Link model parameters.

    ``mode`` is one of:

    * ``stochastic``: Normal(latency_mean_ms, latency_std_ms^2) latency
      truncated at 0, plus independent loss with ``loss_prob``.
    * ``periodic``: a rate limiter; packets are accepted only on slots
      divisible by ``period_k`` and arrive in the same slot.
    * ``composite``: periodic gating first, then the stochastic path.

    ``latency_std_ms`` is a standard deviation in milliseconds. A packet
    is on time when it arrives within ``deadline_slots`` of its send slot;
    with ``late_policy="history"`` late packets are still delivered
    (flagged late) so their payload can feed predictor history, while
    ``"drop"`` suppresses them entirely.
    """

    mode: str = "stochastic"
    latency_mean_ms: float = 10.0
    latency_std_ms: float = 20.0
    loss_prob: float = 0.0
    period_k: int = 1
    slot_duration_ms: float = 10.0
    deadline_slots: int = 1
    late_policy: str = "history"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("stochastic", "periodic", "composite"):
            raise ChannelError(f"unknown channel mode {self.mode!r}")
        if self.latency_std_ms < 0:
            raise ChannelError(f"latency_std_ms must be >= 0, got {self.latency_std_ms}")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ChannelError(f"loss_prob must be in [0, 1], got {self.loss_prob}")
        if self.period_k < 1:
            raise ChannelError(f"period_k must be >= 1, got {self.period_k}")
        if self.slot_duration_ms <= 0:
            raise ChannelError(f"slot_duration_ms must be > 0, got {self.slot_duration_ms}")
        if self.deadline_slots < 1:
            raise ChannelError(f"deadline_slots must be >= 1, got {self.deadline_slots}")
        if self.late_policy not in ("history", "drop"):
            raise ChannelError(f"unknown late_policy {self.late_policy!r}")


@dataclass(frozen=True)
class Packet:
    """One transmission: an id, a send slot, and a command payload.

    Payload slots must be strictly increasing and end at the send slot
    (older bundled commands ride along in front).
    """

    id: int
    send_slot: int
    payload: tuple

    def __post_init__(self):
        if not self.payload:
            raise ChannelError(f"packet {self.id}: empty payload")
        payload = tuple(self.payload)
        slots = [cm.slot for cm in payload]
        if any(b <= a for a, b in zip(slots, slots[1:])):
            raise ChannelError(
                f"packet {self.id}: payload slots {slots} not strictly increasing"
            )
        if slots[-1] != self.send_slot:
            raise ChannelError(
                f"packet {self.id}: payload ends at slot {slots[-1]}, "
                f"expected send slot {self.send_slot}"
            )
        object.__setattr__(self, "payload", payload)


@dataclass(frozen=True)
class DeliveryEvent:
    packet_id: int
    arrival_slot: int
    on_time: bool
    packet: Packet


class Channel:
    """Single-owner link simulator; drive it from one logical thread."""

    def __init__(self, config: ChannelConfig):
        self.config = config
        self._rng = np.random.default_rng(config.seed)
        self._in_flight: dict[int, list[DeliveryEvent]] = {}
        self._last_advanced: int | None = None

    def transmit(self, packet: Packet, now: int) -> bool:
        """Offer a packet to the link; returns whether the link accepted it.

        Periodic gating rejects off-cycle packets outright. An accepted
        packet is later delivered exactly once, unless the loss draw
        discards it.
        """
        if now != packet.send_slot:
            raise ChannelError(
                f"packet {packet.id} sent at slot {now} but stamped {packet.send_slot}"
            )
        cfg = self.config
        if cfg.mode in ("periodic", "composite") and now % cfg.period_k != 0:
            return False
        if cfg.mode == "periodic":
            self._schedule(packet, arrival=now)
            return True
        lost = self._rng.random() < cfg.loss_prob
        latency = self._rng.normal(cfg.latency_mean_ms, cfg.latency_std_ms)
        if lost:
            return True
        latency_slots = math.ceil(max(latency, 0.0) / cfg.slot_duration_ms)
        self._schedule(packet, arrival=now + latency_slots)
        return True

    def _schedule(self, packet: Packet, arrival: int) -> None:
        on_time = arrival - packet.send_slot <= self.config.deadline_slots
        event = DeliveryEvent(packet.id, arrival, on_time, packet)
        self._in_flight.setdefault(arrival, []).append(event)

    def advance_slot(self, now: int) -> list[DeliveryEvent]:
        """Collect this slot's deliveries, ordered by packet id.

        The clock must be strictly monotonic across calls. Under
        ``late_policy="drop"`` late events never surface.
        """
        if self._last_advanced is not None and now <= self._last_advanced:
            raise ChannelError(
                f"non-monotonic clock: advance_slot({now}) after "
                f"advance_slot({self._last_advanced})"
            )
        self._last_advanced = now
        events = self._in_flight.pop(now, [])
        events.sort(key=lambda e: e.packet_id)
        if self.config.late_policy == "drop":
            events = [e for e in events if e.on_time]
        return events

    @property
    def pending_count(self) -> int:
        return sum(len(v) for v in self._in_flight.values())
