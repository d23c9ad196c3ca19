"""Slotted closed-loop simulation and Monte Carlo experiment harness.

Each episode replays a normalized source trajectory through the imperfect
channel into a support engine and an ideal actuator (pose = actuated
command, no dynamics), recording the per-slot absolute error against the
source. Experiments repeat episodes over seeded channel randomness;
strategies under comparison share per-episode seeds (common random
numbers) so differences are attributable to the strategy alone.
"""

from __future__ import annotations

import csv
import json
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import Channel, ChannelConfig, Packet
from .engine import (
    EngineConfig,
    Mode,
    Source,
    Strategy,
    SupportEngine,
    commands_per_packet,
)
from .gru import GruNetwork
from .trace import CommandMatrix
from .training import AdamOptimizer, OnlineTrainer, PredictorPair

__all__ = [
    "SuccessSpec",
    "OnlineSpec",
    "EpisodeScenario",
    "SlotRecord",
    "EpisodeResult",
    "StrategyStats",
    "ExperimentReport",
    "ExperimentSetup",
    "run_episode",
    "run_experiment",
    "evaluate_success",
    "average_ae",
    "success_probability",
    "export_report",
]


@dataclass(frozen=True)
class SuccessSpec:
    """Waypoint-dwell task success: every waypoint must be tracked within
    ``tolerance`` (max-norm over position dimensions, normalized scale)
    for ``dwell`` consecutive slots in a window containing its slot."""

    waypoint_slots: tuple
    targets: np.ndarray
    tolerance: float = 0.05
    dwell: int = 3

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.dwell < 1:
            raise ValueError(f"dwell must be >= 1, got {self.dwell}")


@dataclass(frozen=True)
class OnlineSpec:
    """Online-bootstrap knobs: deterministic interleaved training."""

    steps_per_slot: int = 1
    eval_every: int = 50
    batch_size: int = 16
    buffer_capacity: int = 4096
    validation_fraction: float = 0.1
    min_validation: int = 4
    learning_rate: float = 1e-3


@dataclass
class EpisodeScenario:
    """Everything one episode needs besides its seed."""

    trajectory: np.ndarray
    signals_per_dof: int
    channel: ChannelConfig
    engine: EngineConfig
    strategy: Strategy
    gru: GruNetwork | None = None
    success: SuccessSpec | None = None
    online: OnlineSpec | None = None
    slot_budget: int | None = None

    @property
    def position_dims(self) -> np.ndarray:
        return np.arange(0, self.trajectory.shape[1], self.signals_per_dof)


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    source_command: np.ndarray
    actuated: np.ndarray
    abs_error: np.ndarray
    source: Source


@dataclass
class EpisodeResult:
    records: list
    success: bool
    average_ae: float
    mode_switch_slot: int | None = None

    def per_slot_ae(self) -> np.ndarray:
        return np.array([r.abs_error.mean() for r in self.records])

    def source_tags(self) -> list:
        return [r.source.value for r in self.records]


def run_episode(scenario: EpisodeScenario, seed: int) -> EpisodeResult:
    """Run one seeded episode; deterministic in (scenario, seed)."""
    trajectory = np.asarray(scenario.trajectory, dtype=float)
    total = trajectory.shape[0]
    if scenario.slot_budget is not None:
        total = min(total, scenario.slot_budget)
    if total < 1:
        raise ValueError("empty trajectory")
    dim = trajectory.shape[1]

    channel = Channel(replace(scenario.channel, seed=seed))
    engine = SupportEngine(
        scenario.engine,
        scenario.strategy,
        gru=scenario.gru,
        initial_command=np.zeros(dim),
    )
    trainer = None
    if (
        scenario.online is not None
        and scenario.strategy is Strategy.TAP
        and scenario.engine.mode_policy == "online"
    ):
        if scenario.gru is None:
            raise ValueError("online TAP episodes need an initial network")
        spec = scenario.online
        pair = PredictorPair(
            scenario.gru.copy(), AdamOptimizer(learning_rate=spec.learning_rate)
        )
        engine.gru = pair.generation
        trainer = OnlineTrainer(
            pair,
            ar_order=scenario.engine.ar_order,
            ar_ridge=scenario.engine.ar_ridge,
            batch_size=spec.batch_size,
            buffer_capacity=spec.buffer_capacity,
            validation_fraction=spec.validation_fraction,
            steps_per_slot=spec.steps_per_slot,
            eval_every=spec.eval_every,
            min_validation=spec.min_validation,
            seed=seed + 7919,
        )

    mu = (
        commands_per_packet(scenario.engine.sample_rate_hz, scenario.engine.transmit_rate_hz)
        if scenario.engine.bundling
        else 1
    )
    records = []
    mode_switch_slot = None
    packet_id = 0
    for t in range(total):
        if t % mu == 0:
            first = max(0, t - mu + 1)
            payload = tuple(
                CommandMatrix.from_vector(s, trajectory[s], scenario.signals_per_dof)
                for s in range(first, t + 1)
            )
            channel.transmit(Packet(packet_id, t, payload), t)
            packet_id += 1
        for event in channel.advance_slot(t):
            engine.ingest(event.packet.payload, event.on_time, t)
            if trainer is not None:
                for command in event.packet.payload:
                    trainer.observe(command.slot, command.flat)
        if trainer is not None:
            trainer.train_slot()
            if (
                trainer.short_term_val_ae is not None
                and trainer.long_term_val_ae is not None
                and engine.mode is Mode.SINGLE_PREDICTION
            ):
                switched = engine.maybe_switch_mode(
                    trainer.short_term_val_ae, trainer.long_term_val_ae
                )
                if switched is Mode.TAP and mode_switch_slot is None:
                    mode_switch_slot = t
        decision = engine.decide(t)
        source_cmd = trajectory[t]
        error = np.abs(decision.command - source_cmd)
        records.append(
            SlotRecord(t, source_cmd, decision.command, error, decision.source)
        )

    success = True
    if scenario.success is not None:
        success = evaluate_success(
            records,
            scenario.success.waypoint_slots,
            scenario.success.targets,
            scenario.success.tolerance,
            scenario.success.dwell,
            scenario.position_dims,
        )
    return EpisodeResult(records, success, average_ae(records), mode_switch_slot)


def evaluate_success(
    records,
    waypoint_slots,
    targets,
    tolerance: float,
    dwell: int,
    position_dims,
) -> bool:
    """Check waypoint-dwell tracking over recorded actuation.

    For each waypoint there must be some window of ``dwell`` consecutive
    slots containing its scheduled slot in which every actuated position
    stays within ``tolerance`` of the waypoint target (max-norm over
    position dimensions).
    """
    targets = np.asarray(targets, dtype=float)
    position_dims = np.asarray(position_dims)
    total = len(records)
    actuated = np.stack([r.actuated for r in records])[:, position_dims]
    for w, target in zip(waypoint_slots, targets):
        if not 0 <= w < total:
            raise ValueError(f"waypoint slot {w} outside episode of {total} slots")
        ok = np.max(np.abs(actuated - target[None, :]), axis=1) <= tolerance
        hit = False
        for start in range(max(0, w - dwell + 1), min(w, total - dwell) + 1):
            if ok[start : start + dwell].all():
                hit = True
                break
        if not hit:
            return False
    return True


def average_ae(records_or_result) -> float:
    """Mean absolute error over slots and dimensions."""
    if isinstance(records_or_result, EpisodeResult):
        records = records_or_result.records
    else:
        records = records_or_result
    if not records:
        raise ValueError("no records to average")
    return float(np.mean([r.abs_error.mean() for r in records]))


def success_probability(results) -> float:
    results = list(results)
    if not results:
        raise ValueError("no episode results")
    return sum(1 for r in results if r.success) / len(results)


@dataclass
class StrategyStats:
    success_probability: float
    episode_ae_mean: float
    episode_ae_std: float
    per_slot_ae: list
    per_slot_source: list
    decision_counts: dict


@dataclass
class ExperimentReport:
    config: dict
    seeds: list
    strategies: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seeds": self.seeds,
            "strategies": {
                name: {
                    "success_probability": s.success_probability,
                    "episode_ae_mean": s.episode_ae_mean,
                    "episode_ae_std": s.episode_ae_std,
                    "per_slot_ae": s.per_slot_ae,
                    "per_slot_source": s.per_slot_source,
                    "decision_counts": s.decision_counts,
                }
                for name, s in self.strategies.items()
            },
        }


@dataclass
class ExperimentSetup:
    """Materialized experiment: shared data plus the strategies to compare."""

    trajectory: np.ndarray
    signals_per_dof: int
    channel: ChannelConfig
    engine: EngineConfig
    strategies: list
    episodes: int
    base_seed: int
    gru: GruNetwork | None = None
    success: SuccessSpec | None = None
    online: OnlineSpec | None = None
    slot_budget: int | None = None
    config_echo: dict | None = None

    def scenario_for(self, strategy: Strategy) -> EpisodeScenario:
        return EpisodeScenario(
            trajectory=self.trajectory,
            signals_per_dof=self.signals_per_dof,
            channel=self.channel,
            engine=self.engine,
            strategy=Strategy(strategy),
            gru=self.gru,
            success=self.success,
            online=self.online,
            slot_budget=self.slot_budget,
        )


def _thread_count() -> int:
    raw = os.environ.get("TAPSIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(setup: ExperimentSetup) -> ExperimentReport:
    """Run every strategy over common-random-number episode seeds.

    Episode i always uses seed ``base_seed + i`` for every strategy, so all
    strategies face identical channel randomness. ``TAPSIM_THREADS`` caps
    parallel episode execution; aggregation order is fixed by seed either
    way, keeping reports byte-deterministic.
    """
    if setup.episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {setup.episodes}")
    seeds = [setup.base_seed + i for i in range(setup.episodes)]
    workers = _thread_count()
    strategies = {}
    for strategy in setup.strategies:
        scenario = setup.scenario_for(strategy)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda s: run_episode(scenario, s), seeds))
        else:
            results = [run_episode(scenario, seed) for seed in seeds]
        per_slot = np.stack([r.per_slot_ae() for r in results])
        tag_table = [r.source_tags() for r in results]
        modal = [
            Counter(slot_tags).most_common(1)[0][0]
            for slot_tags in zip(*tag_table)
        ]
        counts = Counter(tag for tags in tag_table for tag in tags)
        episode_aes = np.array([r.average_ae for r in results])
        strategies[Strategy(strategy).value] = StrategyStats(
            success_probability=success_probability(results),
            episode_ae_mean=float(episode_aes.mean()),
            episode_ae_std=float(episode_aes.std()),
            per_slot_ae=[float(x) for x in per_slot.mean(axis=0)],
            per_slot_source=modal,
            decision_counts={k: int(v) for k, v in sorted(counts.items())},
        )
    return ExperimentReport(
        config=setup.config_echo or {},
        seeds=seeds,
        strategies=strategies,
    )


def export_report(report: ExperimentReport, out_dir) -> tuple[Path, Path]:
    """Write report.json and a flat per-slot CSV; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "per_slot.csv"
    with json_path.open("w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slot", "strategy", "source_tag", "mean_AE"])
        for name, stats in report.strategies.items():
            for slot, (tag, ae) in enumerate(
                zip(stats.per_slot_source, stats.per_slot_ae)
            ):
                writer.writerow([slot, name, tag, repr(ae)])
    return json_path, csv_path
