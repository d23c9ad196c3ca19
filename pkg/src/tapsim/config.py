"""Scenario-file parsing and materialization.

One JSON file drives a whole experiment: the data source, the channel
impairments, the engine parameters, the strategies to compare, and the
experiment settings (episode count, seeds, success criteria, and how the
long-term predictor gets its weights). See ``scenarios/`` for references.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .channel import ChannelConfig
from .engine import EngineConfig, Strategy
from .gru import init_gru, load_weights
from .preprocessing import MinMaxNormalizer
from .simulator import ExperimentSetup, OnlineSpec, SuccessSpec
from .trace import SyntheticSpec, TraceDataset, generate_synthetic, load_trace_csv
from .training import GruForecaster

__all__ = [
    "ConfigError",
    "load_config",
    "build_setup",
    "build_dataset",
    "build_training_inputs",
    "pretrain_network",
]

_REQUIRED_SECTIONS = ("data", "channel", "engine", "strategies", "experiment")


class ConfigError(ValueError):
    """Scenario file is missing fields or holds the wrong types."""


def _expect(mapping, key, kinds, where, default=_REQUIRED_SECTIONS):
    sentinel = default is _REQUIRED_SECTIONS
    if key not in mapping:
        if sentinel:
            raise ConfigError(f"config missing required field {where!r}")
        return default
    value = mapping[key]
    if kinds is bool:
        ok = isinstance(value, bool)
    elif kinds is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kinds is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kinds)
    if not ok:
        expected = kinds.__name__ if hasattr(kinds, "__name__") else str(kinds)
        raise ConfigError(
            f"config field {where!r}: expected {expected}, got "
            f"{type(value).__name__} {value!r}"
        )
    return value


def load_config(path) -> dict:
    """Read and structurally validate a scenario file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    for section in _REQUIRED_SECTIONS:
        _expect(raw, section, (dict, list), section)
    strategies = _expect(raw, "strategies", list, "strategies")
    if not strategies:
        raise ConfigError("config field 'strategies' must name at least one strategy")
    valid = {s.value for s in Strategy}
    for name in strategies:
        if name not in valid:
            raise ConfigError(
                f"config field 'strategies': unknown strategy {name!r}, "
                f"expected one of {sorted(valid)}"
            )
    return raw


def build_dataset(data_cfg: dict, base_dir: Path | None = None) -> TraceDataset:
    kind = _expect(data_cfg, "kind", str, "data.kind")
    if kind == "trace":
        rel = _expect(data_cfg, "path", str, "data.path")
        path = Path(rel)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_trace_csv(
            path,
            signals_per_dof=_expect(data_cfg, "signals_per_dof", int, "data.signals_per_dof", 1),
            sample_rate_hz=_expect(data_cfg, "sample_rate_hz", float, "data.sample_rate_hz", 100.0),
        )
    if kind == "synthetic":
        syn = _expect(data_cfg, "synthetic", dict, "data.synthetic")
        spec = SyntheticSpec(
            dof_count=_expect(syn, "dof_count", int, "data.synthetic.dof_count"),
            duration_slots=_expect(syn, "duration_slots", int, "data.synthetic.duration_slots"),
            kind=_expect(syn, "kind", str, "data.synthetic.kind"),
            seed=_expect(syn, "seed", int, "data.synthetic.seed", 0),
            signals_per_dof=_expect(syn, "signals_per_dof", int, "data.synthetic.signals_per_dof", 1),
            sample_rate_hz=_expect(syn, "sample_rate_hz", float, "data.synthetic.sample_rate_hz", 100.0),
            waypoints=tuple(
                (int(w[0]), tuple(w[1]) if isinstance(w[1], list) else w[1])
                for w in _expect(syn, "waypoints", list, "data.synthetic.waypoints", [])
            ),
            waypoint_spacing=_expect(syn, "waypoint_spacing", int, "data.synthetic.waypoint_spacing", 80),
            components=_expect(syn, "components", int, "data.synthetic.components", 3),
            amplitude=_expect(syn, "amplitude", float, "data.synthetic.amplitude", 0.4),
            offset=_expect(syn, "offset", float, "data.synthetic.offset", 0.5),
            min_freq_hz=_expect(syn, "min_freq_hz", float, "data.synthetic.min_freq_hz", 0.2),
            max_freq_hz=_expect(syn, "max_freq_hz", float, "data.synthetic.max_freq_hz", 2.0),
            freq_grid_hz=_expect(syn, "freq_grid_hz", float, "data.synthetic.freq_grid_hz", 0.0),
            period_slots=_expect(syn, "period_slots", int, "data.synthetic.period_slots", 40),
        )
        return generate_synthetic(spec)
    raise ConfigError(f"config field 'data.kind': expected 'trace' or 'synthetic', got {kind!r}")


def _build_channel(cfg: dict) -> ChannelConfig:
    return ChannelConfig(
        mode=_expect(cfg, "mode", str, "channel.mode", "stochastic"),
        latency_mean_ms=_expect(cfg, "latency_mean_ms", float, "channel.latency_mean_ms", 10.0),
        latency_std_ms=_expect(cfg, "latency_std_ms", float, "channel.latency_std_ms", 20.0),
        loss_prob=_expect(cfg, "loss_prob", float, "channel.loss_prob", 0.0),
        period_k=_expect(cfg, "period_k", int, "channel.period_k", 1),
        slot_duration_ms=_expect(cfg, "slot_duration_ms", float, "channel.slot_duration_ms", 10.0),
        deadline_slots=_expect(cfg, "deadline_slots", int, "channel.deadline_slots", 1),
        late_policy=_expect(cfg, "late_policy", str, "channel.late_policy", "history"),
    )


def _build_engine(cfg: dict) -> EngineConfig:
    return EngineConfig(
        lookback=_expect(cfg, "lookback", int, "engine.lookback", 16),
        horizon=_expect(cfg, "horizon", int, "engine.horizon", 5),
        ar_order=_expect(cfg, "ar_order", int, "engine.ar_order", 3),
        ar_ridge=_expect(cfg, "ar_ridge", float, "engine.ar_ridge", 1e-6),
        sample_rate_hz=_expect(cfg, "sample_rate_hz", float, "engine.sample_rate_hz", 100.0),
        transmit_rate_hz=_expect(cfg, "transmit_rate_hz", float, "engine.transmit_rate_hz", 100.0),
        bundling=_expect(cfg, "bundling", bool, "engine.bundling", False),
        mode_policy=_expect(cfg, "mode_policy", str, "engine.mode_policy", "offline"),
    )


def pretrain_network(
    series: np.ndarray,
    engine: EngineConfig,
    gru_cfg: dict,
    pretrain_cfg: dict,
):
    """Fit a forecaster on a normalized training series; returns (network, val AE)."""
    forecaster = GruForecaster(
        layer_count=_expect(gru_cfg, "layer_count", int, "engine.gru.layer_count", 2),
        hidden_dim=_expect(gru_cfg, "hidden_dim", int, "engine.gru.hidden_dim", 64),
        lookback=engine.lookback,
        horizon=engine.horizon,
        learning_rate=_expect(pretrain_cfg, "learning_rate", float, "experiment.pretrain.learning_rate", 1e-3),
        batch_size=_expect(pretrain_cfg, "batch_size", int, "experiment.pretrain.batch_size", 32),
        train_steps=_expect(pretrain_cfg, "steps", int, "experiment.pretrain.steps", 2000),
        eval_every=_expect(pretrain_cfg, "eval_every", int, "experiment.pretrain.eval_every", 100),
        seed=_expect(pretrain_cfg, "seed", int, "experiment.pretrain.seed", 0),
    )
    forecaster.fit(series)
    return forecaster.network_, forecaster.validation_ae_


def build_training_inputs(cfg: dict, base_dir: Path | None = None):
    """Materialize just what offline pre-training needs.

    Returns (engine config, normalized training series, gru section,
    pretrain section). The normalizer is fit on the training split only.
    """
    data_cfg = _expect(cfg, "data", dict, "data")
    engine_cfg = _expect(cfg, "engine", dict, "engine")
    engine = _build_engine(engine_cfg)
    dataset = build_dataset(data_cfg, base_dir)
    train_fraction = _expect(data_cfg, "train_fraction", float, "data.train_fraction", 1.0)
    train_ds = dataset if train_fraction >= 1.0 else dataset.split(train_fraction)[0]
    series = MinMaxNormalizer().fit(train_ds.samples).transform(train_ds.samples)
    exp = _expect(cfg, "experiment", dict, "experiment", {})
    pretrain_cfg = dict(_expect(exp, "pretrain", dict, "experiment.pretrain", {}))
    gru_cfg = _expect(engine_cfg, "gru", dict, "engine.gru", {})
    return engine, series, gru_cfg, pretrain_cfg


def build_setup(
    cfg: dict,
    base_dir: Path | None = None,
    seed_override: int | None = None,
    pretrain_steps_override: int | None = None,
) -> ExperimentSetup:
    """Materialize a parsed config: data, normalizer, weights, and setup."""
    data_cfg = _expect(cfg, "data", dict, "data")
    channel = _build_channel(_expect(cfg, "channel", dict, "channel"))
    engine_cfg = _expect(cfg, "engine", dict, "engine")
    engine = _build_engine(engine_cfg)
    exp = _expect(cfg, "experiment", dict, "experiment")
    strategies = [Strategy(name) for name in _expect(cfg, "strategies", list, "strategies")]

    dataset = build_dataset(data_cfg, base_dir)
    train_fraction = _expect(data_cfg, "train_fraction", float, "data.train_fraction", 1.0)
    replay = _expect(data_cfg, "replay", str, "data.replay", "full")
    if not 0.0 < train_fraction <= 1.0:
        raise ConfigError(
            f"config field 'data.train_fraction': must be in (0, 1], got {train_fraction}"
        )
    if train_fraction < 1.0:
        train_ds, holdout_ds = dataset.split(train_fraction)
    else:
        train_ds, holdout_ds = dataset, dataset
    if replay == "full":
        replay_ds = dataset
    elif replay == "holdout":
        replay_ds = holdout_ds
    elif replay == "train":
        replay_ds = train_ds
    else:
        raise ConfigError(
            f"config field 'data.replay': expected 'full', 'holdout', or 'train', got {replay!r}"
        )

    normalizer = MinMaxNormalizer().fit(train_ds.samples)
    train_series = normalizer.transform(train_ds.samples)
    trajectory = normalizer.transform(replay_ds.samples)

    base_seed = _expect(exp, "base_seed", int, "experiment.base_seed", 0)
    if seed_override is not None:
        base_seed = seed_override
    episodes = _expect(exp, "episodes", int, "experiment.episodes", 1)
    slot_budget = _expect(exp, "slot_budget", int, "experiment.slot_budget", None)

    success = None
    if "success" in exp:
        scfg = _expect(exp, "success", dict, "experiment.success")
        slots = tuple(
            int(s) for s in _expect(scfg, "waypoint_slots", list, "experiment.success.waypoint_slots")
        )
        limit = trajectory.shape[0] if slot_budget is None else min(trajectory.shape[0], slot_budget)
        for s in slots:
            if not 0 <= s < limit:
                raise ConfigError(
                    f"config field 'experiment.success.waypoint_slots': slot {s} "
                    f"outside replayed trajectory of {limit} slots"
                )
        pos = np.arange(0, trajectory.shape[1], replay_ds.signals_per_dof)
        success = SuccessSpec(
            waypoint_slots=slots,
            targets=trajectory[list(slots)][:, pos],
            tolerance=_expect(scfg, "tolerance", float, "experiment.success.tolerance", 0.05),
            dwell=_expect(scfg, "dwell", int, "experiment.success.dwell", 3),
        )

    online = None
    gru = None
    needs_gru = Strategy.TAP in strategies
    if needs_gru:
        gru_cfg = _expect(engine_cfg, "gru", dict, "engine.gru", {})
        if engine.mode_policy == "online":
            ocfg = _expect(exp, "online", dict, "experiment.online", {})
            online = OnlineSpec(
                steps_per_slot=_expect(ocfg, "steps_per_slot", int, "experiment.online.steps_per_slot", 1),
                eval_every=_expect(ocfg, "eval_every", int, "experiment.online.eval_every", 50),
                batch_size=_expect(ocfg, "batch_size", int, "experiment.online.batch_size", 16),
                buffer_capacity=_expect(ocfg, "buffer_capacity", int, "experiment.online.buffer_capacity", 4096),
                validation_fraction=_expect(ocfg, "validation_fraction", float, "experiment.online.validation_fraction", 0.1),
                min_validation=_expect(ocfg, "min_validation", int, "experiment.online.min_validation", 4),
                learning_rate=_expect(ocfg, "learning_rate", float, "experiment.online.learning_rate", 1e-3),
            )
            gru = init_gru(
                _expect(gru_cfg, "seed", int, "engine.gru.seed", 0),
                _expect(gru_cfg, "layer_count", int, "engine.gru.layer_count", 2),
                trajectory.shape[1],
                _expect(gru_cfg, "hidden_dim", int, "engine.gru.hidden_dim", 64),
                engine.lookback,
                engine.horizon,
            )
        elif "weights" in exp:
            rel = _expect(exp, "weights", str, "experiment.weights")
            path = Path(rel)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            gru = load_weights(path, expect_input_dim=trajectory.shape[1])
        else:
            pretrain_cfg = dict(_expect(exp, "pretrain", dict, "experiment.pretrain", {}))
            if pretrain_steps_override is not None:
                pretrain_cfg["steps"] = pretrain_steps_override
            gru, _ = pretrain_network(train_series, engine, gru_cfg, pretrain_cfg)

    echo = json.loads(json.dumps(cfg))
    if seed_override is not None:
        echo.setdefault("experiment", {})["base_seed"] = base_seed
    return ExperimentSetup(
        trajectory=trajectory,
        signals_per_dof=replay_ds.signals_per_dof,
        channel=channel,
        engine=engine,
        strategies=strategies,
        episodes=episodes,
        base_seed=base_seed,
        gru=gru,
        success=success,
        online=online,
        slot_budget=slot_budget,
        config_echo=echo,
    )
