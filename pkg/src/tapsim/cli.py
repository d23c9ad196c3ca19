"""Command-line driver: experiments, pre-training, replay, and verification.

Subcommands:

* ``run --config F --out D [--seed N]``: full multi-strategy experiment,
  writes ``report.json`` and ``per_slot.csv``.
* ``train --config F --weights-out F [--steps N]``: offline pre-training,
  writes a TAPW weight file and prints the final validation average AE.
* ``replay --config F --episode-seed N --out D [--strategy S]``: one
  episode with per-slot logging.
* ``gradcheck``: finite-difference verification of the BPTT gradients.
* ``oracle``: autoregressive fit against an independent least-squares route.

Exit status is 0 only when every requested check and write succeeded.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .ar import ArPredictor
from .channel import ChannelError
from .config import (
    ConfigError,
    build_setup,
    build_training_inputs,
    load_config,
    pretrain_network,
)
from .engine import Strategy
from .gradcheck import run_gradient_checks
from .gru import WeightFormatError, save_weights
from .simulator import export_report, run_episode, run_experiment
from .trace import TraceFormatError

GRADCHECK_TOLERANCE = 1e-4
ORACLE_COEF_TOLERANCE = 1e-9
ORACLE_RECOVERY_TOLERANCE = 1e-8

_USER_ERRORS = (
    ConfigError,
    TraceFormatError,
    WeightFormatError,
    ChannelError,
    FileNotFoundError,
    ValueError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tapsim",
        description="Slotted networked-control simulator with predictive command substitution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full experiment from a scenario file")
    p_run.add_argument("--config", required=True, help="scenario JSON path")
    p_run.add_argument("--out", required=True, help="output directory for reports")
    p_run.add_argument("--seed", type=int, default=None, help="override experiment.base_seed")

    p_train = sub.add_parser("train", help="pre-train the long-term predictor")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--weights-out", required=True, help="TAPW weight file to write")
    p_train.add_argument("--steps", type=int, default=None, help="override pretrain steps")

    p_replay = sub.add_parser("replay", help="run one episode with per-slot logging")
    p_replay.add_argument("--config", required=True)
    p_replay.add_argument("--episode-seed", type=int, required=True)
    p_replay.add_argument("--out", required=True)
    p_replay.add_argument(
        "--strategy",
        default=None,
        help="strategy to replay (default: first in the config)",
    )

    sub.add_parser("gradcheck", help="finite-difference check of training gradients")
    sub.add_parser("oracle", help="autoregressive fit vs. independent solver")

    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    setup = build_setup(cfg, base_dir=Path(args.config).parent, seed_override=args.seed)
    report = run_experiment(setup)
    json_path, csv_path = export_report(report, args.out)
    for name, stats in report.strategies.items():
        print(
            f"{name}: success={stats.success_probability:.2f} "
            f"avg_ae={stats.episode_ae_mean:.5f} (+-{stats.episode_ae_std:.5f})"
        )
    print(f"wrote {json_path} and {csv_path}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    engine, series, gru_cfg, pretrain_cfg = build_training_inputs(
        cfg, base_dir=Path(args.config).parent
    )
    if args.steps is not None:
        pretrain_cfg["steps"] = args.steps
    network, val_ae = pretrain_network(series, engine, gru_cfg, pretrain_cfg)
    out = Path(args.weights_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(network, out)
    print(f"wrote {out}")
    print(f"validation avg-AE: {val_ae:.6f}")
    return 0


def _cmd_replay(args) -> int:
    cfg = load_config(args.config)
    setup = build_setup(cfg, base_dir=Path(args.config).parent)
    strategy = Strategy(args.strategy) if args.strategy else setup.strategies[0]
    result = run_episode(setup.scenario_for(strategy), args.episode_seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / f"episode_{strategy.value}_{args.episode_seed}.csv"
    with log_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slot", "source_tag", "mean_AE", "max_AE"])
        for record in result.records:
            writer.writerow(
                [
                    record.slot,
                    record.source.value,
                    repr(float(record.abs_error.mean())),
                    repr(float(record.abs_error.max())),
                ]
            )
    print(f"strategy={strategy.value} seed={args.episode_seed}")
    print(f"episode avg AE: {result.average_ae:.6f} success: {result.success}")
    if result.mode_switch_slot is not None:
        print(f"switched to TAP mode at slot {result.mode_switch_slot}")
    print(f"wrote {log_path}")
    return 0


def _cmd_gradcheck(args) -> int:
    failures = 0
    for label, err in run_gradient_checks():
        status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"gradcheck {label}: max rel err {err:.3e} [{status}]")
        if err >= GRADCHECK_TOLERANCE:
            failures += 1
    if failures:
        print(f"gradcheck: {failures} case(s) above {GRADCHECK_TOLERANCE:g}", file=sys.stderr)
        return 1
    return 0


def _augmented_lstsq_fit(window: np.ndarray, order: int, ridge: float):
    """Independent AR solve: QR least squares on a ridge-augmented system."""
    n, dim = window.shape
    rows = n - order
    coef = np.empty((dim, order))
    intercept = np.empty(dim)
    for d in range(dim):
        series = window[:, d]
        design = np.empty((rows, order + 1))
        for j in range(1, order + 1):
            design[:, j - 1] = series[order - j : n - j]
        design[:, order] = 1.0
        aug = np.zeros((order, order + 1))
        aug[:, :order] = np.sqrt(ridge) * np.eye(order)
        stacked = np.vstack([design, aug])
        target = np.concatenate([series[order:], np.zeros(order)])
        beta, *_ = np.linalg.lstsq(stacked, target, rcond=None)
        coef[d] = beta[:order]
        intercept[d] = beta[order]
    return coef, intercept


def _cmd_oracle(args) -> int:
    rng = np.random.default_rng(424242)
    order, dim, n, ridge = 3, 5, 50, 1e-6
    worst = 0.0
    for _ in range(50):
        window = rng.uniform(0.0, 1.0, size=(n, dim))
        model = ArPredictor(order=order, ridge=ridge).fit(window)
        coef, intercept = _augmented_lstsq_fit(window, order, ridge)
        worst = max(
            worst,
            float(np.max(np.abs(model.coef_ - coef))),
            float(np.max(np.abs(model.intercept_ - intercept))),
        )
    print(f"oracle equivalence over 50 random windows: max |delta| {worst:.3e}")
    if worst > ORACLE_COEF_TOLERANCE:
        print(f"oracle: coefficient mismatch above {ORACLE_COEF_TOLERANCE:g}", file=sys.stderr)
        return 1

    # Noiseless AR(2) recovery: complex roots at radius 0.95, so the series
    # oscillates and decays slowly enough to stay well conditioned.
    radius, angle = 0.95, 0.7
    true_coef = np.array([2.0 * radius * np.cos(angle), -(radius**2)])
    series = np.empty(120)
    series[0], series[1] = 0.5, 0.3
    for t in range(2, series.size):
        series[t] = true_coef[0] * series[t - 1] + true_coef[1] * series[t - 2]
    model = ArPredictor(order=2, ridge=0.0).fit(series[:, None])
    err = float(np.max(np.abs(model.coef_[0] - true_coef)))
    print(f"noiseless AR(2) recovery: max coefficient error {err:.3e}")
    if err > ORACLE_RECOVERY_TOLERANCE:
        print(f"oracle: AR(2) recovery above {ORACLE_RECOVERY_TOLERANCE:g}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "train": _cmd_train,
        "replay": _cmd_replay,
        "gradcheck": _cmd_gradcheck,
        "oracle": _cmd_oracle,
    }
    try:
        return handlers[args.command](args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
