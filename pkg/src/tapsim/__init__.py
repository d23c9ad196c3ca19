"""Slotted networked-control simulator with temporal-adaptive command prediction.

When command packets are lost or late on an imperfect link, an edge
support engine substitutes short-term autoregressive predictions and
multi-slot GRU predictions so the actuator keeps tracking the source
trajectory. This package bundles the data plumbing, both predictors, the
channel and engine simulation, and a Monte Carlo experiment harness.
"""

from .ar import ArPredictor, SingularWindowError
from .channel import Channel, ChannelConfig, ChannelError, DeliveryEvent, Packet
from .engine import (
    ActuationDecision,
    EngineConfig,
    Mode,
    Source,
    Strategy,
    SupportEngine,
    bundle_commands,
    commands_per_packet,
)
from .gru import GruNetwork, WeightFormatError, init_gru, load_weights, save_weights
from .preprocessing import MinMaxNormalizer
from .simulator import (
    EpisodeResult,
    EpisodeScenario,
    ExperimentReport,
    ExperimentSetup,
    OnlineSpec,
    SuccessSpec,
    average_ae,
    evaluate_success,
    export_report,
    run_episode,
    run_experiment,
    success_probability,
)
from .trace import (
    CommandMatrix,
    SyntheticSpec,
    TraceDataset,
    TraceFormatError,
    generate_synthetic,
    load_trace_csv,
    save_trace_csv,
)
from .training import (
    AdamOptimizer,
    GruForecaster,
    OnlineTrainer,
    PredictorPair,
    TrainingBuffer,
    TrainingDivergedError,
    evaluate_ar_avg_ae,
    evaluate_avg_ae,
    make_samples,
)

__version__ = "0.1.0"

__all__ = [
    "ArPredictor",
    "SingularWindowError",
    "Channel",
    "ChannelConfig",
    "ChannelError",
    "DeliveryEvent",
    "Packet",
    "ActuationDecision",
    "EngineConfig",
    "Mode",
    "Source",
    "Strategy",
    "SupportEngine",
    "bundle_commands",
    "commands_per_packet",
    "GruNetwork",
    "WeightFormatError",
    "init_gru",
    "load_weights",
    "save_weights",
    "MinMaxNormalizer",
    "EpisodeResult",
    "EpisodeScenario",
    "ExperimentReport",
    "ExperimentSetup",
    "OnlineSpec",
    "SuccessSpec",
    "average_ae",
    "evaluate_success",
    "export_report",
    "run_episode",
    "run_experiment",
    "success_probability",
    "CommandMatrix",
    "SyntheticSpec",
    "TraceDataset",
    "TraceFormatError",
    "generate_synthetic",
    "load_trace_csv",
    "save_trace_csv",
    "AdamOptimizer",
    "GruForecaster",
    "OnlineTrainer",
    "PredictorPair",
    "TrainingBuffer",
    "TrainingDivergedError",
    "evaluate_ar_avg_ae",
    "evaluate_avg_ae",
    "make_samples",
    "__version__",
]
