"""Stochastic flow map learning for excited stochastic systems.

Thin python layer over the C++ core: snapshot-pair dataset generation from
built-in ground-truth simulators, conditional normalizing-flow training, and
long-horizon ensemble prediction under new excitation signals.
"""

from ._sfmlearn import (  # noqa: F401
    BasisSpec,
    Box,
    BuiltinSystem,
    ConfigError,
    EpochStats,
    FlowConfig,
    FlowModel,
    FormatError,
    MomentCurves,
    PredictError,
    SimulationError,
    TrainConfig,
    TrainHistory,
    TrainResult,
    TrainingError,
    TrainingSet,
    TrainingSetMeta,
    TrajectoryEnsemble,
    build_flow,
    builtin_system,
    builtin_system_names,
    ensemble,
    generate_training_set,
    load_ensemble,
    load_flow,
    load_training_set,
    lr_schedule,
    moments,
    nll_loss,
    resume_training,
    rollout,
    snapshot_distance,
    train,
    truth_ensemble,
)

__all__ = [name for name in dir() if not name.startswith("_")]
