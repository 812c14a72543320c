"""Reinforcement-learning agent: numpy networks and the soft actor-critic."""
from .nets import (
    Adam,
    Dense,
    Dropout,
    GaussianPolicy,
    LayerNorm,
    MlpTrunk,
    QuantileCritic,
    quantile_huber_loss,
)
from .sac import (
    CHECKPOINT_VERSION,
    DivergenceError,
    ReplayBuffer,
    SacAgent,
    SacConfig,
    TrainResult,
    config_hash,
    evaluate_policy,
    polyak_update,
    train_loop,
)

__all__ = [
    "Adam",
    "Dense",
    "Dropout",
    "GaussianPolicy",
    "LayerNorm",
    "MlpTrunk",
    "QuantileCritic",
    "quantile_huber_loss",
    "CHECKPOINT_VERSION",
    "DivergenceError",
    "ReplayBuffer",
    "SacAgent",
    "SacConfig",
    "TrainResult",
    "config_hash",
    "evaluate_policy",
    "polyak_update",
    "train_loop",
]
