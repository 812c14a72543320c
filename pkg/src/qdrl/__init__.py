"""Pulse-level gate synthesis on a simulated exchange-coupled spin-qubit device.

The package stacks five layers, each usable on its own:

- :mod:`qdrl.qcore` — Hamiltonians, Trotterized propagators, and fidelity
  bookkeeping for the four-dot device (6-dim sector, 4-dim computational
  block) and its one-qubit reduction.
- :mod:`qdrl.pulse` — piecewise-constant control sequences, oversampling, and
  impulse-response shaping of what the device actually sees.
- :mod:`qdrl.noise` — quasi-static hyperfine/charge offsets plus fast 1/f^a
  charge noise synthesized on the physical frequency grid.
- :mod:`qdrl.tomography` — informationally complete POVM simulation and
  nearest-unitary reconstruction, the measurement-limited reward path.
- :mod:`qdrl.rlenv` / :mod:`qdrl.rlagent` — the gate-synthesis episode
  environment and the soft actor-critic agent (truncated quantile critics)
  that learns shaped detuning protocols.

:mod:`qdrl.harness` adds configs, seeded experiment commands, and the
``qdrl`` command-line entry point on top.
"""

from .noise import NoiseConfig, NoiseRealization
from .pulse import PulseSequence, delta_kernel, gaussian_kernel
from .qcore import (
    DeviceParams,
    cnot_target,
    exchange_coupling,
    gate_fidelity,
    haar_unitary,
    nlif,
    phase_gate_target,
)
from .rlagent import SacAgent, SacConfig, evaluate_policy, train_loop
from .rlenv import (
    EnvConfig,
    GateSynthesisEnv,
    ObservationMode,
    RewardMode,
    single_qubit_env,
)
from .seeding import named_stream, spawn_seeds

__all__ = [
    "DeviceParams",
    "EnvConfig",
    "GateSynthesisEnv",
    "NoiseConfig",
    "NoiseRealization",
    "ObservationMode",
    "PulseSequence",
    "RewardMode",
    "SacAgent",
    "SacConfig",
    "cnot_target",
    "delta_kernel",
    "evaluate_policy",
    "exchange_coupling",
    "gate_fidelity",
    "gaussian_kernel",
    "haar_unitary",
    "named_stream",
    "nlif",
    "phase_gate_target",
    "single_qubit_env",
    "spawn_seeds",
    "train_loop",
]

__version__ = "0.1.0"
