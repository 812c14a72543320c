"""Episode environment for shaped-pulse gate synthesis on the simulated device.

An episode is one protocol of N segments, each held for T_s = T/N. The agent
chooses the first N - 4 segment amplitude vectors (one value per control
channel, normalized to [-1, 1]); the final four segments are pinned to the low
rail so the transmission-line response settles before the protocol ends. Every
step re-shapes the full pulse prefix through the kernel and advances the
Trotter product to the current segment boundary, so mid-episode unitary
payloads include the ringing of earlier edges. Intermediate rewards are zero;
the terminal reward scores the final computational block against the target
gate as a capped negative log infidelity (NLIF).

Observation modes (payload after the time-to-go entry and, except for the
first mode, the current pulse amplitudes):

    U_EXACT               the episode's actual evolution, no pulse entries
    U_PLUS_PULSE          the episode's actual evolution
    U_NOISY_PLUS_PULSE    the noisy evolution (equals the clean one when
                          noise is off)
    U_NOISEFREE_PLUS_PULSE, U_TOMO_PLUS_PULSE
                          the noise-free evolution (step-wise tomography is
                          not experimentally available, so tomographic
                          training sees the clean payload and only the
                          terminal reward uses reconstruction)
    PULSE_HISTORY         all past actions, zero-padded, with a validity flag

"Actual evolution" means noisy when a noise model is configured and clean
otherwise. Unitary payloads are the flattened real and imaginary parts of the
computational block (the full sector matrix behind `sector_payload`, for
ablations).

Reward modes, all computed at the terminal step:

    SPARSE           NLIF of the episode's actual final evolution
    ROBUST_AVG       mean NLIF over n_realizations fresh noise realizations
                     of the same protocol
    TOMO_SNAPSHOT    NLIF of the unitary reconstructed from n_snapshots
                     single-shot measurements, each taken on a fresh noisy
                     realization of the protocol
    GAUSS_SURROGATE  like ROBUST_AVG with each block perturbed by the
                     additive-Gaussian measurement surrogate before scoring
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tomography
from .noise import NoiseConfig, sample_realization
from .pulse import (
    TAIL_SEGMENTS,
    ImpulseKernel,
    PulseSequence,
    assemble_sequence,
    convolve,
    delta_kernel,
    oversample,
)
from .qcore import (
    DEFAULT_NLIF_CAP,
    SIM_DIM,
    COMP_INDICES,
    DeviceParams,
    block_leakage,
    cnot_target,
    exchange_coupling,
    is_unitary,
    nlif,
    phase_gate_target,
    sector_hamiltonian,
    step_propagator,
)
from .seeding import named_stream

__all__ = [
    "ObservationMode",
    "RewardMode",
    "EnvConfig",
    "StepResult",
    "GateSynthesisEnv",
    "TwoQubitModel",
    "SingleQubitModel",
    "single_qubit_env",
]

# realizations evolved per batch in Monte Carlo rewards, bounding the
# (chunk * substeps, dim, dim) eigendecomposition workspace
_REWARD_CHUNK = 512


class ObservationMode(enum.Enum):
    U_EXACT = "u_exact"
    U_PLUS_PULSE = "u_plus_pulse"
    PULSE_HISTORY = "pulse_history"
    U_NOISY_PLUS_PULSE = "u_noisy_plus_pulse"
    U_NOISEFREE_PLUS_PULSE = "u_noisefree_plus_pulse"
    U_TOMO_PLUS_PULSE = "u_tomo_plus_pulse"


class RewardMode(enum.Enum):
    SPARSE = "sparse"
    ROBUST_AVG = "robust_avg"
    TOMO_SNAPSHOT = "tomo_snapshot"
    GAUSS_SURROGATE = "gauss_surrogate"


class TwoQubitModel:
    """The four-dot device: 6-dim sector, 4-dim computational block, 3 channels."""

    sim_dim = SIM_DIM
    block_indices = COMP_INDICES
    n_channels = 3
    n_gradients = 3

    def __init__(self, params: DeviceParams):
        self.params = params

    def hamiltonians(self, detunings: np.ndarray, delta_b: np.ndarray | None = None):
        """H stack for detunings (..., 3) with optional gradient offsets.

        delta_b, units of j0, broadcasts against the leading axes of
        detunings minus the substep axis: a (R, 3) offset batch pairs with
        (R, M, 3) detunings.
        """
        j = exchange_coupling(np.asarray(detunings, dtype=float), self.params)
        grads = self.params.gradients
        if delta_b is not None:
            grads = grads + np.asarray(delta_b, dtype=float)
        if grads.ndim > 1:
            grads = grads[..., None, :]
        return sector_hamiltonian(j, self.params.j0 * grads)

    def default_target(self) -> np.ndarray:
        return cnot_target()


class SingleQubitModel:
    """One singlet-triplet qubit: H = J(eps)/2 sigma_z + b/2 sigma_x.

    The exchange map and detuning bounds come from the same DeviceParams;
    b is the transverse gradient in units of j0. Hyperfine noise offsets b,
    charge noise offsets the detuning, exactly as in the two-qubit model.
    """

    sim_dim = 2
    block_indices = (0, 1)
    n_channels = 1
    n_gradients = 1

    def __init__(self, params: DeviceParams, b: float = 1.0):
        self.params = params
        self.b = b

    def hamiltonians(self, detunings: np.ndarray, delta_b: np.ndarray | None = None):
        eps = np.asarray(detunings, dtype=float)
        if eps.shape[-1] != 1:
            raise ValueError(f"single-qubit drive has 1 channel, got {eps.shape[-1]}")
        j = exchange_coupling(eps[..., 0], self.params)
        b_eff = np.asarray(self.b, dtype=float)
        if delta_b is not None:
            b_eff = b_eff + np.asarray(delta_b, dtype=float)[..., 0]
        bx = self.params.j0 * np.broadcast_to(b_eff[..., None], j.shape)
        h = np.zeros(j.shape + (2, 2))
        h[..., 0, 0] = j / 2.0
        h[..., 1, 1] = -j / 2.0
        h[..., 0, 1] = bx / 2.0
        h[..., 1, 0] = bx / 2.0
        return h

    def default_target(self) -> np.ndarray:
        return phase_gate_target()


@dataclass(frozen=True, eq=False)
class EnvConfig:
    """Everything that defines an episode distribution.

    protocol_time T is in ns; n_segments N includes the four pinned tail
    segments, so the agent takes N - 4 actions; oversample n sets the substep
    resolution dt = (T/N)/n. kernel = None means an ideal (delta) response.
    noise = None disables every noise channel. target = None selects the
    model's default gate (CNOT for the two-qubit device).
    """

    device: DeviceParams = field(default_factory=DeviceParams)
    kernel: ImpulseKernel | None = None
    protocol_time: float = 50.0
    n_segments: int = 50
    oversample: int = 10
    n_channels: int = 3
    target: np.ndarray | None = None
    observation_mode: ObservationMode = ObservationMode.U_PLUS_PULSE
    reward_mode: RewardMode = RewardMode.SPARSE
    noise: NoiseConfig | None = None
    n_realizations: int = 10
    n_snapshots: int = 100_000
    sigma: float = 0.0
    nlif_cap: float = DEFAULT_NLIF_CAP
    sector_payload: bool = False

    def __post_init__(self) -> None:
        if self.n_segments < TAIL_SEGMENTS + 1:
            raise ValueError(
                f"need n_segments >= {TAIL_SEGMENTS + 1} "
                f"({TAIL_SEGMENTS} tail segments + at least one action), got {self.n_segments}"
            )
        if self.protocol_time <= 0:
            raise ValueError(f"protocol_time must be positive, got {self.protocol_time}")
        if self.oversample < 1:
            raise ValueError(f"oversample must be >= 1, got {self.oversample}")
        if self.n_channels < 1:
            raise ValueError(f"n_channels must be >= 1, got {self.n_channels}")
        if self.n_realizations < 1:
            raise ValueError(f"n_realizations must be >= 1, got {self.n_realizations}")
        if self.n_snapshots < 1:
            raise ValueError(f"n_snapshots must be >= 1, got {self.n_snapshots}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.nlif_cap <= 0:
            raise ValueError(f"nlif_cap must be positive, got {self.nlif_cap}")
        if not isinstance(self.observation_mode, ObservationMode):
            object.__setattr__(self, "observation_mode", ObservationMode(self.observation_mode))
        if not isinstance(self.reward_mode, RewardMode):
            object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))

    @property
    def sample_period(self) -> float:
        return self.protocol_time / self.n_segments

    @property
    def dt(self) -> float:
        return self.sample_period / self.oversample

    @property
    def n_substeps(self) -> int:
        return self.n_segments * self.oversample

    @property
    def n_actions(self) -> int:
        return self.n_segments - TAIL_SEGMENTS


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class GateSynthesisEnv:
    """Gate-synthesis episodes over a device model.

    Deterministic: (config, reset seed, action sequence) fully determines
    observations and rewards, including all reward-side Monte Carlo. reset()
    without a seed starts a fresh episode on the same stream; reset(seed=s)
    rewinds the stream, so two same-seed resets replay identically.
    """

    def __init__(self, config: EnvConfig, model=None, seed: int = 0):
        self.config = config
        self.model = model if model is not None else TwoQubitModel(config.device)
        if config.n_channels != self.model.n_channels:
            raise ValueError(
                f"config has {config.n_channels} channels but the model "
                f"drives {self.model.n_channels}"
            )
        block_dim = len(self.model.block_indices)
        target = config.target if config.target is not None else self.model.default_target()
        target = np.asarray(target, dtype=complex)
        if target.shape != (block_dim, block_dim):
            raise ValueError(
                f"target shape {target.shape} does not match the "
                f"computational block ({block_dim}, {block_dim})"
            )
        if not is_unitary(target):
            raise ValueError("target gate must be unitary")
        self.target = target
        kernel = config.kernel if config.kernel is not None else delta_kernel(config.dt)
        if abs(kernel.dt - config.dt) > 1e-9 * config.dt:
            raise ValueError(
                f"kernel is sampled at dt = {kernel.dt}, the substep grid is {config.dt}"
            )
        self.kernel = kernel
        self._noise = config.noise if config.noise is not None and not config.noise.quiet else None
        self._track_noisy = self._noise is not None and (
            config.observation_mode
            in (
                ObservationMode.U_EXACT,
                ObservationMode.U_PLUS_PULSE,
                ObservationMode.U_NOISY_PLUS_PULSE,
            )
            or config.reward_mode is RewardMode.SPARSE
        )
        if config.reward_mode is RewardMode.TOMO_SNAPSHOT:
            if config.n_snapshots < 2 * block_dim**2:
                raise ValueError(
                    f"tomographic reward needs n_snapshots >= {2 * block_dim ** 2} "
                    f"(2 d^2) to invert, got {config.n_snapshots}"
                )
            self._povm = tomography.build_povm(block_dim)
            self._probes = tomography.probe_states(block_dim)
        else:
            self._povm = None
            self._probes = None
        self._block_idx = np.asarray(self.model.block_indices)
        self.observation_size = len(self.reset(seed))

    # ------------------------------------------------------------------ API

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = named_stream(seed, "env")
        self._actions: list[np.ndarray] = []
        self._u_clean = np.eye(self.model.sim_dim, dtype=complex)
        self._u_noisy = np.eye(self.model.sim_dim, dtype=complex)
        self._substeps_done = 0
        self._done = False
        if self._track_noisy:
            self._realization = sample_realization(
                self._noise,
                self._rng,
                self.config.n_substeps,
                self.config.dt,
                n_gradients=self.model.n_gradients,
                n_channels=self.config.n_channels,
            )
        else:
            self._realization = None
        return self._observe()

    def step(self, action) -> StepResult:
        if self._done:
            raise RuntimeError("episode is done; call reset() before stepping again")
        action = np.clip(np.asarray(action, dtype=float).reshape(-1), -1.0, 1.0)
        if action.shape != (self.config.n_channels,):
            raise ValueError(
                f"action must have {self.config.n_channels} channels, got shape {action.shape}"
            )
        self._actions.append(action)
        terminal = len(self._actions) == self.config.n_actions
        self._advance_evolution(include_tail=terminal)
        u_actual = self._u_noisy if self._track_noisy else self._u_clean
        block = self._block(u_actual)
        info = {
            "nlif": nlif(block, self.target, self.config.nlif_cap),
            "leakage": block_leakage(u_actual[self._block_idx[:, None], self._block_idx]),
        }
        reward = 0.0
        if terminal:
            self._done = True
            reward = self._terminal_reward()
            info["terminal_reward"] = reward
        return StepResult(self._observe(), reward, terminal, info)

    def rollout(self, actions: Sequence, seed: int | None = None) -> StepResult:
        """Reset and play a full action table; returns the terminal result."""
        actions = np.asarray(actions, dtype=float)
        if actions.ndim == 1:
            actions = actions[:, None]
        if actions.shape != (self.config.n_actions, self.config.n_channels):
            raise ValueError(
                f"expected actions of shape {(self.config.n_actions, self.config.n_channels)}, "
                f"got {actions.shape}"
            )
        self.reset(seed)
        for row in actions[:-1]:
            self.step(row)
        return self.step(actions[-1])

    @property
    def done(self) -> bool:
        return self._done

    @property
    def actions_normalized(self) -> np.ndarray:
        """Actions taken so far, (k, C) in [-1, 1]."""
        if not self._actions:
            return np.zeros((0, self.config.n_channels))
        return np.stack(self._actions)

    def pulse_sequence(self) -> PulseSequence:
        """The full assembled protocol; only valid once the episode is done."""
        if not self._done:
            raise RuntimeError("episode still running; the pulse table is incomplete")
        return assemble_sequence(
            self._to_detunings(self.actions_normalized),
            self.model.params,
            self.config.n_segments,
            self.config.sample_period,
        )

    # ------------------------------------------------------------ evolution

    def _to_detunings(self, normalized: np.ndarray) -> np.ndarray:
        p = self.model.params
        return p.eps_min + (normalized + 1.0) * 0.5 * (p.eps_max - p.eps_min)

    def _shaped_prefix(self, include_tail: bool) -> np.ndarray:
        """Shaped substep detunings of everything chosen so far, (m, C)."""
        eps = self._to_detunings(self.actions_normalized)
        if include_tail:
            seq = assemble_sequence(
                eps, self.model.params, self.config.n_segments, self.config.sample_period
            )
        else:
            seq = PulseSequence(eps, self.config.sample_period)
        trace = oversample(seq, self.config.oversample)
        return convolve(trace, self.kernel, baseline=self.model.params.eps_min).values

    def _advance_evolution(self, include_tail: bool) -> None:
        shaped = self._shaped_prefix(include_tail)
        lo, hi = self._substeps_done, shaped.shape[0]
        # the kernel is causal, so rows [0, lo) are unchanged from previous
        # steps and the product only needs the new substeps
        fresh = shaped[lo:hi]
        self._u_clean = self._fold(self.model.hamiltonians(fresh), self._u_clean)
        if self._track_noisy:
            noisy = (
                fresh
                + self._realization.delta_eps[None, :]
                + self._realization.fast[lo:hi]
            )
            h = self.model.hamiltonians(noisy, self._realization.delta_b)
            self._u_noisy = self._fold(h, self._u_noisy)
        self._substeps_done = hi

    def _fold(self, hamiltonians: np.ndarray, u: np.ndarray) -> np.ndarray:
        steps = step_propagator(hamiltonians, self.config.dt)
        for m in range(steps.shape[0]):
            u = steps[m] @ u
        return u

    def _block(self, u: np.ndarray) -> np.ndarray:
        if self.config.sector_payload:
            return u
        return u[..., self._block_idx[:, None], self._block_idx[None, :]]

    # ---------------------------------------------------------- observation

    def _observe(self) -> np.ndarray:
        cfg = self.config
        k = len(self._actions)
        parts = [np.array([(cfg.n_actions - k) / cfg.n_actions])]
        if cfg.observation_mode is not ObservationMode.U_EXACT:
            # the device parks at the low rail before the first action
            current = self._actions[-1] if self._actions else -np.ones(cfg.n_channels)
            parts.append(current)
        if cfg.observation_mode is ObservationMode.PULSE_HISTORY:
            history = np.zeros((cfg.n_actions, cfg.n_channels + 1))
            if k:
                history[:k, : cfg.n_channels] = self.actions_normalized
                history[:k, cfg.n_channels] = 1.0
            parts.append(history.ravel())
        else:
            if cfg.observation_mode in (
                ObservationMode.U_EXACT,
                ObservationMode.U_PLUS_PULSE,
            ):
                u = self._u_noisy if self._track_noisy else self._u_clean
            elif cfg.observation_mode is ObservationMode.U_NOISY_PLUS_PULSE:
                u = self._u_noisy if self._track_noisy else self._u_clean
            else:  # U_NOISEFREE_PLUS_PULSE, U_TOMO_PLUS_PULSE
                u = self._u_clean
            payload = self._block(u)
            parts.append(payload.real.ravel())
            parts.append(payload.imag.ravel())
        return np.concatenate(parts)

    # --------------------------------------------------------------- reward

    def _terminal_reward(self) -> float:
        mode = self.config.reward_mode
        if mode is RewardMode.SPARSE:
            u = self._u_noisy if self._track_noisy else self._u_clean
            return float(nlif(self._final_block(u), self.target, self.config.nlif_cap))
        if mode is RewardMode.ROBUST_AVG:
            blocks = self._noisy_final_blocks(self.config.n_realizations)
            return float(np.mean(nlif(blocks, self.target, self.config.nlif_cap)))
        if mode is RewardMode.GAUSS_SURROGATE:
            blocks = self._noisy_final_blocks(self.config.n_realizations)
            vals = [
                nlif(
                    tomography.gaussian_surrogate(b, self.config.sigma, self._rng),
                    self.target,
                    self.config.nlif_cap,
                )
                for b in blocks
            ]
            return float(np.mean(vals))
        # TOMO_SNAPSHOT: every shot measures a fresh noisy realization
        record = self._sample_protocol_snapshots(self.config.n_snapshots)
        est = tomography.reconstruct_unitary(record, self._povm, self._probes)
        return float(nlif(est, self.target, self.config.nlif_cap))

    def _final_block(self, u: np.ndarray) -> np.ndarray:
        return u[..., self._block_idx[:, None], self._block_idx[None, :]]

    def _final_shaped(self) -> np.ndarray:
        return self._shaped_prefix(include_tail=True)

    def _noisy_final_blocks(self, count: int) -> np.ndarray:
        """Computational blocks of `count` fresh-noise evolutions, (count, d, d)."""
        shaped = self._final_shaped()
        if self._noise is None:
            blocks = self._final_block(self._evolve_batch(shaped[None]))
            return np.broadcast_to(blocks, (count,) + blocks.shape[1:])
        out = []
        for start in range(0, count, _REWARD_CHUNK):
            r = min(_REWARD_CHUNK, count - start)
            delta_b, delta_eps, fast = self._draw_noise_batch(r, shaped.shape[0])
            dets = shaped[None] + delta_eps[:, None, :] + fast
            out.append(self._final_block(self._evolve_batch(dets, delta_b)))
        return np.concatenate(out)

    def _draw_noise_batch(self, r: int, m: int):
        realizations = [
            sample_realization(
                self._noise,
                self._rng,
                m,
                self.config.dt,
                n_gradients=self.model.n_gradients,
                n_channels=self.config.n_channels,
            )
            for _ in range(r)
        ]
        delta_b = np.stack([z.delta_b for z in realizations])
        delta_eps = np.stack([z.delta_eps for z in realizations])
        fast = np.stack([z.fast for z in realizations])
        return delta_b, delta_eps, fast

    def _evolve_batch(self, dets: np.ndarray, delta_b: np.ndarray | None = None):
        """Final propagators for detuning batches (..., M, C) -> (..., dim, dim)."""
        steps = step_propagator(self.model.hamiltonians(dets, delta_b), self.config.dt)
        u = steps[..., 0, :, :]
        for m in range(1, steps.shape[-3]):
            u = steps[..., m, :, :] @ u
        return u

    def _sample_protocol_snapshots(self, n_shots: int) -> tomography.MeasurementRecord:
        if self._noise is None:
            block = self._final_block(self._evolve_batch(self._final_shaped()[None]))[0]
            return tomography.sample_snapshots(
                block, n_shots, self._povm, self._rng, self._probes
            )
        counts = None
        leaks = None
        for start in range(0, n_shots, _REWARD_CHUNK):
            r = min(_REWARD_CHUNK, n_shots - start)
            blocks = self._noisy_final_blocks(r)
            rec = tomography.sample_snapshots_batch(blocks, self._povm, self._rng, self._probes)
            counts = rec.counts if counts is None else counts + rec.counts
            leaks = rec.leak_counts if leaks is None else leaks + rec.leak_counts
        return tomography.MeasurementRecord(counts, leaks, n_shots)


def single_qubit_env(
    config: EnvConfig | None = None, b: float = 1.0, seed: int = 0
) -> GateSynthesisEnv:
    """The one-qubit benchmark: 10 ns protocol, 20 actions, phase-gate target.

    The default configuration is noise-free; robustness studies pass a
    NoiseConfig with only the hyperfine channel enabled (drift on b), which is
    the regime the benchmark is defined in. Charge-noise channels work too if
    explicitly requested.
    """
    if config is None:
        config = EnvConfig(
            protocol_time=10.0,
            n_segments=20 + TAIL_SEGMENTS,
            n_channels=1,
            target=phase_gate_target(),
        )
    if config.n_channels != 1:
        raise ValueError(f"the single-qubit device has 1 channel, got {config.n_channels}")
    return GateSynthesisEnv(config, model=SingleQubitModel(config.device, b=b), seed=seed)
