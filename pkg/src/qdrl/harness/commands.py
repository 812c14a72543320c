"""Experiment commands: training runs, evaluations, sweeps, and analysis.

Every command is a pure function of (config, seed list, input files) and
stamps its outputs with the config hash; reruns are bit-identical apart from
recorded wall times. Commands return their summary dictionaries so they can
be driven programmatically as well as from the command line.
"""
from __future__ import annotations

import dataclasses
import json
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..noise import NoiseConfig
from ..qcore import step_propagator
from ..rlagent import SacAgent, evaluate_policy, train_loop
from ..rlenv import GateSynthesisEnv
from ..seeding import named_stream
from ..tomography import calibrate_sigma_to_shots
from .config import ConfigError, ExperimentConfig, config_from_dict
from .protocol import read_protocol, write_protocol
from .records import EpisodeRecord

__all__ = [
    "cmd_train",
    "cmd_evaluate",
    "cmd_sweep",
    "cmd_scale_sweep",
    "cmd_analyze",
    "cmd_tomo_calibrate",
    "cmd_export_protocol",
    "protocol_to_actions",
    "simulate_protocol",
]


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value)}")


# --------------------------------------------------------------------- train


def cmd_train(config: ExperimentConfig, out: Path | None = None) -> dict:
    """Train one agent per seed; write per-seed logs, checkpoints, and best."""
    out = _ensure_dir(Path(out) if out is not None else config.output_dir)
    cfg_hash = config.hash
    per_seed = []
    for seed in config.seeds:
        env = config.make_env(seed)
        agent = config.make_agent(env, seed)
        log_path = out / f"train_seed{seed}.jsonl"
        t0 = time.perf_counter()
        with open(log_path, "w") as log:

            def emit(rec: dict) -> None:
                record = EpisodeRecord(
                    episode=rec["episode"],
                    seed=seed,
                    episode_return=rec["return"],
                    nlif=rec["nlif"],
                    leakage=rec["leakage"],
                    wall_time_ms=(time.perf_counter() - t0) * 1e3,
                    config_hash=cfg_hash,
                    extras={
                        "alpha": rec["alpha"],
                        "entropy": rec["entropy"],
                        "critic_loss": rec["critic_loss"],
                        "policy_loss": rec["policy_loss"],
                        "env_steps": rec["env_steps"],
                    },
                )
                log.write(record.to_json() + "\n")

            result = train_loop(
                env,
                agent,
                config.budget_episodes,
                seed=seed,
                eval_every=config.eval_every,
                n_eval_episodes=config.n_eval_episodes,
                diagnostic_path=out / f"diagnostic_seed{seed}.npz",
                on_episode=emit,
            )
        entry = {"seed": seed, "episodes": len(result.episodes),
                 "anchor_retries": result.anchor_retries, "log": str(log_path)}
        if config.budget_episodes > 0:
            ckpt = out / f"agent_seed{seed}.npz"
            agent.save(ckpt)
            final = evaluate_policy(env, agent, config.n_eval_episodes)
            entry.update(checkpoint=str(ckpt), **final)
        per_seed.append(entry)

    summary = {"config_hash": cfg_hash, "seeds": per_seed}
    scored = [e for e in per_seed if "mean_nlif" in e]
    if scored:
        best = max(scored, key=lambda e: e["mean_nlif"])
        best_path = out / "agent_best.npz"
        shutil.copyfile(best["checkpoint"], best_path)
        summary["best"] = {"seed": best["seed"], "mean_nlif": best["mean_nlif"],
                           "checkpoint": str(best_path)}
    _write_json(out / "train_summary.json", summary)
    return summary


# ------------------------------------------------------------------ evaluate


def _percentiles(values: np.ndarray) -> dict:
    return {
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
        "p10": float(np.percentile(values, 10)),
        "p50": float(np.percentile(values, 50)),
        "p90": float(np.percentile(values, 90)),
    }


def cmd_evaluate(config: ExperimentConfig, checkpoint: Path, episodes: int | None = None,
                 out: Path | None = None) -> dict:
    """Deterministic-policy evaluation in dynamic and frozen modes.

    Dynamic re-queries the policy every step under fresh noise; frozen replays
    one noise-free pulse table under the same fresh-noise episodes.
    """
    out = _ensure_dir(Path(out) if out is not None else config.output_dir)
    episodes = episodes if episodes is not None else config.resolved["evaluate"]["episodes"]
    try:
        agent = SacAgent.load(checkpoint, expected_config=config.agent)
    except (ValueError, FileNotFoundError) as err:
        raise ConfigError(f"incompatible or unreadable checkpoint {checkpoint}: {err}") from err

    eval_env_cfg = dataclasses.replace(config.env, reward_mode="sparse")
    seed = config.seeds[0]

    # Frozen table: one noise-free closed-loop rollout of the deterministic policy.
    clean_env = config.make_env(seed, noise_override=None, env_override=eval_env_cfg)
    obs = clean_env.reset(seed)
    while not clean_env.done:
        obs = clean_env.step(agent.act(obs, deterministic=True)).observation
    frozen_actions = clean_env.actions_normalized

    env = config.make_env(seed, env_override=eval_env_cfg)
    env.reset(seed)
    dynamic, frozen = [], []
    records = []
    for k in range(episodes):
        obs = env.reset()
        info: dict = {}
        while not env.done:
            result = env.step(agent.act(obs, deterministic=True))
            obs, info = result.observation, result.info
        dynamic.append(info["nlif"])
        frozen.append(env.rollout(frozen_actions).info["nlif"])
        records.append(EpisodeRecord(
            episode=k, seed=seed, episode_return=dynamic[-1], nlif=dynamic[-1],
            leakage=info["leakage"], wall_time_ms=0.0, config_hash=config.hash,
            extras={"frozen_nlif": frozen[-1]},
        ))
    with open(out / "evaluate.jsonl", "w") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")

    dynamic, frozen = np.array(dynamic), np.array(frozen)
    summary = {
        "config_hash": config.hash,
        "episodes": episodes,
        "dynamic_nlif": _percentiles(dynamic),
        "frozen_nlif": _percentiles(frozen),
        "dynamic_infidelity_mean": float(np.mean(10.0 ** -dynamic)),
        "frozen_infidelity_mean": float(np.mean(10.0 ** -frozen)),
    }
    _write_json(out / "evaluate_summary.json", summary)
    return summary


# --------------------------------------------------------------------- sweep


def _run_sweep_cell(resolved: dict, protocol_time: float, n_segments: int,
                    seed: int, budget: int, n_eval: int) -> dict:
    """One (T, N) cell: train a fresh agent, report its evaluation NLIF."""
    config = config_from_dict(resolved)
    cell = {"protocol_time": protocol_time, "n_segments": n_segments, "seed": seed}
    try:
        env_cfg = config.env_for(protocol_time, n_segments)
        if config.device_type == "single_qubit":
            from ..rlenv import single_qubit_env

            env = single_qubit_env(env_cfg, b=config.resolved["device"]["b"], seed=seed)
        else:
            env = GateSynthesisEnv(env_cfg, seed=seed)
        agent = config.make_agent(env, seed)
        train_loop(env, agent, budget, seed=seed)
        final = evaluate_policy(env, agent, n_eval)
        cell.update(status="ok", mean_nlif=final["mean_nlif"],
                    mean_leakage=final["mean_leakage"])
    except Exception as err:  # per-cell failures are recorded, not fatal
        cell.update(status="failed", mean_nlif=None, error=f"{type(err).__name__}: {err}")
    return cell


def cmd_sweep(config: ExperimentConfig, out: Path | None = None, workers: int = 1) -> dict:
    """Grid of training runs over protocol time x action count."""
    out = _ensure_dir(Path(out) if out is not None else config.output_dir)
    spec = config.section("sweep")
    times, segments = spec["times"], spec["segments"]
    if not times or not segments:
        raise ConfigError("sweep requires non-empty 'times' and 'segments' lists")
    budget = spec["budget_episodes"] or config.budget_episodes
    seed = config.seeds[0]
    cells = [(float(t), int(n)) for t in times for n in segments]
    args = [(config.resolved, t, n, seed, budget, config.n_eval_episodes) for t, n in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sweep_cell, *zip(*args)))
    else:
        results = [_run_sweep_cell(*a) for a in args]

    lines = [f"# config_hash={config.hash}",
             "protocol_time_ns\tn_segments\tmean_nlif\tstatus"]
    for cell in results:
        nlif = "nan" if cell["mean_nlif"] is None else repr(cell["mean_nlif"])
        lines.append(f"{cell['protocol_time']}\t{cell['n_segments']}\t{nlif}\t{cell['status']}")
    (out / "sweep.tsv").write_text("\n".join(lines) + "\n")
    summary = {"config_hash": config.hash, "cells": results,
               "n_rows": len(times), "n_cols": len(segments)}
    _write_json(out / "sweep_summary.json", summary)
    return summary


# --------------------------------------------------------------- scale sweep


def protocol_to_actions(detunings: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    """Table rows (device units) -> normalized agent actions, tails stripped."""
    device = config.device
    n = detunings.shape[0]
    if n < 5:
        raise ConfigError(f"protocol table has only {n} rows")
    tail = detunings[-4:]
    if not np.allclose(tail, device.eps_min, atol=1e-9):
        raise ConfigError("protocol tail rows must sit at the minimum detuning rail")
    span = device.eps_max - device.eps_min
    return 2.0 * (detunings[:-4] - device.eps_min) / span - 1.0


def simulate_protocol(config: ExperimentConfig, detunings: np.ndarray,
                      env_cfg=None, seed: int = 0) -> float:
    """Terminal NLIF of a fixed protocol table on a fresh (noise-free) env."""
    env_cfg = env_cfg if env_cfg is not None else dataclasses.replace(
        config.env, reward_mode="sparse", noise=None
    )
    env = config.make_env(seed, env_override=env_cfg)
    return float(env.rollout(protocol_to_actions(detunings, config), seed).info["nlif"])


_NOISE_SUBSETS = {
    "hyperfine": dict(hyperfine_on=True, slow_charge_on=False, fast_charge_on=False),
    "slow_charge": dict(hyperfine_on=False, slow_charge_on=True, fast_charge_on=False),
    "fast_charge": dict(hyperfine_on=False, slow_charge_on=False, fast_charge_on=True),
}


def cmd_scale_sweep(config: ExperimentConfig, protocol_path: Path, mode: str | None = None,
                    out: Path | None = None) -> dict:
    """Infidelity of a fixed protocol vs a scale factor, per noise contribution.

    time_energy mode at scale k multiplies every energy in the Hamiltonian by
    k (exchange prefactor and all gradients) and divides every time quantity
    by k (protocol duration, integration step, kernel delay and width), so the
    noise-free unitary is unchanged while the noise susceptibility shifts.
    noise mode leaves the dynamics alone and multiplies one contribution's
    amplitude by k, with an all-contributions-scaled curve alongside.
    """
    out = _ensure_dir(Path(out) if out is not None else config.output_dir)
    spec = config.section("scale_sweep")
    mode = mode or spec["mode"]
    if mode not in ("time_energy", "noise"):
        raise ConfigError(f"scale-sweep mode must be time_energy or noise, got {mode!r}")
    scales = [float(k) for k in spec["scales"]]
    if not scales:
        raise ConfigError("scale_sweep.scales must be non-empty")
    realizations = int(spec["realizations"])
    detunings, _ = read_protocol(protocol_path)
    actions = protocol_to_actions(detunings, config)
    base_noise = config.build_noise()
    if base_noise is None:
        base_noise = NoiseConfig()
    seed = config.seeds[0]

    clean_env = config.make_env(seed, env_override=dataclasses.replace(
        config.env, reward_mode="sparse", noise=None))
    clean_env.reset(seed)
    noise_free = float(10.0 ** -clean_env.rollout(actions).info["nlif"])

    curves = list(_NOISE_SUBSETS) + ["all"]
    rows = []
    for k in scales:
        row = {"scale": k}
        for name in curves:
            if mode == "noise":
                if name == "all":
                    noise = base_noise.scaled(k)
                else:
                    noise = dataclasses.replace(
                        base_noise, **_NOISE_SUBSETS[name],
                        **{_SCALE_FIELD[name]: k * getattr(base_noise, _SCALE_FIELD[name])},
                    )
                env_cfg = dataclasses.replace(config.env, reward_mode="sparse", noise=noise)
            else:
                noise = (base_noise if name == "all"
                         else dataclasses.replace(base_noise, **_NOISE_SUBSETS[name]))
                # sigma_b is stored relative to the exchange prefactor; with the
                # physical hyperfine field held fixed while every energy grows
                # by k, the relative amplitude drops by k. Charge noise lives in
                # detuning units, which the energy scaling does not touch.
                noise = dataclasses.replace(noise, scale_b=noise.scale_b / k)
                # Gradients are stored in units of j0 and the Hamiltonian
                # multiplies them by j0, so scaling j0 alone scales every
                # energy in the device uniformly.
                device = dataclasses.replace(config.device, j0=k * config.device.j0)
                time_scaled = dataclasses.replace(
                    config.env, device=device, reward_mode="sparse", noise=noise,
                    protocol_time=config.env.protocol_time / k, kernel=None,
                )
                kernel_spec = config.resolved["kernel"]
                if kernel_spec["type"] != "delta":
                    from ..pulse import gaussian_kernel, load_kernel

                    dt = time_scaled.protocol_time / time_scaled.n_segments / time_scaled.oversample
                    if kernel_spec["type"] == "gaussian":
                        kernel = gaussian_kernel(kernel_spec["mean_delay"] / k,
                                                 kernel_spec["stddev"] / k, dt)
                    else:
                        kernel = load_kernel(kernel_spec["path"], dt)
                    time_scaled = dataclasses.replace(time_scaled, kernel=kernel)
                env_cfg = time_scaled
            env = config.make_env(seed, env_override=env_cfg)
            env.reset(seed)
            nlifs = np.array([env.rollout(actions).info["nlif"] for _ in range(realizations)])
            row[name] = float(np.mean(10.0 ** -nlifs))
        rows.append(row)

    lines = [f"# config_hash={config.hash}", f"# mode={mode}",
             f"# noise_free_infidelity={noise_free!r}",
             "scale\t" + "\t".join(f"infidelity_{c}" for c in curves)]
    for row in rows:
        lines.append("\t".join([repr(row["scale"])] + [repr(row[c]) for c in curves]))
    (out / "scale_sweep.tsv").write_text("\n".join(lines) + "\n")
    summary = {"config_hash": config.hash, "mode": mode,
               "noise_free_infidelity": noise_free, "rows": rows}
    _write_json(out / "scale_sweep_summary.json", summary)
    return summary


_SCALE_FIELD = {"hyperfine": "scale_b", "slow_charge": "scale_eps", "fast_charge": "scale_fast"}


# ------------------------------------------------------------------- analyze


_STATE_LABELS = {"00": 0, "01": 1, "10": 2, "11": 3, "0": 0, "1": 1}


def cmd_analyze(config: ExperimentConfig, protocol_path: Path,
                initial_state: str | None = None, out: Path | None = None) -> dict:
    """Per-substep logical Bloch vectors and the protocol's relative fluence."""
    out = _ensure_dir(Path(out) if out is not None else config.output_dir)
    label = initial_state or config.resolved["analyze"]["initial_state"]
    if label not in _STATE_LABELS:
        raise ConfigError(f"unknown initial state {label!r}; use 00/01/10/11 (or 0/1)")
    detunings, _ = read_protocol(protocol_path)
    actions = protocol_to_actions(detunings, config)

    env = config.make_env(config.seeds[0], noise_override=None,
                          env_override=dataclasses.replace(config.env, reward_mode="sparse"))
    model = env.model
    nlif_final = float(env.rollout(actions, config.seeds[0]).info["nlif"])
    shaped = env._final_shaped()
    dt = env.config.dt

    h = model.hamiltonians(shaped)
    steps = step_propagator(h, dt)
    dim = model.sim_dim
    states = np.empty((steps.shape[0] + 1, dim), dtype=complex)
    state0 = np.zeros(dim, dtype=complex)
    state0[model.block_indices[_STATE_LABELS[label]]] = 1.0
    states[0] = state0
    for m in range(steps.shape[0]):
        states[m + 1] = steps[m] @ states[m]

    times = np.arange(states.shape[0]) * dt
    block = np.asarray(model.block_indices)
    amplitudes = states[:, block]
    norms = np.sum(np.abs(amplitudes) ** 2, axis=1)
    if dim == 6:
        from ..qcore import pauli_expectations

        bloch = pauli_expectations(states).reshape(states.shape[0], 6)
        header = ["time_ns", "q1_x", "q1_y", "q1_z", "q2_x", "q2_y", "q2_z", "block_norm"]
    else:
        paulis = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]])
        bloch = np.real(np.einsum("mi,aij,mj->ma", np.conj(amplitudes), paulis, amplitudes))
        header = ["time_ns", "q1_x", "q1_y", "q1_z", "block_norm"]

    lines = [f"# config_hash={config.hash}", f"# initial_state={label}",
             "\t".join(header)]
    for m in range(states.shape[0]):
        row = [repr(float(times[m]))] + [repr(float(v)) for v in bloch[m]]
        row.append(repr(float(norms[m])))
        lines.append("\t".join(row))
    (out / "bloch.tsv").write_text("\n".join(lines) + "\n")

    device = config.device
    span = device.eps_max - device.eps_min
    fluence = float(np.sum((shaped - device.eps_min) ** 2) * dt)
    fluence_max = span**2 * env.config.protocol_time * env.config.n_channels
    summary = {
        "config_hash": config.hash,
        "initial_state": label,
        "terminal_nlif": nlif_final,
        "final_bloch": [float(v) for v in bloch[-1]],
        "final_block_norm": float(norms[-1]),
        "fluence": fluence,
        "fluence_relative": fluence / fluence_max,
    }
    _write_json(out / "analyze_summary.json", summary)
    return summary


# ------------------------------------------------------------ tomo calibrate


def cmd_tomo_calibrate(config: ExperimentConfig, out: Path | None = None) -> dict:
    """Fit the snapshot-budget <-> surrogate-noise equivalence and persist it."""
    out = _ensure_dir(Path(out) if out is not None else config.output_dir)
    spec = config.section("tomo")
    rng = named_stream(config.seeds[0], "tomo-calibrate")
    mapping = calibrate_sigma_to_shots(
        int(spec["dim"]), spec["shots"], spec["sigmas"], rng, n_trials=int(spec["trials"])
    )
    map_path = out / "sigma_shots.json"
    mapping.save(map_path)
    summary = {
        "config_hash": config.hash,
        "map_file": str(map_path),
        "dim": mapping.dim,
        "shots_slope": mapping.shots_slope,
        "sigma_slope": mapping.sigma_slope,
        "sigma_for_1e5_shots": mapping.sigma_for_shots(1e5),
    }
    _write_json(out / "tomo_calibrate_summary.json", summary)
    return summary


# ------------------------------------------------------------ export protocol


def cmd_export_protocol(config: ExperimentConfig, checkpoint: Path,
                        noise_seed: int | None = None, out: Path | None = None) -> dict:
    """Roll out the deterministic policy and write its pulse table in mV."""
    out = _ensure_dir(Path(out) if out is not None else config.output_dir)
    try:
        agent = SacAgent.load(checkpoint, expected_config=config.agent)
    except (ValueError, FileNotFoundError) as err:
        raise ConfigError(f"incompatible or unreadable checkpoint {checkpoint}: {err}") from err
    eval_cfg = dataclasses.replace(config.env, reward_mode="sparse")
    if noise_seed is None:
        env = config.make_env(config.seeds[0], noise_override=None, env_override=eval_cfg)
        reset_seed = config.seeds[0]
    else:
        env = config.make_env(noise_seed, env_override=eval_cfg)
        reset_seed = noise_seed
    obs = env.reset(reset_seed)
    info: dict = {}
    while not env.done:
        result = env.step(agent.act(obs, deterministic=True))
        obs, info = result.observation, result.info

    sequence = env.pulse_sequence()
    shaped = env._final_shaped()
    n_sub = env.config.n_substeps // env.config.n_segments
    preview = shaped[n_sub // 2 :: n_sub][: env.config.n_segments]
    meta = {
        "config_hash": config.hash,
        "terminal_nlif": info["nlif"],
        "leakage": info["leakage"],
        "noise_seed": "none" if noise_seed is None else noise_seed,
    }
    path = out / "protocol.tsv"
    write_protocol(path, sequence.amplitudes, config.device.eps0,
                   sequence.sample_period, meta, shaped_preview=preview)
    summary = {"protocol": str(path), **meta}
    _write_json(out / "export_summary.json", summary)
    return summary
