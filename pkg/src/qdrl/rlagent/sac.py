"""Soft actor-critic with truncated-quantile critics, on the numpy networks.

The agent keeps an ensemble of distributional critics; bootstrap targets pool
the target-network quantiles, sort them, and keep only the smallest few, which
curbs the overestimation bias that plain soft actor-critic inherits from max
bootstrapping. The policy ascends the untruncated pooled critic mean plus an
entropy bonus whose temperature is auto-tuned toward a target entropy (a fixed
temperature is also supported).

`train_loop` interleaves acting, replay writes, and one gradient update per
environment step, with a uniform-random warmup, periodic deterministic
evaluation, per-episode metric records, a divergence guard that snapshots the
agent before aborting, and retry-with-logging for episodes whose tomography
reward fails reconstruction.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..seeding import named_stream
from ..tomography import DegenerateAnchorError
from .nets import Adam, GaussianPolicy, QuantileCritic, quantile_huber_loss

__all__ = [
    "SacConfig",
    "ReplayBuffer",
    "SacAgent",
    "DivergenceError",
    "TrainResult",
    "polyak_update",
    "config_hash",
    "train_loop",
    "evaluate_policy",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SacConfig:
    """Hyperparameters for the agent and its training loop."""

    hidden: tuple[int, ...] = (512, 512)
    gamma: float = 0.99
    polyak: float = 0.005  # target <- polyak * online + (1 - polyak) * target
    learning_rate: float = 5e-4
    batch_size: int = 256
    replay_capacity: int = 100_000
    warmup_steps: int = 1000
    updates_per_step: int = 1
    n_critics: int = 2
    n_quantiles: int = 46
    kept_quantiles: int = 25
    dropout: float = 0.01
    temperature: float | None = None  # None: auto-tune toward target_entropy
    target_entropy: float | None = None  # None: -(action dimension)
    init_temperature: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid hidden sizes {self.hidden}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 < self.polyak <= 1.0:
            raise ValueError(f"polyak rate must be in (0, 1], got {self.polyak}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.n_critics < 1 or self.n_quantiles < 1:
            raise ValueError("need at least one critic and one quantile")
        if not 1 <= self.kept_quantiles <= self.n_critics * self.n_quantiles:
            raise ValueError(
                f"kept_quantiles must be in [1, {self.n_critics * self.n_quantiles}], "
                f"got {self.kept_quantiles}"
            )
        if self.batch_size < 1 or self.batch_size > self.replay_capacity:
            raise ValueError("batch size must fit in the replay buffer")
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError("fixed temperature must be positive")
        if self.init_temperature <= 0:
            raise ValueError("initial temperature must be positive")


def config_hash(config: SacConfig) -> str:
    """Stable digest of the full configuration, for checkpoint compatibility."""
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._obs = np.zeros((capacity, obs_dim))
        self._act = np.zeros((capacity, act_dim))
        self._reward = np.zeros(capacity)
        self._next_obs = np.zeros((capacity, obs_dim))
        self._done = np.zeros(capacity)
        self._size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs, act, reward: float, next_obs, done: bool) -> None:
        i = self._pos
        self._obs[i] = obs
        self._act[i] = act
        self._reward[i] = reward
        self._next_obs[i] = next_obs
        self._done[i] = float(done)
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Uniform sample without replacement within the batch."""
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from {self._size} transitions")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return {
            "obs": self._obs[idx].copy(),
            "act": self._act[idx].copy(),
            "reward": self._reward[idx].copy(),
            "next_obs": self._next_obs[idx].copy(),
            "done": self._done[idx].copy(),
        }


def polyak_update(source_params, target_params, rho: float) -> None:
    """target <- rho * source + (1 - rho) * target, element-wise in place."""
    for src, tgt in zip(source_params, target_params, strict=True):
        tgt[...] = rho * src + (1.0 - rho) * tgt


class DivergenceError(RuntimeError):
    """A loss or temperature went non-finite during an update."""

    def __init__(self, message: str, metrics: dict | None = None):
        super().__init__(message)
        self.metrics = metrics or {}


class SacAgent:
    """Policy, critic ensemble, target networks, optimizers, and temperature."""

    def __init__(self, obs_dim: int, act_dim: int, config: SacConfig | None = None, seed: int = 0):
        self.config = config or SacConfig()
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        cfg = self.config
        init_rng = named_stream(seed, "agent-init")
        self.policy = GaussianPolicy(init_rng, obs_dim, act_dim, cfg.hidden)
        self.critics = [
            QuantileCritic(init_rng, obs_dim, act_dim, cfg.hidden, cfg.n_quantiles, cfg.dropout)
            for _ in range(cfg.n_critics)
        ]
        self.target_critics = copy.deepcopy(self.critics)
        self.policy_opt = Adam(self.policy.params(), cfg.learning_rate)
        self.critic_opts = [Adam(c.params(), cfg.learning_rate) for c in self.critics]
        self.auto_temperature = cfg.temperature is None
        self.log_alpha = np.array([np.log(cfg.init_temperature)])
        self.alpha_opt = Adam([self.log_alpha], cfg.learning_rate) if self.auto_temperature else None
        self.target_entropy = (
            cfg.target_entropy if cfg.target_entropy is not None else -float(act_dim)
        )
        self._rng = named_stream(seed, "agent")
        self.updates_done = 0

    # --------------------------------------------------------------- acting

    @property
    def alpha(self) -> float:
        if self.auto_temperature:
            return float(np.exp(self.log_alpha[0]))
        return float(self.config.temperature)

    def act(self, obs, deterministic: bool = False) -> np.ndarray:
        obs = np.asarray(obs, dtype=float).reshape(1, -1)
        if deterministic:
            return self.policy.deterministic(obs)[0]
        action, _ = self.policy.sample(obs, self._rng)
        return action[0]

    # ------------------------------------------------------------- learning

    def critic_targets(self, batch: dict[str, np.ndarray]) -> np.ndarray:
        """Bootstrap atoms (batch, kept_quantiles); never differentiated."""
        cfg = self.config
        next_obs = batch["next_obs"]
        xi = self._rng.normal(size=(next_obs.shape[0], self.act_dim))
        next_act, next_logp, _ = self.policy.sample_cached(next_obs, xi)
        pooled = np.concatenate(
            [t.forward(next_obs, next_act)[0] for t in self.target_critics], axis=1
        )
        atoms = np.sort(pooled, axis=1)[:, : cfg.kept_quantiles]
        soft_value = atoms - self.alpha * next_logp[:, None]
        scale = cfg.gamma * (1.0 - batch["done"])[:, None]
        return batch["reward"][:, None] + scale * soft_value

    def update(self, batch: dict[str, np.ndarray]) -> dict[str, float]:
        """One gradient step on critics, policy, and temperature; then polyak."""
        cfg = self.config
        obs, act = batch["obs"], batch["act"]
        n = obs.shape[0]

        targets = self.critic_targets(batch)
        critic_loss = 0.0
        for critic, opt in zip(self.critics, self.critic_opts):
            critic.zero_grads()
            z, cache = critic.forward(obs, act, train=True, rng=self._rng)
            loss, dz = quantile_huber_loss(z, targets)
            critic.backward(dz, cache)
            opt.step(critic.grads())
            critic_loss += loss / cfg.n_critics

        # Policy: maximize pooled critic mean plus entropy bonus. Dropout stays
        # off here; the stochastic regularizer belongs to critic fitting only.
        self.policy.zero_grads()
        xi = self._rng.normal(size=(n, self.act_dim))
        new_act, logp, cache = self.policy.sample_cached(obs, xi)
        total_atoms = cfg.n_critics * cfg.n_quantiles
        q_sum = np.zeros(n)
        d_act = np.zeros_like(new_act)
        for critic in self.critics:
            z, z_cache = critic.forward(obs, new_act)
            q_sum += z.sum(axis=1)
            _, da = critic.backward(np.full_like(z, -1.0 / (n * total_atoms)), z_cache)
            d_act += da
        q_mean = q_sum / total_atoms
        policy_loss = float(np.mean(self.alpha * logp - q_mean))
        self.policy.backward(d_act, np.full(n, self.alpha / n), cache)
        self.policy_opt.step(self.policy.grads())

        entropy = -float(np.mean(logp))
        if self.auto_temperature:
            # d/d(log alpha) of -alpha * (E[log pi] + target): entropy above
            # target pushes alpha down, below target pushes it up.
            residual = float(np.mean(logp)) + self.target_entropy
            self.alpha_opt.step([np.array([-self.alpha * residual])])

        for critic, target in zip(self.critics, self.target_critics):
            polyak_update(critic.params(), target.params(), cfg.polyak)

        self.updates_done += 1
        metrics = {
            "critic_loss": critic_loss,
            "policy_loss": policy_loss,
            "alpha": self.alpha,
            "entropy": entropy,
            "q_mean": float(np.mean(q_mean)),
            "target_mean": float(np.mean(targets)),
        }
        if not all(np.isfinite(v) for v in metrics.values()):
            raise DivergenceError(f"non-finite update metrics: {metrics}", metrics)
        return metrics

    # ----------------------------------------------------------- checkpoints

    def _named_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}

        def put(prefix, items):
            for i, a in enumerate(items):
                arrays[f"{prefix}.{i}"] = a

        put("policy", self.policy.params())
        put("policy_opt", self.policy_opt.state_arrays())
        for c, (critic, target, opt) in enumerate(
            zip(self.critics, self.target_critics, self.critic_opts)
        ):
            put(f"critic{c}", critic.params())
            put(f"target{c}", target.params())
            put(f"critic{c}_opt", opt.state_arrays())
        arrays["log_alpha"] = self.log_alpha
        if self.alpha_opt is not None:
            put("alpha_opt", self.alpha_opt.state_arrays())
        return arrays

    def save(self, path) -> None:
        """Versioned checkpoint: weights, optimizer state, config, and its hash."""
        meta = {
            "version": CHECKPOINT_VERSION,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "config": dataclasses.asdict(self.config),
            "config_hash": config_hash(self.config),
            "updates_done": self.updates_done,
        }
        arrays = self._named_arrays()
        np.savez(path, meta_json=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path, expected_config: SacConfig | None = None,
             allow_config_mismatch: bool = False, seed: int = 0) -> "SacAgent":
        """Rebuild an agent from a checkpoint.

        If `expected_config` is given, its hash must match the one stored in
        the checkpoint; pass allow_config_mismatch=True to load anyway (the
        stored config still wins, since it defines the array shapes).
        """
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta_json"][()]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(
                    f"unsupported checkpoint version {meta.get('version')!r}; "
                    f"this build reads version {CHECKPOINT_VERSION}"
                )
            stored = SacConfig(**{**meta["config"], "hidden": tuple(meta["config"]["hidden"])})
            if expected_config is not None and config_hash(expected_config) != meta["config_hash"]:
                if not allow_config_mismatch:
                    raise ValueError(
                        "checkpoint was written with a different configuration "
                        f"(stored hash {meta['config_hash'][:12]}..., expected "
                        f"{config_hash(expected_config)[:12]}...); pass "
                        "allow_config_mismatch=True to load it anyway"
                    )
            agent = cls(meta["obs_dim"], meta["act_dim"], stored, seed=seed)
            agent.updates_done = int(meta["updates_done"])
            arrays = agent._named_arrays()
            for name, dst in arrays.items():
                src = data[name]
                if src.shape != dst.shape:
                    raise ValueError(f"checkpoint array {name} has shape {src.shape}, "
                                     f"expected {dst.shape}")
                dst[...] = src
            # optimizer step counters live inside the state arrays
            agent.policy_opt.load_state_arrays(
                [arrays[f"policy_opt.{i}"] for i in range(2 * len(agent.policy_opt.params) + 1)]
            )
            for c, opt in enumerate(agent.critic_opts):
                opt.load_state_arrays(
                    [arrays[f"critic{c}_opt.{i}"] for i in range(2 * len(opt.params) + 1)]
                )
            if agent.alpha_opt is not None and "alpha_opt.0" in data:
                agent.alpha_opt.load_state_arrays(
                    [arrays[f"alpha_opt.{i}"] for i in range(2 * len(agent.alpha_opt.params) + 1)]
                )
        return agent


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    episodes: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    anchor_retries: int = 0

    @property
    def returns(self) -> np.ndarray:
        return np.array([e["return"] for e in self.episodes])


def evaluate_policy(env, agent: SacAgent, n_episodes: int) -> dict[str, float]:
    """Deterministic-policy episodes on the env's continuing noise stream."""
    returns, nlifs, leaks = [], [], []
    for _ in range(n_episodes):
        obs = env.reset()
        total = 0.0
        info: dict = {}
        done = False
        while not done:
            result = env.step(agent.act(obs, deterministic=True))
            obs, done, info = result.observation, result.done, result.info
            total += result.reward
        returns.append(total)
        nlifs.append(info.get("nlif", np.nan))
        leaks.append(info.get("leakage", np.nan))
    return {
        "mean_return": float(np.mean(returns)),
        "max_return": float(np.max(returns)),
        "mean_nlif": float(np.mean(nlifs)),
        "mean_leakage": float(np.mean(leaks)),
    }


def train_loop(
    env,
    agent: SacAgent,
    n_episodes: int,
    seed: int = 0,
    *,
    eval_every: int = 0,
    n_eval_episodes: int = 4,
    diagnostic_path=None,
    on_episode=None,
    max_anchor_retries: int = 50,
) -> TrainResult:
    """Train `agent` on `env` for `n_episodes` episodes.

    One environment step feeds the replay buffer; after the warmup period each
    step also triggers `updates_per_step` gradient updates. Episodes whose
    terminal tomography reconstruction degenerates are dropped and retried
    with fresh noise (they never enter the replay buffer). A non-finite loss
    aborts training, saving a diagnostic checkpoint first if a path is given.
    `on_episode` receives each episode record as it is produced; returning a
    truthy value stops training after that episode (periodic evaluations and
    the episode counter still run for it).
    """
    cfg = agent.config
    replay = ReplayBuffer(cfg.replay_capacity, agent.obs_dim, agent.act_dim)
    warmup_rng = named_stream(seed, "warmup")
    replay_rng = named_stream(seed, "replay")
    result = TrainResult()
    global_step = 0
    consecutive_retries = 0

    obs = env.reset(seed)
    episode = 0
    while episode < n_episodes:
        transitions = []
        update_metrics: list[dict] = []
        total = 0.0
        info: dict = {}
        done = False
        try:
            while not done:
                if global_step < cfg.warmup_steps:
                    action = warmup_rng.uniform(-1.0, 1.0, size=agent.act_dim)
                else:
                    action = agent.act(obs)
                step = env.step(action)
                transitions.append((obs, action, step.reward, step.observation, step.done))
                obs, done, info = step.observation, step.done, step.info
                total += step.reward
                global_step += 1
                if global_step > cfg.warmup_steps and len(replay) >= cfg.batch_size:
                    for _ in range(cfg.updates_per_step):
                        try:
                            update_metrics.append(
                                agent.update(replay.sample(cfg.batch_size, replay_rng))
                            )
                        except DivergenceError as err:
                            if diagnostic_path is not None:
                                agent.save(diagnostic_path)
                            raise DivergenceError(
                                f"training diverged at step {global_step} "
                                f"(episode {episode}): {err}",
                                err.metrics,
                            ) from err
        except DegenerateAnchorError:
            result.anchor_retries += 1
            consecutive_retries += 1
            if consecutive_retries > max_anchor_retries:
                raise
            obs = env.reset()
            continue
        consecutive_retries = 0
        for obs_t, act_t, rew_t, next_t, done_t in transitions:
            replay.add(obs_t, act_t, rew_t, next_t, done_t)

        record = {
            "episode": episode,
            "env_steps": global_step,
            "return": total,
            "nlif": float(info.get("nlif", np.nan)),
            "leakage": float(info.get("leakage", np.nan)),
            "alpha": agent.alpha,
            "entropy": _mean_of(update_metrics, "entropy"),
            "critic_loss": _mean_of(update_metrics, "critic_loss"),
            "policy_loss": _mean_of(update_metrics, "policy_loss"),
        }
        result.episodes.append(record)
        stop = bool(on_episode(record)) if on_episode is not None else False
        episode += 1
        if eval_every and episode % eval_every == 0:
            entry = evaluate_policy(env, agent, n_eval_episodes)
            entry["episode"] = episode
            result.evals.append(entry)
        obs = env.reset()
        if stop:
            break
    return result


def _mean_of(records: list[dict], key: str) -> float:
    if not records:
        return float("nan")
    return float(np.mean([r[key] for r in records]))
