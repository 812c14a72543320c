"""Small dense networks with explicit reverse-mode gradients, in plain numpy.

Everything the learner differentiates lives here: fully connected layers with
a smooth-rectifier (softplus) activation, layer normalization and inverted
dropout for the critic trunks, a tanh-squashed Gaussian policy head with the
exact log-density of the squashed sample, quantile Huber regression for the
distributional critics, and an Adam optimizer. Forward passes return caches;
backward passes consume them and accumulate parameter gradients in place, so
a caller zeroes gradients, runs forward/backward, and steps the optimizer.

All math is float64. The networks are deliberately tiny (two hidden layers),
so explicit loops over layers cost nothing next to the matmuls.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "softplus",
    "sigmoid",
    "Dense",
    "LayerNorm",
    "Dropout",
    "MlpTrunk",
    "GaussianPolicy",
    "QuantileCritic",
    "quantile_huber_loss",
    "Adam",
    "LOGVAR_MIN",
    "LOGVAR_MAX",
]

LOGVAR_MIN = -15.0
LOGVAR_MAX = 4.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x), overflow-safe."""
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Derivative of softplus, overflow-safe."""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Dense:
    """y = x W + b with fan-in scaled uniform initialization."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        bound = 1.0 / np.sqrt(n_in)
        self.w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.b = rng.uniform(-bound, bound, size=n_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x: np.ndarray):
        return x @ self.w + self.b, x

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x = cache
        self.dw += x.T @ dy
        self.db += dy.sum(axis=0)
        return dy @ self.w.T

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]


class LayerNorm:
    """Normalization over the feature axis with learned scale and shift."""

    EPS = 1e-6

    def __init__(self, n: int):
        self.gamma = np.ones(n)
        self.beta = np.zeros(n)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)

    def forward(self, x: np.ndarray):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mu) * inv
        return self.gamma * xhat + self.beta, (xhat, inv)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        xhat, inv = cache
        n = xhat.shape[-1]
        self.dgamma += (dy * xhat).sum(axis=0)
        self.dbeta += dy.sum(axis=0)
        dxhat = dy * self.gamma
        return (
            inv
            / n
            * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        )

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.dgamma, self.dbeta]


class Dropout:
    """Inverted dropout; identity unless a training pass supplies an rng."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator | None):
        if not train or self.p == 0.0:
            return x, None
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, dy: np.ndarray, mask) -> np.ndarray:
        return dy if mask is None else dy * mask


class MlpTrunk:
    """Hidden stack: per layer Dense -> (Dropout) -> (LayerNorm) -> softplus."""

    def __init__(
        self,
        rng: np.random.Generator,
        n_in: int,
        hidden: tuple[int, ...],
        dropout: float = 0.0,
        layer_norm: bool = False,
    ):
        if not hidden:
            raise ValueError("need at least one hidden layer")
        self.dense: list[Dense] = []
        self.norms: list[LayerNorm | None] = []
        self.drops: list[Dropout | None] = []
        size = n_in
        for width in hidden:
            self.dense.append(Dense(rng, size, width))
            self.drops.append(Dropout(dropout) if dropout > 0 else None)
            self.norms.append(LayerNorm(width) if layer_norm else None)
            size = width
        self.n_out = size

    def forward(self, x: np.ndarray, train: bool = False, rng=None):
        caches = []
        for dense, drop, norm in zip(self.dense, self.drops, self.norms):
            x, c_dense = dense.forward(x)
            c_drop = None
            if drop is not None:
                x, c_drop = drop.forward(x, train, rng)
            c_norm = None
            if norm is not None:
                x, c_norm = norm.forward(x)
            caches.append((c_dense, c_drop, c_norm, x))
            x = softplus(x)
        return x, caches

    def backward(self, dy: np.ndarray, caches) -> np.ndarray:
        for dense, drop, norm, cache in zip(
            reversed(self.dense), reversed(self.drops), reversed(self.norms), reversed(caches)
        ):
            c_dense, c_drop, c_norm, pre_act = cache
            dy = dy * sigmoid(pre_act)
            if norm is not None:
                dy = norm.backward(dy, c_norm)
            if drop is not None:
                dy = drop.backward(dy, c_drop)
            dy = dense.backward(dy, c_dense)
        return dy

    def params(self):
        out = []
        for dense, norm in zip(self.dense, self.norms):
            out.extend(dense.params())
            if norm is not None:
                out.extend(norm.params())
        return out

    def grads(self):
        out = []
        for dense, norm in zip(self.dense, self.norms):
            out.extend(dense.grads())
            if norm is not None:
                out.extend(norm.grads())
        return out


def _zero_all(arrays) -> None:
    for a in arrays:
        a[...] = 0.0


def _log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), overflow-safe."""
    return 2.0 * (np.log(2.0) - u - softplus(-2.0 * u))


class GaussianPolicy:
    """tanh-squashed diagonal Gaussian with exact squashed log-density.

    The trunk feeds two linear heads, mean and log-variance; the log-variance
    is clamped to [LOGVAR_MIN, LOGVAR_MAX] on every forward pass. Sampling is
    reparameterized (u = mean + sigma * xi), so gradients flow through both
    the action and its log-probability for a fixed noise draw.
    """

    def __init__(self, rng: np.random.Generator, obs_dim: int, act_dim: int, hidden):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.trunk = MlpTrunk(rng, obs_dim, tuple(hidden))
        self.mean_head = Dense(rng, self.trunk.n_out, act_dim)
        self.logvar_head = Dense(rng, self.trunk.n_out, act_dim)

    # ----------------------------------------------------------- forward

    def _heads(self, obs: np.ndarray):
        h, trunk_cache = self.trunk.forward(obs)
        mu, c_mu = self.mean_head.forward(h)
        lv_raw, c_lv = self.logvar_head.forward(h)
        lv = np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)
        return mu, lv, (trunk_cache, c_mu, c_lv, lv_raw)

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """(action, log_prob) for a batch; no cache kept."""
        a, logp, _ = self.sample_cached(obs, rng.normal(size=(obs.shape[0], self.act_dim)))
        return a, logp

    def sample_cached(self, obs: np.ndarray, xi: np.ndarray):
        """Reparameterized sample with the cache needed for backward()."""
        mu, lv, head_cache = self._heads(obs)
        sigma = np.exp(0.5 * lv)
        u = mu + sigma * xi
        a = np.tanh(u)
        logp = np.sum(
            -0.5 * xi**2 - _HALF_LOG_2PI - 0.5 * lv - _log1m_tanh_sq(u), axis=1
        )
        cache = (head_cache, sigma, xi, u, a, lv)
        return a, logp, cache

    def deterministic(self, obs: np.ndarray) -> np.ndarray:
        mu, _, _ = self._heads(obs)
        return np.tanh(mu)

    def log_prob(self, obs: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return self.sample_cached(obs, xi)[1]

    # ---------------------------------------------------------- backward

    def backward(self, d_action: np.ndarray, d_logp: np.ndarray, cache) -> None:
        """Accumulate parameter gradients of sum(d_action * a + d_logp * logp).

        d_action is (B, act_dim), d_logp is (B,); the noise draw xi is held
        fixed (reparameterization). Returns nothing; gradients land in the
        layer .d* buffers.
        """
        head_cache, sigma, xi, u, a, lv = cache
        trunk_cache, c_mu, c_lv, lv_raw = head_cache
        t = np.tanh(u)
        # d logp / du at fixed xi: the squash correction only
        dlogp_du = 2.0 * t
        du = d_action * (1.0 - a**2) + d_logp[:, None] * dlogp_du
        d_mu = du
        d_lv = du * (0.5 * sigma * xi) + d_logp[:, None] * (-0.5)
        # clamp: no gradient beyond the bounds
        d_lv = d_lv * ((lv_raw > LOGVAR_MIN) & (lv_raw < LOGVAR_MAX))
        dh = self.mean_head.backward(d_mu, c_mu)
        dh += self.logvar_head.backward(d_lv, c_lv)
        self.trunk.backward(dh, trunk_cache)

    # ------------------------------------------------------------- state

    def params(self):
        return self.trunk.params() + self.mean_head.params() + self.logvar_head.params()

    def grads(self):
        return self.trunk.grads() + self.mean_head.grads() + self.logvar_head.grads()

    def zero_grads(self):
        _zero_all(self.grads())


class QuantileCritic:
    """Distributional critic: (obs, action) -> q_k quantile values.

    The trunk carries dropout and layer normalization (the stabilizers are
    critic-only); train=True enables dropout, evaluation and target passes
    leave it off.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        obs_dim: int,
        act_dim: int,
        hidden,
        n_quantiles: int,
        dropout: float = 0.0,
    ):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.n_quantiles = n_quantiles
        self.trunk = MlpTrunk(
            rng, obs_dim + act_dim, tuple(hidden), dropout=dropout, layer_norm=True
        )
        self.head = Dense(rng, self.trunk.n_out, n_quantiles)

    def forward(self, obs: np.ndarray, act: np.ndarray, train: bool = False, rng=None):
        x = np.concatenate([obs, act], axis=1)
        h, trunk_cache = self.trunk.forward(x, train=train, rng=rng)
        z, c_head = self.head.forward(h)
        return z, (trunk_cache, c_head)

    def backward(self, dz: np.ndarray, cache):
        """Accumulates gradients; returns (d_obs, d_act) of the input batch."""
        trunk_cache, c_head = cache
        dh = self.head.backward(dz, c_head)
        dx = self.trunk.backward(dh, trunk_cache)
        return dx[:, : self.obs_dim], dx[:, self.obs_dim :]

    def params(self):
        return self.trunk.params() + self.head.params()

    def grads(self):
        return self.trunk.grads() + self.head.grads()

    def zero_grads(self):
        _zero_all(self.grads())


def quantile_huber_loss(z: np.ndarray, targets: np.ndarray, kappa: float = 1.0):
    """Quantile Huber regression of predictions (B, K) onto targets (B, J).

    Quantile levels are the midpoints tau_k = (k + 1/2)/K. Returns the scalar
    loss (mean over batch, prediction quantiles, and target atoms) and its
    gradient with respect to z.
    """
    if z.ndim != 2 or targets.ndim != 2 or z.shape[0] != targets.shape[0]:
        raise ValueError(f"incompatible shapes {z.shape} and {targets.shape}")
    b, k = z.shape
    j = targets.shape[1]
    taus = (np.arange(k) + 0.5) / k
    delta = targets[:, None, :] - z[:, :, None]  # (B, K, J)
    abs_delta = np.abs(delta)
    quad = abs_delta <= kappa
    huber = np.where(quad, 0.5 * delta**2, kappa * (abs_delta - 0.5 * kappa))
    weight = np.abs(taus[None, :, None] - (delta < 0.0))
    loss = float(np.mean(weight * huber))
    # d huber / d delta = clip(delta, -kappa, kappa); d delta / dz = -1
    dz = -(weight * np.clip(delta, -kappa, kappa)).sum(axis=2) / (b * k * j)
    return loss, dz


class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g**2
            p -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def state_arrays(self):
        """Optimizer state for checkpointing: moments plus the step counter."""
        return self.m + self.v + [np.array([float(self.t)])]

    def load_state_arrays(self, arrays) -> None:
        n = len(self.params)
        if len(arrays) != 2 * n + 1:
            raise ValueError(f"expected {2 * n + 1} state arrays, got {len(arrays)}")
        for dst, src in zip(self.m, arrays[:n]):
            dst[...] = src
        for dst, src in zip(self.v, arrays[n : 2 * n]):
            dst[...] = src
        self.t = int(arrays[2 * n][0])
