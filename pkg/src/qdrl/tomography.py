"""Process tomography from single-shot measurements, and its Gaussian surrogate.

A unitary U on a d-dimensional space is probed with the d states

    |psi_0> = |0>,    |psi_n> = (|0> + |n>)/sqrt(2),  n = 1..d-1,

each measured with one informationally complete POVM built around the anchor
|0>:

    E_0        = a |0><0|
    E_j        = b (1 + |j><0| + |0><j|)          j = 1..d-1
    E~_j       = b (1 + i |j><0| - i |0><j|)      j = 1..d-1
    E_rest     = 1 - E_0 - sum_j (E_j + E~_j)

with a, b > 0 small enough that E_rest stays positive semidefinite (checked at
build time). Writing w = U|psi_n> with coefficients c_k, the outcome
probabilities satisfy

    p_{n,0}  = a |c_0|^2
    p_{n,j}  = b (||w||^2 + 2 Re(conj(c_0) c_j))
    p~_{n,j} = b (||w||^2 + 2 Im(conj(c_0) c_j))

so each probe determines its output state up to a global phase, anchored on
c_0; the n-th probe's phase is then fixed against the first column through the
known overlap <w_n|U|0> = 1/sqrt(2), columns are separated, and the assembled
matrix is projected to the nearest unitary. The ||w||^2 term matters: for the
computational block of a leaky evolution the probe output is sub-normalized,
and POVM completeness estimates ||w||^2 as the non-leaked outcome fraction, so
the same inversion applies. The scheme fails when a probe has no weight on the
anchor (c_0 = 0), reported as DegenerateAnchorError.

The surrogate model replaces the whole measurement pipeline by additive
i.i.d. complex Gaussian noise on the matrix entries followed by the same
nearest-unitary projection; calibrate_sigma_to_shots fits the noise level
sigma that reproduces the reconstruction error of a given snapshot budget.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .qcore import gate_fidelity, haar_unitary

__all__ = [
    "PovmSet",
    "MeasurementRecord",
    "SigmaShotsMap",
    "DegenerateAnchorError",
    "build_povm",
    "probe_states",
    "outcome_probabilities",
    "sample_snapshots",
    "sample_snapshots_batch",
    "reconstruct_unitary",
    "nearest_unitary",
    "gaussian_surrogate",
    "calibrate_sigma_to_shots",
]

POVM_COMPLETENESS_TOL = 1e-10
PSD_TOL = 1e-10
DEFAULT_ANCHOR_THRESHOLD = 1e-6


class DegenerateAnchorError(ValueError):
    """A probe state carries (almost) no weight on the anchor |0>."""


def _rest_lowest_eig(dim: int, a: float, b: float) -> float:
    """Lowest eigenvalue of the remainder element for weights (a, b)."""
    rest = np.eye(dim, dtype=complex) * (1.0 - 2.0 * b * (dim - 1))
    rest[0, 0] -= a
    rest[1:, 0] = -b * (1.0 + 1j)
    rest[0, 1:] = -b * (1.0 - 1j)
    return float(np.linalg.eigvalsh(rest)[0])


@functools.lru_cache(maxsize=None)
def _frontier_b(dim: int, a: float) -> float:
    """Largest b keeping the remainder element positive semidefinite."""
    lo, hi = 0.0, 0.5 / (dim - 1)
    if _rest_lowest_eig(dim, a, hi * 1e-9) < 0:
        raise ValueError(f"no positive b is feasible for a={a} at dim={dim}")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _rest_lowest_eig(dim, a, mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class PovmSet:
    """The 2d POVM elements, ordered E_0, E_1..E_{d-1}, E~_1..E~_{d-1}, E_rest."""

    dim: int
    a: float
    b: float
    elements: np.ndarray  # (2 dim, dim, dim)

    @property
    def n_outcomes(self) -> int:
        return 2 * self.dim


def build_povm(dim: int, a: float = 0.1, b: float | None = None) -> PovmSet:
    """Construct and validate the POVM for dimension dim.

    Reconstruction variance scales like 1/b^2, so by default b is placed at
    90% of the largest value keeping the remainder element positive
    semidefinite (found by bisection for the given a). Raises ValueError when
    the elements do not sum to the identity or the remainder fails positivity,
    reporting the offending eigenvalue.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if b is None:
        b = 0.9 * _frontier_b(dim, a)
    if a <= 0 or b <= 0:
        raise ValueError(f"a and b must be positive, got a={a}, b={b}")
    eye = np.eye(dim, dtype=complex)
    elements = np.zeros((2 * dim, dim, dim), dtype=complex)
    elements[0, 0, 0] = a
    for j in range(1, dim):
        ej = b * eye.copy()
        ej[j, 0] += b
        ej[0, j] += b
        elements[j] = ej
        etj = b * eye.copy()
        etj[j, 0] += 1j * b
        etj[0, j] += -1j * b
        elements[dim - 1 + j] = etj
    rest = eye - elements[: 2 * dim - 1].sum(axis=0)
    elements[2 * dim - 1] = rest
    low = np.linalg.eigvalsh(rest)[0]
    if low < -PSD_TOL:
        raise ValueError(
            f"remainder element not positive semidefinite (lowest eigenvalue {low:.3e}); "
            f"reduce a or b"
        )
    dev = np.abs(elements.sum(axis=0) - eye).max()
    if dev > POVM_COMPLETENESS_TOL:
        raise ValueError(f"POVM does not sum to identity (deviation {dev:.3e})")
    return PovmSet(dim, a, b, elements)


def probe_states(dim: int) -> np.ndarray:
    """(dim, dim) array; row n is the n-th probe vector."""
    probes = np.zeros((dim, dim), dtype=complex)
    probes[:, 0] = 1.0
    for n in range(1, dim):
        probes[n, 0] = 1.0 / np.sqrt(2.0)
        probes[n, n] = 1.0 / np.sqrt(2.0)
    return probes


def _probability_table(mat: np.ndarray, povm: PovmSet, probes: np.ndarray):
    """Outcome table (d, 2d) and per-probe leak residual for a general matrix."""
    w = probes @ mat.T  # w[n] = mat @ probes[n]
    table = np.einsum("ni,kij,nj->nk", w.conj(), povm.elements, w).real
    table = np.clip(table, 0.0, None)
    leak = np.clip(1.0 - np.einsum("ni,ni->n", w.conj(), w).real, 0.0, None)
    return table, leak


def outcome_probabilities(
    u: np.ndarray, povm: PovmSet, probes: np.ndarray | None = None
) -> np.ndarray:
    """Exact outcome probabilities (d, 2d) of a unitary; rows sum to 1."""
    u = np.asarray(u)
    if probes is None:
        probes = probe_states(povm.dim)
    dev = np.abs(u.conj().T @ u - np.eye(povm.dim)).max()
    if dev > 1e-9:
        raise ValueError(
            f"input is not unitary (deviation {dev:.3e}); use the snapshot path "
            "for sub-unitary blocks"
        )
    table, _ = _probability_table(u, povm, probes)
    return table


@dataclass(frozen=True)
class MeasurementRecord:
    """Single-shot tally: counts[n, k] = shots of probe n with POVM outcome k.

    leak_counts tracks shots whose outcome fell outside the d-dimensional
    space (possible when the source is the computational block of a leaky
    evolution); for unitary sources it is identically zero and
    counts.sum() == n_shots.
    """

    counts: np.ndarray       # (d, 2d) int64
    leak_counts: np.ndarray  # (d,) int64
    n_shots: int

    def __post_init__(self) -> None:
        total = int(self.counts.sum() + self.leak_counts.sum())
        if total != self.n_shots:
            raise ValueError(f"counts sum to {total}, expected {self.n_shots}")
        if (self.counts < 0).any() or (self.leak_counts < 0).any():
            raise ValueError("negative counts")

    @property
    def probe_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1) + self.leak_counts


def sample_snapshots_batch(
    mats: np.ndarray, povm: PovmSet, rng: np.random.Generator,
    probes: np.ndarray | None = None,
) -> MeasurementRecord:
    """One snapshot per matrix in mats (S, d, d): uniform probe, one outcome."""
    mats = np.asarray(mats)
    if probes is None:
        probes = probe_states(povm.dim)
    d = povm.dim
    s = mats.shape[0]
    probe_idx = rng.integers(0, d, size=s)
    w = np.einsum("sij,sj->si", mats, probes[probe_idx])
    p = np.einsum("si,kij,sj->sk", w.conj(), povm.elements, w).real
    p = np.clip(p, 0.0, None)
    total = p.sum(axis=1)
    leak = np.clip(1.0 - total, 0.0, None)
    r = rng.random(s) * (total + leak)
    outcome = (r[:, None] >= np.cumsum(p, axis=1)).sum(axis=1)  # 2d means leaked
    counts = np.zeros((d, 2 * d), dtype=np.int64)
    leak_counts = np.zeros(d, dtype=np.int64)
    hit = outcome < 2 * d
    np.add.at(counts, (probe_idx[hit], outcome[hit]), 1)
    np.add.at(leak_counts, probe_idx[~hit], 1)
    return MeasurementRecord(counts, leak_counts, s)


def sample_snapshots(
    source, n_shots: int, povm: PovmSet, rng: np.random.Generator,
    probes: np.ndarray | None = None,
) -> MeasurementRecord:
    """Collect n_shots single-shot snapshots.

    source may be a fixed matrix (d, d), a stack of per-shot matrices
    (n_shots, d, d), or a zero-argument callable returning one matrix per call
    (fresh noise realization per shot). For a fixed matrix the (probe,
    outcome) tally is a single multinomial and is drawn in one go.
    """
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    if probes is None:
        probes = probe_states(povm.dim)
    d = povm.dim
    if callable(source):
        mats = np.stack([np.asarray(source()) for _ in range(n_shots)])
        return sample_snapshots_batch(mats, povm, rng, probes)
    source = np.asarray(source)
    if source.ndim == 3:
        if source.shape[0] != n_shots:
            raise ValueError(f"need one matrix per shot, got {source.shape[0]} for {n_shots}")
        return sample_snapshots_batch(source, povm, rng, probes)
    table, leak = _probability_table(source, povm, probes)
    cells = np.concatenate([table, leak[:, None]], axis=1) / d
    flat = cells.ravel()
    flat = flat / flat.sum()  # guard float drift; exact sum is 1
    draw = rng.multinomial(n_shots, flat).reshape(d, 2 * d + 1)
    return MeasurementRecord(
        draw[:, : 2 * d].astype(np.int64), draw[:, 2 * d].astype(np.int64), n_shots
    )


def nearest_unitary(a: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Polar projection: the unitary factor of the SVD, batched over (..., d, d)."""
    a = np.asarray(a)
    u, s, vh = np.linalg.svd(a)
    if np.min(s[..., -1]) <= rel_tol * np.max(s[..., 0]):
        raise ValueError("rank-deficient input has no well-defined nearest unitary")
    return u @ vh


def _hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal basis of d x d Hermitian matrices (Tr G_a G_b = delta_ab)."""
    basis = np.zeros((d * d, d, d), dtype=complex)
    k = 0
    for i in range(d):
        basis[k, i, i] = 1.0
        k += 1
    for i in range(d):
        for j in range(i + 1, d):
            basis[k, i, j] = basis[k, j, i] = 1.0 / np.sqrt(2.0)
            k += 1
            basis[k, i, j] = -1j / np.sqrt(2.0)
            basis[k, j, i] = 1j / np.sqrt(2.0)
            k += 1
    return basis


_BASIS_CACHE: dict[int, np.ndarray] = {}


def _linear_inversion(
    p: np.ndarray, norm_sq: np.ndarray, povm: PovmSet,
    anchor_threshold: float, anchor_floor: float,
) -> np.ndarray:
    """Column estimate from the POVM identities; the starting point for refinement.

    anchor_floor > 0 (record path) clips vanishing anchor estimates instead of
    failing, since a zero count does not prove a zero amplitude; the likelihood
    refinement then does the real work. anchor_floor = 0 (exact-table path)
    keeps the hard failure.
    """
    d = povm.dim
    c0_sq = p[:, 0] / povm.a
    if anchor_floor > 0.0:
        c0_sq = np.maximum(c0_sq, anchor_floor)
    elif (c0_sq < anchor_threshold).any():
        bad = int(np.argmin(c0_sq))
        raise DegenerateAnchorError(
            f"probe {bad} anchor weight {c0_sq[bad]:.2e} below {anchor_threshold:.0e}"
        )
    c0 = np.sqrt(c0_sq)
    re = (p[:, 1:d] / povm.b - norm_sq[:, None]) / 2.0
    im = (p[:, d : 2 * d - 1] / povm.b - norm_sq[:, None]) / 2.0
    states = np.zeros((d, d), dtype=complex)
    states[:, 0] = c0
    states[:, 1:] = (re + 1j * im) / c0[:, None]
    col0 = states[0]
    cols = np.empty((d, d), dtype=complex)
    cols[:, 0] = col0
    for n in range(1, d):
        overlap = np.vdot(states[n], col0)
        if abs(overlap) < 1e-12:
            if anchor_floor == 0.0:
                raise DegenerateAnchorError(
                    f"probe {n} output is orthogonal to the first column; phase lost"
                )
            overlap = 1.0  # phase unknown; leave it to the refinement
        aligned = states[n] * (overlap / abs(overlap))
        cols[:, n] = np.sqrt(2.0) * aligned - col0
    return cols


def _refine_estimate(
    u: np.ndarray, p_hat: np.ndarray, weights: np.ndarray, scale: np.ndarray,
    povm: PovmSet, probes: np.ndarray, max_iters: int,
) -> np.ndarray:
    """Damped Gauss-Newton on the unitary manifold.

    Minimizes sum w_{n,k} (p_hat - scale_n q_{n,k}(U))^2 with w the inverse
    multinomial variance, over U = U0 exp(i sum theta_a G_a). scale_n carries
    the measured non-leak fraction so sub-unitary sources fit an (approximately
    uniformly) contracted unitary model without bias.
    """
    d = povm.dim
    gens = _BASIS_CACHE.setdefault(d, _hermitian_basis(d))
    gpsi = np.einsum("aij,nj->ani", gens, probes)

    def model(u):
        w = probes @ u.T
        q = np.einsum("ni,kij,nj->nk", w.conj(), povm.elements, w).real
        return w, np.clip(q, 1e-14, None)

    w_out, q = model(u)
    cost = float(np.sum(weights * (p_hat - scale[:, None] * q) ** 2))
    lam = 1e-9
    for _ in range(max_iters):
        ugpsi = np.einsum("ij,anj->ani", u, gpsi)
        ew = np.einsum("kij,nj->kni", povm.elements, w_out)
        jac = 2.0 * np.real(np.einsum("kni,ani->nka", ew.conj(), 1j * ugpsi))
        jac = jac * scale[:, None, None]
        res = p_hat - scale[:, None] * q
        a_mat = np.einsum("nka,nk,nkb->ab", jac, weights, jac)
        g = np.einsum("nka,nk->a", jac, weights * res)
        step_ok = False
        for _ in range(8):
            try:
                theta = np.linalg.solve(a_mat + lam * np.eye(d * d), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            h = np.einsum("a,aij->ij", theta, gens)
            vals, vecs = np.linalg.eigh(h)
            cand = u @ ((vecs * np.exp(1j * vals)) @ vecs.conj().T)
            w_cand, q_cand = model(cand)
            cand_cost = float(np.sum(weights * (p_hat - scale[:, None] * q_cand) ** 2))
            if cand_cost <= cost:
                step_ok = True
                break
            lam *= 10.0
        if not step_ok:
            break
        improved = cost - cand_cost
        u, w_out, q, cost = cand, w_cand, q_cand, cand_cost
        lam = max(lam * 0.1, 1e-9)
        if improved <= 1e-12 * max(cost, 1e-30):
            break
    return u


def reconstruct_unitary(
    record, povm: PovmSet, probes: np.ndarray | None = None,
    anchor_threshold: float = DEFAULT_ANCHOR_THRESHOLD,
    refine_iters: int = 12,
) -> np.ndarray:
    """Invert a measurement record (or probability table) to a unitary.

    Accepts a MeasurementRecord or a raw (d, 2d) table of probabilities whose
    rows may sum below one (sub-normalized probe outputs of a leaky block).
    The POVM identities give the column estimate, the shared anchor fixes the
    relative phases, the result is projected to the nearest unitary, and for
    counted records a damped Gauss-Newton pass then maximizes the multinomial
    likelihood starting from that estimate (exact tables are already consistent
    and skip it).

    Raises DegenerateAnchorError when a probe carries (nearly) no anchor
    weight, which makes the corresponding column phase unidentifiable, and
    ValueError when a probe received no shots.
    """
    d = povm.dim
    if probes is None:
        probes = probe_states(d)
    if isinstance(record, MeasurementRecord):
        totals = record.probe_totals
        if (totals == 0).any():
            raise ValueError(f"probe(s) {np.flatnonzero(totals == 0)} received no shots")
        p = record.counts / totals[:, None]
        norm_sq = p.sum(axis=1)
        est = nearest_unitary(
            _linear_inversion(
                p, norm_sq, povm, anchor_threshold,
                anchor_floor=float(np.min(0.25 / totals)) / povm.a,
            )
        )
        # inverse multinomial variance of p_hat, var = q/totals, with a floor
        # so empty cells cannot dominate; the non-leak fraction scales the model
        w_state = probes @ est.T
        q0 = np.einsum("ni,kij,nj->nk", w_state.conj(), povm.elements, w_state).real
        weights = totals[:, None] / np.clip(q0, 1e-4, None)
        est = _refine_estimate(
            est, p, weights, norm_sq, povm, probes, max_iters=refine_iters
        )
    else:
        p = np.clip(np.asarray(record, dtype=float), 0.0, None)
        if p.shape != (d, 2 * d):
            raise ValueError(f"expected table of shape {(d, 2 * d)}, got {p.shape}")
        norm_sq = p.sum(axis=1)
        est = nearest_unitary(
            _linear_inversion(p, norm_sq, povm, anchor_threshold, anchor_floor=0.0)
        )
    anchors = np.abs(probes @ est[0, :]) ** 2
    if (anchors < anchor_threshold).any():
        bad = int(np.argmin(anchors))
        raise DegenerateAnchorError(
            f"probe {bad} anchor weight {anchors[bad]:.2e} below {anchor_threshold:.0e} "
            "in the fitted model; column phase unidentifiable"
        )
    return est


def gaussian_surrogate(u: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive complex Gaussian perturbation, re-unitarized.

    sigma is the standard deviation per real component. sigma = 0 returns the
    input unchanged (no projection), so surrogate rewards degrade gracefully
    to their noiseless counterparts.
    """
    u = np.asarray(u)
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return u.copy()
    noise = rng.normal(0.0, sigma, u.shape) + 1j * rng.normal(0.0, sigma, u.shape)
    return nearest_unitary(u + noise)


@dataclass(frozen=True)
class SigmaShotsMap:
    """Fitted equivalence between snapshot budgets and surrogate noise levels.

    Both arms are power-law fits of mean reconstruction infidelity:
    log10(infid) = shots_intercept + shots_slope * log10(N) for tomography,
    log10(infid) = sigma_intercept + sigma_slope * log10(sigma) for the
    surrogate. Matching infidelities gives the monotone decreasing map
    sigma_for_shots.
    """

    dim: int
    shots_grid: np.ndarray
    shots_infidelity: np.ndarray
    sigma_grid: np.ndarray
    sigma_infidelity: np.ndarray
    shots_slope: float
    shots_intercept: float
    sigma_slope: float
    sigma_intercept: float
    n_trials: int

    def sigma_for_shots(self, n_shots: float) -> float:
        log_inf = self.shots_intercept + self.shots_slope * np.log10(n_shots)
        return float(10.0 ** ((log_inf - self.sigma_intercept) / self.sigma_slope))

    def shots_for_sigma(self, sigma: float) -> float:
        log_inf = self.sigma_intercept + self.sigma_slope * np.log10(sigma)
        return float(10.0 ** ((log_inf - self.shots_intercept) / self.shots_slope))

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": 1,
            "dim": self.dim,
            "shots_grid": [float(x) for x in self.shots_grid],
            "shots_infidelity": [float(x) for x in self.shots_infidelity],
            "sigma_grid": [float(x) for x in self.sigma_grid],
            "sigma_infidelity": [float(x) for x in self.sigma_infidelity],
            "shots_slope": self.shots_slope,
            "shots_intercept": self.shots_intercept,
            "sigma_slope": self.sigma_slope,
            "sigma_intercept": self.sigma_intercept,
            "n_trials": self.n_trials,
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SigmaShotsMap":
        payload = json.loads(Path(path).read_text())
        version = payload.pop("format_version", None)
        if version != 1:
            raise ValueError(f"unsupported calibration file version {version!r}")
        for key in ("shots_grid", "shots_infidelity", "sigma_grid", "sigma_infidelity"):
            payload[key] = np.asarray(payload[key], dtype=float)
        return cls(**payload)


def calibrate_sigma_to_shots(
    dim: int,
    shots_grid,
    sigma_grid,
    rng: np.random.Generator,
    n_trials: int = 32,
) -> SigmaShotsMap:
    """Monte Carlo calibration of the surrogate noise level against shot budgets.

    Random unitaries are measured with each snapshot budget and perturbed with
    each sigma; mean infidelities are fit as power laws on log-log axes. Both
    grids must span at least two decades, and the measured means must be
    monotone (otherwise the fit is meaningless and a ValueError is raised).
    """
    shots_grid = np.asarray(sorted(float(x) for x in shots_grid))
    sigma_grid = np.asarray(sorted(float(x) for x in sigma_grid))
    for name, grid in (("shots_grid", shots_grid), ("sigma_grid", sigma_grid)):
        if grid.size < 3:
            raise ValueError(f"{name} needs at least 3 points, got {grid.size}")
        if grid[0] <= 0:
            raise ValueError(f"{name} must be positive")
        if grid[-1] / grid[0] < 100.0:
            raise ValueError(f"{name} must span at least two decades")
    povm = build_povm(dim)
    probes = probe_states(dim)

    targets = [haar_unitary(dim, rng) for _ in range(n_trials)]

    shots_inf = np.empty(shots_grid.size)
    for i, n in enumerate(shots_grid):
        vals = []
        for u in targets:
            record = sample_snapshots(u, int(n), povm, rng, probes)
            try:
                est = reconstruct_unitary(record, povm, probes)
            except DegenerateAnchorError:
                continue
            vals.append(1.0 - gate_fidelity(est, u))
        if not vals:
            raise ValueError(f"all reconstructions degenerate at N = {n}")
        shots_inf[i] = np.mean(vals)

    sigma_inf = np.empty(sigma_grid.size)
    for i, sig in enumerate(sigma_grid):
        vals = [
            1.0 - gate_fidelity(gaussian_surrogate(u, sig, rng), u) for u in targets
        ]
        sigma_inf[i] = np.mean(vals)

    if not np.all(np.diff(shots_inf) < 0):
        raise ValueError("mean tomography infidelity is not decreasing in N; fit rejected")
    if not np.all(np.diff(sigma_inf) > 0):
        raise ValueError("mean surrogate infidelity is not increasing in sigma; fit rejected")

    s_slope, s_int = np.polyfit(np.log10(shots_grid), np.log10(shots_inf), 1)
    g_slope, g_int = np.polyfit(np.log10(sigma_grid), np.log10(sigma_inf), 1)
    return SigmaShotsMap(
        dim=dim,
        shots_grid=shots_grid,
        shots_infidelity=shots_inf,
        sigma_grid=sigma_grid,
        sigma_infidelity=sigma_inf,
        shots_slope=float(s_slope),
        shots_intercept=float(s_int),
        sigma_slope=float(g_slope),
        sigma_intercept=float(g_int),
        n_trials=n_trials,
    )
