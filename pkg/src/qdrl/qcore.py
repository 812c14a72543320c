"""Sector Hamiltonian and propagator algebra for a four-dot singlet-triplet pair.

Four electrons in a quadruple dot, one per dot, encode two singlet-triplet
qubits: qubit 1 on dots (1,2), qubit 2 on dots (3,4). Everything here lives in
the total-S_z = 0 sector, which is six dimensional and splits into the
computational basis

    |00> = |udud>,  |01> = |uddu>,  |10> = |duud>,  |11> = |dudu>

plus the two leakage states |L1> = |uudd> and |L2> = |dduu>. The Hamiltonian,
with hbar = 1 and energies as angular frequencies in 1/ns, is the nearest
neighbour Heisenberg chain

    H = sum_i J_i/4 sigma^(i).sigma^(i+1)  + magnetic gradient terms,

with exchange controlled exponentially by the detuning voltage on each dot
pair, J(eps) = J0 exp(eps/eps0). Detunings are handled in units of eps0
throughout, so J(eps) = j0 * exp(eps).

The six-by-six matrices of the three couplers and the three gradient terms are
written out explicitly below; a test rebuilds them from the full 16-dimensional
four-spin model and checks the sector restriction, so the constants here are
not load bearing on faith alone.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "UNITARITY_TOL",
    "DEFAULT_NLIF_CAP",
    "SIM_DIM",
    "COMP_INDICES",
    "LEAK_INDICES",
    "DeviceParams",
    "exchange_coupling",
    "sector_hamiltonian",
    "build_hamiltonian",
    "single_qubit_hamiltonian",
    "step_propagator",
    "trotter_evolve",
    "computational_block",
    "gate_fidelity",
    "nlif",
    "nlif_from_infidelity",
    "pauli_expectations",
    "state_leakage",
    "block_leakage",
    "is_unitary",
    "haar_unitary",
    "cnot_target",
    "phase_gate_target",
]

UNITARITY_TOL = 1e-9
DEFAULT_NLIF_CAP = 12.0
HERMITICITY_TOL = 1e-12

SIM_DIM = 6
COMP_INDICES = (0, 1, 2, 3)
LEAK_INDICES = (4, 5)


@dataclass(frozen=True)
class DeviceParams:
    """Static device parameters.

    Exchange and gradient energies are quoted in units of j0 (the exchange at
    zero detuning, default 1/ns); detuning bounds in units of eps0. b23 = 7 j0
    splits the leakage states away from the computational subspace, b12 = -b34
    drives the single-qubit axes.
    """

    j0: float = 1.0          # exchange at eps = 0, 1/ns
    eps0: float = 0.272      # exchange lever arm, mV (bookkeeping only)
    b_field: float = 0.0     # global field B_G, units of j0; zero in-sector
    b12: float = 1.0         # gradient between dots 1,2; units of j0
    b23: float = 7.0
    b34: float = -1.0
    eps_min: float = -5.4    # detuning bounds, units of eps0
    eps_max: float = 2.4

    def __post_init__(self) -> None:
        if self.j0 <= 0:
            raise ValueError(f"j0 must be positive, got {self.j0}")
        if self.eps0 <= 0:
            raise ValueError(f"eps0 must be positive, got {self.eps0}")
        if not self.eps_min < self.eps_max:
            raise ValueError(
                f"need eps_min < eps_max, got [{self.eps_min}, {self.eps_max}]"
            )

    @property
    def gradients(self) -> np.ndarray:
        """(b12, b23, b34) in units of j0."""
        return np.array([self.b12, self.b23, self.b34])

    def with_gradients(self, gradients: np.ndarray) -> "DeviceParams":
        b12, b23, b34 = (float(g) for g in gradients)
        return replace(self, b12=b12, b23=b23, b34=b34)


def _coupler_matrices() -> np.ndarray:
    """sigma.sigma/4 for pairs (1,2), (2,3), (3,4) in the sector basis."""
    a12 = np.diag([-1.0, -1, -1, -1, 1, 1]) / 4.0
    a12[0, 2] = a12[2, 0] = 0.5
    a12[1, 3] = a12[3, 1] = 0.5

    a23 = np.diag([-1.0, 1, 1, -1, -1, -1]) / 4.0
    a23[0, 4] = a23[4, 0] = 0.5
    a23[3, 5] = a23[5, 3] = 0.5

    a34 = np.diag([-1.0, -1, -1, -1, 1, 1]) / 4.0
    a34[0, 1] = a34[1, 0] = 0.5
    a34[2, 3] = a34[3, 2] = 0.5
    return np.stack([a12, a23, a34])


def _gradient_matrices() -> np.ndarray:
    """Diagonal matrices multiplying b12, b23, b34 (unit gradient each)."""
    z12 = np.diag([-1.0, -1, 1, 1, -1, 1]) / 2.0
    z23 = np.diag([0.0, 0, 0, 0, -1, 1])
    z34 = np.diag([-1.0, 1, -1, 1, -1, 1]) / 2.0
    return np.stack([z12, z23, z34])


_COUPLERS = _coupler_matrices()
_GRADIENTS = _gradient_matrices()
_COUPLERS.setflags(write=False)
_GRADIENTS.setflags(write=False)


def exchange_coupling(eps: np.ndarray | float, params: DeviceParams) -> np.ndarray | float:
    """Exchange J(eps) = j0 exp(eps), eps in units of eps0, J in 1/ns."""
    return params.j0 * np.exp(eps)


def sector_hamiltonian(j_couplings: np.ndarray, b_gradients: np.ndarray) -> np.ndarray:
    """Assemble H from physical couplings, broadcasting over leading axes.

    j_couplings : (..., 3) exchange (J12, J23, J34) in 1/ns
    b_gradients : (..., 3) gradients (b12, b23, b34) in 1/ns
    returns (..., 6, 6), Hermitian (real symmetric).
    """
    j = np.asarray(j_couplings, dtype=float)
    b = np.asarray(b_gradients, dtype=float)
    if j.shape[-1] != 3 or b.shape[-1] != 3:
        raise ValueError("expected 3 couplings and 3 gradients on the last axis")
    h = np.einsum("...i,ijk->...jk", j, _COUPLERS)
    h += np.einsum("...i,ijk->...jk", b, _GRADIENTS)
    return h


def build_hamiltonian(detunings: np.ndarray, params: DeviceParams) -> np.ndarray:
    """H for detunings (eps12, eps23, eps34), units of eps0, shape (..., 3).

    The global field b_field commutes with everything and carries zero weight
    in the S_z = 0 sector, so it does not appear.
    """
    detunings = np.asarray(detunings, dtype=float)
    j = exchange_coupling(detunings, params)
    return sector_hamiltonian(j, params.j0 * params.gradients)


def single_qubit_hamiltonian(
    eps: np.ndarray | float, b: float, params: DeviceParams
) -> np.ndarray:
    """Two-level H = J(eps)/2 sigma_z + b/2 sigma_x for one singlet-triplet qubit.

    b in units of j0. eps may carry leading batch axes (or a trailing length-1
    channel axis, which is squeezed).
    """
    eps = np.asarray(eps, dtype=float)
    if eps.ndim and eps.shape[-1] == 1:
        eps = eps[..., 0]
    j = exchange_coupling(eps, params)
    bx = params.j0 * b
    h = np.zeros(eps.shape + (2, 2), dtype=float)
    h[..., 0, 0] = j / 2.0
    h[..., 1, 1] = -j / 2.0
    h[..., 0, 1] = bx / 2.0
    h[..., 1, 0] = bx / 2.0
    return h


def step_propagator(h: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i dt H) via eigendecomposition; h may be a stack (..., n, n)."""
    h = np.asarray(h)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dev = np.abs(h - np.conj(np.swapaxes(h, -1, -2))).max()
    scale = max(1.0, np.abs(h).max())
    if dev > HERMITICITY_TOL * scale:
        raise ValueError(f"non-Hermitian input, symmetry deviation {dev:.3e}")
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * dt * w)
    return (v * phases[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def trotter_evolve(shaped, params: DeviceParams, dt: float | None = None) -> np.ndarray:
    """Cumulative propagators of a piecewise-constant drive.

    shaped : a ShapedTrace (has .values (M, 3) and .dt) or a plain (M, 3)
        array of detunings with dt given explicitly. Each row is held for one
        substep, read as the field at the substep midpoint.
    returns (M+1, 6, 6); index 0 is the identity, index m is the propagator
    through the first m substeps, so index t*n is the boundary after segment t.
    """
    values = getattr(shaped, "values", None)
    if values is None:
        values = np.asarray(shaped, dtype=float)
    else:
        dt = shaped.dt
    if dt is None:
        raise ValueError("dt required when passing a bare array")
    steps = step_propagator(build_hamiltonian(values, params), dt)
    m = steps.shape[0]
    out = np.empty((m + 1,) + steps.shape[1:], dtype=complex)
    out[0] = np.eye(steps.shape[-1])
    for i in range(m):
        out[i + 1] = steps[i] @ out[i]
    return out


def evolve_final(
    detunings: np.ndarray, b_gradients: np.ndarray, dt: float, j0: float = 1.0
) -> np.ndarray:
    """Final propagator only, batched over realizations.

    detunings : (..., M, 3) in units of eps0
    b_gradients : (..., 3) in units of j0, broadcast over substeps
    returns (..., 6, 6). Used for noise-averaged terminal rewards where the
    intermediate unitaries are not needed.
    """
    detunings = np.asarray(detunings, dtype=float)
    b = j0 * np.asarray(b_gradients, dtype=float)
    h = sector_hamiltonian(j0 * np.exp(detunings), b[..., None, :])
    steps = step_propagator(h, dt)
    u = steps[..., 0, :, :]
    for m in range(1, steps.shape[-3]):
        u = steps[..., m, :, :] @ u
    return u


def computational_block(u: np.ndarray, indices=COMP_INDICES) -> np.ndarray:
    """The block of u over the computational states (leading axes preserved)."""
    idx = np.asarray(indices)
    return u[..., idx[:, None], idx[None, :]]


def gate_fidelity(u: np.ndarray, target: np.ndarray) -> np.ndarray | float:
    """|Tr(V^dag U) / d|^2; global-phase invariant, batched over u."""
    u = np.asarray(u)
    target = np.asarray(target)
    d = target.shape[-1]
    if u.shape[-2:] != (d, d):
        raise ValueError(f"shape mismatch: u block {u.shape[-2:]}, target {target.shape}")
    tr = np.einsum("...ij,ij->...", u, np.conj(target)) / d
    f = np.clip(np.abs(tr) ** 2, 0.0, 1.0)
    return float(f) if f.ndim == 0 else f


def nlif_from_infidelity(infid, cap: float = DEFAULT_NLIF_CAP):
    """-log10 of the infidelity, capped at `cap` (and at 0 from below)."""
    infid = np.asarray(infid, dtype=float)
    floor = 10.0 ** (-cap)
    out = -np.log10(np.maximum(infid, floor))
    out = np.clip(out, 0.0, cap)
    return float(out) if out.ndim == 0 else out


def nlif(u: np.ndarray, target: np.ndarray, cap: float = DEFAULT_NLIF_CAP):
    """Negative log infidelity of u against target, capped."""
    return nlif_from_infidelity(1.0 - np.asarray(gate_fidelity(u, target)), cap)


def _logical_paulis() -> np.ndarray:
    """(qubit, axis, 6, 6) logical X/Y/Z, zero outside the computational block."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    eye = np.eye(2)
    ops = np.zeros((2, 3, SIM_DIM, SIM_DIM), dtype=complex)
    for ax, s in enumerate((sx, sy, sz)):
        ops[0, ax, :4, :4] = np.kron(s, eye)
        ops[1, ax, :4, :4] = np.kron(eye, s)
    return ops


_PAULIS = _logical_paulis()
_PAULIS.setflags(write=False)


def pauli_expectations(states: np.ndarray) -> np.ndarray:
    """Logical <X>, <Y>, <Z> per qubit for sector states (..., 6) -> (..., 2, 3).

    States need not be normalized within the computational subspace; leaked
    population simply shrinks the Bloch vector.
    """
    states = np.asarray(states)
    if states.shape[-1] != SIM_DIM:
        raise ValueError(f"expected sector states of dim {SIM_DIM}")
    vals = np.einsum("...i,qaij,...j->...qa", np.conj(states), _PAULIS, states)
    return np.real(vals)


def state_leakage(states: np.ndarray) -> np.ndarray | float:
    """Population outside the computational subspace for states (..., 6)."""
    states = np.asarray(states)
    leak = np.sum(np.abs(states[..., list(LEAK_INDICES)]) ** 2, axis=-1)
    return float(leak) if leak.ndim == 0 else leak


def block_leakage(u: np.ndarray) -> np.ndarray | float:
    """Mean leaked population over computational inputs, 1 - ||block||_F^2 / d."""
    b = computational_block(np.asarray(u)) if np.asarray(u).shape[-1] == SIM_DIM else np.asarray(u)
    d = b.shape[-1]
    leak = 1.0 - np.sum(np.abs(b) ** 2, axis=(-2, -1)) / d
    leak = np.clip(leak, 0.0, 1.0)
    return float(leak) if leak.ndim == 0 else leak


def is_unitary(u: np.ndarray, tol: float = UNITARITY_TOL) -> bool:
    u = np.asarray(u)
    d = u.shape[-1]
    dev = np.abs(np.conj(np.swapaxes(u, -1, -2)) @ u - np.eye(d)).max()
    return bool(dev <= tol)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z / np.sqrt(2.0))
    ph = np.diagonal(r)
    return q * (ph / np.abs(ph))


def cnot_target() -> np.ndarray:
    """CNOT with qubit 1 (dots 1,2) as control."""
    u = np.eye(4, dtype=complex)
    u[2, 2] = u[3, 3] = 0.0
    u[2, 3] = u[3, 2] = 1.0
    return u


def phase_gate_target(theta: float = np.pi / 2) -> np.ndarray:
    """Single-qubit phase gate diag(1, e^{i theta})."""
    return np.diag([1.0, np.exp(1j * theta)]).astype(complex)
