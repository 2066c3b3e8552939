"""Dense complex linear algebra used by every other module.

Operators, states and density matrices are plain ``numpy`` arrays. The helpers
here validate them, diagonalize them with a fixed phase convention and
propagate states with piecewise-constant exponentials.

Tensor-product ordering is global: system factor first, meter factor second.
Within a register, qubit 0 is the most significant (leftmost) factor, so the
basis state ``|001>`` has qubit 2 in ``|1>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

HERMITIAN_ATOL = 1e-12
NORM_ATOL = 1e-10

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"i": I2, "x": SX, "y": SY, "z": SZ}

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)
KET_MINUS = np.array([1, -1], dtype=complex) / np.sqrt(2)


class NotHermitianError(ValueError):
    """Raised when a matrix that must be Hermitian is not."""

    def __init__(self, asymmetry: float, atol: float):
        super().__init__(f"matrix is not Hermitian: max |M - M^H| = {asymmetry:.3e} > {atol:.1e}")
        self.asymmetry = asymmetry


class DimensionError(ValueError):
    pass


def as_operator(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    return M


def hermitian_asymmetry(M) -> float:
    M = np.asarray(M)
    return float(np.max(np.abs(M - M.conj().T))) if M.size else 0.0


def check_hermitian(M, atol: float = HERMITIAN_ATOL) -> np.ndarray:
    """Return ``M`` as a complex square array, raising if it is not Hermitian.

    The tolerance is absolute for matrices of norm up to one and scales with
    the largest entry beyond that.
    """
    M = as_operator(M)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    asym = hermitian_asymmetry(M)
    if asym > atol * scale:
        raise NotHermitianError(asym, atol * scale)
    return M


def check_state(psi, atol: float = NORM_ATOL) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise DimensionError(f"state vector must be 1-d, got shape {psi.shape}")
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > atol:
        raise ValueError(f"state vector norm {norm!r} differs from 1")
    return psi


def check_density_matrix(rho, atol: float = NORM_ATOL) -> np.ndarray:
    rho = check_hermitian(rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > atol:
        raise ValueError(f"density matrix trace {tr!r} differs from 1")
    lam_min = np.linalg.eigvalsh(rho)[0]
    if lam_min < -atol:
        raise ValueError(f"density matrix has negative eigenvalue {lam_min:.3e}")
    return rho


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def commutator(A, B) -> np.ndarray:
    return A @ B - B @ A


def purity(rho) -> float:
    return float(np.real(np.trace(rho @ rho)))


@dataclass(frozen=True)
class EigenDecomposition:
    """Ascending eigenvalues and column eigenvectors of a Hermitian matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    phase_convention: str = "max-real-positive"

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def vector(self, k: int) -> np.ndarray:
        return self.eigenvectors[:, k]

    def gap(self, i: int = 0, j: int = 1) -> float:
        return float(self.eigenvalues[j] - self.eigenvalues[i])

    def ground_subspace(self, rtol: float = 1e-9) -> np.ndarray:
        """Eigenvectors whose eigenvalue lies within ``rtol * ||M||`` of the minimum."""
        lam = self.eigenvalues
        scale = max(1.0, float(np.max(np.abs(lam))))
        mask = lam - lam[0] <= rtol * scale
        return self.eigenvectors[:, mask]

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.conj().T


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude component is real positive."""
    vectors = np.array(vectors, dtype=complex)
    idx = np.argmax(np.abs(vectors), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    return vectors * (np.abs(pivots) / pivots)


def hermitian_eig(M, check: bool = True) -> EigenDecomposition:
    M = check_hermitian(M) if check else as_operator(M)
    lam, V = np.linalg.eigh(M)
    return EigenDecomposition(lam, fix_phases(V))


def align_phases(reference: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Multiply each column of ``vectors`` by the phase making its overlap with
    the matching column of ``reference`` real and non-negative."""
    ov = np.einsum("ij,ij->j", reference.conj(), vectors)
    phase = np.ones_like(ov)
    nz = np.abs(ov) > 1e-14
    phase[nz] = np.abs(ov[nz]) / ov[nz]
    return vectors * phase


def track_branches(prev: EigenDecomposition, cur: EigenDecomposition) -> EigenDecomposition:
    """Reorder and phase-align ``cur`` to follow the eigenvectors of ``prev``.

    Columns are matched by maximal total overlap, so levels keep their label
    through exact crossings.
    """
    overlap = np.abs(prev.eigenvectors.conj().T @ cur.eigenvectors)
    _, perm = linear_sum_assignment(-overlap)
    vecs = align_phases(prev.eigenvectors, cur.eigenvectors[:, perm])
    return EigenDecomposition(cur.eigenvalues[perm], vecs, "tracked")


def expm_unitary(H, dt: float) -> np.ndarray:
    """``exp(-i H dt)`` through the eigendecomposition of ``H``."""
    lam, V = np.linalg.eigh(check_hermitian(H))
    return (V * np.exp(-1j * lam * dt)) @ V.conj().T


def tensor(*factors) -> np.ndarray:
    out = np.asarray(factors[0], dtype=complex)
    for f in factors[1:]:
        out = np.kron(out, np.asarray(f, dtype=complex))
    return out


def partial_trace_meter(rho, system_dim: int, meter_dim: int) -> np.ndarray:
    rho = as_operator(rho)
    if rho.shape[0] != system_dim * meter_dim:
        raise DimensionError(
            f"density matrix of dim {rho.shape[0]} is not {system_dim} x {meter_dim}"
        )
    return np.einsum("ikjk->ij", rho.reshape(system_dim, meter_dim, system_dim, meter_dim))


def partial_trace_system(rho, system_dim: int, meter_dim: int) -> np.ndarray:
    rho = as_operator(rho)
    if rho.shape[0] != system_dim * meter_dim:
        raise DimensionError(
            f"density matrix of dim {rho.shape[0]} is not {system_dim} x {meter_dim}"
        )
    return np.einsum("kikj->ij", rho.reshape(system_dim, meter_dim, system_dim, meter_dim))


def pauli_string(n_qubits: int, spec: Sequence[tuple[int, str]]) -> np.ndarray:
    """Tensor product of single-site Paulis, identity on unlisted sites.

    >>> pauli_string(2, [(0, "z"), (1, "z")]).diagonal().real
    array([ 1., -1., -1.,  1.])
    """
    factors = [I2] * n_qubits
    seen = set()
    for site, axis in spec:
        if site in seen:
            raise ValueError(f"duplicate site {site} in Pauli string")
        if not 0 <= site < n_qubits:
            raise ValueError(f"site {site} out of range for {n_qubits} qubits")
        seen.add(site)
        factors[site] = PAULI[axis.lower()]
    return tensor(*factors)


def basis_state(index: int, dim: int) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


# ---------------------------------------------------------------------------
# time propagation

@dataclass
class Trajectory:
    """States recorded on a time grid, with the settings that produced them."""

    times: np.ndarray
    states: np.ndarray
    steps: int
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.times)


SCHEMES = ("midpoint", "magnus4")
_CHUNK = 256
_GAUSS = np.sqrt(3.0) / 6.0


def _slice_generators(H_of_t, t0, dt, steps, scheme):
    """Yield stacks of effective Hermitian generators ``K`` so that one slice
    is ``exp(-i K dt)``, ``_CHUNK`` slices at a time."""
    for start in range(0, steps, _CHUNK):
        k = np.arange(start, min(start + _CHUNK, steps))
        mids = t0 + (k + 0.5) * dt
        if scheme == "midpoint":
            yield np.array([H_of_t(t) for t in mids])
        else:
            # two-point Gauss-Legendre Magnus expansion, fourth order
            H1 = np.array([H_of_t(t) for t in mids - _GAUSS * dt])
            H2 = np.array([H_of_t(t) for t in mids + _GAUSS * dt])
            comm = H2 @ H1 - H1 @ H2
            yield 0.5 * (H1 + H2) - 1j * (np.sqrt(3.0) / 12.0) * dt * comm


def propagate(
    H_of_t: Callable[[float], np.ndarray],
    psi0,
    t0: float,
    t1: float,
    steps: int,
    scheme: str = "midpoint",
    record: bool = True,
) -> Trajectory:
    """Evolve ``psi0`` from ``t0`` to ``t1`` under ``H_of_t``.

    Each of the ``steps`` slices applies an exact exponential of a Hermitian
    generator, so the norm is preserved to rounding. ``scheme="midpoint"``
    samples ``H`` at the slice midpoint (second order); ``"magnus4"`` uses the
    fourth-order two-point Magnus generator at the same exponential cost.

    ``psi0`` may also be a matrix whose columns are propagated together.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    psi0 = np.asarray(psi0, dtype=complex)
    vector = psi0.ndim == 1
    psi = psi0.reshape(psi0.shape[0], -1).copy()
    dim = psi.shape[0]
    H_probe = as_operator(H_of_t(t0))
    if H_probe.shape[0] != dim:
        raise DimensionError(f"Hamiltonian dim {H_probe.shape[0]} != state dim {dim}")
    dt = (t1 - t0) / steps
    states = [psi.copy()] if record else None
    for K in _slice_generators(H_of_t, t0, dt, steps, scheme):
        lam, V = np.linalg.eigh(K)
        phases = np.exp(-1j * lam * dt)
        for Vj, ph in zip(V, phases):
            psi = Vj @ (ph[:, None] * (Vj.conj().T @ psi))
            if record:
                states.append(psi)
    if record:
        times = np.linspace(t0, t1, steps + 1)
        states = np.array(states)
    else:
        times = np.array([t0, t1])
        states = np.array([psi0.reshape(dim, -1), psi])
    if vector:
        states = states[..., 0]
    return Trajectory(times, states, steps, {"scheme": scheme})


def propagator(H_of_t, dim: int, t0: float, t1: float, steps: int, scheme: str = "midpoint") -> np.ndarray:
    """Full unitary ``U(t1, t0)`` under ``H_of_t``."""
    if t1 == t0:
        return np.eye(dim, dtype=complex)
    return propagate(H_of_t, np.eye(dim, dtype=complex), t0, t1, steps, scheme, record=False).final


def propagate_grid(H_of_t, psi0, times: Sequence[float], substeps: int, scheme: str = "midpoint") -> np.ndarray:
    """States at every point of ``times`` (ascending), ``substeps`` slices per interval."""
    times = np.asarray(times, dtype=float)
    psi = np.array(psi0, dtype=complex)
    out = [psi]
    for a, b in zip(times[:-1], times[1:]):
        if b == a:
            out.append(psi)
            continue
        psi = propagate(H_of_t, psi, a, b, substeps, scheme, record=False).final
        out.append(psi)
    return np.array(out)
