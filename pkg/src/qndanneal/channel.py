"""Reduced system dynamics under a meter coupling.

When ``[X_M, H_M] = 0`` the total Hamiltonian is block diagonal in the joint
eigenbasis ``{|m_j>}`` of the meter operators, each block being the system
Hamiltonian ``H_S + m_j Y_S`` (plus a constant phase). Tracing the meter then
gives a Kraus channel with ``K_j = sqrt(<m_j|rho_M|m_j>) U_j``. Otherwise the
reduced state is obtained from full system-meter propagation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import qcore
from .model import AnnealSetup, LZProblem, cd_hamiltonian_lz, interaction_operator, system_hamiltonian, total_hamiltonian
from .qcore import (
    EigenDecomposition,
    hermitian_eig,
    partial_trace_meter,
    partial_trace_system,
    projector,
    propagate_grid,
    propagator,
    track_branches,
)

DEFAULT_STEPS = 4000


class NonCommutingMeterError(ValueError):
    """The meter Hamiltonian does not commute with the coupling operator."""


@dataclass(frozen=True)
class KrausSet:
    operators: tuple

    def completeness_error(self) -> float:
        dim = self.operators[0].shape[1]
        S = sum(K.conj().T @ K for K in self.operators)
        return float(np.max(np.abs(S - np.eye(dim))))

    def apply(self, rho) -> np.ndarray:
        return sum(K @ rho @ K.conj().T for K in self.operators)

    def __len__(self):
        return len(self.operators)

    def __iter__(self):
        return iter(self.operators)


@dataclass(frozen=True)
class MeterBranches:
    """Joint eigenbasis of ``X_M`` and ``H_M`` with the initial populations."""

    m: np.ndarray
    vectors: np.ndarray
    weights: np.ndarray

    def nonzero(self, tol: float = 1e-15):
        return [j for j, w in enumerate(self.weights) if w > tol]


def meter_branches(setup: AnnealSetup, atol: float = 1e-12) -> MeterBranches:
    """Diagonalize ``X_M`` and, inside its degenerate eigenspaces, ``H_M``."""
    meter = setup.meter
    if meter is None:
        return MeterBranches(np.zeros(1), np.ones((1, 1), dtype=complex), np.ones(1))
    if not meter.commutes(atol):
        raise NonCommutingMeterError("[X_M, H_M] != 0: the reduced dynamics is not a rescaling channel")
    eig = hermitian_eig(meter.X_M)
    lam, V = eig.eigenvalues, eig.eigenvectors
    scale = max(1.0, float(np.max(np.abs(lam))))
    blocks, start = [], 0
    for k in range(1, len(lam) + 1):
        if k == len(lam) or lam[k] - lam[start] > 1e-9 * scale:
            blocks.append((start, k))
            start = k
    cols = []
    for a, b in blocks:
        sub = V[:, a:b]
        if b - a > 1:
            w, R = np.linalg.eigh(sub.conj().T @ meter.H_M @ sub)
            sub = sub @ R
        cols.append(sub)
    V = np.hstack(cols)
    weights = np.real(np.einsum("ij,ik,kj->j", V.conj(), meter.rho0, V))
    return MeterBranches(lam, V, np.clip(weights, 0.0, None))


def block_hamiltonian(setup: AnnealSetup, m: float, t: float) -> np.ndarray:
    """System Hamiltonian seen by meter branch ``m``: ``H_S(t) + m Y_S(t)``."""
    H = system_hamiltonian(setup, t)
    if setup.mode == "none" or m == 0.0:
        return H
    return H + m * interaction_operator(setup, t)


def rescaled_propagator(setup: AnnealSetup, x: float, t0: float, t1: float, steps: int = DEFAULT_STEPS,
                        scheme: str = "midpoint") -> np.ndarray:
    """Propagator of ``x H_S(t)`` from ``t0`` to ``t1``."""
    return propagator(lambda t: x * system_hamiltonian(setup, t), setup.system_dim, t0, t1, steps, scheme)


def branch_propagator(setup: AnnealSetup, m: float, t0: float, t1: float, steps: int = DEFAULT_STEPS,
                      scheme: str = "midpoint") -> np.ndarray:
    return propagator(lambda t: block_hamiltonian(setup, m, t), setup.system_dim, t0, t1, steps, scheme)


def full_propagator(setup: AnnealSetup, t: float, steps: int = DEFAULT_STEPS, scheme: str = "midpoint") -> np.ndarray:
    """System-meter propagator from the start of the protocol to ``t``."""
    return propagator(lambda s: total_hamiltonian(setup, s), setup.total_dim, setup.t_start, t, steps, scheme)


def kraus_operators(setup: AnnealSetup, t: Optional[float] = None, steps: int = DEFAULT_STEPS,
                    scheme: str = "midpoint") -> KrausSet:
    """Kraus operators of the reduced map from the protocol start to ``t``.

    Requires ``[X_M, H_M] = 0``; branches with zero initial weight are dropped.
    """
    t = setup.t_end if t is None else t
    br = meter_branches(setup)
    ops = tuple(
        np.sqrt(br.weights[j]) * branch_propagator(setup, br.m[j], setup.t_start, t, steps, scheme)
        for j in br.nonzero()
    )
    return KrausSet(ops)


def kraus_plus_pair(setup: AnnealSetup, t: Optional[float] = None, steps: int = DEFAULT_STEPS,
                    scheme: str = "midpoint") -> KrausSet:
    """``K_{++} = (U+ + U-)/2`` and ``K_{-+} = (U+ - U-)/2`` for a qubit meter
    in ``|+>`` with ``X_M = x0 sigma_z``, ``H_M = 0`` and full coupling, where
    ``U+ = U^[1+x0]`` and ``U- = U^[1-x0]``. These are the operators of the
    same channel read out in the ``|+->`` meter basis.
    """
    meter = setup.meter
    if meter is None or meter.x0 is None or setup.mode != "full":
        raise ValueError("needs a qubit meter preset with full coupling")
    t = setup.t_end if t is None else t
    x0 = meter.x0
    Up = rescaled_propagator(setup, 1 + x0, setup.t_start, t, steps, scheme)
    Um = rescaled_propagator(setup, 1 - x0, setup.t_start, t, steps, scheme)
    return KrausSet(((Up + Um) / 2, (Up - Um) / 2))


def _split_product(setup: AnnealSetup, rho0) -> np.ndarray:
    """Return the system factor of an initial state, rejecting correlated inputs."""
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        rho0 = projector(rho0)
    if rho0.shape[0] == setup.system_dim:
        return rho0
    if rho0.shape[0] != setup.total_dim:
        raise qcore.DimensionError(f"initial state of dim {rho0.shape[0]} fits neither system nor system+meter")
    rs = partial_trace_meter(rho0, setup.system_dim, setup.meter_dim)
    rm = partial_trace_system(rho0, setup.system_dim, setup.meter_dim)
    if np.max(np.abs(np.kron(rs, rm) - rho0)) > 1e-10:
        raise ValueError("initial system-meter state is not a product state")
    if setup.meter is not None and np.max(np.abs(rm - setup.meter.rho0)) > 1e-10:
        raise ValueError("meter factor of the initial state differs from the meter spec")
    return rs


def full_reduced_evolution(setup: AnnealSetup, rho_S0, t: Optional[float] = None, steps: int = DEFAULT_STEPS,
                           scheme: str = "midpoint") -> np.ndarray:
    """Reference path: propagate system and meter together, then trace the meter."""
    t = setup.t_end if t is None else t
    rho_S0 = _split_product(setup, rho_S0)
    if setup.meter is None:
        U = propagator(lambda s: system_hamiltonian(setup, s), setup.system_dim, setup.t_start, t, steps, scheme)
        return U @ rho_S0 @ U.conj().T
    rho = np.kron(rho_S0, setup.meter.rho0)
    U = full_propagator(setup, t, steps, scheme)
    return partial_trace_meter(U @ rho @ U.conj().T, setup.system_dim, setup.meter_dim)


def reduced_evolution(setup: AnnealSetup, rho_S0, t: Optional[float] = None, steps: int = DEFAULT_STEPS,
                      scheme: str = "midpoint") -> np.ndarray:
    """``rho_S(t) = sum_j K_j rho_S(0) K_j^dagger``.

    Falls back to :func:`full_reduced_evolution` when the meter Hamiltonian
    does not commute with ``X_M``.
    """
    t = setup.t_end if t is None else t
    rho_S0 = _split_product(setup, rho_S0)
    if t == setup.t_start:
        return rho_S0.copy()
    if setup.meter is not None and not setup.meter.commutes():
        return full_reduced_evolution(setup, rho_S0, t, steps, scheme)
    return kraus_operators(setup, t, steps, scheme).apply(rho_S0)


def branch_states(setup: AnnealSetup, psi0, times: Sequence[float], substeps: int = 50,
                  scheme: str = "midpoint") -> list[tuple[float, np.ndarray]]:
    """Propagate a pure system state through every populated meter branch.

    Returns ``(weight, states)`` pairs where ``states`` has one row per time.
    """
    br = meter_branches(setup)
    return [
        (br.weights[j], propagate_grid(lambda t, m=br.m[j]: block_hamiltonian(setup, m, t), psi0, times, substeps, scheme))
        for j in br.nonzero()
    ]


def reduced_trajectory(setup: AnnealSetup, psi0, times: Sequence[float], substeps: int = 50,
                       scheme: str = "midpoint") -> np.ndarray:
    """Reduced density matrices at each grid time for a pure initial system state.

    ``times`` must start at the protocol start. Uses the branch channel when
    it applies, full propagation of the joint pure state otherwise.
    """
    times = np.asarray(times, dtype=float)
    psi0 = np.asarray(psi0, dtype=complex)
    if setup.meter is None or setup.meter.commutes():
        out = np.zeros((len(times), setup.system_dim, setup.system_dim), dtype=complex)
        for w, states in branch_states(setup, psi0, times, substeps, scheme):
            out += w * np.einsum("ki,kj->kij", states, states.conj())
        return out
    # the meter state may be mixed: propagate its eigen-decomposition
    lam, W = np.linalg.eigh(setup.meter.rho0)
    out = np.zeros((len(times), setup.system_dim, setup.system_dim), dtype=complex)
    for p, w in zip(lam, W.T):
        if p <= 1e-15:
            continue
        states = propagate_grid(lambda t: total_hamiltonian(setup, t), np.kron(psi0, w), times, substeps, scheme)
        for k, st in enumerate(states):
            out[k] += p * partial_trace_meter(np.outer(st, st.conj()), setup.system_dim, setup.meter_dim)
    return out


def instantaneous_bases(setup: AnnealSetup, times: Sequence[float]) -> list[EigenDecomposition]:
    """Eigenbases of ``H_S`` along ``times``, branch-tracked and phase-aligned."""
    bases = []
    for t in times:
        e = hermitian_eig(system_hamiltonian(setup, t))
        bases.append(e if not bases else track_branches(bases[-1], e))
    return bases


def coherence_trace(setup: AnnealSetup, psi0, times: Sequence[float], indices=(0, 1), substeps: int = 50,
                    scheme: str = "midpoint") -> np.ndarray:
    """``|<psi_m(t)| rho_S(t) |psi_n(t)>|`` in the instantaneous eigenbasis."""
    m, n = indices
    rhos = reduced_trajectory(setup, psi0, times, substeps, scheme)
    out = np.empty(len(times))
    for k, (t, rho) in enumerate(zip(times, rhos)):
        e = hermitian_eig(system_hamiltonian(setup, t))
        lam = e.eigenvalues
        scale = max(1.0, float(np.max(np.abs(lam))))
        for i in (m, n):
            others = np.delete(lam, i)
            if np.min(np.abs(others - lam[i])) < 1e-9 * scale:
                raise ValueError(f"level {i} is degenerate at t = {t}")
        out[k] = abs(e.vector(m).conj() @ rho @ e.vector(n))
    return out


SPECTRUM_MODES = ("bare", "qnd", "cd")


def spectrum_trace(setup: AnnealSetup, times: Sequence[float], mode: str = "bare",
                   branch: Optional[int] = None) -> np.ndarray:
    """Instantaneous eigenvalues along ``times``, one column per tracked level.

    ``qnd`` diagonalizes the system-meter Hamiltonian; with ``branch=j`` it
    returns only the levels of meter branch ``j`` (``H_S + m_j Y_S``).
    ``cd`` is the counterdiabatically corrected Landau-Zener Hamiltonian.
    """
    if mode not in SPECTRUM_MODES:
        raise ValueError(f"unknown spectrum mode {mode!r}")
    if mode == "bare":
        H_of_t = lambda t: system_hamiltonian(setup, t)  # noqa: E731
    elif mode == "cd":
        if not isinstance(setup.problem, LZProblem):
            raise ValueError("counterdiabatic spectrum is implemented for the LZ sweep only")
        p = setup.problem
        H_of_t = lambda t: cd_hamiltonian_lz(p.v, p.g, t)  # noqa: E731
    elif branch is not None:
        m = meter_branches(setup).m[branch]
        H_of_t = lambda t: block_hamiltonian(setup, m, t)  # noqa: E731
    else:
        H_of_t = lambda t: total_hamiltonian(setup, t)  # noqa: E731
    out, prev = [], None
    for t in times:
        e = hermitian_eig(H_of_t(t))
        if prev is not None:
            e = track_branches(prev, e)
        out.append(e.eigenvalues)
        prev = e
    return np.array(out)


# ---------------------------------------------------------------------------
# first-order correction to the von Neumann equation

@dataclass(frozen=True)
class CorrectionCheck:
    residual: float
    residual_half: float
    h: float

    @property
    def ratio(self) -> float:
        return self.residual / self.residual_half if self.residual_half > 0 else np.inf

    @property
    def quadratic(self) -> bool:
        """Whether halving ``h`` shrinks the residual at second order."""
        return self.ratio >= 3.5


def _correction_residual(setup, rho_S0, t, h, substeps, scheme):
    x0 = setup.meter.x0
    times = [setup.t_start, t - h, t, t + h]
    H_of = lambda x: (lambda s: x * system_hamiltonian(setup, s))  # noqa: E731
    U = {}
    for x in (1 + x0, 1 - x0):
        # one long leg to t - h, then two short legs resolved equally finely
        U0 = propagator(H_of(x), setup.system_dim, times[0], times[1], substeps[0], scheme)
        U1 = propagator(H_of(x), setup.system_dim, times[1], times[2], substeps[1], scheme) @ U0
        U2 = propagator(H_of(x), setup.system_dim, times[2], times[3], substeps[1], scheme) @ U1
        U[x] = (U0, U1, U2)
    rho_x = {x: [u @ rho_S0 @ u.conj().T for u in U[x]] for x in U}
    rho = [0.5 * (a + b) for a, b in zip(rho_x[1 + x0], rho_x[1 - x0])]
    drho = (rho[2] - rho[0]) / (2 * h)
    e = hermitian_eig(system_hamiltonian(setup, t))
    V = e.eigenvectors
    to_eig = lambda A: V.conj().T @ A @ V  # noqa: E731
    E = e.eigenvalues
    dE = E[:, None] - E[None, :]
    lhs = to_eig(drho)
    rhs = -1j * dE * to_eig(rho[1]) - 0.5j * x0 * dE * to_eig(rho_x[1 + x0][1] - rho_x[1 - x0][1])
    return float(np.max(np.abs(lhs - rhs)))


def correction_term_check(setup: AnnealSetup, rho_S0, t: float, h: float = 1e-4, steps: int = DEFAULT_STEPS,
                          substeps: int = 64, scheme: str = "magnus4") -> CorrectionCheck:
    """Finite-difference check of the reduced equation of motion.

    For a qubit meter in ``|+>`` with ``H_M = 0`` the reduced state obeys, in
    the instantaneous eigenbasis of ``H_S(t)``,

        d rho_mn/dt = -i (E_m - E_n) rho_mn
                      - (i x0 / 2) (E_m - E_n) (rho^[1+x0] - rho^[1-x0])_mn

    with ``exp(-iHt)`` propagation. ``d rho/dt`` comes from a central
    difference of step ``h``; the check is repeated at ``h/2`` so the caller
    can confirm the residual is truncation-dominated (ratio near 4).
    """
    meter = setup.meter
    if meter is None or meter.x0 is None or setup.mode != "full":
        raise ValueError("correction check needs the qubit meter preset with full coupling")
    if np.max(np.abs(meter.H_M)) > 0:
        raise ValueError("correction check assumes H_M = 0")
    plus = projector(qcore.KET_PLUS)
    if np.max(np.abs(meter.rho0 - plus)) > 1e-12:
        raise ValueError("correction check assumes the meter starts in |+>")
    rho_S0 = _split_product(setup, rho_S0)
    if not setup.t_start < t - h:
        raise ValueError("t - h must lie after the protocol start")
    r1 = _correction_residual(setup, rho_S0, t, h, (steps, substeps), scheme)
    r2 = _correction_residual(setup, rho_S0, t, h / 2, (steps, substeps), scheme)
    return CorrectionCheck(r1, r2, h)
