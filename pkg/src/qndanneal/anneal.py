"""Single annealing runs and their figures of merit."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import channel
from .model import AnnealSetup, PathProblem, Schedule, system_hamiltonian, total_hamiltonian
from .qcore import hermitian_eig, partial_trace_meter, projector, propagate

CONVERGENCE_TOL = 1e-6


@dataclass
class AnnealResult:
    state: np.ndarray
    fidelity: float
    success_probability: float
    T: float
    steps: int
    converged: Optional[bool] = None
    step_delta: Optional[float] = None

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity


def initial_state(setup: AnnealSetup) -> np.ndarray:
    """Ground state of ``H_S`` at the protocol start."""
    return hermitian_eig(system_hamiltonian(setup, setup.t_start)).vector(0)


def _final_reduced_state(setup: AnnealSetup, psi0: np.ndarray, steps: int, scheme: str, method: str) -> np.ndarray:
    if setup.meter is None:
        psi = propagate(lambda t: system_hamiltonian(setup, t), psi0, setup.t_start, setup.t_end,
                        steps, scheme, record=False).final
        return projector(psi)
    if method == "auto":
        method = "branch" if setup.meter.commutes() else "full"
    if method == "branch":
        rho = np.zeros((setup.system_dim,) * 2, dtype=complex)
        br = channel.meter_branches(setup)
        for j in br.nonzero():
            H = lambda t, m=br.m[j]: channel.block_hamiltonian(setup, m, t)  # noqa: E731
            psi = propagate(H, psi0, setup.t_start, setup.t_end, steps, scheme, record=False).final
            rho += br.weights[j] * projector(psi)
        return rho
    if method != "full":
        raise ValueError(f"unknown method {method!r}")
    lam, W = np.linalg.eigh(setup.meter.rho0)
    cols = [np.sqrt(p) * np.kron(psi0, w) for p, w in zip(lam, W.T) if p > 1e-15]
    out = propagate(lambda t: total_hamiltonian(setup, t), np.array(cols).T, setup.t_start, setup.t_end,
                    steps, scheme, record=False).final
    return partial_trace_meter(out @ out.conj().T, setup.system_dim, setup.meter_dim)


def run_anneal(setup: AnnealSetup, T: Optional[float] = None, steps: int = channel.DEFAULT_STEPS,
               scheme: str = "midpoint", method: str = "auto", check_convergence: bool = False) -> AnnealResult:
    """Start in the ground state of ``H_S`` (times the meter state) and evolve.

    ``method="branch"`` evolves each populated meter branch separately and is
    exact whenever ``[X_M, H_M] = 0``; ``"full"`` propagates system and meter
    together; ``"auto"`` picks the former when it applies. The fidelity is the
    overlap with one ground state of the final ``H_S``; the success
    probability is the population of its whole ground eigenspace.

    With ``check_convergence`` the run is repeated at twice the steps and
    flagged unconverged if the fidelity moves by more than 1e-6.
    """
    if T is not None:
        setup = setup.with_duration(T)
    psi0 = initial_state(setup)
    rho = _final_reduced_state(setup, psi0, steps, scheme, method)
    target = hermitian_eig(system_hamiltonian(setup, setup.t_end))
    g0 = target.vector(0)
    F = float(np.real(g0.conj() @ rho @ g0))
    G = target.ground_subspace()
    p = float(np.real(np.trace(G.conj().T @ rho @ G)))
    result = AnnealResult(rho, min(max(F, 0.0), 1.0), min(max(p, 0.0), 1.0), setup.T, steps)
    if check_convergence:
        rho2 = _final_reduced_state(setup, psi0, 2 * steps, scheme, method)
        delta = abs(float(np.real(g0.conj() @ rho2 @ g0)) - F)
        result.step_delta = delta
        result.converged = delta <= CONVERGENCE_TOL
    return result


def lz_infidelity(v: float, g: float) -> float:
    """Diabatic transition probability ``exp(-pi (g/2)^2 / (v/2))``."""
    if not v > 0:
        raise ValueError("sweep rate v must be positive")
    return math.exp(-math.pi * (g / 2) ** 2 / (v / 2))


# ---------------------------------------------------------------------------
# adiabaticity

@dataclass(frozen=True)
class AdiabaticityFactor:
    M: float
    gap: float
    level: Optional[int]

    @property
    def factor(self) -> float:
        return self.M / self.gap**2 if self.level is not None else 0.0


def _path_operators(setup: AnnealSetup, s: float, meter_index: Optional[int]):
    """``H(s)`` and ``dH/ds`` of the branch the meter occupies."""
    problem = setup.problem
    H = problem.hamiltonian(s)
    dH = problem.derivative(s)
    if setup.meter is None or setup.mode == "none" or meter_index is None:
        return H, dH
    m = channel.meter_branches(setup).m[meter_index]
    if setup.mode == "full":
        return (1 + m) * H, (1 + m) * dH
    Hf = setup.final_hamiltonian()
    return H + m * s * Hf, dH + m * Hf


def adiabaticity_factor(setup: AnnealSetup, s: float, meter_index: Optional[int] = None,
                        tol: float = 1e-12) -> AdiabaticityFactor:
    """Matrix element ``|<psi_0| dH/ds |psi_k>|`` to the lowest level ``k`` where
    it is non-zero, the gap ``E_k - E_0``, and their ratio ``|M| / gap^2``.

    With a meter, ``meter_index`` selects the meter eigenstate ``|m_i>`` the
    system is paired with; the Hamiltonian of that branch is used.
    """
    H, dH = _path_operators(setup, s, meter_index)
    e = hermitian_eig(H)
    row = np.abs(e.vector(0).conj() @ dH @ e.eigenvectors)
    scale = max(1.0, float(np.max(np.abs(dH))))
    lam = e.eigenvalues
    lam_scale = max(1.0, float(np.max(np.abs(lam))))
    k = 1
    while k < e.dim:
        # a degenerate level contributes the norm over its whole eigenspace,
        # which does not depend on the arbitrary basis chosen inside it
        end = k + 1
        while end < e.dim and lam[end] - lam[k] <= 1e-9 * lam_scale:
            end += 1
        M = float(np.linalg.norm(row[k:end]))
        if M > tol * scale:
            gap = e.gap(0, k)
            if gap < 1e-9:
                raise ValueError(f"levels 0 and {k} are degenerate at s = {s}")
            return AdiabaticityFactor(M, gap, k)
        k = end
    return AdiabaticityFactor(0.0, e.gap(0, 1) if e.dim > 1 else 0.0, None)


def local_adiabatic_schedule(setup: AnnealSetup, eps: float = 0.1, n_grid: int = 2001,
                             meter_index: Optional[int] = None) -> Schedule:
    """Schedule saturating ``(ds/dt) |M(s)| / g(s)^2 = eps`` everywhere.

    ``dt/ds = |M| / (eps g^2)`` is tabulated on ``n_grid`` points in ``s`` and
    integrated with the trapezoid rule; the returned schedule's ``T`` is the
    total duration.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    s = np.linspace(0.0, 1.0, n_grid)
    rate = np.empty(n_grid)
    for k, sk in enumerate(s):
        a = adiabaticity_factor(setup, sk, meter_index)
        if a.gap < 1e-9:
            raise ValueError(f"gap {a.gap:.2e} below 1e-9 at s = {sk}")
        rate[k] = a.factor / eps
    t = cumulative_trapezoid(rate, s, initial=0.0)
    if not t[-1] > 0:
        raise ValueError("schedule has zero duration: dH/ds never couples the ground state")
    # repeated times (M = 0 stretches) would break interpolation
    keep = np.concatenate([[True], np.diff(t) > 0])
    keep[-1] = True
    return Schedule(float(t[-1]), t[keep], np.concatenate([s[keep][:-1], [1.0]]))


def constant_gap_toy(omega: float = 1.0) -> PathProblem:
    """Spin rotated from ``sigma_z`` to ``sigma_x`` at constant gap ``2 omega``."""
    from .qcore import SX, SZ

    return PathProblem(
        lambda s: omega * (np.cos(np.pi * s / 2) * SZ + np.sin(np.pi * s / 2) * SX),
        lambda s: omega * np.pi / 2 * (-np.sin(np.pi * s / 2) * SZ + np.cos(np.pi * s / 2) * SX),
        2,
    )
