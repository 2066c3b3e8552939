"""Hamiltonians: QUBO/Ising problems, annealing paths, the Landau-Zener sweep,
system-meter couplings, a counterdiabatic comparator and the three-body gadget.

Spin convention: ``z_i = +1`` is the qubit state ``|0>`` and encodes the binary
variable ``x_i = 1`` (``z = 2x - 1``).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from itertools import product
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .qcore import (
    KET0,
    KET1,
    KET_MINUS,
    KET_PLUS,
    SX,
    SY,
    SZ,
    EigenDecomposition,
    check_density_matrix,
    check_hermitian,
    commutator,
    pauli_string,
    projector,
    tensor,
)

MODES = ("none", "full", "constrained")
_MODE_ALIASES = {"full_qnd": "full", "qnd": "full", "coherent": "none"}

# LZ sweeps always run t in [-RAMP/v, +RAMP/v]
LZ_RAMP = 10.0


# ---------------------------------------------------------------------------
# problems

@dataclass(frozen=True)
class QuboProblem:
    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        object.__setattr__(self, "Q", Q)

    @property
    def n_vars(self) -> int:
        return self.Q.shape[0]

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.Q @ x)


@dataclass(frozen=True)
class ThreeBodyTerm:
    sites: tuple[int, int, int]
    c: float

    def __post_init__(self):
        sites = tuple(int(s) for s in self.sites)
        if len(sites) != 3 or len(set(sites)) != 3:
            raise ValueError(f"three-body term needs 3 distinct sites, got {self.sites}")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "c", float(self.c))


@dataclass(frozen=True)
class IsingProblem:
    """Classical energy ``sum_{i != j} J_ij z_i z_j + sum_i h_i z_i
    + sum c z_a z_b z_c + offset``.

    ``J`` is symmetric with zero diagonal, so each pair contributes
    ``2 J_ij z_i z_j``. ``ancilla_map`` maps ancilla sites added by
    :func:`gadget_decompose` to the three sites they replace.
    """

    J: np.ndarray
    h: np.ndarray
    offset: float = 0.0
    three_body: tuple[ThreeBodyTerm, ...] = ()
    ancilla_map: dict = field(default_factory=dict)

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        h = np.array(self.h, dtype=float)
        n = len(h)
        if J.shape != (n, n):
            raise ValueError(f"J has shape {J.shape}, expected {(n, n)}")
        if not np.allclose(J, J.T, atol=1e-12) or np.any(np.diag(J) != 0):
            raise ValueError("J must be symmetric with zero diagonal")
        terms = tuple(t if isinstance(t, ThreeBodyTerm) else ThreeBodyTerm(*t) for t in self.three_body)
        for t in terms:
            if max(t.sites) >= n:
                raise ValueError(f"three-body sites {t.sites} out of range for {n} qubits")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "three_body", terms)

    @classmethod
    def from_couplings(cls, J, h, three_body=(), offset: float = 0.0) -> "IsingProblem":
        """Accept any square ``J`` and fold it into the canonical form.

        Only the symmetric part of ``J`` affects energies; its diagonal
        multiplies ``z_i^2 = 1`` and moves into the offset.
        """
        J = np.asarray(J, dtype=float)
        S = 0.5 * (J + J.T)
        d = np.diag(S).copy()
        np.fill_diagonal(S, 0.0)
        return cls(S, h, offset + float(d.sum()), tuple(three_body))

    @property
    def n_qubits(self) -> int:
        return len(self.h)

    def energy(self, z) -> float:
        """Classical energy of the spin configuration ``z`` (entries +-1)."""
        z = np.asarray(z, dtype=float)
        e = z @ self.J @ z + self.h @ z + self.offset
        for t in self.three_body:
            e += t.c * z[t.sites[0]] * z[t.sites[1]] * z[t.sites[2]]
        return float(e)

    def spin_table(self) -> np.ndarray:
        """All ``2^n`` spin configurations in computational-basis order."""
        bits = np.array(list(product((0, 1), repeat=self.n_qubits)), dtype=float)
        return 1.0 - 2.0 * bits


def qubo_to_ising(q: QuboProblem) -> IsingProblem:
    """Map ``y(x) = x^T Q x`` onto spins ``z = 2x - 1``.

    ``Q`` is symmetrized first. ``J = Q/4`` off the diagonal and
    ``h_i = sum_j Q_ij / 2``; the diagonal of ``Q`` (``x_i^2 = x_i``) and the
    constant terms land in ``offset`` so that ``energy(z) == y(x)`` exactly.
    """
    S = 0.5 * (q.Q + q.Q.T)
    J = S / 4.0
    np.fill_diagonal(J, 0.0)
    h = S.sum(axis=1) / 2.0
    offset = S.sum() / 4.0 + np.trace(S) / 4.0
    return IsingProblem(J, h, offset)


def bits_to_spins(x) -> np.ndarray:
    return 2.0 * np.asarray(x, dtype=float) - 1.0


def ising_hamiltonian(p: IsingProblem) -> np.ndarray:
    """Diagonal operator of ``p``'s classical energy, without the constant offset."""
    z = p.spin_table()
    diag = np.einsum("ki,ij,kj->k", z, p.J, z) + z @ p.h
    for t in p.three_body:
        a, b, c = t.sites
        diag = diag + t.c * z[:, a] * z[:, b] * z[:, c]
    return np.diag(diag).astype(complex)


def transverse_hamiltonian(n: int) -> np.ndarray:
    """``sum_i sigma_x^i``; its ground state is ``|->^n`` with energy ``-n``."""
    H = np.zeros((2**n, 2**n), dtype=complex)
    for i in range(n):
        H += pauli_string(n, [(i, "x")])
    return H


def lz_hamiltonian(v: float, g: float, t: float) -> np.ndarray:
    return 0.5 * v * t * SZ + 0.5 * g * SX


@dataclass(frozen=True)
class AnnealingProblem:
    """``(1 - s) H_T + s H_I`` for an Ising problem, ``s`` in [0, 1]."""

    ising: IsingProblem

    @property
    def n_qubits(self) -> int:
        return self.ising.n_qubits

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @cached_property
    def H_T(self) -> np.ndarray:
        return transverse_hamiltonian(self.n_qubits)

    @cached_property
    def H_I(self) -> np.ndarray:
        return ising_hamiltonian(self.ising)

    def hamiltonian(self, s: float) -> np.ndarray:
        return (1.0 - s) * self.H_T + s * self.H_I

    def derivative(self, s: float) -> np.ndarray:
        return self.H_I - self.H_T

    def time_window(self, T: float) -> tuple[float, float]:
        return 0.0, T


@dataclass(frozen=True)
class LZProblem:
    """Landau-Zener sweep ``(v t / 2) sigma_z + (g / 2) sigma_x`` over
    ``t in [-10/v, +10/v]``; the path parameter is ``s = (t + 10/v) v / 20``."""

    v: float
    g: float = 1.0

    def __post_init__(self):
        if self.v <= 0:
            raise ValueError("sweep rate v must be positive")

    dim = 2

    @property
    def duration(self) -> float:
        return 2 * LZ_RAMP / self.v

    def physical_time(self, s: float) -> float:
        return (2.0 * s - 1.0) * LZ_RAMP / self.v

    def hamiltonian(self, s: float) -> np.ndarray:
        return lz_hamiltonian(self.v, self.g, self.physical_time(s))

    def derivative(self, s: float) -> np.ndarray:
        # dH/dt * dt/ds = (v/2) sigma_z * 20/v
        return LZ_RAMP * SZ

    def time_window(self, T: float) -> tuple[float, float]:
        return -T / 2.0, T / 2.0

    @classmethod
    def for_duration(cls, T: float, g: float = 1.0) -> "LZProblem":
        return cls(2 * LZ_RAMP / T, g)


@dataclass(frozen=True)
class PathProblem:
    """Arbitrary smooth path ``H(s)`` with analytic derivative, for tests and toys."""

    hamiltonian_fn: Callable[[float], np.ndarray]
    derivative_fn: Callable[[float], np.ndarray]
    dim: int

    def hamiltonian(self, s):
        return np.asarray(self.hamiltonian_fn(s), dtype=complex)

    def derivative(self, s):
        return np.asarray(self.derivative_fn(s), dtype=complex)

    def time_window(self, T):
        return 0.0, T


Problem = Union[AnnealingProblem, LZProblem, PathProblem]


# ---------------------------------------------------------------------------
# schedules

@dataclass(frozen=True)
class Schedule:
    """Switching function ``f`` on ``[0, T]`` with ``f(0) = 0`` and ``f(T) = 1``.

    Linear by default; a tabulated schedule is interpolated linearly between
    its samples ``(times, values)``.
    """

    T: float
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("schedule duration T must be positive")
        if (self.times is None) != (self.values is None):
            raise ValueError("tabulated schedule needs both times and values")
        if self.times is not None:
            t = np.asarray(self.times, dtype=float)
            f = np.asarray(self.values, dtype=float)
            if t[0] != 0.0 or not np.isclose(t[-1], self.T, rtol=1e-12):
                raise ValueError("schedule table must span [0, T]")
            if f[0] != 0.0 or f[-1] != 1.0:
                raise ValueError("schedule table must satisfy f(0)=0 and f(T)=1")
            if np.any(np.diff(f) < 0) or np.any(np.diff(t) <= 0):
                raise ValueError("schedule table must be monotone")
            t = t.copy()
            t[-1] = self.T
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", f)

    @property
    def form(self) -> str:
        return "linear" if self.times is None else "table"

    def f(self, t: float) -> float:
        if self.times is None:
            return min(max(t / self.T, 0.0), 1.0)
        return float(np.interp(t, self.times, self.values))

    def df(self, t: float) -> float:
        if self.times is None:
            return 1.0 / self.T
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        return float((self.values[k + 1] - self.values[k]) / (self.times[k + 1] - self.times[k]))

    def rescaled(self, T: float) -> "Schedule":
        if self.times is None:
            return Schedule(T)
        return Schedule(T, self.times * (T / self.T), self.values)


# ---------------------------------------------------------------------------
# meter

_QUBIT_STATES = {"0": KET0, "1": KET1, "+": KET_PLUS, "-": KET_MINUS}


@dataclass(frozen=True)
class MeterSpec:
    X_M: np.ndarray
    H_M: np.ndarray
    rho0: np.ndarray
    x0: Optional[float] = None
    omega: Optional[float] = None

    def __post_init__(self):
        X = check_hermitian(self.X_M)
        H = check_hermitian(self.H_M)
        rho = check_density_matrix(self.rho0)
        if not X.shape == H.shape == rho.shape:
            raise ValueError("X_M, H_M and the meter state must share one dimension")
        object.__setattr__(self, "X_M", X)
        object.__setattr__(self, "H_M", H)
        object.__setattr__(self, "rho0", rho)

    @classmethod
    def qubit(cls, x0: float, omega: float = 0.0, state="0") -> "MeterSpec":
        """``X_M = x0 sigma_z``, ``H_M = omega sigma_x``; ``state`` is one of
        ``"0"``, ``"1"``, ``"+"``, ``"-"`` or an explicit vector/density matrix."""
        if isinstance(state, str):
            rho = projector(_QUBIT_STATES[state])
        else:
            state = np.asarray(state, dtype=complex)
            rho = projector(state) if state.ndim == 1 else state
        return cls(x0 * SZ, omega * SX, rho, x0=float(x0), omega=float(omega))

    @property
    def dim(self) -> int:
        return self.X_M.shape[0]

    def commutes(self, atol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(commutator(self.X_M, self.H_M))) <= atol)


# ---------------------------------------------------------------------------
# setup

def normalize_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown interaction mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass(frozen=True)
class AnnealSetup:
    """One protocol run: problem path, schedule, optional meter, coupling mode.

    Protocol time runs over ``time_window`` (``[0, T]`` for annealing,
    ``[-T/2, T/2]`` for Landau-Zener); the schedule maps elapsed time to the
    path parameter ``s``.
    """

    problem: Problem
    schedule: Schedule
    meter: Optional[MeterSpec] = None
    mode: str = "none"

    def __post_init__(self):
        mode = normalize_mode(self.mode)
        object.__setattr__(self, "mode", mode)
        if mode != "none" and self.meter is None:
            raise ValueError(f"interaction mode {mode!r} requires a meter")
        if mode == "constrained" and not isinstance(self.problem, AnnealingProblem):
            raise ValueError("constrained mode needs an Ising-type problem with a final Hamiltonian")

    @classmethod
    def annealing(cls, ising: IsingProblem, T: float, meter=None, mode=None, schedule=None):
        mode = mode or ("full" if meter is not None else "none")
        return cls(AnnealingProblem(ising), schedule or Schedule(T), meter, mode)

    @classmethod
    def lz(cls, T: Optional[float] = None, g: float = 1.0, v: Optional[float] = None, meter=None, mode=None):
        """LZ sweep of duration ``T`` (so ``v = 20/T``), or of rate ``v``."""
        if (T is None) == (v is None):
            raise ValueError("give exactly one of T or v")
        problem = LZProblem(v, g) if v is not None else LZProblem.for_duration(T, g)
        mode = mode or ("full" if meter is not None else "none")
        return cls(problem, Schedule(problem.duration), meter, mode)

    @property
    def T(self) -> float:
        return self.schedule.T

    @property
    def system_dim(self) -> int:
        return self.problem.dim

    @property
    def meter_dim(self) -> int:
        return 1 if self.meter is None else self.meter.dim

    @property
    def total_dim(self) -> int:
        return self.system_dim * self.meter_dim

    @property
    def t_start(self) -> float:
        return self.problem.time_window(self.T)[0]

    @property
    def t_end(self) -> float:
        return self.problem.time_window(self.T)[1]

    def s(self, t: float) -> float:
        return self.schedule.f(t - self.t_start)

    def ds_dt(self, t: float) -> float:
        return self.schedule.df(t - self.t_start)

    def with_duration(self, T: float) -> "AnnealSetup":
        problem = self.problem
        if isinstance(problem, LZProblem):
            problem = LZProblem.for_duration(T, problem.g)
        return replace(self, problem=problem, schedule=self.schedule.rescaled(T))

    def with_meter(self, meter: Optional[MeterSpec], mode: Optional[str] = None) -> "AnnealSetup":
        if meter is None:
            return replace(self, meter=None, mode="none")
        return replace(self, meter=meter, mode=mode or (self.mode if self.mode != "none" else "full"))

    def final_hamiltonian(self) -> np.ndarray:
        if not isinstance(self.problem, AnnealingProblem):
            raise ValueError("only annealing problems have a separate final Hamiltonian")
        return self.problem.H_I


def system_hamiltonian(setup: AnnealSetup, t: float) -> np.ndarray:
    """``H_S(t)``: ``(1 - f) H_T + f H_I`` or the LZ Hamiltonian at time ``t``."""
    problem = setup.problem
    if isinstance(problem, LZProblem) and setup.schedule.form == "linear":
        return lz_hamiltonian(problem.v, problem.g, t)
    return problem.hamiltonian(setup.s(t))


def system_derivative(setup: AnnealSetup, t: float) -> np.ndarray:
    """``dH_S/dt`` from the analytic path derivative and schedule slope."""
    return setup.problem.derivative(setup.s(t)) * setup.ds_dt(t)


def interaction_operator(setup: AnnealSetup, t: float) -> np.ndarray:
    """System factor ``Y_S(t)`` of the coupling ``Y_S(t) (x) X_M``."""
    if setup.mode == "full":
        return system_hamiltonian(setup, t)
    if setup.mode == "constrained":
        return setup.s(t) * setup.problem.H_I
    return np.zeros((setup.system_dim,) * 2, dtype=complex)


def total_hamiltonian(setup: AnnealSetup, t: float) -> np.ndarray:
    """System plus meter: ``H_S (x) 1 + Y_S (x) X_M + 1 (x) H_M``."""
    H_S = system_hamiltonian(setup, t)
    if setup.meter is None:
        return H_S
    m = setup.meter
    eye_m = np.eye(m.dim, dtype=complex)
    H = tensor(H_S, eye_m) + tensor(np.eye(setup.system_dim), m.H_M)
    if setup.mode != "none":
        H = H + tensor(interaction_operator(setup, t), m.X_M)
    return H


# ---------------------------------------------------------------------------
# comparators

def cd_angle_rate(v: float, g: float, t: float) -> float:
    """Rate of the mixing angle ``theta = atan2(g, v t)`` of the LZ Hamiltonian."""
    den = v * v * t * t + g * g
    if den == 0.0:
        raise ValueError("counterdiabatic term is singular for g = 0 at t = 0")
    return -g * v / den


def cd_hamiltonian_lz(v: float, g: float, t: float) -> np.ndarray:
    """LZ Hamiltonian plus the exact counterdiabatic term ``(dtheta/dt / 2) sigma_y``."""
    return lz_hamiltonian(v, g, t) + 0.5 * cd_angle_rate(v, g, t) * SY


def gap_targeting_interaction(eig: EigenDecomposition, tol: float = 1e-9) -> np.ndarray:
    """``Delta (|psi_1><psi_1| - |psi_0><psi_0|)`` with ``Delta = E_1 - E_0``."""
    delta = eig.gap(0, 1)
    if delta < tol:
        raise ValueError(f"ground state is degenerate (gap {delta:.3e}); gap-targeting coupling undefined")
    return delta * (projector(eig.vector(1)) - projector(eig.vector(0)))


# ---------------------------------------------------------------------------
# three-body gadget

def gadget_decompose(p: IsingProblem) -> IsingProblem:
    """Replace every ``c z_i z_j z_k`` by two-body terms on one new ancilla ``a``:

    ``c [z_i z_j + z_j z_k + z_i z_k - sum_m (2 z_m z_a - z_m) - 2 z_a]``

    Ancillas are appended after the existing qubits; ``ancilla_map`` records
    which sites each ancilla serves. The result reproduces the three-body
    ground manifold only for suitable signs of ``c`` (see ``bench.gadget_verify``).
    """
    n = p.n_qubits
    k = len(p.three_body)
    J = np.zeros((n + k, n + k))
    J[:n, :n] = p.J
    h = np.concatenate([p.h, np.zeros(k)])
    amap = dict(p.ancilla_map)
    for idx, term in enumerate(p.three_body):
        a = n + idx
        c = term.c
        if c < 0:
            warnings.warn(f"three-body coefficient {c} < 0: the gadget does not reproduce this term's ground "
                          "manifold (run bench.gadget_verify for the enumeration)", stacklevel=2)
        i, j, l = term.sites
        # pair coefficient K enters J as K/2 on both (i, j) and (j, i)
        for u, w in ((i, j), (j, l), (i, l)):
            J[u, w] += c / 2
            J[w, u] += c / 2
        for u in term.sites:
            J[u, a] -= c
            J[a, u] -= c
            h[u] += c
        h[a] -= 2 * c
        amap[a] = term.sites
    return IsingProblem(J, h, p.offset, (), amap)


# ---------------------------------------------------------------------------
# problem files

def problem_from_dict(data: dict) -> IsingProblem:
    """Parse ``{"n", "Q"}`` or ``{"n", "J", "h", "three_body"}``."""
    n = int(data["n"])
    if "Q" in data:
        q = QuboProblem(np.asarray(data["Q"], dtype=float))
        if q.n_vars != n:
            raise ValueError(f"Q is {q.n_vars}x{q.n_vars} but n = {n}")
        return qubo_to_ising(q)
    J = np.asarray(data.get("J", np.zeros((n, n))), dtype=float)
    h = np.asarray(data.get("h", np.zeros(n)), dtype=float)
    if J.shape != (n, n) or h.shape != (n,):
        raise ValueError(f"J/h shapes {J.shape}/{h.shape} do not match n = {n}")
    terms = [ThreeBodyTerm(tuple(t["sites"]), t["c"]) for t in data.get("three_body", [])]
    return IsingProblem.from_couplings(J, h, terms)


def problem_to_dict(p: IsingProblem) -> dict:
    return {
        "n": p.n_qubits,
        "J": p.J.tolist(),
        "h": p.h.tolist(),
        "three_body": [{"sites": list(t.sites), "c": t.c} for t in p.three_body],
    }


def load_problem(path) -> IsingProblem:
    return problem_from_dict(json.loads(Path(path).read_text()))
