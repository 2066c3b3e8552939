import numpy as np
import pytest

from qndanneal import channel
from qndanneal.bench import random_ising
from qndanneal.model import AnnealSetup, MeterSpec, lz_hamiltonian, system_hamiltonian
from qndanneal.qcore import KET0, KET_PLUS, hermitian_eig, projector, purity, tensor

STEPS = 600


def random_state(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def ising_setup(x0, state="+", omega=0.0, mode="full", N=2, seed=0, T=3.0):
    return AnnealSetup.annealing(random_ising(N, seed), T, MeterSpec.qubit(x0, omega, state), mode)


class TestRescaledPropagator:
    def test_identity_scale(self):
        s = ising_setup(1.0)
        U = channel.rescaled_propagator(s, 1.0, 0.0, 3.0, STEPS)
        U0 = channel.branch_propagator(AnnealSetup.annealing(s.problem.ising, 3.0), 0.0, 0.0, 3.0, STEPS)
        np.testing.assert_allclose(U, U0, atol=1e-14)

    def test_zero_scale(self):
        np.testing.assert_allclose(channel.rescaled_propagator(ising_setup(1.0), 0.0, 0.0, 3.0, 50), np.eye(4), atol=1e-15)

    @pytest.mark.parametrize("x0", [0.5, 2.0])
    def test_block_structure(self, x0):
        s = ising_setup(x0)
        U = channel.full_propagator(s, s.t_end, STEPS)
        Up = channel.rescaled_propagator(s, 1 + x0, s.t_start, s.t_end, STEPS)
        Um = channel.rescaled_propagator(s, 1 - x0, s.t_start, s.t_end, STEPS)
        expected = tensor(Up, projector(KET0)) + tensor(Um, projector(np.array([0, 1])))
        assert np.max(np.abs(U - expected)) <= 1e-8


class TestKraus:
    def test_plus_meter_pair(self):
        x0 = 2.0
        s = ising_setup(x0, "+")
        K = channel.kraus_operators(s, steps=STEPS)
        Kp = channel.kraus_plus_pair(s, steps=STEPS)
        Up = channel.rescaled_propagator(s, 1 + x0, s.t_start, s.t_end, STEPS)
        Um = channel.rescaled_propagator(s, 1 - x0, s.t_start, s.t_end, STEPS)
        np.testing.assert_allclose(Kp.operators[0], (Up + Um) / 2, atol=1e-14)
        assert Kp.completeness_error() <= 1e-9 and K.completeness_error() <= 1e-9
        rho = projector(random_state(np.random.default_rng(0), 4))
        np.testing.assert_allclose(Kp.apply(rho), K.apply(rho), atol=1e-12)

    def test_zero_meter_is_unitary(self):
        s = ising_setup(1.5, "0")
        K = channel.kraus_operators(s, steps=STEPS)
        assert len(K) == 1
        np.testing.assert_allclose(K.operators[0], channel.rescaled_propagator(s, 2.5, 0.0, 3.0, STEPS), atol=1e-14)

    def test_zero_coupling(self):
        s = ising_setup(0.0, "+")
        ops = channel.kraus_operators(s, steps=STEPS).operators
        np.testing.assert_allclose(ops[0], ops[1], atol=1e-14)
        np.testing.assert_allclose(np.sqrt(2) * ops[0], channel.rescaled_propagator(s, 1.0, 0.0, 3.0, STEPS), atol=1e-14)

    @pytest.mark.parametrize("t", [0.0, 0.7, 2.2, 3.0])
    def test_completeness_along_protocol(self, t):
        s = AnnealSetup.annealing(random_ising(2, 1), 3.0,
                                  MeterSpec(np.diag([1.0, -0.5, 2.0]), np.zeros((3, 3)), np.eye(3) / 3), "full")
        assert channel.kraus_operators(s, t, steps=200).completeness_error() <= 1e-9

    def test_refuses_non_commuting(self):
        with pytest.raises(channel.NonCommutingMeterError):
            channel.kraus_operators(ising_setup(1.0, omega=0.5), steps=10)


class TestReducedEvolution:
    def test_two_branch_average(self):
        x0 = 2.0
        s = ising_setup(x0, "+")
        rho0 = projector(random_state(np.random.default_rng(1), 4))
        Up = channel.rescaled_propagator(s, 1 + x0, 0.0, 3.0, STEPS)
        Um = channel.rescaled_propagator(s, 1 - x0, 0.0, 3.0, STEPS)
        expected = 0.5 * (Up @ rho0 @ Up.conj().T + Um @ rho0 @ Um.conj().T)
        np.testing.assert_allclose(channel.reduced_evolution(s, rho0, steps=STEPS), expected, atol=1e-12)

    def test_zero_meter_keeps_purity(self):
        s = ising_setup(2.0, "0")
        rho = channel.reduced_evolution(s, random_state(np.random.default_rng(2), 4), steps=STEPS)
        assert purity(rho) == pytest.approx(1.0, abs=1e-10)

    def test_start_time(self):
        s = ising_setup(2.0, "+")
        rho0 = projector(random_state(np.random.default_rng(3), 4))
        np.testing.assert_array_equal(channel.reduced_evolution(s, rho0, 0.0), rho0)

    @pytest.mark.parametrize("state", ["0", "1", "+", "-"])
    @pytest.mark.parametrize("mode", ["full", "constrained"])
    def test_matches_full_tensor(self, state, mode):
        s = ising_setup(1.3, state, mode=mode, N=2, seed=5)
        rho0 = projector(random_state(np.random.default_rng(4), 4))
        a = channel.reduced_evolution(s, rho0, 2.0, steps=STEPS)
        b = channel.full_reduced_evolution(s, rho0, 2.0, steps=STEPS)
        assert np.max(np.abs(a - b)) <= 1e-8

    def test_non_commuting_fallback(self):
        s = ising_setup(1.0, "+", omega=0.7)
        rho0 = projector(random_state(np.random.default_rng(5), 4))
        a = channel.reduced_evolution(s, rho0, steps=STEPS)
        b = channel.full_reduced_evolution(s, rho0, steps=STEPS)
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_rejects_entangled_start(self):
        s = ising_setup(1.0, "+", N=1)
        bell = (tensor(KET0, KET0) + tensor(np.array([0, 1]), np.array([0, 1]))) / np.sqrt(2)
        with pytest.raises(ValueError):
            channel.reduced_evolution(s, bell, steps=10)

    def test_accepts_matching_product(self):
        s = ising_setup(1.0, "+", N=1)
        psi = random_state(np.random.default_rng(6), 2)
        a = channel.reduced_evolution(s, tensor(psi, KET_PLUS), steps=100)
        b = channel.reduced_evolution(s, psi, steps=100)
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_populations_are_branch_averages(self):
        x0 = 1.0
        s = ising_setup(x0, "+", N=2, seed=3)
        rho0 = projector(random_state(np.random.default_rng(7), 4))
        V = hermitian_eig(system_hamiltonian(s, s.t_end)).eigenvectors
        diag = lambda r: np.real(np.diag(V.conj().T @ r @ V))  # noqa: E731
        pops = [diag(U @ rho0 @ U.conj().T) for U in
                (channel.rescaled_propagator(s, 1 + x, 0.0, 3.0, STEPS) for x in (x0, -x0))]
        np.testing.assert_allclose(diag(channel.reduced_evolution(s, rho0, steps=STEPS)), np.mean(pops, axis=0), atol=1e-12)


class TestPurity:
    @pytest.mark.parametrize("mode", ["full", "constrained"])
    def test_top_meter_eigenstate_stays_pure(self, mode):
        s = ising_setup(2.0, "0", mode=mode, N=3, seed=1)
        times = np.linspace(0, 3.0, 31)
        rhos = channel.reduced_trajectory(s, hermitian_eig(system_hamiltonian(s, 0.0)).vector(0), times, 20)
        assert max(abs(purity(r) - 1) for r in rhos) <= 1e-8

    def test_plus_meter_dephases(self):
        s = AnnealSetup.lz(v=1.0, meter=MeterSpec.qubit(2.0, state="+"), mode="full")
        rhos = channel.reduced_trajectory(s, KET_PLUS, np.linspace(-10, 10, 201), 20)
        assert min(purity(r) for r in rhos) < 0.9


class TestCoherence:
    times = np.linspace(-10, 10, 401)

    def test_eigenstate_no_meter(self):
        # leading non-adiabatic admixture is of order v / g^2
        s = AnnealSetup.lz(v=0.005)
        t = np.linspace(-2000, 2000, 201)
        psi0 = hermitian_eig(lz_hamiltonian(0.005, 1.0, -2000)).vector(0)
        assert np.max(channel.coherence_trace(s, psi0, t, substeps=100)) < 5e-3

    def test_coherent_oscillation(self):
        c = channel.coherence_trace(AnnealSetup.lz(v=1.0), KET_PLUS, self.times)
        assert c.max() <= 0.5 + 1e-12 and c.max() > 0.3
        assert np.all(np.isfinite(c))

    def test_meter_lowers_time_average(self):
        coh = channel.coherence_trace(AnnealSetup.lz(v=1.0), KET_PLUS, self.times)
        meter = AnnealSetup.lz(v=1.0, meter=MeterSpec.qubit(2.0, state="+"), mode="full")
        deph = channel.coherence_trace(meter, KET_PLUS, self.times)
        assert deph.mean() < coh.mean()

    def test_degenerate_levels(self):
        s = AnnealSetup.annealing(random_ising(2, 0), 1.0)
        s = AnnealSetup.annealing(s.problem.ising.__class__(np.zeros((2, 2)), np.zeros(2)), 1.0)
        with pytest.raises(ValueError):
            channel.coherence_trace(s, np.ones(4) / 2, [0.0, 1.0])


class TestSpectrum:
    times = np.linspace(-10, 10, 81)

    def test_bare_at_crossing(self):
        np.testing.assert_allclose(channel.spectrum_trace(AnnealSetup.lz(v=1.0), [0.0]), [[-0.5, 0.5]], atol=1e-15)

    def test_qnd_branch_scaled(self):
        s = AnnealSetup.lz(v=1.0, meter=MeterSpec.qubit(2.0, state="0"), mode="full")
        bare = channel.spectrum_trace(s, self.times, "bare")
        up = channel.spectrum_trace(s, self.times, "qnd", branch=1)
        np.testing.assert_allclose(up, 3 * bare, atol=1e-10)

    def test_qnd_full_contains_both_branches(self):
        s = AnnealSetup.lz(v=1.0, meter=MeterSpec.qubit(2.0, state="0"), mode="full")
        full = np.sort(channel.spectrum_trace(s, [0.3], "qnd")[0])
        bare = channel.spectrum_trace(s, [0.3])[0]
        np.testing.assert_allclose(full, np.sort(np.concatenate([3 * bare, -bare])), atol=1e-12)

    def test_cd_far_from_crossing(self):
        s = AnnealSetup.lz(v=1.0)
        t = [-1e4, 1e4]
        np.testing.assert_allclose(channel.spectrum_trace(s, t, "cd"), channel.spectrum_trace(s, t), rtol=1e-12)

    def test_tracks_branches_through_avoided_crossing(self):
        ev = channel.spectrum_trace(AnnealSetup.lz(v=1.0, g=1e-3), np.linspace(-10, 10, 80))
        # with a tiny gap the diabatic levels cross: tracking follows them
        assert ev[0, 0] > 0 > ev[-1, 0] or ev[0, 0] < 0 < ev[-1, 0]

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            channel.spectrum_trace(AnnealSetup.lz(v=1.0), [0.0], "bogus")


class TestCorrectionTerm:
    def lz(self, x0):
        return AnnealSetup.lz(v=1.0, meter=MeterSpec.qubit(x0, state="+"), mode="full")

    def test_reference_point(self):
        chk = channel.correction_term_check(self.lz(2.0), KET_PLUS, 1.0, 1e-4)
        assert chk.residual <= 1e-6 and chk.quadratic

    def test_no_coupling(self):
        chk = channel.correction_term_check(self.lz(0.0), KET_PLUS, 1.0, 1e-4)
        assert chk.residual <= 1e-6

    def test_wrong_sign_fails(self):
        # flipping the sign of the correction term is detected
        s = self.lz(2.0)
        rho0 = projector(KET_PLUS)
        x0, t, h = 2.0, 1.0, 1e-4
        U = {x: [channel.rescaled_propagator(s, x, s.t_start, tt, 4000, "magnus4") for tt in (t - h, t, t + h)]
             for x in (1 + x0, 1 - x0)}
        rx = {x: [u @ rho0 @ u.conj().T for u in U[x]] for x in U}
        rho = [0.5 * (a + b) for a, b in zip(rx[1 + x0], rx[1 - x0])]
        e = hermitian_eig(system_hamiltonian(s, t))
        V, dE = e.eigenvectors, e.eigenvalues[:, None] - e.eigenvalues[None, :]
        to = lambda A: V.conj().T @ A @ V  # noqa: E731
        lhs = to((rho[2] - rho[0]) / (2 * h))
        flipped = -1j * dE * to(rho[1]) + 0.5j * x0 * dE * to(rx[1 + x0][1] - rx[1 - x0][1])
        assert np.max(np.abs(lhs - flipped)) > 1e-2

    def test_preconditions(self):
        with pytest.raises(ValueError):
            channel.correction_term_check(AnnealSetup.lz(v=1.0, meter=MeterSpec.qubit(2.0, state="0"), mode="full"),
                                          KET_PLUS, 1.0)
        with pytest.raises(ValueError):
            channel.correction_term_check(self.lz(2.0), KET_PLUS, -10.0)
