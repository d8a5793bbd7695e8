import logging

import numpy as np
import pytest

from photoiso.bath import BathSpec, _assemble, build_dissipator
from photoiso.propagation import (
    PS,
    ChebyshevPropagator,
    DensityState,
    PropagationPlan,
    SecularPropagator,
    initial_state,
    propagate,
    quantum_yield_at,
    trans_projectors,
)

BATHS = [BathSpec("tuning_x", 0.1, 0.2), BathSpec("torsion_phi", 0.1, 0.2)]


@pytest.fixture(scope="module")
def tiny(tiny_eigsys):
    diss = build_dissipator(tiny_eigsys, BATHS)
    return tiny_eigsys, diss, trans_projectors(tiny_eigsys)


@pytest.fixture(scope="module")
def short_nonsecular(small_diss, small_projectors, small_fc):
    rho0 = initial_state("fc_pure", small_fc)
    plan = PropagationPlan(mode="nonsecular", t_final=1.0, points_per_decade=64)
    return propagate(rho0, small_diss, small_projectors, plan)


class TestInitialState:
    def test_pure_and_mixed(self, small_fc):
        a = initial_state("fc_pure", small_fc)
        b = initial_state("fc_mixed", small_fc)
        np.testing.assert_allclose(a.populations, b.populations, atol=1e-15)
        assert a.purity == pytest.approx(1.0, abs=1e-12)
        assert b.purity == pytest.approx(np.sum(small_fc.populations**2))
        assert b.purity < 1
        assert a.trace == pytest.approx(1.0, abs=1e-12)

    def test_unknown_kind(self, small_fc):
        with pytest.raises(ValueError):
            initial_state("thermal", small_fc)
        with pytest.raises(ValueError):
            DensityState("sparse", np.eye(2))

    def test_secular_ignores_coherences(self, small_diss, small_projectors, small_fc):
        plan = PropagationPlan(mode="secular", t_final=1e4)
        a = propagate(initial_state("fc_pure", small_fc), small_diss, small_projectors, plan)
        b = propagate(initial_state("fc_mixed", small_fc), small_diss, small_projectors, plan)
        np.testing.assert_array_equal(a.populations, b.populations)


class TestProjectors:
    def test_sum_to_identity(self, small_projectors):
        total = sum(small_projectors.values())
        np.testing.assert_allclose(total, np.eye(total.shape[0]), atol=1e-10)

    def test_symmetric(self, small_projectors):
        for P in small_projectors.values():
            assert np.array_equal(P, P.T)

    def test_ground_state_is_cis_on_lower_surface(self, small_projectors):
        assert small_projectors["cis_0"][0, 0] > 0.99

    def test_initial_qy_small(self, small_projectors, small_fc):
        rho = initial_state("fc_pure", small_fc).data.real
        assert np.sum(small_projectors["trans_1"] * rho) < 0.02


class TestPlan:
    def test_grid(self):
        g = PropagationPlan(t_final=10.0, t_switch=3.0, extra_times=(0.5,)).grid()
        assert g[0] == 0.0 and g[-1] == 10.0
        assert np.all(np.diff(g) > 0)
        assert 3.0 in g and 0.5 in g
        # 64 points per decade from 1 fs
        assert np.sum((g >= 1e-3) & (g <= 1e-2)) in (64, 65)

    def test_validation(self):
        with pytest.raises(ValueError):
            PropagationPlan(mode="fast")
        with pytest.raises(ValueError):
            PropagationPlan(t_final=0)
        with pytest.raises(ValueError):
            PropagationPlan(integrator="euler")


class TestNonsecular:
    def test_invariants(self, short_nonsecular):
        tr = short_nonsecular
        assert np.max(np.abs(tr.populations.sum(axis=1) - 1)) < 1e-9
        assert np.max(np.abs(tr.total - 1)) < 1e-8
        assert np.all((tr.qy >= -1e-9) & (tr.qy <= 1 + 1e-9))
        rho = tr.final_state.data
        assert np.array_equal(rho, rho.conj().T)

    def test_initial_qy(self, short_nonsecular):
        assert short_nonsecular.qy[0] < 0.02

    def test_cis_trans_exchange_mirrors(self, short_nonsecular):
        tr = short_nonsecular
        w = (tr.times > 0.02) & (tr.times <= 1.0)
        # population leaving the cis side of |1> shows up on its trans side
        dc = np.diff(tr.pop_cis_1[w])
        dt = np.diff(tr.pop_trans_1[w])
        assert np.corrcoef(dc, dt)[0, 1] < -0.5
        # and the exchange is oscillatory rather than monotone
        turns = np.sum(np.diff(np.sign(dt)) != 0)
        assert turns >= 2

    def test_chebyshev_matches_runge_kutta(self, tiny):
        _, diss, proj = tiny
        c = np.zeros(diss.size)
        c[-5:] = [0.3, 0.5, 0.4, 0.6, 0.37]
        c /= np.linalg.norm(c)
        rho = DensityState("full", np.outer(c, c).astype(complex))
        a = propagate(rho, diss, proj, PropagationPlan(mode="nonsecular", t_final=0.2))
        # the Runge-Kutta reference needs a much tighter tolerance than the default to resolve coherences
        b = propagate(rho, diss, proj, PropagationPlan(mode="nonsecular", t_final=0.2, integrator="dop853",
                                                       rtol=1e-12, atol=1e-14))
        np.testing.assert_allclose(a.populations, b.populations, atol=1e-10)
        np.testing.assert_allclose(a.final_state.data, b.final_state.data, atol=1e-10)

    def test_chebyshev_matches_matrix_exponential(self, rng):
        import scipy.linalg

        from photoiso.bath import redfield_superoperator

        e = np.sort(rng.uniform(0, 1.5, 8))
        a = rng.normal(size=(8, 8))
        d = _assemble(e, (BathSpec("tuning_x", 0.3, 0.3),), [0.5 * (a + a.T)], 1e-6)
        L = redfield_superoperator(d)
        v = rng.normal(size=8) + 1j * rng.normal(size=8)
        rho = np.outer(v, v.conj())
        rho /= np.trace(rho)
        prop = ChebyshevPropagator(d)
        t = 3.0 * prop.chunk_length()
        ref = (scipy.linalg.expm(L * t) @ rho.ravel()).reshape(8, 8)
        out = rho
        for _ in range(3):
            out, _, _ = prop.advance(out, [t / 3])
        np.testing.assert_allclose(out, ref, atol=1e-11)

    def test_positivity_logged(self, tiny, caplog):
        _, diss, proj = tiny
        rho = np.zeros((diss.size, diss.size), complex)
        rho[-1, -1] = 1.0
        with caplog.at_level(logging.WARNING, logger="photoiso.propagation"):
            tr = propagate(DensityState("full", rho), diss, proj, PropagationPlan(mode="nonsecular", t_final=0.05))
        lo = tr.diagnostics["min_eigenvalue"]
        assert lo > -1e-3
        if lo < -1e-8:
            assert "eigenvalue" in caplog.text


class TestSecular:
    def test_energy_monotone_at_zero_temperature(self, small_diss, small_projectors, small_fc):
        tr = propagate(initial_state("fc_mixed", small_fc), small_diss, small_projectors,
                       PropagationPlan(mode="secular", t_final=1e4))
        e = tr.mean_energy
        assert np.all(np.diff(e) <= 1e-12)
        assert np.max(np.abs(tr.populations.sum(axis=1) - 1)) < 1e-9

    def test_relaxes_to_gibbs(self, rng):
        e = np.sort(rng.uniform(0, 0.15, 10))
        a = rng.normal(size=(10, 10))
        T = 600.0
        d = _assemble(e, (BathSpec("tuning_x", 0.2, 0.2, T),), [0.5 * (a + a.T)], 1e-6)
        beta = d.baths[0].beta
        gibbs = np.exp(-beta * (e - e[0]))
        gibbs /= gibbs.sum()
        # null vector of K
        w, V = np.linalg.eig(d.rates)
        null = np.real(V[:, np.argmin(np.abs(w))])
        np.testing.assert_allclose(null / null.sum(), gibbs, atol=1e-10)
        p0 = np.zeros(10)
        p0[-1] = 1.0
        sp = SecularPropagator(d)
        pt = np.real(sp.evolve(p0.astype(complex), [1e6 * PS]))[0]
        np.testing.assert_allclose(pt, gibbs, atol=1e-10)

    def test_expm_fallback_agrees(self, tiny):
        _, diss, _ = tiny
        p0 = np.zeros(diss.size, complex)
        p0[-1] = 1.0
        a = SecularPropagator(diss)
        b = SecularPropagator(diss, cond_limit=0.0)
        assert b.method == "expm"
        ts = np.array([0.0, 10.0, 1e3, 1e5]) * PS
        np.testing.assert_allclose(a.evolve(p0, ts), b.evolve(p0, ts), atol=1e-10)

    def test_quasi_degenerate_path(self, rng):
        import scipy.linalg

        from photoiso.bath import redfield_superoperator

        e = np.array([0.0, 0.2, 0.2 + 1e-8, 0.5])
        a = rng.normal(size=(4, 4))
        d = _assemble(e, (BathSpec("tuning_x", 0.1, 0.2),), [0.5 * (a + a.T)], 1e-6)
        proj = {k: np.eye(4) / 4 for k in ("cis_0", "cis_1", "trans_0", "trans_1")}
        rho = np.zeros((4, 4), complex)
        rho[1, 1] = rho[2, 2] = rho[1, 2] = rho[2, 1] = 0.5
        tr = propagate(DensityState("full", rho), d, proj, PropagationPlan(mode="secular", t_final=100.0))
        assert np.max(np.abs(tr.populations.sum(axis=1) - 1)) < 1e-9
        # reference: full Liouvillian with every element between non-resonant pairs removed
        L = redfield_superoperator(d)
        w = (e[:, None] - e[None, :]).ravel()
        keep = np.abs(w[:, None] - w[None, :]) < 1e-6
        t = 100.0 * PS
        ref = (scipy.linalg.expm(np.where(keep, L, 0) * t) @ rho.ravel()).reshape(4, 4)
        np.testing.assert_allclose(tr.populations[-1], np.real(np.diag(ref)), atol=1e-10)
        # a single bath leaves one combination of the pair dark to the ground state
        assert 0.5 < tr.populations[-1, 1] + tr.populations[-1, 2] < 1.0


class TestAgreement:
    """Secular and nonsecular populations on a 40-state truncation, coherence-free start."""

    @pytest.mark.parametrize("start", ["top", "uniform"])
    def test_secular_equals_nonsecular(self, tiny, start):
        _, diss, proj = tiny
        n = diss.size
        p = np.zeros(n)
        if start == "top":
            p[-1] = 1.0
        else:
            p[:] = 1.0 / n
        rho = DensityState("full", np.diag(p).astype(complex))
        rtol = 1e-8
        a = propagate(rho, diss, proj, PropagationPlan(mode="nonsecular", t_final=10.0, rtol=rtol))
        b = propagate(rho, diss, proj, PropagationPlan(mode="secular", t_final=10.0))
        assert np.max(np.abs(a.populations - b.populations)) < 2 * rtol

    def test_hybrid_matches_secular_after_switch(self, tiny):
        _, diss, proj = tiny
        p = np.zeros(diss.size)
        p[-1] = 1.0
        rho = DensityState("full", np.diag(p).astype(complex))
        rtol = 1e-8
        h = propagate(rho, diss, proj, PropagationPlan(mode="hybrid", t_final=100.0, t_switch=1.0, rtol=rtol))
        s = propagate(rho, diss, proj, PropagationPlan(mode="secular", t_final=100.0, t_switch=1.0))
        n = propagate(rho, diss, proj, PropagationPlan(mode="nonsecular", t_final=100.0, t_switch=1.0, rtol=rtol))
        # Redfield sustains small coherences; they are reported, not required to vanish
        assert 0 < h.diagnostics["coherence_at_switch"] < 1e-3
        late = h.times >= 1.0
        assert np.max(np.abs(h.populations[late] - s.populations[late])) < 2 * rtol
        assert np.max(np.abs(h.populations[late] - n.populations[late])) < 2 * rtol
        assert np.max(np.abs(h.populations.sum(axis=1) - 1)) < 1e-9


class TestQuantumYieldAt:
    def test_exact_checkpoint(self, short_nonsecular):
        tr = short_nonsecular
        assert quantum_yield_at(tr, tr.times[37]) == tr.qy[37]

    def test_log_interpolation(self, short_nonsecular):
        tr = short_nonsecular
        t0, t1 = tr.times[40], tr.times[41]
        mid = np.sqrt(t0 * t1)
        assert quantum_yield_at(tr, mid) == pytest.approx(0.5 * (tr.qy[40] + tr.qy[41]), abs=1e-15)

    def test_extrapolation_rejected(self, short_nonsecular):
        with pytest.raises(ValueError, match="horizon"):
            quantum_yield_at(short_nonsecular, 2.0)
        with pytest.raises(ValueError):
            quantum_yield_at(short_nonsecular, -1.0)
