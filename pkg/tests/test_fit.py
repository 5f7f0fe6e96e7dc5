"""Composite pseudo-likelihood: reparametrizations, objective contract,
optimizer behavior, recovery smoke tests."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msgof import models
from msgof.fit import (
    OptConfig,
    PairSet,
    composite_loglik,
    constrain,
    fit_model,
    moment_start,
    schlather_constrain,
    schlather_unconstrain,
    smith_constrain,
    smith_unconstrain,
    unconstrain,
)
from msgof.ranks import pseudo_observations
from msgof.simulate import SimConfig, simulate_schlather, simulate_smith
from msgof.types import FitError, SchlatherParams, SiteSet, SmithParams, ValidationError

from conftest import random_sites


class TestReparametrization:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31))
    def test_smith_round_trip(self, seed):
        g = np.random.default_rng(seed)
        s11, s22 = g.uniform(0.1, 50.0, 2)
        s12 = g.uniform(-0.95, 0.95) * np.sqrt(s11 * s22)
        params = SmithParams(s11, s12, s22)
        back = smith_constrain(smith_unconstrain(params))
        assert back.s11 == pytest.approx(s11, rel=1e-10)
        assert back.s12 == pytest.approx(s12, rel=1e-10, abs=1e-10)
        assert back.s22 == pytest.approx(s22, rel=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31))
    def test_schlather_round_trip(self, seed):
        g = np.random.default_rng(seed)
        params = SchlatherParams(g.uniform(0.1, 50.0), g.uniform(-np.pi / 2, np.pi / 2 - 1e-9),
                                 g.uniform(0.01, 0.99))
        back = schlather_constrain(schlather_unconstrain(params))
        assert back.c == pytest.approx(params.c, rel=1e-10)
        assert back.phi == pytest.approx(params.phi, abs=1e-10)
        assert back.r == pytest.approx(params.r, rel=1e-10)

    def test_any_raw_vector_is_valid(self):
        g = np.random.default_rng(3)
        for _ in range(200):
            raw = g.uniform(-30, 30, 3)
            smith_constrain(raw)       # never raises: PD by construction
            schlather_constrain(raw)   # never raises: ranges by construction

    def test_phi_wraps(self):
        p = schlather_constrain([0.0, np.pi / 2 + 0.1, 0.0])
        assert -np.pi / 2 <= p.phi < np.pi / 2
        assert p.phi == pytest.approx(-np.pi / 2 + 0.1, abs=1e-12)

    def test_anisotropy_swap_symmetry(self):
        # the twin (r c, phi + pi/2, 1/r) parametrizes the same correlation:
        # B(phi + pi/2, 1/r) = r^2 B(phi, r), so rho is unchanged after the
        # range rescaling c -> r c; the (0,1) range of r pins the canonical
        # representative, making the twin unreachable by the optimizer
        phi, r, c0 = 0.3, 0.6, 4.0
        params = SchlatherParams(c0, phi, r)
        cc, ss = np.cos(phi + np.pi / 2), np.sin(phi + np.pi / 2)
        h_twin = np.array([[cc, ss], [-ss / (1.0 / r), cc / (1.0 / r)]])
        b_twin = h_twin.T @ h_twin
        assert np.allclose(b_twin, r**2 * models.anisotropy_matrix(params), atol=1e-14)
        h = np.array([1.3, -2.1])
        rho_twin = np.exp(-(h @ b_twin @ h) / (r * c0) ** 2)
        assert rho_twin == pytest.approx(models.schlather_correlation(h, params), rel=1e-12)


class TestCompositeLoglik:
    def test_single_pair_single_row(self, sites5):
        u = np.array([[0.3, 0.7]])
        sites = SiteSet(sites5.coords[:2])
        params = SmithParams(4.0, 1.0, 3.0)
        a = models.mahalanobis_distances(sites, params)[0, 1]
        val = composite_loglik(u, "smith", smith_unconstrain(params), sites)
        assert val == pytest.approx(models.smith_pair_copula_log_density(0.3, 0.7, a), rel=1e-12)

    def test_independence_limit_objective_near_zero(self):
        g = np.random.default_rng(1)
        u = g.random((40, 3))
        sites = SiteSet(np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]]))
        raw = smith_unconstrain(SmithParams(1e-4, 0.0, 1e-4))
        val = composite_loglik(u, "smith", raw, sites)
        assert abs(val) < 1e-6

    def test_row_permutation_invariance(self, sites5):
        g = np.random.default_rng(2)
        u = pseudo_observations(g.standard_normal((30, 5))).values
        raw = smith_unconstrain(SmithParams(4.0, 2.0, 4.0))
        a = composite_loglik(u, "smith", raw, sites5)
        b = composite_loglik(u[g.permutation(30)], "smith", raw, sites5)
        assert a == pytest.approx(b, rel=1e-14)

    def test_invalid_raw_gives_minus_inf(self, sites5):
        g = np.random.default_rng(3)
        u = pseudo_observations(g.standard_normal((20, 5))).values
        assert composite_loglik(u, "smith", [np.nan, 0.0, 0.0], sites5) == -np.inf

    def test_secant_consistency(self, sites5):
        # objective is smooth: central differences agree with coarse secants
        g = np.random.default_rng(4)
        u = pseudo_observations(g.standard_normal((25, 5))).values
        raw0 = smith_unconstrain(SmithParams(5.0, 1.0, 4.0))
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = 1.0
            f = lambda t: composite_loglik(u, "smith", raw0 + t * e, sites5)
            grad_fine = (f(1e-5) - f(-1e-5)) / 2e-5
            grad_coarse = (f(1e-3) - f(-1e-3)) / 2e-3
            assert grad_fine == pytest.approx(grad_coarse, rel=2e-2, abs=1e-4)

    def test_pair_subset_scales_cost(self, sites10):
        g = np.random.default_rng(5)
        u = pseudo_observations(g.standard_normal((200, 10))).values
        raw = smith_unconstrain(SmithParams(4.0, 0.0, 4.0))
        few = PairSet(tuple((0, k) for k in range(1, 6)))          # 5 pairs
        all_pairs = PairSet.all_pairs(10)                           # 45 pairs

        def timed(pairs):
            t0 = time.perf_counter()
            for _ in range(20):
                composite_loglik(u, "smith", raw, sites10, pairs)
            return time.perf_counter() - t0

        timed(all_pairs)  # warm caches
        t_few, t_all = timed(few), timed(all_pairs)
        assert t_all / t_few < 20.0  # roughly linear in |pairs| (9x), generous slack


class TestPairSet:
    def test_rejects_empty_and_duplicates(self):
        with pytest.raises(ValidationError):
            PairSet(())
        with pytest.raises(ValidationError):
            PairSet(((0, 1), (1, 0)))

    def test_within_distance(self):
        sites = SiteSet(np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]]))
        ps = PairSet.within_distance(sites, 2.0)
        assert ps.pairs == ((0, 1),)
        with pytest.raises(ValidationError):
            PairSet.within_distance(sites, 0.5)

    def test_validate_for(self, sites5):
        ps = PairSet(((0, 7),))
        with pytest.raises(ValidationError):
            ps.validate_for(5)


class TestFitModel:
    def test_needs_enough_rows(self, sites5):
        g = np.random.default_rng(6)
        u = pseudo_observations(g.standard_normal((5, 5)))
        with pytest.raises(ValidationError):
            fit_model(u, "smith", sites5)

    def test_smith_recovery_smoke(self):
        sites = random_sites(700, 8)
        true = SmithParams(4.0, 2.0, 4.0)
        panel = simulate_smith(sites, true, 150, SimConfig(seed=701))
        pseudo = pseudo_observations(panel)
        res = fit_model(pseudo, "smith", sites)
        assert res.converged
        assert res.params.s11 == pytest.approx(4.0, rel=0.6)
        assert res.params.s22 == pytest.approx(4.0, rel=0.6)
        # maximizer beats the truth up to optimizer tolerance
        truth_obj = composite_loglik(pseudo, "smith", smith_unconstrain(true), sites)
        assert res.objective >= truth_obj - 1e-6

    def test_schlather_recovery_smoke(self):
        sites = random_sites(702, 8)
        true = SchlatherParams(8.0, np.pi / 4, 1 / np.sqrt(3))
        panel = simulate_schlather(sites, true, 150, SimConfig(seed=703))
        pseudo = pseudo_observations(panel)
        res = fit_model(pseudo, "schlather", sites)
        assert res.converged
        assert res.params.c == pytest.approx(8.0, rel=0.6)
        assert 0.0 < res.params.r < 1.0
        truth_obj = composite_loglik(pseudo, "schlather", schlather_unconstrain(true), sites)
        assert res.objective >= truth_obj - 1e-6

    def test_warm_start_faster_than_multistart(self):
        sites = random_sites(704, 8)
        panel = simulate_smith(sites, SmithParams(4.0, 2.0, 4.0), 80, SimConfig(seed=705))
        pseudo = pseudo_observations(panel)
        cold = fit_model(pseudo, "smith", sites)
        warm = fit_model(pseudo, "smith", sites, warm_start=cold.params)
        assert warm.converged
        assert warm.n_evaluations < cold.n_evaluations
        assert warm.objective >= cold.objective - 1e-6

    def test_fit_error_carries_best_attempt(self, sites5):
        g = np.random.default_rng(7)
        pseudo = pseudo_observations(g.standard_normal((30, 5)))
        with pytest.raises(FitError) as excinfo:
            fit_model(pseudo, "smith", sites5, opt=OptConfig(max_evals=4))
        assert excinfo.value.best is not None
        assert excinfo.value.best.converged is False

    def test_moment_start_reasonable(self):
        sites = random_sites(706, 10)
        panel = simulate_smith(sites, SmithParams(16.0, 8.0, 16.0), 100, SimConfig(seed=707))
        start = moment_start(pseudo_observations(panel), "smith", sites)
        assert 1.0 < start.s11 < 400.0
        assert start.s12 == 0.0


def test_unconstrain_dispatch():
    p = SmithParams(2.0, 0.5, 3.0)
    assert np.allclose(unconstrain(p), smith_unconstrain(p))
    q = SchlatherParams(4.0, 0.2, 0.7)
    assert np.allclose(unconstrain(q), schlather_unconstrain(q))
    assert constrain("smith", unconstrain(p)).s11 == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValidationError):
        constrain("unknown", [0.0, 0.0, 0.0])
