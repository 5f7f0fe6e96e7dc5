"""Statistics, bootstrap protocol, determinism, and null calibration."""

import json
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest
from scipy.stats import kstest

from msgof import gof
from msgof.fit import fit_model
from msgof.gof import (
    StatisticSpec,
    bootstrap_one_level,
    bootstrap_suite,
    bootstrap_two_level,
    decompose_statistic,
    statistic_SB,
    statistic_pairwise_sum,
)
from msgof.ranks import pseudo_observations
from msgof.simulate import SimConfig, sample_copula, simulate_schlather, simulate_smith
from msgof.types import (
    NumericalError,
    SchlatherParams,
    SiteSet,
    SmithParams,
    SubsetB,
    ValidationError,
)

from conftest import random_sites

SMITH1 = SmithParams(4.0, 2.0, 4.0)
RHO2 = SchlatherParams(8.0, np.pi / 4, 1 / np.sqrt(3))


def _report_key(report):
    """Everything in a report except wall-clock timings."""
    d = report.to_dict()
    d.pop("timing")
    return json.dumps(d, sort_keys=True)


class TestStatistics:
    def test_decompose_identity_closed_form(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 60, SimConfig(seed=1))
        pseudo = pseudo_observations(panel)
        fitted = fit_model(pseudo, "smith", sites5)
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        sub = SubsetB.full(5)
        s = statistic_SB(pseudo, sub, fitted.params, sites5, spec)
        t1, t2 = decompose_statistic(pseudo, sub, SMITH1, fitted.params, sites5, spec)
        assert abs(t1 - t2) == pytest.approx(s, abs=1e-12)

    def test_decompose_second_term_zero_at_truth(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 60, SimConfig(seed=2))
        pseudo = pseudo_observations(panel)
        spec = StatisticSpec(kind="global", estimator="P", null_xi="closed_form")
        _, t2 = decompose_statistic(pseudo, SubsetB.full(5), SMITH1, SMITH1, sites5, spec)
        assert t2 == 0.0

    def test_decompose_identity_simulated(self, sites5):
        panel = simulate_schlather(sites5, RHO2, 60, SimConfig(seed=3))
        pseudo = pseudo_observations(panel)
        fitted = fit_model(pseudo, "schlather", sites5)
        spec = StatisticSpec(kind="global", estimator="HT", null_xi="simulated")
        sub = SubsetB.full(5)
        s = statistic_SB(pseudo, sub, fitted.params, sites5, spec, m=500, sim_seed=17)
        t1, t2 = decompose_statistic(pseudo, sub, RHO2, fitted.params, sites5, spec,
                                     m=500, sim_seed=17)
        assert abs(t1 - t2) == pytest.approx(s, abs=1e-12)

    def test_margin_free_statistic(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 50, SimConfig(seed=4))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        pseudo_a = pseudo_observations(panel)
        pseudo_b = pseudo_observations(np.exp(panel.values))
        fitted = fit_model(pseudo_a, "smith", sites5)
        sa = statistic_SB(pseudo_a, SubsetB.full(5), fitted.params, sites5, spec)
        sb = statistic_SB(pseudo_b, SubsetB.full(5), fitted.params, sites5, spec)
        assert sa == sb

    def test_self_consistency_large_null_sample(self):
        sites = SiteSet(np.array([[0.0, 0.0], [2.0, 1.0]]))
        u = sample_copula(SMITH1, sites, 10_000, SimConfig(seed=5))
        pseudo = pseudo_observations(u)
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        s = statistic_SB(pseudo, SubsetB.full(2), SMITH1, sites, spec)
        assert s < 0.5

    def test_scaling_of_decomposition_terms(self):
        sites = SiteSet(np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 2.0]]))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        sub = SubsetB.full(3)
        sds = []
        for n in (100, 400):
            terms = []
            for rep in range(200):
                u = sample_copula(SMITH1, sites, n, SimConfig(seed=6, stream_id=rep))
                t1, _ = decompose_statistic(pseudo_observations(u), sub, SMITH1, SMITH1,
                                            sites, spec)
                terms.append(t1)
            sds.append(np.std(terms, ddof=1))
        assert 0.6 <= sds[1] / sds[0] <= 1.6

    def test_pairwise_sum_decomposes(self):
        sites = SiteSet(np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 2.0]]))
        panel = simulate_smith(sites, SMITH1, 50, SimConfig(seed=7))
        pseudo = pseudo_observations(panel)
        fitted = fit_model(pseudo, "smith", sites)
        spec = StatisticSpec(kind="pairwise_sum", estimator="P", null_xi="closed_form")
        total = statistic_pairwise_sum(pseudo, fitted.params, sites, spec)
        by_hand = sum(
            statistic_SB(pseudo, SubsetB((j, k), 3), fitted.params, sites,
                         StatisticSpec(kind="global", estimator="P", null_xi="closed_form"))
            for j, k in [(0, 1), (0, 2), (1, 2)])
        assert total == pytest.approx(by_hand, abs=1e-10)

    def test_pairwise_single_pair_equals_subset_statistic(self):
        sites = SiteSet(np.array([[0.0, 0.0], [3.0, 1.0]]))
        panel = simulate_smith(sites, SMITH1, 40, SimConfig(seed=8))
        pseudo = pseudo_observations(panel)
        fitted = fit_model(pseudo, "smith", sites)
        pair_spec = StatisticSpec(kind="pairwise_sum", estimator="CFG", null_xi="closed_form")
        glob_spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        assert statistic_pairwise_sum(pseudo, fitted.params, sites, pair_spec) == pytest.approx(
            statistic_SB(pseudo, SubsetB.full(2), fitted.params, sites, glob_spec), abs=1e-12)

    def test_min_dist_beyond_diameter_rejected(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=9))
        pseudo = pseudo_observations(panel)
        spec = StatisticSpec(kind="pairwise_sum", estimator="CFG", null_xi="closed_form",
                             min_dist=1e6)
        with pytest.raises(ValidationError):
            statistic_pairwise_sum(pseudo, SMITH1, sites5, spec)


class TestSpecValidation:
    def test_gamma_must_exceed_one(self):
        with pytest.raises(ValidationError):
            StatisticSpec(kind="global", estimator="P", null_xi="simulated", gamma=0.5)

    def test_pairwise_cannot_be_simulated(self):
        with pytest.raises(ValidationError):
            StatisticSpec(kind="pairwise_sum", estimator="P", null_xi="simulated")

    def test_one_level_requires_closed_form(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=10))
        spec = StatisticSpec(kind="global", estimator="P", null_xi="simulated")
        with pytest.raises(ValidationError):
            bootstrap_one_level(panel, "smith", sites5, spec, N=5, seed=1)

    def test_two_level_requires_simulated(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=11))
        spec = StatisticSpec(kind="global", estimator="P", null_xi="closed_form")
        with pytest.raises(ValidationError):
            bootstrap_two_level(panel, "smith", sites5, spec, N=5, seed=1)

    def test_schlather_global_needs_simulated_null(self, sites5):
        panel = simulate_schlather(sites5, RHO2, 40, SimConfig(seed=12))
        spec = StatisticSpec(kind="global", estimator="P", null_xi="closed_form")
        with pytest.raises(ValidationError):
            bootstrap_one_level(panel, "schlather", sites5, spec, N=5, seed=1)

    def test_suite_rejects_mixed_m(self, sites5):
        panel = simulate_schlather(sites5, RHO2, 40, SimConfig(seed=13))
        specs = [StatisticSpec(kind="global", estimator="P", null_xi="simulated", gamma=10.0),
                 StatisticSpec(kind="global", estimator="HT", null_xi="simulated", gamma=20.0)]
        with pytest.raises(ValidationError):
            bootstrap_suite(panel, "schlather", sites5, specs, N=5, seed=1)


class TestBootstrapProtocol:
    def test_p_value_count_formula(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=14))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        rep = bootstrap_one_level(panel, "smith", sites5, spec, N=19, seed=77)
        count = int(np.sum(rep.replicate_stats >= rep.statistic))
        assert rep.p_value == count / rep.n_bootstrap
        assert rep.n_bootstrap == 19 and rep.n_failed == 0

    def test_p_zero_when_statistic_beats_all_replicates(self):
        # misspecified model: the observed statistic dwarfs every null
        # replicate, so the count formula gives exactly 0.0
        sites = random_sites(91, 6)
        panel = simulate_schlather(sites, SchlatherParams(4.0, np.pi / 4, 1 / np.sqrt(3)),
                                   80, SimConfig(seed=25))
        spec = StatisticSpec(kind="pairwise_sum", estimator="CFG", null_xi="closed_form")
        rep = bootstrap_one_level(panel, "smith", sites, spec, N=30, seed=26)
        assert rep.statistic > rep.replicate_stats.max()
        assert rep.p_value == 0.0

    def test_single_replicate_p_in_zero_one(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=15))
        spec = StatisticSpec(kind="global", estimator="P", null_xi="closed_form")
        rep = bootstrap_one_level(panel, "smith", sites5, spec, N=1, seed=3)
        assert rep.p_value in (0.0, 1.0)

    def test_smoothed_variant(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=16))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        plain = bootstrap_one_level(panel, "smith", sites5, spec, N=9, seed=5)
        smooth = bootstrap_one_level(panel, "smith", sites5, spec, N=9, seed=5, smoothed=True)
        count = int(np.sum(plain.replicate_stats >= plain.statistic))
        assert smooth.p_value == (count + 1) / (9 + 1)

    def test_seed_determinism(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=17))
        spec = StatisticSpec(kind="global", estimator="HT", null_xi="closed_form")
        a = bootstrap_one_level(panel, "smith", sites5, spec, N=12, seed=123)
        b = bootstrap_one_level(panel, "smith", sites5, spec, N=12, seed=123)
        assert _report_key(a) == _report_key(b)

    def test_parallel_matches_serial(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=18))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        serial = bootstrap_one_level(panel, "smith", sites5, spec, N=14, seed=9, workers=1)
        parallel = bootstrap_one_level(panel, "smith", sites5, spec, N=14, seed=9, workers=2)
        assert _report_key(serial) == _report_key(parallel)

    def test_margin_free_report(self, sites5):
        # exp() applied to every raw entry (Gumbel-scale panel vs its
        # Frechet-scale image) must change nothing but timings
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        frechet = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=19))
        from msgof.types import MaximaPanel
        gumbel = MaximaPanel(np.log(frechet.values), site_ids=frechet.site_ids)
        rep_a = bootstrap_one_level(gumbel, "smith", sites5, spec, N=10, seed=4)
        rep_b = bootstrap_one_level(frechet, "smith", sites5, spec, N=10, seed=4)
        assert _report_key(rep_a) == _report_key(rep_b)

    def test_two_level_default_m(self, sites5):
        panel = simulate_schlather(sites5, RHO2, 40, SimConfig(seed=20))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="simulated")
        rep = bootstrap_two_level(panel, "schlather", sites5, spec, N=3, seed=6)
        assert rep.m == 2500
        rep2 = bootstrap_two_level(panel, "schlather", sites5, spec, N=3, m_override=600, seed=6)
        assert rep2.m == 600

    def test_suite_shares_replicates_across_estimators(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=21))
        specs = [StatisticSpec(kind="global", estimator=e, null_xi="closed_form")
                 for e in ("P", "HT", "CFG")]
        reports = bootstrap_suite(panel, "smith", sites5, specs, N=8, seed=12)
        single = bootstrap_one_level(panel, "smith", sites5, specs[2], N=8, seed=12)
        assert np.array_equal(reports[2].replicate_stats, single.replicate_stats)
        assert reports[0].fit.params == reports[2].fit.params

    def test_replicate_failures_dropped_and_recorded(self, sites5, monkeypatch):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=22))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        real_fit = gof.fit_model
        calls = {"k": 0}

        def flaky(*args, **kwargs):
            if kwargs.get("warm_start") is not None:
                calls["k"] += 1
                if calls["k"] <= 1:
                    from msgof.types import FitError
                    raise FitError("synthetic failure")
            return real_fit(*args, **kwargs)

        monkeypatch.setattr(gof, "fit_model", flaky)
        rep = bootstrap_one_level(panel, "smith", sites5, spec, N=40, seed=13, workers=1)
        assert rep.n_failed == 1
        assert rep.n_bootstrap == 39
        count = int(np.sum(rep.replicate_stats >= rep.statistic))
        assert rep.p_value == count / 39

    def test_abort_when_failures_exceed_five_percent(self, sites5, monkeypatch):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=23))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")

        def always_fail(*args, **kwargs):
            if kwargs.get("warm_start") is not None:
                from msgof.types import FitError
                raise FitError("synthetic failure")
            return fit_model(*args, **kwargs)

        monkeypatch.setattr(gof, "fit_model", always_fail)
        with pytest.raises(NumericalError):
            bootstrap_one_level(panel, "smith", sites5, spec, N=10, seed=14, workers=1)

    def test_report_serializes(self, sites5):
        panel = simulate_smith(sites5, SMITH1, 40, SimConfig(seed=24))
        spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
        rep = bootstrap_one_level(panel, "smith", sites5, spec, N=5, seed=3)
        payload = json.dumps(rep.to_dict())
        assert json.loads(payload)["n_bootstrap"] == 5


# ---------------------------------------------------------------------------
# null calibration and the second-level size effect (slow oracles)
# ---------------------------------------------------------------------------

_CAL_SITES = random_sites(90, 5)


def _one_level_pvalue(rep):
    panel = simulate_smith(_CAL_SITES, SMITH1, 50, SimConfig(seed=5000 + rep))
    spec = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
    return bootstrap_one_level(panel, "smith", _CAL_SITES, spec, N=200, seed=6000 + rep).p_value


def _two_level_pvalue(rep):
    panel = simulate_schlather(_CAL_SITES, RHO2, 50, SimConfig(seed=7000 + rep))
    spec = StatisticSpec(kind="global", estimator="CFG", null_xi="simulated")
    return bootstrap_two_level(panel, "schlather", _CAL_SITES, spec, N=200,
                               m_override=2500, seed=8000 + rep).p_value


def _gamma_pair(rep):
    sites = SiteSet(np.array([[0.0, 0.0], [1.5, 0.5]]))
    panel = simulate_smith(sites, SMITH1, 50, SimConfig(seed=9000 + rep))
    one = StatisticSpec(kind="global", estimator="CFG", null_xi="closed_form")
    two = StatisticSpec(kind="global", estimator="CFG", null_xi="simulated")
    p1 = bootstrap_one_level(panel, "smith", sites, one, N=100, seed=9500 + rep).p_value
    p2 = bootstrap_two_level(panel, "smith", sites, two, N=100, m_override=50_000,
                             seed=9500 + rep).p_value
    return p1, p2


@pytest.mark.slow
def test_null_calibration_one_level_uniform_pvalues():
    with ProcessPoolExecutor(max_workers=2) as pool:
        pvals = np.array(list(pool.map(_one_level_pvalue, range(200))))
    stat = kstest(pvals, "uniform").statistic
    assert stat < 1.628 / np.sqrt(200)  # 1% critical value


@pytest.mark.slow
def test_null_calibration_two_level_uniform_pvalues():
    with ProcessPoolExecutor(max_workers=2) as pool:
        pvals = np.array(list(pool.map(_two_level_pvalue, range(200))))
    stat = kstest(pvals, "uniform").statistic
    assert stat < 1.628 / np.sqrt(200)


@pytest.mark.slow
def test_two_level_approaches_one_level_for_large_gamma():
    # with m = 1000 n the second-level perturbation is ~gamma^{-1/2} = 3.2%,
    # so seed-paired p-values must agree closely
    with ProcessPoolExecutor(max_workers=2) as pool:
        pairs = list(pool.map(_gamma_pair, range(10)))
    gaps = [abs(p1 - p2) for p1, p2 in pairs]
    assert max(gaps) <= 0.05
