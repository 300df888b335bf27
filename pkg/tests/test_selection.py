import itertools
import math
import warnings

import numpy as np
import pytest

from gomix.data import Dataset, ResponsePattern
from gomix.mcmc import ChainConfig, ChainOutput
from gomix.model import GomParams, marginal_pattern_prob_exact
from gomix.selection import (
    BicApprox,
    CriteriaReport,
    CriterionRecord,
    aicm,
    bic_approx,
    chi2_truncated,
    criteria_sweep,
    dic,
    expected_count_mcmc,
    expected_count_vem,
    expected_counts_mcmc,
    expected_counts_vem,
    expected_observed_rows,
    truncated_cells,
)
from gomix.selection import _warn_if_label_switching
from gomix.simulate import generate_dataset
from gomix.vem import fit_vem


def all_patterns(j):
    return ["".join(bits) for bits in itertools.product("01", repeat=j)]


def constant_chain(params, s, seed=0, theta1=None, loglik=None, loglik_mixture=None,
                   g_mean=None):
    """A ChainOutput whose kept draws all sit at one parameter point.

    Expected counts then integrate g out against Dirichlet(alpha0 * xi) with
    lambda held fixed, which is exactly what marginal_pattern_prob_exact
    computes by quadrature.
    """
    k, j = params.lam.shape
    config = ChainConfig(k=k, iterations=s, burn_in=0, thin=1, seed=seed)
    if loglik is None:
        loglik = np.zeros(s)
    return ChainOutput(
        config=config,
        lam=np.tile(params.lam, (s, 1, 1)),
        alpha0=np.full(s, params.alpha0),
        xi=np.tile(params.xi, (s, 1)),
        loglik=np.asarray(loglik, dtype=float),
        accepted_alpha0=np.zeros(s, dtype=np.uint8),
        accepted_xi=np.zeros(s, dtype=np.uint8),
        accept_rate_alpha0=0.0,
        accept_rate_xi=0.0,
        kept_sweeps=np.arange(1, s + 1),
        init_params=None,
        final_state=None,
        g_mean=g_mean,
        theta1=None if theta1 is None else np.asarray(theta1, dtype=float),
        loglik_mixture=None if loglik_mixture is None else np.asarray(loglik_mixture, dtype=float),
    )


def two_profile_params():
    return GomParams(
        lam=np.array([[0.85, 0.7, 0.2], [0.15, 0.3, 0.8]]),
        alpha0=0.6,
        xi=np.array([0.55, 0.45]),
    )


def flat_params(j=3):
    return GomParams(lam=np.full((1, j), 0.5), alpha0=1.0, xi=np.array([1.0]))


def training_data(seed=11, n=120):
    params = GomParams(
        lam=np.array([[0.9, 0.8, 0.15, 0.1, 0.85], [0.1, 0.2, 0.8, 0.9, 0.15]]),
        alpha0=0.8,
        xi=np.array([0.6, 0.4]),
    )
    data, _ = generate_dataset(params, n, seed=seed)
    return data


class TestExpectedCountsMcmc:
    def test_single_flat_profile_gives_uniform_cells(self):
        # one profile at lambda = 1/2 puts mass 2^-J on every pattern no
        # matter what g does
        chain = constant_chain(flat_params(), s=50)
        counts = expected_counts_mcmc(chain, all_patterns(3), n=400)
        assert counts.shape == (8,)
        np.testing.assert_allclose(counts, 400 / 8, rtol=1e-12)

    def test_matches_exact_marginal_within_mc_error(self):
        params = two_profile_params()
        chain = constant_chain(params, s=4000, seed=3)
        pats = ["101", "000", "110"]
        counts, se = expected_counts_mcmc(chain, pats, n=1000, return_se=True)
        for pat, c, s in zip(pats, counts, se):
            exact = 1000 * marginal_pattern_prob_exact(params, pat)
            assert abs(c - exact) < 4 * s

    def test_counts_sum_to_n_across_all_patterns(self):
        chain = constant_chain(two_profile_params(), s=30, seed=9)
        counts = expected_counts_mcmc(chain, all_patterns(3), n=350)
        assert counts.sum() == pytest.approx(350.0, rel=1e-10)

    def test_seed_defaults_to_chain_seed(self):
        chain = constant_chain(two_profile_params(), s=20, seed=17)
        default = expected_counts_mcmc(chain, ["110"], n=100)
        explicit = expected_counts_mcmc(chain, ["110"], n=100, seed=17)
        other = expected_counts_mcmc(chain, ["110"], n=100, seed=18)
        assert np.array_equal(default, explicit)
        assert not np.array_equal(default, other)

    def test_scalar_wrapper(self):
        chain = constant_chain(two_profile_params(), s=20)
        one = expected_count_mcmc(chain, "011", n=100)
        many = expected_counts_mcmc(chain, ["011", "111"], n=100)
        assert isinstance(one, float)
        # matmul picks a different kernel for 1 vs 2 output columns
        assert one == pytest.approx(many[0], rel=1e-12)

    def test_pattern_objects_and_strings_agree(self):
        chain = constant_chain(two_profile_params(), s=15)
        a = expected_counts_mcmc(chain, ["101"], n=60)
        b = expected_counts_mcmc(chain, [ResponsePattern((1, 0, 1))], n=60)
        assert np.array_equal(a, b)

    def test_empty_chain_rejected(self):
        chain = constant_chain(two_profile_params(), s=0)
        with pytest.raises(ValueError, match="no kept draws"):
            expected_counts_mcmc(chain, ["000"], n=10)

    def test_needs_at_least_one_pattern(self):
        chain = constant_chain(two_profile_params(), s=5)
        with pytest.raises(ValueError, match="at least one pattern"):
            expected_counts_mcmc(chain, [], n=10)

    def test_single_draw_has_zero_se(self):
        chain = constant_chain(flat_params(), s=1)
        counts, se = expected_counts_mcmc(chain, ["010"], n=80, return_se=True)
        assert counts[0] == pytest.approx(10.0, rel=1e-12)
        assert se[0] == 0.0


class TestExpectedCountsExtended:
    def test_all_zero_cell_gets_stayer_mass(self):
        chain = constant_chain(flat_params(), s=40, theta1=np.full(40, 0.3),
                               loglik_mixture=np.zeros(40))
        counts = expected_counts_mcmc(chain, ["000", "100"], n=400)
        assert counts[0] == pytest.approx(400 * (0.7 * 0.125 + 0.3), rel=1e-12)
        assert counts[1] == pytest.approx(400 * 0.7 * 0.125, rel=1e-12)

    def test_counts_still_sum_to_n(self):
        chain = constant_chain(two_profile_params(), s=25, seed=2,
                               theta1=np.full(25, 0.2), loglik_mixture=np.zeros(25))
        counts = expected_counts_mcmc(chain, all_patterns(3), n=500)
        assert counts.sum() == pytest.approx(500.0, rel=1e-10)

    def test_theta_varies_per_draw(self):
        # with lambda = 1/2 each compartment mix is 0.125 scaled by that
        # draw's mover share, plus the stayer share on the all-zero cell
        chain = constant_chain(flat_params(), s=2, theta1=np.array([0.0, 0.6]),
                               loglik_mixture=np.zeros(2))
        counts = expected_counts_mcmc(chain, ["000", "100"], n=800)
        expected_zero = 800 * np.mean([0.125, 0.4 * 0.125 + 0.6])
        expected_one = 800 * np.mean([0.125, 0.4 * 0.125])
        assert counts[0] == pytest.approx(expected_zero, rel=1e-12)
        assert counts[1] == pytest.approx(expected_one, rel=1e-12)


class TestExpectedCountsVem:
    def test_accepts_params_and_sums_to_n(self):
        counts = expected_counts_vem(two_profile_params(), all_patterns(3), n=900,
                                     draws=2000, seed=4)
        assert counts.shape == (8,)
        assert counts.sum() == pytest.approx(900.0, rel=1e-10)

    def test_matches_exact_marginal_within_mc_error(self):
        params = two_profile_params()
        counts, se = expected_counts_vem(params, ["011", "000"], n=1000,
                                         draws=20000, seed=5, return_se=True)
        for pat, c, s in zip(["011", "000"], counts, se):
            exact = 1000 * marginal_pattern_prob_exact(params, pat)
            assert abs(c - exact) < 4 * s

    def test_accepts_vem_fit(self):
        data = training_data(seed=21, n=150)
        fit = fit_vem(data, 2, seed=0)
        via_fit = expected_counts_vem(fit, ["10010"], n=data.n, draws=500, seed=6)
        via_params = expected_counts_vem(fit.params, ["10010"], n=data.n,
                                         draws=500, seed=6)
        assert np.array_equal(via_fit, via_params)

    def test_same_seed_reproduces(self):
        params = two_profile_params()
        a = expected_counts_vem(params, ["110"], n=100, draws=300, seed=9)
        b = expected_counts_vem(params, ["110"], n=100, draws=300, seed=9)
        assert np.array_equal(a, b)

    def test_rejects_nonpositive_draws(self):
        with pytest.raises(ValueError, match="draws"):
            expected_counts_vem(two_profile_params(), ["000"], n=10, draws=0)

    def test_scalar_wrapper(self):
        params = flat_params()
        c = expected_count_vem(params, "111", n=160, draws=50, seed=1)
        assert isinstance(c, float)
        assert c == pytest.approx(20.0, rel=1e-12)


class TestTruncatedCells:
    def pattern_data(self):
        return Dataset.from_pattern_counts([
            ((0, 0, 0), 10),
            ((1, 0, 1), 7),
            ((1, 1, 0), 7),
            ((0, 1, 1), 2),
            ((1, 1, 1), 1),
        ])

    def test_ordering_by_count_then_bits(self):
        cells = truncated_cells(self.pattern_data(), 2)
        strings = [p.to_string() for p, _ in cells]
        counts = [c for _, c in cells]
        assert strings == ["000", "101", "110", "011"]
        assert counts == [10, 7, 7, 2]
        assert all(isinstance(c, int) for c in counts)

    def test_raising_level_shrinks_cell_set(self):
        data = self.pattern_data()
        previous = None
        for level in range(1, 12):
            kept = {p.to_string() for p, _ in truncated_cells(data, level)}
            if previous is not None:
                assert kept <= previous
            previous = kept
        assert previous == set()

    def test_exclude_all_zero(self):
        cells = truncated_cells(self.pattern_data(), 1, exclude_all_zero=True)
        strings = {p.to_string() for p, _ in cells}
        assert "000" not in strings
        assert len(cells) == 4

    def test_accepts_raw_array(self):
        x = np.array([[1, 0], [1, 0], [0, 1]])
        cells = truncated_cells(x, 2)
        assert [(p.to_string(), c) for p, c in cells] == [("10", 2)]


class TestChi2Truncated:
    def two_cell_data(self):
        return Dataset.from_pattern_counts([((0, 1), 10), ((1, 0), 20)])

    def test_hand_value(self):
        expected = {"01": 5.0, "10": 25.0}
        assert chi2_truncated(self.two_cell_data(), expected, 1) == 6.0

    def test_zero_when_expected_equals_observed(self):
        expected = {"01": 10.0, "10": 20.0}
        assert chi2_truncated(self.two_cell_data(), expected, 1) == 0.0

    def test_callable_expected(self):
        table = {(0, 1): 5.0, (1, 0): 25.0}
        stat = chi2_truncated(self.two_cell_data(), lambda p: table[p.bits], 1)
        assert stat == 6.0

    def test_missing_pattern_raises(self):
        with pytest.raises(ValueError, match="no expected count supplied"):
            chi2_truncated(self.two_cell_data(), {"01": 5.0}, 1)

    def test_nonpositive_expected_raises(self):
        with pytest.raises(ValueError, match="must be positive"):
            chi2_truncated(self.two_cell_data(), {"01": 0.0, "10": 25.0}, 1)

    def test_higher_level_never_raises_statistic(self):
        data = Dataset.from_pattern_counts([
            ((0, 0), 12), ((0, 1), 6), ((1, 0), 3), ((1, 1), 1),
        ])
        expected = {"00": 10.0, "01": 7.0, "10": 4.0, "11": 1.0}
        stats = [chi2_truncated(data, expected, lvl) for lvl in (1, 2, 4, 7)]
        assert all(a >= b for a, b in zip(stats, stats[1:]))

    def test_exclude_all_zero_removes_that_term(self):
        data = Dataset.from_pattern_counts([((0, 0), 12), ((1, 1), 4)])
        expected = {"00": 10.0, "11": 8.0}
        full = chi2_truncated(data, expected, 1)
        trimmed = chi2_truncated(data, expected, 1, exclude_all_zero=True)
        assert full - trimmed == pytest.approx((12 - 10) ** 2 / 10, rel=1e-12)


class TestBicApprox:
    def test_rejects_non_fit(self):
        with pytest.raises(TypeError):
            bic_approx(two_profile_params())

    def test_default_parameter_count_and_formula(self):
        data = training_data(seed=31, n=160)
        fit = fit_vem(data, 2, seed=0)
        b = bic_approx(fit)
        assert b.n_params == 2 * data.j + 2
        assert b.value == pytest.approx(
            -2 * fit.lower_bound + b.n_params * math.log(data.n), rel=1e-12
        )
        assert b.larger_is_preferable is True
        assert float(b) == b.value

    def test_single_profile_matches_classical_independence_bic(self):
        data = training_data(seed=32, n=140)
        fit = fit_vem(data, 1, seed=0)
        p = data.x.mean(axis=0)
        loglik = float(
            (data.x.sum(axis=0) * np.log(p)
             + (data.n - data.x.sum(axis=0)) * np.log1p(-p)).sum()
        )
        b = bic_approx(fit)
        assert b.n_params == data.j + 1
        assert b.value == pytest.approx(-2 * loglik + (data.j + 1) * math.log(data.n),
                                        rel=1e-10)

    def test_doubling_rows_adds_log_two_per_parameter(self):
        data = training_data(seed=33, n=90)
        doubled = Dataset(np.vstack([data.x, data.x]))
        fit1 = fit_vem(data, 1, seed=0)
        fit2 = fit_vem(doubled, 1, seed=0)
        assert fit2.lower_bound == pytest.approx(2 * fit1.lower_bound, rel=1e-10)
        b1, b2 = bic_approx(fit1), bic_approx(fit2)
        penalty1 = b1.value + 2 * fit1.lower_bound
        penalty2 = b2.value + 2 * fit2.lower_bound
        assert penalty2 - penalty1 == pytest.approx(b1.n_params * math.log(2),
                                                    rel=1e-9)

    def test_explicit_parameter_count(self):
        data = training_data(seed=34, n=80)
        fit = fit_vem(data, 2, seed=0)
        gap = bic_approx(fit, n_params=5).value - bic_approx(fit, n_params=2).value
        assert gap == pytest.approx(3 * math.log(data.n), rel=1e-12)


class TestDic:
    def toy_chain(self, loglik, lam_value, theta1=None, loglik_mixture=None):
        params = GomParams(lam=np.array([[lam_value]]), alpha0=1.0, xi=np.array([1.0]))
        return constant_chain(
            params, s=len(loglik), loglik=loglik,
            g_mean=np.ones((1, 1)),
            theta1=theta1, loglik_mixture=loglik_mixture,
        )

    def test_hand_arithmetic(self):
        # plug-in deviance 21, trace deviances 20 and 24: p_d = 1, dic = 23
        chain = self.toy_chain([-10.0, -12.0], math.exp(-10.5))
        data = Dataset(np.array([[1]], dtype=np.uint8))
        value, p_d = dic(chain, data)
        assert p_d == pytest.approx(1.0, abs=1e-9)
        assert value == pytest.approx(23.0, abs=1e-9)

    def test_constant_trace_at_plugin_gives_zero_pd(self):
        chain = self.toy_chain([-10.5, -10.5], math.exp(-10.5))
        data = Dataset(np.array([[1]], dtype=np.uint8))
        value, p_d = dic(chain, data)
        assert p_d == pytest.approx(0.0, abs=1e-9)
        assert value == pytest.approx(21.0, abs=1e-9)

    def test_missing_g_mean_explains_fix(self):
        chain = constant_chain(flat_params(), s=3, loglik=[-1.0, -2.0, -3.0])
        data = Dataset(np.ones((2, 3), dtype=np.uint8))
        with pytest.raises(ValueError, match="accumulate_g_mean=True"):
            dic(chain, data)

    def test_empty_trace_rejected(self):
        chain = constant_chain(flat_params(), s=0, g_mean=np.ones((1, 3)) / 3)
        with pytest.raises(ValueError, match="no kept draws"):
            dic(chain, Dataset(np.ones((1, 3), dtype=np.uint8)))

    def test_extended_chain_mixes_stayer_mass_into_plugin(self):
        chain = self.toy_chain(
            [0.0, 0.0], 0.4,
            theta1=np.array([0.25, 0.25]),
            loglik_mixture=np.array([-2.0, -4.0]),
        )
        chain = ChainOutput(**{**chain.__dict__, "g_mean": np.ones((2, 1))})
        data = Dataset(np.array([[1], [0]], dtype=np.uint8))
        d_hat = -2 * (math.log(0.25 + 0.75 * 0.6) + math.log(0.75) + math.log(0.4))
        d_bar = 6.0
        value, p_d = dic(chain, data)
        assert p_d == pytest.approx(d_bar - d_hat, abs=1e-9)
        assert value == pytest.approx(d_hat + 2 * (d_bar - d_hat), abs=1e-9)

    def test_extended_chain_without_mixture_trace_rejected(self):
        chain = self.toy_chain([0.0, 0.0], 0.4, theta1=np.array([0.2, 0.2]))
        data = Dataset(np.array([[1]], dtype=np.uint8))
        with pytest.raises(ValueError, match="mixture log-likelihood"):
            dic(chain, data)


class TestAicm:
    def test_hand_arithmetic(self):
        chain = constant_chain(flat_params(), s=2, loglik=[-10.0, -12.0])
        assert aicm(chain) == pytest.approx(-24.0, abs=1e-9)

    def test_constant_trace(self):
        chain = constant_chain(flat_params(), s=4, loglik=[-7.0] * 4)
        assert aicm(chain) == pytest.approx(-14.0, abs=1e-12)

    def test_spread_penalizes(self):
        values = []
        for c in (0.5, 1.0, 2.0):
            chain = constant_chain(flat_params(), s=2, loglik=[-10 - c, -10 + c])
            values.append(aicm(chain))
        assert values[0] > values[1] > values[2]

    def test_extended_chain_uses_mixture_trace(self):
        chain = constant_chain(
            flat_params(), s=2, loglik=[-100.0, -100.0],
            theta1=np.array([0.1, 0.1]), loglik_mixture=[-10.0, -12.0],
        )
        assert aicm(chain) == pytest.approx(-24.0, abs=1e-9)

    def test_needs_two_draws(self):
        chain = constant_chain(flat_params(), s=1, loglik=[-3.0])
        with pytest.raises(ValueError, match="two kept draws"):
            aicm(chain)


class TestCriteriaReport:
    def make_report(self, bic_larger=True):
        records = (
            CriterionRecord(k=2, method="mcmc", chi2_tr={1: 9.0, 5: 4.0},
                            fit_value=-120.0, dic=100.0, p_d=3.0, aicm=-50.0),
            CriterionRecord(k=3, method="mcmc", chi2_tr={1: 5.0, 5: 6.0},
                            fit_value=-110.0, dic=95.0, p_d=4.0, aicm=-45.0),
            CriterionRecord(k=2, method="vem", chi2_tr={1: 8.0, 5: 3.0},
                            fit_value=-119.0, bic=200.0,
                            bic_larger_is_preferable=bic_larger, converged=True),
            CriterionRecord(k=3, method="vem", chi2_tr={1: 7.0, 5: 5.0},
                            fit_value=-111.0, bic=150.0,
                            bic_larger_is_preferable=bic_larger, converged=True),
        )
        return CriteriaReport(records=records, k_values=(2, 3),
                              methods=("mcmc", "vem"), levels=(1, 5), seed=0)

    def test_record_lookup(self):
        report = self.make_report()
        assert report.record(3, "mcmc").aicm == -45.0
        with pytest.raises(KeyError):
            report.record(4, "mcmc")

    def test_best_follows_each_criterion_direction(self):
        best = self.make_report().best()
        assert best["chi2_mcmc_ge1"] == 3
        assert best["chi2_mcmc_ge5"] == 2
        assert best["chi2_vem_ge1"] == 3
        assert best["chi2_vem_ge5"] == 2
        assert best["dic_mcmc"] == 3
        assert best["aicm_mcmc"] == 3
        assert best["bic_vem"] == 2

    def test_bic_direction_flag_is_honored(self):
        best = self.make_report(bic_larger=False).best()
        assert best["bic_vem"] == 3


@pytest.fixture(scope="module")
def sweep():
    data = training_data(seed=41, n=120)
    kwargs = dict(
        k_range=(1, 2), seed=7, chi2_levels=(5, 1), expected_draws=400,
        iterations=60, burn_in=30, thin=3,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = criteria_sweep(data, **kwargs)
        again = criteria_sweep(data, **kwargs)
        threaded = criteria_sweep(data, threads=3, **kwargs)
    return data, report, again, threaded


class TestCriteriaSweep:
    def test_report_structure(self, sweep):
        data, report, _, _ = sweep
        assert report.k_values == (1, 2)
        assert report.methods == ("mcmc", "vem")
        assert report.levels == (1, 5)
        assert len(report.records) == 4
        seen = {(r.method, r.k) for r in report.records}
        assert seen == {("mcmc", 1), ("mcmc", 2), ("vem", 1), ("vem", 2)}

    def test_method_specific_fields(self, sweep):
        _, report, _, _ = sweep
        m = report.record(2, "mcmc")
        v = report.record(2, "vem")
        assert m.aicm is not None and m.dic is not None and m.bic is None
        assert v.bic is not None and v.converged is not None and v.dic is None
        assert m.seed != v.seed
        assert sorted(m.chi2_tr) == [1, 5]
        assert m.chi2_tr[5] <= m.chi2_tr[1]

    def test_expected_cells_cover_min_level(self, sweep):
        data, report, _, _ = sweep
        cells = truncated_cells(data, 1)
        for rec in report.records:
            assert set(rec.expected) == {p.to_string() for p, _ in cells}
            assert all(v > 0 for v in rec.expected.values())

    def test_rerun_is_identical(self, sweep):
        _, report, again, _ = sweep
        for rec, rec2 in zip(report.records, again.records):
            assert rec == rec2

    def test_thread_count_does_not_change_results(self, sweep):
        _, report, _, threaded = sweep
        for rec, rec2 in zip(report.records, threaded.records):
            assert rec == rec2

    def test_validation(self):
        data = np.array([[0, 1], [1, 0]])
        with pytest.raises(ValueError, match="at least one K"):
            criteria_sweep(data, k_range=())
        with pytest.raises(ValueError, match="unknown method"):
            criteria_sweep(data, k_range=(2,), methods=("gibbs",))
        with pytest.raises(ValueError, match="at least one level"):
            criteria_sweep(data, k_range=(2,), chi2_levels=())


class TestLabelSwitchWarning:
    def test_coincident_profiles_warn(self):
        draws = np.tile(np.full((2, 4), 0.5), (40, 1, 1))
        with pytest.warns(RuntimeWarning, match="label switching"):
            _warn_if_label_switching(draws, 2)

    def test_separated_profiles_stay_silent(self):
        rng = np.random.default_rng(0)
        base = np.array([[0.9, 0.85, 0.9, 0.8], [0.1, 0.15, 0.1, 0.2]])
        draws = base + rng.normal(0.0, 0.01, size=(60, 2, 4))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            _warn_if_label_switching(draws, 2)


class TestExpectedObservedRows:
    def test_table_rows(self):
        data = Dataset.from_pattern_counts([
            ((0, 0), 9), ((1, 1), 4), ((0, 1), 2),
        ])
        expected = {"00": 8.5, "11": 4.5, "01": 2.5}
        rows = expected_observed_rows(
            data,
            {"model": expected, "flat": lambda pat: 5.0},
            level=1,
        )
        assert [r["pattern"] for r in rows] == ["00", "11", "01"]
        assert [r["observed"] for r in rows] == [9, 4, 2]
        assert [r["model"] for r in rows] == [8.5, 4.5, 2.5]
        assert all(r["flat"] == 5.0 for r in rows)

    def test_exclude_all_zero_and_level(self):
        data = Dataset.from_pattern_counts([
            ((0, 0), 9), ((1, 1), 4), ((0, 1), 2),
        ])
        rows = expected_observed_rows(
            data, {"model": lambda pat: 1.0}, level=3, exclude_all_zero=True,
        )
        assert [r["pattern"] for r in rows] == ["11"]
