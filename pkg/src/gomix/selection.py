"""Expected cell counts, fit criteria, and the K-sweep driver.

Four criteria are computed from fitted models: a truncated Pearson chi-square
over high-count response patterns, a BIC-style penalty on the variational
lower bound, DIC with the membership scores and item probabilities as the
parameter focus, and AICM built from the posterior log-likelihood trace.
Expected pattern counts integrate the membership vector out by Monte Carlo,
drawing one fresh Dirichlet vector per retained parameter sample.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ResponsePattern, as_pattern
from .mcmc import ChainConfig, ChainOutput, loglik_given_g, run_chain
from .model import GomParams
from .rngtools import dirichlet_logspace, substream
from .vem import VemFit, fit_vem

__all__ = [
    "expected_count_mcmc",
    "expected_counts_mcmc",
    "expected_count_vem",
    "expected_counts_vem",
    "truncated_cells",
    "chi2_truncated",
    "BicApprox",
    "bic_approx",
    "dic",
    "aicm",
    "CriterionRecord",
    "CriteriaReport",
    "criteria_sweep",
    "expected_observed_rows",
]

# Substream tag reserving an RNG lineage for expected-count integration so it
# can never collide with the sampler streams derived from the same seed.
_EXPECTED_STREAM = 104729
_METHOD_STREAMS = {"mcmc": 11, "vem": 12}


# ---------------------------------------------------------------------------
# Expected pattern counts
# ---------------------------------------------------------------------------

def _pattern_rows(patterns, j):
    pats = [as_pattern(p, j) for p in patterns]
    if not pats:
        raise ValueError("at least one pattern is required")
    xmat = np.array([p.bits for p in pats], dtype=float)
    return pats, xmat


def _mixture_pattern_probs(g, lam, xmat):
    """Probability of each pattern under each draw.

    g : (S, K) membership draws, lam : (S, K, J) or (K, J), xmat : (P, J).
    Returns an (S, P) matrix.
    """
    if lam.ndim == 2:
        mix = g @ lam
    else:
        mix = np.einsum("sk,skj->sj", g, lam)
    # Clip instead of masking: a zero cell contributes a huge negative log
    # and the exponential recovers an honest zero probability.
    lo = np.log(np.clip(mix, 1e-300, None))
    hi = np.log(np.clip(1.0 - mix, 1e-300, None))
    return np.exp(lo @ xmat.T + hi @ (1.0 - xmat).T)


def _chain_pattern_probs(chain, patterns, seed):
    if chain.n_draws == 0:
        raise ValueError("chain holds no kept draws; expected counts need at least one")
    j = chain.lam.shape[2]
    pats, xmat = _pattern_rows(patterns, j)
    if seed is None:
        seed = chain.config.seed
    rng = substream(seed, _EXPECTED_STREAM)
    alpha_draws = chain.alpha0[:, None] * chain.xi
    g, _ = dirichlet_logspace(rng, alpha_draws)
    probs = _mixture_pattern_probs(g, chain.lam, xmat)
    if chain.theta1 is not None:
        probs = probs * (1.0 - chain.theta1)[:, None]
        for idx, pat in enumerate(pats):
            if pat.all_zero:
                probs[:, idx] += chain.theta1
    return pats, probs


def expected_counts_mcmc(chain, patterns, n, seed=None, return_se=False):
    """Expected counts for several patterns from one pass over the chain.

    Every pattern is evaluated against the same membership draws, one fresh
    Dirichlet(alpha) vector per retained sample, so the counts over all 2^J
    patterns add up to ``n`` exactly.  ``seed`` defaults to the chain's own
    seed; the integration stream is derived from it and never overlaps the
    sampler's.
    """
    _, probs = _chain_pattern_probs(chain, patterns, seed)
    counts = float(n) * probs.mean(axis=0)
    if not return_se:
        return counts
    s = probs.shape[0]
    se = float(n) * probs.std(axis=0, ddof=1) / math.sqrt(s) if s > 1 else np.zeros(probs.shape[1])
    return counts, se


def expected_count_mcmc(chain, pattern, n, seed=None):
    """Monte Carlo expected count of one response pattern under the chain."""
    return float(expected_counts_mcmc(chain, [pattern], n, seed=seed)[0])


def expected_counts_vem(params, patterns, n, draws=5000, seed=0, return_se=False):
    """Expected counts at fixed point estimates (lam, alpha).

    ``params`` may be a GomParams or a VemFit.  Membership vectors are drawn
    ``draws`` times from Dirichlet(alpha-hat) on a stream derived from
    ``seed``.
    """
    if isinstance(params, VemFit):
        params = params.params
    if draws < 1:
        raise ValueError("draws must be >= 1")
    pats, xmat = _pattern_rows(patterns, params.j)
    rng = substream(seed, _EXPECTED_STREAM)
    alpha = params.alpha0 * params.xi
    g, _ = dirichlet_logspace(rng, np.broadcast_to(alpha, (int(draws), params.k)))
    probs = _mixture_pattern_probs(g, params.lam, xmat)
    counts = float(n) * probs.mean(axis=0)
    if not return_se:
        return counts
    se = float(n) * probs.std(axis=0, ddof=1) / math.sqrt(draws) if draws > 1 else np.zeros(len(pats))
    return counts, se


def expected_count_vem(params, pattern, n, draws=5000, seed=0):
    return float(expected_counts_vem(params, [pattern], n, draws=draws, seed=seed)[0])


# ---------------------------------------------------------------------------
# Truncated chi-square
# ---------------------------------------------------------------------------

def truncated_cells(observed, level, exclude_all_zero=False):
    """Patterns retained at a truncation level, most frequent first.

    Returns (pattern, count) pairs for every pattern observed at least
    ``level`` times, ordered by descending count with the pattern string as
    tie-break so the cell set is reproducible.
    """
    if not isinstance(observed, Dataset):
        observed = Dataset(np.asarray(observed))
    patterns, counts = observed.pattern_table()
    cells = []
    for row, cnt in zip(patterns, counts):
        if cnt < level:
            continue
        pat = ResponsePattern(tuple(int(v) for v in row))
        if exclude_all_zero and pat.all_zero:
            continue
        cells.append((pat, int(cnt)))
    cells.sort(key=lambda pc: (-pc[1], pc[0].bits))
    return cells


def _expected_lookup(expected, j):
    if callable(expected):
        return lambda pat: float(expected(pat))
    table = {as_pattern(key, j).bits: float(val) for key, val in expected.items()}

    def lookup(pat):
        try:
            return table[pat.bits]
        except KeyError:
            raise ValueError(
                f"no expected count supplied for pattern {pat.to_string()}"
            ) from None

    return lookup


def chi2_truncated(observed, expected, level, exclude_all_zero=False):
    """Sum of squared Pearson residuals over patterns observed >= level.

    ``expected`` is a mapping from pattern (string, bit tuple, or
    ResponsePattern) to expected count, or a callable performing that lookup.
    Raising the level can only shrink the cell set, never change a retained
    cell's contribution.
    """
    if not isinstance(observed, Dataset):
        observed = Dataset(np.asarray(observed))
    lookup = _expected_lookup(expected, observed.j)
    total = 0.0
    for pat, obs in truncated_cells(observed, level, exclude_all_zero):
        exp = lookup(pat)
        if not exp > 0.0:
            raise ValueError(
                f"expected count for pattern {pat.to_string()} must be positive, got {exp}"
            )
        total += (obs - exp) ** 2 / exp
    return float(total)


# ---------------------------------------------------------------------------
# Information criteria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BicApprox:
    """BIC computed from the variational lower bound.

    ``value`` is -2 * bound + n_params * log(N).  Ranking deliberately treats
    larger values as preferable; consumers must consult the flag rather than
    assume the classical smaller-is-better convention.
    """

    value: float
    n_params: int
    larger_is_preferable: bool = True

    def __float__(self):
        return self.value


def bic_approx(fit, n_params=None):
    """BIC-style criterion for a variational fit.

    The free-parameter count defaults to K*J item probabilities plus the K
    Dirichlet parameters; for K = 1 the membership distribution is
    degenerate, leaving the J item probabilities plus the single total mass,
    which makes the value the classical BIC of the independence model.
    """
    if not isinstance(fit, VemFit):
        raise TypeError("bic_approx expects a VemFit")
    k, j = fit.params.lam.shape
    n = fit.state.gamma.shape[0]
    if n_params is None:
        n_params = j + 1 if k == 1 else k * j + k
    value = -2.0 * fit.lower_bound + n_params * math.log(n)
    return BicApprox(value=float(value), n_params=int(n_params))


def _chain_loglik_trace(chain):
    if chain.theta1 is not None:
        if chain.loglik_mixture is None:
            raise ValueError("extended chain lacks the mixture log-likelihood trace")
        return chain.loglik_mixture
    return chain.loglik


def dic(chain, data):
    """Deviance information criterion and effective parameter count.

    The deviance focus is the responses' log-likelihood at the membership
    scores and item probabilities, so D(theta-bar) is evaluated at the
    posterior means of g and lambda.  Returns (dic, p_d); smaller DIC values
    are preferable.
    """
    ll = _chain_loglik_trace(chain)
    if ll.size == 0:
        raise ValueError("chain holds no kept draws")
    if chain.g_mean is None:
        raise ValueError(
            "posterior membership means are unavailable; rerun the chain with "
            "accumulate_g_mean=True so dic() can evaluate the plug-in deviance"
        )
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    x_bool = data.x.astype(bool)
    lam_bar = chain.lam.mean(axis=0)
    g_bar = chain.g_mean
    d_bar = float(np.mean(-2.0 * ll))
    if chain.theta1 is not None:
        d_hat = -2.0 * _mixture_loglik_at(x_bool, g_bar, lam_bar, float(chain.theta1.mean()))
    else:
        d_hat = -2.0 * loglik_given_g(x_bool, g_bar, lam_bar)
    p_d = d_bar - d_hat
    return float(d_hat + 2.0 * p_d), float(p_d)


def _mixture_loglik_at(x_bool, g, lam, theta1):
    """Two-compartment observed-data log-likelihood at fixed parameter values."""
    theta2 = 1.0 - theta1
    az = ~x_bool.any(axis=1)
    total = 0.0
    if az.any():
        with np.errstate(divide="ignore"):
            log_comp = np.log1p(-np.clip(g[az] @ lam, None, 1.0)).sum(axis=1)
        p_zero = np.exp(log_comp)
        total += float(np.log(np.maximum(theta1 + theta2 * p_zero, 1e-300)).sum())
    nz = ~az
    if nz.any():
        total += nz.sum() * math.log(max(theta2, 1e-300))
        total += loglik_given_g(x_bool[nz], g[nz], lam)
    return total


def aicm(chain):
    """AICM from the posterior log-likelihood trace: 2 * (mean - variance).

    The variance is the population form (divisor S).  Larger values are
    preferable.
    """
    ll = _chain_loglik_trace(chain)
    if ll.size < 2:
        raise ValueError("aicm needs at least two kept draws")
    return float(2.0 * (ll.mean() - ll.var()))


# ---------------------------------------------------------------------------
# K-sweep driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriterionRecord:
    """Criteria for one fitted model (one K, one method)."""

    k: int
    method: str                # "mcmc" | "vem"
    chi2_tr: dict              # truncation level -> statistic
    fit_value: float           # mean kept log-likelihood (mcmc) or lower bound (vem)
    bic: float | None = None
    bic_larger_is_preferable: bool | None = None
    dic: float | None = None
    p_d: float | None = None
    aicm: float | None = None
    converged: bool | None = None
    seed: int | None = None
    expected: dict | None = None  # pattern string -> expected count (cells at min level)


@dataclass(frozen=True)
class CriteriaReport:
    """All per-K records from a sweep plus the settings that produced them."""

    records: tuple
    k_values: tuple
    methods: tuple
    levels: tuple
    seed: int

    def record(self, k, method):
        for rec in self.records:
            if rec.k == k and rec.method == method:
                return rec
        raise KeyError(f"no record for K={k} method={method}")

    def best(self):
        """Chosen K per criterion, keyed like 'aicm_mcmc' or 'chi2_vem_ge5'."""
        out = {}
        for method in self.methods:
            recs = [r for r in self.records if r.method == method]
            if not recs:
                continue
            for level in self.levels:
                vals = [(r.chi2_tr[level], r.k) for r in recs]
                out[f"chi2_{method}_ge{level}"] = min(vals)[1]
            if method == "mcmc":
                out["aicm_mcmc"] = max((r.aicm, r.k) for r in recs)[1]
                out["dic_mcmc"] = min((r.dic, r.k) for r in recs)[1]
            if method == "vem":
                signed = [
                    ((r.bic if r.bic_larger_is_preferable else -r.bic), r.k)
                    for r in recs
                ]
                out["bic_vem"] = max(signed)[1]
        return out


def _derived_seed(seed, method, k):
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(_METHOD_STREAMS[method], int(k))
    )
    return int(ss.generate_state(1, np.uint64)[0])


def _warn_if_label_switching(lam_draws, k):
    from .diagnostics import profile_separation

    sep = profile_separation(lam_draws)
    if not sep.separated:
        warnings.warn(
            f"profiles are not well separated at K={k} "
            f"(min separation {sep.min_separation:.2f}); label switching may "
            "distort trace-based criteria",
            RuntimeWarning,
            stacklevel=3,
        )


def _mcmc_record(data, k, seed, levels, chain_options, mcmc_settings):
    cfg = ChainConfig(k=k, seed=seed, **mcmc_settings, **(chain_options or {}))
    chain = run_chain(data, cfg)
    if k > 1:
        _warn_if_label_switching(chain.lam, k)
    cells = truncated_cells(data, min(levels))
    pats = [p for p, _ in cells]
    n = data.n
    counts = expected_counts_mcmc(chain, pats, n)
    expected = {p.to_string(): float(c) for p, c in zip(pats, counts)}
    chi2 = {lvl: chi2_truncated(data, expected, lvl) for lvl in levels}
    d, p_d = dic(chain, data)
    return CriterionRecord(
        k=k,
        method="mcmc",
        chi2_tr=chi2,
        fit_value=float(chain.loglik.mean()),
        dic=d,
        p_d=p_d,
        aicm=aicm(chain),
        seed=seed,
        expected=expected,
    )


def _vem_record(data, k, seed, levels, expected_draws, vem_options):
    fit = fit_vem(data, k, seed=seed, **(vem_options or {}))
    cells = truncated_cells(data, min(levels))
    pats = [p for p, _ in cells]
    counts = expected_counts_vem(
        fit.params, pats, data.n, draws=expected_draws, seed=seed
    )
    expected = {p.to_string(): float(c) for p, c in zip(pats, counts)}
    chi2 = {lvl: chi2_truncated(data, expected, lvl) for lvl in levels}
    bv = bic_approx(fit)
    return CriterionRecord(
        k=k,
        method="vem",
        chi2_tr=chi2,
        fit_value=fit.lower_bound,
        bic=bv.value,
        bic_larger_is_preferable=bv.larger_is_preferable,
        converged=fit.converged,
        seed=seed,
        expected=expected,
    )


def criteria_sweep(
    data,
    k_range,
    methods=("mcmc", "vem"),
    seed=0,
    chi2_levels=(1, 5),
    expected_draws=5000,
    threads=1,
    iterations=20000,
    burn_in=10000,
    thin=10,
    chain_options=None,
    vem_options=None,
):
    """Fit every requested K with every requested method and tabulate criteria.

    Each (method, K) fit runs on its own seed derived from ``seed``, so the
    report is identical for any ``threads`` value; the pool only reorders
    wall-clock execution of fits that share nothing.
    """
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    k_values = tuple(int(k) for k in k_range)
    if not k_values:
        raise ValueError("k_range must contain at least one K")
    methods = tuple(methods)
    for m in methods:
        if m not in _METHOD_STREAMS:
            raise ValueError(f"unknown method {m!r}; expected 'mcmc' or 'vem'")
    levels = tuple(sorted(int(lv) for lv in chi2_levels))
    if not levels:
        raise ValueError("chi2_levels must contain at least one level")
    mcmc_settings = {"iterations": iterations, "burn_in": burn_in, "thin": thin}

    tasks = []
    for method in methods:
        for k in k_values:
            task_seed = _derived_seed(seed, method, k)
            if method == "mcmc":
                tasks.append(
                    (method, k, _mcmc_record,
                     (data, k, task_seed, levels, chain_options, mcmc_settings))
                )
            else:
                tasks.append(
                    (method, k, _vem_record,
                     (data, k, task_seed, levels, expected_draws, vem_options))
                )

    results = {}
    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            futures = {
                (method, k): pool.submit(fn, *args)
                for method, k, fn, args in tasks
            }
            for key, fut in futures.items():
                results[key] = fut.result()
    else:
        for method, k, fn, args in tasks:
            results[(method, k)] = fn(*args)

    records = tuple(
        results[(method, k)] for method in methods for k in k_values
    )
    return CriteriaReport(
        records=records,
        k_values=k_values,
        methods=methods,
        levels=levels,
        seed=int(seed),
    )


def expected_observed_rows(data, expected_by_name, level=1, exclude_all_zero=False):
    """Rows for an expected-vs-observed table, most frequent patterns first.

    ``expected_by_name`` maps a column name to an expected-count mapping (or
    callable); each output row is a dict with the pattern string, the
    observed count, and one expected value per column.
    """
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    lookups = {
        name: _expected_lookup(exp, data.j) for name, exp in expected_by_name.items()
    }
    rows = []
    for pat, obs in truncated_cells(data, level, exclude_all_zero):
        row = {"pattern": pat.to_string(), "observed": obs}
        for name, lookup in lookups.items():
            row[name] = lookup(pat)
        rows.append(row)
    return rows
