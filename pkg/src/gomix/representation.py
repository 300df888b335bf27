"""Independent checks that the exact expansion matches direct integration.

marginal_pattern_prob_exact computes pattern probabilities by enumerating
per-item profile assignments.  The functions here recompute the same
quantity by integrating the conditional pattern probability against the
Dirichlet membership density (adaptive quadrature in stick-breaking
coordinates) and by plain Monte Carlo, then compare all three routes over
randomized models.  The quadrature path is deliberately kept free of any
code shared with the enumeration path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import betaln, roots_jacobi

from .data import as_pattern
from .model import ENUMERATION_GUARD, GomParams, marginal_pattern_prob_exact
from .rngtools import dirichlet, substream

__all__ = [
    "marginal_pattern_prob_quadrature",
    "run_representation_check",
    "RepresentationReport",
]


def _mix_probs_k3(lam, g1, v):
    """Conditional positive-response probabilities in stick coordinates."""
    w2 = (1.0 - g1) * v
    w3 = (1.0 - g1) * (1.0 - v)
    return g1 * lam[0] + w2 * lam[1] + w3 * lam[2]


def _pattern_value(mix, bits):
    return np.prod(np.where(bits, mix, 1.0 - mix))


def _beta_logpdf(t, a, b):
    return (a - 1.0) * np.log(t) + (b - 1.0) * np.log1p(-t) - betaln(a, b)


def _beta_expectation_rule(p, q, degree):
    """Nodes/weights for E[h(V)] with V ~ Beta(p, q), exact for poly h.

    Built from the Gauss-Jacobi rule on [-1, 1]; the node count covers
    polynomials up to the requested degree exactly.
    """
    n = max(degree // 2 + 2, 4)
    t, w = roots_jacobi(n, q - 1.0, p - 1.0)
    nodes = 0.5 * (1.0 + t)
    log_scale = (1.0 - p - q) * np.log(2.0) - betaln(p, q)
    weights = w * np.exp(log_scale)
    return nodes, weights


def marginal_pattern_prob_quadrature(params, pattern):
    """Marginal pattern probability via numerical integration over g.

    Supports K <= 3.  For K = 2 the membership simplex is one-dimensional
    and handled end to end by adaptive quadrature; for K = 3 the outer
    stick-breaking coordinate uses adaptive quadrature while the inner one
    uses a fixed Gauss-Jacobi rule, which is exact because the integrand is
    a polynomial of degree <= J in that coordinate.
    """
    k, j = params.k, params.j
    pat = as_pattern(pattern, j)
    bits = pat.as_array().astype(bool)
    lam = params.lam
    alpha = params.alpha

    if k == 1:
        return float(_pattern_value(lam[0], bits))

    if k == 2:
        a1, a2 = alpha

        def integrand(t):
            mix = t * lam[0] + (1.0 - t) * lam[1]
            return _pattern_value(mix, bits) * np.exp(_beta_logpdf(t, a1, a2))

        return _adaptive_unit_quad(integrand)

    if k == 3:
        a1, a2, a3 = alpha
        nodes, weights = _beta_expectation_rule(a2, a3, degree=j)

        def inner(g1):
            acc = 0.0
            for v, w in zip(nodes, weights):
                acc += w * _pattern_value(_mix_probs_k3(lam, g1, v), bits)
            return acc

        def integrand(t):
            return inner(t) * np.exp(_beta_logpdf(t, a1, a2 + a3))

        return _adaptive_unit_quad(integrand)

    raise ValueError("quadrature oracle supports K <= 3")


def _adaptive_unit_quad(fn):
    # The target agreement is 1e-8; requesting a bit below that leaves
    # margin while staying achievable for the endpoint-singular densities.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, _ = integrate.quad(fn, 0.0, 1.0, epsabs=1e-10, epsrel=1e-10, limit=300)
    return float(value)


def _all_patterns(j):
    codes = np.arange(1 << j, dtype=np.int64)
    return ((codes[:, None] >> np.arange(j - 1, -1, -1)[None, :]) & 1).astype(np.uint8)


def _mc_all_patterns(params, patterns, draws, rng):
    """One shared batch of membership draws evaluated on many patterns."""
    g = dirichlet(rng, params.alpha, size=draws)
    mix = g @ params.lam
    est = np.empty(patterns.shape[0])
    se = np.empty(patterns.shape[0])
    for i, row in enumerate(patterns):
        vals = np.prod(np.where(row.astype(bool)[None, :], mix, 1.0 - mix), axis=1)
        est[i] = vals.mean()
        se[i] = vals.std(ddof=1) / np.sqrt(draws)
    return est, se


def _random_model(rng, j, k):
    alpha0 = float(rng.uniform(0.2, 4.0))
    xi = dirichlet(rng, np.ones(k))
    xi = np.maximum(xi, 0.05)
    xi = xi / xi.sum()
    lam = rng.uniform(0.05, 0.95, size=(k, j))
    return GomParams(lam=lam, alpha0=alpha0, xi=xi)


@dataclass
class RepresentationReport:
    """Outcome of the randomized equivalence suite."""

    trials: int
    j: int
    k: int
    draws: int
    max_quad_abs_err: float = 0.0
    max_mc_z: float = 0.0
    max_norm_err: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


def run_representation_check(
    j=3,
    k=2,
    trials=50,
    draws=10**5,
    seed=0,
    quad_tol=1e-8,
    se_mult=3.0,
    norm_tol=1e-10,
):
    """Compare exact, quadrature, and MC pattern probabilities on random models.

    For each randomized model, every one of the 2^J patterns is computed by
    all three routes.  A trial fails if the exact-vs-quadrature gap exceeds
    ``quad_tol``, the exact-vs-MC gap exceeds ``se_mult`` standard errors
    (plus a 1e-12 absolute floor for zero-variance cases), or the exact
    probabilities do not sum to 1 within ``norm_tol``.
    """
    if j < 1 or k < 1:
        raise ValueError("j and k must be >= 1")
    if k > 3:
        raise ValueError("quadrature oracle supports K <= 3")
    if k**j > ENUMERATION_GUARD:
        raise ValueError(f"K^J = {k**j} exceeds the enumeration guard ({ENUMERATION_GUARD})")
    patterns = _all_patterns(j)
    report = RepresentationReport(trials=trials, j=j, k=k, draws=draws)
    for trial in range(int(trials)):
        rng = substream(seed, trial)
        params = _random_model(rng, j, k)
        exact = np.array([marginal_pattern_prob_exact(params, tuple(p)) for p in patterns])
        quad = np.array([marginal_pattern_prob_quadrature(params, tuple(p)) for p in patterns])
        mc, se = _mc_all_patterns(params, patterns, draws, rng)

        quad_err = float(np.max(np.abs(exact - quad)))
        z = np.abs(exact - mc) / np.where(se > 0, se, np.inf)
        mc_margin = np.abs(exact - mc) - (se_mult * se + 1e-12)
        norm_err = float(abs(exact.sum() - 1.0))

        report.max_quad_abs_err = max(report.max_quad_abs_err, quad_err)
        report.max_mc_z = max(report.max_mc_z, float(np.max(np.where(np.isfinite(z), z, 0.0))))
        report.max_norm_err = max(report.max_norm_err, norm_err)

        problems = []
        if quad_err > quad_tol:
            problems.append(f"quadrature gap {quad_err:.3e} > {quad_tol:.1e}")
        if np.any(mc_margin > 0):
            worst = int(np.argmax(mc_margin))
            problems.append(
                f"MC gap {abs(exact[worst] - mc[worst]):.3e} > {se_mult} SE on pattern "
                f"{''.join(map(str, patterns[worst]))}"
            )
        if norm_err > norm_tol:
            problems.append(f"pattern probabilities sum off by {norm_err:.3e}")
        if problems:
            report.failures.append({"trial": trial, "problems": problems})
    return report
