"""Variational EM estimation of the partial-membership model.

The posterior over each individual's membership vector and item assignments
is approximated by a fully factorized family: a Dirichlet with free
parameter gamma_i for the membership vector and an independent multinomial
with probabilities phi_ij for each item assignment.  Coordinate updates on
the evidence lower bound alternate with closed-form maximization of the
item profiles lambda and a Newton iteration for the Dirichlet parameter
alpha, which is treated as a free positive vector here (the sampler's
(alpha0, xi) split is recovered afterwards for reporting).

Rows sharing a response pattern have identical variational solutions, so
the fitting loop works on the table of distinct patterns with counts and
expands per-individual quantities only on output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ._special import digamma, trigamma
from .data import Dataset
from .latent_class import fit_latent_class
from .mcmc import LAMBDA_CLAMP, NumericalAbortError
from .model import GomParams
from .rngtools import substream

__all__ = [
    "VariationalState",
    "VemFit",
    "e_step",
    "m_step_lambda",
    "m_step_alpha",
    "lower_bound",
    "fit_vem",
]


@dataclass
class VariationalState:
    """Free parameters of the factorized approximation, per individual."""

    gamma: np.ndarray        # (N, K) positive
    phi: np.ndarray          # (N, J, K) rows on the simplex
    lower_bound: float
    params: GomParams


@dataclass
class VemFit:
    params: GomParams
    state: VariationalState
    bound_trace: np.ndarray
    converged: bool
    iterations: int
    e_step_cap_events: int = 0
    lambda_hold_events: int = 0

    @property
    def lower_bound(self):
        return self.state.lower_bound


def _log_item_terms(x_bool, lam):
    """log Pr(x_ij | z_ij = k) as an (M, J, K) array; -inf where impossible."""
    with np.errstate(divide="ignore"):
        log_l = np.log(lam.T)[None, :, :]
        log_1ml = np.log1p(-lam.T)[None, :, :]
    return np.where(x_bool[:, :, None], log_l, log_1ml)


def _phi_from_gamma(log_b, gamma):
    dg = digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]
    w = log_b + dg[:, None, :]
    m = w.max(axis=2, keepdims=True)
    # Rows where every class is impossible get a uniform fallback; the
    # bound will be -inf there and reported by lower_bound.
    safe = np.isfinite(m)
    e = np.where(safe, np.exp(w - np.where(safe, m, 0.0)), 1.0)
    return e / e.sum(axis=2, keepdims=True)


def _e_step_core(x_bool, lam, alpha, gamma0, tol, max_inner):
    """Fixed-point iteration for (gamma, phi) on rows of x_bool.

    Returns (gamma, phi, rows_not_converged).  On exit gamma equals
    alpha + sum_j phi exactly for every row.
    """
    m, j = x_bool.shape
    k = alpha.size
    log_b = _log_item_terms(x_bool, lam)
    gamma = np.array(gamma0, dtype=float, copy=True)
    phi = np.empty((m, j, k))
    active = np.arange(m)
    for _ in range(max_inner):
        phi_a = _phi_from_gamma(log_b[active], gamma[active])
        gamma_new = alpha[None, :] + phi_a.sum(axis=1)
        delta = np.abs(gamma_new - gamma[active]).max(axis=1)
        phi[active] = phi_a
        gamma[active] = gamma_new
        active = active[delta >= tol]
        if active.size == 0:
            break
    return gamma, phi, active.size


def e_step(data, lam, alpha, gamma0=None, tol=1e-8, max_inner=500):
    """Update the free parameters for every individual at fixed (lambda, alpha).

    Iterates phi_ijk proportional to lam^x (1-lam)^(1-x) exp(psi(gamma_ik) -
    psi(sum_k gamma_ik)) against gamma_ik = alpha_k + sum_j phi_ijk until the
    largest gamma change drops below tol.  ``gamma0`` overrides the default
    start alpha + J/K; the fixed point itself does not depend on it.
    """
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    x_bool = data.x.astype(bool)
    alpha = np.asarray(alpha, dtype=float)
    if gamma0 is None:
        gamma0 = np.broadcast_to(alpha + data.j / alpha.size, (data.n, alpha.size))
    gamma, phi, n_left = _e_step_core(x_bool, lam, alpha, gamma0, tol, max_inner)
    if n_left:
        warnings.warn(
            f"inner fixed-point iteration hit the {max_inner}-step cap for "
            f"{n_left} individual(s)",
            RuntimeWarning,
            stacklevel=2,
        )
    return gamma, phi


def _m_step_lambda_core(x_bool, weights, phi, lam_old):
    num = np.einsum("p,pjk,pj->kj", weights, phi, x_bool.astype(float))
    den = np.einsum("p,pjk->kj", weights, phi)
    held = den <= 0.0
    ratio = np.clip(num / np.where(held, 1.0, den), LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP)
    return np.where(held, lam_old, ratio), int(held.sum())


def m_step_lambda(data, phi, lam):
    """Closed-form profile update lam_kj = sum_i phi_ijk x_ij / sum_i phi_ijk.

    The ratio is projected into [1e-12, 1 - 1e-12] (the same guard the
    sampler applies to its profile draws), which keeps the bound finite
    when a cell's responsibility mass sits entirely on one response; the
    projection is still the exact maximizer over that interval.  Cells
    whose responsibility mass sum_i phi_ijk is zero carry no information
    and keep their current value (with a warning).
    """
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    x_bool = data.x.astype(bool)
    lam_new, held = _m_step_lambda_core(x_bool, np.ones(data.n), phi, lam)
    if held:
        warnings.warn(
            f"{held} profile cell(s) had zero responsibility mass and were left unchanged",
            RuntimeWarning,
            stacklevel=2,
        )
    return lam_new


def _alpha_objective(alpha, s, n):
    return float(
        n * (gammaln(alpha.sum()) - gammaln(alpha).sum()) + ((alpha - 1.0) * s).sum()
    )


def _alpha_gradient(alpha, s, n):
    return n * (digamma(alpha.sum()) - digamma(alpha)) + s


def _alpha_hessian(alpha, n):
    k = alpha.size
    return n * (trigamma(alpha.sum()) * np.ones((k, k)) - np.diag(trigamma(alpha)))


def _newton_alpha(alpha, s, n, tol, max_iter):
    """Maximize the alpha part of the bound by damped Newton steps.

    The Hessian is diagonal plus a constant rank-one term, so each solve is
    two vector operations.  Steps are halved until alpha stays positive and
    the objective does not drop (a tiny absolute slack absorbs rounding).
    """
    alpha = np.array(alpha, dtype=float, copy=True)
    for _ in range(max_iter):
        grad = _alpha_gradient(alpha, s, n)
        if np.abs(grad).max() < tol:
            break
        q = -n * trigamma(alpha)
        c = n * trigamma(alpha.sum())
        gq = grad / q
        step = gq - (gq.sum() / (1.0 / c + (1.0 / q).sum())) / q
        f0 = _alpha_objective(alpha, s, n)
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = alpha - t * step
            if np.all(cand > 0.0):
                f1 = _alpha_objective(cand, s, n)
                if np.isfinite(f1) and f1 >= f0 - 1e-9:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
        alpha = cand
    return alpha


def m_step_alpha(gamma, alpha, tol=1e-8, max_iter=100):
    """Newton update of the Dirichlet parameter from the current gamma.

    Gradient component k is N (psi(sum alpha) - psi(alpha_k)) plus
    sum_i (psi(gamma_ik) - psi(sum_k gamma_ik)); iteration stops when its
    max-abs entry is below tol or after max_iter steps.
    """
    gamma = np.asarray(gamma, dtype=float)
    dg = digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]
    return _newton_alpha(np.asarray(alpha, dtype=float), dg.sum(axis=0), gamma.shape[0], tol, max_iter)


def _bound_rows(x_bool, lam, alpha, gamma, phi):
    """Per-row contribution to the evidence lower bound."""
    log_b = _log_item_terms(x_bool, lam)
    dg = digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]
    alpha_part = float(gammaln(alpha.sum()) - gammaln(alpha).sum()) + (alpha - 1.0) @ dg.T
    with np.errstate(invalid="ignore", divide="ignore"):
        mid = np.where(phi > 0.0, phi * (dg[:, None, :] + log_b), 0.0).sum(axis=(1, 2))
        mult_entropy = -np.where(phi > 0.0, phi * np.log(phi), 0.0).sum(axis=(1, 2))
    dir_entropy = (
        -gammaln(gamma.sum(axis=1))
        + gammaln(gamma).sum(axis=1)
        - ((gamma - 1.0) * dg).sum(axis=1)
    )
    return alpha_part + mid + mult_entropy + dir_entropy


def lower_bound(data, lam, alpha, gamma, phi):
    """Evidence lower bound on the log-likelihood at the given state.

    With K=1 the approximation is exact and this equals the independence
    log-likelihood.  Raises if any individual's contribution is not finite.
    """
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    per = _bound_rows(data.x.astype(bool), lam, np.asarray(alpha, dtype=float), gamma, phi)
    bad = np.flatnonzero(~np.isfinite(per))
    if bad.size:
        raise ValueError(f"lower bound is not finite for individual {int(bad[0])}")
    return float(per.sum())


def _initial_fit_point(data, k, init, seed, init_restarts, inverse):
    """Starting (lambda, alpha, pattern-level gamma or None) for fit_vem.

    Passing a previous VemFit or VariationalState resumes from its free
    parameters, so refitting from a converged solution stays put.
    """
    if isinstance(init, VemFit):
        init = init.state
    if isinstance(init, VariationalState):
        params = init.params
        if params.k != k or params.j != data.j or init.gamma.shape != (data.n, k):
            raise ValueError("init state shape does not match data/config")
        first_rows = np.unique(inverse, return_index=True)[1]
        return params.lam.copy(), params.alpha, init.gamma[first_rows].copy()
    if isinstance(init, GomParams):
        if init.k != k or init.j != data.j:
            raise ValueError("init params shape does not match data/config")
        return init.lam.copy(), init.alpha, None
    if init == "random":
        rng = substream(seed)
        lam = rng.uniform(0.05, 0.95, size=(k, data.j))
    elif init == "latent-class":
        fit = fit_latent_class(data, k, restarts=init_restarts, rng=substream(seed))
        lam = np.clip(fit.lam, 1e-9, 1.0 - 1e-9)
    else:
        raise ValueError(
            "init must be 'latent-class', 'random', a GomParams, or a previous fit/state"
        )
    return lam, np.full(k, 0.2), None


def fit_vem(
    data,
    k,
    init="latent-class",
    seed=0,
    bound_tol=1e-6,
    max_outer=1000,
    inner_tol=1e-8,
    max_inner=500,
    init_restarts=10,
    alpha_tol=1e-8,
    alpha_max_iter=100,
):
    """Alternate the variational E step with the two M steps to convergence.

    Stops when one outer iteration improves the bound by less than
    ``bound_tol`` (absolute) or after ``max_outer`` iterations.  A bound
    decrease beyond 1e-8 raises, since the updates can only increase it.
    ``init`` may be "latent-class", "random", a GomParams, or a previous
    VemFit/VariationalState to resume from.
    """
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    if k < 1:
        raise ValueError("k must be >= 1")
    patterns, inverse, counts = np.unique(
        data.x, axis=0, return_inverse=True, return_counts=True
    )
    xp = patterns.astype(bool)
    w = counts.astype(float)
    inverse = inverse.ravel()
    n = float(data.n)

    lam, alpha, gamma_start = _initial_fit_point(data, k, init, seed, init_restarts, inverse)
    trace = []
    cap_events = 0
    hold_events = 0
    converged = False
    bound_prev = -np.inf
    iterations = 0
    for iterations in range(1, max_outer + 1):
        if gamma_start is None:
            gamma_start = np.broadcast_to(alpha + data.j / k, (xp.shape[0], k))
        gamma_p, phi_p, n_left = _e_step_core(xp, lam, alpha, gamma_start, inner_tol, max_inner)
        cap_events += n_left
        lam, held = _m_step_lambda_core(xp, w, phi_p, lam)
        hold_events += held
        dg = digamma(gamma_p) - digamma(gamma_p.sum(axis=1))[:, None]
        alpha = _newton_alpha(alpha, w @ dg, n, alpha_tol, alpha_max_iter)
        per = _bound_rows(xp, lam, alpha, gamma_p, phi_p)
        bad = np.flatnonzero(~np.isfinite(per))
        if bad.size:
            row = int(np.flatnonzero(inverse == bad[0])[0])
            raise ValueError(f"lower bound is not finite for individual {row}")
        bound = float(w @ per)
        trace.append(bound)
        if bound < bound_prev - 1e-8:
            raise NumericalAbortError(
                "variational lower bound decreased, which the updates cannot do",
                dump={
                    "iteration": iterations,
                    "bound": bound,
                    "previous": bound_prev,
                    "alpha": [float(v) for v in alpha],
                },
            )
        gamma_start = gamma_p
        if bound - bound_prev < bound_tol:
            # The warm-started inner solves can track a poor basin of the
            # (multimodal) inner problem.  Before accepting convergence,
            # re-solve from the canonical start; if that is materially
            # better, adopt it and keep iterating.
            gamma_c, phi_c, _ = _e_step_core(
                xp, lam, alpha, np.broadcast_to(alpha + data.j / k, (xp.shape[0], k)),
                inner_tol, max_inner,
            )
            if float(w @ _bound_rows(xp, lam, alpha, gamma_c, phi_c)) > bound + bound_tol:
                gamma_start = gamma_c
            else:
                converged = True
                break
        bound_prev = bound
    if cap_events:
        warnings.warn(
            f"inner fixed-point iteration hit the {max_inner}-step cap "
            f"{cap_events} time(s) across the fit",
            RuntimeWarning,
            stacklevel=2,
        )
    params = GomParams.from_alpha(lam, alpha)
    state = VariationalState(
        gamma=gamma_p[inverse],
        phi=phi_p[inverse],
        lower_bound=float(trace[-1]),
        params=params,
    )
    return VemFit(
        params=params,
        state=state,
        bound_trace=np.asarray(trace),
        converged=converged,
        iterations=iterations,
        e_step_cap_events=cap_events,
        lambda_hold_events=hold_events,
    )
