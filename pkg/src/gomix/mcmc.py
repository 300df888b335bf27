"""Gibbs sampler with data augmentation for the partial-membership model.

Each sweep updates, in a fixed order, the per-item profile assignments z,
the profile response probabilities lambda, the membership vectors g, and
then the two Dirichlet hyperparameters: the spread alpha0 through a
Gamma-proposal Metropolis-Hastings move and the proportions xi through a
Dirichlet-proposal move.  The update order is fixed for reproducibility;
all accept ratios are computed in log space.

The same sweep code drives the extended two-compartment variant (see
``extended``), which restricts updates to the individuals currently
assigned to the membership compartment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .data import Dataset
from .latent_class import fit_latent_class
from .model import GomParams
from .rngtools import dirichlet_logspace, substream

__all__ = [
    "ChainConfig",
    "AugmentedState",
    "ChainOutput",
    "NumericalAbortError",
    "impute_z",
    "sample_lambda",
    "sample_g",
    "mh_alpha0",
    "mh_xi",
    "alpha0_log_target",
    "alpha0_log_ratio",
    "xi_log_target",
    "xi_log_ratio",
    "gibbs_sweep",
    "init_from_latent_class",
    "run_chain",
    "posterior_summary",
    "PosteriorSummary",
    "loglik_given_g",
]

LAMBDA_CLAMP = 1e-12
XI_PROPOSAL_FLOOR = 1e-8


class NumericalAbortError(RuntimeError):
    """Raised when a chain hits a non-finite quantity it cannot recover from.

    Carries a JSON-serializable snapshot of the chain state for post-mortem
    dumps.
    """

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass
class ChainConfig:
    """Sampler settings.

    ``iterations`` counts post-burn-in sweeps; every ``thin``-th of those is
    kept, so the stored draw count is iterations // thin.
    """

    k: int
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 10
    omega: float = 50.0
    eta: float = 100.0
    prior_tau: float = 2.0
    prior_beta: float = 10.0
    lambda_prior: tuple = (1.0, 1.0)
    seed: int = 0
    init: object = "latent-class"   # "latent-class" | "random" | GomParams
    alpha0_init: float | None = None
    init_restarts: int = 10
    store_g: bool = False
    store_z: bool = False
    accumulate_g_mean: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.iterations < 0 or self.burn_in < 0:
            raise ValueError("iterations and burn_in must be >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not self.omega > 1.0:
            raise ValueError("omega must be > 1")
        if not self.eta > 0.0:
            raise ValueError("eta must be > 0")
        if self.prior_tau <= 0.0 or self.prior_beta <= 0.0:
            raise ValueError("prior_tau and prior_beta must be > 0")
        a, b = self.lambda_prior
        if a <= 0.0 or b <= 0.0:
            raise ValueError("lambda_prior parameters must be > 0")
        # "custom" marks a config loaded from a trace bundle whose original
        # starting parameters were not serialized; it cannot seed a new run
        if isinstance(self.init, str) and self.init not in (
            "latent-class", "random", "custom"
        ):
            raise ValueError("init must be 'latent-class', 'random', or a GomParams")

    @property
    def kept_draws(self):
        return self.iterations // self.thin

    @property
    def alpha0_start(self):
        if self.alpha0_init is not None:
            if self.alpha0_init <= 0:
                raise ValueError("alpha0_init must be > 0")
            return float(self.alpha0_init)
        return self.prior_tau / self.prior_beta


@dataclass
class AugmentedState:
    """Everything a sweep reads and writes."""

    lam: np.ndarray          # (K, J)
    alpha0: float
    xi: np.ndarray           # (K,)
    g: np.ndarray            # (N, K)
    log_g: np.ndarray        # (N, K) exact logs of g
    z: np.ndarray            # (N, J) profile assignment per item, 0-based
    sweep_index: int = 0

    def params(self):
        return GomParams(lam=self.lam.copy(), alpha0=float(self.alpha0), xi=self.xi.copy())


@dataclass
class ChainOutput:
    """Kept draws plus run-level bookkeeping.  Immutable by convention."""

    config: ChainConfig
    lam: np.ndarray              # (S, K, J)
    alpha0: np.ndarray           # (S,)
    xi: np.ndarray               # (S, K)
    loglik: np.ndarray           # (S,) sum over active individuals
    accepted_alpha0: np.ndarray  # (S,) flag of the kept sweep's move
    accepted_xi: np.ndarray      # (S,)
    accept_rate_alpha0: float
    accept_rate_xi: float
    kept_sweeps: np.ndarray      # (S,) absolute sweep numbers (1-based)
    init_params: GomParams
    final_state: AugmentedState
    g_mean: np.ndarray | None = None
    g_draws: np.ndarray | None = None
    z_draws: np.ndarray | None = None
    theta1: np.ndarray | None = None     # extended runs only
    n2: np.ndarray | None = None
    loglik_mixture: np.ndarray | None = None
    guard_events: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.alpha0.shape[0]

    @property
    def is_extended(self):
        return self.theta1 is not None


# ---------------------------------------------------------------------------
# Conditional updates
# ---------------------------------------------------------------------------

def impute_z(rng, x_bool, g, lam):
    """Draw profile assignments z_ij from their conditional distribution.

    p(z_ij = k) is proportional to g_ik * lam[k,j] when x_ij = 1 and to
    g_ik * (1 - lam[k,j]) otherwise.  Rows whose unnormalized weights are
    all zero (possible when lambda holds exact 0/1) fall back to sampling
    from g alone; the count of such rows is returned as a guard event.

    Returns (z, n_guard) with z of shape (N, J), entries in 0..K-1.
    """
    n, j = x_bool.shape
    k = lam.shape[0]
    b = np.where(x_bool[:, :, None], lam.T[None, :, :], (1.0 - lam).T[None, :, :])
    w = g[:, None, :] * b  # (N, J, K)
    cum = np.cumsum(w, axis=2)
    tot = cum[:, :, -1]
    bad = tot <= 0.0
    n_guard = int(bad.sum())
    if n_guard:
        gcum = np.cumsum(g, axis=1)
        bi, bj = np.nonzero(bad)
        cum[bi, bj, :] = gcum[bi]
        tot[bi, bj] = gcum[bi, -1]
    u = rng.random((n, j)) * tot
    z = (u[:, :, None] >= cum).sum(axis=2)
    np.clip(z, 0, k - 1, out=z)
    return z.astype(np.int16), n_guard


def sample_lambda(rng, x, z, k, a=1.0, b=1.0):
    """Draw lambda[k, j] from its Beta conditional given assignments z.

    Shape parameters are a + (positives assigned to k on item j) and
    b + (negatives assigned to k on item j).  Draws are clamped into
    [1e-12, 1 - 1e-12] to keep downstream logarithms finite; the clamp
    count is returned.
    """
    n, j = x.shape
    flat = z.astype(np.int64) * j + np.arange(j, dtype=np.int64)[None, :]
    tot = np.bincount(flat.ravel(), minlength=k * j).reshape(k, j)
    pos = np.bincount(flat.ravel(), weights=x.ravel().astype(float), minlength=k * j).reshape(k, j)
    lam = rng.beta(a + pos, b + (tot - pos))
    clamped = int(np.sum((lam < LAMBDA_CLAMP) | (lam > 1.0 - LAMBDA_CLAMP)))
    np.clip(lam, LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP, out=lam)
    return lam, clamped


def sample_g(rng, alpha, z, k):
    """Draw membership vectors from Dirichlet(alpha + assignment counts).

    Returns (g, log_g); the logs are exact even when entries underflow.
    """
    n = z.shape[0]
    if z.shape[1] == 0:
        shapes = np.broadcast_to(alpha, (n, k)).copy()
    else:
        offsets = (np.arange(n, dtype=np.int64) * k)[:, None] + z
        counts = np.bincount(offsets.ravel(), minlength=n * k).reshape(n, k)
        shapes = alpha[None, :] + counts
    return dirichlet_logspace(rng, shapes)


def loglik_given_g(x_bool, g, lam):
    """Joint log-likelihood of the responses given memberships: the
    deviance focus used by the selection criteria."""
    mix = g @ lam
    with np.errstate(divide="ignore"):
        terms = np.where(x_bool, np.log(mix), np.log1p(-mix))
    return float(terms.sum())


# ---------------------------------------------------------------------------
# Metropolis-Hastings moves for (alpha0, xi)
# ---------------------------------------------------------------------------

def alpha0_log_target(alpha0, xi, sum_log_g, n, tau, beta):
    """Unnormalized log conditional density of alpha0.

    ``sum_log_g`` is the vector sum_i log g_ik over the active individuals;
    ``n`` is their count.
    """
    if alpha0 <= 0:
        return -np.inf
    return (
        (tau - 1.0) * math.log(alpha0)
        - beta * alpha0
        + alpha0 * float(np.dot(xi, sum_log_g))
        + n * (math.lgamma(alpha0) - float(gammaln(xi * alpha0).sum()))
    )


def alpha0_log_ratio(current, proposed, xi, sum_log_g, n, tau, beta, omega):
    """Log MH ratio for the Gamma-proposal alpha0 move (target ratio times
    the proposal correction)."""
    delta = alpha0_log_target(proposed, xi, sum_log_g, n, tau, beta) - alpha0_log_target(
        current, xi, sum_log_g, n, tau, beta
    )
    adjust = (2.0 * omega - 1.0) * math.log(current / proposed) - omega * (
        current / proposed - proposed / current
    )
    return delta + adjust


def mh_alpha0(rng, alpha0, xi, sum_log_g, n, tau, beta, omega):
    """One MH update of alpha0.  Returns (value, accepted, underflowed)."""
    proposed = float(rng.gamma(omega, alpha0 / omega))
    if not np.isfinite(proposed) or proposed <= 0.0:
        return alpha0, False, True
    log_r = alpha0_log_ratio(alpha0, proposed, xi, sum_log_g, n, tau, beta, omega)
    if np.isnan(log_r):
        return alpha0, False, True
    if math.log(max(rng.random(), 1e-300)) < log_r:
        return proposed, True, False
    return alpha0, False, False


def xi_log_target(xi, alpha0, sum_log_g, n):
    """Unnormalized log conditional density of xi (terms constant in xi,
    such as the Gamma(alpha0) power, are dropped)."""
    if np.any(xi <= 0.0):
        return -np.inf
    return alpha0 * float(np.dot(xi, sum_log_g)) - n * float(gammaln(xi * alpha0).sum())


def _xi_concentration(xi, eta, k):
    return np.maximum(eta * k * xi, XI_PROPOSAL_FLOOR)


def xi_log_ratio(current, proposed, alpha0, sum_log_g, n, eta):
    """Log MH ratio for the Dirichlet-proposal xi move.

    The proposal centered at w has concentration eta*K*w, so the Hastings
    correction uses Dirichlet densities with those parameters in both
    directions.
    """
    k = current.size
    conc_cur = _xi_concentration(current, eta, k)
    conc_prop = _xi_concentration(proposed, eta, k)
    delta = xi_log_target(proposed, alpha0, sum_log_g, n) - xi_log_target(
        current, alpha0, sum_log_g, n
    )
    correction = float(
        (gammaln(conc_cur) - gammaln(conc_prop)).sum()
        + ((conc_prop - 1.0) * np.log(current)).sum()
        - ((conc_cur - 1.0) * np.log(proposed)).sum()
    )
    return delta + correction


def mh_xi(rng, xi, alpha0, sum_log_g, n, eta):
    """One MH update of xi.  Returns (value, accepted, floor_events)."""
    k = xi.size
    conc = eta * k * xi
    floored = int(np.sum(conc < XI_PROPOSAL_FLOOR))
    proposed, _ = dirichlet_logspace(rng, np.maximum(conc, XI_PROPOSAL_FLOOR))
    if np.any(proposed <= 1e-12):
        # A numerically zero coordinate would make the reverse proposal
        # density undefined; treat as a rejection.
        return xi, False, floored + 1
    log_r = xi_log_ratio(xi, proposed, alpha0, sum_log_g, n, eta)
    if np.isnan(log_r):
        return xi, False, floored + 1
    if math.log(max(rng.random(), 1e-300)) < log_r:
        return proposed, True, floored
    return xi, False, floored


# ---------------------------------------------------------------------------
# Sweep and chain orchestration
# ---------------------------------------------------------------------------

def gibbs_sweep(rng, state, x_bool, config, rows=None):
    """One full update sweep over the active individuals.

    ``rows`` restricts the sweep to a subset of individuals (used by the
    extended model); hyperparameter conditionals then see only those rows.
    Updates ``state`` in place and returns a dict of acceptance flags and
    guard-event counts.
    """
    if rows is None:
        xa = x_bool
    else:
        xa = x_bool[rows]
    n_active = xa.shape[0]
    k = config.k

    z_active, z_guard = impute_z(rng, xa, state.g if rows is None else state.g[rows], state.lam)
    if rows is None:
        state.z = z_active
    else:
        state.z[rows] = z_active

    a, b = config.lambda_prior
    state.lam, lam_clamped = sample_lambda(rng, xa, z_active, k, a, b)

    alpha = state.alpha0 * state.xi
    g_active, log_g_active = sample_g(rng, alpha, z_active, k)
    if rows is None:
        state.g, state.log_g = g_active, log_g_active
    else:
        state.g[rows] = g_active
        state.log_g[rows] = log_g_active

    slg = log_g_active.sum(axis=0)
    state.alpha0, acc_a, a0_underflow = mh_alpha0(
        rng, state.alpha0, state.xi, slg, n_active, config.prior_tau, config.prior_beta, config.omega
    )
    state.xi, acc_x, xi_floored = mh_xi(rng, state.xi, state.alpha0, slg, n_active, config.eta)

    state.sweep_index += 1
    return {
        "accept_alpha0": acc_a,
        "accept_xi": acc_x,
        "z_weight_underflow": z_guard,
        "lambda_clamped": lam_clamped,
        "alpha0_underflow": int(a0_underflow),
        "xi_floor": xi_floored,
    }


def init_from_latent_class(data, k, seed=0, restarts=10, alpha0=None):
    """Starting values from a latent-class EM fit.

    lambda starts at the class profiles, xi at the class weights, g at the
    per-row responsibilities, and z is drawn from its conditional given
    those.  alpha0 defaults to 0.2 unless supplied (for example the
    posterior mean from a previous smaller-K fit).
    """
    rng = substream(seed)
    fit = fit_latent_class(data, k, restarts=restarts, rng=rng)
    weights = np.maximum(fit.weights, 1e-9)
    weights = weights / weights.sum()
    alpha0 = 0.2 if alpha0 is None else float(alpha0)
    params = GomParams(lam=fit.lam.copy(), alpha0=alpha0, xi=weights)
    g = fit.responsibilities
    x_bool = (data.x if isinstance(data, Dataset) else np.asarray(data)).astype(bool)
    z, _ = impute_z(rng, x_bool, g, np.clip(fit.lam, LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP))
    return params, g, z


def _initial_state(data, config, rng):
    n, j = data.x.shape
    k = config.k
    init = config.init
    if isinstance(init, GomParams):
        if init.k != k or init.j != j:
            raise ValueError("init params shape does not match data/config")
        lam = np.clip(init.lam, LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP)
        alpha0 = float(init.alpha0)
        xi = init.xi.copy()
        g, log_g = dirichlet_logspace(rng, np.broadcast_to(alpha0 * xi, (n, k)).copy())
        z, _ = impute_z(rng, data.x.astype(bool), g, lam)
        params = init
    elif init == "random":
        lam = rng.uniform(0.05, 0.95, size=(k, j))
        xi_raw, _ = dirichlet_logspace(rng, np.ones(k))
        xi = np.maximum(xi_raw, 0.01)
        xi = xi / xi.sum()
        alpha0 = config.alpha0_start
        g, log_g = dirichlet_logspace(rng, np.broadcast_to(alpha0 * xi, (n, k)).copy())
        z, _ = impute_z(rng, data.x.astype(bool), g, lam)
        params = GomParams(lam=lam.copy(), alpha0=alpha0, xi=xi.copy())
    elif init == "custom":
        raise ValueError(
            "this config came from a trace bundle and its custom starting "
            "parameters were not serialized; pass init= explicitly to rerun"
        )
    else:
        fit = fit_latent_class(data, k, restarts=config.init_restarts, rng=rng)
        weights = np.maximum(fit.weights, 1e-9)
        weights = weights / weights.sum()
        alpha0 = config.alpha0_start
        lam = np.clip(fit.lam, LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP)
        xi = weights
        g = fit.responsibilities.copy()
        with np.errstate(divide="ignore"):
            log_g = np.log(np.clip(g, 1e-300, None))
        z, _ = impute_z(rng, data.x.astype(bool), g, lam)
        params = GomParams(lam=lam.copy(), alpha0=alpha0, xi=xi.copy())
    state = AugmentedState(
        lam=lam, alpha0=alpha0, xi=np.asarray(xi, dtype=float), g=g, log_g=log_g, z=z
    )
    return state, params


def _state_dump(state, sweep, extra=None):
    dump = {
        "sweep": int(sweep),
        "alpha0": float(state.alpha0),
        "xi": [float(v) for v in state.xi],
        "lam_min": float(state.lam.min()),
        "lam_max": float(state.lam.max()),
        "g_nonfinite": int(np.size(state.g) - np.isfinite(state.g).sum()),
    }
    if extra:
        dump.update(extra)
    return dump


def _run_loop(data, config, hooks=None):
    """Shared chain driver.  ``hooks`` (when given) supplies the compartment
    logic of the extended model: it picks the active rows before each sweep,
    updates the compartment weights after it, and contributes extra kept-draw
    columns."""
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    x_bool = data.x.astype(bool)
    n, j = x_bool.shape
    k = config.k
    rng = substream(config.seed)
    state, init_params = _initial_state(data, config, rng)
    if hooks is not None:
        hooks.bind(state, x_bool)

    s_total = config.kept_draws
    lam_tr = np.empty((s_total, k, j))
    a0_tr = np.empty(s_total)
    xi_tr = np.empty((s_total, k))
    ll_tr = np.empty(s_total)
    acc_a_tr = np.zeros(s_total, dtype=np.uint8)
    acc_x_tr = np.zeros(s_total, dtype=np.uint8)
    kept_sweeps = np.zeros(s_total, dtype=np.int64)
    g_mean = np.zeros((n, k)) if (config.accumulate_g_mean and s_total) else None
    g_draws = np.empty((s_total, n, k)) if config.store_g else None
    z_draws = np.empty((s_total, n, j), dtype=np.int16) if config.store_z else None
    theta_tr = np.empty(s_total) if hooks is not None else None
    n2_tr = np.zeros(s_total, dtype=np.int64) if hooks is not None else None
    llmix_tr = np.empty(s_total) if hooks is not None else None

    guards = {"z_weight_underflow": 0, "lambda_clamped": 0, "alpha0_underflow": 0, "xi_floor": 0}
    acc_a_count = 0
    acc_x_count = 0
    total = config.burn_in + config.iterations

    for sweep in range(1, total + 1):
        rows = hooks.pre_sweep(rng) if hooks is not None else None
        info = gibbs_sweep(rng, state, x_bool, config, rows)
        if hooks is not None:
            hooks.post_sweep()
        for key in guards:
            guards[key] += info[key]
        if sweep <= config.burn_in:
            continue
        acc_a_count += info["accept_alpha0"]
        acc_x_count += info["accept_xi"]
        pos = sweep - config.burn_in
        if pos % config.thin != 0:
            continue
        s = pos // config.thin - 1
        lam_tr[s] = state.lam
        a0_tr[s] = state.alpha0
        xi_tr[s] = state.xi
        sel = rows if rows is not None else slice(None)
        ll = loglik_given_g(x_bool[sel], state.g[sel], state.lam)
        if not np.isfinite(ll):
            raise NumericalAbortError(
                "non-finite log-likelihood at a kept sweep",
                dump=_state_dump(state, sweep, {"loglik": repr(ll)}),
            )
        ll_tr[s] = ll
        acc_a_tr[s] = info["accept_alpha0"]
        acc_x_tr[s] = info["accept_xi"]
        kept_sweeps[s] = sweep
        if hooks is not None:
            extras = hooks.kept_extras(ll)
            theta_tr[s] = extras["theta1"]
            n2_tr[s] = extras["n2"]
            llmix_tr[s] = extras["loglik_mixture"]
        if g_mean is not None:
            g_mean += state.g
        if g_draws is not None:
            g_draws[s] = state.g
        if z_draws is not None:
            z_draws[s] = state.z

    if g_mean is not None:
        g_mean /= s_total
    nan = float("nan")
    return ChainOutput(
        config=config,
        lam=lam_tr,
        alpha0=a0_tr,
        xi=xi_tr,
        loglik=ll_tr,
        accepted_alpha0=acc_a_tr,
        accepted_xi=acc_x_tr,
        accept_rate_alpha0=acc_a_count / config.iterations if config.iterations else nan,
        accept_rate_xi=acc_x_count / config.iterations if config.iterations else nan,
        kept_sweeps=kept_sweeps,
        init_params=init_params,
        final_state=state,
        g_mean=g_mean,
        g_draws=g_draws,
        z_draws=z_draws,
        theta1=theta_tr,
        n2=n2_tr,
        loglik_mixture=llmix_tr,
        guard_events=guards,
    )


def run_chain(data, config):
    """Run the standard sampler.  Deterministic given config.seed."""
    return _run_loop(data, config, hooks=None)


def posterior_summary(output):
    """Means and sample SDs of the kept draws, per parameter."""
    if output.n_draws < 2:
        raise ValueError("need at least 2 kept draws for a posterior summary")
    theta1_mean = theta1_sd = None
    if output.theta1 is not None:
        theta1_mean = float(output.theta1.mean())
        theta1_sd = float(output.theta1.std(ddof=1))
    return PosteriorSummary(
        k=output.config.k,
        j=output.lam.shape[2],
        n_draws=output.n_draws,
        lam_mean=output.lam.mean(axis=0),
        lam_sd=output.lam.std(axis=0, ddof=1),
        alpha0_mean=float(output.alpha0.mean()),
        alpha0_sd=float(output.alpha0.std(ddof=1)),
        xi_mean=output.xi.mean(axis=0),
        xi_sd=output.xi.std(axis=0, ddof=1),
        theta1_mean=theta1_mean,
        theta1_sd=theta1_sd,
        accept_rate_alpha0=output.accept_rate_alpha0,
        accept_rate_xi=output.accept_rate_xi,
    )


@dataclass
class PosteriorSummary:
    k: int
    j: int
    n_draws: int
    lam_mean: np.ndarray
    lam_sd: np.ndarray
    alpha0_mean: float
    alpha0_sd: float
    xi_mean: np.ndarray
    xi_sd: np.ndarray
    theta1_mean: float | None
    theta1_sd: float | None
    accept_rate_alpha0: float
    accept_rate_xi: float

    def params(self):
        """Posterior-mean parameters as a GomParams."""
        xi = np.maximum(self.xi_mean, 1e-12)
        return GomParams(lam=np.clip(self.lam_mean, 0.0, 1.0), alpha0=self.alpha0_mean, xi=xi / xi.sum())
