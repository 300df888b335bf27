"""Convergence and identifiability diagnostics for sampler output.

Univariate convergence is checked per scalar trace with Geweke z-scores and
an effective sample size; identifiability is checked by asking whether every
pair of extreme profiles has at least one item whose response probabilities
sit well apart relative to their posterior spread.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field

__all__ = [
    "geweke_z",
    "effective_sample_size",
    "ProfileSeparation",
    "profile_separation",
    "DiagnosticsReport",
    "diagnose_chain",
]

_MIN_TRACE = 100
_BATCHES = 20
SEPARATION_THRESHOLD = 2.0


def _as_trace(trace):
    x = np.asarray(trace, dtype=float).ravel()
    if x.size < _MIN_TRACE:
        raise ValueError(f"trace too short for diagnostics: {x.size} < {_MIN_TRACE}")
    if not np.all(np.isfinite(x)):
        raise ValueError("trace contains non-finite values")
    # min == max is an exact constancy test; var() can pick up summation
    # round-off on a constant trace and then pass a meaningless z downstream
    if x.min() == x.max():
        raise ValueError("degenerate trace: all values are identical")
    return x


def _batch_means_variance(window):
    """Spectral variance of the window mean estimated by batch means.

    Splits the window into up to 20 equal batches (fewer when the window is
    shorter than 20 points) and scales the batch-mean variance back up by the
    batch length.  Returns the long-run variance estimate, i.e. the quantity
    divided by the window length to get the variance of the window mean.
    """
    n = window.size
    n_batches = min(_BATCHES, n)
    m = n // n_batches
    used = window[: n_batches * m].reshape(n_batches, m)
    means = used.mean(axis=1)
    if n_batches < 2:
        raise ValueError("window too short to estimate a batch-means variance")
    return m * means.var(ddof=1)


def geweke_z(trace, frac_a=0.1, frac_b=0.5):
    """Geweke convergence z-score comparing early and late window means.

    The first ``frac_a`` of the trace is compared against the last
    ``frac_b``; the variance of each window mean comes from the batch-means
    spectral estimate.  The score is invariant under affine rescaling of the
    trace.  A degenerate (constant) window raises instead of returning 0.
    """
    x = _as_trace(trace)
    if not (0.0 < frac_a < 1.0 and 0.0 < frac_b < 1.0 and frac_a + frac_b <= 1.0):
        raise ValueError("window fractions must be positive and sum to at most 1")
    n = x.size
    n_a = int(np.floor(frac_a * n))
    n_b = int(np.floor(frac_b * n))
    if n_a < 2 or n_b < 2:
        raise ValueError("windows too short; provide a longer trace")
    a = x[:n_a]
    b = x[n - n_b:]
    if a.min() == a.max() or b.min() == b.max():
        raise ValueError("degenerate trace: a comparison window has zero variance")
    sv_a = _batch_means_variance(a)
    sv_b = _batch_means_variance(b)
    denom = np.sqrt(sv_a / n_a + sv_b / n_b)
    if denom == 0.0:
        raise ValueError("degenerate trace: zero spectral variance in both windows")
    return float((a.mean() - b.mean()) / denom)


def _autocovariances(x):
    """All-lag autocovariances (divisor n) via the FFT convolution trick."""
    n = x.size
    xc = x - x.mean()
    m = 1 << int(2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n]
    return acov / n


def effective_sample_size(trace):
    """ESS with Geyer's initial-positive-sequence truncation.

    Sums autocovariances in adjacent-lag pairs and stops at the first pair
    with a non-positive sum, which keeps the long-run variance estimate
    positive.  The result is clamped to the trace length: this estimator is
    meant for positively correlated sampler output, not for certifying
    super-efficiency.
    """
    x = _as_trace(trace)
    acov = _autocovariances(x)
    g0 = acov[0]
    if g0 <= 0.0:
        raise ValueError("degenerate trace: zero variance")
    n = x.size
    # Gamma_m = gamma_{2m} + gamma_{2m+1}; Gamma_0 includes gamma_0.
    total = 0.0
    m = 0
    while 2 * m + 1 < n:
        pair = acov[2 * m] + acov[2 * m + 1]
        if pair <= 0.0:
            break
        total += pair
        m += 1
    sigma2 = 2.0 * total - g0
    if sigma2 <= 0.0:
        return float(n)
    return float(min(n, n * g0 / sigma2))


@dataclass(frozen=True)
class ProfileSeparation:
    """Pairwise best-item standardized gaps between extreme profiles.

    ``matrix[k, k2]`` is the largest standardized mean difference across
    items; a pair counts as separated when that gap reaches 2.
    """

    matrix: np.ndarray          # (K, K), zero diagonal, symmetric
    separated_pairs: np.ndarray  # (K, K) bool
    min_separation: float        # smallest off-diagonal gap (inf when K = 1)
    separated: bool              # every pair separated


def profile_separation(lam_mean, lam_sd=None):
    """Standardized separation of every profile pair.

    Accepts either posterior mean and SD arrays of shape (K, J), or a single
    (S, K, J) array of draws from which both are computed.  The gap for a
    pair is max over items of |mean difference| / sqrt(sd^2 + sd^2); an item
    with zero spread in both profiles counts as infinitely separated when
    the means differ and as zero when they agree.
    """
    lam_mean = np.asarray(lam_mean, dtype=float)
    if lam_sd is None:
        if lam_mean.ndim != 3:
            raise ValueError(
                "posterior SDs are required; pass lam_sd or a (draws, K, J) array"
            )
        draws = lam_mean
        lam_sd = draws.std(axis=0)
        lam_mean = draws.mean(axis=0)
    else:
        lam_sd = np.asarray(lam_sd, dtype=float)
    if lam_mean.shape != lam_sd.shape or lam_mean.ndim != 2:
        raise ValueError("means and SDs must both have shape (K, J)")
    k = lam_mean.shape[0]
    diff = np.abs(lam_mean[:, None, :] - lam_mean[None, :, :])
    pooled = np.sqrt(lam_sd[:, None, :] ** 2 + lam_sd[None, :, :] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        gaps = diff / pooled
    gaps = np.where(diff == 0.0, 0.0, gaps)   # 0/0 means no gap at all
    matrix = gaps.max(axis=2)
    np.fill_diagonal(matrix, 0.0)
    flags = matrix >= SEPARATION_THRESHOLD
    np.fill_diagonal(flags, True)
    off = ~np.eye(k, dtype=bool)
    min_sep = float(matrix[off].min()) if k > 1 else float("inf")
    return ProfileSeparation(
        matrix=matrix,
        separated_pairs=flags,
        min_separation=min_sep,
        separated=bool(flags.all()),
    )


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-parameter convergence table plus the separation verdict."""

    parameters: dict            # name -> {"geweke_z": float|None, "ess": float|None, "status": str}
    separation: ProfileSeparation | None
    warnings: list = field(default_factory=list)
    n_draws: int = 0

    def worst_z(self):
        zs = [
            abs(rec["geweke_z"])
            for rec in self.parameters.values()
            if rec["geweke_z"] is not None
        ]
        return max(zs) if zs else None


def _z_status(z):
    az = abs(z)
    if az < 2.0:
        return "pass"
    if az < 3.0:
        return "warn"
    return "fail"


def diagnose_chain(chain, include_lambda=True):
    """Convergence diagnostics for every scalar trace in a chain.

    Each trace gets a Geweke z-score (pass < 2, warn < 3, fail otherwise) and
    an effective sample size; traces too short or degenerate are recorded
    with None values and an explanatory warning instead of aborting the
    report.  Profile separation uses the retained item-probability draws.
    """
    traces = [("loglik", chain.loglik), ("alpha0", chain.alpha0)]
    k = chain.xi.shape[1]
    for kk in range(k):
        traces.append((f"xi[{kk}]", chain.xi[:, kk]))
    if chain.theta1 is not None:
        traces.append(("theta1", chain.theta1))
    if include_lambda:
        j = chain.lam.shape[2]
        for kk in range(k):
            for jj in range(j):
                traces.append((f"lambda[{kk},{jj}]", chain.lam[:, kk, jj]))

    parameters = {}
    notes = []
    for name, tr in traces:
        rec = {"geweke_z": None, "ess": None, "status": "skipped"}
        try:
            z = geweke_z(tr)
            rec["geweke_z"] = z
            rec["status"] = _z_status(z)
        except ValueError as err:
            notes.append(f"{name}: {err}")
        try:
            rec["ess"] = effective_sample_size(tr)
        except ValueError:
            pass
        parameters[name] = rec
        if rec["status"] in ("warn", "fail"):
            notes.append(
                f"{name}: geweke z {rec['geweke_z']:.2f} ({rec['status']})"
            )

    separation = None
    if k > 1:
        separation = profile_separation(chain.lam)
        if not separation.separated:
            notes.append(
                "profiles are not separated at two standard deviations; "
                f"smallest pairwise gap {separation.min_separation:.2f}"
            )
    return DiagnosticsReport(
        parameters=parameters,
        separation=separation,
        warnings=notes,
        n_draws=int(chain.n_draws),
    )
