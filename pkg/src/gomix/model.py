"""Core partial-membership model: parameters and probability computations.

The model assigns each respondent a simplex-valued membership vector g drawn
from Dirichlet(alpha0 * xi).  Given g, item j is positive with probability
sum_k g_k * lambda[k, j] and items are conditionally independent.  Summing
out a per-item profile assignment z exactly re-expresses the marginal
pattern probability as a K^J-component latent-class mixture whose class
weights pi_z are Dirichlet product moments; both routes are implemented here
and must agree, which is what the representation checks exercise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._special import log_rising_factorial
from .data import Dataset, as_pattern
from .rngtools import dirichlet, substream

__all__ = [
    "GomParams",
    "MembershipVector",
    "LatentClassification",
    "check_simplex",
    "conditional_response_prob",
    "pattern_prob_given_g",
    "dirichlet_product_moment",
    "marginal_pattern_prob_exact",
    "marginal_pattern_prob_mc",
    "latent_class_pattern_prob",
    "relative_frequencies",
    "ENUMERATION_GUARD",
]

# Largest K**J the exact latent-class expansion will enumerate.
ENUMERATION_GUARD = 10**7

SIMPLEX_TOL = 1e-12
SIMPLEX_RENORM_TOL = 1e-9


def check_simplex(w, name="weights", require_positive=False):
    """Validate a simplex vector, renormalizing tiny drift with a warning.

    Sums within 1e-12 of 1 pass through untouched; drift up to 1e-9 (for
    example from file round-trips) is renormalized with a warning; anything
    larger is rejected.
    """
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if require_positive:
        if np.any(arr <= 0.0):
            raise ValueError(f"{name} entries must be > 0")
    elif np.any(arr < 0.0):
        raise ValueError(f"{name} entries must be >= 0")
    total = arr.sum()
    err = abs(total - 1.0)
    if err <= SIMPLEX_TOL:
        return arr
    if err <= SIMPLEX_RENORM_TOL:
        warnings.warn(f"renormalizing {name}: sum off by {err:.3e}", stacklevel=2)
        return arr / total
    raise ValueError(f"{name} must sum to 1 (got {total!r})")


@dataclass(frozen=True)
class MembershipVector:
    """A point on the K-simplex: partial membership in each profile."""

    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g", check_simplex(self.g, "membership vector"))

    @property
    def k(self):
        return self.g.size


@dataclass(frozen=True)
class LatentClassification:
    """Per-item profile assignments, numbered from 1."""

    z: tuple

    def __post_init__(self):
        z = tuple(int(v) for v in self.z)
        if len(z) == 0:
            raise ValueError("classification needs at least one item")
        if any(v < 1 for v in z):
            raise ValueError("profile indices are numbered from 1")
        object.__setattr__(self, "z", z)

    @property
    def j(self):
        return len(self.z)

    def __iter__(self):
        return iter(self.z)


@dataclass(frozen=True)
class GomParams:
    """Profile response probabilities plus the membership hyperparameters.

    Attributes
    ----------
    lam : (K, J) ndarray
        lam[k, j] is the probability that a full member of profile k answers
        item j positively.
    alpha0 : float
        Spread of the membership distribution (smaller = closer to the
        simplex vertices).
    xi : (K,) ndarray
        Relative profile proportions; a strictly positive simplex point.
    """

    lam: np.ndarray
    alpha0: float
    xi: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 2 or lam.shape[0] < 1 or lam.shape[1] < 1:
            raise ValueError("lam must be a K x J matrix")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0.0) or np.any(lam > 1.0):
            raise ValueError("lam entries must lie in [0, 1]")
        xi = check_simplex(self.xi, "xi", require_positive=True)
        if xi.size != lam.shape[0]:
            raise ValueError("xi length must equal the profile count")
        alpha0 = float(self.alpha0)
        if not np.isfinite(alpha0) or alpha0 <= 0.0:
            raise ValueError("alpha0 must be finite and > 0")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "alpha0", alpha0)

    @property
    def k(self):
        return self.lam.shape[0]

    @property
    def j(self):
        return self.lam.shape[1]

    @property
    def alpha(self):
        """Full Dirichlet parameter vector alpha0 * xi."""
        return self.alpha0 * self.xi

    @classmethod
    def from_alpha(cls, lam, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if np.any(alpha <= 0.0) or not np.all(np.isfinite(alpha)):
            raise ValueError("alpha entries must be finite and > 0")
        total = alpha.sum()
        return cls(lam=lam, alpha0=float(total), xi=alpha / total)


def _as_membership(g, k):
    arr = g.g if isinstance(g, MembershipVector) else check_simplex(g, "membership vector")
    if arr.size != k:
        raise ValueError(f"membership vector has {arr.size} entries, expected {k}")
    return arr


def conditional_response_prob(params, g, item=None):
    """Positive-response probability sum_k g_k lam[k, j].

    Parameters
    ----------
    params : GomParams
    g : membership vector (simplex of length K)
    item : int, optional
        Item number from 1 to J.  When omitted, probabilities for all J
        items are returned as a vector.
    """
    gv = _as_membership(g, params.k)
    mix = gv @ params.lam
    if item is None:
        return mix
    item = int(item)
    if not 1 <= item <= params.j:
        raise IndexError(f"item must be in 1..{params.j}")
    return float(mix[item - 1])


def pattern_prob_given_g(params, g, pattern):
    """Probability of a full response pattern for a known membership g."""
    gv = _as_membership(g, params.k)
    pat = as_pattern(pattern, params.j)
    mix = gv @ params.lam
    bits = pat.as_array().astype(bool)
    return float(np.prod(np.where(bits, mix, 1.0 - mix)))


def _classification_counts(z, k, j):
    if isinstance(z, LatentClassification):
        entries = z.z
    else:
        entries = tuple(int(v) for v in z)
    if len(entries) != j:
        raise ValueError(f"classification has {len(entries)} items, expected {j}")
    if any(not 1 <= v <= k for v in entries):
        raise ValueError(f"profile indices must be in 1..{k}")
    counts = np.zeros(k, dtype=int)
    for v in entries:
        counts[v - 1] += 1
    return counts


def dirichlet_product_moment(params, z):
    """Class weight pi_z = E[prod_j g_{z_j}] under Dirichlet(alpha0 * xi).

    Computed in closed form through rising factorials: with m_k items
    assigned to profile k,

        pi_z = [prod_k alpha_k (alpha_k+1) ... (alpha_k+m_k-1)]
               / [alpha0 (alpha0+1) ... (alpha0+J-1)].
    """
    counts = _classification_counts(z, params.k, params.j)
    return float(np.exp(_log_pi_from_counts(params.alpha, params.alpha0, counts)))


def _log_pi_from_counts(alpha, alpha0, counts):
    j = int(np.sum(counts))
    num = sum(log_rising_factorial(alpha[k], int(m)) for k, m in enumerate(counts) if m)
    return num - log_rising_factorial(alpha0, j)


def _pattern_factors(lam, pattern_bits):
    """Per-profile likelihood factor matrix b[k, j] for a fixed pattern."""
    bits = np.asarray(pattern_bits, dtype=bool)
    return np.where(bits[None, :], lam, 1.0 - lam)


def marginal_pattern_prob_exact(params, pattern):
    """Marginal pattern probability by exact K^J latent-class expansion.

    Enumerates every per-item profile assignment z, weighting each by the
    Dirichlet product moment pi_z.  Guarded at K^J <= 10^7; beyond that use
    marginal_pattern_prob_mc.
    """
    k, j = params.k, params.j
    total = k**j
    if total > ENUMERATION_GUARD:
        raise ValueError(
            f"K^J = {total} exceeds the enumeration guard ({ENUMERATION_GUARD}); "
            "use marginal_pattern_prob_mc instead"
        )
    pat = as_pattern(pattern, j)
    b = _pattern_factors(params.lam, pat.bits)
    with np.errstate(divide="ignore"):
        log_b = np.log(b)

    alpha = params.alpha
    # rise[k, m] = log of the length-m rising factorial of alpha_k.
    rise = np.zeros((k, j + 1))
    for kk in range(k):
        rise[kk, 1:] = np.cumsum(np.log(alpha[kk] + np.arange(j)))
    log_denom = log_rising_factorial(params.alpha0, j)

    radix = k ** np.arange(j, dtype=np.int64)
    cols = np.arange(j)
    prob = 0.0
    chunk = 1 << 15
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (codes[:, None] // radix[None, :]) % k
        log_prod = log_b[digits, cols[None, :]].sum(axis=1)
        log_pi = -log_denom * np.ones(codes.size)
        for kk in range(k):
            log_pi += rise[kk, (digits == kk).sum(axis=1)]
        prob += float(np.exp(log_pi + log_prod).sum())
    return prob


def marginal_pattern_prob_mc(params, pattern, draws, seed=None, rng=None):
    """Monte Carlo estimate of the marginal pattern probability.

    Averages pattern_prob_given_g over ``draws`` membership vectors sampled
    from Dirichlet(alpha0 * xi).  Returns (estimate, standard error of the
    mean); the standard error is NaN for a single draw.
    """
    draws = int(draws)
    if draws < 1:
        raise ValueError("draws must be >= 1")
    if rng is None:
        rng = substream(0 if seed is None else seed)
    pat = as_pattern(pattern, params.j)
    g = dirichlet(rng, params.alpha, size=draws)
    mix = g @ params.lam
    bits = pat.as_array().astype(bool)
    probs = np.prod(np.where(bits[None, :], mix, 1.0 - mix), axis=1)
    est = float(probs.mean())
    se = float(probs.std(ddof=1) / np.sqrt(draws)) if draws > 1 else float("nan")
    return est, se


def latent_class_pattern_prob(weights, lam, pattern):
    """Pattern probability under a plain K-class latent class model."""
    lam = np.asarray(lam, dtype=float)
    w = check_simplex(weights, "class weights")
    if w.size != lam.shape[0]:
        raise ValueError("weights length must equal the class count")
    pat = as_pattern(pattern, lam.shape[1])
    b = _pattern_factors(lam, pat.bits)
    return float(w @ np.prod(b, axis=1))


def relative_frequencies(params, data):
    """Ratio of each profile's response probability to the sample marginal.

    Entry (k, j) is lam[k, j] divided by the observed positive fraction for
    item j; values above 1 mark items a profile endorses more often than the
    population at large.
    """
    if not isinstance(data, Dataset):
        raise TypeError("data must be a Dataset")
    if data.j != params.j:
        raise ValueError("dataset and params disagree on the item count")
    marginals = data.x.mean(axis=0)
    zero = np.flatnonzero(marginals == 0.0)
    if zero.size:
        idx = int(zero[0])
        name = data.item_labels[idx] if data.item_labels else f"item {idx + 1}"
        raise ValueError(f"marginal frequency of {name} is zero; ratios undefined")
    return params.lam / marginals[None, :]
