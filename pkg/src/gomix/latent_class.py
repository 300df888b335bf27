"""Plain K-class latent class model fitted by EM.

Used both as a standalone baseline and to produce starting values for the
samplers: class profiles seed lambda, class weights seed xi, and per-row
responsibilities seed the membership scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

__all__ = ["LatentClassFit", "fit_latent_class"]

_EMPTY_CLASS_EPS = 1e-8


@dataclass
class LatentClassFit:
    lam: np.ndarray          # (K, J) class-conditional positive rates
    weights: np.ndarray      # (K,) mixing weights
    responsibilities: np.ndarray  # (N, K) posterior class memberships
    loglik: float
    n_iter: int
    loglik_trace: np.ndarray  # per-iteration log-likelihood of the kept restart


def _log_pattern_likelihood(patterns, lam):
    """log prob of each pattern under each class, (P, K)."""
    lam_c = np.clip(lam, 1e-12, 1.0 - 1e-12)
    log_l = np.log(lam_c)
    log_1ml = np.log1p(-lam_c)
    return patterns @ log_l.T + (1.0 - patterns) @ log_1ml.T


def _em_once(patterns, counts, lam, weights, max_iter, tol):
    n = counts.sum()
    trace = []
    prev = -np.inf
    resp = None
    for it in range(1, max_iter + 1):
        log_b = _log_pattern_likelihood(patterns, lam) + np.log(weights)[None, :]
        m = log_b.max(axis=1, keepdims=True)
        b = np.exp(log_b - m)
        denom = b.sum(axis=1, keepdims=True)
        resp = b / denom
        ll = float(np.dot(counts, (m[:, 0] + np.log(denom[:, 0]))))
        trace.append(ll)

        wk = counts[:, None] * resp
        nk = wk.sum(axis=0)
        if np.any(nk < _EMPTY_CLASS_EPS):
            return None, None, None, np.array(trace), it
        weights = nk / n
        lam = (wk.T @ patterns) / nk[:, None]
        if ll - prev < tol and it > 1:
            break
        prev = ll
    return lam, weights, resp, np.array(trace), it


def fit_latent_class(data, k, seed=0, restarts=10, max_iter=500, tol=1e-7, rng=None):
    """Fit the K-class latent class model by EM with random restarts.

    Keeps the restart with the best converged log-likelihood.  Restarts that
    collapse a class to zero weight are re-randomized rather than kept.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = data.x if isinstance(data, Dataset) else np.asarray(data)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(int(seed)))

    uniq, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    patterns = uniq.astype(float)
    counts = counts.astype(float)
    means = (counts @ patterns) / counts.sum()

    if k == 1:
        lam = means[None, :].copy()
        log_b = _log_pattern_likelihood(patterns, lam)
        ll = float(np.dot(counts, log_b[:, 0]))
        resp = np.ones((x.shape[0], 1))
        return LatentClassFit(lam, np.array([1.0]), resp, ll, 0, np.array([ll]))

    best = None
    attempts = 0
    done = 0
    while done < restarts:
        attempts += 1
        if attempts > 10 * restarts:
            raise RuntimeError("latent class EM kept collapsing classes; data may be degenerate")
        lam0 = np.clip(means[None, :] + rng.uniform(-0.35, 0.35, size=(k, x.shape[1])), 0.02, 0.98)
        w0 = rng.dirichlet(np.full(k, 5.0))
        lam, weights, resp, trace, it = _em_once(patterns, counts, lam0, w0, max_iter, tol)
        if lam is None:
            continue
        done += 1
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], lam, weights, resp, trace, it)
    ll, lam, weights, resp, trace, it = best
    return LatentClassFit(lam, weights, resp[inverse], float(ll), it, trace)
