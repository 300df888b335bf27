"""Extension of the sampler with a deterministic all-zero compartment.

The population is modelled as a two-part mixture: with probability theta1 an
individual reports no positive responses at all, and with probability
theta2 = 1 - theta1 the responses follow the partial-membership model.  Only
individuals whose observed pattern is all-zero can sit in the first
compartment, so each sweep splits exactly those rows between the two parts.

Per sweep: rows currently in the all-zero compartment get a fresh membership
vector from the Dirichlet prior (their responses carry no information about
g), every all-zero row is then reassigned to the all-zero compartment with
probability theta1 / (theta1 + theta2 * p_i), where p_i is the model
probability of an all-zero pattern at that row's membership vector, and the
regular sweep runs over the membership-compartment rows only.  The weights
are then refreshed deterministically from the realized split: theta2 is the
fraction of individuals currently in the membership compartment.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .mcmc import _run_loop
from .rngtools import dirichlet_logspace

__all__ = [
    "CompartmentState",
    "all_zero_response_prob",
    "sample_compartment_indicators",
    "update_theta",
    "run_extended_chain",
]


@dataclass
class CompartmentState:
    """Current split of the all-zero rows between the two compartments."""

    theta1: float
    theta2: float
    stayer_flags: np.ndarray   # bool, one entry per all-zero row
    n2: int                    # all-zero rows currently in the membership part


def all_zero_response_prob(g, lam):
    """Probability of an all-zero response vector at each membership vector."""
    mix = np.atleast_2d(np.asarray(g, dtype=float)) @ lam
    with np.errstate(divide="ignore"):
        return np.exp(np.log1p(-mix).sum(axis=1))


def sample_compartment_indicators(rng, p_all_zero, theta1, theta2):
    """Draw all-zero-compartment flags for the all-zero rows.

    The conditional probability of sitting in the all-zero compartment is
    theta1 / (theta1 + theta2 * p_i).  Consumes one uniform per row.
    """
    p = np.asarray(p_all_zero, dtype=float)
    denom = np.maximum(theta1 + theta2 * p, 1e-300)
    return rng.random(p.shape) < theta1 / denom


def update_theta(n2, n_all_zero, n_total):
    """Deterministic weight refresh from the realized split.

    theta2 is the fraction of individuals in the membership compartment:
    the n2 all-zero rows currently assigned there plus everyone with at
    least one positive response.
    """
    theta2 = (n2 + (n_total - n_all_zero)) / n_total
    return 1.0 - theta2, theta2


class _CompartmentHooks:
    """Adapter the shared chain driver calls around each sweep."""

    def __init__(self, theta1_init, indicator_sampling):
        self.theta1 = float(theta1_init)
        self.theta2 = 1.0 - self.theta1
        self.indicator_sampling = bool(indicator_sampling)

    def bind(self, state, x_bool):
        self.state = state
        self.x_bool = x_bool
        self.n_total = x_bool.shape[0]
        any_pos = x_bool.any(axis=1)
        self.az_idx = np.flatnonzero(~any_pos)
        self.nonzero_idx = np.flatnonzero(any_pos)
        # Every all-zero row starts in the membership compartment; the first
        # sweep's indicator draw moves some of them out.
        self.stayer_flags = np.zeros(self.az_idx.size, dtype=bool)
        self.n2 = int(self.az_idx.size)

    def _mover_rows(self):
        mask = np.ones(self.n_total, dtype=bool)
        mask[self.az_idx[self.stayer_flags]] = False
        return np.flatnonzero(mask)

    def pre_sweep(self, rng):
        state = self.state
        az = self.az_idx
        if az.size == 0 or not self.indicator_sampling:
            self.n2 = int(az.size - self.stayer_flags.sum())
            return self._mover_rows()
        stay_rows = az[self.stayer_flags]
        if stay_rows.size:
            shapes = np.broadcast_to(
                state.alpha0 * state.xi, (stay_rows.size, state.xi.size)
            ).copy()
            g_new, log_g_new = dirichlet_logspace(rng, shapes)
            state.g[stay_rows] = g_new
            state.log_g[stay_rows] = log_g_new
        p = all_zero_response_prob(state.g[az], state.lam)
        self.stayer_flags = sample_compartment_indicators(rng, p, self.theta1, self.theta2)
        self.n2 = int(az.size - self.stayer_flags.sum())
        return self._mover_rows()

    def post_sweep(self):
        if not self.indicator_sampling:
            return
        self.theta1, self.theta2 = update_theta(self.n2, self.az_idx.size, self.n_total)

    def kept_extras(self, mover_loglik):
        state = self.state
        az_term = 0.0
        if self.az_idx.size:
            p = all_zero_response_prob(state.g[self.az_idx], state.lam)
            az_term = float(
                np.log(np.maximum(self.theta1 + self.theta2 * p, 1e-300)).sum()
            )
        nz_term = 0.0
        if self.nonzero_idx.size:
            xb = self.x_bool[self.nonzero_idx]
            mix = state.g[self.nonzero_idx] @ state.lam
            with np.errstate(divide="ignore"):
                terms = np.where(xb, np.log(mix), np.log1p(-mix))
            nz_term = self.nonzero_idx.size * math.log(max(self.theta2, 1e-300)) + float(
                terms.sum()
            )
        return {
            "theta1": self.theta1,
            "n2": self.n2,
            "loglik_mixture": az_term + nz_term,
        }

    def compartment_state(self):
        return CompartmentState(
            theta1=self.theta1,
            theta2=self.theta2,
            stayer_flags=self.stayer_flags.copy(),
            n2=self.n2,
        )


def run_extended_chain(data, config, theta1_init=None, indicator_sampling=True):
    """Run the two-compartment sampler.

    theta1_init defaults to half the observed all-zero fraction and must stay
    below that fraction.  With indicator_sampling=False the compartment split
    and the weights are frozen at their initial values, which makes a run
    with theta1_init=0 reproduce run_chain draw for draw.
    """
    if not isinstance(data, Dataset):
        data = Dataset(np.asarray(data))
    n = data.x.shape[0]
    n_az = data.all_zero_count
    az_prop = n_az / n
    if theta1_init is None:
        theta1_init = az_prop / 2.0
    theta1_init = float(theta1_init)
    if n_az == 0:
        if theta1_init > 0.0:
            raise ValueError("theta1_init > 0 requires at least one all-zero row")
        warnings.warn(
            "no all-zero rows: the all-zero compartment is empty and theta1 stays 0",
            RuntimeWarning,
            stacklevel=2,
        )
    elif not 0.0 <= theta1_init < az_prop:
        raise ValueError(
            f"theta1_init must lie in [0, {az_prop:.6g}) "
            "(the observed all-zero fraction)"
        )
    hooks = _CompartmentHooks(theta1_init, indicator_sampling)
    return _run_loop(data, config, hooks=hooks)
