"""Synthetic data generation and the two shipped simulation presets.

The preset profile matrices below are versioned constants of this package.
Their shapes (a dominant low-response profile, a high-response profile, and
cross-cutting intermediate profiles) realize the qualitative simulation
designs the recovery and selection tests target; any comparably separated
values would serve, so recovery tolerances are relative to these constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import GomParams
from .rngtools import dirichlet, substream

__all__ = ["GenerationTruth", "ScenarioPreset", "PRESETS", "generate_dataset"]


@dataclass(frozen=True)
class GenerationTruth:
    """Ground truth emitted alongside a generated dataset.

    ``g`` holds each individual's true membership vector (NaN rows for
    stayers, who have none); ``stayer`` flags individuals produced by the
    all-zero compartment.
    """

    g: np.ndarray
    stayer: np.ndarray
    params: GomParams
    stayer_weight: float | None
    seed: int


def generate_dataset(params, n, seed, stayer_weight=None):
    """Draw a synthetic dataset from the model.

    Each individual is, with probability ``stayer_weight``, an all-zero
    stayer; otherwise a membership vector g is drawn from
    Dirichlet(alpha0 * xi) and item j is positive with probability
    sum_k g_k lam[k, j], independently across items.

    Returns
    -------
    (Dataset, GenerationTruth)
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if stayer_weight is not None and not 0.0 <= float(stayer_weight) < 1.0:
        raise ValueError("stayer_weight must lie in [0, 1)")
    rng = substream(seed)
    k, j = params.k, params.j

    if stayer_weight is None:
        stayer = np.zeros(n, dtype=bool)
    else:
        stayer = rng.random(n) < float(stayer_weight)
    movers = np.flatnonzero(~stayer)

    x = np.zeros((n, j), dtype=np.uint8)
    g_full = np.full((n, k), np.nan)
    if movers.size:
        g = dirichlet(rng, params.alpha, size=movers.size)
        mix = g @ params.lam
        x[movers] = (rng.random((movers.size, j)) < mix).astype(np.uint8)
        g_full[movers] = g

    truth = GenerationTruth(
        g=g_full,
        stayer=stayer,
        params=params,
        stayer_weight=None if stayer_weight is None else float(stayer_weight),
        seed=int(seed),
    )
    return Dataset(x), truth


@dataclass(frozen=True)
class ScenarioPreset:
    """A named generating model with its default sample size."""

    name: str
    params: GomParams
    n: int

    def generate(self, seed, n=None, stayer_weight=None):
        return generate_dataset(self.params, self.n if n is None else n, seed, stayer_weight)


# Three-profile design: most individuals lean toward a low-response profile,
# a minority toward a high-response profile, and a small group toward a
# profile positive mainly on the second half of the items (so it is not a
# blend of the other two).
_SCENARIO1_LAM = np.array(
    [
        [0.02, 0.03, 0.04, 0.05, 0.03, 0.02, 0.06, 0.04,
         0.08, 0.05, 0.07, 0.06, 0.10, 0.08, 0.12, 0.10],
        [0.90, 0.92, 0.88, 0.95, 0.93, 0.90, 0.87, 0.94,
         0.91, 0.89, 0.93, 0.96, 0.88, 0.92, 0.90, 0.94],
        [0.05, 0.08, 0.06, 0.10, 0.07, 0.09, 0.12, 0.10,
         0.75, 0.80, 0.70, 0.85, 0.78, 0.72, 0.82, 0.76],
    ]
)

# Seven-profile design on ten items: four profiles graded from least to most
# affected plus three cross-cutting profiles (positive on even items, odd
# items, and the middle block respectively) that break any single ordering.
_SCENARIO2_LAM = np.array(
    [
        [0.03, 0.02, 0.04, 0.03, 0.05, 0.02, 0.04, 0.03, 0.05, 0.04],
        [0.45, 0.50, 0.40, 0.08, 0.06, 0.10, 0.05, 0.08, 0.12, 0.10],
        [0.85, 0.80, 0.88, 0.75, 0.70, 0.15, 0.10, 0.12, 0.20, 0.15],
        [0.95, 0.92, 0.96, 0.90, 0.94, 0.91, 0.93, 0.95, 0.90, 0.92],
        [0.10, 0.85, 0.12, 0.80, 0.08, 0.88, 0.10, 0.82, 0.12, 0.85],
        [0.80, 0.10, 0.85, 0.08, 0.82, 0.12, 0.78, 0.10, 0.88, 0.08],
        [0.10, 0.12, 0.08, 0.85, 0.88, 0.82, 0.86, 0.10, 0.08, 0.12],
    ]
)

PRESETS = {
    "scenario1": ScenarioPreset(
        name="scenario1",
        params=GomParams(
            lam=_SCENARIO1_LAM,
            alpha0=0.25,
            xi=np.array([0.7, 0.2, 0.1]),
        ),
        n=5000,
    ),
    "scenario2": ScenarioPreset(
        name="scenario2",
        params=GomParams(
            lam=_SCENARIO2_LAM,
            alpha0=0.2,
            xi=np.array([0.40, 0.12, 0.12, 0.11, 0.10, 0.10, 0.05]),
        ),
        n=5000,
    ),
}
