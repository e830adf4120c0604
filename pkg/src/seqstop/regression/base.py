"""Posterior regression contract shared by both fitters.

Every model maps a batch of states to a :class:`PosteriorBatch`: the
posterior mean of the latent response surface, the variance of that latent
mean (not of a new observation), the estimated observation noise, leaf
occupancy, and the degrees of freedom ``n_leaf - d - 1`` of the local
Student-t posterior.  Conjugate noninformative leaf priors make the
single-leaf case match the textbook closed forms exactly, which the tests
exploit.
"""

from dataclasses import dataclass

import numpy as np

# Returned in place of the variance-reduction score for leaves too small to
# estimate noise; large so acquisition is drawn toward unexplored regions.
ALC_SENTINEL = 1e6


@dataclass
class PosteriorSummary:
    """Pointwise posterior of the latent mean at a single state."""

    mean: float
    variance: float
    noise_var: float
    leaf_count: int
    dof: float
    alc: float
    extrapolated: bool


@dataclass
class PosteriorBatch:
    """Vectorized posterior summaries over a batch of states."""

    mean: np.ndarray
    variance: np.ndarray
    noise_var: np.ndarray
    leaf_count: np.ndarray
    dof: np.ndarray
    alc: np.ndarray
    extrapolated: np.ndarray

    def summary(self, i=0):
        return PosteriorSummary(
            mean=float(self.mean[i]),
            variance=float(self.variance[i]),
            noise_var=float(self.noise_var[i]),
            leaf_count=int(self.leaf_count[i]),
            dof=float(self.dof[i]),
            alc=float(self.alc[i]),
            extrapolated=bool(self.extrapolated[i]),
        )


def fit(design, spec, rng=None):
    """Fit the regression chosen by ``spec`` to a design set.

    Dynamic trees stream the design in arrival order and need ``rng`` for
    their stochastic tree moves; the partition fit is deterministic.
    """
    from .partition import PartitionSpec, PartitionRegression
    from .trees import TreeSpec, TreeEnsemble

    if isinstance(spec, TreeSpec):
        return TreeEnsemble.fit(design.sites, design.responses, spec, rng)
    if isinstance(spec, PartitionSpec):
        return PartitionRegression.fit(design.sites, design.responses, spec)
    raise TypeError(f"unknown regression spec {type(spec).__name__}")


def update(model, sites, responses):
    """Absorb a batch of new observations and return the updated model.

    Tree ensembles update in place (and return themselves); the partition
    model refits from scratch on the augmented design.  An empty batch is
    a no-op that leaves predictions bit-identical.
    """
    return model.update(sites, responses)


def predict(model, x):
    """Pointwise posterior summary at a single state."""
    batch = model.predict_batch(np.atleast_2d(np.asarray(x, float)))
    return batch.summary(0)


def alc(model, x):
    """Expected variance reduction from one more sample at ``x``.

    Evaluates ``noise / ((n_leaf - d - 1)(n_leaf - d))`` averaged over the
    model's components, with the sentinel for undersized leaves.
    """
    batch = model.predict_batch(np.atleast_2d(np.asarray(x, float)))
    return float(batch.alc[0])
