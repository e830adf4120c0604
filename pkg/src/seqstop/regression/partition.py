"""Equiprobable recursive partition with per-cell linear regression.

The design is split into ``cells_per_dim`` rank-equal groups along the
first dimension, each group is split the same way along the second, and so
on, giving ``cells_per_dim ** d`` rectangular cells whose design counts
differ by at most one per split.  Each cell carries an ordinary
least-squares linear fit with intercept (falling back to the cell mean
when the local design is rank deficient).  Updates refit from scratch on
the augmented design.
"""

from dataclasses import dataclass

import numpy as np

from .base import ALC_SENTINEL, PosteriorBatch


@dataclass
class PartitionSpec:
    """Partition resolution: number of equal-count cells per dimension."""

    cells_per_dim: int

    def __post_init__(self):
        if self.cells_per_dim < 1:
            raise ValueError("cells_per_dim must be >= 1")


class PartitionRegression:
    """Frozen equiprobable-partition fit; also usable as a classifier."""

    def __init__(self, spec, thresholds, cells, dim, box_lo, box_hi, X, y):
        self.spec = spec
        self.thresholds = thresholds  # per level: (cells_at_level, n_p - 1)
        self.cells = cells
        self.dim = dim
        self.box_lo = box_lo
        self.box_hi = box_hi
        self._X = X
        self._y = y

    # -- construction ------------------------------------------------------

    @classmethod
    def fit(cls, sites, responses, spec):
        X = np.atleast_2d(np.asarray(sites, float))
        y = np.asarray(responses, float)
        n, d = X.shape
        n_p = spec.cells_per_dim
        if n < n_p**d * (d + 2):
            raise ValueError(
                f"design of size {n} is below the partition minimum {n_p ** d * (d + 2)}"
            )

        groups = [np.arange(n)]
        thresholds = []
        for j in range(d):
            level_thr = np.full((len(groups), n_p - 1), np.inf)
            fresh = []
            for g, idx in enumerate(groups):
                if idx.size == 0:
                    fresh.extend([np.empty(0, dtype=np.intp)] * n_p)
                    continue
                xj = X[idx, j]
                if n_p == 1 or idx.size < n_p or xj.min() == xj.max():
                    # degenerate slab: keep a single cell, route all to child 0
                    fresh.append(idx)
                    fresh.extend([np.empty(0, dtype=np.intp)] * (n_p - 1))
                    continue
                order = np.argsort(xj, kind="stable")
                parts = np.array_split(idx[order], n_p)
                for k in range(n_p - 1):
                    level_thr[g, k] = 0.5 * (X[parts[k][-1], j] + X[parts[k + 1][0], j])
                fresh.extend(parts)
            thresholds.append(level_thr)
            groups = fresh

        cells = [_cell_fit(X[idx], y[idx], d) for idx in groups]
        return cls(spec, thresholds, cells, d,
                   X.min(axis=0), X.max(axis=0), X, y)

    def update(self, sites, responses):
        """Refit from scratch on the design augmented with the new batch."""
        pts = np.atleast_2d(np.asarray(sites, float))
        if pts.size == 0:
            return self
        X = np.vstack([self._X, pts])
        y = np.concatenate([self._y, np.asarray(responses, float)])
        return PartitionRegression.fit(X, y, self.spec)

    # -- prediction --------------------------------------------------------

    def cell_index(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        n_p = self.spec.cells_per_dim
        idx = np.zeros(X.shape[0], dtype=np.intp)
        for j in range(self.dim):
            thr = self.thresholds[j][idx]  # (m, n_p - 1)
            pos = (X[:, j : j + 1] > thr).sum(axis=1)
            idx = idx * n_p + pos
        return idx

    def cell_counts(self):
        return np.array([c.n for c in self.cells])

    def predict_batch(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        m = X.shape[0]
        idx = self.cell_index(X)
        xt = np.column_stack([np.ones(m), X])
        mean = np.empty(m)
        variance = np.empty(m)
        noise = np.empty(m)
        count = np.empty(m, dtype=np.int64)
        for c in np.unique(idx):
            sel = idx == c
            cell = self.cells[c]
            mean[sel], variance[sel] = cell.moments(xt[sel])
            noise[sel] = cell.noise
            count[sel] = cell.n
        dof = count - self.dim - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            alc = np.where(
                count > self.dim + 1,
                noise / np.maximum(dof * (dof + 1.0), 1e-300),
                ALC_SENTINEL,
            )
        extrapolated = np.any((X < self.box_lo) | (X > self.box_hi), axis=1)
        return PosteriorBatch(
            mean=mean, variance=variance, noise_var=noise,
            leaf_count=count, dof=dof, alc=alc, extrapolated=extrapolated,
        )

    # -- classifier interface ----------------------------------------------

    def timing_mean(self, states):
        return self.predict_batch(states).mean

    def posterior(self, states):
        batch = self.predict_batch(states)
        return batch.mean, batch.variance

    def freeze(self):
        return self


class _Cell:
    __slots__ = ("n", "beta", "ginv", "noise", "is_const")

    def __init__(self, n, beta, ginv, noise, is_const):
        self.n = n
        self.beta = beta
        self.ginv = ginv
        self.noise = noise
        self.is_const = is_const

    def moments(self, xt):
        mean = xt @ self.beta
        if self.is_const:
            v = np.full(xt.shape[0], self.noise / max(self.n, 1))
        else:
            lev = np.maximum(np.einsum("np,pq,nq->n", xt, self.ginv, xt), 0.0)
            v = self.noise * lev
        return mean, v


def _cell_fit(X, y, d):
    n = X.shape[0]
    p = d + 1
    if n == 0:
        return _Cell(0, np.zeros(p), None, 0.0, True)
    xt = np.column_stack([np.ones(n), X])
    mean = float(y.mean())
    if n > p:
        gram = xt.T @ xt
        coef, _, rank, _ = np.linalg.lstsq(xt, y, rcond=None)
        if rank == p:
            rss = max(float(y @ y - (xt @ coef) @ y), 0.0)
            return _Cell(n, coef, np.linalg.inv(gram), rss / (n - p), False)
    beta = np.zeros(p)
    beta[0] = mean
    sse = float(((y - mean) ** 2).sum())
    return _Cell(n, beta, None, sse / (n - 1) if n > 1 else 0.0, True)


def bw_partition(design, cells_per_dim):
    """Fit the equiprobable-partition linear model to a design set."""
    return PartitionRegression.fit(design.sites, design.responses, PartitionSpec(cells_per_dim))
