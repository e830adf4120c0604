"""Dynamic regression trees with a particle-filter posterior.

Each particle is a binary tree of axis-aligned splits with a conjugate
Bayesian model at every leaf (constant or linear, noninformative priors).
Points arrive one at a time; at the leaf containing the new point the
particle samples one of the local moves {stay, grow, prune} proportional
to the marginal posterior of the resulting tree, the product of the
depth-dependent split prior and the leaf marginal likelihoods.  Particles
are reweighted by the predictive density of each arriving response and
systematically resampled when the effective sample size degenerates;
during active learning the ensemble is additionally rejuvenated (each
particle refit from a random permutation of the data) at a fixed cadence.

Prediction mixes the particles: the ensemble mean is the weighted average
of particle means and the ensemble variance adds the weighted spread of
particle means to the average within-particle variance of the latent mean.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency, but keep a path
    njit = None

from .base import ALC_SENTINEL, PosteriorBatch

LOG_PI = math.log(math.pi)
SSE_FLOOR = 1e-12

# lgamma(k / 2) lookup for integer k; grown on demand by _gln_half
_GLN_HALF = gammaln(0.5 * np.arange(1, 1 << 14))


def _gln_half(k):
    """Vector lgamma(k / 2) for positive integer ``k`` via table lookup."""
    global _GLN_HALF
    if k.size and int(k.max()) > _GLN_HALF.size:
        _GLN_HALF = gammaln(0.5 * np.arange(1, 2 * int(k.max())))
    return _GLN_HALF[k - 1]


@dataclass
class TreeSpec:
    """Dynamic-tree hyperparameters.

    The split prior is ``p_split(depth) = alpha (1 + depth)^(-beta_depth)``.
    ``min_leaf`` defaults to ``max(d + 2, 5)`` so every leaf keeps at least
    one degree of freedom; ``rejuvenate_every`` counts points absorbed by
    ``update`` between permutation refits; ``max_split_candidates`` caps the
    grow-scan positions evaluated per dimension.
    """

    particles: int = 10
    leaf: str = "constant"
    alpha: float = 0.95
    beta_depth: float = 2.0
    min_leaf: int | None = None
    rejuvenate_every: int = 500
    max_split_candidates: int = 32

    def __post_init__(self):
        if self.particles < 1:
            raise ValueError("particles must be >= 1")
        if self.leaf not in ("constant", "linear"):
            raise ValueError("leaf must be 'constant' or 'linear'")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.beta_depth < 0:
            raise ValueError("beta_depth must be nonnegative")

    def resolved_min_leaf(self, dim):
        if self.min_leaf is not None:
            return int(self.min_leaf)
        return max(dim + 2, 5)


class _Store:
    """Shared append-only design buffer (sites, responses)."""

    __slots__ = ("X", "y", "n")

    def __init__(self, dim):
        self.X = np.empty((64, dim))
        self.y = np.empty(64)
        self.n = 0

    def extend(self, X, y):
        m = X.shape[0]
        need = self.n + m
        if need > self.X.shape[0]:
            cap = max(need, 2 * self.X.shape[0])
            self.X = np.concatenate([self.X, np.empty((cap - self.X.shape[0], self.X.shape[1]))])
            self.y = np.concatenate([self.y, np.empty(cap - self.y.shape[0])])
        self.X[self.n : need] = X
        self.y[self.n : need] = y
        self.n = need


class _IdxBuf:
    """Amortized-append index buffer; ``view()`` is a zero-copy slice."""

    __slots__ = ("arr", "n")

    def __init__(self, idx=None):
        if idx is None:
            self.arr = np.empty(8, dtype=np.intp)
            self.n = 0
        else:
            self.arr = np.asarray(idx, dtype=np.intp).copy()
            self.n = self.arr.size

    def append(self, i):
        if self.n == self.arr.size:
            self.arr = np.concatenate([self.arr, np.empty(max(8, self.n), dtype=np.intp)])
        self.arr[self.n] = i
        self.n += 1

    def view(self):
        return self.arr[: self.n]

    def copy(self):
        return _IdxBuf(self.view())

    @staticmethod
    def merged(a, b):
        return _IdxBuf(np.concatenate([a.view(), b.view()]))


# ---------------------------------------------------------------------------
# Leaf models: conjugate closed forms, marginal likelihoods, grow scans.
# ---------------------------------------------------------------------------


class _ConstStats:
    __slots__ = ("n", "sy", "syy")

    def __init__(self, n=0, sy=0.0, syy=0.0):
        self.n = n
        self.sy = sy
        self.syy = syy

    def copy(self):
        return _ConstStats(self.n, self.sy, self.syy)


def _log_ml_const(n, sse):
    if n < 2:
        return 0.0
    s = sse if sse > SSE_FLOOR else SSE_FLOOR
    return math.lgamma(0.5 * (n - 1)) - 0.5 * (n - 1) * (LOG_PI + math.log(s)) - 0.5 * math.log(n)


def _log_ml_const_vec(n, sse):
    """Vectorized constant-leaf marginal likelihood; ``n`` integer array."""
    s = np.maximum(sse, SSE_FLOOR)
    return _gln_half(n - 1) - 0.5 * (n - 1) * (LOG_PI + np.log(s)) - 0.5 * np.log(n)


class _ConstModel:
    p = 1

    @staticmethod
    def make(store, idx):
        ys = store.y[idx]
        return _ConstStats(int(idx.size), float(ys.sum()), float(ys @ ys))

    @staticmethod
    def add(st, x, yv):
        st.n += 1
        st.sy += yv
        st.syy += yv * yv

    @staticmethod
    def merge(a, b):
        return _ConstStats(a.n + b.n, a.sy + b.sy, a.syy + b.syy)

    @staticmethod
    def log_ml(st):
        return _log_ml_const(st.n, st.syy - st.sy * st.sy / st.n if st.n else 0.0)

    @staticmethod
    def log_predictive(st, x, yv, dim):
        n = st.n
        if n < 3 or n - dim - 1 < 1:
            return None
        mean = st.sy / n
        sse = max(st.syy - st.sy * mean, 0.0)
        scale2 = max(sse / (n - 1) * (1.0 + 1.0 / n), SSE_FLOOR)
        df = n - dim - 1
        z2 = (yv - mean) ** 2 / scale2
        return (
            math.lgamma(0.5 * (df + 1))
            - math.lgamma(0.5 * df)
            - 0.5 * math.log(df * math.pi * scale2)
            - 0.5 * (df + 1) * math.log1p(z2 / df)
        )

    @staticmethod
    def grow_scan(store, node, min_leaf, cap):
        idx = node.idx.view()
        ys = store.y[idx]
        out = []
        for j in range(store.X.shape[1]):
            xj = store.X[idx, j]
            order = np.argsort(xj)
            thr, ml = _const_scan(xj[order], ys[order], min_leaf, cap)
            if thr.size:
                out.append((j, thr, ml))
        return out


class _LinStats:
    __slots__ = ("n", "G", "b", "syy", "_chol")

    def __init__(self, n, G, b, syy):
        self.n = n
        self.G = G
        self.b = b
        self.syy = syy
        self._chol = None

    def copy(self):
        return _LinStats(self.n, self.G.copy(), self.b.copy(), self.syy)

    def solve(self, rhs):
        from scipy.linalg import cho_factor, cho_solve

        if self._chol is None:
            try:
                self._chol = cho_factor(self.G, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                self._chol = False
        if self._chol is False:
            return None
        return cho_solve(self._chol, rhs, check_finite=False)


class _LinModel:
    @staticmethod
    def make(store, idx):
        X = store.X[idx]
        y = store.y[idx]
        Xt = np.column_stack([np.ones(idx.size), X])
        return _LinStats(int(idx.size), Xt.T @ Xt, Xt.T @ y, float(y @ y))

    @staticmethod
    def add(st, x, yv):
        xt = np.concatenate([[1.0], x])
        st.G += np.outer(xt, xt)
        st.b += yv * xt
        st.syy += yv * yv
        st._chol = None

    @staticmethod
    def merge(a, b):
        return _LinStats(a.n + b.n, a.G + b.G, a.b + b.b, a.syy + b.syy)

    @staticmethod
    def log_ml(st):
        p = st.G.shape[0]
        n = st.n
        if n <= p:
            return _log_ml_const(n, st.syy - (st.b[0] ** 2 / n if n else 0.0))
        beta = st.solve(st.b)
        if beta is None:
            return _log_ml_const(n, max(st.syy - st.b[0] ** 2 / n, 0.0))
        rss = max(st.syy - st.b @ beta, SSE_FLOOR)
        sign, logdet = np.linalg.slogdet(st.G)
        if sign <= 0:
            return _log_ml_const(n, max(st.syy - st.b[0] ** 2 / n, 0.0))
        return gammaln(0.5 * (n - p)) - 0.5 * (n - p) * (LOG_PI + math.log(rss)) - 0.5 * logdet

    @staticmethod
    def log_predictive(st, x, yv, dim):
        p = st.G.shape[0]
        n = st.n
        if n < p + 2 or n - dim - 1 < 1:
            return None
        xt = np.concatenate([[1.0], x])
        beta = st.solve(st.b)
        gx = st.solve(xt)
        if beta is None or gx is None:
            return _ConstModel.log_predictive(
                _ConstStats(n, st.b[0], st.syy), x, yv, dim
            )
        rss = max(st.syy - st.b @ beta, 0.0)
        lev = max(xt @ gx, 0.0)
        scale2 = max(rss / (n - p) * (1.0 + lev), SSE_FLOOR)
        df = n - dim - 1
        z2 = (yv - xt @ beta) ** 2 / scale2
        return (
            math.lgamma(0.5 * (df + 1))
            - math.lgamma(0.5 * df)
            - 0.5 * math.log(df * math.pi * scale2)
            - 0.5 * (df + 1) * math.log1p(z2 / df)
        )

    @staticmethod
    def grow_scan(store, node, min_leaf, cap):
        idx = node.idx.view()
        X = store.X[idx]
        y = store.y[idx]
        n = idx.size
        p = X.shape[1] + 1
        Xt = np.column_stack([np.ones(n), X])
        outer = Xt[:, :, None] * Xt[:, None, :]
        xy = Xt * y[:, None]
        yy = y * y
        out = []
        for j in range(X.shape[1]):
            order = np.argsort(X[:, j], kind="stable")
            xj = X[order, j]
            pos = _candidate_positions(xj, n, min_leaf, cap)
            if pos.size == 0:
                continue
            # block sums between consecutive candidate boundaries, then a
            # short cumulative sum: O(n p^2) instead of a full prefix array
            seg = np.concatenate([[0], pos + 1])
            g_blocks = np.add.reduceat(outer[order].reshape(n, -1), seg, axis=0)
            b_blocks = np.add.reduceat(xy[order], seg, axis=0)
            s_blocks = np.add.reduceat(yy[order], seg)
            g_cum = np.cumsum(g_blocks, axis=0)
            b_cum = np.cumsum(b_blocks, axis=0)
            s_cum = np.cumsum(s_blocks)
            g_left = g_cum[:-1].reshape(-1, p, p)
            b_left = b_cum[:-1]
            s_left = s_cum[:-1]
            g_tot = g_cum[-1].reshape(p, p)
            b_tot = b_cum[-1]
            s_tot = s_cum[-1]
            ml = _split_ml_lin(g_left, b_left, s_left, pos + 1, g_tot, b_tot, s_tot, n)
            thr = 0.5 * (xj[pos] + xj[pos + 1])
            out.append((j, thr, ml))
        return out


def _split_ml_lin(g_l, b_l, s_l, k, g_tot, b_tot, s_tot, n):
    p = g_tot.shape[0]
    jitter = 1e-9 * (np.trace(g_tot) / p + 1.0) * np.eye(p)
    g_r = g_tot[None, :, :] - g_l
    b_r = b_tot[None, :] - b_l
    s_r = s_tot - s_l
    nr = n - k
    out = np.full(k.shape[0], -np.inf)
    for side, (g, b, s, cnt) in enumerate([(g_l, b_l, s_l, k), (g_r, b_r, s_r, nr)]):
        gj = g + jitter[None, :, :]
        try:
            beta = np.linalg.solve(gj, b[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            return out
        rss = np.maximum(s - np.einsum("mi,mi->m", b, beta), SSE_FLOOR)
        sign, logdet = np.linalg.slogdet(gj)
        dfree = np.maximum(cnt - p, 1)
        term = np.where(
            (sign > 0) & (cnt > p),
            _gln_half(dfree) - 0.5 * dfree * (LOG_PI + np.log(rss)) - 0.5 * logdet,
            _log_ml_const_vec(cnt, np.maximum(s - b[:, 0] ** 2 / cnt, 0.0)),
        )
        out = term if side == 0 else out + term
    return out


def _candidate_positions(sorted_coord, n, min_leaf, cap):
    """Boundary indices with >= min_leaf points on each side, distinct values."""
    if n < 2 * min_leaf:
        return np.empty(0, dtype=np.intp)
    pos = np.arange(min_leaf - 1, n - min_leaf)
    pos = pos[sorted_coord[pos] < sorted_coord[pos + 1]]
    if pos.size > cap:
        stride = -(-pos.size // cap)
        pos = pos[(pos.size - 1) % stride :: stride]
    return pos


def _const_scan_numpy(xj, yo, min_leaf, cap):
    """Split scan for a constant leaf: thresholds and children log-ML sums."""
    n = xj.shape[0]
    pos = _candidate_positions(xj, n, min_leaf, cap)
    if pos.size == 0:
        empty = np.empty(0)
        return empty, empty
    cy = np.cumsum(yo)
    cyy = np.cumsum(yo * yo)
    k = pos + 1
    sy_l = cy[pos]
    sse_l = np.maximum(cyy[pos] - sy_l * sy_l / k, 0.0)
    nr = n - k
    sy_r = cy[-1] - sy_l
    sse_r = np.maximum(cyy[-1] - cyy[pos] - sy_r * sy_r / nr, 0.0)
    ml = _log_ml_const_vec(k, sse_l) + _log_ml_const_vec(nr, sse_r)
    return 0.5 * (xj[pos] + xj[pos + 1]), ml


def _const_scan_loops(xj, yo, min_leaf, cap):
    n = xj.shape[0]
    lo = min_leaf - 1
    hi = n - min_leaf
    empty = np.empty(0, np.float64)
    if hi - lo <= 0:
        return empty, empty
    pos = np.empty(hi - lo, np.int64)
    cnt = 0
    for i in range(lo, hi):
        if xj[i] < xj[i + 1]:
            pos[cnt] = i
            cnt += 1
    if cnt == 0:
        return empty, empty
    if cnt > cap:
        stride = (cnt + cap - 1) // cap
        kept = 0
        for a in range((cnt - 1) % stride, cnt, stride):
            pos[kept] = pos[a]
            kept += 1
        cnt = kept
    toty = 0.0
    totyy = 0.0
    for i in range(n):
        toty += yo[i]
        totyy += yo[i] * yo[i]
    thr = np.empty(cnt, np.float64)
    ml = np.empty(cnt, np.float64)
    run_y = 0.0
    run_yy = 0.0
    ptr = 0
    for i in range(n):
        run_y += yo[i]
        run_yy += yo[i] * yo[i]
        if ptr < cnt and i == pos[ptr]:
            k = i + 1.0
            nr = n - k
            sse_l = run_yy - run_y * run_y / k
            if sse_l < SSE_FLOOR:
                sse_l = SSE_FLOOR
            sy_r = toty - run_y
            sse_r = (totyy - run_yy) - sy_r * sy_r / nr
            if sse_r < SSE_FLOOR:
                sse_r = SSE_FLOOR
            ml[ptr] = (
                math.lgamma(0.5 * (k - 1)) - 0.5 * (k - 1) * (LOG_PI + math.log(sse_l)) - 0.5 * math.log(k)
                + math.lgamma(0.5 * (nr - 1)) - 0.5 * (nr - 1) * (LOG_PI + math.log(sse_r)) - 0.5 * math.log(nr)
            )
            thr[ptr] = 0.5 * (xj[i] + xj[i + 1])
            ptr += 1
    return thr, ml


_const_scan = njit(cache=True)(_const_scan_loops) if njit is not None else _const_scan_numpy


# ---------------------------------------------------------------------------
# Tree particles.
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("depth", "parent", "split_dim", "threshold", "left", "right", "idx", "stats")

    def __init__(self, depth, parent, idx, stats):
        self.depth = depth
        self.parent = parent
        self.split_dim = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.idx = idx
        self.stats = stats


class TreeParticle:
    """One tree hypothesis over the shared design stream."""

    __slots__ = ("store", "model", "min_leaf", "alpha", "beta_depth", "cap", "dim", "root", "flat")

    def __init__(self, store, model, min_leaf, alpha, beta_depth, cap, dim):
        self.store = store
        self.model = model
        self.min_leaf = min_leaf
        self.alpha = alpha
        self.beta_depth = beta_depth
        self.cap = cap
        self.dim = dim
        self.root = _Node(0, None, _IdxBuf(), self._empty_stats())
        self.flat = None

    def _empty_stats(self):
        if self.model is _ConstModel:
            return _ConstStats()
        p = self.dim + 1
        return _LinStats(0, np.zeros((p, p)), np.zeros(p), 0.0)

    def _psplit(self, depth):
        return self.alpha * (1.0 + depth) ** (-self.beta_depth)

    def leaf_for(self, x):
        node = self.root
        while node.split_dim >= 0:
            node = node.left if x[node.split_dim] <= node.threshold else node.right
        return node

    def log_predictive(self, i):
        x = self.store.X[i]
        leaf = self.leaf_for(x)
        return self.model.log_predictive(leaf.stats, x, self.store.y[i], self.dim)

    def absorb(self, i, rng):
        """Insert point ``i`` and sample a local tree move at its leaf."""
        store = self.store
        model = self.model
        x = store.X[i]
        node = self.leaf_for(x)
        node.idx.append(i)
        model.add(node.stats, x, store.y[i])
        self.flat = None

        q = node.depth
        ps_q = self._psplit(q)
        log_stay_local = math.log1p(-ps_q) + model.log_ml(node.stats)

        parent = node.parent
        merged = None
        prune_ok = (
            parent is not None
            and parent.left.split_dim < 0
            and parent.right.split_dim < 0
        )
        if prune_ok:
            sibling = parent.right if node is parent.left else parent.left
            merged = model.merge(node.stats, sibling.stats)
            ps_g = self._psplit(parent.depth)
            n_locs = max(1, merged.n - 2 * self.min_leaf + 1)
            common = (
                math.log(ps_g)
                - math.log(self.dim * n_locs)
                + math.log1p(-ps_q)
                + model.log_ml(sibling.stats)
            )
            head = [common + log_stay_local, math.log1p(-ps_g) + model.log_ml(merged)]
            grow_offset = common
        else:
            head = [log_stay_local]
            grow_offset = 0.0

        scans = ()
        if ps_q > 0.0 and node.stats.n >= 2 * self.min_leaf:
            scans = model.grow_scan(store, node, self.min_leaf, self.cap)
        if scans:
            d_avail = len(scans)
            grow_prior = (
                grow_offset + math.log(ps_q) + 2.0 * math.log1p(-self._psplit(q + 1))
            )
            blocks = [ml + (grow_prior - math.log(d_avail * ml.shape[0])) for _, _, ml in scans]
            logw = np.concatenate([head] + blocks)
        elif prune_ok:
            logw = np.asarray(head)
        else:
            return  # staying is the only move

        w = np.exp(logw - logw.max())
        cum = np.cumsum(w)
        choice = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        choice = min(choice, logw.size - 1)
        if choice == 0:
            return
        if prune_ok:
            if choice == 1:
                self._apply_prune(parent, merged)
                return
            choice -= 2
        else:
            choice -= 1
        for j, thr, ml in scans:
            if choice < ml.shape[0]:
                self._apply_grow(node, j, float(thr[choice]))
                return
            choice -= ml.shape[0]

    def _apply_grow(self, node, j, thr):
        store = self.store
        idx = node.idx.view()
        left_mask = store.X[idx, j] <= thr
        left_idx = idx[left_mask]
        right_idx = idx[~left_mask]
        node.split_dim = j
        node.threshold = float(thr)
        node.left = _Node(node.depth + 1, node, _IdxBuf(left_idx), self.model.make(store, left_idx))
        node.right = _Node(node.depth + 1, node, _IdxBuf(right_idx), self.model.make(store, right_idx))
        node.idx = None
        node.stats = None

    def _apply_prune(self, parent, merged):
        parent.split_dim = -1
        parent.idx = _IdxBuf.merged(parent.left.idx, parent.right.idx)
        parent.stats = merged
        parent.left = None
        parent.right = None

    def rebuild(self, order, rng):
        self.root = _Node(0, None, _IdxBuf(), self._empty_stats())
        self.flat = None
        for i in order:
            self.absorb(int(i), rng)

    def clone(self):
        twin = TreeParticle(
            self.store, self.model, self.min_leaf, self.alpha, self.beta_depth, self.cap, self.dim
        )
        twin.root = _clone_node(self.root, None)
        return twin

    def leaves(self):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.split_dim < 0:
                out.append(node)
            else:
                stack.extend([node.left, node.right])
        return out

    def flattened(self):
        if self.flat is None:
            self.flat = _flatten(self)
        return self.flat


def _clone_node(node, parent):
    twin = _Node(node.depth, parent, None, None)
    twin.split_dim = node.split_dim
    twin.threshold = node.threshold
    if node.split_dim < 0:
        twin.idx = node.idx.copy()
        twin.stats = node.stats.copy()
    else:
        twin.left = _clone_node(node.left, twin)
        twin.right = _clone_node(node.right, twin)
    return twin


# ---------------------------------------------------------------------------
# Flattened trees for vectorized prediction.
# ---------------------------------------------------------------------------


class _FlatTree:
    __slots__ = ("feat", "thr", "left", "right", "kind", "ln", "lmean", "lnoise", "lbeta", "lginv", "lconst")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


def _flatten(particle):
    nodes = []
    stack = [particle.root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        if node.split_dim >= 0:
            stack.extend([node.right, node.left])
    index = {id(n): k for k, n in enumerate(nodes)}
    m = len(nodes)
    feat = np.full(m, -1, dtype=np.int32)
    thr = np.zeros(m)
    left = np.zeros(m, dtype=np.int32)
    right = np.zeros(m, dtype=np.int32)
    leaves = []
    for k, node in enumerate(nodes):
        if node.split_dim >= 0:
            feat[k] = node.split_dim
            thr[k] = node.threshold
            left[k] = index[id(node.left)]
            right[k] = index[id(node.right)]
        else:
            left[k] = len(leaves)
            leaves.append(node)

    n_leaf = len(leaves)
    ln = np.array([lf.stats.n for lf in leaves], dtype=float)
    if particle.model is _ConstModel:
        sy = np.array([lf.stats.sy for lf in leaves])
        syy = np.array([lf.stats.syy for lf in leaves])
        with np.errstate(invalid="ignore", divide="ignore"):
            lmean = np.where(ln > 0, sy / np.maximum(ln, 1), 0.0)
            sse = np.maximum(syy - sy * lmean, 0.0)
            lnoise = np.where(ln > 1, sse / np.maximum(ln - 1, 1), 0.0)
        return _FlatTree(
            feat=feat, thr=thr, left=left, right=right, kind="constant",
            ln=ln, lmean=lmean, lnoise=lnoise, lbeta=None, lginv=None, lconst=None,
        )

    p = particle.dim + 1
    lbeta = np.zeros((n_leaf, p))
    lginv = np.zeros((n_leaf, p, p))
    lmean = np.zeros(n_leaf)
    lnoise = np.zeros(n_leaf)
    lconst = np.zeros(n_leaf, dtype=bool)
    for k, lf in enumerate(leaves):
        st = lf.stats
        beta = st.solve(st.b) if st.n > p else None
        if beta is None:
            lconst[k] = True
            mean = st.b[0] / st.n if st.n else 0.0
            sse = max(st.syy - st.b[0] * mean, 0.0)
            lmean[k] = mean
            lnoise[k] = sse / (st.n - 1) if st.n > 1 else 0.0
        else:
            try:
                ginv = np.linalg.inv(st.G)
            except np.linalg.LinAlgError:
                lconst[k] = True
                mean = st.b[0] / st.n
                lmean[k] = mean
                lnoise[k] = max(st.syy - st.b[0] * mean, 0.0) / max(st.n - 1, 1)
                continue
            lbeta[k] = beta
            lginv[k] = ginv
            lnoise[k] = max(st.syy - st.b @ beta, 0.0) / (st.n - p)
    return _FlatTree(
        feat=feat, thr=thr, left=left, right=right, kind="linear",
        ln=ln, lmean=lmean, lnoise=lnoise, lbeta=lbeta, lginv=lginv, lconst=lconst,
    )


def _descend(flat, X):
    m = X.shape[0]
    node = np.zeros(m, dtype=np.int32)
    rows = np.arange(m)
    while True:
        f = flat.feat[node]
        internal = f >= 0
        if not internal.any():
            break
        xv = X[rows, np.where(internal, f, 0)]
        nxt = np.where(xv <= flat.thr[node], flat.left[node], flat.right[node])
        node = np.where(internal, nxt, node)
    return flat.left[node]


def _particle_moments(flat, X, dim):
    """Per-particle latent mean, latent variance, noise, leaf counts at X."""
    slot = _descend(flat, X)
    ln = flat.ln[slot]
    noise = flat.lnoise[slot]
    if flat.kind == "constant":
        mean = flat.lmean[slot]
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(ln > 0, noise / np.maximum(ln, 1.0), 0.0)
        return mean, v, noise, ln
    xt = np.column_stack([np.ones(X.shape[0]), X])
    mean = np.einsum("np,np->n", xt, flat.lbeta[slot])
    lev = np.einsum("np,npq,nq->n", xt, flat.lginv[slot], xt)
    lev = np.maximum(lev, 0.0)
    v = noise * lev
    const = flat.lconst[slot]
    if const.any():
        mean[const] = flat.lmean[slot[const]]
        v[const] = noise[const] / np.maximum(ln[const], 1.0)
    return mean, v, noise, ln


# ---------------------------------------------------------------------------
# Particle ensemble.
# ---------------------------------------------------------------------------


class TreeEnsemble:
    """Particle ensemble over dynamic trees, the streaming posterior fit."""

    def __init__(self, spec, dim, rng):
        self.spec = spec
        self.dim = dim
        self.rng = rng if rng is not None else np.random.default_rng(0)
        model = _ConstModel if spec.leaf == "constant" else _LinModel
        self.store = _Store(dim)
        min_leaf = spec.resolved_min_leaf(dim)
        self.particles = [
            TreeParticle(self.store, model, min_leaf, spec.alpha, spec.beta_depth,
                         spec.max_split_candidates, dim)
            for _ in range(spec.particles)
        ]
        self.log_w = np.zeros(spec.particles)
        self.absorbed_since_rejuvenation = 0

    # -- construction ------------------------------------------------------

    @classmethod
    def fit(cls, sites, responses, spec, rng=None):
        """Stream a design in arrival order into a fresh ensemble."""
        X = np.atleast_2d(np.asarray(sites, float))
        y = np.asarray(responses, float)
        dim = X.shape[1]
        need = max(spec.resolved_min_leaf(dim), dim + 2)
        if X.shape[0] < need:
            raise ValueError(f"design of size {X.shape[0]} is below the minimum {need}")
        ens = cls(spec, dim, rng)
        ens._ingest(X, y, rejuvenate=False)
        return ens

    def update(self, sites, responses):
        """Stream a new batch; rejuvenate on the configured cadence."""
        X = np.atleast_2d(np.asarray(sites, float))
        if X.shape[0] == 0 or (X.ndim == 2 and X.size == 0):
            return self
        y = np.asarray(responses, float)
        self._ingest(X, y, rejuvenate=True)
        return self

    def _ingest(self, X, y, rejuvenate):
        base = self.store.n
        self.store.extend(X, y)
        many = len(self.particles) > 1
        for i in range(base, self.store.n):
            if many:
                self._reweight(i)
            for particle in self.particles:
                particle.absorb(i, self.rng)
            if many:
                self._maybe_resample()
            if rejuvenate:
                self.absorbed_since_rejuvenation += 1
                if self.absorbed_since_rejuvenation >= self.spec.rejuvenate_every:
                    self._rejuvenate()

    def _reweight(self, i):
        lps = [p.log_predictive(i) for p in self.particles]
        if any(lp is None for lp in lps):
            return
        self.log_w += np.asarray(lps)
        self.log_w -= self.log_w.max()

    def weights(self):
        w = np.exp(self.log_w - self.log_w.max())
        return w / w.sum()

    def _maybe_resample(self):
        w = self.weights()
        ess = 1.0 / float(w @ w)
        m = len(self.particles)
        if ess >= 0.5 * m:
            return
        u = (self.rng.random() + np.arange(m)) / m
        sel = np.searchsorted(np.cumsum(w), u, side="right")
        sel = np.minimum(sel, m - 1)
        used = set()
        fresh = []
        for s in sel:
            s = int(s)
            if s in used:
                fresh.append(self.particles[s].clone())
            else:
                fresh.append(self.particles[s])
                used.add(s)
        self.particles = fresh
        self.log_w = np.zeros(m)

    def _rejuvenate(self):
        for particle in self.particles:
            order = self.rng.permutation(self.store.n)
            particle.rebuild(order, self.rng)
        self.log_w = np.zeros(len(self.particles))
        self.absorbed_since_rejuvenation = 0

    # -- prediction --------------------------------------------------------

    @property
    def n_design(self):
        return self.store.n

    def predict_batch(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        flats = [p.flattened() for p in self.particles]
        w = self.weights()
        box_lo = self.store.X[: self.store.n].min(axis=0)
        box_hi = self.store.X[: self.store.n].max(axis=0)
        return _mix_predict(flats, w, X, self.dim, box_lo, box_hi)

    def freeze(self):
        """Immutable snapshot usable as a stopping-rule classifier."""
        flats = [p.flattened() for p in self.particles]
        w = self.weights()
        lo = self.store.X[: self.store.n].min(axis=0).copy()
        hi = self.store.X[: self.store.n].max(axis=0).copy()
        return FrozenTrees(flats, w.copy(), self.dim, lo, hi)

    def leaf_counts(self):
        return [len(p.leaves()) for p in self.particles]


def _mix_predict(flats, w, X, dim, box_lo, box_hi):
    m = X.shape[0]
    k = len(flats)
    means = np.empty((k, m))
    lat = np.empty((k, m))
    noise = np.empty((k, m))
    ln = np.empty((k, m))
    for a, flat in enumerate(flats):
        means[a], lat[a], noise[a], ln[a] = _particle_moments(flat, X, dim)
    mix_mean = w @ means
    spread = w @ (means - mix_mean) ** 2
    variance = spread + w @ lat
    noise_mix = w @ noise
    dof_terms = ln - dim - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        alc_k = np.where(
            ln > dim + 1, noise / np.maximum(dof_terms * (dof_terms + 1.0), 1e-300), ALC_SENTINEL
        )
    alc = w @ alc_k
    modal = int(np.argmax(w))
    leaf_count = ln[modal].astype(np.int64)
    dof = ln[modal] - dim - 1
    extrapolated = np.any((X < box_lo) | (X > box_hi), axis=1)
    return PosteriorBatch(
        mean=mix_mean,
        variance=variance,
        noise_var=noise_mix,
        leaf_count=leaf_count,
        dof=dof,
        alc=alc,
        extrapolated=extrapolated,
    )


class FrozenTrees:
    """Frozen tree ensemble: a deterministic classifier with a posterior."""

    def __init__(self, flats, weights, dim, box_lo, box_hi):
        self.flats = flats
        self.w = weights
        self.dim = dim
        self.box_lo = box_lo
        self.box_hi = box_hi

    def predict_batch(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return _mix_predict(self.flats, self.w, X, self.dim, self.box_lo, self.box_hi)

    def timing_mean(self, states):
        X = np.atleast_2d(np.asarray(states, float))
        out = np.zeros(X.shape[0])
        for wk, flat in zip(self.w, self.flats):
            out += wk * _particle_moments(flat, X, self.dim)[0]
        return out

    def posterior(self, states):
        batch = self.predict_batch(states)
        return batch.mean, batch.variance
