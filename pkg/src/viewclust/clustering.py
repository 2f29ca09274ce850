"""Joint-space online clustering of two views.

Centroids are seeded from attention-weighted tokens, tokens are assigned to
them by entropic optimal transport, and the closest pair of centroids (cosine)
is merged until two remain. The step with the lowest transport cost wins, and
clusters not hard-assigned in both views are pruned.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from viewclust import sinkhorn
from viewclust.errors import ConfigError, EmptyClusteringError, ShapeError, StateError
from viewclust.features import ViewPair, split_assignments

INIT_POLICIES = ("top_k", "multinomial")


@dataclass(frozen=True)
class ClusteringConfig:
    """Clustering hyperparameters.

    ``lambda_pos=math.inf`` clusters on the positional cost alone.
    ``normalize_centroids`` divides each updated centroid by its column mass; it
    is off by default.
    """

    k_start: int = 12
    lam: float = sinkhorn.DEFAULT_LAMBDA
    lambda_pos: float = 4.0
    init_policy: str = "top_k"
    seed: int | None = None
    tol: float = sinkhorn.DEFAULT_TOL
    max_iter: int = sinkhorn.DEFAULT_MAX_ITER
    normalize_centroids: bool = False

    def __post_init__(self):
        if int(self.k_start) != self.k_start or self.k_start < 2:
            raise ConfigError(f"k_start must be an integer >= 2, got {self.k_start}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if not self.lambda_pos >= 0:
            raise ConfigError(f"lambda_pos must be nonnegative, got {self.lambda_pos}")
        if self.init_policy not in INIT_POLICIES:
            raise ConfigError(f"init_policy must be one of {INIT_POLICIES}, got {self.init_policy!r}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError(f"max_iter must be a positive integer, got {self.max_iter}")


@dataclass(frozen=True)
class ClusteringState:
    centroids: np.ndarray  # k x d
    indicator: np.ndarray  # 2N x k, columns sum to 1
    cen_positions: np.ndarray  # k x 2

    @property
    def k(self):
        return self.centroids.shape[0]


@dataclass(frozen=True)
class ClusteringResult:
    q_joint: np.ndarray
    q_view1: np.ndarray
    q_view2: np.ndarray
    hard1: np.ndarray
    hard2: np.ndarray
    k_selected: int
    dc_trace: list
    pruned: int
    dropped: tuple = ()

    @property
    def n_clusters(self):
        return self.q_joint.shape[1]


@dataclass(frozen=True)
class MultiHeadResult:
    """Head-wise results concatenated along the cluster axis, in head order."""

    q_joint: np.ndarray
    q_view1: np.ndarray
    q_view2: np.ndarray
    hard1: np.ndarray
    hard2: np.ndarray
    heads: tuple = field(default=())

    @property
    def n_clusters(self):
        return self.q_joint.shape[1]

    @property
    def dc_traces(self):
        return [h.dc_trace for h in self.heads]

    @property
    def head_slices(self):
        out, start = [], 0
        for h in self.heads:
            out.append(slice(start, start + h.n_clusters))
            start += h.n_clusters
        return out


def select_tokens(weights, k, policy="top_k", rng=None):
    """Pick ``k`` distinct token indices from an attention distribution.

    ``top_k`` takes the heaviest tokens (ties to the lower index). ``multinomial``
    draws sequentially without replacement, proportional to the remaining
    weight; once the remaining weight is exhausted, the lowest free indices are
    used. Indices are returned sorted.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if k > n:
        raise ConfigError(f"cannot select {k} centroids from {n} tokens")
    if policy == "top_k":
        order = np.argsort(-w, kind="stable")
        return np.sort(order[:k])
    if policy != "multinomial":
        raise ConfigError(f"unknown init policy {policy!r}")
    if rng is None:
        rng = np.random.default_rng()
    remaining = w.copy()
    chosen = []
    for _ in range(k):
        total = remaining.sum()
        if total > 0:
            cdf = np.cumsum(remaining)
            idx = int(np.searchsorted(cdf, rng.random() * total, side="right"))
            idx = min(idx, n - 1)
            while remaining[idx] == 0:  # guard against landing on a zero-weight tail
                idx -= 1
        else:
            idx = int(np.flatnonzero(np.isin(np.arange(n), chosen, invert=True))[0])
        chosen.append(idx)
        remaining[idx] = 0.0
    return np.sort(np.array(chosen, dtype=np.int64))


def init_centroids(vp: ViewPair, cfg: ClusteringConfig, rng=None) -> ClusteringState:
    n2 = vp.z_cat.shape[0]
    if cfg.k_start > n2:
        raise ConfigError(f"k_start={cfg.k_start} exceeds the {n2} joint tokens")
    if rng is None and cfg.init_policy == "multinomial":
        rng = np.random.default_rng(cfg.seed)
    idx = select_tokens(vp.marginal, cfg.k_start, cfg.init_policy, rng)
    y = np.zeros((n2, cfg.k_start))
    y[idx, np.arange(cfg.k_start)] = 1.0
    return ClusteringState(
        centroids=y.T @ vp.z_cat, indicator=y, cen_positions=y.T @ vp.positions
    )


def semantic_cost(z_cat, centroids):
    """Negative dot products between every token and every centroid."""
    z = z_cat.z_cat if hasattr(z_cat, "z_cat") else np.asarray(z_cat, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if z.ndim != 2 or centroids.ndim != 2 or z.shape[1] != centroids.shape[1]:
        raise ShapeError(f"token shape {z.shape} and centroid shape {centroids.shape} disagree")
    return -(z @ centroids.T)


def centroid_marginal(state: ClusteringState, r):
    """Centroid distribution: softmax of the attention mass each centroid covers."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (state.indicator.shape[0],):
        raise ShapeError(f"marginal shape {r.shape} does not match indicator {state.indicator.shape}")
    m = state.indicator.T @ r
    e = np.exp(m - m.max())
    return e / e.sum()


def positional_cost(vp: ViewPair, cen_positions):
    diff = vp.positions[:, None, :] - np.asarray(cen_positions, dtype=np.float64)[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1)) / vp.diag_s


def total_cost(t_sem, t_pos, lambda_pos):
    t_sem = np.asarray(t_sem, dtype=np.float64)
    t_pos = np.asarray(t_pos, dtype=np.float64)
    if t_sem.shape != t_pos.shape:
        raise ShapeError(f"semantic cost {t_sem.shape} and positional cost {t_pos.shape} differ")
    if math.isinf(lambda_pos):
        return t_pos.copy()
    if lambda_pos == 0:
        return t_sem
    return t_sem + lambda_pos * t_pos


def _cosine_table(c):
    norms = np.linalg.norm(c, axis=1)
    unit = c / np.where(norms > 0, norms, 1.0)[:, None]
    return unit @ unit.T


def most_similar_pair(centroids):
    """Indices ``(i, j)``, ``i < j``, of the two rows with highest cosine similarity.

    Ties go to the lexicographically smallest pair; zero rows have cosine 0.
    """
    cos = _cosine_table(np.asarray(centroids, dtype=np.float64))
    k = cos.shape[0]
    iu, ju = np.triu_indices(k, 1)
    best = int(np.argmax(cos[iu, ju]))
    return int(iu[best]), int(ju[best])


def merge_most_similar(state: ClusteringState) -> ClusteringState:
    """Average the most similar pair of centroids into one.

    The merged centroid, indicator column and position take slot ``i`` and slot
    ``j`` is deleted.
    """
    if state.k < 3:
        raise StateError(f"refusing to merge below two centroids (k={state.k})")
    i, j = most_similar_pair(state.centroids)

    def combine(a, axis):
        a = np.array(a, copy=True)
        if axis == 0:
            a[i] = 0.5 * (a[i] + a[j])
        else:
            a[:, i] = 0.5 * (a[:, i] + a[:, j])
        return np.delete(a, j, axis=axis)

    return ClusteringState(
        centroids=combine(state.centroids, 0),
        indicator=combine(state.indicator, 1),
        cen_positions=combine(state.cen_positions, 0),
    )


def hard_assign(q):
    """One-hot of the row-wise argmax (ties to the lowest column)."""
    q = np.asarray(q)
    m = np.zeros(q.shape, dtype=np.int8)
    if q.shape[1]:
        m[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1
    return m


def _renormalize_rows(q):
    s = q.sum(axis=1, keepdims=True)
    uniform = np.full_like(q, 1.0 / q.shape[1]) if q.shape[1] else q
    return np.where(s > 0, q / np.where(s > 0, s, 1.0), uniform)


def prune(q1, q2):
    """Drop clusters that no token of either view is hard-assigned to.

    Returns ``(q1', q2', hard1, hard2, dropped)`` where ``dropped`` is the sorted
    tuple of removed column indices. Soft rows are renormalized over the kept
    columns (a row left with no mass becomes uniform).
    """
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    if q1.ndim != 2 or q2.ndim != 2 or q1.shape[1] != q2.shape[1]:
        raise ShapeError(f"view assignments {q1.shape} and {q2.shape} differ in cluster count")
    m1, m2 = hard_assign(q1), hard_assign(q2)
    empty = (m1.sum(axis=0) == 0) | (m2.sum(axis=0) == 0)
    dropped = tuple(int(k) for k in np.flatnonzero(empty))
    keep = ~empty
    if not keep.any():
        raise EmptyClusteringError("pruning removed every cluster")
    return (
        _renormalize_rows(q1[:, keep]),
        _renormalize_rows(q2[:, keep]),
        m1[:, keep],
        m2[:, keep],
        dropped,
    )


def select_k(dc_trace):
    """The k with the lowest transport cost; ties prefer the smaller k."""
    return min(dc_trace, key=lambda kd: (kd[1], kd[0]))[0]


def _result(q_norm, n, k, trace, do_prune=True):
    q1, q2 = split_assignments(q_norm, n)
    if do_prune:
        q1, q2, m1, m2, dropped = prune(q1, q2)
    else:
        m1, m2, dropped = hard_assign(q1), hard_assign(q2), ()
    return ClusteringResult(
        q_joint=np.concatenate([q1, q2]), q_view1=q1, q_view2=q2, hard1=m1, hard2=m2,
        k_selected=k, dc_trace=trace, pruned=len(dropped), dropped=dropped,
    )


def run(vp: ViewPair, cfg: ClusteringConfig = ClusteringConfig(), rng=None) -> ClusteringResult:
    """Cluster the joint tokens of a view pair.

    For k from ``cfg.k_start`` down to 2 the tokens are transported onto the
    current centroids under the total (semantic + positional) cost, the
    transport cost is recorded, centroids are recomputed from the plan and the
    closest pair is merged. The plan at the cheapest k is row-normalized and
    pruned. The seeded centroids get one unrecorded transport pass first.

    Raises
    ------
    EmptyClusteringError
        If pruning leaves no cluster. ``err.fallback`` carries the unpruned k=2
        result.
    """
    state = init_centroids(vp, cfg, rng)
    z = vp.z_cat
    r = vp.marginal

    def transport(state):
        t = semantic_cost(z, state.centroids)
        if cfg.lambda_pos > 0:
            t = total_cost(t, positional_cost(vp, state.cen_positions), cfg.lambda_pos)
        plan = sinkhorn.solve(
            t, r, centroid_marginal(state, r), lam=cfg.lam, tol=cfg.tol, max_iter=cfg.max_iter
        )
        centroids = plan.q.T @ z
        if cfg.normalize_centroids:
            mass = plan.q.sum(axis=0)
            centroids = centroids / np.where(mass > 0, mass, 1.0)[:, None]
        return plan, t, replace(state, centroids=centroids)

    # Seeded centroids are raw tokens while every later centroid is a
    # mass-weighted sum, so one unrecorded pass puts all recorded costs on the
    # same footing.
    _, _, state = transport(state)
    trace = []
    plans = {}
    while True:
        k = state.k
        plan, t, state = transport(state)
        trace.append((k, plan.cost))
        plans[k] = plan.row_normalized(t)
        if k == 2:
            break
        state = merge_most_similar(state)

    k_best = select_k(trace)
    try:
        return _result(plans[k_best], vp.n_per_view, k_best, trace)
    except EmptyClusteringError as err:
        raise EmptyClusteringError(
            str(err), fallback=_result(plans[2], vp.n_per_view, 2, trace, do_prune=False)
        ) from None


def multi_head_run(per_head, cfg: ClusteringConfig = ClusteringConfig(), max_workers=None):
    """Run :func:`run` on every head and concatenate the assignments column-wise.

    With a multinomial init policy each head draws from its own generator seeded
    by ``(cfg.seed, head index)``, so results do not depend on scheduling.
    """
    per_head = list(per_head)
    if not per_head:
        raise ShapeError("multi-head clustering needs at least one head")
    n = per_head[0].n_per_view
    for h, vp in enumerate(per_head):
        if vp.n_per_view != n:
            raise ShapeError(f"head {h} has {vp.n_per_view} tokens per view, head 0 has {n}")

    def one(h):
        rng = None
        if cfg.init_policy == "multinomial":
            rng = np.random.default_rng(None if cfg.seed is None else [cfg.seed, h])
        return run(per_head[h], cfg, rng)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            heads = tuple(pool.map(one, range(len(per_head))))
    else:
        heads = tuple(one(h) for h in range(len(per_head)))

    def cat(name, axis=1):
        return np.concatenate([getattr(r, name) for r in heads], axis=axis)

    return MultiHeadResult(
        q_joint=cat("q_joint"), q_view1=cat("q_view1"), q_view2=cat("q_view2"),
        hard1=cat("hard1"), hard2=cat("hard2"), heads=heads,
    )
