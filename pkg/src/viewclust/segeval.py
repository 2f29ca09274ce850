"""Unsupervised segmentation evaluation.

Spatial features of every image are pooled and clustered with K-Means into as
many clusters as there are classes. Clusters are mapped to classes with an
exact Hungarian matching on co-occurrence counts, then scored by mean IoU.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from viewclust.errors import ConfigError, InputError, ShapeError

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def _sq_dists(x, c):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(x, k, rng):
    """D^2-weighted seeding; returns ``k`` row indices of ``x``."""
    m = x.shape[0]
    idx = [int(rng.integers(m))]
    d2 = _sq_dists(x, x[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, m - 1)
        else:  # all remaining points coincide with a centre
            free = np.setdiff1d(np.arange(m), idx)
            nxt = int(free[rng.integers(free.size)])
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[nxt : nxt + 1])[:, 0])
    return np.array(idx)


def kmeans(features, k, seed=0, max_iter=300, history=None):
    """Lloyd's algorithm from k-means++ seeding.

    Runs until the assignment stops changing or ``max_iter`` rounds. A cluster
    that empties is reseeded at the point farthest from its current centre.
    If ``history`` is a list, the inertia after each assignment step is
    appended to it.

    Returns
    -------
    labels : (M,) int array
    centroids : (k, d) array
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {x.shape}")
    m = x.shape[0]
    if k < 1 or k > m:
        raise ConfigError(f"cannot form {k} clusters from {m} points")
    rng = np.random.default_rng(seed)
    centroids = x[kmeans_plusplus(x, k, rng)].copy()
    labels = None
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=k)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2[np.arange(m), new]))
            new[far] = j
            d2[far, j] = 0.0
            counts = np.bincount(new, minlength=k)
        if history is not None:
            history.append(float(d2[np.arange(m), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centroids[j] = x[labels == j].mean(axis=0)
    return labels, centroids


def hungarian(cost):
    """Minimum-cost perfect matching on a square matrix.

    Shortest augmenting paths with row/column potentials, O(n^3). Returns
    ``perm`` with ``perm[i]`` the column matched to row ``i``.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"Hungarian matching needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("cost matrix contains non-finite entries")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[col] = row, 1-based; 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[match[1:] - 1] = np.arange(n)
    return perm


def confusion_matrix(gt, pred, n_classes, n_pred=None):
    """Counts with rows = ground-truth class, columns = predicted label."""
    n_pred = n_classes if n_pred is None else n_pred
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction and ground truth sizes differ: {pred.size} vs {gt.size}")
    if gt.size and (gt.min() < 0 or gt.max() >= n_classes):
        raise InputError("ground-truth label out of range")
    if pred.size and (pred.min() < 0 or pred.max() >= n_pred):
        raise InputError("prediction label out of range")
    flat = gt.astype(np.int64) * n_pred + pred.astype(np.int64)
    return np.bincount(flat, minlength=n_classes * n_pred).reshape(n_classes, n_pred)


def miou(pred, gt, n_classes):
    """Per-class IoU and their mean.

    Classes absent from both masks get NaN and are left out of the mean.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    conf = confusion_matrix(gt, pred, n_classes)
    return _iou_from_matched(conf, np.arange(n_classes))


def _iou_from_matched(conf, cluster_of_class):
    """IoU per class given which confusion column predicts it (-1: none)."""
    n_classes = conf.shape[0]
    gt_count = conf.sum(axis=1)
    per_class = np.full(n_classes, np.nan)
    for c in range(n_classes):
        k = cluster_of_class[c]
        tp = conf[c, k] if k >= 0 else 0
        pred_count = conf[:, k].sum() if k >= 0 else 0
        union = pred_count + gt_count[c] - tp
        if union > 0:
            per_class[c] = tp / union
    valid = ~np.isnan(per_class)
    mean = float(per_class[valid].mean()) if valid.any() else float("nan")
    return per_class, mean


def match_clusters(pred, gt, n_clusters, n_classes):
    """Label clusters by maximizing class/cluster co-occurrence, then score.

    Cluster and class counts may differ; the matching is padded to a square
    with zero co-occurrence, and a class left without a real cluster scores 0.
    Returns ``(per_class_iou, mean_iou)``.
    """
    conf = confusion_matrix(gt, pred, n_classes, n_clusters)
    n = max(n_clusters, n_classes)
    padded = np.zeros((n, n))
    padded[:n_classes, :n_clusters] = conf
    perm = hungarian(-padded)
    cluster_of_class = np.where(perm[:n_classes] < n_clusters, perm[:n_classes], -1)
    return _iou_from_matched(conf, cluster_of_class)


@dataclass(frozen=True)
class SegReport:
    miou: float
    per_class: np.ndarray  # averaged over seeds, NaN where never present
    per_seed: tuple


def unsupervised_report(dataset, n_classes, seeds=DEFAULT_SEEDS, max_workers=None):
    """K-Means + Hungarian + mIoU over ``dataset``, averaged over ``seeds``.

    ``dataset`` is an iterable of ``(features, labels)`` with one feature row
    per labelled position.
    """
    feats, labels = [], []
    dim = None
    for i, (z, y) in enumerate(dataset):
        z = np.asarray(z, dtype=np.float64)
        y = np.asarray(y).ravel()
        if z.ndim != 2 or z.shape[0] != y.size:
            raise ShapeError(f"image {i}: {z.shape[0] if z.ndim == 2 else z.shape} features vs {y.size} labels")
        if dim is not None and z.shape[1] != dim:
            raise ShapeError(f"image {i}: feature dim {z.shape[1]} differs from {dim}")
        dim = z.shape[1]
        feats.append(z)
        labels.append(y)
    if not feats:
        raise InputError("dataset is empty")
    x = np.concatenate(feats)
    y = np.concatenate(labels)
    seeds = tuple(seeds)
    if not seeds:
        raise ConfigError("need at least one seed")

    def one(seed):
        pred, _ = kmeans(x, n_classes, seed=seed)
        return match_clusters(pred, y, n_classes, n_classes)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            runs = list(pool.map(one, seeds))
    else:
        runs = [one(s) for s in seeds]
    per_class = np.array([r[0] for r in runs])
    with np.errstate(invalid="ignore"):
        present = ~np.all(np.isnan(per_class), axis=0)
        avg = np.full(n_classes, np.nan)
        avg[present] = np.nanmean(per_class[:, present], axis=0)
    return SegReport(
        miou=float(np.mean([r[1] for r in runs])), per_class=avg,
        per_seed=tuple(r[1] for r in runs),
    )


def evaluate_unsupervised(dataset, n_classes, seeds=DEFAULT_SEEDS):
    """Mean mIoU of the K-Means/Hungarian protocol, averaged over ``seeds``."""
    return unsupervised_report(dataset, n_classes, seeds).miou
