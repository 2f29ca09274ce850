"""Centroid pooling and the dense / global self-distillation losses.

Forward-only: inputs are plain arrays, outputs are floats. The projection head
is a single affine map followed by a temperature-scaled softmax.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from viewclust.errors import InputError, ShapeError

TAU_TEACHER = 0.07
TAU_STUDENT = 0.1
ALPHA = 1.0
DENSE_DIM = 8192
GLOBAL_DIM = 65536
LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class ProjectionParams:
    weight: np.ndarray  # L x d
    bias: np.ndarray  # L
    temperature: float

    def __post_init__(self):
        w = np.asarray(self.weight)
        b = np.asarray(self.bias)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"weight {w.shape} and bias {b.shape} are inconsistent")
        if not self.temperature > 0:
            raise InputError(f"temperature must be positive, got {self.temperature}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("projection parameters must be finite")

    def with_temperature(self, temperature):
        return ProjectionParams(self.weight, self.bias, temperature)


def pool_centroids(z, q):
    """Soft-pooled centroids ``q.T @ z``: one row per cluster."""
    z = np.asarray(z, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if z.ndim != 2 or q.ndim != 2 or z.shape[0] != q.shape[0]:
        raise ShapeError(f"features {z.shape} and assignments {q.shape} disagree on token count")
    return q.T @ z


def softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def project_softmax(c, p: ProjectionParams):
    """Map centroids (K x d, or a single d-vector) to probability rows over L."""
    c = np.asarray(c, dtype=np.float64)
    w = np.asarray(p.weight, dtype=np.float64)
    if c.shape[-1] != w.shape[1]:
        raise ShapeError(f"centroid dim {c.shape[-1]} does not match projection input {w.shape[1]}")
    return softmax((c @ w.T + p.bias) / p.temperature)


def cross_entropy_rows(a, b):
    """Mean over rows of ``-sum_l a_l log b_l``.

    Zeros in ``a`` contribute nothing; ``b`` is clamped at 1e-12 before the log.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare probability rows of shapes {a.shape} and {b.shape}")
    a2 = np.atleast_2d(a)
    logb = np.log(np.maximum(np.atleast_2d(b), LOG_CLAMP))
    terms = np.where(a2 > 0, a2 * logb, 0.0)
    return float(-terms.sum() / a2.shape[0]) + 0.0  # no negative zero


def _symmetric(pt1, ps2, pt2, ps1):
    for x, y, name in ((pt1, ps2, "view-1 teacher / view-2 student"),
                       (pt2, ps1, "view-2 teacher / view-1 student")):
        if np.shape(x) != np.shape(y):
            raise ShapeError(f"{name} shapes differ: {np.shape(x)} vs {np.shape(y)}")
    return 0.5 * (cross_entropy_rows(pt1, ps2) + cross_entropy_rows(pt2, ps1))


def dense_loss(pt1, ps2, pt2, ps1):
    """Cross-view cluster-level distillation loss.

    Each teacher row of one view is matched with the student row of the same
    cluster in the other view, so both members of a pair need the same K.
    """
    return _symmetric(pt1, ps2, pt2, ps1)


def global_loss(pt1, ps2, pt2, ps1):
    """Cross-view image-level loss over single probability vectors."""
    for v in (pt1, ps2, pt2, ps1):
        if np.ndim(v) != 1:
            raise ShapeError(f"global distributions must be vectors, got shape {np.shape(v)}")
    return _symmetric(pt1, ps2, pt2, ps1)


def total_loss(dense, glob, alpha=ALPHA):
    if not alpha >= 0:
        raise InputError(f"alpha must be nonnegative, got {alpha}")
    return alpha * dense + glob


def distillation_losses(z1, z2, q1, q2, head: ProjectionParams,
                        tau_t=TAU_TEACHER, tau_s=TAU_STUDENT, alpha=ALPHA,
                        z1_student=None, z2_student=None):
    """Dense, global and total losses for one image from per-view tokens.

    Teacher and student share ``head`` and differ in temperature. Student
    features default to the teacher's. The image-level representation of a
    view is the mean of its tokens.
    """
    z1_student = z1 if z1_student is None else z1_student
    z2_student = z2 if z2_student is None else z2_student
    teacher = head.with_temperature(tau_t)
    student = head.with_temperature(tau_s)

    pt1 = project_softmax(pool_centroids(z1, q1), teacher)
    pt2 = project_softmax(pool_centroids(z2, q2), teacher)
    ps1 = project_softmax(pool_centroids(z1_student, q1), student)
    ps2 = project_softmax(pool_centroids(z2_student, q2), student)
    dense = dense_loss(pt1, ps2, pt2, ps1)

    gt1 = project_softmax(np.mean(z1, axis=0), teacher)
    gt2 = project_softmax(np.mean(z2, axis=0), teacher)
    gs1 = project_softmax(np.mean(z1_student, axis=0), student)
    gs2 = project_softmax(np.mean(z2_student, axis=0), student)
    glob = global_loss(gt1, gs2, gt2, gs1)
    return dense, glob, total_loss(dense, glob, alpha)
