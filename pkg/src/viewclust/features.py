"""Token features, attention marginals, crop geometry and view joining.

Everything here is immutable: arrays stored on the dataclasses are copies with
the writeable flag cleared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from viewclust.errors import ShapeError, InputError


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def as_features(z, name="features") -> np.ndarray:
    """Validate an N x d token matrix and return it as float64."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {z.shape}")
    if z.shape[0] < 1 or z.shape[1] < 1:
        raise ShapeError(f"{name} must have N >= 1 and d >= 1, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InputError(f"{name} contains non-finite values")
    return z


@dataclass(frozen=True)
class JointRepresentation:
    z_cat: np.ndarray
    n_per_view: int

    def __post_init__(self):
        if self.z_cat.shape[0] != 2 * self.n_per_view:
            raise ShapeError(
                f"joint matrix has {self.z_cat.shape[0]} rows, expected 2*{self.n_per_view}"
            )

    @property
    def view1(self):
        return self.z_cat[: self.n_per_view]

    @property
    def view2(self):
        return self.z_cat[self.n_per_view :]


def join(z1, z2) -> JointRepresentation:
    """Stack the tokens of two views: rows of ``z1`` then rows of ``z2``."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ShapeError(f"cannot join views of shapes {z1.shape} and {z2.shape}")
    as_features(z1, "view 1 features")
    as_features(z2, "view 2 features")
    return JointRepresentation(_frozen(np.concatenate([z1, z2], axis=0)), z1.shape[0])


def split_assignments(q, n_per_view):
    """Split a 2N x K matrix into its two N x K view blocks (views, not copies)."""
    q = np.asarray(q)
    if q.ndim != 2:
        raise ShapeError(f"assignment matrix must be 2-D, got shape {q.shape}")
    if n_per_view < 1 or q.shape[0] != 2 * n_per_view:
        raise ShapeError(
            f"cannot split {q.shape[0]} rows into two views of {n_per_view} tokens"
        )
    return q[:n_per_view], q[n_per_view:]


def attention_marginal(*weights) -> np.ndarray:
    """Concatenate per-view attention weights and renormalize onto the simplex."""
    r = np.concatenate([np.asarray(w, dtype=np.float64).ravel() for w in weights])
    if r.size == 0:
        raise ShapeError("attention marginal is empty")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise InputError("attention weights must be finite and nonnegative")
    total = r.sum()
    if total <= 0:
        raise InputError("attention weights sum to zero")
    return _frozen(r / total)


@dataclass(frozen=True)
class CropGeometry:
    """A crop of the original image, in original-image pixels.

    ``grid_n`` is the number of patches per side of the resized view. ``hflip``
    marks a horizontally mirrored view.
    """

    x0: float
    y0: float
    width: float
    height: float
    grid_n: int
    hflip: bool = False

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InputError(f"crop size must be positive, got {self.width}x{self.height}")
        if int(self.grid_n) != self.grid_n or self.grid_n < 1:
            raise InputError(f"grid_n must be a positive integer, got {self.grid_n}")
        if not all(math.isfinite(v) for v in (self.x0, self.y0, self.width, self.height)):
            raise InputError("crop geometry must be finite")

    @property
    def n_tokens(self):
        return self.grid_n * self.grid_n

    @property
    def x1(self):
        return self.x0 + self.width

    @property
    def y1(self):
        return self.y0 + self.height

    def check_within(self, image_width, image_height):
        if self.x0 < 0 or self.y0 < 0 or self.x1 > image_width or self.y1 > image_height:
            raise InputError(
                f"crop ({self.x0}, {self.y0}, {self.width}, {self.height}) "
                f"exceeds the {image_width}x{image_height} image"
            )


def patch_positions(geom: CropGeometry) -> np.ndarray:
    """Patch centres of a crop, row-major, in original-image coordinates."""
    n = geom.grid_n
    i, j = np.divmod(np.arange(n * n), n)
    if geom.hflip:
        j = n - 1 - j
    x = geom.x0 + (j + 0.5) * geom.width / n
    y = geom.y0 + (i + 0.5) * geom.height / n
    return _frozen(np.stack([x, y], axis=1))


def image_diagonal(width, height):
    return math.hypot(width, height)


@dataclass(frozen=True)
class ViewPair:
    """Joint tokens of two views plus everything the clustering needs about them.

    ``positions`` is the 2N x 2 stack of patch centres; ``diag_s`` normalizes
    token-centroid distances into [0, 1].
    """

    joint: JointRepresentation
    marginal: np.ndarray
    positions: np.ndarray
    diag_s: float

    def __post_init__(self):
        n2 = self.joint.z_cat.shape[0]
        if self.marginal.shape != (n2,):
            raise ShapeError(f"marginal has shape {self.marginal.shape}, expected ({n2},)")
        if abs(self.marginal.sum() - 1.0) > 1e-9 or np.any(self.marginal < 0):
            raise InputError("marginal must lie on the simplex")
        if self.positions.shape != (n2, 2):
            raise ShapeError(f"positions have shape {self.positions.shape}, expected ({n2}, 2)")
        if not self.diag_s > 0:
            raise InputError(f"normalization constant must be positive, got {self.diag_s}")

    @property
    def n_per_view(self):
        return self.joint.n_per_view

    @property
    def z_cat(self):
        return self.joint.z_cat


def make_view_pair(z1, z2, attn1=None, attn2=None, geom1=None, geom2=None, image_size=None):
    """Assemble a :class:`ViewPair` from per-view inputs.

    Attention defaults to uniform. Without geometry, both views are laid out on
    the unit square so positional costs are still well defined. ``image_size``
    defaults to the smallest image anchored at the origin containing both crops.
    """
    joint = join(z1, z2)
    n = joint.n_per_view
    if attn1 is None:
        attn1 = np.ones(n)
    if attn2 is None:
        attn2 = np.ones(n)
    if np.size(attn1) != n or np.size(attn2) != n:
        raise ShapeError(f"attention sizes {np.size(attn1)}, {np.size(attn2)} do not match N={n}")
    marginal = attention_marginal(attn1, attn2)

    if geom1 is None and geom2 is None:
        side = math.isqrt(n)
        if side * side == n:
            geom1 = geom2 = CropGeometry(0.0, 0.0, 1.0, 1.0, side)
        else:
            pos = np.zeros((n, 2))
            pos[:, 0] = (np.arange(n) + 0.5) / n
            positions = np.concatenate([pos, pos])
            return ViewPair(joint, marginal, _frozen(positions), image_diagonal(1.0, 1.0))
    if geom1 is None or geom2 is None:
        raise InputError("geometry must be given for both views or neither")
    for g in (geom1, geom2):
        if g.n_tokens != n:
            raise ShapeError(f"crop grid {g.grid_n}x{g.grid_n} does not match N={n}")
    if image_size is None:
        image_size = (max(geom1.x1, geom2.x1), max(geom1.y1, geom2.y1))
    w, h = image_size
    geom1.check_within(w, h)
    geom2.check_within(w, h)
    positions = np.concatenate([patch_positions(geom1), patch_positions(geom2)])
    return ViewPair(joint, marginal, _frozen(positions), image_diagonal(w, h))
