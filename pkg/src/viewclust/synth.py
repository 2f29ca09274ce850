"""Synthetic two-view scenes with known cluster labels.

The original image is split into vertical stripes, one per blob. Each patch
takes the feature mean of the stripe its centre falls in, plus isotropic
Gaussian noise. The two crops share the image height and overlap horizontally
by a configurable fraction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from viewclust.errors import ConfigError
from viewclust.features import CropGeometry, make_view_pair, patch_positions


@dataclass(frozen=True)
class SynthScene:
    z1: np.ndarray
    z2: np.ndarray
    attn1: np.ndarray
    attn2: np.ndarray
    geom1: CropGeometry
    geom2: CropGeometry
    image_size: tuple
    labels1: np.ndarray
    labels2: np.ndarray
    means: np.ndarray

    @property
    def labels(self):
        return np.concatenate([self.labels1, self.labels2])

    def view_pair(self):
        return make_view_pair(
            self.z1, self.z2, self.attn1, self.attn2, self.geom1, self.geom2, self.image_size
        )


def blob_means(n_blobs, d, separation, sigma, rng):
    """Orthogonal blob centres with pairwise distance ``separation * sigma``."""
    if d < n_blobs:
        raise ConfigError(f"need d >= number of blobs for orthogonal centres, got d={d}, blobs={n_blobs}")
    basis, _ = np.linalg.qr(rng.standard_normal((d, n_blobs)))
    return basis.T * (separation * sigma / math.sqrt(2.0))


def synth(n_blobs=2, separation=20.0, sigma=1.0, n=64, d=16, seed=0, overlap=0.5, crop=224.0):
    """Generate a :class:`SynthScene`.

    ``n`` is the token count per view and must be a perfect square.
    """
    grid = math.isqrt(n)
    if n < 1 or grid * grid != n:
        raise ConfigError(f"tokens per view must be a positive perfect square, got {n}")
    if n_blobs < 1:
        raise ConfigError(f"need at least one blob, got {n_blobs}")
    if not 0.0 <= overlap <= 1.0:
        raise ConfigError(f"overlap must lie in [0, 1], got {overlap}")
    if not sigma >= 0 or not separation >= 0:
        raise ConfigError("sigma and separation must be nonnegative")

    rng = np.random.default_rng(seed)
    means = blob_means(n_blobs, d, separation, sigma, rng)
    width = crop * (2.0 - overlap)
    geom1 = CropGeometry(0.0, 0.0, crop, crop, grid)
    geom2 = CropGeometry(width - crop, 0.0, crop, crop, grid)

    def view(geom):
        x = patch_positions(geom)[:, 0]
        labels = np.minimum((x / width * n_blobs).astype(np.int64), n_blobs - 1)
        z = means[labels] + sigma * rng.standard_normal((n, d))
        return z, labels

    z1, labels1 = view(geom1)
    z2, labels2 = view(geom2)
    return SynthScene(
        z1=z1, z2=z2, attn1=np.ones(n), attn2=np.ones(n), geom1=geom1, geom2=geom2,
        image_size=(width, crop), labels1=labels1, labels2=labels2, means=means,
    )
