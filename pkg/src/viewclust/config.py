"""Run configuration files and crop geometry sidecars.

A config file holds ``key = value`` lines; ``#`` starts a comment. Every key
is optional, but unknown or repeated keys are rejected. A geometry sidecar is a
single line ``x0 y0 w h grid_n hflip``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

from viewclust import distill, sinkhorn
from viewclust.clustering import ClusteringConfig
from viewclust.errors import ConfigError, InputError
from viewclust.features import CropGeometry


@dataclass(frozen=True)
class RunConfig:
    k_start: int = 12
    lam: float = sinkhorn.DEFAULT_LAMBDA
    lambda_pos: float = 4.0
    tau_t: float = distill.TAU_TEACHER
    tau_s: float = distill.TAU_STUDENT
    alpha: float = distill.ALPHA
    init_policy: str = "top_k"
    seed: int = 0
    tol: float = sinkhorn.DEFAULT_TOL
    max_iter: int = sinkhorn.DEFAULT_MAX_ITER

    def __post_init__(self):
        self.clustering()  # validates the shared fields
        for name in ("tau_t", "tau_s"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive and finite, got {v}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be nonnegative and finite, got {self.alpha}")

    def clustering(self) -> ClusteringConfig:
        return ClusteringConfig(
            k_start=self.k_start, lam=self.lam, lambda_pos=self.lambda_pos,
            init_policy=self.init_policy, seed=self.seed, tol=self.tol, max_iter=self.max_iter,
        )


# file key -> (attribute, parser)
_KEYS = {
    "k_start": ("k_start", int),
    "lambda": ("lam", float),
    "lambda_pos": ("lambda_pos", float),
    "tau_t": ("tau_t", float),
    "tau_s": ("tau_s", float),
    "alpha": ("alpha", float),
    "init_policy": ("init_policy", str),
    "seed": ("seed", int),
    "tol": ("tol", float),
    "max_iter": ("max_iter", int),
}


def parse_config(text: str) -> RunConfig:
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: key {key!r} already set on line {seen[key]}")
        seen[key] = lineno
        attr, conv = _KEYS[key]
        try:
            values[attr] = conv(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    attr_to_key = {attr: key for key, (attr, _) in _KEYS.items()}
    return "".join(f"{attr_to_key[f.name]} = {getattr(cfg, f.name)!r}\n".replace("'", "")
                   for f in fields(cfg))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


_TRUE = {"1", "true", "yes"}
_FALSE = {"0", "false", "no"}


def parse_geometry(text: str) -> CropGeometry:
    parts = text.split("#", 1)[0].split()
    if len(parts) != 6:
        raise InputError(f"geometry needs 6 fields (x0 y0 w h grid_n hflip), got {len(parts)}")
    try:
        x0, y0, w, h = (float(p) for p in parts[:4])
        grid_n = int(parts[4])
    except ValueError:
        raise InputError(f"bad geometry fields: {text.strip()!r}") from None
    flag = parts[5].lower()
    if flag not in _TRUE | _FALSE:
        raise InputError(f"hflip must be 0 or 1, got {parts[5]!r}")
    return CropGeometry(x0, y0, w, h, grid_n, flag in _TRUE)


def format_geometry(g: CropGeometry) -> str:
    return f"{g.x0!r} {g.y0!r} {g.width!r} {g.height!r} {g.grid_n} {int(g.hflip)}\n"


def load_geometry(path) -> CropGeometry:
    with open(path, encoding="utf-8") as fh:
        return parse_geometry(fh.read())
