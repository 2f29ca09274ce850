"""Entropy-regularized optimal transport via log-domain Sinkhorn-Knopp scaling.

Solves ``min_Q <Q, T> - H(Q) / lam`` over couplings with row sums ``r`` and
column sums ``c``. The plan has the form ``Q = diag(u) exp(-lam T) diag(v)``;
we keep ``log u`` and ``log v`` as the dual potentials ``f`` and ``g``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from viewclust.errors import InputError, NumericalError, ShapeError

DEFAULT_LAMBDA = 20.0
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200
NEWTON_AFTER = 10
# lam * (max t - min t) above which lam is annealed up from a softer problem
ANNEAL_SPREAD = 50.0
ANNEAL_FACTOR = 4.0
ANNEAL_TOL = 1e-3
ANNEAL_STAGE_ITERS = 10
MAX_LOG_STEP = 5.0


@dataclass(frozen=True)
class TransportPlan:
    """Solver output. ``f`` and ``g`` are the log scalings of rows and columns."""

    q: np.ndarray
    cost: float
    iterations: int
    marginal_err: float
    f: np.ndarray
    g: np.ndarray
    lam: float
    tol: float = DEFAULT_TOL

    @property
    def converged(self):
        return self.marginal_err <= self.tol

    def row_normalized(self, t):
        """Rows of the plan rescaled to sum to one.

        Computed from the column potential alone (``softmax_k(g_k - lam t_nk)``)
        so that rows with vanishing mass are still defined.
        """
        return _softmax_rows(self.g[None, :] - self.lam * np.asarray(t, dtype=np.float64))


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _softmax_rows(a):
    a = a - np.max(a, axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def _check_simplex(v, name):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise InputError(f"{name} must be finite and nonnegative")
    if abs(v.sum() - 1.0) > 1e-9:
        raise InputError(f"{name} must sum to 1, sums to {v.sum():.12g}")
    return v


def _marginal_error(log_k, f, g, r, c):
    q = np.exp(log_k + f[:, None] + g[None, :])
    return float(max(np.max(np.abs(q.sum(axis=0) - c)), np.max(np.abs(q.sum(axis=1) - r))))


def _recenter(f, g):
    """Move a common offset from ``g`` into ``f``; the plan is unchanged."""
    finite = np.isfinite(g)
    if not finite.any():
        return f, g
    shift = np.max(g[finite])
    return f + shift, g - shift


def _dual(log_k, f, g, r, c, rows, cols):
    q = np.exp(log_k[np.ix_(rows, cols)] + f[rows, None] + g[None, cols])
    return r[rows] @ f[rows] + c[cols] @ g[cols] - q.sum()


def _newton_update(log_k, f, g, r, c):
    """One damped Newton ascent step on the entropic dual, returned as new ``g``.

    Returns None when no ascent step is found; the caller then falls back to a
    plain scaling update.

    The row block of the Hessian is diagonal, so it is eliminated and only the
    column Schur complement is solved. The dual is invariant to shifting mass
    between ``f`` and ``g``; the heaviest column potential is pinned to remove that
    direction. ``f`` is re-projected by the caller, so only ``g`` is returned.
    """
    rows = np.flatnonzero(r > 0)
    cols = np.flatnonzero(c > 0)
    if cols.size < 2:
        return None
    q = np.exp(log_k[np.ix_(rows, cols)] + f[rows, None] + g[None, cols])
    a = np.maximum(q.sum(axis=1), np.finfo(float).tiny)
    b = q.sum(axis=0)
    grad_f = r[rows] - a
    grad_g = c[cols] - b
    schur = np.diag(b) - q.T @ (q / a[:, None])
    rhs = grad_g - q.T @ (grad_f / a)
    free = np.arange(cols.size) != np.argmax(b)
    dg = np.zeros(cols.size)
    sub = schur[np.ix_(free, free)]
    sub[np.diag_indices_from(sub)] += 1e-12 * max(np.max(b), np.finfo(float).tiny)
    try:
        dg[free] = np.linalg.solve(sub, rhs[free])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(dg)):
        return None
    df = (grad_f - q @ dg) / a
    if not np.all(np.isfinite(df)):
        return None
    base = _dual(log_k, f, g, r, c, rows, cols)
    slope = grad_f @ df + grad_g @ dg
    # nearly disconnected plans have almost flat directions; cap the log-step
    step = min(1.0, MAX_LOG_STEP / max(np.max(np.abs(df)), np.max(np.abs(dg)), 1e-300))
    f_new, g_new = f.copy(), g.copy()
    with np.errstate(over="ignore"):
        for _ in range(30):
            f_new[rows] = f[rows] + step * df
            g_new[cols] = g[cols] + step * dg
            if _dual(log_k, f_new, g_new, r, c, rows, cols) >= base + 1e-4 * step * slope:
                return g_new
            step *= 0.5
    return None


def transport_cost(q, t) -> float:
    """Entry-wise product of plan and cost, summed."""
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if q.shape != t.shape:
        raise ShapeError(f"plan shape {q.shape} does not match cost shape {t.shape}")
    return float(np.sum(q * t))


def solve(
    t, r, c, lam=DEFAULT_LAMBDA, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
    method="newton", newton_after=NEWTON_AFTER,
):
    """Run Sinkhorn-Knopp on cost ``t`` with marginals ``r`` (rows) and ``c`` (columns).

    Iteration stops once the worst marginal violation is at most ``tol`` or after
    ``max_iter`` sweeps; an unconverged plan is returned with its error rather
    than raising.

    With ``method="newton"`` the column half-sweep is replaced, after
    ``newton_after`` plain sweeps, by a damped Newton step on the dual. Plain
    scaling slows to a crawl once ``lam * (max t - min t)`` is large; the Newton
    phase keeps the same fixed point and the same ``diag(u) K diag(v)`` form.
    Very sharp problems are also annealed: ``lam`` is raised geometrically from
    a soft value, warm-starting each stage. Every sweep of every stage counts
    against ``max_iter``.

    Parameters
    ----------
    t : (n, k) array
        Assignment costs.
    r, c : 1-D arrays on the simplex
    lam : float
        Inverse entropic temperature; larger values give sharper plans.

    Returns
    -------
    TransportPlan
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
        raise ShapeError(f"cost matrix must be a non-empty 2-D array, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise InputError("cost matrix contains non-finite entries")
    r = _check_simplex(r, "row marginal")
    c = _check_simplex(c, "column marginal")
    if r.shape[0] != t.shape[0] or c.shape[0] != t.shape[1]:
        raise ShapeError(
            f"marginals of sizes {r.shape[0]}, {c.shape[0]} do not match cost shape {t.shape}"
        )
    if not lam > 0:
        raise InputError(f"lambda must be positive, got {lam}")
    if not tol > 0:
        raise InputError(f"tolerance must be positive, got {tol}")
    if method not in ("newton", "sinkhorn"):
        raise InputError(f"unknown solver method {method!r}")

    with np.errstate(divide="ignore"):
        log_r = np.log(r)
        log_c = np.log(c)

    with np.errstate(over="ignore"):
        spread = lam * float(t.max() - t.min())
    schedule = [lam]
    if method == "newton" and spread > ANNEAL_SPREAD:
        # stages past half the budget could never reach the target anyway
        n_stages = min(math.log(spread / ANNEAL_SPREAD, ANNEAL_FACTOR), max_iter // (2 * ANNEAL_STAGE_ITERS))
        n_stages = math.ceil(n_stages)
        schedule = [lam / ANNEAL_FACTOR**s for s in range(n_stages, 0, -1)] + [lam]

    f = np.zeros(t.shape[0])
    g = np.zeros(t.shape[1])
    err = np.inf
    it = 0
    prev = schedule[0]
    for stage_no, lam_s in enumerate(schedule):
        final = stage_no == len(schedule) - 1
        # potentials live in log space; rescale them to the new temperature
        f = np.where(np.isfinite(f), f * (lam_s / prev), f)
        g = g * (lam_s / prev)
        prev = lam_s
        log_k = -lam_s * t
        stage_tol = tol if final else max(tol, ANNEAL_TOL)
        stage_it = 0
        while it < max_iter and (final or stage_it < ANNEAL_STAGE_ITERS):
            it += 1
            stage_it += 1
            g_next = None
            if method == "newton" and (stage_no > 0 or stage_it > newton_after):
                g_next = _newton_update(log_k, f, g, r, c)
            if g_next is None:
                g_next = log_c - _logsumexp(log_k + f[:, None], axis=0)
            g = g_next
            f = log_r - _logsumexp(log_k + g[None, :], axis=1)
            f, g = _recenter(f, g)
            err = _marginal_error(log_k, f, g, r, c)
            if err <= stage_tol:
                break

    if prev != lam:  # budget ran out before the last stage
        g = g * (lam / prev)
        log_k = -lam * t
        f = log_r - _logsumexp(log_k + g[None, :], axis=1)
        err = _marginal_error(log_k, f, g, r, c)

    q = np.exp(log_k + f[:, None] + g[None, :])
    if not np.all(np.isfinite(q)):
        bad = np.argwhere(~np.isfinite(q))[0]
        raise NumericalError(f"non-finite transport plan entry at row {bad[0]}, column {bad[1]}")
    empty_rows = np.flatnonzero((q.sum(axis=1) == 0) & (r > 0))
    if empty_rows.size:
        raise NumericalError(f"transport plan row {empty_rows[0]} underflowed to zero")
    empty_cols = np.flatnonzero((q.sum(axis=0) == 0) & (c > 0))
    if empty_cols.size:
        raise NumericalError(f"transport plan column {empty_cols[0]} underflowed to zero")
    return TransportPlan(
        q=q, cost=transport_cost(q, t), iterations=it, marginal_err=float(err),
        f=f, g=g, lam=float(lam), tol=float(tol),
    )
