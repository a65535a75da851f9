"""Primal side: upper McShane extension and its convex envelope.

The envelope is

    f_N(x) = min over lambda in the simplex of
             sum_n lambda_n y_n + L * || x - sum_n lambda_n xi_n ||,

which interpolates the data and is the largest convex L-Lipschitz minorant
of the McShane extension. The default solver is a log-barrier interior
point method on the second-order-cone form of the problem; Frank-Wolfe with
an exact line search is available as a cheap alternative. Tiny instances are
additionally solved on a refined simplex grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.optimize import linprog

from .geometry import SampleSet, as_points, as_vector

DEFAULT_BUDGET = 500
GRID_STEP = 1e-3
GRID_TOL = 1e-6
BARRIER_GAP = 1e-11


@dataclass(frozen=True)
class EnvelopeResult:
    value: float
    weights: np.ndarray
    iterations: int
    converged: bool
    dual_gap: float


def _require_lipschitz(samples: SampleSet) -> float:
    if samples.lipschitz is None:
        raise ValueError("this operation needs a sample set with a Lipschitz constant")
    return samples.lipschitz


def mcshane_upper(samples: SampleSet, x) -> float:
    L = _require_lipschitz(samples)
    x = as_vector(x, samples.dim)
    dist = np.linalg.norm(samples.points - x, axis=1)
    return float(np.min(samples.values + L * dist))


def _segment_argmin(c1: float, L: float, r: np.ndarray, u: np.ndarray) -> float:
    """argmin over g in [0, 1] of ``c1*g + L*||r - g*u||`` (convex in g)."""
    a = float(u @ u)
    if a == 0.0:
        return 1.0 if c1 < 0 else 0.0
    b = float(r @ u)
    g0 = b / a
    h2 = max(float(r @ r) - b * b / a, 0.0)
    kappa = -c1 / (L * math.sqrt(a))
    if kappa >= 1.0:
        return 1.0
    if kappa <= -1.0:
        return 0.0
    if h2 == 0.0:
        g = g0
    else:
        g = g0 + kappa * math.sqrt(h2) / math.sqrt(1.0 - kappa * kappa) / math.sqrt(a)
    return min(max(g, 0.0), 1.0)


def _objective(lam: np.ndarray, y: np.ndarray, pts: np.ndarray, L: float, x: np.ndarray) -> float:
    return float(lam @ y + L * np.linalg.norm(x - lam @ pts))


def _frank_wolfe(y, pts, L, x, budget, tol=1e-12):
    n = y.size
    start = int(np.argmin(y + L * np.linalg.norm(pts - x, axis=1)))
    lam = np.zeros(n)
    lam[start] = 1.0
    z = pts[start].copy()
    lin = float(y[start])
    best = lin + L * float(np.linalg.norm(x - z))
    gap = math.inf
    it = 0
    for it in range(1, budget + 1):
        r = x - z
        rn = float(np.linalg.norm(r))
        # subgradient of the norm at zero residual is taken to be zero
        grad = y - (L / rn) * (pts @ r) if rn > 0 else y.copy()
        s = int(np.argmin(grad))
        gap = float(grad @ lam - grad[s])
        if gap <= tol * (1.0 + abs(best)):
            break
        u = pts[s] - z
        g = _segment_argmin(float(y[s]) - lin, L, r, u)
        if g == 0.0:
            break
        lam *= 1.0 - g
        lam[s] += g
        z = z + g * u
        lin = lin + g * (float(y[s]) - lin)
        value = lin + L * float(np.linalg.norm(x - z))
        if value > best:
            # exact line search cannot increase the objective; guard rounding
            break
        best = value
    best = min(best, _objective(lam, y, pts, L, x))
    return best, lam, it, gap


def _barrier(y, pts, L, x, budget, gap_tol=BARRIER_GAP):
    """Minimise ``y.lam + L t`` subject to ``t >= ||x - pts.T lam||`` on the simplex.

    Standard barrier path-following: Newton steps on
    ``tau * objective - sum log lam - log(t^2 - ||r||^2)`` with the simplex
    equality handled through the KKT system. ``budget`` caps Newton steps.
    """
    n = y.size
    lam = np.full(n, 1.0 / n)
    r = x - lam @ pts
    t = float(np.linalg.norm(r)) + 1.0
    nu = n + 2.0
    scale = 1.0 + float(np.max(np.abs(y))) + L * (1.0 + float(np.max(np.abs(pts - x))))
    tau = nu / scale
    a = np.zeros(n + 1)
    a[:n] = 1.0
    c = np.append(y, L)
    G2 = pts @ pts.T
    steps = 0

    def phi(lam, t):
        r = x - lam @ pts
        s = t * t - float(r @ r)
        if t <= 0 or s <= 0 or np.any(lam <= 0):
            return math.inf
        return tau * float(c[:n] @ lam + L * t) - float(np.sum(np.log(lam))) - math.log(s)

    while True:
        for _ in range(100):
            r = x - lam @ pts
            s = t * t - float(r @ r)
            gs = np.append(2.0 * (pts @ r), 2.0 * t)
            grad = tau * c + np.append(-1.0 / lam, 0.0) - gs / s
            H = np.outer(gs, gs) / (s * s)
            H[:n, :n] += 2.0 * G2 / s + np.diag(1.0 / lam**2)
            H[n, n] -= 2.0 / s
            K = np.zeros((n + 2, n + 2))
            K[: n + 1, : n + 1] = H
            K[: n + 1, n + 1] = a
            K[n + 1, : n + 1] = a
            rhs = np.append(-grad, 0.0)
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            dv = sol[: n + 1]
            dec = float(-grad @ dv)
            steps += 1
            if dec / 2 <= 1e-12 or steps >= budget:
                break
            step, f0 = 1.0, phi(lam, t)
            while step > 1e-14:
                nl, nt = lam + step * dv[:n], t + step * dv[n]
                f1 = phi(nl, nt)
                if f1 <= f0 - 0.25 * step * dec:
                    break
                step *= 0.5
            else:
                break
            lam, t = nl, nt
        if nu / tau <= gap_tol * (1.0 + abs(float(y @ lam) + L * t)) or steps >= budget:
            break
        tau *= 20.0
    lam = np.maximum(lam, 0.0)
    lam /= lam.sum()
    return _objective(lam, y, pts, L, x), lam, steps, nu / tau


def _apex_lp(y, pts, x):
    """Best zero-residual combination: min y.lam s.t. pts.T lam = x on the simplex.

    When the envelope's minimiser reproduces ``x`` exactly the barrier's
    Newton systems degenerate; this LP recovers that case to solver precision.
    Returns ``None`` when ``x`` is outside the hull of the data.
    """
    n = y.size
    A = np.vstack([pts.T, np.ones((1, n))])
    b = np.append(x, 1.0)
    res = linprog(y, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    lam = np.maximum(res.x, 0.0)
    return lam / lam.sum()


@lru_cache(maxsize=8)
def _simplex_grid(n: int, step: float) -> np.ndarray:
    grid = _build_simplex_grid(n, step)
    grid.flags.writeable = False
    return grid


def _build_simplex_grid(n: int, step: float) -> np.ndarray:
    k = int(round(1.0 / step))
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        a = np.arange(k + 1) / k
        return np.column_stack([a, 1 - a])
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    mask = i + j <= k
    a, b = i[mask] / k, j[mask] / k
    return np.column_stack([a, b, 1 - a - b])


def _grid_tables(y, pts, step=GRID_STEP):
    """Grid weights with their values and points; reusable across queries."""
    lams = _simplex_grid(y.size, step)
    return lams, lams @ y, lams @ pts


def _grid_refine(y, pts, L, x, tables=None, step=GRID_STEP, tol=GRID_TOL):
    n = y.size
    lams, lin, Z = tables if tables is not None else _grid_tables(y, pts, step)
    R = Z - x
    vals = lin + L * np.sqrt(np.einsum("ij,ij->i", R, R))
    k = int(np.argmin(vals))
    lam, best = lams[k], float(vals[k])
    h = step
    offsets = np.array(list(product((-1, 0, 1), repeat=n)), dtype=float)
    offsets = offsets[np.abs(offsets.sum(axis=1)) < 1e-12]
    while h > tol:
        h /= 4.0
        for _ in range(8):
            cand = lam + h * offsets
            cand = cand[np.all(cand >= 0, axis=1)]
            vals = cand @ y + L * np.linalg.norm(x - cand @ pts, axis=1)
            k = int(np.argmin(vals))
            if vals[k] < best:
                lam, best = cand[k], float(vals[k])
            else:
                break
    return best, lam


def primal_envelope(
    samples: SampleSet,
    x,
    solver_budget: int | None = None,
    diagnostics: bool = False,
    method: str = "barrier",
    _tables=None,
):
    """Evaluate the convex envelope of the McShane extension at ``x``.

    ``method`` is ``"barrier"`` (interior point, accurate to about 1e-10) or
    ``"frank-wolfe"``. Returns the value, or an :class:`EnvelopeResult` when
    ``diagnostics`` is set. The value is always attained by the returned
    weights, so it is an upper bound on the true minimum.
    """
    L = _require_lipschitz(samples)
    x = as_vector(x, samples.dim)
    y, pts = samples.values, samples.points
    if samples.n == 1:
        value = float(y[0] + L * np.linalg.norm(x - pts[0]))
        result = EnvelopeResult(value, np.ones(1), 0, True, 0.0)
        return result if diagnostics else value
    if method == "barrier":
        budget = 400 if solver_budget is None else solver_budget
        if budget < 1:
            raise ValueError("solver_budget must be at least 1")
        value, lam, it, gap = _barrier(y, pts, L, x, budget)
    elif method == "frank-wolfe":
        budget = DEFAULT_BUDGET if solver_budget is None else solver_budget
        if budget < 1:
            raise ValueError("solver_budget must be at least 1")
        value, lam, it, gap = _frank_wolfe(y, pts, L, x, budget)
    else:
        raise ValueError(f"unknown method {method!r}")
    converged = it < budget
    # the data vertices are feasible; never return worse than the best of them
    k = int(np.argmin(y + L * np.linalg.norm(pts - x, axis=1)))
    vertex = float(y[k] + L * np.linalg.norm(x - pts[k]))
    if vertex <= value:
        value, lam = vertex, np.eye(samples.n)[k]
    if method == "barrier":
        lam_lp = _apex_lp(y, pts, x)
        if lam_lp is not None:
            lp_value = _objective(lam_lp, y, pts, L, x)
            if lp_value < value:
                value, lam = lp_value, lam_lp
    if samples.n <= 3:
        gv, glam = _grid_refine(y, pts, L, x, _tables)
        if gv < value:
            value, lam = gv, glam
    if diagnostics:
        return EnvelopeResult(value, lam, it, converged, gap)
    return value


def primal_envelope_batch(samples: SampleSet, xs, solver_budget: int | None = None, method: str = "barrier") -> np.ndarray:
    xs = as_points(xs, samples.dim)
    tables = _grid_tables(samples.values, samples.points) if 1 < samples.n <= 3 else None
    return np.array([primal_envelope(samples, x, solver_budget, method=method, _tables=tables) for x in xs])
