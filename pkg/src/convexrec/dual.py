"""Max-min reconstruction from finite samples.

    f(x) = max_m ( <p_m, x> + min_n ( y_n - <p_m, xi_n> ) )

over a finite net of slopes ``p_m`` in the radius-L ball of the sample span.
Every such f is convex and L-Lipschitz; with the accuracy-driven parameter
schedule it is uniformly within epsilon of the sampled functional.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    SampleSet,
    Subspace,
    as_points,
    as_vector,
    ball_net,
    ball_net_size_bound,
    select_subspace,
    DimensionError,
)

logger = logging.getLogger(__name__)

DEFAULT_M_CAP = 100_000
_CHUNK = 1 << 22


@dataclass(frozen=True)
class ParameterSchedule:
    epsilon: float
    delta: float
    alpha: float
    eta: float
    lipschitz: float
    diameter: float

    def m_bound(self, d: int) -> float:
        """A-priori bound ``(1 + 16 L D / eps)^d`` on the number of slopes."""
        return (1.0 + 16.0 * self.lipschitz * self.diameter / self.epsilon) ** d


def schedule(L: float, D: float, epsilon: float) -> ParameterSchedule:
    if not (L > 0 and D > 0 and epsilon > 0):
        raise ValueError("L, D and epsilon must all be positive")
    return ParameterSchedule(
        epsilon=epsilon,
        delta=epsilon / (4 * L),
        alpha=epsilon / (16 * L),
        eta=epsilon / (8 * D),
        lipschitz=L,
        diameter=D,
    )


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def compute_intercepts(samples: SampleSet, directions: np.ndarray) -> np.ndarray:
    """``c_m = min_n (y_n - <p_m, xi_n>)`` for every slope row ``p_m``."""
    P = np.asarray(directions, dtype=np.float64)
    out = np.empty(P.shape[0])
    step = max(1, _CHUNK // max(1, samples.n))
    for i in range(0, P.shape[0], step):
        block = P[i : i + step] @ samples.points.T
        out[i : i + step] = np.min(samples.values[None, :] - block, axis=1)
    return out


@dataclass(frozen=True, eq=False)
class DualNet:
    directions: np.ndarray
    intercepts: np.ndarray
    lipschitz: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = as_points(self.directions)
        c = np.asarray(self.intercepts, dtype=np.float64).reshape(-1)
        if P.shape[0] < 1:
            raise ValueError("a DualNet needs at least one direction")
        if P.shape[0] != c.size:
            raise ValueError(f"{P.shape[0]} directions but {c.size} intercepts")
        if not np.all(np.isfinite(c)):
            raise ValueError("intercepts must be finite")
        norms = np.linalg.norm(P, axis=1)
        if norms.max() > self.lipschitz + 1e-10:
            raise ValueError(f"slope norm {norms.max()} exceeds L={self.lipschitz}")
        object.__setattr__(self, "directions", _frozen(P))
        object.__setattr__(self, "intercepts", _frozen(c))
        object.__setattr__(self, "lipschitz", float(self.lipschitz))

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    @property
    def m(self) -> int:
        return self.directions.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1 and x.size == self.dim:
            return evaluate(self, x)
        return evaluate_batch(self, x)


def from_directions(samples: SampleSet, directions, meta: dict | None = None) -> DualNet:
    """DualNet with the given slopes and intercepts recomputed from ``samples``."""
    if samples.lipschitz is None:
        raise ValueError("reconstruction needs a sample set with a Lipschitz constant")
    P = as_points(directions, samples.dim)
    return DualNet(P, compute_intercepts(samples, P), samples.lipschitz, dict(meta or {}))


def feasible_eta(d: int, L: float, eta: float, m_cap: int) -> float:
    """Smallest ``eta' >= eta`` whose net size bound fits under ``m_cap``."""
    if ball_net_size_bound(d, L, eta) <= m_cap:
        return eta
    floor = 2.0 * L / (m_cap ** (1.0 / d) - 1.0)
    eta_new = max(eta, floor)
    while ball_net_size_bound(d, L, eta_new) > m_cap:
        eta_new = math.nextafter(eta_new, math.inf) * (1 + 1e-12)
    return eta_new


def build(samples: SampleSet, epsilon: float, m_cap: int = DEFAULT_M_CAP, seed: int = 0) -> DualNet:
    """Reconstruct a convex L-Lipschitz functional from exact samples.

    The slope net lives in the span of the sample points. When the schedule's
    ``eta`` would need more than ``m_cap`` slopes it is coarsened and the
    value actually used is recorded as ``meta["eta_achieved"]``.
    """
    if samples.lipschitz is None:
        raise ValueError("reconstruction needs a sample set with a Lipschitz constant")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    L, D = samples.lipschitz, samples.diameter
    base = {"epsilon": float(epsilon), "N": samples.n}
    if D == 0.0:
        logger.warning("all samples coincide; returning the constant reconstruction")
        meta = base | {
            "delta": epsilon / (4 * L),
            "alpha": epsilon / (16 * L),
            "eta": None,
            "d": 0,
            "M": 1,
            "eta_achieved": None,
            "degenerate": True,
        }
        return DualNet(np.zeros((1, samples.dim)), [float(np.min(samples.values))], L, meta)
    sched = schedule(L, D, epsilon)
    subspace = select_subspace(samples)
    d = subspace.dim
    eta = feasible_eta(d, L, sched.eta, m_cap) if d else sched.eta
    if eta != sched.eta:
        logger.warning("eta coarsened from %g to %g to respect m_cap=%d", sched.eta, eta, m_cap)
    P = ball_net(subspace, L, eta, seed=seed)
    meta = base | {
        "delta": sched.delta,
        "alpha": sched.alpha,
        "eta": sched.eta,
        "d": d,
        "M": int(P.shape[0]),
        "eta_achieved": eta,
        "degenerate": False,
    }
    return from_directions(samples, P, meta)


def evaluate(net: DualNet, x) -> float:
    x = as_vector(x)
    if x.size != net.dim:
        raise DimensionError(f"expected dim {net.dim}, got {x.size}")
    return float(np.max(net.directions @ x + net.intercepts))


def evaluate_batch(net: DualNet, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return np.zeros(0)
    xs = as_points(xs, net.dim)
    out = np.empty(xs.shape[0])
    step = max(1, _CHUNK // net.m)
    for i in range(0, xs.shape[0], step):
        vals = xs[i : i + step] @ net.directions.T + net.intercepts
        out[i : i + step] = vals.max(axis=1)
    return out


def active_piece(net: DualNet, x) -> int:
    """Index of a maximising slope; ties go to the smallest index."""
    x = as_vector(x, net.dim)
    return int(np.argmax(net.directions @ x + net.intercepts))


def uniform_error(net: DualNet, reference, probe_points) -> float:
    """Empirical sup-error ``max |reference(x) - f(x)|`` over the probes.

    ``reference`` is called on the whole ``(n, dim)`` probe array when it
    accepts one, and row by row otherwise.
    """
    X = as_points(probe_points, net.dim)
    if X.shape[0] == 0:
        raise ValueError("need at least one probe point")
    try:
        ref = np.asarray(reference(X), dtype=np.float64).reshape(-1)
        if ref.size != X.shape[0]:
            raise ValueError
    except (ValueError, TypeError):
        ref = np.array([float(reference(x)) for x in X])
    return float(np.max(np.abs(ref - evaluate_batch(net, X))))


# reference functionals, selectable by name from the CLI


def norm_functional(scale: float = 1.0):
    def f(X):
        X = np.atleast_2d(X)
        return scale * np.linalg.norm(X, axis=1)

    f.lipschitz = scale
    return f


def huber_functional(radius: float = 1.0):
    """``|x|^2/2`` inside the ball of ``radius``, extended linearly outside."""

    def f(X):
        r = np.linalg.norm(np.atleast_2d(X), axis=1)
        return np.where(r <= radius, 0.5 * r * r, radius * r - 0.5 * radius * radius)

    f.lipschitz = radius
    return f


def max_affine_functional(dim: int, pieces: int = 8, lipschitz: float = 1.0, seed: int = 0):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(pieces, dim))
    S *= lipschitz * rng.uniform(0.2, 1.0, size=(pieces, 1)) / np.linalg.norm(S, axis=1, keepdims=True)
    b = rng.normal(scale=0.25, size=pieces)

    def f(X):
        return (np.atleast_2d(X) @ S.T + b).max(axis=1)

    f.lipschitz = lipschitz
    return f


REFERENCE_FUNCTIONALS = {
    "norm": lambda dim, seed=0: norm_functional(),
    "huber": lambda dim, seed=0: huber_functional(),
    "max-affine": lambda dim, seed=0: max_affine_functional(dim, seed=seed),
}


def reference_functional(name: str, dim: int, seed: int = 0):
    try:
        return REFERENCE_FUNCTIONALS[name](dim, seed)
    except KeyError:
        raise ValueError(f"unknown reference functional {name!r}; choose from {sorted(REFERENCE_FUNCTIONALS)}") from None
