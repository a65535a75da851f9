"""Finite-dimensional Hilbert-space primitives.

Vectors are 1-D ``float64`` numpy arrays expressed in a fixed orthonormal
frame, so the Euclidean dot product is the Hilbert inner product. Point
collections are stored row-wise as ``(n, dim)`` arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

logger = logging.getLogger(__name__)

#: residual-to-original norm ratio below which Gram-Schmidt drops a direction
RANK_TOL = 1e-10

#: largest candidate cloud ``ball_net`` will build
CANDIDATE_BUDGET = 4_000_000

#: ``ball_net`` switches from lattice to quasi-random candidates above this dim
LATTICE_MAX_DIM = 3


class DimensionError(ValueError):
    pass


class DataInconsistencyError(ValueError):
    """No L-Lipschitz function interpolates the given samples."""

    def __init__(self, i: int, j: int, gap: float, bound: float):
        self.pair = (i, j)
        self.gap = gap
        self.bound = bound
        super().__init__(
            f"samples {i} and {j} violate the Lipschitz bound: "
            f"|y_i - y_j| = {gap!r} > L*|xi_i - xi_j| = {bound!r}"
        )


class BudgetExceededError(RuntimeError):
    pass


def as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite coordinates")
    if dim is not None and v.size != dim:
        raise DimensionError(f"expected dim {dim}, got {v.size}")
    return v


def as_points(xs, dim: int | None = None) -> np.ndarray:
    """Coerce a list of vectors (or a 2-D array) to a finite ``(n, dim)`` array."""
    a = np.asarray(xs, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if dim in (None, 1) else a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D point array, got shape {a.shape}")
    if dim is not None and a.shape[0] and a.shape[1] != dim:
        raise DimensionError(f"expected points of dim {dim}, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("points have non-finite coordinates")
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def inner(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.size != b.size:
        raise DimensionError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(np.dot(a, b))


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Paired data ``(xi_n, y_n)`` with a Lipschitz constant.

    ``lipschitz`` may be ``None`` for plain regression data (training), in
    which case no consistency check is made and reconstruction is refused.
    """

    points: np.ndarray
    values: np.ndarray
    lipschitz: float | None = None

    def __post_init__(self):
        pts = as_points(self.points)
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if pts.shape[0] < 1:
            raise ValueError("a sample set needs at least one point")
        if pts.shape[0] != vals.size:
            raise ValueError(f"{pts.shape[0]} points but {vals.size} values")
        if not np.all(np.isfinite(vals)):
            raise ValueError("sample values must be finite")
        if self.lipschitz is not None:
            L = float(self.lipschitz)
            if not (L > 0 and math.isfinite(L)):
                raise ValueError(f"Lipschitz constant must be positive, got {self.lipschitz}")
            object.__setattr__(self, "lipschitz", L)
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "values", _frozen(vals))
        if self.lipschitz is not None:
            self.check_consistency()

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def _distances(self) -> np.ndarray:
        return pairwise_distances(self.points)

    @cached_property
    def diameter(self) -> float:
        return float(self._distances.max())

    def check_consistency(self, rtol: float = 1e-9) -> None:
        """Raise if some pair has ``|y_i - y_j| > L |xi_i - xi_j|``.

        The comparison allows ``rtol`` relative slack so that values computed
        in floating point from an exactly L-Lipschitz function are accepted.
        """
        if self.lipschitz is None:
            return
        y = self.values
        gap = np.abs(y[:, None] - y[None, :])
        bound = self.lipschitz * self._distances
        slack = rtol * (1.0 + np.maximum(np.abs(y)[:, None], np.abs(y)[None, :]) + bound)
        bad = np.argwhere(gap > bound + slack)
        if bad.size:
            i, j = (int(k) for k in bad[0])
            raise DataInconsistencyError(i, j, float(gap[i, j]), float(bound[i, j]))


@dataclass(frozen=True, eq=False)
class Subspace:
    """Orthonormal basis stored row-wise as a ``(d, ambient_dim)`` array."""

    basis: np.ndarray
    ambient_dim: int

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=np.float64).reshape(-1, self.ambient_dim)
        if B.shape[0]:
            gram = B @ B.T
            if np.max(np.abs(gram - np.eye(B.shape[0]))) > 1e-10:
                raise ValueError("subspace basis is not orthonormal")
        object.__setattr__(self, "basis", _frozen(B))

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @classmethod
    def full(cls, ambient_dim: int) -> "Subspace":
        return cls(np.eye(ambient_dim), ambient_dim)


def gram_schmidt(vectors: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Modified Gram-Schmidt with re-orthogonalisation; returns basis rows."""
    basis: list[np.ndarray] = []
    for v in np.asarray(vectors, dtype=np.float64):
        scale = float(np.max(np.abs(v))) if v.size else 0.0
        if scale == 0.0:
            continue
        # rescale first so tiny vectors do not lose precision to subnormals
        r = v / scale
        v0 = float(np.linalg.norm(r))
        for _ in range(2):
            for b in basis:
                r -= np.dot(b, r) * b
        rn = float(np.linalg.norm(r))
        if rn <= tol * v0:
            continue
        basis.append(r / rn)
    if not basis:
        return np.zeros((0, np.asarray(vectors).shape[-1]))
    return np.vstack(basis)


def select_subspace(samples: SampleSet, extra_points=()) -> Subspace:
    dim = samples.dim
    vecs = samples.points
    extra = np.asarray(extra_points, dtype=np.float64)
    if extra.size:
        vecs = np.vstack([vecs, as_points(extra, dim)])
    return Subspace(gram_schmidt(vecs), dim)


def project(subspace: Subspace, x) -> np.ndarray:
    """Orthogonal projection onto the subspace; accepts one vector or rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != subspace.ambient_dim:
        raise DimensionError(f"expected dim {subspace.ambient_dim}, got {x.shape[-1]}")
    B = subspace.basis
    return (x @ B.T) @ B


def greedy_net(candidates, radius: float) -> np.ndarray:
    """First-fit greedy net of a candidate cloud.

    A candidate is kept iff it is farther than ``radius`` from every point
    kept before it, so the result covers every candidate within ``radius``
    (closed balls) and is ``radius``-separated.
    """
    pts = as_points(candidates)
    if pts.shape[0] == 0:
        raise ValueError("greedy_net needs at least one candidate")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    tree = cKDTree(pts)
    covered = np.zeros(pts.shape[0], dtype=bool)
    keep = []
    for i in range(pts.shape[0]):
        if covered[i]:
            continue
        keep.append(i)
        covered[tree.query_ball_point(pts[i], radius)] = True
    return pts[keep]


def _lattice_net(d: int, L: float, eta: float) -> np.ndarray:
    # cubic cells of side 2*eta/sqrt(d) have circumradius eta; radial
    # projection onto the ball is nonexpansive, so covering survives it
    spacing = 2.0 * eta / math.sqrt(d)
    reach = L + eta
    k = int(math.floor(reach / spacing))
    count = (2 * k + 1) ** d
    if count > CANDIDATE_BUDGET:
        raise BudgetExceededError(
            f"lattice needs {count} candidates, over the candidate budget of {CANDIDATE_BUDGET}"
        )
    axis = spacing * np.arange(-k, k + 1)
    grid = np.array(list(product(axis, repeat=d))) if d > 1 else axis.reshape(-1, 1)
    norms = np.linalg.norm(grid, axis=1)
    keep = norms <= reach
    grid, norms = grid[keep], norms[keep]
    outside = norms > L
    grid[outside] *= (L / norms[outside])[:, None]
    return grid


def _quasi_random_candidates(d: int, L: float, n: int, seed: int) -> np.ndarray:
    sob = qmc.Sobol(d + 1, scramble=True, seed=seed)
    u = sob.random_base2(max(1, math.ceil(math.log2(n))))
    g = norm.ppf(np.clip(u[:, :d], 1e-12, 1 - 1e-12))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = L * u[:, d] ** (1.0 / d)
    axes = np.vstack([np.zeros((1, d)), L * np.eye(d), -L * np.eye(d)])
    return np.vstack([axes, g * r[:, None]])


def ball_net_size_bound(d: int, L: float, eta: float) -> float:
    """Upper bound ``(1 + 2L/eta)^d`` on the size of ``ball_net``'s output."""
    if d == 0 or eta >= L:
        return 1.0
    return (1.0 + 2.0 * L / eta) ** d


def ball_net(subspace: Subspace, L: float, eta: float, seed: int = 0) -> np.ndarray:
    """An ``eta``-net of the radius-``L`` ball of ``subspace``, in ambient coordinates.

    For ``d <= 3`` the net is a cubic lattice of spacing ``2 eta / sqrt(d)``
    with points near the sphere pulled radially onto it; this is a guaranteed
    ``eta``-net with at most ``(1 + 2L/eta)^d`` points. Above that, a greedy
    ``eta``-separated subset of a scrambled Sobol cloud is returned and the
    covering guarantee is only probabilistic.
    """
    if not (L > 0 and eta > 0):
        raise ValueError("L and eta must be positive")
    d = subspace.dim
    if d == 0 or eta >= L:
        return np.zeros((1, subspace.ambient_dim))
    if d <= LATTICE_MAX_DIM:
        net = _lattice_net(d, L, eta)
    else:
        target = 8 * ball_net_size_bound(d, L, eta)
        if target > CANDIDATE_BUDGET:
            raise BudgetExceededError(
                f"eta={eta} in dimension {d} needs about {target:.3g} candidates, "
                f"over the candidate budget of {CANDIDATE_BUDGET}"
            )
        logger.warning("ball_net in dimension %d uses random candidates; covering is probabilistic", d)
        net = greedy_net(_quasi_random_candidates(d, L, int(max(4096, target)), seed), eta)
    return net @ subspace.basis
