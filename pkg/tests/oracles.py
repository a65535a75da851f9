"""Independent reference computations used to check the package."""

import itertools
import math
import warnings

import numpy as np


def envelope_socp(points, values, L, x):
    """Convex-envelope value by a generic conic solver."""
    import cvxpy as cp

    n = len(values)
    lam = cp.Variable(n, nonneg=True)
    objective = values @ lam + L * cp.norm(x - points.T @ lam, 2)
    prob = cp.Problem(cp.Minimize(objective), [cp.sum(lam) == 1])
    with warnings.catch_warnings():
        # tight tolerances make clarabel flag near-optimal stops as inaccurate
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return float(prob.value)


def envelope_grid(points, values, L, x, steps=2000):
    """Brute force over a simplex grid (N <= 3 only)."""
    n = len(values)
    best = math.inf
    if n == 1:
        return float(values[0] + L * np.linalg.norm(x - points[0]))
    if n == 2:
        for k in range(steps + 1):
            lam = np.array([k / steps, 1 - k / steps])
            best = min(best, lam @ values + L * np.linalg.norm(x - lam @ points))
        return float(best)
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            lam = np.array([i, j, steps - i - j]) / steps
            best = min(best, lam @ values + L * np.linalg.norm(x - lam @ points))
    return float(best)


def max_min_formula(points, values, directions, x):
    """The max-min reconstruction by plain Python loops."""
    best = -math.inf
    for p in directions:
        inner = min(float(y - sum(pi * xi for pi, xi in zip(p, pt))) for pt, y in zip(points, values))
        best = max(best, float(sum(pi * xi for pi, xi in zip(p, x))) + inner)
    return best


def covering_radius(net, candidates):
    """Largest distance from a candidate to its nearest net point."""
    worst = 0.0
    for c in candidates:
        worst = max(worst, float(np.min(np.linalg.norm(net - c, axis=1))))
    return worst


def dense_mlp(layers, z):
    """Forward pass through [(W, b), ...] with ReLU between layers, dense numpy."""
    h = np.asarray(z, dtype=float)
    for k, (W, b) in enumerate(layers):
        h = np.asarray(W, dtype=float) @ h + np.asarray(b, dtype=float)
        if k < len(layers) - 1:
            h = np.maximum(h, 0)
    return h


def cnf_scalar(model, x):
    """CNF forward written with scalar loops over the model's arrays."""
    h = [float(np.dot(p, x) + q) for p, q in zip(model.directions, model.offsets)]
    for layer in model.layers:
        A = layer.weights.toarray() if hasattr(layer.weights, "toarray") else layer.weights
        u = [sum(A[i, j] * h[j] for j in range(len(h))) + layer.bias[i] for i in range(A.shape[0])]
        v = [ui if ui >= 0 else layer.slopes[i] * ui for i, ui in enumerate(u)]
        h = [max(v[i] for i in part) for part in layer.partition]
    return sum(w * hi for w, hi in zip(model.out_weights, h)) + model.out_bias


def jensen_triples(f, X, Y, T):
    Z = T[:, None] * X + (1 - T[:, None]) * Y
    return f(Z) - T * f(X) - (1 - T) * f(Y)


def all_subsets_partition(n, k):
    """Partition of range(n) into k contiguous blocks of near-equal size."""
    cuts = np.linspace(0, n, k + 1).round().astype(int)
    return tuple(tuple(range(a, b)) for a, b in itertools.pairwise(cuts) if b > a)


def random_cnf(rng, dim=None, max_width=6, max_stages=3, sparse=False):
    """A random admissible CNF: nonnegative weights, slopes in [0,1], random partitions."""
    import scipy.sparse as sp

    from convexrec.cnf import CnfLayer, CnfModel

    dim = dim or int(rng.integers(1, 5))
    m = int(rng.integers(1, max_width + 1))
    P = rng.normal(size=(m, dim))
    q = rng.normal(size=m)
    layers = []
    width = m
    for _ in range(int(rng.integers(1, max_stages + 1))):
        pre = int(rng.integers(1, max_width + 1))
        A = rng.exponential(size=(pre, width)) * (rng.uniform(size=(pre, width)) < 0.8)
        if sparse:
            A = sp.csr_matrix(A)
        b = rng.normal(size=pre)
        alpha = rng.uniform(size=pre)
        perm = rng.permutation(pre)
        k = int(rng.integers(1, pre + 1))
        cuts = np.sort(rng.choice(np.arange(1, pre), size=k - 1, replace=False)) if k > 1 else []
        parts = [tuple(int(i) for i in part) for part in np.split(perm, cuts)]
        layers.append(CnfLayer(A, b, alpha, parts))
        width = k
    w = rng.exponential(size=width)
    return CnfModel(P, q, layers, w, float(rng.normal()))
