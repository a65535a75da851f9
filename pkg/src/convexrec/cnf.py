"""Convex neural functionals (CNFs).

A CNF reads its input through affine functionals ``<p_m, x> + q_m``, then
applies stages of nonnegative linear maps, PReLU with slopes in [0, 1] and
max-pooling over an index partition, and ends with a nonnegative affine
read-out. Any parameter setting passing :func:`validate` is convex and
Lipschitz, which is the certificate this module checks and exposes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .dual import DualNet, evaluate_batch
from .geometry import DimensionError, as_points


@dataclass(frozen=True, eq=False)
class CnfLayer:
    """One hidden stage: affine map, PReLU, then max-pool over ``partition``."""

    weights: np.ndarray
    bias: np.ndarray
    slopes: np.ndarray
    partition: tuple

    def __post_init__(self):
        if sp.issparse(self.weights):
            W = sp.csr_matrix(self.weights, dtype=np.float64, copy=True)
            W.sort_indices()
        else:
            W = _frozen(np.atleast_2d(self.weights))
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", _frozen(np.reshape(self.bias, -1)))
        object.__setattr__(self, "slopes", _frozen(np.reshape(self.slopes, -1)))
        object.__setattr__(self, "partition", tuple(tuple(int(i) for i in part) for part in self.partition))

    @property
    def pre_width(self) -> int:
        return self.weights.shape[0]

    @property
    def out_width(self) -> int:
        return len(self.partition)

    @cached_property
    def _gather(self):
        # padded index table; padding repeats a part's first index so the
        # padded max equals the true max and argmax stays the smallest index
        parts = [sorted(p) for p in self.partition]
        width = max(len(p) for p in parts)
        idx = np.array([p + [p[0]] * (width - len(p)) for p in parts], dtype=np.intp)
        return idx


@dataclass(frozen=True, eq=False)
class CnfModel:
    directions: np.ndarray
    offsets: np.ndarray
    layers: tuple
    out_weights: np.ndarray
    out_bias: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "directions", _frozen(np.atleast_2d(self.directions)))
        object.__setattr__(self, "offsets", _frozen(np.reshape(self.offsets, -1)))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "out_weights", _frozen(np.reshape(self.out_weights, -1)))
        object.__setattr__(self, "out_bias", float(self.out_bias))

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    @property
    def n_functionals(self) -> int:
        return self.directions.shape[0]

    def rank(self) -> int:
        """Dimension of the span of the input slopes."""
        if not np.any(self.directions):
            return 0
        return int(np.linalg.matrix_rank(self.directions))

    def param_count(self, tied_slopes: bool = False) -> int:
        n = self.directions.size + self.offsets.size + self.out_weights.size + 1
        for layer in self.layers:
            rows, cols = layer.weights.shape
            n += rows * cols + layer.bias.size + (1 if tied_slopes else layer.slopes.size)
        return n

    @cached_property
    def certificate(self) -> "CertificateReport":
        return validate(self)

    def __call__(self, x):
        return forward(self, x)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CertificateReport:
    passed: bool
    violation: str | None = None
    location: tuple | None = None

    def __bool__(self) -> bool:
        return self.passed

    def describe(self) -> str:
        if self.passed:
            return "certificate: PASS (nonnegative weights, slopes in [0,1], valid partitions)"
        return f"certificate: FAIL at {self.location}: {self.violation}"


def _first_bad(mask: np.ndarray):
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]) if idx.size else None


def validate(model: CnfModel) -> CertificateReport:
    """Check every admissibility condition; report the first violation found."""

    def fail(msg, where):
        return CertificateReport(False, msg, where)

    P, q = model.directions, model.offsets
    if P.ndim != 2 or P.shape[0] < 1:
        return fail("need at least one input functional", ("input",))
    if q.size != P.shape[0]:
        return fail(f"{P.shape[0]} slopes but {q.size} offsets", ("input", "q"))
    for name, arr in (("p", P), ("q", q)):
        bad = _first_bad(~np.isfinite(arr))
        if bad is not None:
            return fail("non-finite value", ("input", name) + bad)
    if not model.layers:
        return fail("a CNF needs at least one hidden stage", ("layers",))
    width = P.shape[0]
    for k, layer in enumerate(model.layers):
        A, b, a = layer.weights, layer.bias, layer.slopes
        if A.shape[1] != width:
            return fail(f"weights have {A.shape[1]} columns, expected {width}", ("layer", k, "A"))
        if b.size != A.shape[0] or a.size != A.shape[0]:
            return fail("bias/slope length differs from weight rows", ("layer", k, "b"))
        if sp.issparse(A):
            coo = A.tocoo()
            bad = _first_bad(~np.isfinite(coo.data) | (coo.data < 0))
            if bad is not None:
                i = bad[0]
                where = ("layer", k, "A", int(coo.row[i]), int(coo.col[i]))
                return fail(f"negative or non-finite weight {float(coo.data[i])!r}", where)
        else:
            bad = _first_bad(~np.isfinite(A))
            if bad is not None:
                return fail("non-finite value", ("layer", k, "A") + bad)
            bad = _first_bad(A < 0)
            if bad is not None:
                return fail(f"negative weight {float(A[bad])!r}", ("layer", k, "A") + bad)
        for name, arr in (("b", b), ("alpha", a)):
            bad = _first_bad(~np.isfinite(arr))
            if bad is not None:
                return fail("non-finite value", ("layer", k, name) + bad)
        bad = _first_bad((a < 0) | (a > 1))
        if bad is not None:
            return fail(f"PReLU slope {float(a[bad])!r} outside [0, 1]", ("layer", k, "alpha") + bad)
        seen = np.zeros(A.shape[0], dtype=bool)
        if not layer.partition:
            return fail("empty partition", ("layer", k, "partition"))
        for j, part in enumerate(layer.partition):
            if not part:
                return fail("empty part", ("layer", k, "partition", j))
            for i in part:
                if not 0 <= i < A.shape[0]:
                    return fail(f"index {i} out of range", ("layer", k, "partition", j))
                if seen[i]:
                    return fail(f"index {i} appears twice", ("layer", k, "partition", j))
                seen[i] = True
        if not seen.all():
            return fail(f"index {int(np.argmin(seen))} not covered", ("layer", k, "partition"))
        width = len(layer.partition)
    w = model.out_weights
    if w.size != width:
        return fail(f"read-out has {w.size} weights, expected {width}", ("output", "A"))
    bad = _first_bad(~np.isfinite(w))
    if bad is not None or not math.isfinite(model.out_bias):
        return fail("non-finite value", ("output",))
    bad = _first_bad(w < 0)
    if bad is not None:
        return fail(f"negative weight {float(w[bad])!r}", ("output", "A") + bad)
    return CertificateReport(True)


class InvalidModelError(ValueError):
    def __init__(self, report: CertificateReport):
        self.report = report
        super().__init__(report.describe())


def prelu(u: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0) - slopes * np.maximum(-u, 0.0)


def _linear(A, h: np.ndarray) -> np.ndarray:
    if sp.issparse(A):
        return np.asarray((A @ h.T).T)
    return h @ A.T


def _stage(layer: CnfLayer, h: np.ndarray) -> np.ndarray:
    v = prelu(_linear(layer.weights, h) + layer.bias, layer.slopes)
    return v[:, layer._gather].max(axis=2)


def forward(model: CnfModel, x):
    """Evaluate the CNF on one vector or on the rows of a 2-D array."""
    if not model.certificate:
        raise InvalidModelError(model.certificate)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionError(f"expected inputs of dim {model.dim}, got shape {x.shape}")
    h = X @ model.directions.T + model.offsets
    for layer in model.layers:
        h = _stage(layer, h)
    out = h @ model.out_weights + model.out_bias
    return float(out[0]) if single else out


def pooled_prelu_reference(u, slopes, partition) -> np.ndarray:
    """Unfused PReLU followed by max-pooling, one scalar at a time."""
    u = [float(v) for v in np.reshape(u, -1)]
    slopes = [float(a) for a in np.reshape(slopes, -1)]
    if any(not 0.0 <= a <= 1.0 for a in slopes):
        raise ValueError("PReLU slopes must lie in [0, 1]")
    if sorted(i for part in partition for i in part) != list(range(len(u))):
        raise ValueError("not a partition of the pre-pool coordinates")
    act = []
    for v, a in zip(u, slopes):
        act.append(v if v >= 0 else a * v)
    return np.array([max(act[i] for i in part) for part in partition])


def operator_norm(A: np.ndarray, iters: int = 200, rtol: float = 1e-8) -> float:
    """Spectral norm by power iteration on ``A^T A`` started from the ones vector."""
    if not sp.issparse(A):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if (A.count_nonzero() if sp.issparse(A) else np.count_nonzero(A)) == 0:
        return 0.0
    v = np.ones(A.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # ones vector orthogonal to the top singular space; restart
            v = np.random.default_rng(0).normal(size=A.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        new = math.sqrt(nw)
        if abs(new - sigma) <= rtol * new:
            sigma = new
            break
        sigma = new
    return float(np.linalg.norm(A @ v))


def lipschitz_bound(model: CnfModel) -> float:
    """``||A_out|| * prod ||A_l|| * sqrt(sum ||p_m||^2)``: an upper bound on Lip(model)."""
    if not model.certificate:
        raise InvalidModelError(model.certificate)
    bound = operator_norm(model.out_weights.reshape(1, -1))
    for layer in model.layers:
        bound *= operator_norm(layer.weights)
    return bound * float(np.sqrt(np.sum(model.directions**2)))


def embed_dualnet(net: DualNet) -> CnfModel:
    """Two-stage CNF computing exactly the max of the net's affine pieces."""
    M = net.m
    layer = CnfLayer(sp.identity(M, format="csr"), np.zeros(M), np.ones(M), (tuple(range(M)),))
    return CnfModel(net.directions, net.intercepts, (layer,), np.ones(1), 0.0, {"rank": net.meta.get("d")})


# JSON interchange


_DENSE_LIMIT = 1_000_000


def _encode_matrix(A):
    if sp.issparse(A):
        if A.shape[0] * A.shape[1] <= _DENSE_LIMIT:
            return A.toarray().tolist()
        coo = A.tocoo()
        return {"shape": list(A.shape), "row": coo.row.tolist(), "col": coo.col.tolist(), "val": coo.data.tolist()}
    return A.tolist()


def _decode_matrix(obj):
    if isinstance(obj, dict):
        return sp.csr_matrix((obj["val"], (obj["row"], obj["col"])), shape=tuple(obj["shape"]))
    return np.asarray(obj, dtype=np.float64)


def model_to_dict(model: CnfModel) -> dict:
    return {
        "format": "cnf/1",
        "input": [{"p": p.tolist(), "q": float(q)} for p, q in zip(model.directions, model.offsets)],
        "layers": [
            {
                "A": _encode_matrix(layer.weights),
                "b": layer.bias.tolist(),
                "alpha": layer.slopes.tolist(),
                "partition": [list(part) for part in layer.partition],
            }
            for layer in model.layers
        ],
        "output": {"A": model.out_weights.tolist(), "b": model.out_bias},
    }


def model_from_dict(doc: dict, check: bool = True) -> CnfModel:
    if doc.get("format") != "cnf/1":
        raise ValueError(f"not a cnf/1 document: format={doc.get('format')!r}")
    inputs = doc["input"]
    if not inputs:
        raise ValueError("cnf/1 document has no input functionals")
    P = as_points([item["p"] for item in inputs])
    q = [item["q"] for item in inputs]
    layers = tuple(
        CnfLayer(_decode_matrix(l["A"]), l["b"], l["alpha"], l["partition"]) for l in doc["layers"]
    )
    model = CnfModel(P, q, layers, doc["output"]["A"], doc["output"]["b"])
    if check and not model.certificate:
        raise InvalidModelError(model.certificate)
    return model


def agrees_with_dual(model: CnfModel, net: DualNet, X) -> float:
    X = as_points(X, net.dim)
    return float(np.max(np.abs(forward(model, X) - evaluate_batch(net, X))))
