"""Exact ReLU-MLP compilation of max/min and of the max-min reconstruction.

The pairwise gadget is ``max(a, b) = relu(a - b) + relu(b) - relu(-b)``;
a binary tournament of gadgets computes the max of ``q`` inputs with
``ceil(log2 q)`` ReLU stages. Weights are stored as CSR matrices since the
tournament layers are very sparse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import DimensionError, SampleSet, as_points


@dataclass(frozen=True, eq=False)
class ReluNetwork:
    """Affine layers with ReLU after every layer but the last."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        Ws, bs = [], []
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            # canonical CSR so that summation order survives serialisation
            W = sp.csr_matrix(W, dtype=np.float64, copy=True)
            W.eliminate_zeros()
            W.sort_indices()
            b = np.asarray(b, dtype=np.float64).reshape(-1)
            if W.shape[0] != b.size:
                raise ValueError(f"layer {k}: {W.shape[0]} rows but {b.size} biases")
            if k and W.shape[1] != Ws[-1].shape[0]:
                raise ValueError(f"layer {k} expects {W.shape[1]} inputs, previous layer has {Ws[-1].shape[0]}")
            b.flags.writeable = False
            Ws.append(W)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(Ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def depth(self) -> int:
        return len(self.weights)

    def width(self) -> int:
        hidden = [W.shape[0] for W in self.weights[:-1]]
        return max(hidden) if hidden else self.input_dim

    def size(self) -> int:
        return sum(int(W.count_nonzero()) + b.size for W, b in zip(self.weights, self.biases))

    def __call__(self, z):
        return forward(self, z)


def forward(net: ReluNetwork, z) -> np.ndarray:
    """Evaluate on one input vector or on the rows of a 2-D array."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = z.reshape(1, -1) if single else z
    if Z.ndim != 2 or Z.shape[1] != net.input_dim:
        raise DimensionError(f"expected inputs of dim {net.input_dim}, got shape {z.shape}")
    h = Z.T
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = W @ h + b[:, None]
        if k < last:
            h = np.maximum(h, 0.0)
    out = np.asarray(h).T
    return out[0] if single else out


def identity_network(dim: int) -> ReluNetwork:
    return ReluNetwork((sp.identity(dim, format="csr"),), (np.zeros(dim),))


def _gadget_stage(k: int):
    """Gadget matrix G (hidden x k) and readout matrix (ceil(k/2) x hidden)."""
    pairs = k // 2
    i = np.arange(pairs)
    a, b = 2 * i, 2 * i + 1
    h = 3 * i
    g_rows = [h, h, h + 1, h + 2]
    g_cols = [a, b, b, b]
    g_vals = [np.ones(pairs), -np.ones(pairs), np.ones(pairs), -np.ones(pairs)]
    r_rows = [i, i, i]
    r_cols = [h, h + 1, h + 2]
    r_vals = [np.ones(pairs), np.ones(pairs), -np.ones(pairs)]
    hidden = 3 * pairs
    if k % 2:
        g_rows += [np.array([hidden, hidden + 1])]
        g_cols += [np.array([k - 1, k - 1])]
        g_vals += [np.array([1.0, -1.0])]
        r_rows += [np.array([pairs, pairs])]
        r_cols += [np.array([hidden, hidden + 1])]
        r_vals += [np.array([1.0, -1.0])]
        hidden += 2
    out = pairs + k % 2
    G = sp.csr_matrix(
        (np.concatenate(g_vals), (np.concatenate(g_rows), np.concatenate(g_cols))), shape=(hidden, k)
    )
    R = sp.csr_matrix(
        (np.concatenate(r_vals), (np.concatenate(r_rows), np.concatenate(r_cols))), shape=(out, hidden)
    )
    return G, R


def compile_max(q: int) -> ReluNetwork:
    if q < 1:
        raise ValueError(f"q must be at least 1, got {q}")
    if q == 1:
        return identity_network(1)
    weights = []
    # R expresses the surviving tournament values in terms of the previous
    # layer's units (the raw inputs before the first stage)
    R = sp.identity(q, format="csr")
    while R.shape[0] > 1:
        G, R_next = _gadget_stage(R.shape[0])
        W = (G @ R).tocsr()
        W.eliminate_zeros()
        weights.append(W)
        R = R_next
    weights.append(R)
    return ReluNetwork(tuple(weights), tuple(np.zeros(W.shape[0]) for W in weights))


def compile_min(q: int) -> ReluNetwork:
    """``min(z) = -max(-z)``: the max network with its first and last layers negated."""
    if q == 1:
        return compile_max(1)
    net = compile_max(q)
    Ws = list(net.weights)
    Ws[0] = -Ws[0]
    Ws[-1] = -Ws[-1]
    return ReluNetwork(tuple(Ws), net.biases)


def activation_stages(net: ReluNetwork) -> int:
    return len(net.weights) - 1


def complexity_report(net: ReluNetwork) -> dict:
    return {
        "size": net.size(),
        "width": net.width(),
        "depth": net.depth(),
        "activation_stages": activation_stages(net),
        "dense_size": sum(W.shape[0] * W.shape[1] + b.size for W, b in zip(net.weights, net.biases)),
    }


def bounds_hold(report: dict, q: int) -> bool:
    """Size/width/depth bounds of the tournament construction for ``q`` inputs."""
    if q == 1:
        return True
    return (
        report["size"] <= 16 * q
        and report["width"] <= 3 * q
        and report["activation_stages"] <= math.ceil(math.log2(q))
    )


@dataclass(frozen=True, eq=False)
class MaxMinNetwork:
    """``Phi_M( (<p_m, x> + Psi_N(y - Xi p_m))_m )`` with the inner mins precomputed."""

    phi: ReluNetwork
    psi: ReluNetwork | None
    directions: np.ndarray
    offsets: np.ndarray

    def evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        return _squeeze(forward(self.phi, _affine_inputs(self, x)), x.ndim == 1)

    __call__ = evaluate

    def to_relu_network(self) -> ReluNetwork:
        """Fold the input functionals into ``phi``'s first layer: one plain ReLU-MLP on x."""
        W0 = self.phi.weights[0]
        P = sp.csr_matrix(self.directions)
        W = (W0 @ P).tocsr()
        b = W0 @ self.offsets + self.phi.biases[0]
        return ReluNetwork((W,) + self.phi.weights[1:], (b,) + self.phi.biases[1:])


def _affine_inputs(net: MaxMinNetwork, x: np.ndarray) -> np.ndarray:
    X = x.reshape(1, -1) if x.ndim == 1 else x
    if X.shape[1] != net.directions.shape[1]:
        raise DimensionError(f"expected dim {net.directions.shape[1]}, got {X.shape[1]}")
    return X @ net.directions.T + net.offsets


def _squeeze(out: np.ndarray, single: bool):
    out = out[:, 0]
    return float(out[0]) if single else out


def assemble_max_min(samples: SampleSet, directions) -> MaxMinNetwork:
    P = as_points(directions, samples.dim)
    M, N = P.shape[0], samples.n
    psi = compile_min(N)
    inner = samples.values[None, :] - P @ samples.points.T
    offsets = forward(psi, inner)[:, 0]
    return MaxMinNetwork(compile_max(M), psi, P, offsets)


def max_affine_network(directions, intercepts) -> MaxMinNetwork:
    """``Phi_M`` over given affine pieces when no sample set is at hand."""
    P = as_points(directions)
    c = np.asarray(intercepts, dtype=np.float64).reshape(-1)
    return MaxMinNetwork(compile_max(P.shape[0]), None, P, c)


# JSON interchange

_DENSE_LIMIT = 1_000_000


def _encode_matrix(W: sp.csr_matrix):
    if W.shape[0] * W.shape[1] <= _DENSE_LIMIT:
        return W.toarray().tolist()
    coo = W.tocoo()
    return {
        "shape": list(W.shape),
        "row": coo.row.tolist(),
        "col": coo.col.tolist(),
        "val": coo.data.tolist(),
    }


def _decode_matrix(obj) -> sp.csr_matrix:
    if isinstance(obj, dict):
        return sp.csr_matrix((obj["val"], (obj["row"], obj["col"])), shape=tuple(obj["shape"]))
    return sp.csr_matrix(np.asarray(obj, dtype=np.float64))


def network_to_dict(net: ReluNetwork, extra: dict | None = None) -> dict:
    doc = {
        "format": "relumlp/1",
        "input_dim": net.input_dim,
        "layers": [{"W": _encode_matrix(W), "b": b.tolist()} for W, b in zip(net.weights, net.biases)],
    }
    if extra:
        doc.update(extra)
    return doc


def network_from_dict(doc: dict) -> ReluNetwork:
    if doc.get("format") != "relumlp/1":
        raise ValueError(f"not a relumlp/1 document: format={doc.get('format')!r}")
    Ws = [_decode_matrix(layer["W"]) for layer in doc["layers"]]
    bs = [np.asarray(layer["b"], dtype=np.float64) for layer in doc["layers"]]
    net = ReluNetwork(tuple(Ws), tuple(bs))
    if net.input_dim != int(doc["input_dim"]):
        raise ValueError("input_dim does not match the first layer")
    return net
