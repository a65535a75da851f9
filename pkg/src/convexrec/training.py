"""Projected-gradient training of CNFs and the random-target toy experiment."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .cnf import CnfLayer, CnfModel, forward, validate
from .geometry import SampleSet

logger = logging.getLogger(__name__)

# toy-experiment architecture: two hidden layers of width 500 in the target;
# 100 input functionals, 800 PReLU units pooled in pairs and one shared slope
# in the CNF, which gives 81,402 trainable parameters at input dimension 1
PAPER_TARGET_WIDTH = 500
PAPER_CNF_FUNCTIONALS = 100
PAPER_CNF_POOLED_WIDTH = 400
PAPER_CNF_POOL = 2


def make_rng(seed: int, *names) -> np.random.Generator:
    """Generator for a named stream split off ``seed``; names may be str or int."""
    key = [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *key]))


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 1000
    seed: int = 0
    jensen_probes: int = 1000
    jensen_every: int = 10
    tied_slopes: bool = True
    n_train: int = 1000
    n_test: int = 200
    box: float = 1.0

    def __post_init__(self):
        for name in ("batch_size", "jensen_probes", "jensen_every", "n_train", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not self.learning_rate > 0 or not self.box > 0:
            raise ValueError("learning_rate and box must be positive")


@dataclass
class TrainReport:
    train_mse: list = field(default_factory=list)
    test_mse: float = math.nan
    jensen_gap: float = -math.inf
    jensen_history: list = field(default_factory=list)
    certificate_history: list = field(default_factory=list)
    param_count: int = 0
    param_ratio: float = math.nan
    output_scale: float = math.nan


class NonFiniteLossError(FloatingPointError):
    def __init__(self, iteration: int, block: str):
        self.iteration = iteration
        self.block = block
        super().__init__(f"non-finite loss or gradient at iteration {iteration} (parameter block {block!r})")


# random convex targets


@dataclass(frozen=True, eq=False)
class ConvexReluTarget:
    """``w3 . relu(W2 relu(W1 x + b1) + b2) + b3`` with ``W2, w3 >= 0``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = X.reshape(1, -1) if single else X
        h = np.maximum(X @ self.W1.T + self.b1, 0.0)
        h = np.maximum(h @ self.W2.T + self.b2, 0.0)
        out = h @ self.w3 + self.b3
        return float(out[0]) if single else out

    @property
    def param_count(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size + self.w3.size + 1


def random_convex_target(dim: int, width: int = PAPER_TARGET_WIDTH, seed: int = 0, weight_scale: float = 1.0):
    """Random two-hidden-layer ReLU net with nonnegative hidden and output weights.

    Weights are He-scaled normals, the ones after the first layer taken in
    absolute value. ``weight_scale=0`` gives a constant target.
    """
    if dim < 1 or width < 1:
        raise ValueError("dim and width must be at least 1")
    rng = make_rng(seed, "target", dim, width)
    W1 = weight_scale * rng.normal(scale=math.sqrt(2.0 / dim), size=(width, dim))
    b1 = weight_scale * rng.normal(size=width)
    W2 = weight_scale * np.abs(rng.normal(scale=math.sqrt(2.0 / width), size=(width, width)))
    b2 = np.zeros(width)
    w3 = weight_scale * np.abs(rng.normal(scale=math.sqrt(2.0 / width), size=width))
    target = ConvexReluTarget(W1, b1, W2, b2, w3, 0.0)
    return target, target.param_count


# CNF parameterisation


def init_cnf(
    dim: int,
    n_functionals: int = PAPER_CNF_FUNCTIONALS,
    hidden=((PAPER_CNF_POOLED_WIDTH, PAPER_CNF_POOL),),
    rng: np.random.Generator | None = None,
    slope: float = 0.25,
) -> CnfModel:
    """Admissible CNF with |He-normal| weights, zero biases and PReLU slope 0.25.

    ``hidden`` lists ``(pooled_width, pool_size)`` per stage; the pre-pool
    width is their product and pools are contiguous blocks.
    """
    rng = rng or np.random.default_rng(0)
    P = rng.normal(scale=math.sqrt(1.0 / dim), size=(n_functionals, dim))
    layers = []
    fan_in = n_functionals
    for pooled, pool in hidden:
        pre = pooled * pool
        A = np.abs(rng.normal(scale=math.sqrt(2.0 / fan_in), size=(pre, fan_in)))
        partition = tuple(tuple(range(k * pool, (k + 1) * pool)) for k in range(pooled))
        layers.append(CnfLayer(A, np.zeros(pre), np.full(pre, slope), partition))
        fan_in = pooled
    w = np.abs(rng.normal(scale=math.sqrt(2.0 / fan_in), size=fan_in))
    return CnfModel(P, np.zeros(n_functionals), tuple(layers), w, 0.0)


def cnf_param_count(dim: int, n_functionals: int, pooled: int, pool: int, tied_slopes: bool = True) -> int:
    pre = pooled * pool
    return n_functionals * (dim + 1) + pre * n_functionals + pre + (1 if tied_slopes else pre) + pooled + 1


def size_cnf(target_params: int, dim: int, ratio: float = 1.0 / 3.0, n_functionals: int = PAPER_CNF_FUNCTIONALS,
             pool: int = PAPER_CNF_POOL, tied_slopes: bool = True) -> int:
    """Pooled width whose one-stage CNF is closest to ``ratio * target_params``."""
    fixed = cnf_param_count(dim, n_functionals, 0, pool, tied_slopes)
    per_unit = cnf_param_count(dim, n_functionals, 1, pool, tied_slopes) - fixed
    return max(1, round((ratio * target_params - fixed) / per_unit))


def _params(model: CnfModel) -> dict:
    p = {"P": np.array(model.directions), "q": np.array(model.offsets)}
    for k, layer in enumerate(model.layers):
        W = layer.weights
        p[f"A{k}"] = W.toarray() if sp.issparse(W) else np.array(W)
        p[f"b{k}"] = np.array(layer.bias)
        p[f"alpha{k}"] = np.array(layer.slopes)
    p["w"] = np.array(model.out_weights)
    p["c"] = np.array([model.out_bias])
    return p


def _model(params: dict, template: CnfModel) -> CnfModel:
    layers = tuple(
        CnfLayer(params[f"A{k}"], params[f"b{k}"], params[f"alpha{k}"], layer.partition)
        for k, layer in enumerate(template.layers)
    )
    return CnfModel(params["P"], params["q"], layers, params["w"], float(params["c"][0]), dict(template.meta))


def project(params: dict) -> dict:
    """Clamp weights to ``[0, inf)`` and PReLU slopes to ``[0, 1]``."""
    out = {}
    for name, v in params.items():
        if name.startswith("A") or name == "w":
            out[name] = np.maximum(v, 0.0)
        elif name.startswith("alpha"):
            out[name] = np.clip(v, 0.0, 1.0)
        else:
            out[name] = v.copy()
    return out


def _forward_cached(params: dict, gathers: list, X: np.ndarray):
    h = X @ params["P"].T + params["q"]
    cache = [h]
    for k, idx in enumerate(gathers):
        u = h @ params[f"A{k}"].T + params[f"b{k}"]
        a = params[f"alpha{k}"]
        v = np.where(u >= 0, u, a * u)
        pooled = v[:, idx]
        am = np.argmax(pooled, axis=2)
        h = np.take_along_axis(pooled, am[:, :, None], axis=2)[:, :, 0]
        cache.append((u, am, h))
    out = h @ params["w"] + params["c"][0]
    return out, cache


def loss_and_grad(params: dict, gathers: list, X: np.ndarray, y: np.ndarray, tied_slopes: bool = False):
    """Mean squared error and its (sub)gradient.

    Max-pooling routes the gradient to the smallest maximising index and the
    PReLU derivative at 0 is taken from the right (slope 1).
    """
    B = X.shape[0]
    out, cache = _forward_cached(params, gathers, X)
    resid = out - y
    loss = float(np.mean(resid**2))
    g = 2.0 * resid / B
    grads = {}
    h_last = cache[-1][2] if len(cache) > 1 else cache[0]
    grads["w"] = h_last.T @ g
    grads["c"] = np.array([g.sum()])
    dh = g[:, None] * params["w"][None, :]
    for k in range(len(gathers) - 1, -1, -1):
        u, am, _ = cache[k + 1]
        h_prev = cache[k] if k == 0 else cache[k][2]
        idx = gathers[k]
        sel = idx[np.arange(idx.shape[0])[None, :], am]
        dv = np.zeros_like(u)
        np.put_along_axis(dv, sel, dh, axis=1)
        a = params[f"alpha{k}"]
        du = dv * np.where(u >= 0, 1.0, a)
        dalpha = np.sum(dv * np.minimum(u, 0.0), axis=0)
        if tied_slopes:
            dalpha = np.full_like(dalpha, dalpha.sum())
        grads[f"alpha{k}"] = dalpha
        grads[f"A{k}"] = du.T @ h_prev
        grads[f"b{k}"] = du.sum(axis=0)
        dh = du @ params[f"A{k}"]
    grads["P"] = dh.T @ X
    grads["q"] = dh.sum(axis=0)
    return loss, grads


def jensen_gap(f, probes: int, box, seed: int = 0) -> float:
    """Largest sampled ``f(tx + (1-t)y) - t f(x) - (1-t) f(y)`` over a box.

    ``box`` is ``(low, high)`` arrays (or scalars with a ``dim``-length
    sequence) bounding the domain; ``f`` must accept a batch of rows.
    """
    if probes < 1:
        raise ValueError("probes must be at least 1")
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in box)
    rng = make_rng(seed, "jensen")
    x = rng.uniform(lo, hi, size=(probes, lo.size))
    y = rng.uniform(lo, hi, size=(probes, lo.size))
    t = rng.uniform(size=(probes, 1))
    fz = np.asarray(f(t * x + (1 - t) * y), dtype=np.float64).reshape(-1)
    fx = np.asarray(f(x), dtype=np.float64).reshape(-1)
    fy = np.asarray(f(y), dtype=np.float64).reshape(-1)
    t = t[:, 0]
    return float(np.max(fz - t * fx - (1 - t) * fy))


def _mse(model: CnfModel, X, y) -> float:
    return float(np.mean((forward(model, X) - y) ** 2))


def train(model: CnfModel, data: SampleSet, cfg: TrainConfig, test: SampleSet | None = None,
          target_params: int | None = None, callback=None):
    """Projected gradient descent on the mean squared error.

    Every iterate is projected back onto the admissible set and re-validated,
    so the returned model (and every intermediate one) is certified convex.
    ``callback(iteration, model)`` is called after each step.
    """
    report0 = validate(model)
    if not report0:
        raise ValueError(f"initial model is not admissible: {report0.describe()}")
    if data.dim != model.dim:
        raise ValueError(f"data has dim {data.dim}, model expects {model.dim}")
    gathers = [layer._gather for layer in model.layers]
    params = _params(model)
    X, y = data.points, data.values
    rng = make_rng(cfg.seed, "batches")
    box = (np.full(model.dim, -cfg.box), np.full(model.dim, cfg.box))
    with np.errstate(over="ignore", invalid="ignore"):
        scale = float(np.std(y))
    report = TrainReport(param_count=model.param_count(cfg.tied_slopes), output_scale=scale)
    if target_params:
        report.param_ratio = report.param_count / target_params
    current = model
    for it in range(cfg.iterations):
        if cfg.batch_size >= X.shape[0]:
            Xb, yb = X, y
        else:
            sel = rng.choice(X.shape[0], size=cfg.batch_size, replace=False)
            Xb, yb = X[sel], y[sel]
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grad(params, gathers, Xb, yb, cfg.tied_slopes)
        if not math.isfinite(loss):
            raise NonFiniteLossError(it, "loss")
        for name, gval in grads.items():
            if not np.all(np.isfinite(gval)):
                raise NonFiniteLossError(it, name)
        report.train_mse.append(loss if Xb is X else _mse(current, X, y))
        params = project({k: v - cfg.learning_rate * grads[k] for k, v in params.items()})
        current = _model(params, model)
        cert = validate(current)
        report.certificate_history.append(bool(cert))
        if not cert:
            raise AssertionError(f"projection left the admissible set: {cert.describe()}")
        if (it + 1) % cfg.jensen_every == 0 or it + 1 == cfg.iterations:
            gap = jensen_gap(current, cfg.jensen_probes, box, seed=cfg.seed + it)
            report.jensen_history.append((it + 1, gap))
            report.jensen_gap = max(report.jensen_gap, gap)
        if callback is not None:
            callback(it, current)
    report.train_mse.append(_mse(current, X, y))
    if test is not None:
        report.test_mse = _mse(current, test.points, test.values)
    if not report.jensen_history:
        gap = jensen_gap(current, cfg.jensen_probes, box, seed=cfg.seed)
        report.jensen_history.append((cfg.iterations, gap))
        report.jensen_gap = gap
    return current, report


# toy experiment and dimensional ablation

ABLATION_COLUMNS = ("dim", "run", "param_ratio", "train_mse", "test_mse", "jensen_gap")


def toy_run(dim: int, run: int, cfg: TrainConfig, target_width: int = PAPER_TARGET_WIDTH,
            pooled_width: int | None = PAPER_CNF_POOLED_WIDTH, callback=None):
    """Train one CNF on one random convex target; returns (model, report)."""
    target, tparams = random_convex_target(dim, target_width, seed=cfg.seed * 1000003 + run)
    if pooled_width is None:
        pooled_width = size_cnf(tparams, dim, tied_slopes=cfg.tied_slopes)
    rng = make_rng(cfg.seed, "data", dim, run)
    X = rng.uniform(-cfg.box, cfg.box, size=(cfg.n_train, dim))
    Xt = rng.uniform(-cfg.box, cfg.box, size=(cfg.n_test, dim))
    data = SampleSet(X, target(X))
    test = SampleSet(Xt, target(Xt))
    model = init_cnf(dim, hidden=((pooled_width, PAPER_CNF_POOL),), rng=make_rng(cfg.seed, "init", dim, run))
    return train(model, data, cfg, test=test, target_params=tparams, callback=callback)


def ablation(dims, runs: int, cfg: TrainConfig, target_width: int = PAPER_TARGET_WIDTH,
             pooled_width: int | None = PAPER_CNF_POOLED_WIDTH):
    """Per-run rows and per-dimension mean/std summary of the toy experiment."""
    dims = list(dims)
    if not dims or runs < 1:
        raise ValueError("need at least one dimension and one run")
    rows, summary = [], []
    for dim in dims:
        per_dim = []
        for run in range(runs):
            _, rep = toy_run(dim, run, cfg, target_width, pooled_width)
            row = {
                "dim": dim,
                "run": run,
                "param_ratio": rep.param_ratio,
                "train_mse": rep.train_mse[-1],
                "test_mse": rep.test_mse,
                "jensen_gap": rep.jensen_gap,
            }
            logger.info("dim=%d run=%d %s", dim, run, row)
            rows.append(row)
            per_dim.append(row)
        stats = {"dim": dim, "runs": runs}
        for col in ABLATION_COLUMNS[2:]:
            vals = np.array([r[col] for r in per_dim])
            stats[f"{col}_mean"] = float(vals.mean())
            stats[f"{col}_std"] = float(vals.std())
        summary.append(stats)
    return rows, summary


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
