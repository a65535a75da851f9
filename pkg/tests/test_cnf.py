import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from convexrec import cnf, dual
from convexrec.cnf import CnfLayer, CnfModel
from convexrec.geometry import DimensionError

from conftest import random_instance
from oracles import cnf_scalar, jensen_triples, random_cnf


def identity_cnf(P, q):
    M = len(q)
    layer = CnfLayer(np.eye(M), np.zeros(M), np.ones(M), [tuple(range(M))])
    return CnfModel(P, q, [layer], [1.0], 0.0)


def test_identity_stage_is_max_affine(rng):
    P, q = rng.normal(size=(4, 3)), rng.normal(size=4)
    model = identity_cnf(P, q)
    X = rng.normal(size=(50, 3))
    assert np.array_equal(model(X), (X @ P.T + q).max(axis=1))


def test_zero_weights_give_constant(rng):
    layer = CnfLayer(np.zeros((3, 2)), [0.5, -1.0, 2.0], [0.2, 0.2, 0.2], [(0, 1), (2,)])
    model = CnfModel(rng.normal(size=(2, 2)), [0.0, 0.0], [layer], [1.0, 2.0], 0.25)
    vals = model(rng.normal(size=(20, 2)))
    assert np.all(vals == 0.5 + 2 * 2.0 + 0.25)


def test_relu_special_case_matches_scalar_loop(rng):
    model = random_cnf(rng, dim=2)
    zero_slopes = [CnfLayer(l.weights, l.bias, np.zeros_like(l.slopes), l.partition) for l in model.layers]
    model = CnfModel(model.directions, model.offsets, zero_slopes, model.out_weights, model.out_bias)
    for x in rng.normal(size=(100, 2)):
        assert model(x) == pytest.approx(cnf_scalar(model, x), rel=1e-12, abs=1e-12)


def test_validate_failures(rng):
    base = random_cnf(rng, dim=2, max_stages=1)
    layer = base.layers[0]
    A = np.array(layer.weights, copy=True)
    A[0, 0] = -0.5
    bad = CnfModel(base.directions, base.offsets, [CnfLayer(A, layer.bias, layer.slopes, layer.partition)],
                   base.out_weights, base.out_bias)
    report = cnf.validate(bad)
    assert not report and report.location == ("layer", 0, "A", 0, 0)
    slopes = np.array(layer.slopes)
    slopes[-1] = 1.5
    bad = CnfModel(base.directions, base.offsets, [CnfLayer(layer.weights, layer.bias, slopes, layer.partition)],
                   base.out_weights, base.out_bias)
    assert not cnf.validate(bad) and cnf.validate(bad).location[:3] == ("layer", 0, "alpha")
    with pytest.raises(cnf.InvalidModelError):
        bad(np.zeros(2))


def test_validate_partition_errors():
    P = np.eye(2)
    for partition in ([(0,), (0, 1)], [(0,)], [(), (0, 1)], [(0, 5)]):
        model = CnfModel(P, [0, 0], [CnfLayer(np.eye(2), [0, 0], [1, 1], partition)], [1.0] * len(partition), 0.0)
        assert not cnf.validate(model)
    neg_out = CnfModel(P, [0, 0], [CnfLayer(np.eye(2), [0, 0], [1, 1], [(0, 1)])], [-1.0], 0.0)
    assert cnf.validate(neg_out).location == ("output", "A", 0)


def test_validate_sparse_negative_entry():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, -2.0]]))
    model = CnfModel(np.eye(2), [0, 0], [CnfLayer(A, [0, 0], [1, 1], [(0, 1)])], [1.0], 0.0)
    assert cnf.validate(model).location == ("layer", 0, "A", 1, 1)


def test_forward_dimension_error(rng):
    with pytest.raises(DimensionError):
        random_cnf(rng, dim=3)(np.zeros(2))


def test_pooled_prelu_reference_examples():
    assert cnf.pooled_prelu_reference([-2, 3], [0.5, 0.5], [(0, 1)]).tolist() == [3.0]
    u = np.array([-2.0, 3.0, -1.0])
    assert cnf.pooled_prelu_reference(u, np.ones(3), [(0,), (1,), (2,)]).tolist() == u.tolist()
    assert cnf.pooled_prelu_reference(u, np.zeros(3), [(0,), (1,), (2,)]).tolist() == [0.0, 3.0, 0.0]
    with pytest.raises(ValueError):
        cnf.pooled_prelu_reference(u, [0.5, 2.0, 0.5], [(0, 1, 2)])


def test_fused_stage_matches_reference(rng):
    for _ in range(30):
        model = random_cnf(rng)
        layer = model.layers[0]
        h = rng.normal(size=(1, layer.weights.shape[1]))
        u = h @ np.asarray(layer.weights).T + layer.bias
        fused = cnf._stage(layer, h)[0]
        ref = cnf.pooled_prelu_reference(u, layer.slopes, layer.partition)
        assert np.all(np.abs(fused - ref) <= 4 * np.spacing(np.abs(ref) + 1e-300))


def test_lipschitz_bound_examples(rng):
    P = np.eye(2)
    assert cnf.lipschitz_bound(identity_cnf(P, [0.0, 0.0])) == pytest.approx(np.sqrt(2), rel=1e-12)
    model = random_cnf(rng, dim=2)
    zero = CnfModel(model.directions, model.offsets, model.layers, np.zeros_like(model.out_weights), 0.0)
    assert cnf.lipschitz_bound(zero) == 0.0
    scaled = CnfModel(3 * model.directions, model.offsets, model.layers, model.out_weights, model.out_bias)
    assert cnf.lipschitz_bound(scaled) == pytest.approx(3 * cnf.lipschitz_bound(model), rel=1e-12)


def test_operator_norm_matches_svd(rng):
    for _ in range(20):
        A = rng.exponential(size=tuple(rng.integers(1, 8, size=2)))
        assert cnf.operator_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)
    assert cnf.operator_norm(sp.identity(5, format="csr")) == pytest.approx(1.0)


@given(st.integers(0, 2**32 - 1))
def test_certificate_soundness(seed):
    rng = np.random.default_rng(seed)
    model = random_cnf(rng, sparse=bool(seed % 2))
    assert cnf.validate(model)
    X = rng.normal(size=(200, model.dim)) * 2
    Y = rng.normal(size=(200, model.dim)) * 2
    T = rng.uniform(size=200)
    assert np.all(jensen_triples(model, X, Y, T) <= 1e-9)
    bound = cnf.lipschitz_bound(model)
    assert np.all(np.abs(model(X) - model(Y)) <= bound * np.linalg.norm(X - Y, axis=1) + 1e-9)


@given(st.integers(0, 2**32 - 1))
def test_post_input_network_is_monotone(seed):
    rng = np.random.default_rng(seed)
    model = random_cnf(rng)
    M = model.n_functionals
    # feeding x^(0) directly: identity directions, zero offsets
    T = CnfModel(np.eye(M), np.zeros(M), model.layers, model.out_weights, model.out_bias)
    Z = rng.normal(size=(50, M))
    bumped = Z.copy()
    j = rng.integers(0, M, size=50)
    bumped[np.arange(50), j] += rng.exponential(size=50)
    assert np.all(T(bumped) >= T(Z) - 1e-12)


def test_embedding_examples(line_samples, rng):
    net = dual.from_directions(line_samples, [[-1.0], [0.0], [1.0]])
    model = cnf.embed_dualnet(net)
    assert model.n_functionals == 3 and cnf.validate(model)
    for x in (0.0, 0.5, 0.75, 1.0):
        assert model([x]) == dual.evaluate(net, [x])
    one = dual.DualNet([[0.4, -0.2]], [1.5], 1.0)
    X = rng.normal(size=(10, 2))
    assert np.array_equal(cnf.embed_dualnet(one)(X), X @ [0.4, -0.2] + 1.5)


@pytest.mark.parametrize("seed", range(5))
def test_embedding_exact(seed):
    rng = np.random.default_rng(seed)
    s = random_instance(rng, dim=int(rng.integers(1, 4)), n=6)
    net = dual.build(s, 0.4, m_cap=3000)
    model = cnf.embed_dualnet(net)
    X = rng.uniform(-2, 2, size=(500, s.dim))
    assert cnf.agrees_with_dual(model, net, X) <= 1e-12


def test_param_count():
    model = identity_cnf(np.eye(3), np.zeros(3))
    assert model.param_count() == 9 + 3 + (9 + 3 + 3) + 1 + 1
    assert model.param_count(tied_slopes=True) == model.param_count() - 2


def test_json_round_trip_and_rejects_invalid(rng):
    model = random_cnf(rng, dim=3)
    doc = cnf.model_to_dict(model)
    back = cnf.model_from_dict(doc)
    X = rng.normal(size=(20, 3))
    assert np.array_equal(back(X), model(X))
    assert cnf.model_to_dict(back) == doc
    doc["output"]["A"][0] = -1.0
    with pytest.raises(cnf.InvalidModelError) as exc:
        cnf.model_from_dict(doc)
    assert exc.value.report.location == ("output", "A", 0)
    with pytest.raises(ValueError):
        cnf.model_from_dict({"format": "dualnet/1"})
