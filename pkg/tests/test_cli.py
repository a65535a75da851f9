import json

import numpy as np
import pytest

from convexrec import cli, io


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def fixture_model(tmp_path):
    samples = tmp_path / "s.csv"
    samples.write_text("x1,y\n0,0\n0.5,0.5\n1,1\n")
    model = tmp_path / "m.json"
    assert run("reconstruct", "--samples", samples, "--lipschitz", 1, "--epsilon", 0.5, "--out", model) == 0
    return samples, model


@pytest.fixture
def points(tmp_path, rng):
    path = tmp_path / "p.csv"
    path.write_text(io.format_csv(rng.uniform(-1, 2, size=(100, 1))))
    return path


def test_reconstruct_prints_meta(tmp_path, capsys):
    samples = tmp_path / "s.csv"
    samples.write_text("x1,y\n0,0\n0.5,0.5\n1,1\n")
    assert run("reconstruct", "--samples", samples, "--lipschitz", 1, "--epsilon", 0.5, "--out", tmp_path / "m.json") == 0
    meta = json.loads(capsys.readouterr().out)
    assert meta["N"] == 3 and meta["d"] == 1 and meta["M"] >= 1 and "eta_achieved" in meta
    assert json.loads((tmp_path / "m.json").read_text())["meta"]["N"] == 3


def test_reconstruct_errors(tmp_path, capsys):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert run("reconstruct", "--samples", empty, "--lipschitz", 1, "--epsilon", 0.5, "--out", tmp_path / "m.json") == 1
    capsys.readouterr()
    bad = tmp_path / "b.csv"
    bad.write_text("x1,y\n0,0\n1,3\n")
    assert run("reconstruct", "--samples", bad, "--lipschitz", 1, "--epsilon", 0.5, "--out", tmp_path / "m.json") == 2
    assert json.loads(capsys.readouterr().err)["pair"] == [0, 1]
    assert not (tmp_path / "m.json").exists()


def test_usage_errors_exit_1(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("reconstruct", "--samples", "x.csv", "--lipschitz", -1, "--epsilon", 0.5, "--out", "m.json")
    assert exc.value.code == 1


def _values(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, -1]


def test_eval_methods_agree(tmp_path, fixture_model, points):
    samples, model = fixture_model
    outs = {}
    for method in ("dual", "cnf", "mlp", "primal"):
        out = tmp_path / f"{method}.csv"
        extra = ("--samples", samples) if method == "primal" else ()
        assert run("eval", "--model", model, "--points", points, "--method", method, "--out", out, *extra) == 0
        outs[method] = _values(out)
    assert np.max(np.abs(outs["dual"] - outs["cnf"])) <= 1e-9
    assert np.max(np.abs(outs["dual"] - outs["mlp"])) <= 1e-9
    # the dual value never exceeds the primal envelope
    assert np.all(outs["dual"] <= outs["primal"] + 1e-6)


def test_eval_constant_model(tmp_path):
    io.save_json(tmp_path / "c.json", {"format": "dualnet/1", "L": 1.0, "dim": 1, "directions": [[0.0]],
                                       "intercepts": [2.5], "meta": {}})
    (tmp_path / "p.csv").write_text("x1\n7\n")
    assert run("eval", "--model", tmp_path / "c.json", "--points", tmp_path / "p.csv", "--out", tmp_path / "o.csv") == 0
    assert _values(tmp_path / "o.csv").tolist() == [2.5]


def test_eval_errors(tmp_path, fixture_model, points):
    _, model = fixture_model
    assert run("eval", "--model", tmp_path / "missing.json", "--points", points) == 1
    assert run("eval", "--model", model, "--points", points, "--method", "primal") == 2
    cnf_path = tmp_path / "c.json"
    assert run("embed-cnf", "--model", model, "--out", cnf_path) == 0
    assert run("eval", "--model", cnf_path, "--points", points, "--method", "dual") == 2
    wrong_dim = tmp_path / "q.csv"
    wrong_dim.write_text("x1,x2\n1,2\n")
    assert run("eval", "--model", model, "--points", wrong_dim) == 2


def test_certify(tmp_path, fixture_model, capsys):
    _, model = fixture_model
    cnf_path = tmp_path / "c.json"
    assert run("embed-cnf", "--model", model, "--out", cnf_path) == 0
    capsys.readouterr()
    assert run("certify", "--cnf", cnf_path, "--probes", 500) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["structural"] == "PASS" and report["jensen_gap"] <= 1e-9
    assert report["lipschitz_bound"] >= report["sampled_lipschitz_ratio"]
    doc = json.loads(cnf_path.read_text())
    doc["layers"][0]["A"][1][1] = -0.25
    cnf_path.write_text(json.dumps(doc))
    assert run("certify", "--cnf", cnf_path) == 2
    report = json.loads(capsys.readouterr().out)
    assert report["structural"] == "FAIL" and report["location"] == ["layer", 0, "A", 1, 1]
    cnf_path.write_text("{not json")
    assert run("certify", "--cnf", cnf_path) == 1


def test_export_mlp(tmp_path, fixture_model, points, capsys):
    samples, model = fixture_model
    out = tmp_path / "mlp.json"
    assert run("export-mlp", "--model", model, "--samples", samples, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["format"] == "relumlp/1" and "complexity" in doc
    X = np.loadtxt(points, delimiter=",", skiprows=1, ndmin=2)
    # evaluate the exported layers with plain numpy, outside the package
    h = X.T
    for k, layer in enumerate(doc["layers"]):
        h = np.asarray(layer["W"]) @ h + np.asarray(layer["b"])[:, None]
        if k < len(doc["layers"]) - 1:
            h = np.maximum(h, 0)
    assert run("eval", "--model", model, "--points", points, "--out", tmp_path / "d.csv") == 0
    assert np.max(np.abs(h[0] - _values(tmp_path / "d.csv"))) <= 1e-9


def test_export_mlp_single_piece(tmp_path):
    (tmp_path / "s.csv").write_text("x1,y\n0.5,1\n")
    io.save_json(tmp_path / "m.json", {"format": "dualnet/1", "L": 1.0, "dim": 1, "directions": [[0.25]],
                                       "intercepts": [0.875], "meta": {}})
    out = tmp_path / "mlp.json"
    assert run("export-mlp", "--model", tmp_path / "m.json", "--samples", tmp_path / "s.csv", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert len(doc["layers"]) == 1 and doc["complexity"]["phi"]["depth"] == 1


def test_export_mlp_rejects_cnf(tmp_path, fixture_model):
    _, model = fixture_model
    assert run("embed-cnf", "--model", model, "--out", tmp_path / "c.json") == 0
    assert run("export-mlp", "--model", tmp_path / "c.json", "--out", tmp_path / "x.json") == 2


def test_sample_command(tmp_path):
    out = tmp_path / "s.csv"
    assert run("sample", "--function", "huber", "--dim", 3, "--n", 20, "--seed", 2, "--out", out) == 0
    X, y = io.read_samples(out)
    assert X.shape == (20, 3) and np.all(np.linalg.norm(X, axis=1) <= 1)


def test_train_deterministic_csv(tmp_path, monkeypatch):
    # smaller widths keep this test fast; the paper-width run lives in the acceptance suite
    monkeypatch.setattr(cli.training, "PAPER_CNF_POOLED_WIDTH", 20)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ("train", "--target-dim", 2, "--runs", 1, "--iters", 5, "--seed", 3, "--jensen-probes", 50)
    assert run(*args, "--out", a, "--json", tmp_path / "a.json") == 0
    assert run(*args, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "dim,run,param_ratio,train_mse,test_mse,jensen_gap"
    std = [l for l in lines if ",std," in l][0].split(",")
    assert all(float(v) == 0.0 for v in std[2:])


def test_help_documents_columns(capsys):
    with pytest.raises(SystemExit):
        run("ablate", "--help")
    assert "param_ratio, train_mse, test_mse, jensen_gap" in capsys.readouterr().out
