"""Command-line interface.

Exit codes: 0 success, 1 I/O or parse error, 2 domain violation (inconsistent
data, invalid model, method/model mismatch), 3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import cnf, dual, relu, training
from . import io as cio
from .extension import primal_envelope_batch
from .geometry import DataInconsistencyError, DimensionError, SampleSet, Subspace, ball_net

EXIT_OK, EXIT_IO, EXIT_DOMAIN, EXIT_INTERNAL = 0, 1, 2, 3

SAMPLES_HELP = "sample CSV with header x1,...,xd,y (one row per sample)"
POINTS_HELP = "point CSV with header x1,...,xd; a trailing y column is ignored"
ABLATION_HELP = (
    "CSV columns: dim, run, param_ratio, train_mse, test_mse, jensen_gap; "
    "one row per run followed by a 'mean' and a 'std' row per dim"
)


class DomainError(Exception):
    pass


class InternalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("dimensions must be positive integers")
    return vals


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        cio.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _read_points(path, dim=None):
    try:
        X = cio.read_samples(path, with_values=False)
    except cio.FormatError:
        X, _ = cio.read_samples(path)
    if dim is not None and X.shape[1] != dim:
        raise DomainError(f"points have dim {X.shape[1]}, model expects {dim}")
    return X


def _sample_set(path, L=None) -> SampleSet:
    X, y = cio.read_samples(path)
    return SampleSet(X, y, L)


# commands


def cmd_sample(args) -> int:
    rng = training.make_rng(args.seed, "sample")
    f = dual.reference_functional(args.function, args.dim, seed=args.seed)
    if args.delta is not None:
        X = ball_net(Subspace.full(args.dim), args.radius, args.delta, seed=args.seed)
    elif args.domain == "ball":
        g = rng.normal(size=(args.n, args.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        X = args.radius * g * rng.uniform(size=(args.n, 1)) ** (1.0 / args.dim)
    else:
        X = rng.uniform(-args.radius, args.radius, size=(args.n, args.dim))
    _emit(args, cio.format_csv(X, f(X)))
    print(json.dumps({"N": int(X.shape[0]), "dim": args.dim, "lipschitz": f.lipschitz}), file=sys.stderr)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    samples = _sample_set(args.samples, args.lipschitz)
    net = dual.build(samples, args.epsilon, m_cap=args.m_cap, seed=args.seed)
    cio.save_model(args.out, net)
    m = net.meta
    print(json.dumps({"N": m["N"], "d": m["d"], "M": m["M"], "eta_achieved": m["eta_achieved"]}))
    return EXIT_OK


def _mlp_for(net: dual.DualNet, samples_path):
    """Folded ReLU-MLP for a dual net; with samples the inner min network is run too."""
    if samples_path is None:
        return relu.max_affine_network(net.directions, net.intercepts), None
    samples = _sample_set(samples_path, net.lipschitz)
    if samples.dim != net.dim:
        raise DomainError(f"samples have dim {samples.dim}, model expects {net.dim}")
    assembled = relu.assemble_max_min(samples, net.directions)
    if not np.allclose(assembled.offsets, net.intercepts, rtol=0, atol=1e-9):
        raise DomainError("samples do not reproduce the model's intercepts")
    return assembled, samples


def cmd_eval(args) -> int:
    model = cio.load_model(args.model)
    method = args.method
    if isinstance(model, dual.DualNet):
        X = _read_points(args.points, model.dim)
        if method == "dual":
            vals = dual.evaluate_batch(model, X)
        elif method == "cnf":
            vals = cnf.forward(cnf.embed_dualnet(model), X)
        elif method == "mlp":
            mm, _ = _mlp_for(model, args.samples)
            vals = relu.forward(mm.to_relu_network(), X)[:, 0]
        else:
            if args.samples is None:
                raise DomainError("--method primal needs --samples")
            samples = _sample_set(args.samples, model.lipschitz)
            if samples.dim != model.dim:
                raise DomainError(f"samples have dim {samples.dim}, model expects {model.dim}")
            vals = primal_envelope_batch(samples, X)
    elif isinstance(model, cnf.CnfModel):
        if method != "cnf":
            raise DomainError(f"a cnf/1 model cannot be evaluated with --method {method}")
        X = _read_points(args.points, model.dim)
        vals = cnf.forward(model, X)
    else:
        if method != "mlp":
            raise DomainError(f"a relumlp/1 model cannot be evaluated with --method {method}")
        if model.output_dim != 1:
            raise DomainError("only scalar-output networks can be evaluated")
        X = _read_points(args.points, model.input_dim)
        vals = relu.forward(model, X)[:, 0]
    _emit(args, cio.format_csv(X, vals, "value"))
    return EXIT_OK


def cmd_certify(args) -> int:
    doc = cio.load_json(args.cnf)
    if doc.get("format") == "dualnet/1":
        model = cnf.embed_dualnet(cio.dualnet_from_dict(doc))
    else:
        try:
            model = cnf.model_from_dict(doc, check=False)
        except (KeyError, TypeError, IndexError) as exc:
            raise cio.FormatError(f"malformed cnf/1 document: {exc!r}") from None
    report = cnf.validate(model)
    out = {"structural": "PASS" if report else "FAIL"}
    if not report:
        out.update({"violation": report.violation, "location": list(report.location or ())})
        print(json.dumps(out))
        return EXIT_DOMAIN
    bound = cnf.lipschitz_bound(model)
    box = (np.full(model.dim, -args.box), np.full(model.dim, args.box))
    gap = training.jensen_gap(model, args.probes, box, seed=args.seed)
    rng = training.make_rng(args.seed, "lipschitz-probes")
    a = rng.uniform(*box, size=(args.probes, model.dim))
    b = rng.uniform(*box, size=(args.probes, model.dim))
    dist = np.linalg.norm(a - b, axis=1)
    ok = dist > 0
    ratio = float(np.max(np.abs(model(a) - model(b))[ok] / dist[ok])) if ok.any() else 0.0
    out.update({"lipschitz_bound": bound, "sampled_lipschitz_ratio": ratio, "jensen_gap": gap})
    print(json.dumps(out))
    return EXIT_OK


def cmd_embed_cnf(args) -> int:
    model = cio.load_model(args.model)
    if not isinstance(model, dual.DualNet):
        raise DomainError("embed-cnf needs a dualnet/1 model")
    cio.save_model(args.out, cnf.embed_dualnet(model))
    return EXIT_OK


def cmd_export_mlp(args) -> int:
    model = cio.load_model(args.model)
    if not isinstance(model, dual.DualNet):
        raise DomainError("export-mlp needs a dualnet/1 model")
    mm, samples = _mlp_for(model, args.samples)
    complexity = {"phi": relu.complexity_report(mm.phi)}
    if not relu.bounds_hold(complexity["phi"], model.m):
        raise InternalError(f"max network violates its complexity bounds: {complexity['phi']}")
    if samples is not None:
        complexity["psi"] = relu.complexity_report(mm.psi)
        if not relu.bounds_hold(complexity["psi"], samples.n):
            raise InternalError(f"min network violates its complexity bounds: {complexity['psi']}")
    net = mm.to_relu_network()
    complexity["folded"] = relu.complexity_report(net)
    cio.save_json(args.out, relu.network_to_dict(net, {"complexity": complexity}))
    print(json.dumps(complexity))
    return EXIT_OK


def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(
        iterations=args.iters,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        jensen_probes=args.jensen_probes,
    )


def _ablation_table(rows, summary):
    table = []
    by_dim = {}
    for row in rows:
        by_dim.setdefault(row["dim"], []).append(row)
    for stats in summary:
        table.extend(by_dim[stats["dim"]])
        for kind in ("mean", "std"):
            extra = {c: stats[f"{c}_{kind}"] for c in training.ABLATION_COLUMNS[2:]}
            table.append({"dim": stats["dim"], "run": kind, **extra})
    return table


def cmd_ablate(args) -> int:
    cfg = _train_config(args)
    pooled = None if args.solve_width else training.PAPER_CNF_POOLED_WIDTH
    rows, summary = training.ablation(args.target_dim, args.runs, cfg, pooled_width=pooled)
    table = _ablation_table(rows, summary)
    cio.atomic_write_text(args.out, cio.format_table(table, training.ABLATION_COLUMNS))
    if args.json:
        cio.save_json(args.json, {"format": "ablation/1", "config": training.config_dict(cfg), "rows": rows, "summary": summary})
    for stats in summary:
        print(json.dumps(stats))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="convexrec", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="write samples of a built-in convex functional", description=SAMPLES_HELP)
    s.add_argument("--function", choices=sorted(dual.REFERENCE_FUNCTIONALS), default="norm")
    s.add_argument("--dim", type=_positive(int), default=2)
    s.add_argument("--n", type=_positive(int), default=100, help="number of random samples")
    s.add_argument("--domain", choices=("ball", "box"), default="ball")
    s.add_argument("--radius", type=_positive(float), default=1.0)
    s.add_argument("--delta", type=_positive(float), help="use a deterministic delta-net of the ball instead")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("reconstruct", help="build a dualnet/1 model from samples")
    s.add_argument("--samples", required=True, help=SAMPLES_HELP)
    s.add_argument("--lipschitz", type=_positive(float), required=True)
    s.add_argument("--epsilon", type=_positive(float), required=True)
    s.add_argument("--m-cap", type=_positive(int), default=dual.DEFAULT_M_CAP)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("eval", help="evaluate a model at points; writes CSV x1,...,xd,value")
    s.add_argument("--model", required=True)
    s.add_argument("--points", required=True, help=POINTS_HELP)
    s.add_argument("--method", choices=("dual", "primal", "cnf", "mlp"), default="dual")
    s.add_argument("--samples", help="sample CSV, needed by --method primal; optional for mlp")
    s.add_argument("--out", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("certify", help="check a cnf/1 model and probe convexity and Lipschitz bound")
    s.add_argument("--cnf", required=True)
    s.add_argument("--probes", type=_positive(int), default=1000)
    s.add_argument("--box", type=_positive(float), default=1.0, help="half-width of the probe box")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("embed-cnf", help="convert a dualnet/1 model into an equivalent cnf/1 model")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed_cnf)

    s = sub.add_parser("export-mlp", help="write the exact ReLU-MLP of a dualnet/1 model as relumlp/1")
    s.add_argument("--model", required=True)
    s.add_argument("--samples", help="also compile the inner min network from these samples")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_mlp)

    for name, helptext in (("train", "train CNFs on random convex targets"), ("ablate", "dimensional ablation")):
        s = sub.add_parser(name, help=helptext, description=ABLATION_HELP)
        s.add_argument("--target-dim", type=_int_list, default=[1] if name == "train" else [1, 20, 50, 100],
                       help="input dimension(s), comma-separated")
        s.add_argument("--runs", type=_positive(int), default=1 if name == "train" else 5)
        s.add_argument("--iters", type=int, default=200)
        s.add_argument("--lr", type=_positive(float), default=1e-3)
        s.add_argument("--batch-size", type=_positive(int), default=1000)
        s.add_argument("--jensen-probes", type=_positive(int), default=1000)
        s.add_argument("--solve-width", action="store_true", help="size the CNF to 1/3 of the target instead of the fixed widths")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", required=True, help=ABLATION_HELP)
        s.add_argument("--json", help="also write rows and summary as JSON")
        s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataInconsistencyError as exc:
        print(json.dumps({"error": "inconsistent data", "pair": list(exc.pair), "detail": str(exc)}), file=sys.stderr)
        return EXIT_DOMAIN
    except cnf.InvalidModelError as exc:
        report = exc.report
        print(json.dumps({"error": "invalid model", "violation": report.violation,
                          "location": list(report.location or ())}), file=sys.stderr)
        return EXIT_DOMAIN
    except (DomainError, DimensionError, training.NonFiniteLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (InternalError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (OSError, cio.FormatError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # remaining value errors come from malformed files
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
