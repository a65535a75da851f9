"""Reconstruct |x| on the unit disk from a delta-net of samples and report sup-errors.

    python3 scripts/disk_reconstruction.py --eps 0.4 0.2 0.1
"""

import argparse
import json
import math
import time

import numpy as np

from convexrec import cnf, dual, relu
from convexrec.geometry import SampleSet, Subspace, ball_net


def sunflower(n):
    k = np.arange(n) + 0.5
    r, th = np.sqrt(k / n), math.pi * (3 - math.sqrt(5)) * k
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.4, 0.2, 0.1])
    ap.add_argument("--probes", type=int, default=10_000)
    ap.add_argument("--m-cap", type=int, default=dual.DEFAULT_M_CAP)
    args = ap.parse_args()

    probes = sunflower(args.probes)
    rho = dual.norm_functional()
    for eps in args.eps:
        t0 = time.perf_counter()
        X = ball_net(Subspace.full(2), 1.0, eps / 4)
        samples = SampleSet(X, rho(X), lipschitz=1.0)
        net = dual.build(samples, eps, m_cap=args.m_cap)
        err = dual.uniform_error(net, rho, probes)
        embed_err = cnf.agrees_with_dual(cnf.embed_dualnet(net), net, probes[:500])
        mlp = relu.max_affine_network(net.directions, net.intercepts).to_relu_network()
        mlp_err = float(np.max(np.abs(relu.forward(mlp, probes[:500])[:, 0] - net(probes[:500]))))
        print(json.dumps({
            "epsilon": eps,
            "N": samples.n,
            "M": net.m,
            "M_bound": dual.schedule(1.0, samples.diameter, eps).m_bound(2),
            "eta_achieved": net.meta["eta_achieved"],
            "sup_error": err,
            "cnf_vs_dual": embed_err,
            "mlp_vs_dual": mlp_err,
            "seconds": round(time.perf_counter() - t0, 3),
        }))


if __name__ == "__main__":
    main()
