"""Sweep random (graph, operator, point) triples through the oracle chain and report the worst errors.

    python scripts/check_chain.py --triples 400 --nodes 20
"""

from __future__ import annotations

import argparse
import itertools
import time

import numpy as np

from dofprop.networks import random_graph
from dofprop.operator import make_coefficients
from dofprop.verify import oracle_chain


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--triples", type=int, default=120)
    p.add_argument("--nodes", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    combos = itertools.cycle(itertools.product((2, 4, 8, 16), ("elliptic", "low_rank", "general")))
    t0 = time.perf_counter()
    worst_exact = worst_fd = 0.0
    failures = []
    for k in range(args.triples):
        n, kind = next(combos)
        seed = args.seed + k
        g = random_graph(n, args.nodes, seed)
        spec = make_coefficients(kind, "dense", n, seed)
        x = 0.7 * np.random.default_rng(seed).standard_normal(n)
        rep = oracle_chain(g, spec, x)
        worst_exact = max(worst_exact, rep.exact_err)
        worst_fd = max(worst_fd, rep.fd_err)
        if not rep.ok:
            failures.append((seed, n, kind, rep))
    print(f"{args.triples} triples in {time.perf_counter() - t0:.1f}s: worst exact {worst_exact:.2e}, "
          f"worst fd {worst_fd:.2e}, {len(failures)} failures")
    for seed, n, kind, rep in failures:
        print(f"  seed={seed} n={n} kind={kind}: {rep}")


if __name__ == "__main__":
    main()
