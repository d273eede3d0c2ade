"""End-to-end acceptance checks, one per criterion.

Each ``criterion_*`` function returns ``(ok, detail)``; the pytest wrappers
print a single ``PASS``/``FAIL`` line per criterion and then assert. Running
this file directly prints the same lines without pytest.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dofprop.baseline import operator_via_hessian, operator_via_hvp
from dofprop.bench import BenchConfig, run_bench
from dofprop.costmodel import predict_dof_counts, predict_flops, support_rows_of, half_cost_bound
from dofprop.dof import dof_evaluate, dof_evaluate_mlp_fused, forward_laplacian
from dofprop.graph import edge_stats
from dofprop.networks import BlockMlpSpec, MlpSpec, build_architecture, build_block_mlp, build_mlp, random_graph
from dofprop.operator import OperatorSpec, decompose, make_coefficients
from dofprop.verify import oracle_chain

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
KINDS = ("elliptic", "low_rank", "general")
DESK_WIDTHS = (16,) + (64,) * 8 + (1,)

EXACT_RTOL = 1e-10
FD_RTOL = 1e-4
EXACT_BUDGET_S = 60.0
DESK_FLOP_RATIO = 1.8
RATIO_SLACK = 0.10
MEMORY_SLACK = 1.5
PREDICT_RTOL = 0.05
RANK_LAW_RTOL = 0.10
FUSED_RTOL = 1e-12


def _pair(graph, spec, x):
    dec = decompose(spec)
    return dof_evaluate(graph, dec, spec, x), operator_via_hessian(graph, spec, x), dec


def _benchmark_graphs():
    """(label, graph, operator) for every shipped benchmark architecture."""
    out = []
    for path in sorted(CONFIGS.glob("*.json")):
        cfg = BenchConfig.load(path)
        g = build_architecture(cfg.architecture)
        for op in cfg.operators:
            out.append((f"{path.stem}:{op['generator']['kind']}", g, OperatorSpec.from_dict(op)))
    return out


def criterion_1():
    t0 = time.perf_counter()
    worst_exact = worst_fd = 0.0
    failures = 0
    count = 0
    op_kinds = set()
    for n in (2, 4, 8, 16):
        for kind in KINDS:
            for seed in range(10):
                g = random_graph(n, 12 + seed % 5, 1000 * n + seed)
                op_kinds |= {type(op).__name__ for op in g.nodes}
                spec = make_coefficients(kind, "dense", n, seed)
                x = 0.7 * np.random.default_rng(seed + 17 * n).standard_normal(n)
                rep = oracle_chain(g, spec, x, fd_rtol=FD_RTOL, exact_rtol=EXACT_RTOL)
                worst_exact = max(worst_exact, rep.exact_err)
                worst_fd = max(worst_fd, rep.fd_err)
                failures += not (rep.exact_err < EXACT_RTOL and rep.fd_err < FD_RTOL)
                count += 1
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and count >= 100 and elapsed < EXACT_BUDGET_S and len(op_kinds) == 4
    return ok, (f"{count} triples, {failures} failures, op kinds {sorted(op_kinds)}, "
                f"worst exact {worst_exact:.1e}, worst fd {worst_fd:.1e}, {elapsed:.1f}s")


def criterion_2():
    x = np.random.default_rng(0).standard_normal((4, 16))
    violations = []
    for label, g, spec in _benchmark_graphs():
        dof, hess, _ = _pair(g, spec, x)
        if not dof.cost.mults <= half_cost_bound(dof.cost, hess.cost):
            violations.append(label)
    desk = build_mlp(MlpSpec(DESK_WIDTHS))
    dof, hess, _ = _pair(desk, make_coefficients("elliptic", "dense", 16, 0), x)
    ratio = hess.cost.mults / dof.cost.mults
    ok = not violations and ratio >= DESK_FLOP_RATIO * (1 - RATIO_SLACK)
    return ok, f"bound violations {violations}, desk MLP flop ratio {ratio:.2f} (target >= {DESK_FLOP_RATIO} -10%)"


def criterion_3():
    x = np.random.default_rng(1).standard_normal(16)
    bad = []
    for label, g, spec in _benchmark_graphs():
        if g.n_nodes >= 2:
            dof, hess, _ = _pair(g, spec, x)
            if not dof.cost.peak_live_reals < hess.cost.peak_live_reals:
                bad.append(label)
    for seed in range(20):
        g = random_graph(4, 16, seed)
        spec = make_coefficients("general", "dense", 4, seed)
        dof, hess, _ = _pair(g, spec, x[:4])
        if not dof.cost.peak_live_reals < hess.cost.peak_live_reals:
            bad.append(f"random{seed}")
    desk = build_mlp(MlpSpec(DESK_WIDTHS))
    dof, hess, _ = _pair(desk, make_coefficients("elliptic", "dense", 16, 0), x)
    limit = (2 / 8) * hess.cost.peak_live_reals * MEMORY_SLACK
    ok = not bad and dof.cost.peak_live_reals <= limit
    return ok, (f"violations {bad}, 8-layer peaks dof {dof.cost.peak_live_reals} vs hessian "
                f"{hess.cost.peak_live_reals} (limit {limit:.0f})")


def criterion_4():
    x = np.random.default_rng(2).standard_normal(16)
    worst_mults = worst_peak = 0.0
    pointwise = True
    for widths in ((16, 64, 64, 1), (16, 32, 32, 32, 32, 1), DESK_WIDTHS):
        g = build_mlp(MlpSpec(widths))
        s = edge_stats(g)
        dof, hess, _ = _pair(g, make_coefficients("elliptic", "dense", 16, 0), x)
        for cost, method in ((dof.cost, "dof"), (hess.cost, "hessian")):
            pred = predict_flops(s, 16, 16, method)
            worst_mults = max(worst_mults, abs(cost.mults - pred) / pred)
            pointwise &= bool(np.all(np.asarray(cost.profile) <= np.asarray(cost.predicted_profile)))
            worst_peak = max(worst_peak, abs(cost.peak_live_reals - cost.predicted_peak) / cost.predicted_peak)
    ok = worst_mults <= PREDICT_RTOL and pointwise and worst_peak <= PREDICT_RTOL
    return ok, f"worst mults error {100 * worst_mults:.2f}%, profile bound {pointwise}, worst peak error {100 * worst_peak:.2f}%"


def criterion_5():
    n = 16
    g = build_mlp(MlpSpec((n, 64, 64, 1)))
    x = np.random.default_rng(3).standard_normal(n)
    dof_m, hvp_m = {}, {}
    for r in (n // 4, n // 2, n):
        spec = make_coefficients("low_rank", "dense", n, 0, rank=r)
        dec = decompose(spec)
        assert dec.rank == r
        dof_m[r] = dof_evaluate(g, dec, spec, x).cost.mults
        hvp_m[r] = operator_via_hvp(g, dec, spec, x).cost.mults
    errs = []
    for r in (n // 4, n // 2):
        for m in (dof_m, hvp_m):
            errs.append(abs(m[r] / m[n] / (r / n) - 1))
    ell = make_coefficients("elliptic", "dense", n, 0)
    dof, hess, _ = _pair(g, ell, x)
    ell_ratio = hess.cost.mults / dof.cost.mults
    lr = make_coefficients("low_rank", "dense", n, 0, rank=n // 2)
    dof_lr, hess_lr, _ = _pair(g, lr, x)
    lr_ratio = hess_lr.cost.mults / dof_lr.cost.mults
    ok = max(errs) <= RANK_LAW_RTOL and lr_ratio > ell_ratio
    return ok, (f"worst deviation from r/N {100 * max(errs):.1f}%, low-rank (r=N/2) ratio {lr_ratio:.2f} "
                f"> elliptic ratio {ell_ratio:.2f}")


def criterion_6():
    x = np.random.default_rng(4).standard_normal((4, 16))
    dense = build_mlp(MlpSpec((16, 32, 32, 32, 32, 1)))
    block_spec = BlockMlpSpec(4, 4, (32, 32, 32, 32), 4)
    block = build_block_mlp(block_spec)
    lines, ok = [], True
    counters_match = True
    for kind in KINDS:
        d_dof, d_hess, _ = _pair(dense, make_coefficients(kind, "dense", 16, 0), x)
        b_dof, b_hess, dec = _pair(block, make_coefficients(kind, "block", 16, 0, block_size=4), x)
        dr = d_hess.cost.mults / d_dof.cost.mults
        br = b_hess.cost.mults / b_dof.cost.mults
        ok &= br > dr
        pred = predict_dof_counts(block, support_rows_of(dec.l))
        pts = x.shape[0]
        counters_match &= (pred["tangent_flops"] * pts == b_dof.cost.tangent_flops
                           and pred["gram_flops"] * pts == b_dof.cost.gram_flops
                           and pred["pair_weight_flops"] * pts == b_dof.cost.pair_weight_flops)
        lines.append(f"{kind} block {br:.1f} vs dense {dr:.1f}")
    return ok and counters_match, ", ".join(lines) + f"; sparse counter prediction exact: {counters_match}"


def criterion_7():
    rng = np.random.default_rng(5)
    worst = 0.0
    gram_ok = True
    for widths in ((8, 16, 1), (16, 64, 64, 1), DESK_WIDTHS):
        spec = MlpSpec(widths, activation="tanh", seed=1)
        g = build_mlp(spec)
        for kind in KINDS:
            op = make_coefficients(kind, "dense", widths[0], 2)
            dec = decompose(op)
            x = rng.standard_normal((6, widths[0]))
            fused = dof_evaluate_mlp_fused(spec, dec, x)
            generic = dof_evaluate(g, dec, op, x)
            err = np.max(np.abs(fused.operator_value - generic.operator_value) / np.maximum(1, np.abs(generic.operator_value)))
            worst = max(worst, float(err))
            gram_ok &= fused.cost.gram_flops == dec.rank * sum(widths[1:-1]) * x.shape[0]
    ok = worst < FUSED_RTOL and gram_ok
    return ok, f"worst fused/generic difference {worst:.1e}, second-order flops = r*sum(hidden widths): {gram_ok}"


def criterion_8():
    graphs = [random_graph(4, 20, s) for s in range(10)] + [build_mlp(MlpSpec((4, 16, 16, 1)))]
    identical = True
    for k, g in enumerate(graphs):
        spec = make_coefficients("identity", "dense", 4, 0)
        x = np.random.default_rng(k).standard_normal(4)
        a = dof_evaluate(g, decompose(spec), spec, x, record_states=True)
        f = forward_laplacian(g, x, record_states=True)
        identical &= all(np.array_equal(sa.v, sf.v) and np.array_equal(sa.g, sf.g) and np.array_equal(sa.s, sf.s)
                         for sa, sf in zip(a.states, f.states))
        identical &= bool(np.array_equal(a.operator_value, f.operator_value))
    return identical, f"{len(graphs)} graphs, all node states bit-identical: {identical}"


def criterion_9():
    d = {
        "architecture": {"type": "mlp", "widths": list(DESK_WIDTHS), "activation": "tanh", "seed": 0},
        "operators": [{"kind": "elliptic", "structure": "dense", "seed": 0}],
        "batch": 64,
        "repeats": 3,
        "methods": ["dof", "hessian"],
    }
    res = run_bench(BenchConfig.from_dict(d))
    t = {r.method: r.time_median for r in res.rows}
    ok = t["dof"] < t["hessian"]
    return ok, f"median dof {1e3 * t['dof']:.1f} ms vs hessian {1e3 * t['hessian']:.1f} ms (batch 64, n=16)"


CRITERIA = [
    (1, "exactness vs baseline and finite differences", criterion_1),
    (2, "half-cost bound and desk-scale flop ratio", criterion_2),
    (3, "peak memory below baseline", criterion_3),
    (4, "cost model fidelity", criterion_4),
    (5, "low-rank r/N law", criterion_5),
    (6, "sparse-Jacobian amplification", criterion_6),
    (7, "fused MLP path", criterion_7),
    (8, "forward Laplacian reduction", criterion_8),
    (9, "wall-clock direction", criterion_9),
]


def _line(num, name, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} criterion {num} ({name}): {detail}"


@pytest.mark.parametrize("num,name,fn", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(num, name, fn, capsys):
    ok, detail = fn()
    with capsys.disabled():
        print("\n" + _line(num, name, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    all_ok = True
    for num, name, fn in CRITERIA:
        ok, detail = fn()
        all_ok &= ok
        print(_line(num, name, ok, detail), flush=True)
    sys.exit(0 if all_ok else 1)
