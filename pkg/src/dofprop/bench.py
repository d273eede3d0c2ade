"""Desk-scale comparison harness.

A run builds the architecture once, decomposes each operator once, then times
only the repeated evaluation phase of every requested method on a fixed batch
of points.  Counters come from the first repeat and must be identical on the
others.  All methods evaluated on the same operator must agree on the sum of
operator values over the batch.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baseline import operator_via_hessian, operator_via_hvp
from .costmodel import CostReport, RatioSummary, summarize
from .dof import _merge, dof_evaluate, dof_evaluate_mlp_fused, forward_laplacian
from .networks import BlockMlpSpec, MlpSpec, architecture_from_dict, build_architecture
from .operator import OperatorSpec, decompose

METHODS = ("dof", "dof_fused", "hessian", "hvp", "forward_laplacian")
CHECKSUM_RTOL = 1e-8
WORKERS_ENV = "DOFPROP_WORKERS"


class ChecksumMismatch(RuntimeError):
    def __init__(self, operator: str, checksums: dict[str, float]):
        self.operator = operator
        self.checksums = checksums
        lines = [f"operator {operator}: methods disagree"]
        lines += [f"  {m:>18s}: {v:.17g}" for m, v in checksums.items()]
        super().__init__("\n".join(lines))


@dataclass
class BenchConfig:
    architecture: MlpSpec | BlockMlpSpec
    operators: list[dict]
    batch: int = 256
    repeats: int = 5
    methods: tuple[str, ...] = ("dof", "hessian")
    seed: int = 0
    sequential: bool = True

    def __post_init__(self):
        if isinstance(self.architecture, dict):
            self.architecture = architecture_from_dict(self.architecture)
        if not isinstance(self.architecture, (MlpSpec, BlockMlpSpec)):
            raise ValueError("architecture must be an mlp or block_mlp spec")
        if isinstance(self.operators, dict):
            self.operators = [self.operators]
        self.operators = [dict(o) for o in self.operators]
        if not self.operators:
            raise ValueError("at least one operator is required")
        n = self.architecture.n_inputs
        for op in self.operators:
            gen = op.setdefault("generator", {}) if "a" not in op else None
            if gen is not None:
                gen.setdefault("n", n)
                if int(gen["n"]) != n:
                    raise ValueError(f"operator dimension {gen['n']} does not match architecture input {n}")
        self.methods = tuple(self.methods)
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.batch < 1 or self.repeats < 1:
            raise ValueError("batch and repeats must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        ops = d.get("operators", d.get("operator"))
        if ops is None:
            raise ValueError("config needs 'operators' or 'operator'")
        if isinstance(ops, dict):
            ops = [ops]
        ops = [o if ("generator" in o or "a" in o) else {"generator": dict(o)} for o in ops]
        return cls(
            architecture=architecture_from_dict(d["architecture"]),
            operators=ops,
            batch=int(d.get("batch", 256)),
            repeats=int(d.get("repeats", 5)),
            methods=tuple(d.get("methods", ("dof", "hessian"))),
            seed=int(d.get("seed", 0)),
            sequential=bool(d.get("sequential", True)),
        )

    @classmethod
    def load(cls, path) -> "BenchConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture.to_dict(),
            "operators": [json.loads(json.dumps(o)) for o in self.operators],
            "batch": self.batch,
            "repeats": self.repeats,
            "methods": list(self.methods),
            "seed": self.seed,
            "sequential": self.sequential,
        }

    def points(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.standard_normal((self.batch, self.architecture.n_inputs))


def operator_label(op: dict) -> str:
    gen = op.get("generator")
    if gen is None:
        return op.get("kind") or "explicit"
    label = f"{gen['kind']}/{gen.get('structure', 'dense')}"
    if gen.get("rank") is not None:
        label += f"/r{gen['rank']}"
    return label


@dataclass
class BenchRow:
    operator: str
    method: str
    time_median: float
    time_iqr: float
    mults: int
    tangent_flops: int
    second_order_pair_flops: int
    contraction_flops: int
    peak_live_reals: int
    predicted_peak: int
    decomposition_flops: int
    checksum: float
    batch: int
    width: int
    times: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("times")
        return d


@dataclass
class BenchResult:
    config: BenchConfig
    rows: list[BenchRow]
    summaries: list[RatioSummary]
    decomposition_seconds: dict[str, float]
    build_seconds: float


def _workers(sequential: bool) -> int:
    if sequential:
        return 1
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def _combine(costs: list[CostReport]) -> CostReport:
    out = costs[0]
    for c in costs[1:]:
        out = _merge(out, c)
    out.method = costs[0].method
    out.decomposition_flops = costs[0].decomposition_flops
    return out


def _run_method(method, graph, arch, spec, dec, x, workers):
    def call(chunk):
        if method == "dof":
            return dof_evaluate(graph, dec, spec, chunk)
        if method == "dof_fused":
            return dof_evaluate_mlp_fused(arch, dec, chunk)
        if method == "hessian":
            return operator_via_hessian(graph, spec, chunk)
        if method == "hvp":
            return operator_via_hvp(graph, dec, spec, chunk)
        return forward_laplacian(graph, chunk)

    if workers == 1 or x.shape[0] < 2 * workers:
        res = call(x)
        return np.asarray(res.operator_value), res.cost
    chunks = np.array_split(x, workers)
    with ThreadPoolExecutor(workers) as pool:
        results = list(pool.map(call, chunks))
    vals = np.concatenate([np.asarray(r.operator_value) for r in results])
    cost = _combine([r.cost for r in results])
    cost.fingerprint = ""
    return vals, cost


def applicable(method: str, arch, spec: OperatorSpec) -> bool:
    if method == "dof_fused":
        return isinstance(arch, MlpSpec) and spec.b is None and spec.c == 0.0
    if method == "forward_laplacian":
        return spec.kind == "identity" and spec.b is None and spec.c == 0.0
    return True


def checksums_agree(checks: dict[str, float], scale: float, rtol: float = CHECKSUM_RTOL) -> bool:
    vals = list(checks.values())
    return all(abs(a - vals[0]) <= rtol * max(1.0, scale) for a in vals)


def run_bench(cfg: BenchConfig) -> BenchResult:
    t0 = time.perf_counter()
    graph = build_architecture(cfg.architecture)
    build_seconds = time.perf_counter() - t0
    x = cfg.points()
    workers = _workers(cfg.sequential)
    rows: list[BenchRow] = []
    summaries: list[RatioSummary] = []
    dec_seconds: dict[str, float] = {}
    for op in cfg.operators:
        label = operator_label(op)
        spec = OperatorSpec.from_dict(op)
        t0 = time.perf_counter()
        dec = decompose(spec)
        dec_seconds[label] = time.perf_counter() - t0
        costs: dict[str, CostReport] = {}
        checks: dict[str, float] = {}
        times: dict[str, float] = {}
        scale = 0.0
        for method in cfg.methods:
            if not applicable(method, cfg.architecture, spec):
                continue
            # untimed warm-up run; it is also the reference for the determinism check
            first = _run_method(method, graph, cfg.architecture, spec, dec, x, workers)
            samples = []
            for _ in range(cfg.repeats):
                t0 = time.perf_counter()
                vals, cost = _run_method(method, graph, cfg.architecture, spec, dec, x, workers)
                samples.append(time.perf_counter() - t0)
                if cost.mults != first[1].mults or not np.array_equal(vals, first[0]):
                    raise RuntimeError(f"{method}: counters or values changed between repeats")
            vals, cost = first
            checks[method] = float(np.sum(vals))
            scale = max(scale, float(np.sum(np.abs(vals))))
            q1, med, q3 = np.percentile(samples, [25, 50, 75])
            times[method] = float(med)
            costs[method] = cost
            rows.append(BenchRow(label, method, float(med), float(q3 - q1), cost.mults, cost.tangent_flops,
                                 cost.second_order_pair_flops, cost.contraction_flops, cost.peak_live_reals,
                                 cost.predicted_peak, cost.decomposition_flops, checks[method], cfg.batch,
                                 cost.width, samples))
        if not checksums_agree(checks, scale):
            raise ChecksumMismatch(label, checks)
        if "dof" in costs:
            for base in ("hessian", "hvp"):
                if base in costs:
                    dc, bc = costs["dof"], costs[base]
                    if not dc.fingerprint or not bc.fingerprint:
                        dc.fingerprint = bc.fingerprint = label
                    summaries.append(summarize(dc, bc, kind=label, time_ratio=times[base] / times["dof"]))
    return BenchResult(cfg, rows, summaries, dec_seconds, build_seconds)


# --- reports -----------------------------------------------------------------

CSV_FIELDS = ("operator", "method", "batch", "width", "mults", "tangent_flops", "second_order_pair_flops",
              "contraction_flops", "peak_live_reals", "predicted_peak", "decomposition_flops", "time_median",
              "time_iqr", "checksum")


def _ratio(num: float, den: float) -> str:
    return f"{num / den:.1f}" if den else "inf"


def emit_report(result: BenchResult, fmt: str = "json") -> str:
    if fmt == "json":
        doc = {
            "config": result.config.to_dict(),
            "batch": result.config.batch,
            "build_seconds": result.build_seconds,
            "decomposition_seconds": result.decomposition_seconds,
            "rows": [r.to_dict() for r in result.rows],
            "summaries": [s.to_dict() for s in result.summaries],
        }
        return json.dumps(doc, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for r in result.rows:
            writer.writerow(r.to_dict())
        return buf.getvalue()
    if fmt in ("md", "markdown"):
        lines = [
            f"Batch size: {result.config.batch} points; ratios are Hessian / method.",
            "",
            "| Operator | Method | Mults | Peak live reals | Time (ms) | Flop ratio | Memory ratio | Time ratio |",
            "|---|---|---:|---:|---:|---:|---:|---:|",
        ]
        by_op: dict[str, dict[str, BenchRow]] = {}
        for r in result.rows:
            by_op.setdefault(r.operator, {})[r.method] = r
        for opname, rows in by_op.items():
            ref = rows.get("hessian")
            for m, r in rows.items():
                fr = _ratio(ref.mults, r.mults) if ref else "-"
                mr = _ratio(ref.peak_live_reals, r.peak_live_reals) if ref else "-"
                tr = _ratio(ref.time_median, r.time_median) if ref else "-"
                lines.append(f"| {opname} | {m} | {r.mults} | {r.peak_live_reals} | "
                             f"{1e3 * r.time_median:.1f} | {fr} | {mr} | {tr} |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def verify_config(cfg: BenchConfig, n_points: int = 4) -> list[tuple[str, object]]:
    """Run the oracle chain on the first few points of every operator."""
    from .verify import oracle_chain

    graph = build_architecture(cfg.architecture)
    x = cfg.points()[:n_points]
    out = []
    for op in cfg.operators:
        spec = OperatorSpec.from_dict(op)
        for p in x:
            out.append((operator_label(op), oracle_chain(graph, spec, p)))
    return out
