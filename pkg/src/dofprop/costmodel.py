"""Multiplication counters and the analytic cost/memory models.

Only multiplications count as FLOPs.  ``mults`` is the headline figure:
tangent-vector work, Gram products, pair weights and the final contraction.
Scalar chain work (the ``s``/``t`` channels of the forward method, the scalar
adjoint pass of the baseline) and transcendental calls are tracked in their
own fields and kept out of the headline.

Flop counters are totals over all evaluated points; live-memory figures are
per point, in 64-bit reals held by tangent states.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .graph import EdgeStats, Graph, edge_stats


@dataclass
class CostReport:
    method: str
    points: int = 1
    width: int = 0  # r for the forward method / hvp, N for the full Hessian
    n_inputs: int = 0
    tangent_flops: int = 0
    gram_flops: int = 0
    pair_weight_flops: int = 0
    contraction_flops: int = 0
    scalar_flops: int = 0
    transcendental_calls: int = 0
    decomposition_flops: int = 0
    fallbacks: int = 0
    peak_live_reals: int = 0
    predicted_peak: int = 0
    profile: list[int] = field(default_factory=list, repr=False)
    predicted_profile: list[int] = field(default_factory=list, repr=False)
    e_count: int = 0
    t_count: int = 0
    r_count: int = 0
    r_diag: int = 0
    fingerprint: str = ""

    @property
    def second_order_pair_flops(self) -> int:
        return self.gram_flops + self.pair_weight_flops

    @property
    def mults(self) -> int:
        return self.tangent_flops + self.second_order_pair_flops + self.contraction_flops

    def per_point(self, name: str) -> float:
        return getattr(self, name) / self.points

    def to_dict(self, with_profiles: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not with_profiles:
            d.pop("profile")
            d.pop("predicted_profile")
        d["mults"] = self.mults
        d["second_order_pair_flops"] = self.second_order_pair_flops
        return d


class LiveTracker:
    """Counts live tangent reals over a run and records one sample per step."""

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.profile: list[int] = []

    def alloc(self, n: int):
        self.live += n

    def free(self, n: int):
        self.live -= n
        assert self.live >= 0

    def sample(self):
        self.profile.append(self.live)
        if self.live > self.peak:
            self.peak = self.live


def attach_stats(cost: CostReport, stats: EdgeStats):
    cost.e_count = stats.e_count
    cost.t_count = stats.t_count
    cost.r_count = stats.r_count
    cost.r_diag = stats.r_diag
    cost.n_inputs = stats.n_inputs


def check_profile(cost: CostReport):
    """Runtime guard: measured liveness must never exceed the model."""
    measured = np.asarray(cost.profile)
    predicted = np.asarray(cost.predicted_profile)
    if measured.shape != predicted.shape or np.any(measured > predicted):
        raise AssertionError(f"{cost.method}: live tangent reals exceed the predicted profile")


# --- closed forms ------------------------------------------------------------


def predict_flops(stats: EdgeStats, n: int, r: int, method: str) -> int:
    """Per-point multiplication estimate from edge statistics.

    dof:     0.5 r |R| + r |E| + 0.5 |T|
    hessian: n (|R| + 2|E|) + 0.5 |T|
    hvp:     r (|R| + 2|E|) + 0.5 |T|   (r single-tangent passes)
    """
    if r > n:
        raise ValueError("rank cannot exceed the input dimension")
    e, t, rr = stats.e_count, stats.t_count, stats.r_count
    if method == "dof":
        return int(round(0.5 * r * rr + r * e + 0.5 * t))
    if method == "hessian":
        return int(round(n * (rr + 2 * e) + 0.5 * t))
    if method == "hvp":
        return int(round(r * (rr + 2 * e) + 0.5 * t))
    raise ValueError(f"unknown method {method!r}")


def predict_memory_profile(stats: EdgeStats, n: int, r: int, method: str) -> tuple[np.ndarray, int]:
    """Live tangent reals at each step of a run.

    dof: one sample per internal node, ``C(j) = r * #{i : i <= j <= tau(i)}``.
    hessian / hvp: forward tangents of width ``n`` (resp. ``r``) for every node
    stay live until the reverse sweep reaches the node itself and every
    partner sharing a curved consumer; one sample per forward step followed by
    one per reverse step.
    """
    n_in = stats.n_inputs
    used = stats.tau >= 0
    if method == "dof":
        delta = np.zeros(stats.n_slots + 1, dtype=np.int64)
        for i in np.flatnonzero(used):
            delta[max(i, n_in)] += 1
            delta[stats.tau[i] + 1] -= 1
        counts = np.cumsum(delta)[n_in:stats.n_slots]
        profile = r * counts
        return profile, int(profile.max())
    if method not in ("hessian", "hvp"):
        raise ValueError(f"unknown method {method!r}")
    w = n if method == "hessian" else r
    profile = list(_baseline_schedule(stats, w))
    arr = np.asarray(profile, dtype=np.int64)
    return arr, int(arr.max())


def baseline_release_step(stats: EdgeStats) -> np.ndarray:
    """Reverse-sweep step after which each forward tangent may be dropped."""
    rel = np.arange(stats.n_slots)
    has = stats.partner_min >= 0
    rel[has] = np.minimum(rel[has], stats.partner_min[has])
    return rel


def _baseline_schedule(stats: EdgeStats, w: int):
    n_in, n_slots = stats.n_inputs, stats.n_slots
    used = stats.tau >= 0
    live = w * int(np.count_nonzero(used[:n_in]))
    for j in range(n_in, n_slots):
        live += w
        yield live
    release = baseline_release_step(stats)
    freed_at: dict[int, int] = {}
    for i in np.flatnonzero(used):
        freed_at[int(release[i])] = freed_at.get(int(release[i]), 0) + 1
    adj_alloc_at: dict[int, int] = {}
    for i in np.flatnonzero(used[: n_slots - 1]):
        t = int(stats.tau[i])
        adj_alloc_at[t] = adj_alloc_at.get(t, 0) + 1
    for j in range(n_slots - 1, -1, -1):
        if not used[j]:
            continue
        if j == n_slots - 1:
            live += w
        live += w * adj_alloc_at.get(j, 0)
        yield live
        if j >= n_in:
            live -= w
        live -= w * freed_at.get(j, 0)


def support_rows_of(l: np.ndarray) -> list[frozenset]:
    """Nonzero rows of each column of a factor ``L`` (r-by-N)."""
    l = np.asarray(l)
    return [frozenset(np.flatnonzero(l[:, k]).tolist()) for k in range(l.shape[1])]


def predict_dof_counts(graph: Graph, support_rows: list[frozenset]) -> dict:
    """Structural per-point counts for the forward method with sparse tangents.

    ``support_rows[k]`` is the set of rows of ``L`` that are nonzero in column
    ``k``.  Supports propagate as unions along edges; a Gram product costs the
    size of the intersection of the two supports and is paid once per distinct
    argument pair, however many nodes consume it.
    """
    n = graph.n_inputs
    sup: list[frozenset | None] = [None] * graph.n_slots
    for k in range(n):
        sup[k] = support_rows[k]
    tangent = gram = weights = 0
    seen: set[tuple[int, int]] = set()
    for j, op in enumerate(graph.nodes):
        args = [int(s) for s in graph.arg_slots[j]]
        u: frozenset = frozenset()
        for s in args:
            tangent += len(sup[s])
            u = u | sup[s]
        for p, q in op.pairs:
            common = sup[args[p]] & sup[args[q]]
            if common:
                key = tuple(sorted((args[p], args[q])))
                if key not in seen:
                    seen.add(key)
                    gram += len(common)
                weights += 1
        sup[n + j] = u
    stats = edge_stats(graph)
    delta = np.zeros(graph.n_slots + 1, dtype=np.int64)
    for i in np.flatnonzero(stats.tau >= 0):
        delta[max(i, n)] += len(sup[i])
        delta[stats.tau[i] + 1] -= len(sup[i])
    live = np.cumsum(delta)[n:graph.n_slots].tolist()
    return {"tangent_flops": tangent, "gram_flops": gram, "pair_weight_flops": weights,
            "profile": live, "peak": max(live)}


# --- summaries ---------------------------------------------------------------


@dataclass
class RatioSummary:
    """Baseline-over-forward ratios (larger favours the forward method)."""

    method: str
    baseline: str
    flop_ratio: float
    memory_ratio: float
    flop_fraction: float
    memory_fraction: float
    half_cost_ok: bool | None
    memory_ok: bool
    half_cost_slack: float = 0.0
    time_ratio: float | None = None
    kind: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def half_cost_bound(dof: CostReport, hessian: CostReport) -> float:
    """Upper bound on forward-method mults implied by the half-cost argument.

    0.5 * hessian mults + 0.5 |T| per point, plus 0.5 r |R_diag| per point:
    the i == l Gram entries cost r each and are not halved by symmetry.
    """
    per_point = 0.5 * dof.t_count + 0.5 * dof.width * dof.r_diag
    return 0.5 * hessian.mults + dof.points * per_point


def summarize(dof_cost: CostReport, base_cost: CostReport, kind: str | None = None,
              time_ratio: float | None = None) -> RatioSummary:
    if dof_cost.fingerprint != base_cost.fingerprint:
        raise ValueError("cost reports come from different runs")
    flop_ratio = base_cost.mults / dof_cost.mults if dof_cost.mults else float("inf")
    mem_ratio = base_cost.peak_live_reals / dof_cost.peak_live_reals if dof_cost.peak_live_reals else float("inf")
    t1 = None
    slack = 0.0
    if base_cost.method == "hessian":
        bound = half_cost_bound(dof_cost, base_cost)
        t1 = dof_cost.mults <= bound
        slack = bound - dof_cost.mults
    return RatioSummary(
        method=dof_cost.method,
        baseline=base_cost.method,
        flop_ratio=flop_ratio,
        memory_ratio=mem_ratio,
        flop_fraction=1.0 / flop_ratio if flop_ratio else float("inf"),
        memory_fraction=1.0 / mem_ratio if mem_ratio else float("inf"),
        half_cost_ok=t1,
        memory_ok=dof_cost.peak_live_reals < base_cost.peak_live_reals,
        half_cost_slack=slack,
        time_ratio=time_ratio,
        kind=kind,
    )


def to_json(obj) -> str:
    return json.dumps(obj, default=_jsonable, indent=2)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"not serializable: {type(o)}")
