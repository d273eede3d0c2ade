"""Hessian-based comparator.

The gradient comes from a reverse sweep over the adjoint graph.  Hessian rows
come from pushing forward tangents through the original graph and then
through the adjoint graph, i.e. the derivative of every adjoint node along
each seeded direction.  Seeding with the identity gives the full Hessian;
seeding with the rows of ``L`` gives ``H @ L.T`` (batched Hessian-vector
products), enough for a low-rank operator.

Tangent liveness follows the usual reverse-mode schedule: forward tangents
are kept until the reverse sweep has finished with them, which is after the
adjoint of the node itself has been formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costmodel import (CostReport, LiveTracker, attach_stats, baseline_release_step, check_profile,
                        predict_memory_profile)
from .dof import run_fingerprint
from .graph import Affine, Graph, NonFiniteError, Unary, as_points, edge_stats
from .numerics import DimensionError
from .operator import Decomposition, OperatorSpec


@dataclass(frozen=True)
class AdjointGraph:
    """One adjoint node per base node (inputs included), in reverse order.

    ``consumers[slot]`` lists ``(consumer_slot, arg_position)`` so that the
    adjoint of ``slot`` is ``sum dF_j/dv[slot] * adjoint[j]`` over that list.
    """

    base: Graph
    consumers: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def n_adjoint(self) -> int:
        return len(self.consumers)

    def adjoints(self, x) -> np.ndarray:
        g = self.base
        pts, batched = as_points(g, x)
        n = g.n_inputs
        vals = np.empty((g.n_slots, pts.shape[1]))
        vals[:n] = pts
        local_grads = []
        for j, op in enumerate(g.nodes):
            v, grads, _ = op.local(vals[g.arg_slots[j]])
            vals[n + j] = v
            local_grads.append(grads)
        adj = np.zeros_like(vals)
        adj[-1] = 1.0
        for i in range(g.n_slots - 2, -1, -1):
            for j, p in self.consumers[i]:
                adj[i] += local_grads[j - n][p] * adj[j]
        return adj if batched else adj[:, 0]

    def gradient(self, x) -> np.ndarray:
        adj = self.adjoints(x)
        n = self.base.n_inputs
        return adj[:n].T if adj.ndim == 2 else adj[:n]


def build_adjoint(graph: Graph) -> AdjointGraph:
    consumers: list[list[tuple[int, int]]] = [[] for _ in range(graph.n_slots)]
    for j in range(graph.n_nodes):
        for p, s in enumerate(graph.arg_slots[j]):
            consumers[s].append((graph.n_inputs + j, p))
    return AdjointGraph(graph, tuple(tuple(c) for c in consumers))


@dataclass
class HessianResult:
    value: float | np.ndarray
    grad: np.ndarray
    hess: np.ndarray | None
    operator_value: float | np.ndarray | None
    cost: CostReport
    asymmetry: float = 0.0
    hvp: np.ndarray | None = field(default=None, repr=False)


def _second_order(graph: Graph, pts: np.ndarray, seeds: np.ndarray | None, method: str):
    """Forward tangents over the graph, then tangents of the adjoints.

    Returns values, adjoint scalars, input adjoint tangents (N, w, B) and the
    cost report.  ``seeds`` is w-by-N (None: identity).
    """
    n = graph.n_inputs
    n_slots = graph.n_slots
    bsz = pts.shape[1]
    w = n if seeds is None else seeds.shape[0]
    stats = edge_stats(graph)
    cost = CostReport(method=method, points=bsz, width=w)
    attach_stats(cost, stats)
    live = LiveTracker()
    tangent = weight_f = scalar = trans = 0
    used = stats.tau >= 0

    V = np.empty((n_slots, bsz))
    TF = np.zeros((n_slots, w, bsz))
    V[:n] = pts
    for k in range(n):
        if used[k]:
            if seeds is None:
                TF[k, k, :] = 1.0
            else:
                TF[k] = seeds[:, k][:, None]
            live.alloc(w)

    local: list[tuple[np.ndarray, np.ndarray]] = []
    for j, op in enumerate(graph.nodes):
        sj = n + j
        args = graph.arg_slots[j]
        if isinstance(op, Affine):
            V[sj] = op.w @ V[args] + op.bias
            TF[sj] = np.tensordot(op.w, TF[args], axes=1)
            grads = op.w[:, None]
            hess = None
        elif isinstance(op, Unary):
            u = V[args[0]]
            act = op.act
            V[sj] = act.f(u)
            d1 = act.d1(u)
            TF[sj] = d1 * TF[args[0]]
            grads = d1[None]
            hess = act.d2(u)[None] if act.curved else None
            if act.transcendental:
                trans += 1
        else:
            V[sj], grads, hess = op.local(V[args])
            TF[sj] = np.einsum("kb,krb->rb", grads, TF[args])
        tangent += args.size * w
        if not np.all(np.isfinite(V[sj])):
            raise NonFiniteError(j)
        local.append((grads, hess))
        live.alloc(w)
        live.sample()

    partners: list[list[int]] = [[] for _ in range(n_slots)]
    for i, l in stats.r_pairs:
        partners[i].append(l)
        if i != l:
            partners[l].append(i)
    release = baseline_release_step(stats)
    freed_at: dict[int, list[int]] = {}
    for i in np.flatnonzero(used):
        freed_at.setdefault(int(release[i]), []).append(int(i))

    abar = np.zeros((n_slots, bsz))
    AT = np.zeros((n_slots, w, bsz))
    have_at = np.zeros(n_slots, dtype=bool)
    coef: dict[tuple[int, int], np.ndarray] = {}
    abar[-1] = 1.0
    have_at[-1] = True
    live.alloc(w)
    for j in range(n_slots - 1, -1, -1):
        if not used[j]:
            continue
        for l in partners[j]:
            key = (j, l) if j <= l else (l, j)
            AT[j] += coef[key] * TF[l]
            tangent += w
        if j >= n:
            op = graph.nodes[j - n]
            args = graph.arg_slots[j - n]
            grads, hess = local[j - n]
            abar[args] += grads * abar[j]
            scalar += args.size
            AT[args] += grads[:, None, :] * AT[j][None]
            tangent += args.size * w
            fresh = args[~have_at[args]]
            if fresh.size:
                have_at[fresh] = True
                live.alloc(w * fresh.size)
            if hess is not None:
                for (p, q), h in zip(op.pairs, hess):
                    i, l = int(args[p]), int(args[q])
                    key = (i, l) if i <= l else (l, i)
                    c = h * abar[j]
                    coef[key] = coef[key] + c if key in coef else c
                    weight_f += 1
        if not np.all(np.isfinite(AT[j])):
            raise NonFiniteError(j - n, "adjoint tangent")
        live.sample()
        if j >= n:
            live.free(w)
            AT[j] = np.nan
        for i in freed_at.get(j, ()):
            live.free(w)
            TF[i] = np.nan

    cost.tangent_flops = tangent * bsz
    cost.pair_weight_flops = weight_f * bsz
    cost.scalar_flops = scalar * bsz
    cost.transcendental_calls = trans * bsz
    cost.peak_live_reals = live.peak
    cost.profile = live.profile
    pred, peak = predict_memory_profile(stats, n, w, "hessian" if seeds is None else "hvp")
    cost.predicted_profile = pred.tolist()
    cost.predicted_peak = peak
    check_profile(cost)
    return V[-1].copy(), abar[:n].copy(), AT[:n].copy(), cost


def _out(arr, batched):
    return arr if batched else arr[0]


def hessian_full(graph: Graph, x) -> HessianResult:
    pts, batched = as_points(graph, x)
    value, grad, rows, cost = _second_order(graph, pts, None, "hessian")
    h = np.moveaxis(rows, 2, 0)  # (B, N, N)
    asym = float(np.max(np.abs(h - np.swapaxes(h, 1, 2)))) if h.size else 0.0
    h = 0.5 * (h + np.swapaxes(h, 1, 2))
    cost.fingerprint = run_fingerprint(graph.fingerprint, "", pts)
    return HessianResult(
        value=_out(value, batched) if batched else float(value[0]),
        grad=grad.T if batched else grad[:, 0],
        hess=h if batched else h[0],
        operator_value=None,
        cost=cost,
        asymmetry=asym,
    )


def _lower_order_terms(spec: OperatorSpec, grad, value):
    extra = 0.0
    flops = 0
    if spec.b is not None:
        extra = extra + spec.b @ grad
        flops += spec.n
    if spec.c:
        extra = extra + spec.c * value
        flops += 1
    return extra, flops


def operator_via_hessian(graph: Graph, spec: OperatorSpec, x) -> HessianResult:
    if spec.n != graph.n_inputs:
        raise DimensionError(f"graph has {graph.n_inputs} inputs, operator {spec.n}")
    pts, batched = as_points(graph, x)
    res = hessian_full(graph, pts.T)
    h = res.hess  # (B, N, N)
    opv = np.einsum("ij,bij->b", spec.a.data, h)
    extra, flops = _lower_order_terms(spec, res.grad.T, res.value)
    opv = opv + extra
    cost = res.cost
    cost.contraction_flops = (spec.n * spec.n + flops) * cost.points
    cost.fingerprint = run_fingerprint(graph.fingerprint, spec.fingerprint, pts)
    return HessianResult(
        value=res.value if batched else float(res.value[0]),
        grad=res.grad if batched else res.grad[0],
        hess=h if batched else h[0],
        operator_value=opv if batched else float(opv[0]),
        cost=cost,
        asymmetry=res.asymmetry,
    )


def operator_via_hvp(graph: Graph, dec: Decomposition, spec: OperatorSpec, x) -> HessianResult:
    """``sum_k d_k l_k^T H l_k`` from r Hessian-vector products."""
    if dec.n != spec.n or spec.n != graph.n_inputs:
        raise DimensionError(f"graph has {graph.n_inputs} inputs, operator {spec.n}, decomposition {dec.n}")
    if dec.fingerprint and dec.fingerprint != spec.fingerprint:
        raise ValueError("decomposition was not produced from this operator")
    pts, batched = as_points(graph, x)
    l = np.asarray(dec.l)
    value, grad, hl, cost = _second_order(graph, pts, l, "hvp")
    # hl[k, m, b] = (H l_m)_k
    opv = np.einsum("m,mk,kmb->b", np.asarray(dec.d), l, hl)
    extra, flops = _lower_order_terms(spec, grad, value)
    opv = opv + extra
    cost.contraction_flops = (dec.rank * spec.n + flops) * cost.points
    cost.decomposition_flops = dec.mults
    cost.fingerprint = run_fingerprint(graph.fingerprint, spec.fingerprint, pts)
    hvp = np.moveaxis(hl, 2, 0)
    return HessianResult(
        value=value if batched else float(value[0]),
        grad=grad.T if batched else grad[:, 0],
        hess=None,
        operator_value=opv if batched else float(opv[0]),
        cost=cost,
        hvp=hvp if batched else hvp[0],
    )
