"""Forward propagation of ``(v, g, s)`` tuples through a scalar graph.

For a factorisation ``A = L.T diag(d) L`` every node carries its value ``v``,
``g = L grad(v)`` and ``s = sum a_ij d_ij v``.  Each node needs only its
arguments' tuples, so one topological sweep yields the operator value at the
output.  An optional scalar channel ``t = b . grad(v)`` handles first-order
terms.

Tangent rows are stored compactly: each node records which rows of ``g`` can
be nonzero (its *support*), and work is only done on those rows.  With a
block-diagonal ``A`` this is what makes block-sparse networks cheap.

All entry points accept a single point ``x`` of shape (N,) or a batch (B, N).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .costmodel import CostReport, LiveTracker, attach_stats, check_profile, predict_memory_profile
from .graph import Affine, Graph, NonFiniteError, Unary, as_points, edge_stats
from .numerics import DimensionError
from .operator import Decomposition, OperatorSpec, decompose

FALLBACK_EPS = 1e-12


@dataclass
class NodeState:
    v: np.ndarray
    g: np.ndarray
    s: np.ndarray


@dataclass
class DofResult:
    value: float | np.ndarray
    operator_value: float | np.ndarray
    g_out: np.ndarray
    cost: CostReport
    s_out: float | np.ndarray = 0.0
    t_out: float | np.ndarray = 0.0
    states: list[NodeState] | None = field(default=None, repr=False)


def run_fingerprint(graph_fp: str, op_fp: str, x) -> str:
    h = hashlib.sha1(graph_fp.encode())
    h.update(op_fp.encode())
    h.update(np.ascontiguousarray(np.asarray(x, dtype=np.float64)).tobytes())
    return h.hexdigest()


class _Supports:
    """Interned row-index sets plus cached sign splits and intersections."""

    def __init__(self, r: int, d: np.ndarray):
        self.r = r
        self.neg = d < 0
        self.rows: list[np.ndarray] = []
        self._ids: dict[bytes, int] = {}
        self._split: list[tuple[np.ndarray, np.ndarray | None]] = []
        self._inter: dict[tuple[int, int], int] = {}
        self._union: dict[tuple[int, ...], int] = {}
        self.full = self.intern(np.arange(r))

    def intern(self, rows: np.ndarray) -> int:
        rows = np.asarray(rows, dtype=np.intp)
        key = rows.tobytes()
        sid = self._ids.get(key)
        if sid is None:
            sid = len(self.rows)
            self._ids[key] = sid
            self.rows.append(rows)
            neg = self.neg[rows]
            self._split.append((rows[~neg], rows[neg]) if neg.any() else (rows, None))
        return sid

    def size(self, sid: int) -> int:
        return self.rows[sid].size

    def union(self, sids) -> int:
        key = tuple(sorted(set(int(s) for s in sids)))
        if len(key) == 1:
            return key[0]
        sid = self._union.get(key)
        if sid is None:
            sid = self.intern(np.unique(np.concatenate([self.rows[s] for s in key])))
            self._union[key] = sid
        return sid

    def intersect(self, a: int, b: int) -> int:
        if a == b:
            return a
        key = (a, b) if a < b else (b, a)
        sid = self._inter.get(key)
        if sid is None:
            sid = self.intern(np.intersect1d(self.rows[a], self.rows[b]))
            self._inter[key] = sid
        return sid

    def gram(self, sid: int, gi: np.ndarray, gl: np.ndarray) -> np.ndarray:
        """Signed product ``gi^T D gl`` over the rows of ``sid``; r-by-B inputs."""
        pos, neg = self._split[sid]
        if sid == self.full and neg is None:
            return np.einsum("kb,kb->b", gi, gl)
        out = np.einsum("kb,kb->b", gi[pos], gl[pos])
        if neg is not None:
            out = out - np.einsum("kb,kb->b", gi[neg], gl[neg])
        return out


def _pair_key(i, l) -> tuple[int, int]:
    i, l = int(i), int(l)
    return (i, l) if i <= l else (l, i)


def _sweep(graph: Graph, pts: np.ndarray, l: np.ndarray | None, d: np.ndarray, b: np.ndarray | None,
           method: str, record: bool):
    """Core propagation.  ``l`` is the r-by-N factor (None: identity seeds)."""
    n = graph.n_inputs
    n_slots = graph.n_slots
    bsz = pts.shape[1]
    r = n if l is None else l.shape[0]
    stats = edge_stats(graph)
    sup = _Supports(r, d)

    V = np.empty((n_slots, bsz))
    G = np.zeros((n_slots, r, bsz))
    S = np.zeros((n_slots, bsz))
    T = np.zeros((n_slots, bsz)) if b is not None else None
    sid = np.full(n_slots, -1, dtype=np.intp)

    release_at: list[list[int]] = [[] for _ in range(n_slots)]
    for i in range(n_slots - 1):
        if stats.tau[i] >= 0:
            release_at[stats.tau[i]].append(i)

    # A Gram product depends only on the argument pair, so pairs consumed by
    # several nodes are computed once and kept until their last consumer.
    pair_uses: dict[tuple[int, int], int] = {}
    pair_last: dict[tuple[int, int], int] = {}
    for j, op in enumerate(graph.nodes):
        args = graph.arg_slots[j]
        for p, q in op.pairs:
            key = _pair_key(args[p], args[q])
            pair_uses[key] = pair_uses.get(key, 0) + 1
            pair_last[key] = n + j
    drop_at: list[list[tuple[int, int]]] = [[] for _ in range(n_slots)]
    for key, last in pair_last.items():
        if pair_uses[key] > 1:
            drop_at[last].append(key)
    gram_cache: dict[tuple[int, int], np.ndarray] = {}

    def shared_gram(i: int, il: int, common: int) -> np.ndarray:
        nonlocal gram_f
        key = _pair_key(i, il)
        gr = gram_cache.get(key)
        if gr is None:
            gr = sup.gram(common, G[i], G[il])
            gram_f += sup.size(common)
            if pair_uses[key] > 1:
                gram_cache[key] = gr
        return gr

    cost = CostReport(method=method, points=bsz, width=r)
    attach_stats(cost, stats)
    live = LiveTracker()
    tangent = gram_f = weight_f = scalar = trans = 0

    V[:n] = pts
    for k in range(n):
        if stats.tau[k] < 0:
            continue
        if l is None:
            rows = np.array([k])
            G[k, k, :] = 1.0
        else:
            rows = np.flatnonzero(l[:, k])
            G[k, rows, :] = l[rows, k][:, None]
        sid[k] = sup.intern(rows)
        if T is not None:
            T[k] = b[k]
        live.alloc(rows.size)

    states: list[NodeState] | None = [] if record else None

    for j, op in enumerate(graph.nodes):
        sj = n + j
        args = graph.arg_slots[j]
        k = args.size
        if isinstance(op, Affine):
            w = op.w
            V[sj] = w @ V[args] + op.bias
            ids = sid[args]
            first = ids[0]
            if np.all(ids == first):
                out = first
                if first == sup.full:
                    G[sj] = np.tensordot(w, G[args], axes=1)
                else:
                    rows = sup.rows[first]
                    G[sj, rows] = np.tensordot(w, G[np.ix_(args, rows)], axes=1)
                tangent += k * sup.size(first)
            else:
                out = sup.union(ids)
                for wi, i, si in zip(w, args, ids):
                    rows = sup.rows[si]
                    G[sj, rows] += wi * G[i, rows]
                    tangent += rows.size
            S[sj] = w @ S[args]
            scalar += k
            if T is not None:
                T[sj] = w @ T[args]
                scalar += k
        elif isinstance(op, Unary):
            a = args[0]
            act = op.act
            u = V[a]
            V[sj] = act.f(u)
            d1 = act.d1(u)
            out = sid[a]
            rows = sup.rows[out]
            if out == sup.full:
                G[sj] = d1 * G[a]
            else:
                G[sj, rows] = d1 * G[a, rows]
            tangent += rows.size
            S[sj] = d1 * S[a]
            scalar += 1
            if act.curved:
                S[sj] += act.d2(u) * shared_gram(a, a, out)
                weight_f += 1
            if T is not None:
                T[sj] = d1 * T[a]
                scalar += 1
            if act.transcendental:
                trans += 1
        else:
            value, grads, hess = op.local(V[args])
            V[sj] = value
            ids = sid[args]
            out = sup.union(ids)
            for gi, i, si in zip(grads, args, ids):
                rows = sup.rows[si]
                G[sj, rows] += gi * G[i, rows]
                tangent += rows.size
            S[sj] = np.einsum("kb,kb->b", grads, S[args])
            scalar += k
            for (p, q), h in zip(op.pairs, hess):
                i, il = args[p], args[q]
                common = sup.intersect(sid[i], sid[il])
                size = sup.size(common)
                if size == 0:
                    continue
                term = h * shared_gram(i, il, common)
                S[sj] += term if p == q else term + term
                weight_f += 1
            if T is not None:
                T[sj] = np.einsum("kb,kb->b", grads, T[args])
                scalar += k
        sid[sj] = out
        if not (np.all(np.isfinite(V[sj])) and np.all(np.isfinite(S[sj]))):
            raise NonFiniteError(j)
        if not np.all(np.isfinite(G[sj])):
            raise NonFiniteError(j, "tangent")
        live.alloc(sup.size(out))
        live.sample()
        if record:
            states.append(NodeState(V[sj].copy(), G[sj].copy(), S[sj].copy()))
        for i in release_at[sj]:
            live.free(sup.size(sid[i]))
            G[i] = np.nan
        for key in drop_at[sj]:
            gram_cache.pop(key, None)

    cost.tangent_flops = tangent * bsz
    cost.gram_flops = gram_f * bsz
    cost.pair_weight_flops = weight_f * bsz
    cost.scalar_flops = scalar * bsz
    cost.transcendental_calls = trans * bsz
    cost.peak_live_reals = live.peak
    cost.profile = live.profile
    predicted, peak = predict_memory_profile(stats, n, r, "dof")
    cost.predicted_profile = predicted.tolist()
    cost.predicted_peak = peak
    check_profile(cost)
    t_out = T[-1] if T is not None else np.zeros(bsz)
    return V[-1].copy(), G[-1].copy(), S[-1].copy(), t_out.copy(), cost, states


def _shape_out(arr, batched):
    return arr if batched else float(arr[0])


def _finish(graph, pts, batched, method, op_fp, c, sweep_out) -> DofResult:
    v, g, s, t, cost, states = sweep_out
    opv = s + t + c * v
    if not np.all(np.isfinite(opv)):
        raise NonFiniteError(graph.output, "operator value")
    cost.fingerprint = run_fingerprint(graph.fingerprint, op_fp, pts)
    return DofResult(
        value=_shape_out(v, batched),
        operator_value=_shape_out(opv, batched),
        g_out=g.T if batched else g[:, 0],
        cost=cost,
        s_out=_shape_out(s, batched),
        t_out=_shape_out(t, batched),
        states=states,
    )


def dof_evaluate(graph: Graph, dec: Decomposition, spec: OperatorSpec, x, record_states: bool = False) -> DofResult:
    """Operator value of ``spec`` applied to the graph function at ``x``."""
    if dec.n != spec.n or spec.n != graph.n_inputs:
        raise DimensionError(
            f"graph has {graph.n_inputs} inputs, operator {spec.n}, decomposition {dec.n}"
        )
    if dec.fingerprint and dec.fingerprint != spec.fingerprint:
        raise ValueError("decomposition was not produced from this operator")
    pts, batched = as_points(graph, x)
    out = _sweep(graph, pts, np.asarray(dec.l), np.asarray(dec.d), spec.b, "dof", record_states)
    res = _finish(graph, pts, batched, "dof", spec.fingerprint, spec.c, out)
    res.cost.decomposition_flops = dec.mults
    return res


def forward_laplacian(graph: Graph, x, record_states: bool = False) -> DofResult:
    """Laplacian by forward propagation; tangents are seeded with unit vectors."""
    from .numerics import SymMat

    pts, batched = as_points(graph, x)
    n = graph.n_inputs
    out = _sweep(graph, pts, None, np.ones(n), None, "forward_laplacian", record_states)
    return _finish(graph, pts, batched, "forward_laplacian", OperatorSpec(SymMat.identity(n)).fingerprint, 0.0, out)


def dof_evaluate_varying(graph: Graph, coefficients: Callable[[np.ndarray], OperatorSpec], x) -> DofResult:
    """Operator with point-dependent coefficients.

    ``coefficients(x_point)`` returns the constant operator for that point; it
    is decomposed once per point and costs add up across points.
    """
    pts, batched = as_points(graph, x)
    values, opvals, gs = [], [], []
    total: CostReport | None = None
    for p in range(pts.shape[1]):
        xp = pts[:, p]
        spec = coefficients(xp)
        res = dof_evaluate(graph, decompose(spec), spec, xp)
        values.append(res.value)
        opvals.append(res.operator_value)
        gs.append(res.g_out)
        total = res.cost if total is None else _merge(total, res.cost)
    total.fingerprint = run_fingerprint(graph.fingerprint, "varying", pts)
    if not batched:
        return DofResult(values[0], opvals[0], gs[0], total)
    return DofResult(np.array(values), np.array(opvals), np.array(gs, dtype=object), total)


def _merge(a: CostReport, b: CostReport) -> CostReport:
    out = CostReport(method=a.method, points=a.points + b.points, width=max(a.width, b.width), n_inputs=a.n_inputs)
    for name in ("tangent_flops", "gram_flops", "pair_weight_flops", "contraction_flops", "scalar_flops",
                 "transcendental_calls", "decomposition_flops", "fallbacks"):
        setattr(out, name, getattr(a, name) + getattr(b, name))
    out.peak_live_reals = max(a.peak_live_reals, b.peak_live_reals)
    out.predicted_peak = max(a.predicted_peak, b.predicted_peak)
    for name in ("e_count", "t_count", "r_count", "r_diag"):
        setattr(out, name, getattr(a, name))
    return out


# --- fused MLP path ----------------------------------------------------------


def dof_evaluate_mlp_fused(layers, dec: Decomposition, x) -> DofResult:
    """Layer-wise forward method for dense MLPs.

    The curvature term of a unit ``sigma(z)`` is formed from the
    post-activation tangent as ``sigma''/sigma'^2 * g_post^T D g_post``, which
    costs ``r`` per unit.  Units with ``|sigma'| < 1e-12`` use
    ``sigma'' * g_pre^T D g_pre`` instead and are counted in ``fallbacks``.
    """
    from .graph import ACTIVATIONS
    from .networks import mlp_graph, mlp_params

    params = mlp_params(layers)
    act = ACTIVATIONS[layers.activation]
    n = layers.widths[0]
    if dec.n != n:
        raise DimensionError(f"MLP has {n} inputs but decomposition is for {dec.n}")
    graph = mlp_graph(layers)
    pts, batched = as_points(graph, x)
    bsz = pts.shape[1]
    l = np.asarray(dec.l)
    d = np.asarray(dec.d)
    r = dec.rank
    neg = d < 0

    def signed_sq(gm):
        sq = gm * gm
        if neg.any():
            return sq[:, ~neg].sum(axis=1) - sq[:, neg].sum(axis=1)
        return sq.sum(axis=1)

    cost = CostReport(method="dof_fused", points=bsz, width=r)
    attach_stats(cost, edge_stats(graph))
    live = LiveTracker()
    tangent = gram_f = weight_f = scalar = trans = fallbacks = fb_gram = 0

    v = pts
    g = np.repeat(l.T[:, :, None], bsz, axis=2)  # (N0, r, B)
    s = np.zeros((n, bsz))
    live.alloc(n * r)
    live.sample()
    last = len(params) - 1
    for li, (w, bias) in enumerate(params):
        n_out, n_in = w.shape
        z = w @ v + bias[:, None]
        g_pre = np.einsum("ij,jrb->irb", w, g)
        s_pre = w @ s
        tangent += n_out * n_in * r
        scalar += n_out * n_in
        live.alloc(n_out * r)
        live.sample()
        live.free(n_in * r)
        if li == last:
            v, g, s = z, g_pre, s_pre
            break
        d1 = act.d1(z)
        g_post = d1[:, None, :] * g_pre
        tangent += n_out * r
        live.alloc(n_out * r)
        live.sample()
        s_new = d1 * s_pre
        scalar += n_out
        if act.curved:
            d2 = act.d2(z)
            bad = np.abs(d1) < FALLBACK_EPS
            safe = np.where(bad, 1.0, d1)
            curv = (d2 / (safe * safe)) * signed_sq(g_post)
            gram_f += n_out * r
            weight_f += n_out
            scalar += n_out
            if bad.any():
                units, cols = np.nonzero(bad)
                curv[units, cols] = d2[units, cols] * signed_sq(g_pre[units, :, cols])
                fallbacks += units.size
                fb_gram += units.size * r
            s_new = s_new + curv
        if act.transcendental:
            trans += n_out
        live.free(n_out * r)
        v, g, s = act.f(z), g_post, s_new
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(s))):
            raise NonFiniteError(li, "layer value")

    cost.tangent_flops = tangent * bsz
    cost.gram_flops = gram_f * bsz + fb_gram
    cost.pair_weight_flops = weight_f * bsz
    cost.scalar_flops = scalar * bsz
    cost.transcendental_calls = trans * bsz
    cost.fallbacks = fallbacks
    cost.peak_live_reals = live.peak
    cost.profile = live.profile
    cost.predicted_profile = fused_memory_profile(layers.widths, r)
    cost.predicted_peak = max(cost.predicted_profile)
    cost.decomposition_flops = dec.mults
    check_profile(cost)
    cost.fingerprint = run_fingerprint(graph.fingerprint, dec.fingerprint, pts)
    vout, sout = v[0], s[0]
    return DofResult(
        value=_shape_out(vout, batched),
        operator_value=_shape_out(sout, batched),
        g_out=g[0].T if batched else g[0, :, 0],
        cost=cost,
        s_out=_shape_out(sout, batched),
        t_out=0.0,
    )


def fused_memory_profile(widths, r: int) -> list[int]:
    """Live tangent reals of the fused path: one layer in, one layer out."""
    prof = [widths[0] * r]
    last = len(widths) - 2
    for li in range(len(widths) - 1):
        n_in, n_out = widths[li], widths[li + 1]
        prof.append((n_in + n_out) * r)
        if li < last:
            prof.append(2 * n_out * r)
    return prof
