"""Scalar computation graphs.

Node ids follow the usual convention: the ``N`` external inputs are
``-N .. -1`` (input ``x_k`` is node ``k - N``) and internal nodes are
``0 .. M`` in topological order, with ``M`` the output.  Engines address nodes
by *slot* (``node_id + N``), so slot order is also a topological order.

Every op exposes its distinct arguments (``op.args``), the structurally
nonzero entries of its local Hessian as unordered position pairs
(``op.pairs``) and a batched ``op.local(vals)`` returning value, first and
second local derivatives.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class GraphError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """A node produced NaN or inf."""

    def __init__(self, node: int, what: str = "value"):
        super().__init__(f"non-finite {what} at node {node}")
        self.node = node


# --- activations -------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _sigmoid_d1(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


def _sigmoid_d2(x):
    s = _sigmoid(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _tanh_d1(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _tanh_d2(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


@dataclass(frozen=True)
class Activation:
    name: str
    f: object
    d1: object
    d2: object
    curved: bool  # second derivative not identically zero
    transcendental: bool


ACTIVATIONS: dict[str, Activation] = {
    "tanh": Activation("tanh", np.tanh, _tanh_d1, _tanh_d2, True, True),
    "sin": Activation("sin", np.sin, np.cos, lambda x: -np.sin(x), True, True),
    "sigmoid": Activation("sigmoid", _sigmoid, _sigmoid_d1, _sigmoid_d2, True, True),
    "square": Activation("square", np.square, lambda x: 2.0 * x, lambda x: np.full_like(x, 2.0), True, False),
    "identity": Activation("identity", lambda x: x.copy(), np.ones_like, np.zeros_like, False, False),
}


# --- ops ---------------------------------------------------------------------


@dataclass(frozen=True)
class Affine:
    args: tuple[int, ...]
    weights: tuple[float, ...]
    bias: float = 0.0

    def __post_init__(self):
        if len(self.args) != len(self.weights) or not self.args:
            raise GraphError("affine node needs one weight per argument")
        if len(set(self.args)) != len(self.args):
            raise GraphError("affine node has repeated arguments")

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return ()

    @cached_property
    def w(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        return w

    def local(self, vals):
        b = vals.shape[1]
        return self.w @ vals + self.bias, np.repeat(self.w[:, None], b, axis=1), np.empty((0, b))


@dataclass(frozen=True)
class Unary:
    fn: str
    arg: int

    def __post_init__(self):
        if self.fn not in ACTIVATIONS:
            raise GraphError(f"unknown activation {self.fn!r}")

    @property
    def args(self) -> tuple[int, ...]:
        return (self.arg,)

    @property
    def act(self) -> Activation:
        return ACTIVATIONS[self.fn]

    @property
    def pairs(self):
        return ((0, 0),) if self.act.curved else ()

    def local(self, vals):
        u = vals[0]
        act = self.act
        hess = act.d2(u)[None] if act.curved else np.empty((0, u.shape[0]))
        return act.f(u), act.d1(u)[None], hess


@dataclass(frozen=True)
class Mul:
    lhs: int
    rhs: int

    @property
    def args(self):
        return (self.lhs,) if self.lhs == self.rhs else (self.lhs, self.rhs)

    @property
    def pairs(self):
        return ((0, 0),) if self.lhs == self.rhs else ((0, 1),)

    def local(self, vals):
        if self.lhs == self.rhs:
            u = vals[0]
            return u * u, (2.0 * u)[None], np.full((1, u.shape[0]), 2.0)
        a, b = vals
        return a * b, np.stack([b, a]), np.ones((1, a.shape[0]))


@dataclass(frozen=True)
class SumProduct:
    """``sum_d prod_k terms[d][k]``; the sum-of-products head of block MLPs."""

    terms: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.terms or any(len(t) == 0 for t in self.terms):
            raise GraphError("sumproduct needs non-empty terms")

    @cached_property
    def args(self) -> tuple[int, ...]:
        seen: dict[int, None] = {}
        for t in self.terms:
            for a in t:
                seen.setdefault(a, None)
        return tuple(seen)

    @cached_property
    def _positions(self) -> tuple[tuple[int, ...], ...]:
        where = {a: k for k, a in enumerate(self.args)}
        return tuple(tuple(where[a] for a in t) for t in self.terms)

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        found: dict[tuple[int, int], None] = {}
        for pos in self._positions:
            for p in range(len(pos)):
                for q in range(p + 1, len(pos)):
                    found.setdefault((min(pos[p], pos[q]), max(pos[p], pos[q])), None)
        return tuple(found)

    def local(self, vals):
        b = vals.shape[1]
        pair_index = {pq: k for k, pq in enumerate(self.pairs)}
        value = np.zeros(b)
        grads = np.zeros((len(self.args), b))
        hess = np.zeros((len(self.pairs), b))
        for pos in self._positions:
            f = vals[list(pos)]
            value += np.prod(f, axis=0)
            n = len(pos)
            for p in range(n):
                grads[pos[p]] += np.prod(np.delete(f, p, axis=0), axis=0)
                for q in range(p + 1, n):
                    rest = np.prod(np.delete(f, (p, q), axis=0), axis=0)
                    a, c = pos[p], pos[q]
                    key = (min(a, c), max(a, c))
                    hess[pair_index[key]] += 2.0 * rest if a == c else rest
        return value, grads, hess


Op = Affine | Unary | Mul | SumProduct


# --- graph -------------------------------------------------------------------


def topological_check(n_inputs: int, nodes: Sequence[Op]) -> bool:
    """True iff every op only references inputs or strictly earlier nodes."""
    for j, op in enumerate(nodes):
        for a in op.args:
            if not (-n_inputs <= a < j):
                return False
    return True


class Graph:
    """Immutable scalar DAG whose last node is the output."""

    def __init__(self, n_inputs: int, nodes: Sequence[Op]):
        if n_inputs < 1:
            raise GraphError("graph needs at least one input")
        nodes = tuple(nodes)
        if not nodes:
            raise GraphError("graph needs at least one internal node")
        if not topological_check(n_inputs, nodes):
            raise GraphError("node references itself or a later node")
        self.n_inputs = n_inputs
        self.nodes = nodes

        n = n_inputs
        self.n_slots = n + len(nodes)
        self.arg_slots: tuple[np.ndarray, ...] = tuple(
            np.fromiter((a + n for a in op.args), dtype=np.intp, count=len(op.args)) for op in nodes
        )
        consumers: list[list[int]] = [[] for _ in range(self.n_slots)]
        for j, slots in enumerate(self.arg_slots):
            for s in slots:
                consumers[s].append(n + j)
        self.consumers = tuple(tuple(c) for c in consumers)

        live = np.zeros(self.n_slots, dtype=bool)
        live[-1] = True
        for j in range(len(nodes) - 1, -1, -1):
            if live[n + j]:
                live[self.arg_slots[j]] = True
        dead = [j for j in range(len(nodes)) if not live[n + j]]
        if dead:
            raise GraphError(f"nodes {dead} do not reach the output")

    @property
    def output(self) -> int:
        return len(self.nodes) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def slot(self, node: int) -> int:
        return node + self.n_inputs

    def to_dict(self) -> dict:
        out = []
        for op in self.nodes:
            if isinstance(op, Affine):
                out.append({"op": "affine", "args": list(op.args), "weights": list(op.weights), "bias": op.bias})
            elif isinstance(op, Unary):
                out.append({"op": "unary", "fn": op.fn, "arg": op.arg})
            elif isinstance(op, Mul):
                out.append({"op": "mul", "lhs": op.lhs, "rhs": op.rhs})
            else:
                out.append({"op": "sumproduct", "terms": [list(t) for t in op.terms]})
        return {"n_inputs": self.n_inputs, "nodes": out}

    @classmethod
    def from_dict(cls, d: dict) -> "Graph":
        nodes: list[Op] = []
        for spec in d["nodes"]:
            kind = spec["op"]
            if kind == "affine":
                nodes.append(Affine(tuple(spec["args"]), tuple(float(w) for w in spec["weights"]), float(spec.get("bias", 0.0))))
            elif kind == "unary":
                nodes.append(Unary(spec["fn"], int(spec["arg"])))
            elif kind == "mul":
                nodes.append(Mul(int(spec["lhs"]), int(spec["rhs"])))
            elif kind == "sumproduct":
                nodes.append(SumProduct(tuple(tuple(int(a) for a in t) for t in spec["terms"])))
            else:
                raise GraphError(f"unknown op {kind!r}")
        return cls(int(d["n_inputs"]), nodes)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha1(self.to_json().encode()).hexdigest()

    def __repr__(self):
        return f"Graph(n_inputs={self.n_inputs}, n_nodes={self.n_nodes})"


class GraphBuilder:
    """Append-only helper; every method returns the id of the new node."""

    def __init__(self, n_inputs: int):
        self.n_inputs = n_inputs
        self._nodes: list[Op] = []

    @property
    def inputs(self) -> list[int]:
        return [k - self.n_inputs for k in range(self.n_inputs)]

    def _push(self, op: Op) -> int:
        self._nodes.append(op)
        return len(self._nodes) - 1

    def affine(self, args: Sequence[int], weights: Sequence[float], bias: float = 0.0) -> int:
        merged: dict[int, float] = {}
        for a, w in zip(args, weights, strict=True):
            merged[int(a)] = merged.get(int(a), 0.0) + float(w)
        return self._push(Affine(tuple(merged), tuple(merged.values()), float(bias)))

    def unary(self, fn: str, arg: int) -> int:
        return self._push(Unary(fn, int(arg)))

    def mul(self, lhs: int, rhs: int) -> int:
        return self._push(Mul(int(lhs), int(rhs)))

    def sumproduct(self, terms: Sequence[Sequence[int]]) -> int:
        return self._push(SumProduct(tuple(tuple(int(a) for a in t) for t in terms)))

    def build(self) -> Graph:
        return Graph(self.n_inputs, self._nodes)


# --- evaluation --------------------------------------------------------------


def as_points(graph: Graph, x) -> tuple[np.ndarray, bool]:
    """Return inputs as an ``(N, B)`` array plus whether the call was batched."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != graph.n_inputs:
        raise ValueError(f"expected {graph.n_inputs} inputs per point, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    return np.ascontiguousarray(x.T), batched


def forward_values(graph: Graph, x) -> np.ndarray:
    """All node values, indexed by slot: shape ``(n_slots,)`` or ``(n_slots, B)``."""
    pts, batched = as_points(graph, x)
    n = graph.n_inputs
    vals = np.empty((graph.n_slots, pts.shape[1]))
    vals[:n] = pts
    for j, op in enumerate(graph.nodes):
        args = graph.arg_slots[j]
        if isinstance(op, Affine):
            v = op.w @ vals[args] + op.bias
        elif isinstance(op, Unary):
            v = op.act.f(vals[args[0]])
        else:
            v = op.local(vals[args])[0]
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(j)
        vals[n + j] = v
    return vals if batched else vals[:, 0]


def evaluate(graph: Graph, x):
    """phi(x); a float for a single point, an array for a batch of points."""
    return forward_values(graph, x)[-1]


# --- edge statistics ---------------------------------------------------------


@dataclass
class EdgeStats:
    """Structural counts of a graph.

    Per-node arrays are indexed by slot and hold slot values.  ``tau`` is the
    last consumer (the output is its own last consumer, unused inputs get -1);
    ``partner_min`` is the smallest slot ``l`` with ``(i, l)`` in R, or -1.
    """

    n_inputs: int
    e_count: int
    t_count: int
    t_diag: int
    r_count: int
    r_diag: int
    fan_in: np.ndarray
    fan_out: np.ndarray
    tau: np.ndarray
    partner_min: np.ndarray
    r_pairs: frozenset = field(repr=False)

    @property
    def n_slots(self) -> int:
        return self.fan_in.size

    @property
    def n_vertices(self) -> int:
        """|V|: internal nodes plus the inputs that are actually used."""
        return int(np.count_nonzero(self.tau >= 0))

    def tau_of(self, node: int) -> int:
        t = int(self.tau[node + self.n_inputs])
        return t - self.n_inputs if t >= 0 else t


def edge_stats(graph: Graph) -> EdgeStats:
    n = graph.n_inputs
    fan_in = np.zeros(graph.n_slots, dtype=np.int64)
    fan_out = np.zeros(graph.n_slots, dtype=np.int64)
    tau = np.full(graph.n_slots, -1, dtype=np.int64)
    e = t = t_diag = 0
    r_ordered: set[tuple[int, int]] = set()
    for j, op in enumerate(graph.nodes):
        sj = n + j
        args = graph.arg_slots[j]
        fan_in[sj] = len(args)
        e += len(args)
        for s in args:
            fan_out[s] += 1
            tau[s] = max(tau[s], sj)
        for p, q in op.pairs:
            i, l = int(args[p]), int(args[q])
            if i == l:
                t += 1
                t_diag += 1
                r_ordered.add((i, i))
            else:
                t += 2
                r_ordered.add((i, l))
                r_ordered.add((l, i))
    tau[-1] = graph.n_slots - 1
    partner_min = np.full(graph.n_slots, -1, dtype=np.int64)
    for i, l in r_ordered:
        if partner_min[i] < 0 or l < partner_min[i]:
            partner_min[i] = l
    r_diag = sum(1 for i, l in r_ordered if i == l)
    return EdgeStats(
        n_inputs=n,
        e_count=e,
        t_count=t,
        t_diag=t_diag,
        r_count=len(r_ordered),
        r_diag=r_diag,
        fan_in=fan_in,
        fan_out=fan_out,
        tau=tau,
        partner_min=partner_min,
        r_pairs=frozenset((i, l) for i, l in r_ordered if i <= l),
    )


def transcendental_count(graph: Graph) -> int:
    return sum(1 for op in graph.nodes if isinstance(op, Unary) and op.act.transcendental)
