"""Graph builders for the benchmark architectures.

Dense MLPs use the half-layer layout: for each hidden layer first all affine
pre-activation nodes, then all activation nodes; the output layer is a single
affine node without activation.  Block MLPs run one small MLP per input block
and join them with a sum-of-products head.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .graph import ACTIVATIONS, Graph, GraphBuilder


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activation: str = "tanh"
    weight_init: str = "normal"  # "normal": N(0, 1/fan_in); "ones": unit weights, zero bias
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"invalid widths {self.widths}")
        if self.widths[-1] != 1:
            raise ValueError("last width must be 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight_init not in ("normal", "ones"):
            raise ValueError(f"unknown weight_init {self.weight_init!r}")

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["widths"]), d.get("activation", "tanh"), d.get("weight_init", "normal"), int(d.get("seed", 0)))

    def to_dict(self) -> dict:
        return {"type": "mlp", "widths": list(self.widths), "activation": self.activation,
                "weight_init": self.weight_init, "seed": self.seed}


def _layer_params(widths, weight_init: str, rng: np.random.Generator):
    params = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        if weight_init == "ones":
            w, b = np.ones((n_out, n_in)), np.zeros(n_out)
        else:
            w = rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)
            b = 0.1 * rng.standard_normal(n_out)
        w.setflags(write=False)
        b.setflags(write=False)
        params.append((w, b))
    return params


@lru_cache(maxsize=64)
def mlp_params(spec: MlpSpec) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Weights ``(W, b)`` per layer; W has shape (fan_out, fan_in)."""
    return tuple(_layer_params(spec.widths, spec.weight_init, np.random.default_rng(spec.seed)))


def _emit_mlp(builder: GraphBuilder, inputs: list[int], params, activation: str) -> list[int]:
    cur = inputs
    last = len(params) - 1
    for li, (w, b) in enumerate(params):
        pre = [builder.affine(cur, w[i], b[i]) for i in range(w.shape[0])]
        cur = pre if li == last else [builder.unary(activation, p) for p in pre]
    return cur


def build_mlp(spec: MlpSpec) -> Graph:
    builder = GraphBuilder(spec.n_inputs)
    _emit_mlp(builder, builder.inputs, mlp_params(spec), spec.activation)
    return builder.build()


@lru_cache(maxsize=64)
def mlp_graph(spec: MlpSpec) -> Graph:
    return build_mlp(spec)


def mlp_forward(spec: MlpSpec, x) -> np.ndarray:
    """Plain matrix-form forward pass; x is (N,) or (B, N)."""
    act = ACTIVATIONS[spec.activation]
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    params = mlp_params(spec)
    for li, (w, b) in enumerate(params):
        h = h @ w.T + b
        if li < len(params) - 1:
            h = act.f(h)
    out = h[:, 0]
    return out if np.ndim(x) == 2 else float(out[0])


@dataclass(frozen=True)
class BlockMlpSpec:
    n_blocks: int
    block_input_dim: int
    hidden_widths: tuple[int, ...]
    block_output_dim: int
    activation: str = "tanh"
    weight_init: str = "normal"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.n_blocks < 1 or self.block_input_dim < 1 or self.block_output_dim < 1:
            raise ValueError("block counts and dimensions must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.n_blocks * self.block_input_dim

    @property
    def block_widths(self) -> tuple[int, ...]:
        return (self.block_input_dim, *self.hidden_widths, self.block_output_dim)

    @classmethod
    def from_dict(cls, d: dict) -> "BlockMlpSpec":
        return cls(int(d["n_blocks"]), int(d["block_input_dim"]), tuple(d["hidden_widths"]),
                   int(d["block_output_dim"]), d.get("activation", "tanh"), d.get("weight_init", "normal"),
                   int(d.get("seed", 0)))

    def to_dict(self) -> dict:
        return {"type": "block_mlp", "n_blocks": self.n_blocks, "block_input_dim": self.block_input_dim,
                "hidden_widths": list(self.hidden_widths), "block_output_dim": self.block_output_dim,
                "activation": self.activation, "weight_init": self.weight_init, "seed": self.seed}


def block_params(spec: BlockMlpSpec, block: int):
    rng = np.random.default_rng([spec.seed, block])
    return _layer_params(spec.block_widths, spec.weight_init, rng)


def build_block_mlp(spec: BlockMlpSpec) -> Graph:
    """k independent MLPs over contiguous input blocks, joined by
    ``sum_d prod_i MLP_i(x_i)[d]`` (factors in block order)."""
    builder = GraphBuilder(spec.n_inputs)
    xs = builder.inputs
    outs = []
    for blk in range(spec.n_blocks):
        lo = blk * spec.block_input_dim
        outs.append(_emit_mlp(builder, xs[lo:lo + spec.block_input_dim], block_params(spec, blk), spec.activation))
    builder.sumproduct([[outs[blk][dd] for blk in range(spec.n_blocks)] for dd in range(spec.block_output_dim)])
    return builder.build()


def block_mlp_forward(spec: BlockMlpSpec, x) -> np.ndarray:
    act = ACTIVATIONS[spec.activation]
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    prod = np.ones((x2.shape[0], spec.block_output_dim))
    for blk in range(spec.n_blocks):
        h = x2[:, blk * spec.block_input_dim:(blk + 1) * spec.block_input_dim]
        params = block_params(spec, blk)
        for li, (w, b) in enumerate(params):
            h = h @ w.T + b
            if li < len(params) - 1:
                h = act.f(h)
        prod = prod * h
    out = prod.sum(axis=1)
    return out if np.ndim(x) == 2 else float(out[0])


def architecture_from_dict(d: dict):
    kind = d.get("type", "mlp")
    if kind == "mlp":
        return MlpSpec.from_dict(d)
    if kind == "block_mlp":
        return BlockMlpSpec.from_dict(d)
    if kind == "graph":
        if "graph" in d:
            return Graph.from_dict(d["graph"])
        with open(d["path"]) as fh:
            return Graph.from_json(fh.read())
    raise ValueError(f"unknown architecture type {kind!r}")


def build_architecture(arch) -> Graph:
    if isinstance(arch, MlpSpec):
        return mlp_graph(arch)
    if isinstance(arch, BlockMlpSpec):
        return build_block_mlp(arch)
    if isinstance(arch, Graph):
        return arch
    raise TypeError(f"not an architecture: {arch!r}")


def random_graph(n_inputs: int, n_nodes: int, seed: int) -> Graph:
    """Random DAG mixing every op kind and activation.

    Arguments are drawn from recent nodes and inputs; a final affine node
    collects every node that would otherwise be dead.
    """
    rng = np.random.default_rng(seed)
    b = GraphBuilder(n_inputs)
    pool = list(b.inputs)
    acts = list(ACTIVATIONS)
    kinds = ["affine", "unary", "mul", "sumproduct"]
    for step in range(max(n_nodes - 1, 1)):
        kind = kinds[step % 4] if step < 4 else kinds[rng.integers(4)]
        recent = pool[-8:] if len(pool) > 8 and rng.random() < 0.7 else pool
        if kind == "affine":
            k = int(rng.integers(1, min(4, len(recent)) + 1))
            args = list(rng.choice(recent, size=k, replace=False))
            node = b.affine(args, rng.standard_normal(k) / np.sqrt(k), 0.3 * rng.standard_normal())
            node = b.unary(acts[int(rng.integers(len(acts)))], node) if rng.random() < 0.5 else node
        elif kind == "unary":
            act = acts[int(rng.integers(len(acts)))]
            src = int(rng.choice(recent))
            if act in ("square", "identity"):
                src = b.unary("tanh", src)
            node = b.unary(act, src)
        elif kind == "mul":
            lhs, rhs = (int(v) for v in rng.choice(recent, size=2, replace=True))
            node = b.unary("tanh", b.mul(lhs, rhs))
        else:
            n_terms = int(rng.integers(1, 3))
            terms = [list(rng.choice(recent, size=int(rng.integers(2, 4)), replace=True)) for _ in range(n_terms)]
            node = b.unary("sin", b.sumproduct(terms))
        pool.append(node)
    g_nodes = b._nodes
    used = set()
    for op in g_nodes:
        used.update(op.args)
    dangling = [i for i in range(len(g_nodes)) if i not in used]
    inputs_unused = [x for x in b.inputs if x not in used]
    sinks = dangling + inputs_unused
    w = rng.standard_normal(len(sinks))
    b.affine(sinks, w, 0.1)
    return b.build()
