"""Finite-difference oracles and the cross-method agreement chain.

Everything here evaluates the graph function only (no derivative code), so it
is independent of both the forward tuple method and the Hessian baseline.
Perturbed points are evaluated as one batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, evaluate
from .numerics import SymMat, as_vec
from .operator import OperatorSpec, apply_to_hessian, decompose

FD_RTOL = 1e-4
EXACT_RTOL = 1e-10


@dataclass(frozen=True)
class FdConfig:
    h: float = 1e-4
    scheme: str = "central"
    richardson: bool = True

    def __post_init__(self):
        if not (self.h > 0 and np.isfinite(self.h)):
            raise ValueError("step h must be positive and finite")
        if self.scheme != "central":
            raise ValueError(f"unsupported scheme {self.scheme!r}")


def _point(graph: Graph, x) -> np.ndarray:
    x = as_vec(x)
    if x.shape != (graph.n_inputs,):
        raise ValueError(f"expected {graph.n_inputs} inputs, got {x.shape}")
    return x


def _grad_at(graph: Graph, x: np.ndarray, h: float) -> np.ndarray:
    e = h * np.eye(x.size)
    f = evaluate(graph, np.concatenate([x + e, x - e]))
    return (f[: x.size] - f[x.size:]) / (2 * h)


def _hess_at(graph: Graph, x: np.ndarray, h: float) -> np.ndarray:
    n = x.size
    e = h * np.eye(n)
    iu, ju = np.triu_indices(n)
    di, dj = e[iu], e[ju]
    pts = np.concatenate([x + di + dj, x + di - dj, x - di + dj, x - di - dj])
    f = evaluate(graph, pts).reshape(4, -1)
    vals = (f[0] - f[1] - f[2] + f[3]) / (4 * h * h)
    out = np.empty((n, n))
    out[iu, ju] = vals
    out[ju, iu] = vals
    return out


def _extrapolate(fn, graph, x, cfg: FdConfig):
    coarse = fn(graph, x, cfg.h)
    if not cfg.richardson:
        return coarse
    fine = fn(graph, x, cfg.h / 2)
    return (4 * fine - coarse) / 3


def fd_gradient(graph: Graph, x, cfg: FdConfig = FdConfig()) -> np.ndarray:
    return _extrapolate(_grad_at, graph, _point(graph, x), cfg)


def fd_hessian(graph: Graph, x, cfg: FdConfig = FdConfig()) -> SymMat:
    return SymMat(_extrapolate(_hess_at, graph, _point(graph, x), cfg))


def fd_operator(graph: Graph, spec: OperatorSpec, x, cfg: FdConfig = FdConfig()) -> float:
    x = _point(graph, x)
    grad = fd_gradient(graph, x, cfg) if spec.b is not None else None
    return float(apply_to_hessian(spec, fd_hessian(graph, x, cfg).data, grad, evaluate(graph, x)))


def rel_err(a, b) -> float:
    """``|a - b| / max(1, |b|)``, the scale used by all agreement checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


@dataclass
class ChainReport:
    fd: float
    hessian: float
    hvp: float
    dof: float
    exact_err: float
    fd_err: float
    ok: bool


def oracle_chain(graph: Graph, spec: OperatorSpec, x, cfg: FdConfig = FdConfig(),
                 fd_rtol: float = FD_RTOL, exact_rtol: float = EXACT_RTOL) -> ChainReport:
    """fd ~ full Hessian ~ Hessian-vector products ~ forward tuples at one point."""
    from .baseline import operator_via_hessian, operator_via_hvp
    from .dof import dof_evaluate

    x = _point(graph, x)
    dec = decompose(spec)
    fd = fd_operator(graph, spec, x, cfg)
    hs = operator_via_hessian(graph, spec, x).operator_value
    hv = operator_via_hvp(graph, dec, spec, x).operator_value
    dv = dof_evaluate(graph, dec, spec, x).operator_value
    exact = max(rel_err(dv, hs), rel_err(hv, hs))
    fde = max(rel_err(dv, fd), rel_err(hs, fd))
    return ChainReport(fd, hs, hv, dv, exact, fde, exact < exact_rtol and fde < fd_rtol)
