"""Exact second-order differential operators by forward propagation of
``(value, L grad, operator)`` tuples, with a Hessian-based comparator,
operation counters and a desk-scale benchmark harness."""

from .baseline import build_adjoint, hessian_full, operator_via_hessian, operator_via_hvp
from .costmodel import CostReport, RatioSummary, predict_flops, predict_memory_profile, summarize
from .dof import dof_evaluate, dof_evaluate_mlp_fused, dof_evaluate_varying, forward_laplacian
from .graph import Graph, GraphBuilder, edge_stats, evaluate
from .networks import BlockMlpSpec, MlpSpec, build_architecture, build_block_mlp, build_mlp, random_graph
from .numerics import SymMat, eigh
from .operator import Decomposition, OperatorSpec, decompose, make_coefficients
from .verify import FdConfig, fd_gradient, fd_hessian, fd_operator

__all__ = [
    "BlockMlpSpec", "CostReport", "Decomposition", "FdConfig", "Graph", "GraphBuilder", "MlpSpec",
    "OperatorSpec", "RatioSummary", "SymMat", "build_adjoint", "build_architecture", "build_block_mlp",
    "build_mlp", "decompose", "dof_evaluate", "dof_evaluate_mlp_fused", "dof_evaluate_varying", "edge_stats",
    "eigh", "evaluate", "fd_gradient", "fd_hessian", "fd_operator", "forward_laplacian", "hessian_full",
    "make_coefficients", "operator_via_hessian", "operator_via_hvp", "predict_flops",
    "predict_memory_profile", "random_graph", "summarize",
]
