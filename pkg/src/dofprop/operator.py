"""Second-order operators ``sum a_ij d_ij phi + sum b_i d_i phi + c phi``.

Coefficients are constant per evaluation point.  The coefficient matrix is
factored as ``A = L.T @ diag(d) @ L`` with ``d`` in {-1, +1} after dropping
numerically zero eigenvalues, so ``L`` has one row per retained eigenvalue.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, SymMat, eigh

KINDS = ("elliptic", "low_rank", "general", "identity")
STRUCTURES = ("dense", "block")


@dataclass(frozen=True)
class OperatorSpec:
    a: SymMat
    b: np.ndarray | None = None
    c: float = 0.0
    kind: str | None = None

    def __post_init__(self):
        if not isinstance(self.a, SymMat):
            object.__setattr__(self, "a", SymMat(self.a))
        if self.b is not None:
            b = np.asarray(self.b, dtype=np.float64)
            if b.shape != (self.a.dim,):
                raise DimensionError(f"b must have length {self.a.dim}")
            if not np.all(np.isfinite(b)):
                raise ValueError("b has non-finite entries")
            if not np.any(b):
                b = None
            else:
                b.setflags(write=False)
            object.__setattr__(self, "b", b)
        if not np.isfinite(self.c):
            raise ValueError("c must be finite")
        object.__setattr__(self, "c", float(self.c))

    @property
    def n(self) -> int:
        return self.a.dim

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha1(self.a.data.tobytes())
        if self.b is not None:
            h.update(self.b.tobytes())
        h.update(np.float64(self.c).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        out = {"a": self.a.tolist(), "b": [] if self.b is None else self.b.tolist(), "c": self.c}
        if self.kind is not None:
            out = {"kind": self.kind, **out}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorSpec":
        if "generator" in d:
            g = d["generator"]
            spec = make_coefficients(g["kind"], g.get("structure", "dense"), int(g["n"]), int(g.get("seed", 0)),
                                     rank=g.get("rank"), block_size=int(g.get("block_size", 4)))
            if "b" in d or "c" in d:
                spec = OperatorSpec(spec.a, d.get("b") or None, float(d.get("c", 0.0)), spec.kind)
            return spec
        a = np.asarray(d["a"], dtype=np.float64)
        b = d.get("b") or None
        return cls(SymMat(a), b, float(d.get("c", 0.0)), d.get("kind"))


@dataclass(frozen=True)
class Decomposition:
    """Rank-truncated factor pair: ``A ~= l.T @ diag(d) @ l``."""

    l: np.ndarray
    d: np.ndarray
    fingerprint: str = ""
    mults: int = field(default=0, compare=False)

    @property
    def rank(self) -> int:
        return self.l.shape[0]

    @property
    def n(self) -> int:
        return self.l.shape[1]

    @property
    def elliptic(self) -> bool:
        return bool(np.all(self.d > 0))

    def reconstruct(self) -> np.ndarray:
        return (self.l.T * self.d) @ self.l


def identity_decomposition(n: int) -> Decomposition:
    spec = OperatorSpec(SymMat.identity(n))
    return Decomposition(np.eye(n), np.ones(n), spec.fingerprint)


def decompose(spec: OperatorSpec, rank_tol: float | None = None) -> Decomposition:
    """Factor ``spec.a`` via its eigen-decomposition.

    ``L = sqrt(|lambda|) * S`` row-wise and ``d = sign(lambda)``; eigenvalues
    with ``|lambda| <= rank_tol`` (default ``1e-10 * ||A||_inf``) are dropped.
    """
    if rank_tol is None:
        rank_tol = 1e-10 * spec.a.norm_inf()
    if rank_tol < 0:
        raise ValueError("rank_tol must be non-negative")
    eig = eigh(spec.a)
    keep = np.abs(eig.values) > rank_tol
    vals = eig.values[keep]
    l = np.sqrt(np.abs(vals))[:, None] * eig.vectors[keep]
    d = np.sign(vals)
    l.setflags(write=False)
    d.setflags(write=False)
    return Decomposition(l, d, spec.fingerprint, eig.mults + int(l.size))


def make_coefficients(kind: str, structure: str, n: int, seed: int, *, rank: int | None = None,
                      block_size: int = 4) -> OperatorSpec:
    """Benchmark coefficient matrices.

    dense: ``elliptic`` is ``alpha @ alpha.T`` with ``alpha`` n-by-n standard
    normal, ``low_rank`` keeps the first ``rank`` (default n/2) columns of
    ``alpha``, ``general`` is ``diag(-1, 1, ..., 1)``.  block: the same
    recipes applied to one ``block_size`` square factor, repeated along the
    diagonal.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if structure == "dense":
        a = _recipe(kind, n, rng, rank if rank is not None else max(n // 2, 1))
    else:
        if block_size < 1 or n % block_size:
            raise ValueError(f"n={n} is not a multiple of block_size={block_size}")
        block = _recipe(kind, block_size, rng, rank if rank is not None else max(block_size // 2, 1))
        a = np.kron(np.eye(n // block_size), block)
    return OperatorSpec(SymMat(a), kind=kind)


def _recipe(kind: str, n: int, rng: np.random.Generator, rank: int) -> np.ndarray:
    if kind == "identity":
        return np.eye(n)
    if kind == "general":
        s = np.ones(n)
        s[0] = -1.0
        return np.diag(s)
    alpha = rng.standard_normal((n, n))
    if kind == "low_rank":
        if not 1 <= rank <= n:
            raise ValueError(f"rank must be in [1, {n}]")
        alpha = alpha[:, :rank]
    a = alpha @ alpha.T
    return 0.5 * (a + a.T)


def apply_to_hessian(spec: OperatorSpec, h, grad=None, value=None):
    """Contract Hessian, gradient and value with the operator coefficients.

    Accepts single points (``h`` of shape (N, N)) or batches ((B, N, N)).
    """
    h = np.asarray(h, dtype=np.float64)
    n = spec.n
    if h.shape[-2:] != (n, n):
        raise DimensionError(f"hessian shape {h.shape} does not match operator dimension {n}")
    out = np.einsum("ij,...ij->...", spec.a.data, h)
    if spec.b is not None:
        if grad is None:
            raise ValueError("operator has a first-order term; grad is required")
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape[-1] != n:
            raise DimensionError("gradient length does not match operator dimension")
        out = out + grad @ spec.b
    if spec.c:
        if value is None:
            raise ValueError("operator has a zeroth-order term; value is required")
        out = out + spec.c * np.asarray(value, dtype=np.float64)
    return float(out) if np.ndim(out) == 0 else out
