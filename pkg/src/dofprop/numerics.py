"""Small dense linear algebra layer.

Vectors are plain 1-D float64 numpy arrays (see :func:`as_vec`).  Symmetric
matrices are wrapped in :class:`SymMat`, which keeps only the upper triangle
so that symmetry holds exactly.  :func:`eigh` is a cyclic Jacobi solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    pass


class EigenConvergenceError(RuntimeError):
    """Raised when the Jacobi sweep budget runs out."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"Jacobi iteration did not converge after {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


def as_vec(x, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


class SymMat:
    """Immutable real symmetric matrix.

    Only the upper triangle of the input is kept; the full matrix is rebuilt
    from it, so ``m[i, j] == m[j, i]`` holds bit-for-bit.  Inputs whose lower
    triangle disagrees with the upper one by more than ``sym_tol`` (relative)
    are rejected.
    """

    __slots__ = ("_data",)

    def __init__(self, data, sym_tol: float = 1e-12):
        a = np.array(data, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise DimensionError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > sym_tol * scale:
            raise ValueError("matrix is not symmetric")
        upper = np.triu(a)
        full = upper + np.triu(a, 1).T
        full.setflags(write=False)
        self._data = full

    @classmethod
    def identity(cls, n: int) -> "SymMat":
        return cls(np.eye(n))

    @classmethod
    def diag(cls, entries) -> "SymMat":
        return cls(np.diag(np.asarray(entries, dtype=np.float64)))

    @property
    def dim(self) -> int:
        return self._data.shape[0]

    @property
    def data(self) -> np.ndarray:
        return self._data

    def __getitem__(self, idx):
        return self._data[idx]

    def __array__(self, dtype=None, copy=None):
        return self._data if dtype is None else self._data.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, SymMat) and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash(self._data.tobytes())

    def __repr__(self):
        return f"SymMat(dim={self.dim})"

    def norm_inf(self) -> float:
        return float(np.max(np.sum(np.abs(self._data), axis=1)))

    def tolist(self):
        return self._data.tolist()


def matvec(m: SymMat, x) -> np.ndarray:
    x = as_vec(x)
    if m.dim != x.size:
        raise DimensionError(f"matrix is {m.dim}x{m.dim} but vector has length {x.size}")
    return m.data @ x


@dataclass(frozen=True)
class EigenPair:
    """Eigen-decomposition ``A = vectors.T @ diag(values) @ vectors``.

    ``vectors[k]`` is the unit eigenvector for ``values[k]``; values are sorted
    by decreasing magnitude (ties: larger signed value first, then original
    position).
    """

    values: np.ndarray
    vectors: np.ndarray
    residual: float
    sweeps: int
    mults: int

    def reconstruct(self) -> np.ndarray:
        return (self.vectors.T * self.values) @ self.vectors


def _off_max(a: np.ndarray) -> float:
    n = a.shape[0]
    if n < 2:
        return 0.0
    return float(np.max(np.abs(a[~np.eye(n, dtype=bool)])))


def eigh(m: SymMat, tol: float | None = None, max_sweeps: int = 100) -> EigenPair:
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Converges when the largest off-diagonal magnitude drops below ``tol``
    (default ``1e-12 * ||A||_inf``).  Entries that are exactly zero are never
    rotated, so block-diagonal inputs give exactly block-supported vectors.
    """
    a = np.array(m.data, dtype=np.float64)
    n = a.shape[0]
    if tol is None:
        tol = 1e-12 * max(m.norm_inf(), np.finfo(float).tiny)
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.eye(n)
    mults = 0
    sweeps = 0
    residual = _off_max(a)
    skip = tol * 1e-3
    while residual >= tol:
        if sweeps >= max_sweeps:
            raise EigenConvergenceError(residual, sweeps)
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
                mults += 12 * n
        residual = _off_max(a)

    values = np.diag(a).copy()
    vectors = v.T.copy()
    order = sorted(range(n), key=lambda k: (-abs(values[k]), -values[k], k))
    values = values[order]
    vectors = vectors[order]
    for k in range(n):
        row = vectors[k]
        nz = np.flatnonzero(np.abs(row) > 1e-12 * np.max(np.abs(row)))
        if nz.size and row[nz[0]] < 0:
            vectors[k] = -row
    values.setflags(write=False)
    vectors.setflags(write=False)
    return EigenPair(values, vectors, residual, sweeps, mults)
