"""Tensor layout, vectorization, and design-span projection.

Entries of an array outcome are stacked column-major (first axis fastest):
a multi-index (i_1, ..., i_m) over extents (r_1, ..., r_m) maps to the
1-based linear position 1 + sum_k (i_k - 1) * prod_{k' < k} r_{k'}.
All public index arguments/returns use this 1-based convention; arrays and
graph node ids are 0-based internally and in file formats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TensorLayout:
    """Extents of an array outcome plus its linearization rule."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) == 0:
            raise ValueError("layout needs at least one dimension")
        if any(d < 1 for d in dims):
            raise ValueError(f"all extents must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def M(self) -> int:
        return math.prod(self.dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)


def vec_index(multi_index, layout: TensorLayout) -> int:
    """1-based linear position of a 1-based multi-index (first axis fastest)."""
    idx = tuple(int(i) for i in multi_index)
    if len(idx) != layout.ndim:
        raise ValueError(
            f"index has {len(idx)} axes, layout has {layout.ndim}"
        )
    j = 0
    stride = 1
    for axis, (i, r) in enumerate(zip(idx, layout.dims)):
        if not 1 <= i <= r:
            raise ValueError(
                f"index {i} out of range [1, {r}] on axis {axis}"
            )
        j += (i - 1) * stride
        stride *= r
    return j + 1


def mat_index(j: int, layout: TensorLayout) -> tuple[int, ...]:
    """Inverse of :func:`vec_index`: multi-index of 1-based position ``j``."""
    j = int(j)
    if not 1 <= j <= layout.M:
        raise ValueError(f"linear index {j} out of range [1, {layout.M}]")
    rem = j - 1
    idx = []
    for r in layout.dims:
        idx.append(rem % r + 1)
        rem //= r
    return tuple(idx)


def vectorize(tensor, layout: TensorLayout) -> np.ndarray:
    """Flatten an array of shape ``layout.dims`` into its length-M vector."""
    arr = np.asarray(tensor, dtype=float)
    if arr.shape != layout.dims:
        if arr.size != layout.M:
            raise ValueError(
                f"tensor has {arr.size} entries, layout expects {layout.M}"
            )
        arr = arr.reshape(layout.dims)
    return arr.ravel(order="F")


def matricize(values, layout: TensorLayout) -> np.ndarray:
    """Inverse of :func:`vectorize`: rebuild the ``layout.dims`` array."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size != layout.M:
        raise ValueError(f"got {v.size} values, layout expects {layout.M}")
    return v.reshape(layout.dims, order="F")


@dataclass(frozen=True)
class Dataset:
    """Design matrix paired with vectorized outcomes, one subject per row."""

    X: np.ndarray
    Y: np.ndarray
    layout: TensorLayout

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        Y = np.ascontiguousarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must be 2-d arrays")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]}"
            )
        if X.shape[0] < 1:
            raise ValueError("need at least one subject")
        if Y.shape[1] != self.layout.M:
            raise ValueError(
                f"Y has {Y.shape[1]} columns, layout expects {self.layout.M}"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        if not np.all(np.isfinite(Y)):
            raise ValueError("Y contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SpanProjector:
    """Orthogonal projection onto the column span of a design matrix.

    Applied row-block-wise: for an n-by-M matrix of per-subject values the
    projection acts on each column, which realizes the Kronecker-extended
    projector on the stacked vector without ever forming an n-by-n matrix.
    """

    basis: np.ndarray = field(repr=False)  # n x rank, orthonormal columns
    rank: int

    def apply(self, theta: np.ndarray) -> np.ndarray:
        """Project onto the span (the feasible set of fitted means)."""
        theta = np.asarray(theta, dtype=float)
        return self.basis @ (self.basis.T @ theta)

    def apply_complement(self, theta: np.ndarray) -> np.ndarray:
        """Project onto the orthogonal complement of the span."""
        theta = np.asarray(theta, dtype=float)
        return theta - self.apply(theta)


def make_projector(X: np.ndarray) -> SpanProjector:
    """Build a :class:`SpanProjector` from an SVD of the design matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite entries")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    tol = max(X.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return SpanProjector(basis=np.ascontiguousarray(U[:, :rank]), rank=rank)


class RankDeficientError(ValueError):
    """Design matrix does not have full column rank."""


def design_rank(X: np.ndarray) -> int:
    return make_projector(X).rank


def gamma_from_theta(X: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Back-substitute fitted means into coefficient maps.

    Solves the normal equations through a QR factorization; requires a
    full-column-rank design so the coefficient maps are identified. Whenever
    ``theta`` lies in the span of ``X`` the returned maps reproduce it
    exactly under ``X @ gamma``.
    """
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if X.shape[0] != theta.shape[0]:
        raise ValueError("X and theta row counts differ")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if np.any(diag <= tol):
        raise RankDeficientError(
            "design matrix is rank deficient; drop collinear columns "
            "before fitting (no pseudo-inverse is taken)"
        )
    from scipy.linalg import solve_triangular

    return solve_triangular(R, Q.T @ theta, lower=False)
