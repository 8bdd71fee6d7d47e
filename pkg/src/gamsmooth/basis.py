"""Cubic regression spline bases, wiggliness penalties and prior algebra.

The basis here is the cardinal natural cubic spline: coefficient ``j`` is the
value of the spline at knot ``j``, so each basis function is the natural cubic
interpolant of an indicator vector over the knots.  This parameterization
makes the integrated squared second derivative available in closed form.

Writing ``h_j`` for the knot gaps, the natural interpolating spline through
values ``beta`` has knot second derivatives ``delta = F beta`` where ``F``
solves the usual tridiagonal continuity system ``B delta_int = D beta`` with
zero end conditions.  The wiggliness penalty is then exactly

    integral s''(x)^2 dx = beta' D' B^{-1} D beta,

a rank ``k - 2`` quadratic form whose null space is spanned by constant and
linear functions of the knot positions.  Outside the knot range every basis
function continues linearly, matching value and slope at the boundary knot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCovariateError

# Relative threshold below which an eigenvalue is treated as zero.
EIG_TOL = 1e-10


@dataclass(frozen=True)
class KnotVector:
    """Strictly increasing sequence of at least three knot locations."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size < 3:
            raise ValueError(f"need at least 3 knots, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("knots must be finite")
        if not np.all(np.diff(values) > 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)


@dataclass(frozen=True)
class PenaltyBlock:
    """Symmetric PSD penalty matrix with its rank bookkeeping.

    ``rank + nullspace_dim`` always equals the block size; the null space is
    the set of coefficient vectors the penalty leaves unshrunk.
    """

    S: np.ndarray
    rank: int
    nullspace_dim: int

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError(f"penalty must be square, got shape {S.shape}")
        scale = np.abs(S).max() if S.size else 0.0
        if scale and np.abs(S - S.T).max() > 1e-8 * (1.0 + scale):
            raise ValueError("penalty matrix must be symmetric")
        if self.rank + self.nullspace_dim != S.shape[0]:
            raise ValueError(
                f"rank {self.rank} + nullspace_dim {self.nullspace_dim} "
                f"!= size {S.shape[0]}"
            )
        object.__setattr__(self, "S", 0.5 * (S + S.T))

    @property
    def size(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class ConstraintTransform:
    """Orthonormal column basis ``Z`` of the sum-to-zero constraint space.

    ``already_constrained`` flags the degenerate case where the design block
    had zero column sums to begin with; the transform is then the identity.
    """

    Z: np.ndarray
    already_constrained: bool = False

    @property
    def width(self) -> int:
        return self.Z.shape[1]


def place_knots(x, k: int) -> KnotVector:
    """Choose ``k`` knots at evenly spaced quantiles of the distinct values.

    Parameters
    ----------
    x : array_like
        Covariate sample. Non-finite entries are ignored for placement.
    k : int
        Number of knots, at least 3.

    Returns
    -------
    KnotVector
        Strictly increasing knots spanning ``[min(x), max(x)]``.

    Raises
    ------
    DegenerateCovariateError
        If ``x`` has fewer than ``k`` distinct finite values.
    """
    if k < 3:
        raise ValueError(f"k must be >= 3, got {k}")
    x = np.asarray(x, dtype=float).ravel()
    xu = np.unique(x[np.isfinite(x)])
    if xu.size < k:
        raise DegenerateCovariateError(
            f"covariate has {xu.size} distinct finite values, "
            f"need at least k={k}"
        )
    knots = np.quantile(xu, np.linspace(0.0, 1.0, k))
    return KnotVector(knots)


def _natural_system(knots: KnotVector):
    """Continuity system of the natural cubic interpolant over ``knots``.

    Returns ``(F, D, B)`` where ``delta = F beta`` gives the second
    derivatives at all knots (zero at both ends), and ``D``, ``B`` are the
    banded factors with ``F[1:-1] = B^{-1} D``.
    """
    xi = knots.values
    k = xi.size
    h = np.diff(xi)
    m = k - 2
    B = np.zeros((m, m))
    D = np.zeros((m, k))
    for i in range(m):
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < m:
            B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
    F = np.zeros((k, k))
    F[1:-1] = np.linalg.solve(B, D)
    return F, D, B


class BasisBlock:
    """Evaluator for the cardinal natural cubic spline basis.

    Row ``i`` of ``evaluate(x)`` contains the ``k`` basis functions at
    ``x[i]``; rows always sum to one, and evaluation at knot ``j`` returns
    the ``j``-th unit vector.
    """

    def __init__(self, knots: KnotVector):
        self.knots = knots
        self._xi = knots.values
        self._h = np.diff(self._xi)
        self._F, _, _ = _natural_system(knots)
        k = self._xi.size
        h0 = self._h[0]
        hl = self._h[-1]
        # Boundary slopes of the basis functions, for linear extrapolation.
        slope_left = np.zeros(k)
        slope_left[0] = -1.0 / h0
        slope_left[1] = 1.0 / h0
        slope_left -= (h0 / 3.0) * self._F[0] + (h0 / 6.0) * self._F[1]
        slope_right = np.zeros(k)
        slope_right[-2] = -1.0 / hl
        slope_right[-1] = 1.0 / hl
        slope_right += (hl / 6.0) * self._F[-2] + (hl / 3.0) * self._F[-1]
        self._slope_left = slope_left
        self._slope_right = slope_right

    @property
    def columns(self) -> int:
        return self._xi.size

    def evaluate(self, x) -> np.ndarray:
        """Evaluate all basis functions at ``x``, returning ``(len(x), k)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(x)):
            raise ValueError("evaluation points must be finite")
        xi, h, F = self._xi, self._h, self._F
        k = xi.size
        out = np.zeros((x.size, k))
        left = x < xi[0]
        right = x > xi[-1]
        mid = ~(left | right)
        if np.any(mid):
            xm = x[mid]
            j = np.clip(np.searchsorted(xi, xm, side="right") - 1, 0, k - 2)
            hj = h[j]
            dl = xm - xi[j]
            dr = xi[j + 1] - xm
            am = dr / hj
            ap = dl / hj
            cm = (dr**3 / hj - hj * dr) / 6.0
            cp = (dl**3 / hj - hj * dl) / 6.0
            rows = cm[:, None] * F[j, :] + cp[:, None] * F[j + 1, :]
            idx = np.arange(xm.size)
            rows[idx, j] += am
            rows[idx, j + 1] += ap
            out[mid] = rows
        if np.any(left):
            out[left] = np.outer(x[left] - xi[0], self._slope_left)
            out[left, 0] += 1.0
        if np.any(right):
            out[right] = np.outer(x[right] - xi[-1], self._slope_right)
            out[right, -1] += 1.0
        return out

    __call__ = evaluate


def cr_basis(knots: KnotVector) -> BasisBlock:
    """Cardinal cubic regression spline basis over ``knots``."""
    if not isinstance(knots, KnotVector):
        knots = KnotVector(np.asarray(knots, dtype=float))
    return BasisBlock(knots)


def cr_penalty(knots: KnotVector) -> PenaltyBlock:
    """Exact integrated-squared-second-derivative penalty for ``cr_basis``.

    The penalty is ``D' B^{-1} D``: rank ``k - 2`` with a two-dimensional
    null space (constant and linear functions of the knot positions).
    """
    if not isinstance(knots, KnotVector):
        knots = KnotVector(np.asarray(knots, dtype=float))
    _, D, B = _natural_system(knots)
    S = D.T @ np.linalg.solve(B, D)
    S = 0.5 * (S + S.T)
    return PenaltyBlock(S=S, rank=knots.k - 2, nullspace_dim=2)


def constraint(X_block: np.ndarray) -> ConstraintTransform:
    """Sum-to-zero constraint transform for one smooth's design block.

    Returns ``Z`` with orthonormal columns such that the columns of
    ``X_block @ Z`` sum to zero. One dimension is removed; if the block is
    already column-centered the identity is returned with a flag instead.
    """
    X_block = np.asarray(X_block, dtype=float)
    if X_block.ndim != 2:
        raise ValueError("X_block must be a 2-d array")
    c = X_block.sum(axis=0)
    scale = np.abs(X_block).sum(axis=0).max() if X_block.size else 0.0
    if np.linalg.norm(c) <= 1e-12 * (1.0 + scale):
        return ConstraintTransform(Z=np.eye(X_block.shape[1]),
                                   already_constrained=True)
    Q, _ = np.linalg.qr(c[:, None], mode="complete")
    return ConstraintTransform(Z=Q[:, 1:], already_constrained=False)


def pseudo_inverse(S: np.ndarray, tol: float = EIG_TOL) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below ``tol`` times the largest are treated as exactly zero.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"matrix must be square, got shape {S.shape}")
    scale = np.abs(S).max() if S.size else 0.0
    if scale and np.abs(S - S.T).max() > 1e-8 * (1.0 + scale):
        raise ValueError("matrix must be symmetric")
    if S.size == 0:
        return S.copy()
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    cutoff = tol * max(vals.max(), 0.0)
    inv = np.where(vals > cutoff, 1.0 / np.where(vals > cutoff, vals, 1.0), 0.0)
    P = (vecs * inv) @ vecs.T
    return 0.5 * (P + P.T)


def nullspace_penalty(S: PenaltyBlock, tol: float = EIG_TOL) -> np.ndarray:
    """Projection penalty onto the null space of ``S``.

    With eigendecomposition ``S = U diag(lam) U'``, the result is
    ``U0 U0'`` over the eigenvectors with zero eigenvalue: an idempotent PSD
    matrix that penalizes exactly the directions ``S`` leaves free.  Adding
    it alongside ``S`` gives every coefficient a proper shrinkage prior, so
    whole terms can be selected out of the model.
    """
    vals, vecs = np.linalg.eigh(S.S)
    cutoff = tol * max(vals.max(), 0.0)
    null_idx = np.flatnonzero(vals <= cutoff)
    if null_idx.size != S.nullspace_dim:
        raise ValueError(
            f"found {null_idx.size} zero eigenvalues, expected "
            f"nullspace_dim={S.nullspace_dim}"
        )
    U0 = vecs[:, null_idx]
    Sn = U0 @ U0.T
    return 0.5 * (Sn + Sn.T)


def shrinkage_penalty(S: PenaltyBlock, eps: float = 1e-3,
                      tol: float = EIG_TOL) -> PenaltyBlock:
    """Full-rank modification of ``S`` that shrinks its null space too.

    Zero eigenvalues are replaced by ``eps`` times the largest eigenvalue, so
    a single smoothing parameter can remove a term entirely. ``eps`` is
    relative; the default ``1e-3`` keeps null-space shrinkage three orders of
    magnitude gentler than the wiggliness penalty proper.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    vals, vecs = np.linalg.eigh(S.S)
    lam_max = max(vals.max(), 0.0)
    if lam_max == 0.0:
        raise ValueError("cannot build a shrinkage penalty from a zero matrix")
    cutoff = tol * lam_max
    new_vals = np.where(vals > cutoff, vals, eps * lam_max)
    St = (vecs * new_vals) @ vecs.T
    St = 0.5 * (St + St.T)
    return PenaltyBlock(S=St, rank=S.size, nullspace_dim=0)
