"""Dense linear algebra kernel for tiny matrices (dimensions <= 4).

Everything downstream (overlaps, covariances, denoiser Jacobians) lives in
matrices of side at most 4, so this module trades generality for strict
validation: explicit SPD checks with a single regularization retry, closed
forms where they are exact (2x2 inverse, 2x2 symmetric square root), and
errors that carry a condition estimate.

The :class:`SmallMat` wrapper is the validated surface; the module-level
functions also accept plain ``numpy`` arrays so hot loops can stay unboxed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DIM = 4

# Smallest admissible Cholesky pivot, relative to max(diag).
_PIVOT_RTOL = 1e-14
# One-shot jitter applied before declaring a matrix non-SPD.
_SPD_JITTER = 1e-12


class SmallMatError(ValueError):
    """Base error for small-matrix kernel failures."""


class DimensionError(SmallMatError):
    pass


class SingularMatrixError(SmallMatError):
    def __init__(self, msg: str, cond: float = math.inf):
        super().__init__(f"{msg} (cond ~ {cond:.3e})")
        self.cond = cond


class NotSPDError(SmallMatError):
    pass


def _as_matrix(a) -> np.ndarray:
    m = np.asarray(a.array if isinstance(a, SmallMat) else a, dtype=float)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-d array, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class SmallMat:
    """Row-major dense matrix with both sides in [1, 4]."""

    rows: int
    cols: int
    data: tuple = field(repr=False)

    def __post_init__(self):
        if not (1 <= self.rows <= MAX_DIM and 1 <= self.cols <= MAX_DIM):
            raise DimensionError(f"sides must lie in [1, {MAX_DIM}], got {self.rows}x{self.cols}")
        if len(self.data) != self.rows * self.cols:
            raise DimensionError(
                f"data length {len(self.data)} != rows*cols = {self.rows * self.cols}"
            )
        if not all(math.isfinite(v) for v in self.data):
            raise SmallMatError("non-finite entry")

    @classmethod
    def from_array(cls, a) -> "SmallMat":
        m = _as_matrix(a)
        return cls(m.shape[0], m.shape[1], tuple(float(v) for v in m.ravel()))

    @classmethod
    def identity(cls, n: int) -> "SmallMat":
        return cls.from_array(np.eye(n))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=float).reshape(self.rows, self.cols)

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        m = self.array
        if self.rows != self.cols:
            return False
        scale = max(1.0, float(np.abs(m).max()))
        return bool(np.abs(m - m.T).max() <= rtol * scale)

    def is_spd(self) -> bool:
        if not self.is_symmetric():
            return False
        try:
            cholesky(self.array)
        except SmallMatError:
            return False
        return True

    def __matmul__(self, other: "SmallMat") -> "SmallMat":
        return SmallMat.from_array(matmul(self, other))


def matmul(a, b) -> np.ndarray:
    """Standard matrix product; raises on inner-dimension mismatch."""
    ma, mb = _as_matrix(a), _as_matrix(b)
    if ma.shape[1] != mb.shape[0]:
        raise DimensionError(f"inner dimensions differ: {ma.shape} @ {mb.shape}")
    return ma @ mb


def inverse(a) -> np.ndarray:
    """Inverse of a square matrix with |det| > 1e-14."""
    m = _as_matrix(a)
    n, nc = m.shape
    if n != nc:
        raise DimensionError(f"matrix not square: {m.shape}")
    det = float(np.linalg.det(m))
    if abs(det) <= 1e-14:
        cond = float(np.linalg.cond(m)) if np.abs(m).max() > 0 else math.inf
        raise SingularMatrixError(f"|det| = {abs(det):.3e} too small", cond)
    if n == 1:
        return np.array([[1.0 / m[0, 0]]])
    if n == 2:
        return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
    return np.linalg.inv(m)


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T = a for SPD input.

    The smallest admissible pivot is 1e-14 * max(diag); a single retry with
    +1e-12*I jitter is attempted before failing, since boundary fixed points
    (q -> Q*) legitimately produce nearly singular V = Q* - q.
    """
    m = _as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"matrix not square: {m.shape}")
    scale = max(1.0, float(np.abs(np.diag(m)).max()))
    if np.abs(m - m.T).max() > 1e-12 * max(1.0, float(np.abs(m).max())):
        raise NotSPDError("matrix not symmetric")
    for jitter in (0.0, _SPD_JITTER):
        L = _chol_attempt(m + jitter * np.eye(m.shape[0]), _PIVOT_RTOL * scale)
        if L is not None:
            return L
    raise NotSPDError(f"Cholesky pivot below {_PIVOT_RTOL * scale:.3e}")


def _chol_attempt(m: np.ndarray, pivot_floor: float):
    n = m.shape[0]
    L = np.zeros_like(m)
    for j in range(n):
        pivot = m[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= pivot_floor:
            return None
        L[j, j] = math.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (m[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def sqrt_spd(a) -> np.ndarray:
    """Symmetric square root S with S @ S = a.

    Eigenvalues may touch zero (boundary overlaps q -> Q*); anything below
    -1e-12 * scale is an error.  The 2x2 case uses the closed form
    S = (a + sqrt(det) I) / sqrt(tr + 2 sqrt(det)).
    """
    m = _as_matrix(a)
    n = m.shape[0]
    if n != m.shape[1]:
        raise DimensionError(f"matrix not square: {m.shape}")
    if np.abs(m - m.T).max() > 1e-12 * max(1.0, float(np.abs(m).max())):
        raise NotSPDError("matrix not symmetric")
    if n == 1:
        if m[0, 0] < -1e-12:
            raise NotSPDError(f"negative value {m[0, 0]:.3e}")
        return np.array([[math.sqrt(max(m[0, 0], 0.0))]])
    if n == 2:
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        tr = m[0, 0] + m[1, 1]
        scale = max(1.0, abs(tr))
        if det < -1e-12 * scale**2 or tr < -1e-12 * scale:
            raise NotSPDError("negative eigenvalue")
        s = math.sqrt(max(det, 0.0))
        denom = math.sqrt(max(tr + 2.0 * s, 0.0))
        if denom <= 0.0:
            return np.zeros((2, 2))
        return (m + s * np.eye(2)) / denom
    w, U = np.linalg.eigh(m)
    if w.min() < -1e-12 * max(1.0, abs(w.max())):
        raise NotSPDError(f"negative eigenvalue {w.min():.3e}")
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def logdet(a) -> float:
    """ln det(a) for SPD a, via the Cholesky factor."""
    L = cholesky(a)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def eigh_floor(a, floor: float = 0.0) -> np.ndarray:
    """Symmetrize and clip eigenvalues from below; used for PSD projections."""
    m = _as_matrix(a)
    m = 0.5 * (m + m.T)
    w, U = np.linalg.eigh(m)
    return (U * np.clip(w, floor, None)) @ U.T
