"""Reduction of the k-class problem to k-1 effective dimensions.

Labels produced by an argmax over k teacher fields are unchanged if the k-th
field is subtracted from the others, so the weight columns can be replaced by
differences w_h - w_k.  This module implements that mapping, the covariance
and atom priors it induces, and the polyhedral class regions in the reduced
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .smallmat import inverse


def reduce_weights(W: np.ndarray) -> np.ndarray:
    """Map d x k weights to d x (k-1) differences against the last column."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] < 2:
        raise ValueError(f"need a d x k matrix with k >= 2, got shape {W.shape}")
    return W[:, :-1] - W[:, -1:]


def reduced_gaussian_covariance(k: int) -> np.ndarray:
    """Covariance I + 11^T of a reduced row for an i.i.d. standard prior."""
    if k < 2:
        raise ValueError("k must be >= 2")
    return np.eye(k - 1) + np.ones((k - 1, k - 1))


@dataclass(frozen=True)
class AtomPrior:
    """Finite weighted atom set in R^dim; weights sum to 1 exactly.

    Construction goes through `fractions.Fraction` so the weight sum is exact,
    not merely within float tolerance.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        wts = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        if pts.shape[0] != wts.shape[0]:
            raise ValueError("points/weights length mismatch")
        if np.any(wts <= 0):
            raise ValueError("weights must be positive")
        if len({tuple(p) for p in pts}) != pts.shape[0]:
            raise ValueError("atom points must be distinct")
        if abs(wts.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {wts.sum()!r}, not 1")

    @classmethod
    def from_fractions(cls, atoms) -> "AtomPrior":
        pts = [p for p, _ in atoms]
        wts = [Fraction(w) for _, w in atoms]
        if sum(wts) != 1:
            raise ValueError(f"exact weight sum is {sum(wts)}, not 1")
        return cls(np.asarray(pts, dtype=float), np.asarray([float(w) for w in wts]))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        centered = self.points - mu
        return (centered * self.weights[:, None]).T @ centered

    def entropy(self) -> float:
        return float(-np.sum(self.weights * np.log(self.weights)))


def reduced_rademacher_prior(k: int = 3) -> AtomPrior:
    """Atom prior obtained by reducing i.i.d. +-1 teacher columns.

    k=3 gives the 7-atom prior on {0, +-2}^2; k=2 gives {0: 1/2, +-2: 1/4}.
    """
    if k == 2:
        return AtomPrior.from_fractions(
            [([0.0], Fraction(1, 2)), ([2.0], Fraction(1, 4)), ([-2.0], Fraction(1, 4))]
        )
    if k == 3:
        return AtomPrior.from_fractions(
            [
                ([0.0, 0.0], Fraction(2, 8)),
                ([0.0, 2.0], Fraction(1, 8)),
                ([2.0, 0.0], Fraction(1, 8)),
                ([0.0, -2.0], Fraction(1, 8)),
                ([-2.0, 0.0], Fraction(1, 8)),
                ([2.0, 2.0], Fraction(1, 8)),
                ([-2.0, -2.0], Fraction(1, 8)),
            ]
        )
    raise ValueError(f"reduced Rademacher prior implemented for k in {{2, 3}}, got k={k}")


def binary_prior() -> AtomPrior:
    """Classical +-1 binary teacher in one effective dimension.

    This is the canonical two-class perceptron teacher used for threshold
    calibration; its recovery thresholds are the textbook 1.249 / 1.493.
    """
    return AtomPrior.from_fractions([([1.0], Fraction(1, 2)), ([-1.0], Fraction(1, 2))])


@dataclass(frozen=True)
class ClassRegionMap:
    """Per-class matrices A_y; class y is the cone {z : A_y z > 0}."""

    k: int
    maps: tuple

    def __post_init__(self):
        maps = tuple(np.asarray(m, dtype=float) for m in self.maps)
        object.__setattr__(self, "maps", maps)
        if len(maps) != self.k:
            raise ValueError("need one map per class")
        for m in maps:
            inverse(m)  # raises if not invertible

    @property
    def dim(self) -> int:
        return self.maps[0].shape[0]


def class_regions(k: int) -> ClassRegionMap:
    """Reduced-coordinate argmax regions for k in {2, 3}."""
    if k == 2:
        return ClassRegionMap(2, (np.array([[1.0]]), np.array([[-1.0]])))
    if k == 3:
        return ClassRegionMap(
            3,
            (
                np.array([[1.0, 0.0], [1.0, -1.0]]),
                np.array([[0.0, 1.0], [-1.0, 1.0]]),
                -np.eye(2),
            ),
        )
    raise ValueError(f"class regions implemented for k in {{2, 3}}, got k={k}")


def classify(z, regions: ClassRegionMap) -> int:
    """Class of a reduced field vector; boundary ties go to the lowest index.

    Equivalent to argmax over the lifted vector (z, 0) with first-index
    tie-breaking; kept in region form so it exercises the A_y maps directly.
    """
    z = np.asarray(z, dtype=float)
    for y, A in enumerate(regions.maps, start=1):
        if np.all(A @ z >= 0.0):
            return y
    # Unreachable for a genuine partition; guard against NaN input.
    raise ValueError(f"no region contains z={z}")


def argmax_labels(fields: np.ndarray, k: int) -> np.ndarray:
    """Vectorized class labels (1-based) from field vectors.

    `fields` has shape (n, k) for full coordinates or (n, k-1) for reduced
    ones; reduced vectors are lifted with a zero k-th component.  np.argmax
    picks the first maximizer, matching the lowest-index tie-break.
    """
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    if fields.shape[1] == k - 1:
        fields = np.hstack([fields, np.zeros((fields.shape[0], 1))])
    elif fields.shape[1] != k:
        raise ValueError(f"field dimension {fields.shape[1]} matches neither k nor k-1")
    return np.argmax(fields, axis=1) + 1
