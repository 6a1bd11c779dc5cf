"""Numerical integration used by the asymptotic formulas.

Three tools: probabilists' Gauss-Hermite rules (with tensor products for
expectations over standard Gaussian vectors), adaptive 1-d quadrature on
possibly infinite intervals, and a reproducible counter-based Monte Carlo
fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate

MAX_ORDER = 200


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussHermiteRule:
    """Nodes/weights in probabilists' normalization: sum w_i f(x_i) ~ E f(Z)."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray


def gauss_hermite(order: int) -> GaussHermiteRule:
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must lie in [1, {MAX_ORDER}], got {order}")
    x, w = hermegauss(order)
    return GaussHermiteRule(order, x, w / np.sqrt(2.0 * np.pi))


def tensor_nodes(rule: GaussHermiteRule, dim: int):
    """Tensor-product nodes (order^dim, dim) and weights for N(0, I_dim)."""
    if dim == 1:
        return rule.nodes[:, None], rule.weights
    grids = np.meshgrid(*([rule.nodes] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([rule.weights] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def expect_gaussian_2d(f, rule: GaussHermiteRule) -> np.ndarray:
    """E[f(xi)] for xi ~ N(0, I_2) with a per-node (matrix-valued) callable."""
    nodes, weights = tensor_nodes(rule, 2)
    total = None
    for x, w in zip(nodes, weights):
        val = np.asarray(f(x), dtype=float)
        if not np.all(np.isfinite(val)):
            raise IntegrationError(f"non-finite integrand at node {x}")
        total = w * val if total is None else total + w * val
    return total


def expect_gaussian_nd(fvec, rule: GaussHermiteRule, dim: int) -> np.ndarray:
    """Vectorized tensor-product expectation.

    `fvec` maps nodes of shape (N, dim) to values of shape (N, ...); returns
    the weighted sum over the leading axis.
    """
    nodes, weights = tensor_nodes(rule, dim)
    vals = np.asarray(fvec(nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals.reshape(vals.shape[0], -1)).all(axis=1))
        raise IntegrationError(f"non-finite integrand at node {nodes[bad[0, 0]]}")
    return np.tensordot(weights, vals, axes=(0, 0))


def integrate_1d(f, lo: float, hi: float, tol: float = 1e-10):
    """Adaptive quadrature of f on [lo, hi]; infinite endpoints allowed.

    Returns (value, err_estimate).  Raises IntegrationError when the
    adaptive scheme reports non-convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    value, err, info, *rest = integrate.quad(
        f, lo, hi, epsabs=tol, epsrel=tol, limit=200, full_output=True
    )
    if rest:  # quad appends a message (and possibly more) on trouble
        raise IntegrationError(f"quadrature did not converge: {rest[0]}")
    return value, err


@dataclass(frozen=True)
class McConfig:
    n_samples: int
    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) fully determines the output."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) + (np.uint64(stream) << np.uint64(32))))


def mc_gaussian(dim: int, f, cfg: McConfig):
    """Monte Carlo mean/stderr of f(xi), xi ~ N(0, I_dim).

    `f` receives all samples at once with shape (n, dim) and must return an
    array with leading axis n.  Identical (seed, stream, n_samples) gives
    bit-identical results.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be in {{1, 2, 3}}, got {dim}")
    rng = philox(cfg.seed, cfg.stream)
    xi = rng.standard_normal((cfg.n_samples, dim))
    vals = np.asarray(f(xi), dtype=float)
    mean = vals.mean(axis=0)
    if cfg.n_samples == 1:
        return mean, np.zeros_like(mean)
    stderr = vals.std(axis=0, ddof=1) / np.sqrt(cfg.n_samples)
    return mean, stderr
