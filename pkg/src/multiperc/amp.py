"""Matrix-valued approximate message passing on finite instances.

Works in the reduced (k-1)-dimensional representation: per-coordinate
posterior means/covariances on the weight side, per-sample means/variances
and channel scores on the output side, with the Onsager correction in the
mean update.  Fully vectorized over samples and coordinates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .channel import ChannelTailError, orthant_score_batched_cov, _orthant_stats_1d
from .prior import PriorSpec, atom_denoiser_batch
from .reduction import class_regions
from .smallmat import inverse


@dataclass(frozen=True)
class AmpConfig:
    teacher: PriorSpec
    max_iter: int = 250
    tol: float = 1e-7
    damping: float = 0.3
    exact_x2: bool = True  # per-sample x^2 weights; False uses the mean-field shortcut
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class AmpState:
    what: np.ndarray      # d x (k-1) posterior means
    chat: np.ndarray      # d x (k-1) x (k-1) posterior covariances
    g: np.ndarray         # n x (k-1) channel scores
    omega: np.ndarray     # n x (k-1) cavity means
    V: np.ndarray         # n x (k-1) x (k-1) cavity covariances
    iteration: int


@dataclass
class AmpTrace:
    m: List[np.ndarray] = field(default_factory=list)
    q: List[np.ndarray] = field(default_factory=list)
    delta: List[float] = field(default_factory=list)


def amp_overlaps(state_or_what, teacher_w: np.ndarray):
    """Empirical (m, q): teacher-student and student-student overlaps / d."""
    what = state_or_what.what if isinstance(state_or_what, AmpState) else np.asarray(state_or_what)
    d = what.shape[0]
    return teacher_w.T @ what / d, what.T @ what / d


def _bayes_scores(y: np.ndarray, omega: np.ndarray, V: np.ndarray, maps):
    """Per-sample channel score/Jacobian at each sample's own label."""
    n, dim = omega.shape
    g = np.empty((n, dim))
    dg = np.empty((n, dim, dim))
    ln_z = np.empty(n)
    for label in range(1, len(maps) + 1):
        sel = y == label
        if not np.any(sel):
            continue
        A = maps[label - 1]
        mu = omega[sel] @ A.T
        Sig = np.einsum("ri,nij,sj->nrs", A, V[sel], A)
        if dim == 1:
            lp, gr, he = _orthant_stats_1d(mu[:, 0], np.sqrt(Sig[:, 0, 0]))
        else:
            lp, gr, he = orthant_score_batched_cov(mu, Sig)
        ln_z[sel] = lp
        g[sel] = gr @ A
        dg[sel] = np.einsum("ri,nrs,sj->nij", A, he, A)
    return ln_z, g, dg


def amp_run(X: np.ndarray, y: np.ndarray, cfg: AmpConfig,
            teacher_w: Optional[np.ndarray] = None):
    """Run message passing on one instance; returns (AmpState, AmpTrace).

    X is n x d with O(1) entries, y holds labels in 1..k.  When the reduced
    teacher matrix is supplied the trace records the overlap matrices at
    every iteration.  Stops when ||what_t - what_{t-1}|| / sqrt(d) <= tol.
    """
    X = np.asarray(X, float)
    y = np.asarray(y)
    n, d = X.shape
    teacher = cfg.teacher
    dim = teacher.dim
    k = teacher.k
    maps = class_regions(k).maps
    if n > 0 and (y.min() < 1 or y.max() > k):
        raise ValueError("labels must lie in 1..k")

    X2 = X * X
    sqd = math.sqrt(d)

    prior_cov = teacher.qstar() if teacher.is_atomic else teacher.covariance
    what = np.zeros((d, dim))
    chat = np.broadcast_to(prior_cov, (d, dim, dim)).copy()
    g = np.zeros((n, dim))
    theta = cfg.damping
    trace = AmpTrace()

    if n == 0:  # no data: the prior mean is the answer
        state = AmpState(what=what, chat=chat, g=g, omega=np.zeros((0, dim)),
                         V=np.zeros((0, dim, dim)), iteration=0)
        return state, trace

    omega = np.zeros((n, dim))
    V = np.zeros((n, dim, dim))
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if cfg.exact_x2:
            V = (X2 @ chat.reshape(d, dim * dim)).reshape(n, dim, dim) / d
        else:
            V = np.broadcast_to(chat.mean(axis=0), (n, dim, dim)).copy()
        # SPD guard: quadrature noise can push tiny covariances slightly negative.
        wmin = np.linalg.eigvalsh(V).min()
        if wmin < 1e-10:
            if wmin < -1e-8:
                warnings.warn(f"cavity covariance regularized (min eigenvalue {wmin:.2e})")
            V = V + (1e-10 - min(wmin, 0.0)) * np.eye(dim)
        omega = X @ what / sqd - np.einsum("nij,nj->ni", V, g)

        ln_z, g_new, dg = _bayes_scores(y, omega, V, maps)
        if ln_z.min() < math.log(1e-300):
            bad = int(np.argmin(ln_z))
            raise ChannelTailError(float(ln_z[bad]))
        g = (1.0 - theta) * g_new + theta * g

        Lam = -(X2.T @ dg.reshape(n, dim * dim)).reshape(d, dim, dim) / d
        gamma = X.T @ g / sqd + np.einsum("dij,dj->di", Lam, what)

        if teacher.is_atomic:
            _, f, df = atom_denoiser_batch(gamma, None, teacher.atoms, per_row_lam=Lam)
            what_new, chat = f, df
        else:
            Sinv = inverse(prior_cov)
            prec = Sinv[None, :, :] + Lam
            chat = np.linalg.inv(prec)
            what_new = np.einsum("dij,dj->di", chat, gamma)

        delta = float(np.linalg.norm(what_new - what) / sqd)
        what = (1.0 - theta) * what_new + theta * what

        if teacher_w is not None:
            m_t, q_t = amp_overlaps(what, teacher_w)
            trace.m.append(m_t)
            trace.q.append(q_t)
        trace.delta.append(delta)
        if delta <= cfg.tol:
            break

    state = AmpState(what=what, chat=chat, g=g, omega=omega, V=V, iteration=it)
    return state, trace
