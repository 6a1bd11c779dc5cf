"""Fixed-point iteration of the asymptotic self-consistent equations.

Bayes branch: two coupled matrix updates (q, qhat) in the reduced
coordinates.  ERM branch: six matrices (m, q, V, mhat, qhat, vhat), with the
channel side integrated over the Gaussian field and the prior side in closed
form (Gaussian teacher) or tilted-mixture form (atom teacher).

Channel expectations switch between two exact evaluators:

* a tensor Gauss-Hermite grid when the channel variance is on the same scale
  as the field covariance, and
* a boundary-layer patch quadrature when it is much smaller.  Near perfect
  recovery the integrands concentrate on O(sqrt(V)) neighborhoods of the
  class boundaries, which no fixed Hermite grid can resolve; the patch
  evaluator integrates those layers on their own scale.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import LossSpec, difference_maps, erm_channel_batch, orthant_score, region_channel_batch
from .prior import PriorSpec, bayes_prior_update, erm_prior_update, _invsqrt_psd, _sqrt_psd
from .quadrature import GaussHermiteRule, gauss_hermite, tensor_nodes
from .reduction import class_regions, reduced_gaussian_covariance
from .smallmat import eigh_floor, inverse

_LAYER_SWITCH = 0.2  # sigma / sqrt(q)-scale ratio below which patches take over
_LAYER_HALF_WIDTH = 8.5  # patch half-width in units of sigma
_BULK_CUTOFF = 9.0  # arm truncation in units of sqrt(diag q)
_PR_TOL = 1e-4  # ||Q* - q||_inf below this counts as perfect recovery


@dataclass(frozen=True)
class StudentSpec:
    kind: str  # "bayes" | "erm"
    loss: Optional[LossSpec] = None
    lam: float = 0.0

    @classmethod
    def bayes(cls) -> "StudentSpec":
        return cls("bayes")

    @classmethod
    def erm(cls, loss_kind: str, k: int, lam: float) -> "StudentSpec":
        if lam <= 0:
            raise ValueError("ERM needs lam > 0 (use e.g. 1e-6 for the lam -> 0+ curves)")
        return cls("erm", LossSpec(loss_kind, k), lam)


@dataclass
class OverlapState:
    m: np.ndarray
    q: np.ndarray
    V: np.ndarray
    mhat: np.ndarray
    qhat: np.ndarray
    vhat: np.ndarray

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def copy(self) -> "OverlapState":
        return OverlapState(*(x.copy() for x in (self.m, self.q, self.V, self.mhat, self.qhat, self.vhat)))

    @classmethod
    def bayes(cls, q: np.ndarray, qhat: np.ndarray, Qstar: np.ndarray) -> "OverlapState":
        """Bayes branch stores (q, qhat); m = q and V = Q* - q are implied."""
        return cls(m=q.copy(), q=q, V=Qstar - q, mhat=qhat.copy(), qhat=qhat, vhat=qhat.copy())


@dataclass(frozen=True)
class SEConfig:
    alpha: float
    teacher: PriorSpec
    student: StudentSpec
    damping: float = 0.5
    tol: Optional[float] = None
    max_iter: int = 3000
    init: str = "uninformed"  # "uninformed" | "informed" | "explicit"
    init_eps: float = 1e-3
    init_state: Optional[OverlapState] = None
    gh_order: int = 80
    gh_order_3d: int = 42

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if self.init not in ("uninformed", "informed", "explicit"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "explicit" and self.init_state is None:
            raise ValueError("explicit init needs init_state")

    @property
    def tolerance(self) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-9 if self.student.kind == "bayes" else 1e-8


@dataclass
class FixedPoint:
    state: OverlapState
    residual: float
    iterations: int
    converged: bool
    alpha: float
    perfect_recovery: bool = False
    free_entropy: Optional[float] = None


# ---------------------------------------------------------------------------
# Channel-side expectations


def _channel_maps(teacher: PriorSpec, student: StudentSpec):
    k = teacher.k
    if student.kind == "erm" and student.loss.kind == "square":
        return difference_maps(k)
    return class_regions(k).maps


def _layer_ratio(q: np.ndarray, V: np.ndarray, maps) -> float:
    scale = math.sqrt(max(np.diag(q).max(), 1e-30))
    smin = math.inf
    for A in maps:
        Sig = A @ V @ A.T
        smin = min(smin, math.sqrt(max(np.diag(Sig).min(), 0.0)))
    return smin / scale


def _gl_grid(a: float, b: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w


def _gauss_pdf_2d(mu: np.ndarray, cov: np.ndarray) -> np.ndarray:
    ic = inverse(cov)
    quad = np.einsum("ni,ij,nj->n", mu, ic, mu)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    return np.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det))


def _patch_moment_2d(A: np.ndarray, q: np.ndarray, V: np.ndarray):
    """Boundary-layer integral of N(mu; 0, A q A') * Z grad grad' for one label.

    Covers the orthant corner and the two boundary arms; everything outside
    them is exponentially negligible in the layer half-width.  Returns the
    label's contribution to (T, Psi_out) already mapped back through A.
    """
    qy = A @ q @ A.T
    Sig = A @ V @ A.T
    s1, s2 = math.sqrt(Sig[0, 0]), math.sqrt(Sig[1, 1])
    L = _LAYER_HALF_WIDTH
    R1 = _BULK_CUTOFF * math.sqrt(qy[0, 0])
    R2 = _BULK_CUTOFF * math.sqrt(qy[1, 1])

    panels = [
        (-L * s1, L * s1, 48, -L * s2, L * s2, 48),       # corner
        (-L * s1, L * s1, 48, L * s2, R2, 64),            # arm along mu2
        (L * s1, R1, 64, -L * s2, L * s2, 48),            # arm along mu1
    ]
    T = np.zeros((q.shape[0], q.shape[0]))
    psi = 0.0
    for a1, b1, n1, a2, b2, n2 in panels:
        if b1 <= a1 or b2 <= a2:
            continue
        x1, w1 = _gl_grid(a1, b1, n1)
        x2, w2 = _gl_grid(a2, b2, n2)
        mu = np.stack([np.repeat(x1, n2), np.tile(x2, n1)], axis=1)
        wgt = (np.repeat(w1, n2) * np.tile(w2, n1)) * _gauss_pdf_2d(mu, qy)
        ln_p, g, _ = orthant_score(mu, Sig, tail_skip=-120.0)
        mass = np.where(ln_p > -120.0, np.exp(ln_p), 0.0) * wgt
        gA = g @ A
        T += np.einsum("n,ni,nj->ij", mass, gA, gA)
        psi += float(np.sum(mass * ln_p))
    return T, psi


def _patch_moment_1d(A: np.ndarray, q: np.ndarray, V: np.ndarray):
    a = float(A[0, 0])
    qy = a * a * float(q[0, 0])
    s = abs(a) * math.sqrt(float(V[0, 0]))
    L, R = _LAYER_HALF_WIDTH, _BULK_CUTOFF * math.sqrt(qy)
    T = np.zeros((1, 1))
    psi = 0.0
    for lo, hi, n in ((-R, -L * s, 64), (-L * s, L * s, 64), (L * s, R, 64)):
        if hi <= lo:
            continue
        x, w = _gl_grid(lo, hi, n)
        wgt = w * np.exp(-0.5 * x * x / qy) / math.sqrt(2.0 * math.pi * qy)
        ln_p, g, _ = orthant_score(x[:, None], np.array([[s * s]]), tail_skip=-120.0)
        mass = np.where(ln_p > -120.0, np.exp(ln_p), 0.0) * wgt
        gA = g * a
        T += np.einsum("n,ni,nj->ij", mass, gA, gA)
        psi += float(np.sum(mass * ln_p))
    return T, psi


def bayes_channel_moment(q: np.ndarray, V: np.ndarray, maps, rule: GaussHermiteRule):
    """(T, Psi_out) with T = E_omega[sum_y Z_y grad grad'] for omega ~ N(0, q).

    T is the channel contribution qhat / alpha; Psi_out is the channel
    free-entropy term at the same (q, V).
    """
    dim = q.shape[0]
    V = eigh_floor(V, 0.0) + 1e-12 * np.eye(dim)
    if _layer_ratio(q, V, maps) < _LAYER_SWITCH:
        T = np.zeros((dim, dim))
        psi = 0.0
        for A in maps:
            patch = _patch_moment_2d if dim == 2 else _patch_moment_1d
            Ty, py = patch(A, q, V)
            T += Ty
            psi += py
        return 0.5 * (T + T.T), psi

    nodes, weights = tensor_nodes(rule, dim)
    omegas = nodes @ _sqrt_psd(q)
    T = np.zeros((dim, dim))
    psi = 0.0
    for A in maps:
        ln_z, g, _ = region_channel_batch(A, omegas, V, tail_skip=-35.0)
        mass = np.where(ln_z > -35.0, np.exp(ln_z), 0.0) * weights
        T += np.einsum("n,ni,nj->ij", mass, g, g)
        psi += float(np.sum(mass * ln_z))
    return 0.5 * (T + T.T), psi


def se_step_bayes(q: np.ndarray, Qstar: np.ndarray, alpha: float, teacher: PriorSpec,
                  rule: GaussHermiteRule, maps):
    """One sweep of the Bayes-optimal equations: q -> qhat -> q."""
    T, _ = bayes_channel_moment(q, Qstar - q, maps, rule)
    qhat = alpha * T
    q_new, _ = bayes_prior_update(qhat, teacher, rule)
    return qhat, q_new


def se_step_erm(state: OverlapState, alpha: float, student: StudentSpec,
                teacher: PriorSpec, rule: GaussHermiteRule, maps, C_student: np.ndarray):
    """One sweep of the ERM equations: (m,q,V) -> hats -> (m,q,V).

    The mhat update optionally routes through Gaussian integration by parts
    (Stein), which removes the teacher-score boundary layer once the teacher
    conditional variance is small; the plain and Stein forms agree in the
    smooth regime.
    """
    dim = state.dim
    Qstar = teacher.qstar()
    q = eigh_floor(state.q, 0.0)
    rt = _sqrt_psd(q)
    irt = _invsqrt_psd(q)
    W = state.m @ irt
    Vstar = Qstar - W @ W.T
    wmin = np.linalg.eigvalsh(0.5 * (Vstar + Vstar.T)).min()
    if wmin < -1e-8 * max(1.0, np.abs(Qstar).max()):
        raise ValueError(f"invalid state: teacher conditional covariance has eigenvalue {wmin:.3e}")
    Vstar = eigh_floor(Vstar, 0.0) + 1e-12 * np.eye(dim)
    V = eigh_floor(state.V, 0.0) + 1e-12 * np.eye(dim)

    nodes, weights = tensor_nodes(rule, dim)
    omegas = nodes @ rt
    omegas_star = nodes @ W.T

    use_stein = _layer_ratio(np.eye(dim), Vstar, maps) < _LAYER_SWITCH and abs(np.linalg.det(W)) > 1e-8

    mhat = np.zeros((dim, dim))
    qhat = np.zeros((dim, dim))
    vhat = np.zeros((dim, dim))
    for y, A in enumerate(maps, start=1):
        ln_zs, g_star, _ = region_channel_batch(A, omegas_star, Vstar, tail_skip=-35.0)
        zs = np.where(ln_zs > -35.0, np.exp(ln_zs), 0.0) * weights
        g, dg, _ = erm_channel_batch(y, omegas, V, student.loss)
        qhat += np.einsum("n,ni,nj->ij", zs, g, g)
        vhat -= np.einsum("n,nij->ij", zs, dg)
        if use_stein:
            t1 = np.einsum("n,ni,nj->ij", zs, nodes, g)
            t2 = np.einsum("n,li,njl->ij", zs, rt, dg)
            mhat += inverse(W).T @ (t1 - t2)
        else:
            mhat += np.einsum("n,ni,nj->ij", zs, g_star, g)
    mhat *= alpha
    qhat *= alpha
    vhat *= alpha

    m_new, q_new, V_new = erm_prior_update(
        mhat, eigh_floor(qhat, 0.0), vhat, teacher, student.lam, C_student, rule
    )
    return OverlapState(m=m_new, q=q_new, V=V_new, mhat=mhat, qhat=qhat, vhat=vhat)


# ---------------------------------------------------------------------------
# Damped fixed-point driver


def _student_cov(teacher: PriorSpec, student: StudentSpec) -> Optional[np.ndarray]:
    if student.kind != "erm":
        return None
    k = teacher.k
    if student.loss.kind == "square":
        return np.eye(k)
    return reduced_gaussian_covariance(k)


def _clip_psd_interval(q: np.ndarray, Qstar: np.ndarray, warn_ctx: list) -> np.ndarray:
    w = np.linalg.eigvalsh(0.5 * (Qstar - q + (Qstar - q).T))
    if w.min() < -1e-10:
        warn_ctx.append(w.min())
        q = Qstar - eigh_floor(Qstar - q, 0.0)
    return eigh_floor(q, 0.0)


def run_fixed_point(cfg: SEConfig) -> FixedPoint:
    """Damped iteration x <- (1-theta) step(x) + theta x to a fixed point.

    Residual is the undamped max-norm displacement; on oscillation the
    damping is raised to 0.85 (first-order transitions make the plain
    iteration ring).  Non-convergence is reported, not raised.
    """
    teacher, student = cfg.teacher, cfg.student
    dim = teacher.dim if student.kind == "bayes" or student.loss.kind != "square" else teacher.k
    rule = gauss_hermite(cfg.gh_order if dim <= 2 else cfg.gh_order_3d)
    maps = _channel_maps(teacher, student)
    Qstar = teacher.qstar()
    theta = cfg.damping
    tol = cfg.tolerance
    clip_events: list = []

    if student.kind == "bayes":
        if cfg.init == "explicit":
            q = cfg.init_state.q.copy()
        else:
            eps = cfg.init_eps if cfg.init == "uninformed" else 1.0 - cfg.init_eps
            q = eps * Qstar
        qhat = np.zeros_like(q)
        residual = math.inf
        prev_residual = math.inf
        bumps = 0
        for it in range(1, cfg.max_iter + 1):
            qhat_new, q_step = se_step_bayes(q, Qstar, cfg.alpha, teacher, rule, maps)
            q_step = _clip_psd_interval(q_step, Qstar, clip_events)
            residual = float(np.abs(q_step - q).max())
            q = (1.0 - theta) * q_step + theta * q
            q = _clip_psd_interval(q, Qstar, clip_events)
            qhat = qhat_new
            if residual > prev_residual * (1.0 + 1e-12):
                bumps += 1
                if bumps >= 3:
                    theta = max(theta, 0.85)
            prev_residual = residual
            if residual <= tol:
                break
        if clip_events:
            warnings.warn(f"q clipped into [0, Q*] {len(clip_events)} times (worst {min(clip_events):.2e})")
        state = OverlapState.bayes(q, qhat, Qstar)
        pr = float(np.abs(Qstar - q).max()) < _PR_TOL
        return FixedPoint(state, residual, it, residual <= tol, cfg.alpha, perfect_recovery=pr)

    # ERM branch
    C = _student_cov(teacher, student)
    if cfg.init == "explicit":
        state = cfg.init_state.copy()
    else:
        q0 = 1e-2 * np.eye(dim)
        state = OverlapState(
            m=np.zeros((dim, dim)), q=q0, V=C.copy(),
            mhat=np.zeros((dim, dim)), qhat=1e-2 * np.eye(dim), vhat=np.zeros((dim, dim)),
        )
    if cfg.alpha == 0.0:
        zero = np.zeros((dim, dim))
        state = OverlapState(m=zero.copy(), q=zero.copy(), V=C / student.lam,
                             mhat=zero.copy(), qhat=zero.copy(), vhat=zero.copy())
        return FixedPoint(state, 0.0, 0, True, 0.0)

    residual = math.inf
    prev_residual = math.inf
    bumps = 0
    for it in range(1, cfg.max_iter + 1):
        new = se_step_erm(state, cfg.alpha, student, teacher, rule, maps, C)
        residual = float(
            max(
                np.abs(new.m - state.m).max(),
                np.abs(new.q - state.q).max(),
                np.abs(new.V - state.V).max(),
            )
        )
        state = OverlapState(
            m=(1.0 - theta) * new.m + theta * state.m,
            q=(1.0 - theta) * new.q + theta * state.q,
            V=(1.0 - theta) * new.V + theta * state.V,
            mhat=new.mhat, qhat=new.qhat, vhat=new.vhat,
        )
        if residual > prev_residual * (1.0 + 1e-12):
            bumps += 1
            if bumps >= 3:
                theta = max(theta, 0.85)
        prev_residual = residual
        if residual <= tol:
            break
    return FixedPoint(state, residual, it, residual <= tol, cfg.alpha)


def nishimori_residual(fp: FixedPoint, Qstar: np.ndarray) -> float:
    """max(||m - q||_inf, ||V - (Q* - q)||_inf) on the un-collapsed state."""
    st = fp.state
    return float(
        max(np.abs(st.m - st.q).max(), np.abs(st.V - (Qstar - st.q)).max())
    )
