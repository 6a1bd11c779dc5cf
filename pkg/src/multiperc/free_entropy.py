"""Bayes-optimal free entropy and first-order transition detection.

For discrete teacher priors the perfect-recovery point q = Q* is always a
fixed point; its free entropy equals minus the prior entropy exactly (the
channel term vanishes with the conditional variance and the conjugate trace
cancels against the prior term).  The information-theoretic threshold is
where the uninformed branch's free entropy crosses that constant, and the
algorithmic threshold is where the uninformed branch itself runs away to
perfect recovery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .generalization import gen_error_bayes
from .prior import PriorSpec, bayes_prior_update
from .quadrature import gauss_hermite
from .state_evolution import (
    FixedPoint,
    OverlapState,
    SEConfig,
    StudentSpec,
    _channel_maps,
    _PR_TOL,
    bayes_channel_moment,
    run_fixed_point,
)

_NO_TRANSITION = float("nan")


def phi_bayes(q, qhat, alpha: float, teacher: PriorSpec, Qstar=None, gh_order: int = 80) -> float:
    """Free entropy density -Tr[q qhat]/2 + Psi_w(qhat) + alpha Psi_out(q).

    A detected perfect-recovery point of an atom teacher returns the exact
    limit -H(prior): evaluating the generic expression there would difference
    two terms of size ~ ||qhat||, which is pure cancellation noise once the
    conjugate overlap has diverged.
    """
    q = np.asarray(q, float)
    qhat = np.asarray(qhat, float)
    if Qstar is None:
        Qstar = teacher.qstar()
    if teacher.is_atomic and float(np.abs(Qstar - q).max()) < _PR_TOL:
        return -teacher.entropy()
    rule = gauss_hermite(gh_order)
    maps = _channel_maps(teacher, StudentSpec.bayes())
    _, psi_w = bayes_prior_update(qhat, teacher, rule)
    _, psi_out = bayes_channel_moment(q, Qstar - q, maps, rule)
    return float(-0.5 * np.trace(q @ qhat) + psi_w + alpha * psi_out)


def phi_of_fixed_point(fp: FixedPoint, teacher: PriorSpec, gh_order: int = 80) -> float:
    return phi_bayes(fp.state.q, fp.state.qhat, fp.alpha, teacher, gh_order=gh_order)


@dataclass
class BranchPoint:
    alpha: float
    phi_uninformed: float
    phi_informed: float
    eps_uninformed: float
    eps_informed: float
    pr_uninformed: bool
    pr_informed: bool


@dataclass
class TransitionReport:
    alpha_it: float
    alpha_algo: float
    it_bracket: tuple
    algo_bracket: tuple
    curve: List[BranchPoint]
    found: bool
    message: str = ""

    @property
    def has_transition(self) -> bool:
        return self.found


def _solve_branch(alpha: float, teacher: PriorSpec, init, gh_order: int,
                  warm: Optional[OverlapState], tol: float) -> FixedPoint:
    if warm is not None:
        cfg = SEConfig(alpha=alpha, teacher=teacher, student=StudentSpec.bayes(),
                       init="explicit", init_state=warm, gh_order=gh_order, tol=tol)
    else:
        cfg = SEConfig(alpha=alpha, teacher=teacher, student=StudentSpec.bayes(),
                       init=init, gh_order=gh_order, tol=tol)
    return run_fixed_point(cfg)


def scan_transitions(alpha_lo: float, alpha_hi: float, grid_step: float,
                     teacher: PriorSpec, gh_order: int = 80, tol: float = 1e-9,
                     bracket: float = 0.01, n_mc: int = 400_000, seed: int = 1234,
                     ) -> TransitionReport:
    """Locate the information-theoretic and algorithmic thresholds.

    Runs the Bayes fixed point from uninformed and informed initializations
    over an alpha grid, then bisects (to `bracket`) the free-entropy crossing
    and the boundary of the uninformed branch's run-away to perfect recovery.
    Gaussian (continuous) teachers have a single branch and no transition;
    the report then carries NaN thresholds and a diagnostic message.
    """
    if alpha_lo >= alpha_hi:
        raise ValueError("need alpha_lo < alpha_hi")
    teacher_entropy = teacher.entropy() if teacher.is_atomic else math.nan
    Qstar = teacher.qstar()

    alphas = np.arange(alpha_lo, alpha_hi + grid_step / 2, grid_step)
    curve: List[BranchPoint] = []
    warm_u: Optional[OverlapState] = None
    for a in alphas:
        fp_u = _solve_branch(float(a), teacher, "uninformed", gh_order, warm_u, tol)
        warm_u = fp_u.state if not fp_u.perfect_recovery else None
        fp_i = _solve_branch(float(a), teacher, "informed", gh_order, None, tol)
        phi_u = phi_of_fixed_point(fp_u, teacher, gh_order)
        phi_i = phi_of_fixed_point(fp_i, teacher, gh_order)
        eps_u, _ = gen_error_bayes(fp_u.state.q, Qstar, teacher.k, n_mc, seed)
        eps_i, _ = gen_error_bayes(fp_i.state.q, Qstar, teacher.k, n_mc, seed)
        curve.append(BranchPoint(float(a), phi_u, phi_i, eps_u, eps_i,
                                 fp_u.perfect_recovery, fp_i.perfect_recovery))

    coexist = [p for p in curve if p.pr_informed and not p.pr_uninformed]
    if not teacher.is_atomic or not coexist:
        return TransitionReport(
            _NO_TRANSITION, _NO_TRANSITION, (math.nan, math.nan), (math.nan, math.nan),
            curve, found=False,
            message="no coexistence region: branches agree on the whole grid",
        )

    # Algorithmic threshold: uninformed branch starts running to recovery.
    pr_flags = [p.pr_uninformed for p in curve]
    if all(pr_flags) or not any(pr_flags):
        return TransitionReport(
            _NO_TRANSITION, _NO_TRANSITION, (math.nan, math.nan), (math.nan, math.nan),
            curve, found=False,
            message="uninformed run-away boundary not bracketed by the grid",
        )
    idx = next(i for i, f in enumerate(pr_flags) if f)
    lo, hi = float(alphas[idx - 1]), float(alphas[idx])
    warm = None
    while hi - lo > bracket:
        mid = 0.5 * (lo + hi)
        fp = _solve_branch(mid, teacher, "uninformed", gh_order, warm, tol)
        if fp.perfect_recovery:
            hi = mid
        else:
            lo = mid
            warm = fp.state
    alpha_algo = 0.5 * (lo + hi)
    algo_bracket = (lo, hi)

    # Information-theoretic threshold: Phi_uninformed crosses -H(prior).
    # dPhi/dalpha = Psi_out <= 0 along the branch, so the crossing is unique.
    gaps = [(p.alpha, p.phi_informed - p.phi_uninformed) for p in curve if not p.pr_uninformed]
    sign_change = None
    for (a0, g0), (a1, g1) in zip(gaps, gaps[1:]):
        if g0 <= 0 <= g1 or g0 >= 0 >= g1:
            sign_change = (a0, g0, a1, g1)
            break
    if sign_change is None:
        return TransitionReport(
            _NO_TRANSITION, alpha_algo, (math.nan, math.nan), algo_bracket, curve,
            found=False, message="free-entropy crossing not bracketed by the grid",
        )
    lo, hi = sign_change[0], sign_change[2]
    warm = None
    while hi - lo > bracket:
        mid = 0.5 * (lo + hi)
        fp = _solve_branch(mid, teacher, "uninformed", gh_order, warm, tol)
        warm = fp.state
        gap_mid = -teacher_entropy - phi_of_fixed_point(fp, teacher, gh_order)
        if gap_mid > 0:
            hi = mid
        else:
            lo = mid
    alpha_it = 0.5 * (lo + hi)
    return TransitionReport(alpha_it, alpha_algo, (lo, hi), algo_bracket, curve,
                            found=True)
