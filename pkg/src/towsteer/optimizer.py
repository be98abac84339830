"""Constrained orientation optimization drivers.

Two routes fold the 4 n_e local curl/divergence constraints into a form a
box-constrained MMA step can digest:

* augmented Lagrangian (default): clamped multiplier estimates turn the
  inequality set into a smooth penalty added to the scaled compliance, with
  multiplier/penalty/weight schedules advanced every block of inner
  iterations;
* KS aggregation: a single log-sum-exp overestimate-free global constraint
  handled by the MMA dual with p-continuation.

Both share the same evaluation pipeline: filter + project the design pair,
solve the FEM problem, difference the physical field, and backpropagate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from . import orientation
from .fem import FemProblem, SingularSystemError
from .manufacturing import (Bounds, assemble_constraints, constraint_gradients,
                            curl_div_fd, diff_operators, representability_check)
from .material import OrthotropicLaw
from .mesh import LoadCase, StructuredGrid
from .orientation import DesignState

# MMA internals (textbook asymptote adaptation constants)
_ASY_INIT = 0.5
_ASY_INCR = 1.2
_ASY_DECR = 0.7
_ALBEFA = 0.1
_RAA0 = 1e-5
# Minimum asymptote distance, as a fraction of the variable range. Much
# smaller than the usual 0.01 on purpose: the quadratic penalty becomes very
# stiff at large mu, and the oscillation-triggered shrink must be allowed to
# damp steps well below the move limit or the iterates settle into a
# period-two limit cycle bouncing across the penalty valley.
_ASY_MIN_FACTOR = 1e-5
_ASY_MAX_FACTOR = 10.0
_ETA_CAP = 1e6          # dual variable ceiling (acts like a large slack penalty)
_DUAL_BISECTIONS = 80


class NonFiniteGradientError(RuntimeError):
    """Raised when an MMA step receives NaN or infinite sensitivities."""


@dataclass(frozen=True)
class Schedules:
    """Default schedule constants for the outer loops."""

    weight0: float = 1e-2          # initial constraint weight
    weight_max: float = 1.0
    weight_growth: float = 1.3
    mu0: float = 10.0              # initial penalty
    mu_max: float = 1e6
    mu_growth: float = 1.5
    inner_iters: int = 20          # MMA iterations per AL step / p update
    max_iters: int = 1000
    move_limit: float = 0.05
    ks_p0: float = 5.0
    ks_growth: float = 1.1
    ks_p_max: float = 50.0
    early_stop: bool = False
    early_tol: float = 1e-4


@dataclass(frozen=True)
class ALState:
    """Multipliers and penalty/weight levels of the augmented Lagrangian."""

    lam: np.ndarray
    mu: float
    weight: float
    k: int = 0


def al_init(n_constraints: int, sched: Schedules = Schedules()) -> ALState:
    return ALState(lam=np.zeros(n_constraints), mu=sched.mu0,
                   weight=sched.weight0, k=0)


def al_penalty(g: np.ndarray, state: ALState):
    """Penalty value and its weights w = dPenalty/dg (zero where clamped)."""
    n = g.size
    h = np.maximum(g, -state.lam / state.mu)
    value = (state.weight / n) * np.sum(state.lam * h + 0.5 * state.mu * h * h)
    w = np.where(g > -state.lam / state.mu,
                 (state.weight / n) * (state.lam + state.mu * g), 0.0)
    return float(value), w


def al_value_and_grad(c: float, dc: np.ndarray, g: np.ndarray, dg,
                      state: ALState):
    """Augmented Lagrangian value and design-space gradient.

    dc and the rows of dg must already be chained to the design variables.
    """
    value, w = al_penalty(g, state)
    return c + value, dc + dg.T @ w


def al_update(state: ALState, h: np.ndarray,
              sched: Schedules = Schedules()) -> ALState:
    """First-order multiplier update plus capped penalty/weight growth."""
    lam = np.maximum(state.lam + state.mu * h, 0.0)
    return ALState(lam=lam,
                   mu=min(sched.mu_growth * state.mu, sched.mu_max),
                   weight=min(sched.weight_growth * state.weight, sched.weight_max),
                   k=state.k + 1)


def ks_aggregate(g: np.ndarray, p: float):
    """Mean-normalized log-sum-exp of the constraint vector and its gradient.

    The 1/N normalizer makes the value a lower bound on max(g): a feasible
    aggregate can hide pointwise violations up to ln(N)/p.
    """
    gmax = float(g.max())
    z = np.exp(p * (g - gmax))
    sz = float(z.sum())
    value = gmax + np.log(sz / g.size) / p
    return float(value), z / sz


# ---------------------------------------------------------------------------
# MMA inner solver
# ---------------------------------------------------------------------------

@dataclass
class MMAState:
    """Asymptote memory for the method of moving asymptotes."""

    xmin: np.ndarray
    xmax: np.ndarray
    move: float = 0.05
    low: Optional[np.ndarray] = None
    upp: Optional[np.ndarray] = None
    xold1: Optional[np.ndarray] = None
    xold2: Optional[np.ndarray] = None
    it: int = 0


def _mma_prepare(state: MMAState, x: np.ndarray):
    """Advance asymptotes and return (low, upp, alfa, beta) for this step."""
    state.it += 1
    xrange = state.xmax - state.xmin
    if state.it <= 2 or state.xold1 is None or state.xold2 is None:
        low = x - _ASY_INIT * xrange
        upp = x + _ASY_INIT * xrange
    else:
        trend = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.ones_like(x)
        factor[trend > 0] = _ASY_INCR
        factor[trend < 0] = _ASY_DECR
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        low = np.clip(low, x - _ASY_MAX_FACTOR * xrange, x - _ASY_MIN_FACTOR * xrange)
        upp = np.clip(upp, x + _ASY_MIN_FACTOR * xrange, x + _ASY_MAX_FACTOR * xrange)
    state.low, state.upp = low, upp
    alfa = np.maximum.reduce([state.xmin, low + _ALBEFA * (x - low), x - state.move])
    beta = np.minimum.reduce([state.xmax, upp - _ALBEFA * (upp - x), x + state.move])
    return low, upp, alfa, beta


def _mma_coeffs(grad: np.ndarray, x, low, upp, xrange, curv=None):
    """Fractional-approximation coefficients (p, q) for one function.

    When a nonnegative diagonal curvature estimate is supplied, it is folded
    in symmetrically: the extra terms leave the model gradient at x unchanged
    while raising the model's second derivative there by exactly curv. This
    keeps steps short where the true function is known to be stiff, which the
    gradient-only asymptote heuristic cannot detect within a single step.
    """
    ux = upp - x
    xl = x - low
    ux2 = ux ** 2
    xl2 = xl ** 2
    p = np.maximum(grad, 0.0)
    q = np.maximum(-grad, 0.0)
    pq = 0.001 * (p + q) + _RAA0 / np.maximum(xrange, 1e-5)
    p = (p + pq) * ux2
    q = (q + pq) * xl2
    if curv is not None:
        gamma = np.maximum(curv, 0.0) / (2.0 * (1.0 / ux + 1.0 / xl))
        p = p + gamma * ux2
        q = q + gamma * xl2
    return p, q


def _mma_minimize_box(p, q, low, upp, alfa, beta):
    """Closed-form minimizer of sum(p/(upp-x) + q/(x-low)) over [alfa, beta]."""
    sp_ = np.sqrt(p)
    sq = np.sqrt(q)
    x = (low * sp_ + upp * sq) / (sp_ + sq)
    return np.clip(x, alfa, beta)


def mma_iterate(state: MMAState, x: np.ndarray, value: float,
                grad: np.ndarray, curv: Optional[np.ndarray] = None) -> np.ndarray:
    """One box-constrained MMA step (no general constraints)."""
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("objective gradient contains NaN or inf")
    low, upp, alfa, beta = _mma_prepare(state, x)
    p0, q0 = _mma_coeffs(grad, x, low, upp, state.xmax - state.xmin, curv)
    x_new = _mma_minimize_box(p0, q0, low, upp, alfa, beta)
    state.xold2, state.xold1 = state.xold1, x.copy()
    return x_new


def mma_iterate_constrained(state: MMAState, x: np.ndarray,
                            f0: float, df0: np.ndarray,
                            f1: float, df1: np.ndarray,
                            curv1: Optional[np.ndarray] = None) -> np.ndarray:
    """MMA step with a single general constraint f1 <= 0, solved in the dual.

    The dual variable is bracketed then bisected; it is capped, which mimics
    the usual elastic slack and keeps the step defined when the linearized
    constraint cannot be met inside the trust region. An optional diagonal
    curvature estimate stiffens the constraint model the same way it does in
    the box-only step.
    """
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(df1))):
        raise NonFiniteGradientError("gradient contains NaN or inf")
    low, upp, alfa, beta = _mma_prepare(state, x)
    xrange = state.xmax - state.xmin
    p0, q0 = _mma_coeffs(df0, x, low, upp, xrange)
    p1, q1 = _mma_coeffs(df1, x, low, upp, xrange, curv1)
    # budget so that the approximation equals f1 at the current point
    b = float(np.sum(p1 / (upp - x) + q1 / (x - low)) - f1)

    def x_of(eta):
        return _mma_minimize_box(p0 + eta * p1, q0 + eta * q1,
                                 low, upp, alfa, beta)

    def slack(eta):
        xx = x_of(eta)
        return float(np.sum(p1 / (upp - xx) + q1 / (xx - low))) - b

    if slack(0.0) <= 0.0:
        eta = 0.0
    else:
        hi = 1.0
        while slack(hi) > 0.0 and hi < _ETA_CAP:
            hi *= 10.0
        if slack(hi) > 0.0:
            eta = hi
        else:
            lo = 0.0
            for _ in range(_DUAL_BISECTIONS):
                mid = 0.5 * (lo + hi)
                if slack(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            eta = hi
    x_new = x_of(eta)
    state.xold2, state.xold1 = state.xold1, x.copy()
    return x_new


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

def _projection_matrix(st: DesignState) -> sp.csr_matrix:
    """Sparse d(m,n)/d(s̃,t̃) over the stacked [s-block, t-block] layout."""
    nd = st.s_f.size
    j = orientation.project_jacobian(st.s_f, st.t_f)
    idx = np.arange(nd)
    rows = np.concatenate([idx, idx, idx + nd, idx + nd])
    cols = np.concatenate([idx, idx + nd, idx, idx + nd])
    data = np.concatenate([j[:, 0, 0], j[:, 0, 1], j[:, 1, 0], j[:, 1, 1]])
    return sp.csr_matrix((data, (rows, cols)), shape=(2 * nd, 2 * nd))


def _penalty_curvature(jac, w2, st: DesignState, g: np.ndarray,
                       state: ALState) -> np.ndarray:
    """Diagonal Gauss-Newton curvature of the AL penalty in design space.

    The quadratic term contributes (Λ/N)·μ per active constraint along its
    linearized row; curvature of the constraints themselves is dropped. The
    result feeds the MMA step so its separable model is stiff exactly where
    the penalty is, which is what keeps large-μ iterations from overshooting.
    """
    chain = (jac @ _projection_matrix(st)) @ w2
    active = np.flatnonzero(g > -state.lam / state.mu)
    rows = chain[active]
    d = rows.power(2).sum(axis=0)
    return state.mu * (state.weight / g.size) * np.asarray(d).ravel()


def _ks_curvature(jac, w2, st: DesignState, weights: np.ndarray,
                  p: float) -> np.ndarray:
    """Diagonal Gauss-Newton curvature of the KS aggregate in design space.

    The log-sum-exp Hessian in constraint space is p times the softmax
    covariance; projecting onto the diagonal gives the per-variable softmax
    variance of the chained constraint sensitivities, which grows with p and
    is what keeps the sharp large-p aggregate from being overshot.
    """
    chain = (jac @ _projection_matrix(st)) @ w2
    mean = chain.T @ weights
    mean_sq = chain.power(2).T @ weights
    return p * np.maximum(np.asarray(mean_sq).ravel() - np.asarray(mean).ravel() ** 2, 0.0)


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    compliance: float
    max_kappa_ratio: float
    max_psi_ratio: float
    mu: float
    lambda_max: float
    weight: float
    p: float


@dataclass(frozen=True)
class Checkpoint:
    iteration: int
    state: DesignState
    kappa: np.ndarray
    psi: np.ndarray


@dataclass
class RunResult:
    mode: str
    design: DesignState
    compliance: float
    initial_compliance: float
    history: List[HistoryRow]
    checkpoints: List[Checkpoint]
    kappa: np.ndarray
    psi: np.ndarray
    solution_u: np.ndarray
    error: Optional[str] = None

    @property
    def iterations(self) -> int:
        return self.history[-1].iteration if self.history else 0


def run(grid: StructuredGrid, load: LoadCase, law: OrthotropicLaw, *,
        mode: str = "al", bounds: Optional[Bounds] = None, r_f: float = 0.0,
        theta0_deg: float = 0.0, sched: Schedules = Schedules(),
        perturb_seed: Optional[int] = None, perturb_scale: float = 0.0,
        progress: Optional[Callable[[HistoryRow], None]] = None) -> RunResult:
    """Drive one optimization run and collect its history.

    Every iteration is one FEM solve, one constraint-field evaluation and one
    MMA step; schedule updates land at the start of each block of
    ``sched.inner_iters`` iterations, evaluated at the design produced by the
    previous block.
    """
    if mode not in ("al", "ks", "unconstrained"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "unconstrained" and bounds is None:
        raise ValueError(f"mode {mode!r} requires bounds")

    problem = FemProblem(grid, load, law)
    w_filter = orientation.filter_matrix(grid, r_f)
    ops = diff_operators(grid)
    jac = None
    if bounds is not None:
        rep = representability_check(grid, bounds)
        if not rep.passed:
            warnings.warn(
                f"bounds exceed the mesh representability ceiling "
                f"{rep.mesh_bound:.4g} (kappa ratio {rep.kappa_ratio:.3g}, "
                f"psi ratio {rep.psi_ratio:.3g}); constraints cannot activate",
                stacklevel=2)
        jac = constraint_gradients(grid, bounds, ops)

    s, t = orientation.initial_design(grid, theta0_deg)
    if perturb_seed is not None and perturb_scale > 0.0:
        rng = np.random.default_rng(perturb_seed)
        s = np.clip(s + perturb_scale * rng.uniform(-1, 1, s.size), -1, 1)
        t = np.clip(t + perturb_scale * rng.uniform(-1, 1, t.size), -1, 1)
    x = np.concatenate([s, t])
    nd = grid.n_active

    mma = MMAState(xmin=-np.ones(x.size), xmax=np.ones(x.size),
                   move=sched.move_limit)
    al = al_init(4 * nd, sched) if mode == "al" else None
    ks_p = sched.ks_p0
    w2 = (sp.block_diag((w_filter, w_filter), format="csr")
          if bounds is not None else None)

    history: List[HistoryRow] = []
    checkpoints: List[Checkpoint] = []
    scale = 1.0
    c0 = 0.0
    st = sol = kappa = psi = None
    error = None
    prev_block_c = None

    def evaluate(xv):
        sv, tv = xv[:nd], xv[nd:]
        stv = orientation.evaluate(w_filter, sv, tv)
        solv = problem.solve(stv.m, stv.n)
        kv, pv = curl_div_fd(grid, stv.m, stv.n, ops)
        return stv, solv, kv, pv

    it = 0
    try:
        for it in range(sched.max_iters + 1):
            st, sol, kappa, psi = evaluate(x)
            if it == 0:
                c0 = sol.compliance
                scale = 10.0 / c0 if c0 > 0 else 1.0

            g = (assemble_constraints(kappa, psi, bounds)
                 if bounds is not None else None)
            boundary = it > 0 and it % sched.inner_iters == 0
            if boundary:
                if mode == "al":
                    h = np.maximum(g, -al.lam / al.mu)
                    al = al_update(al, h, sched)
                elif mode == "ks":
                    ks_p = min(sched.ks_growth * ks_p, sched.ks_p_max)

            row = HistoryRow(
                iteration=it, compliance=sol.compliance,
                max_kappa_ratio=(float(np.abs(kappa).max() / bounds.kappa_bar)
                                 if bounds is not None else 0.0),
                max_psi_ratio=(float(np.abs(psi).max() / bounds.psi_bar)
                               if bounds is not None else 0.0),
                mu=al.mu if al is not None else 0.0,
                lambda_max=float(al.lam.max()) if al is not None else 0.0,
                weight=al.weight if al is not None else 0.0,
                p=ks_p if mode == "ks" else 0.0)
            history.append(row)
            if progress is not None:
                progress(row)

            if boundary or it == 0:
                checkpoints.append(Checkpoint(it, st, kappa.copy(), psi.copy()))
                if sched.early_stop and prev_block_c is not None:
                    rel = abs(sol.compliance - prev_block_c) / max(abs(prev_block_c), 1e-30)
                    viol = max(row.max_kappa_ratio, row.max_psi_ratio)
                    if rel < sched.early_tol and viol <= 1.01:
                        break
                prev_block_c = sol.compliance

            if it == sched.max_iters:
                break

            dc_m, dc_n = problem.compliance_gradient(sol, st.m, st.n)
            grad_m = scale * dc_m
            grad_n = scale * dc_n
            if mode == "al":
                pen, wvec = al_penalty(g, al)
                gmn = jac.T @ wvec
                gs, gt = orientation.backpropagate(
                    w_filter, st, grad_m + gmn[:nd], grad_n + gmn[nd:])
                curv = _penalty_curvature(jac, w2, st, g, al)
                x = mma_iterate(mma, x, scale * sol.compliance + pen,
                                np.concatenate([gs, gt]), curv)
            elif mode == "ks":
                gks, dgks = ks_aggregate(g, ks_p)
                gmn = jac.T @ dgks
                gs0, gt0 = orientation.backpropagate(w_filter, st, grad_m, grad_n)
                gs1, gt1 = orientation.backpropagate(
                    w_filter, st, gmn[:nd], gmn[nd:])
                curv1 = _ks_curvature(jac, w2, st, dgks, ks_p)
                x = mma_iterate_constrained(
                    mma, x, scale * sol.compliance,
                    np.concatenate([gs0, gt0]), gks,
                    np.concatenate([gs1, gt1]), curv1)
            else:
                gs, gt = orientation.backpropagate(w_filter, st, grad_m, grad_n)
                x = mma_iterate(mma, x, scale * sol.compliance,
                                np.concatenate([gs, gt]))
    except (SingularSystemError, NonFiniteGradientError) as exc:
        error = str(exc)

    if checkpoints and checkpoints[-1].iteration != it and st is not None:
        checkpoints.append(Checkpoint(it, st, kappa.copy(), psi.copy()))
    return RunResult(mode=mode, design=st, compliance=sol.compliance if sol else np.nan,
                     initial_compliance=c0, history=history,
                     checkpoints=checkpoints,
                     kappa=kappa if kappa is not None else np.array([]),
                     psi=psi if psi is not None else np.array([]),
                     solution_u=sol.u if sol else np.array([]), error=error)
