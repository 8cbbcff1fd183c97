"""Incentive synthesis by constrained least squares.

Equilibrium play: pick alpha_i so the desired point satisfies the first-order
condition of the estimated incentivized game and the incentive evaluates to
the desired value there, subject to a second-order margin (per player) or a
joint stability margin on the symmetric part of the game Jacobian.  Myopic
play: pick alpha_i so the estimated update lands on the desired point, with
the incentive value pinned at the desired point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import (DimensionMismatch, InfeasibleMargin, InfeasibleStability,
                     RankDeficient)
from .game import GameSpec, min_eig_symmetric_part

RANK_RCOND = 1e-10
EXACT_TOL = 1e-8
DEFAULT_EPS_MARGIN = 1e-3
P2_STATIONARITY_TOL = 1e-7


@dataclass
class DesignProblem:
    """Inputs of one incentive-design step."""

    mode: str  # nash-p1 | nash-p2 | myopic
    x_d: np.ndarray
    v_d: np.ndarray
    theta_hat: Tuple[np.ndarray, ...]
    eps_margin: float = DEFAULT_EPS_MARGIN
    lam_reg: float = 0.0
    x_curr: Optional[np.ndarray] = None
    offsets: Optional[np.ndarray] = None
    gains: Optional[np.ndarray] = None
    # Myopic only: drop the incentive-value row.  Needed when no consistent
    # desired value exists (holding the desired point pins the value the
    # incentive must take there, so an arbitrary target turns the system
    # inconsistent exactly when tracking succeeds).
    pin_value: bool = True

    def __post_init__(self):
        if self.mode not in ("nash-p1", "nash-p2", "myopic"):
            raise DimensionMismatch(f"unknown design mode {self.mode!r}")
        if self.eps_margin <= 0 and self.mode != "myopic":
            raise DimensionMismatch("eps_margin must be positive")
        if self.lam_reg < 0:
            raise DimensionMismatch("lam_reg must be nonnegative")
        self.x_d = np.asarray(self.x_d, dtype=float)
        self.v_d = np.asarray(self.v_d, dtype=float)


@dataclass
class DesignResult:
    """Synthesized incentive parameters with feasibility certificates."""

    alpha: Tuple[np.ndarray, ...]
    residuals: np.ndarray
    slacks: np.ndarray
    rank_certificates: np.ndarray
    feasible: bool
    regularized: bool
    mode: str
    objective: float = 0.0

    @property
    def residual(self) -> float:
        return float(np.max(self.residuals))

    @property
    def slack(self) -> float:
        return float(np.min(self.slacks))


def assemble_nash_system(spec: GameSpec, theta_hat_i, x_d, v_d_i: float, i: int):
    """First-order/value rows plus the second-order margin row for player i.

    Returns (zeta, Lambda, c0, c) with zeta = [<D_i Phi_i(x_d), theta_i>, -v_d_i],
    Lambda rows D_i Psi_i(x_d) and Psi_i(x_d), and the margin row encoding
    c0 + <c, alpha_i> >= eps.
    """
    spec.check_player(i)
    theta_hat_i = np.asarray(theta_hat_i, dtype=float)
    if theta_hat_i.shape != (spec.nominal[i].dimension,):
        raise DimensionMismatch(f"theta_hat[{i}] length mismatch")
    zeta = np.array([spec.nominal[i].grad(x_d, i) @ theta_hat_i, -float(v_d_i)])
    lam = np.vstack([spec.incentive[i].grad(x_d, i),
                     spec.incentive[i].eval(x_d)])
    c0 = float(spec.nominal[i].second_own(x_d, i) @ theta_hat_i)
    c = spec.incentive[i].second_own(x_d, i)
    return zeta, lam, c0, c


def _rank_certificate(lam_mat) -> Tuple[float, float]:
    """(smallest, largest) singular value toward full row rank; a matrix with
    fewer columns than rows gets an implicit zero."""
    svals = np.linalg.svd(lam_mat, compute_uv=False)
    rows = lam_mat.shape[0]
    smallest = float(svals[rows - 1]) if len(svals) >= rows else 0.0
    return smallest, float(svals[0])


def _ridge_solution(zeta, lam_mat, lam_reg):
    if lam_reg > 0:
        s = lam_mat.shape[1]
        return np.linalg.solve(lam_mat.T @ lam_mat + lam_reg * np.eye(s),
                               -lam_mat.T @ zeta)
    return -np.linalg.pinv(lam_mat, rcond=RANK_RCOND) @ zeta


def _active_margin_solution(zeta, lam_mat, lam_reg, c, rhs):
    """Equality-constrained least squares: margin row active at rhs."""
    s = lam_mat.shape[1]
    quad = 2.0 * (lam_mat.T @ lam_mat + lam_reg * np.eye(s))
    kkt = np.zeros((s + 1, s + 1))
    kkt[:s, :s] = quad
    kkt[:s, s] = -c
    kkt[s, :s] = c
    rhs_vec = np.concatenate([-2.0 * lam_mat.T @ zeta, [rhs]])
    sol, *_ = np.linalg.lstsq(kkt, rhs_vec, rcond=None)
    return sol[:s], float(sol[s])


def solve_p1_player(spec: GameSpec, theta_hat_i, x_d, v_d_i: float, i: int,
                    eps_margin: float = DEFAULT_EPS_MARGIN,
                    lam_reg: float = 0.0):
    """Per-player constrained least squares with the second-order margin.

    Returns (alpha_i, residual, slack, sigma_min).
    """
    zeta, lam_mat, c0, c = assemble_nash_system(spec, theta_hat_i, x_d, v_d_i, i)
    sigma_min, sigma_max = _rank_certificate(lam_mat)
    alpha = _ridge_solution(zeta, lam_mat, lam_reg)
    slack = c0 + c @ alpha - eps_margin
    if slack < 0.0:
        if np.linalg.norm(c) <= RANK_RCOND:
            raise InfeasibleMargin(
                f"player {i}: incentive basis has no own-curvature at x_d")
        alpha, mult = _active_margin_solution(zeta, lam_mat, lam_reg, c,
                                              eps_margin - c0)
        if mult < -1e-9:
            raise InfeasibleMargin(
                f"player {i}: active-set multiplier negative ({mult:.3e})")
        slack = c0 + c @ alpha - eps_margin
        if slack < -1e-9:
            raise InfeasibleMargin(
                f"player {i}: margin violated after active-set solve")
    residual = float(np.linalg.norm(zeta + lam_mat @ alpha))
    if lam_reg == 0.0 and sigma_min < RANK_RCOND * max(sigma_max, 1.0) \
            and residual > EXACT_TOL:
        raise RankDeficient(
            f"player {i}: design rows are rank deficient and inconsistent "
            f"(sigma_min={sigma_min:.3e}, residual={residual:.3e})")
    return alpha, residual, float(slack), sigma_min


def solve_p1(spec: GameSpec, problem: DesignProblem) -> DesignResult:
    """Independent per-player designs (the margin decouples across players)."""
    alphas, residuals, slacks, sigmas = [], [], [], []
    for i in range(spec.n):
        a, r, s, sv = solve_p1_player(spec, problem.theta_hat[i], problem.x_d,
                                      problem.v_d[i], i, problem.eps_margin,
                                      problem.lam_reg)
        alphas.append(a)
        residuals.append(r)
        slacks.append(s)
        sigmas.append(sv)
    residuals = np.array(residuals)
    slacks = np.array(slacks)
    feasible = bool(np.all(slacks >= -1e-12)
                    and (problem.lam_reg > 0 or np.all(residuals <= EXACT_TOL)))
    obj = float(np.sum(residuals ** 2)
                + problem.lam_reg * sum(a @ a for a in alphas))
    return DesignResult(alpha=tuple(alphas), residuals=residuals, slacks=slacks,
                        rank_certificates=np.array(sigmas), feasible=feasible,
                        regularized=problem.lam_reg > 0, mode="nash-p1",
                        objective=obj)


def _joint_jacobian_parts(spec: GameSpec, theta_hat, x_d):
    """Constant part and per-entry alpha rows of the game Jacobian at x_d."""
    n = spec.n
    base = np.zeros((n, n))
    rows = [[None] * n for _ in range(n)]
    for i in range(n):
        th = np.asarray(theta_hat[i], dtype=float)
        for j in range(n):
            base[i, j] = spec.nominal[i].hess_entry(x_d, i, j) @ th
            rows[i][j] = spec.incentive[i].hess_entry(x_d, i, j)
    return base, rows


def _min_eig_and_vec(sym: np.ndarray):
    vals, vecs = np.linalg.eigh(sym)
    return float(vals[0]), vecs[:, 0]


def solve_p2(spec: GameSpec, problem: DesignProblem,
             max_penalty_doublings: int = 40,
             max_inner_iters: int = 2000) -> DesignResult:
    """Joint design with min-eig(sym(game Jacobian)) >= eps at x_d.

    Starts from the per-player solution; when the joint constraint is
    violated, minimizes the summed least-squares objective plus an exterior
    quadratic penalty on the eigenvalue gap, doubling the penalty weight
    until the margin holds and the iterates are stationary.
    """
    p1 = solve_p1(spec, problem)
    base, rows = _joint_jacobian_parts(spec, problem.theta_hat, problem.x_d)
    n = spec.n
    dims = [spec.incentive[i].dimension for i in range(n)]

    def jac_of(alphas):
        J = base.copy()
        for i in range(n):
            for j in range(n):
                J[i, j] += rows[i][j] @ alphas[i]
        return J

    def split(vec):
        out, pos = [], 0
        for d in dims:
            out.append(vec[pos:pos + d])
            pos += d
        return out

    def eig_slack(alphas):
        return min_eig_symmetric_part(jac_of(alphas)) - problem.eps_margin

    if eig_slack(p1.alpha) >= 0.0:
        res = p1
        res.mode = "nash-p2"
        res.slacks = np.full(n, eig_slack(p1.alpha))
        return res

    systems = [assemble_nash_system(spec, problem.theta_hat[i], problem.x_d,
                                    problem.v_d[i], i) for i in range(n)]

    def objective_grad(vec, mu):
        alphas = split(vec)
        f = 0.0
        grad = np.zeros_like(vec)
        pos = 0
        for i in range(n):
            zeta, lam_mat, _, _ = systems[i]
            r = zeta + lam_mat @ alphas[i]
            f += r @ r + problem.lam_reg * alphas[i] @ alphas[i]
            grad[pos:pos + dims[i]] = 2.0 * (lam_mat.T @ r
                                             + problem.lam_reg * alphas[i])
            pos += dims[i]
        J = jac_of(alphas)
        lam_min, v = _min_eig_and_vec(0.5 * (J + J.T))
        gap = problem.eps_margin - lam_min
        if gap > 0:
            f += mu * gap * gap
            pos = 0
            for i in range(n):
                dg = np.zeros(dims[i])
                for j in range(n):
                    dg += v[i] * v[j] * rows[i][j]
                grad[pos:pos + dims[i]] += -2.0 * mu * gap * dg
                pos += dims[i]
        return f, grad

    vec = np.concatenate(p1.alpha)
    mu = 1.0
    for _ in range(max_penalty_doublings):
        lr = 1.0
        f, g = objective_grad(vec, mu)
        for _ in range(max_inner_iters):
            if np.linalg.norm(g) <= P2_STATIONARITY_TOL:
                break
            # Backtracking line search on the penalized objective.
            while lr > 1e-16:
                trial = vec - lr * g
                f_t, g_t = objective_grad(trial, mu)
                if f_t <= f - 0.25 * lr * (g @ g):
                    vec, f, g = trial, f_t, g_t
                    lr = min(lr * 1.6, 1.0)
                    break
                lr *= 0.5
            else:
                break
        if eig_slack(split(vec)) >= -1e-10:
            break
        mu *= 2.0
    else:
        raise InfeasibleStability(
            "penalty escalation failed to reach the joint stability margin")

    alphas = tuple(split(vec))
    residuals = np.array([
        float(np.linalg.norm(systems[i][0] + systems[i][1] @ alphas[i]))
        for i in range(n)])
    slack = eig_slack(alphas)
    sigmas = np.array([_rank_certificate(systems[i][1])[0] for i in range(n)])
    feasible = bool(slack >= -1e-10
                    and (problem.lam_reg > 0 or np.all(residuals <= 1e-6)))
    obj = float(np.sum(residuals ** 2)
                + problem.lam_reg * sum(a @ a for a in alphas))
    return DesignResult(alpha=alphas, residuals=residuals,
                        slacks=np.full(n, slack), rank_certificates=sigmas,
                        feasible=feasible, regularized=problem.lam_reg > 0,
                        mode="nash-p2", objective=obj)


def assemble_myopic_system(spec: GameSpec, theta_hat_i, x_curr, x_d,
                           v_d_i: float, i: int, offset_i: float = 0.0,
                           gain_i: float = 1.0, pin_value: bool = True):
    """Rows [Psi_i(x_curr); Psi_i(x_d)] and targets for the linear design.

    The first target is the incentive value that lands the estimated update
    on x_d_i: (x_d_i - offset_i) / gain_i - <Phi_i(x_curr), theta_i>.  With
    ``pin_value`` off only that row is kept.
    """
    spec.check_player(i)
    theta_hat_i = np.asarray(theta_hat_i, dtype=float)
    steer = (float(x_d[i]) - offset_i) / gain_i \
        - spec.nominal[i].eval(x_curr) @ theta_hat_i
    if pin_value:
        lam_mat = np.vstack([spec.incentive[i].eval(x_curr),
                             spec.incentive[i].eval(x_d)])
        rhs = np.array([steer, float(v_d_i)])
    else:
        lam_mat = spec.incentive[i].eval(x_curr).reshape(1, -1)
        rhs = np.array([steer])
    return lam_mat, rhs


def consistent_incentive_values(spec: GameSpec, theta, x_d, offsets_at_xd,
                                gains) -> np.ndarray:
    """Desired incentive values compatible with holding x_d as a fixed point.

    At the tracked point the update equation itself pins the value the
    incentive must take there: (x_d_i - offset_i(x_d)) / gain_i minus the
    nominal model value.
    """
    x_d = np.asarray(x_d, dtype=float)
    off = np.asarray(offsets_at_xd, dtype=float)
    gain = np.asarray(gains, dtype=float)
    return np.array([
        (x_d[i] - off[i]) / gain[i]
        - float(spec.nominal[i].eval(x_d) @ np.asarray(theta[i], dtype=float))
        for i in range(spec.n)])


def solve_myopic_player(lam_mat, rhs):
    """Minimum-norm least squares for one player's myopic design rows.

    Inconsistency is judged relative to the target scale: near the tracked
    point the two rows merge and tiny estimation offsets would otherwise trip
    the absolute threshold.
    """
    rows = lam_mat.shape[0]
    # Closed-form min-norm path for the tiny (<= 2-row) systems this designer
    # sees every iteration; the SVD pseudoinverse stays as the fallback.
    if rows == 1:
        a = lam_mat[0]
        nrm = float(a @ a)
        sigma_min = sigma_max = float(np.sqrt(nrm))
        if nrm > RANK_RCOND ** 2:
            alpha = a * (rhs[0] / nrm)
            return alpha, 0.0, sigma_min
    elif rows == 2:
        gram = lam_mat @ lam_mat.T
        a, b, c = gram[0, 0], gram[0, 1], gram[1, 1]
        mid = 0.5 * (a + c)
        rad = np.hypot(0.5 * (a - c), b)
        lam_small, lam_big = max(mid - rad, 0.0), mid + rad
        sigma_min, sigma_max = float(np.sqrt(lam_small)), float(np.sqrt(lam_big))
        det = a * c - b * b
        if sigma_min > 1e-6 * max(sigma_max, 1.0) and det > 0:
            w = np.array([(c * rhs[0] - b * rhs[1]) / det,
                          (a * rhs[1] - b * rhs[0]) / det])
            alpha = lam_mat.T @ w
            residual = float(np.linalg.norm(lam_mat @ alpha - rhs))
            return alpha, residual, sigma_min
    sigma_min, sigma_max = _rank_certificate(lam_mat)
    alpha = np.linalg.pinv(lam_mat, rcond=RANK_RCOND) @ rhs
    residual = float(np.linalg.norm(lam_mat @ alpha - rhs))
    scale = max(1.0, float(np.linalg.norm(rhs)))
    if sigma_min < RANK_RCOND * max(sigma_max, 1.0) \
            and residual > EXACT_TOL * scale:
        raise RankDeficient(
            f"myopic design rows inconsistent at this observation "
            f"(sigma_min={sigma_min:.3e}, residual={residual:.3e})")
    return alpha, residual, sigma_min


def solve_myopic(spec: GameSpec, problem: DesignProblem) -> DesignResult:
    if problem.x_curr is None:
        raise DimensionMismatch("myopic design needs the current response")
    n = spec.n
    off = np.zeros(n) if problem.offsets is None else np.asarray(problem.offsets, dtype=float)
    gain = np.ones(n) if problem.gains is None else np.asarray(problem.gains, dtype=float)
    alphas, residuals, sigmas, scales = [], [], [], []
    for i in range(n):
        lam_mat, rhs = assemble_myopic_system(
            spec, problem.theta_hat[i], problem.x_curr, problem.x_d,
            problem.v_d[i], i, off[i], gain[i], problem.pin_value)
        a, r, sv = solve_myopic_player(lam_mat, rhs)
        alphas.append(a)
        residuals.append(r)
        sigmas.append(sv)
        scales.append(max(1.0, float(np.linalg.norm(rhs))))
    residuals = np.array(residuals)
    feasible = bool(np.all(residuals <= EXACT_TOL * np.array(scales)))
    return DesignResult(alpha=tuple(alphas), residuals=residuals,
                        slacks=np.zeros(n), rank_certificates=np.array(sigmas),
                        feasible=feasible, regularized=False, mode="myopic",
                        objective=float(np.sum(residuals ** 2)))


def design(spec: GameSpec, problem: DesignProblem) -> DesignResult:
    if problem.mode == "nash-p1":
        return solve_p1(spec, problem)
    if problem.mode == "nash-p2":
        return solve_p2(spec, problem)
    return solve_myopic(spec, problem)
