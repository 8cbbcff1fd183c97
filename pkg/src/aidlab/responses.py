"""Agent response generation: equilibrium play and myopic update rules.

Equilibrium play answers each incentive with a solved equilibrium of the true
incentivized game.  Myopic play advances prices by gradient play, best
response, or fictitious play on the true revenue structure; the coordinator
side of those worlds (how its generalized linear model maps onto observed
responses) is captured by ``CoordinatorArchitecture``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, DomainViolation
from .game import GameSpec, solve_equilibrium

BR_BOUNDS = (0.01, 50.0)
BR_DERIV_TOL = 1e-8
BR_BRACKET_TOL = 1e-10


# ---------------------------------------------------------------------------
# Stochastic inputs
# ---------------------------------------------------------------------------

@dataclass
class NoiseModel:
    """Additive observation noise: one independent stream per player."""

    kind: str = "none"
    sigma2: float = 0.0
    seed: int = 0
    n_players: int = 2

    def __post_init__(self):
        if self.kind not in ("none", "gaussian-iid"):
            raise DimensionMismatch(f"unknown noise kind {self.kind!r}")
        if self.sigma2 < 0:
            raise DimensionMismatch("sigma2 must be nonnegative")
        seqs = np.random.SeedSequence(self.seed).spawn(self.n_players)
        self._rngs = [np.random.default_rng(s) for s in seqs]

    @property
    def active(self) -> bool:
        return self.kind == "gaussian-iid" and self.sigma2 > 0.0

    def draw(self) -> np.ndarray:
        if not self.active:
            return np.zeros(self.n_players)
        sd = float(np.sqrt(self.sigma2))
        return np.array([rng.normal(0.0, sd) for rng in self._rngs])


@dataclass
class ExogenousSignal:
    """Common-knowledge i.i.d. signal (the demand-shock process)."""

    kind: str = "none"
    mean: float = 0.0
    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian-iid"):
            raise DimensionMismatch(f"unknown signal kind {self.kind!r}")
        if self.variance < 0:
            raise DimensionMismatch("variance must be nonnegative")
        self._rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(97,)))

    def draw(self) -> float:
        if self.kind == "none":
            return 0.0
        return float(self._rng.normal(self.mean, np.sqrt(self.variance)))


# ---------------------------------------------------------------------------
# Equilibrium play
# ---------------------------------------------------------------------------

def respond_nash(spec: GameSpec, alpha, x_prev, step: float = 0.05,
                 tol: float = 1e-10, max_iters: int = 200_000) -> np.ndarray:
    """Equilibrium of the true incentivized game, continued from x_prev."""
    if spec.true_theta is None:
        raise DimensionMismatch("equilibrium play needs true parameters")
    report = solve_equilibrium(spec, spec.true_theta, alpha, x_prev, step=step,
                               tol=tol, max_iters=max_iters)
    return report.point


# ---------------------------------------------------------------------------
# Revenue structures for the price-competition worlds
# ---------------------------------------------------------------------------

class LinearMarginalRevenue:
    """Marginal revenue t_i.x + t_ii x_i + tau from linear demand t_i.x + tau."""

    def __init__(self, rows: Sequence[Sequence[float]]):
        self.rows = np.asarray(rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[0] != self.rows.shape[1]:
            raise DimensionMismatch("need one full coefficient row per firm")
        self.n = self.rows.shape[0]

    def marginal(self, x, tau: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.rows @ x + np.diag(self.rows) * x + tau

    def marginal_jacobian(self, x, tau: float) -> np.ndarray:
        return self.rows + np.diag(np.diag(self.rows))

    def revenue(self, i: int, xi: float, x_other, tau: float) -> float:
        x = np.asarray(x_other, dtype=float).copy()
        x[i] = xi
        return float(xi * (self.rows[i] @ x + tau))

    def d_revenue(self, i: int, xi: float, x_other, tau: float) -> float:
        x = np.asarray(x_other, dtype=float).copy()
        x[i] = xi
        return float(self.rows[i] @ x + self.rows[i, i] * xi + tau)

    def d_revenue_batch(self, i: int, xs: np.ndarray, x_other, tau: float) -> np.ndarray:
        x = np.asarray(x_other, dtype=float)
        rest = self.rows[i] @ x - self.rows[i, i] * x[i] + tau
        return rest + 2.0 * self.rows[i, i] * np.asarray(xs, dtype=float)

    def effective_theta(self) -> Tuple[np.ndarray, ...]:
        """Coefficients seen by a planner regressing on Phi(x) = x."""
        out = []
        for i in range(self.n):
            row = self.rows[i].copy()
            row[i] *= 2.0
            out.append(row)
        return tuple(out)


class NonlinearMarginalRevenue:
    """Adds a log own-price term and an intercept to the linear structure."""

    def __init__(self, rows: Sequence[Sequence[float]], intercepts: Sequence[float]):
        self.rows = np.asarray(rows, dtype=float)
        self.intercepts = np.asarray(intercepts, dtype=float)
        if self.rows.shape[0] != len(self.intercepts):
            raise DimensionMismatch("one intercept per firm")
        self.n = self.rows.shape[0]

    def _guard(self, x):
        if np.any(np.asarray(x) <= 0.0):
            raise DomainViolation("nonlinear marginal revenue needs positive prices")

    def marginal(self, x, tau: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._guard(x)
        return np.log(x) + self.rows @ x + np.diag(self.rows) * x \
            + self.intercepts + tau + 1.0

    def marginal_jacobian(self, x, tau: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._guard(x)
        return self.rows + np.diag(np.diag(self.rows)) + np.diag(1.0 / x)

    def revenue(self, i: int, xi: float, x_other, tau: float) -> float:
        if xi <= 0.0:
            raise DomainViolation("price must be positive")
        x = np.asarray(x_other, dtype=float).copy()
        x[i] = xi
        return float(xi * (np.log(xi) + self.rows[i] @ x + self.intercepts[i] + tau))

    def d_revenue(self, i: int, xi: float, x_other, tau: float) -> float:
        if xi <= 0.0:
            raise DomainViolation("price must be positive")
        x = np.asarray(x_other, dtype=float).copy()
        x[i] = xi
        return float(np.log(xi) + self.rows[i] @ x + self.rows[i, i] * xi
                     + self.intercepts[i] + tau + 1.0)

    def d_revenue_batch(self, i: int, xs: np.ndarray, x_other, tau: float) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if np.any(xs <= 0.0):
            raise DomainViolation("price must be positive")
        x = np.asarray(x_other, dtype=float)
        rest = self.rows[i] @ x - self.rows[i, i] * x[i] \
            + self.intercepts[i] + tau + 1.0
        return np.log(xs) + rest + 2.0 * self.rows[i, i] * xs


# ---------------------------------------------------------------------------
# Myopic update rules
# ---------------------------------------------------------------------------

def incentive_value(spec: GameSpec, alpha, i: int, x) -> float:
    return float(spec.incentive[i].eval(x) @ np.asarray(alpha[i], dtype=float))


def respond_gradient_play(x, zeta, marginal, spec: GameSpec, alpha,
                          tau: float, w_resp=None) -> np.ndarray:
    """x_i + zeta_i (M_i(x, tau) + <Psi_i(x), alpha_i>) plus response noise."""
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    m = marginal.marginal(x, tau)
    inc = np.array([incentive_value(spec, alpha, i, x) for i in range(spec.n)])
    out = x + zeta * (m + inc)
    if w_resp is not None:
        out = out + np.asarray(w_resp, dtype=float)
    return out


def maximize_scalar(f: Callable[[float], float], df: Optional[Callable[[float], float]],
                    lo: float, hi: float, coarse: int = 64,
                    tol: float = BR_BRACKET_TOL, dtol: float = BR_DERIV_TOL):
    """Golden-section search refined by derivative bisection.

    Returns (argmax, boundary_flag, derivative_residual).
    """
    xs = np.linspace(lo, hi, coarse)
    vals = np.array([f(x) for x in xs])
    k = int(np.argmax(vals))
    a = xs[max(k - 1, 0)]
    b = xs[min(k + 1, coarse - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x_star = 0.5 * (a + b)
    if df is not None:
        ga, gb = df(a), df(b)
        if ga > 0 and gb < 0:
            # Interior maximum bracketed; bisect the derivative to high precision.
            la, lb = a, b
            for _ in range(200):
                mid = 0.5 * (la + lb)
                gm = df(mid)
                if abs(gm) <= dtol:
                    x_star = mid
                    break
                if gm > 0:
                    la = mid
                else:
                    lb = mid
            else:
                x_star = 0.5 * (la + lb)
    boundary = (x_star - lo) <= 2 * tol + (hi - lo) / (coarse - 1) and k == 0
    boundary = boundary or ((hi - x_star) <= 2 * tol + (hi - lo) / (coarse - 1)
                            and k == coarse - 1)
    resid = abs(df(x_star)) if df is not None else float("nan")
    return float(x_star), bool(boundary), float(resid)


def _foc_root_max(g, lo: float, hi: float, coarse: int = 96,
                  dtol: float = BR_DERIV_TOL, g_batch=None):
    """Largest-objective interior root of a derivative g (+ boundary flag).

    Scans for sign changes from positive to negative (interior maxima) and
    bisects the best one; monotone derivatives land on the boundary.
    """
    xs = np.linspace(lo, hi, coarse)
    gs = g_batch(xs) if g_batch is not None else np.array([g(x) for x in xs])
    brackets = [(xs[j], xs[j + 1]) for j in range(coarse - 1)
                if gs[j] > 0 >= gs[j + 1]]
    if not brackets:
        return (hi, True, abs(gs[-1])) if gs[-1] > 0 else (lo, True, abs(gs[0]))
    la, lb = brackets[-1]
    for _ in range(200):
        mid = 0.5 * (la + lb)
        gm = g(mid)
        if abs(gm) <= dtol:
            return mid, False, abs(gm)
        if gm > 0:
            la = mid
        else:
            lb = mid
    mid = 0.5 * (la + lb)
    return mid, False, abs(g(mid))


def respond_best_response(x, revenue, spec: GameSpec, alpha, tau: float,
                          bounds: Tuple[float, float] = BR_BOUNDS,
                          w_resp=None, incentive_level: str = "objective"):
    """Simultaneous best responses on a bounded price interval.

    Each firm maximizes its incentivized objective in its own price with the
    opponents frozen at ``x``.  With ``incentive_level='objective'`` the
    incentive term adds to the revenue itself; with ``'marginal'`` it adds to
    the marginal revenue (the same role it plays in the gradient-play update),
    so the first-order condition is M_i + <Psi_i, alpha_i> = 0.
    Returns (x_next, boundary_flags).
    """
    x = np.asarray(x, dtype=float)
    lo, hi = bounds
    out = np.zeros(spec.n)
    flags = np.zeros(spec.n, dtype=bool)
    for i in range(spec.n):
        if incentive_level == "marginal":
            def dobj(xi, i=i):
                pt = x.copy()
                pt[i] = xi
                return revenue.d_revenue(i, xi, x, tau) \
                    + incentive_value(spec, alpha, i, pt)

            def dobj_batch(xs, i=i):
                pts = np.tile(x, (len(xs), 1))
                pts[:, i] = xs
                return revenue.d_revenue_batch(i, xs, x, tau) \
                    + spec.incentive[i].eval(pts) @ np.asarray(alpha[i], dtype=float)

            out[i], flags[i], _ = _foc_root_max(dobj, lo, hi,
                                                g_batch=dobj_batch)
            continue

        def obj(xi, i=i):
            pt = x.copy()
            pt[i] = xi
            return revenue.revenue(i, xi, x, tau) \
                + incentive_value(spec, alpha, i, pt)

        def dobj(xi, i=i):
            pt = x.copy()
            pt[i] = xi
            dinc = float(spec.incentive[i].grad(pt, i)
                         @ np.asarray(alpha[i], dtype=float))
            return revenue.d_revenue(i, xi, x, tau) + dinc

        out[i], flags[i], _ = maximize_scalar(obj, dobj, lo, hi)
    if w_resp is not None:
        out = out + np.asarray(w_resp, dtype=float)
    return out, flags


def respond_fictitious_play(history: Sequence[np.ndarray], revenue,
                            spec: GameSpec, alpha, tau: float,
                            window_start: int = 0,
                            bounds: Tuple[float, float] = BR_BOUNDS,
                            w_resp=None, incentive_level: str = "objective"):
    """Best response against the opponents' historical average."""
    if len(history) == 0:
        raise DimensionMismatch("fictitious play needs a non-empty history")
    hist = np.asarray(history[window_start:], dtype=float)
    x_bar = hist.mean(axis=0)
    return respond_best_response(x_bar, revenue, spec, alpha, tau,
                                 bounds=bounds, w_resp=w_resp,
                                 incentive_level=incentive_level)


# ---------------------------------------------------------------------------
# Worlds and the coordinator-side architecture
# ---------------------------------------------------------------------------

@dataclass
class CoordinatorArchitecture:
    """How the planner's model x+ = offset + gain * (<Phi,theta> + <Psi,alpha>)
    maps onto responses.

    kind 'plain':      offset 0,            gain 1   (pure GLM update)
    kind 'direct-tau': offset tau,          gain 1   (price-level estimate)
    kind 'increment':  offset x + zeta*tau, gain zeta (gradient-play estimate)
    """

    kind: str = "plain"
    zeta: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("plain", "direct-tau", "increment"):
            raise DimensionMismatch(f"unknown architecture {self.kind!r}")
        if self.kind == "increment":
            self.zeta = np.asarray(self.zeta, dtype=float)

    def offsets(self, x_curr, tau: float, n: int) -> np.ndarray:
        if self.kind == "plain":
            return np.zeros(n)
        if self.kind == "direct-tau":
            return np.full(n, tau)
        return np.asarray(x_curr, dtype=float) + self.zeta * tau

    def gains(self, n: int) -> np.ndarray:
        if self.kind == "increment":
            return self.zeta
        return np.ones(n)

    def predict(self, spec: GameSpec, theta_hat, x_curr, alpha,
                tau: float) -> np.ndarray:
        """The planner's estimate of the incoming response."""
        off = self.offsets(x_curr, tau, spec.n)
        gain = self.gains(spec.n)
        glm = np.array([
            spec.nominal[i].eval(x_curr) @ np.asarray(theta_hat[i], dtype=float)
            + incentive_value(spec, alpha, i, x_curr)
            for i in range(spec.n)])
        return off + gain * glm


@dataclass
class MyopicWorld:
    """True response dynamics for myopic simulations.

    update 'glm' uses the coordinator's own stacks with spec.true_theta (the
    synthetic exactly-well-specified case); the price-competition updates run
    on the revenue structure regardless of what the planner models.
    """

    update: str
    zeta: Optional[np.ndarray] = None
    revenue: Optional[object] = None
    bounds: Tuple[float, float] = BR_BOUNDS
    fp_window_start: int = 0
    incentive_level: str = "marginal"

    def __post_init__(self):
        if self.update not in ("glm", "gradient-play", "best-response",
                               "fictitious-play"):
            raise DimensionMismatch(f"unknown update rule {self.update!r}")
        if self.zeta is not None:
            self.zeta = np.asarray(self.zeta, dtype=float)

    def respond(self, spec: GameSpec, history: List[np.ndarray], alpha,
                tau: float, w_resp=None):
        """Advance one step from the newest point in ``history``."""
        x = history[-1]
        flags = np.zeros(spec.n, dtype=bool)
        if self.update == "glm":
            if spec.true_theta is None:
                raise DimensionMismatch("glm world needs true parameters")
            out = np.array([
                spec.nominal[i].eval(x) @ spec.true_theta[i]
                + incentive_value(spec, alpha, i, x)
                for i in range(spec.n)])
            if w_resp is not None:
                out = out + np.asarray(w_resp, dtype=float)
            return out, flags
        if self.update == "gradient-play":
            return respond_gradient_play(x, self.zeta, self.revenue, spec,
                                         alpha, tau, w_resp), flags
        if self.update == "best-response":
            return respond_best_response(x, self.revenue, spec, alpha, tau,
                                         bounds=self.bounds, w_resp=w_resp,
                                         incentive_level=self.incentive_level)
        return respond_fictitious_play(history, self.revenue, spec, alpha,
                                       tau, window_start=self.fp_window_start,
                                       bounds=self.bounds, w_resp=w_resp,
                                       incentive_level=self.incentive_level)

    def contraction_check(self, spec: GameSpec, x_ref, tau_mean: float):
        """Warn when linearized gradient play is not a contraction at x_ref."""
        if self.update != "gradient-play" or self.revenue is None:
            return None
        jac = self.revenue.marginal_jacobian(np.asarray(x_ref, dtype=float),
                                             tau_mean)
        amp = np.eye(spec.n) + np.diag(self.zeta) @ jac
        rho = float(np.max(np.abs(np.linalg.eigvals(amp))))
        if rho >= 1.0:
            warnings.warn(
                f"gradient-play learning rates give spectral radius {rho:.3f}"
                " >= 1 at the reference point; the process may not contract",
                stacklevel=2)
        return rho
