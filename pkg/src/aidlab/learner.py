"""Online utility learning: observations, admissible sets, prox-mapping updates.

Each iteration yields, per player, a scalar observation ``y`` and a regression
vector ``xi`` with ``y = <xi, theta*> (+ w)``.  In equilibrium play the pair
comes from the first-order condition at the observed response; in myopic play
it comes from the update-rule architecture.  Parameter estimates move by a
prox-mapping (Bregman projection of a gradient step) onto the current
admissible set, which in equilibrium play accumulates one second-order
halfspace per observation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (DimensionMismatch, HypothesisViolated, InfeasibleSet)
from .game import GameSpec

FEAS_TOL = 1e-9
DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 500


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

@dataclass
class ObservationRecord:
    """One loop step's (x, alpha, y, xi) bundle.

    ``w_true`` is simulation ground truth for diagnostics; the learner never
    reads it.
    """

    k: int
    x_next: np.ndarray
    alpha_used: Tuple[np.ndarray, ...]
    y: np.ndarray
    xi: Tuple[np.ndarray, ...]
    w_true: Optional[np.ndarray] = None


def build_observation(mode: str, spec: GameSpec, x_next, alpha_used,
                      x_curr=None, k: int = 0, w=None,
                      offsets=None, gains=None) -> ObservationRecord:
    """Construct the unified (y, xi) observation for every player.

    Equilibrium mode reads the first-order condition at ``x_next``:
    ``xi_i = D_i Phi_i(x_next)`` and ``y_i = -<D_i Psi_i(x_next), alpha_i>``
    (plus measurement noise ``w`` when given).

    Myopic mode regresses the response on the previous point:
    ``xi_i = Phi_i(x_curr)`` and
    ``y_i = (x_next_i - offset_i) / gain_i - <Psi_i(x_curr), alpha_i>``.
    Offsets/gains default to 0/1 (the plain update architecture); a noisy
    response already carries its noise into ``y``, so ``w`` is only recorded.
    """
    x_next = np.asarray(x_next, dtype=float)
    if x_next.shape != (spec.n,):
        raise DimensionMismatch("x_next must be a joint strategy vector")
    alpha_used = tuple(np.asarray(a, dtype=float) for a in alpha_used)
    w_arr = None if w is None else np.asarray(w, dtype=float)
    y = np.zeros(spec.n)
    xi: List[np.ndarray] = []
    if mode == "nash":
        for i in range(spec.n):
            xi.append(spec.nominal[i].grad(x_next, i))
            y[i] = -(spec.incentive[i].grad(x_next, i) @ alpha_used[i])
        if w_arr is not None:
            y = y + w_arr
    elif mode == "myopic":
        if x_curr is None:
            raise DimensionMismatch("myopic observations need x_curr")
        x_curr = np.asarray(x_curr, dtype=float)
        off = np.zeros(spec.n) if offsets is None else np.asarray(offsets, dtype=float)
        gain = np.ones(spec.n) if gains is None else np.asarray(gains, dtype=float)
        for i in range(spec.n):
            xi.append(spec.nominal[i].eval(x_curr))
            y[i] = (x_next[i] - off[i]) / gain[i] \
                - spec.incentive[i].eval(x_curr) @ alpha_used[i]
    else:
        raise DimensionMismatch(f"unknown observation mode {mode!r}")
    return ObservationRecord(k=k, x_next=x_next, alpha_used=alpha_used, y=y,
                             xi=tuple(xi), w_true=w_arr)


def loss_and_gradient(record: ObservationRecord, i: int, theta_hat):
    """Half squared prediction error and its gradient in theta."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    xi = record.xi[i]
    if theta_hat.shape != xi.shape:
        raise DimensionMismatch("theta length does not match the regressor")
    err = record.y[i] - xi @ theta_hat
    return 0.5 * err * err, -xi * err


# ---------------------------------------------------------------------------
# Admissible sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibleSet:
    """Box constraints plus accumulated halfspaces <a, theta> >= b."""

    box: np.ndarray
    halfspaces: Tuple[Tuple[np.ndarray, float], ...] = ()
    mode: str = "static"

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise DimensionMismatch("box must have shape (m, 2)")
        object.__setattr__(self, "box", box)

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    def rows(self):
        if not self.halfspaces:
            return np.zeros((0, self.dim)), np.zeros(0)
        A = np.stack([a for a, _ in self.halfspaces])
        b = np.array([b for _, b in self.halfspaces])
        return A, b

    def feasible(self, theta, tol: float = FEAS_TOL) -> bool:
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < self.box[:, 0] - tol) or np.any(theta > self.box[:, 1] + tol):
            return False
        A, b = self.rows()
        return bool(len(b) == 0 or np.all(A @ theta >= b - tol))

    def violation(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        v = max(float(np.max(self.box[:, 0] - theta, initial=0.0)),
                float(np.max(theta - self.box[:, 1], initial=0.0)))
        A, b = self.rows()
        if len(b):
            v = max(v, float(np.max(b - A @ theta, initial=0.0)))
        return v

    def append_halfspace(self, a, b, dedup_tol: float = 1e-12) -> "AdmissibleSet":
        """Intersect with <a, theta> >= b; drops rows it dominates."""
        a = np.asarray(a, dtype=float)
        norm = np.linalg.norm(a)
        if norm == 0.0:
            # Degenerate row: either vacuous or globally infeasible; keep the
            # vacuous case silent and let projection surface the other.
            if b <= 0:
                return self
            raise InfeasibleSet("zero row with positive bound", certificate=(a, b))
        kept = []
        b_new = b
        for (a_old, b_old) in self.halfspaces:
            same_dir = np.linalg.norm(a_old / np.linalg.norm(a_old) - a / norm) <= dedup_tol
            if same_dir:
                # Parallel constraints: only the tighter bound matters.
                b_new = max(b_new, b_old * norm / np.linalg.norm(a_old))
            else:
                kept.append((a_old, b_old))
        kept.append((a, b_new))
        return replace(self, halfspaces=tuple(kept))


def append_second_order_constraint(aset: AdmissibleSet, spec: GameSpec, x_obs,
                                   alpha_prev, i: int) -> AdmissibleSet:
    """Add the second-order equilibrium condition observed at ``x_obs``.

    The row reads <D_ii Phi_i(x_obs), theta_i> >= -<D_ii Psi_i(x_obs), alpha_i>.
    """
    spec.check_player(i)
    a = spec.nominal[i].second_own(x_obs, i)
    b = -(spec.incentive[i].second_own(x_obs, i) @ np.asarray(alpha_prev[i], dtype=float))
    return aset.append_halfspace(a, float(b))


# ---------------------------------------------------------------------------
# Distance-generating functions and the prox-mapping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProxOperator:
    """Euclidean or diagonally weighted quadratic distance generator.

    ``beta(theta) = theta' D theta / 2`` with D = diag(weights); the induced
    Bregman divergence is ``V(t1, t2) = (t2 - t1)' D (t2 - t1) / 2``.  The
    reference norm is the plain 2-norm, so the strong-convexity modulus is
    ``min(weights)`` and the dual norm is again the 2-norm.
    """

    kind: str = "euclidean"
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "diagonal-quadratic"):
            raise DimensionMismatch(f"unknown distance generator {self.kind!r}")
        if self.kind == "diagonal-quadratic":
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or np.any(w <= 0):
                raise DimensionMismatch("diagonal weights must be positive")
            object.__setattr__(self, "weights", w)

    @property
    def nu(self) -> float:
        if self.kind == "euclidean":
            return 1.0
        return float(np.min(self.weights))

    def _d(self, m: int) -> np.ndarray:
        if self.kind == "euclidean":
            return np.ones(m)
        if len(self.weights) != m:
            raise DimensionMismatch("weight length mismatch")
        return self.weights

    def bregman(self, t1, t2) -> float:
        t1 = np.asarray(t1, dtype=float)
        t2 = np.asarray(t2, dtype=float)
        d = self._d(len(t1))
        diff = t2 - t1
        return 0.5 * float(diff @ (d * diff))

    def dual_norm_sq(self, g) -> float:
        g = np.asarray(g, dtype=float)
        return float(g @ g)

    def prox(self, theta, g, aset: AdmissibleSet) -> np.ndarray:
        """argmin over the set of <g, u - theta> + V(theta, u)."""
        theta = np.asarray(theta, dtype=float)
        g = np.asarray(g, dtype=float)
        d = self._d(len(theta))
        target = theta - g / d
        return project_weighted(target, aset, d)

    def project(self, theta, aset: AdmissibleSet) -> np.ndarray:
        return project_weighted(np.asarray(theta, dtype=float), aset,
                                self._d(aset.dim))


def prox_update(prox: ProxOperator, aset: AdmissibleSet, theta_hat, g) -> np.ndarray:
    """One prox-mapping step onto the (possibly shrunk) admissible set."""
    return prox.prox(theta_hat, g, aset)


def project_weighted(z, aset: AdmissibleSet, d, tol: float = DYKSTRA_TOL,
                     max_sweeps: int = DYKSTRA_MAX_SWEEPS) -> np.ndarray:
    """Dykstra's alternating projections onto box and halfspaces in the
    diag(d) metric.  Box and halfspace projections are closed form."""
    z = np.asarray(z, dtype=float)
    d = np.asarray(d, dtype=float)
    lo, hi = aset.box[:, 0], aset.box[:, 1]
    A, b = aset.rows()
    # Fast path: already feasible.
    if np.all(z >= lo) and np.all(z <= hi) and (len(b) == 0 or np.all(A @ z >= b)):
        return z.copy()
    a_quad = (A ** 2 / d).sum(axis=1) if len(b) else np.zeros(0)
    x = z.copy()
    incs = [np.zeros_like(z) for _ in range(len(b) + 1)]
    feas_tol = FEAS_TOL
    first_inc = None
    max_blocks = 200
    for block in range(max_blocks):
        done = False
        for _ in range(max_sweeps):
            x_prev = x.copy()
            # Box projection.
            yb = x + incs[0]
            x = np.clip(yb, lo, hi)
            incs[0] = yb - x
            # Halfspace projections.
            for r in range(len(b)):
                yr = x + incs[r + 1]
                gap = b[r] - A[r] @ yr
                if gap > 0:
                    x = yr + (gap / a_quad[r]) * (A[r] / d)
                else:
                    x = yr
                incs[r + 1] = yr - x
            # Small movement alone is not a certificate: deflection increments
            # can keep draining for sweeps while the endpoint sits still.
            if np.max(np.abs(x - x_prev), initial=0.0) <= tol \
                    and aset.violation(x) <= feas_tol:
                done = True
                break
        if done or aset.violation(x) <= feas_tol:
            break
        # Unbounded increment growth certifies an empty intersection (the
        # deflections accumulate the shuttle distance each cycle); a feasible
        # problem keeps them bounded, and possibly needs many more sweeps.
        inc_norm = max(float(np.linalg.norm(p)) for p in incs)
        if first_inc is None:
            first_inc = inc_norm
        elif block >= 2 and inc_norm > 10.0 * first_inc + 1e-6:
            break
    viol = aset.violation(x)
    if viol > feas_tol:
        raise InfeasibleSet(
            f"projection stalled with constraint violation {viol:.3e}",
            certificate={"point": x, "violation": viol})
    return x


def verify_prox_inequality(prox: ProxOperator, set_k: AdmissibleSet,
                           set_k1: AdmissibleSet, theta_star, theta_hat, g,
                           tol: float = 1e-12):
    """Check V(P(g), t*) <= V(t^, t*) + <g, t* - t^> + |g|_*^2 / (2 nu).

    Requires t* feasible at k+1 and t^ feasible at k (the inequality's
    hypotheses).  Returns (holds, slack) with slack = rhs - lhs.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    if not set_k1.feasible(theta_star):
        raise HypothesisViolated("theta* must lie in the k+1 admissible set")
    if not set_k.feasible(theta_hat):
        raise HypothesisViolated("theta-hat must lie in the k admissible set")
    p = prox.prox(theta_hat, g, set_k1)
    lhs = prox.bregman(p, theta_star)
    g = np.asarray(g, dtype=float)
    rhs = prox.bregman(theta_hat, theta_star) + g @ (theta_star - theta_hat) \
        + prox.dual_norm_sq(g) / (2.0 * prox.nu)
    slack = rhs - lhs
    return bool(slack >= -tol), float(slack)


# ---------------------------------------------------------------------------
# Excitation diagnostics and step-size selection
# ---------------------------------------------------------------------------

def stability_constant(xis: Sequence[np.ndarray]) -> float:
    """Running bound c_s: the largest squared regressor norm seen."""
    return max(float(np.dot(x, x)) for x in xis)


def pe_min_eig(xis: Sequence[np.ndarray]) -> float:
    """Smallest eigenvalue of the window-averaged outer-product sum."""
    xs = np.stack([np.asarray(x, dtype=float) for x in xis])
    gram = xs.T @ xs / len(xs)
    if gram.shape == (1, 1):
        return float(gram[0, 0])
    return float(np.linalg.eigvalsh(gram)[0])


def constant_eta(c_s: float, nu: float = 1.0) -> Tuple[float, float]:
    """Step maximizing eta - eta^2 c_s / (2 nu); returns (eta, margin)."""
    eta = nu / c_s
    margin = eta - eta * eta * c_s / (2.0 * nu)
    return eta, margin
