"""Parametric incentivized games: costs, game form, equilibria, classification.

The joint strategy is ``x = (x_1, ..., x_n)`` with one scalar choice per
player.  Player ``i`` has nominal cost ``<Phi_i(x), theta_i>`` and incentive
term ``<Psi_i(x), alpha_i>``.  The stacked per-player own-gradients form the
game map whose zeros are equilibrium candidates; its Jacobian drives the
differential-Nash and stability classification.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .basis import BasisStack
from .errors import (DimensionMismatch, DivergedFromBox, IndexOutOfRange,
                     NonConvergence)

TWO_PI = 2.0 * np.pi

# Default solver knobs (see README for how experiments override them).
DEFAULT_STEP = 0.05
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 200_000
MERGE_RADIUS = 0.05
CLASSIFY_EPS = 1e-8
DIVERGE_FACTOR = 10.0


def wrap_angle(x: np.ndarray) -> np.ndarray:
    """Wrap each coordinate into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), TWO_PI)


@dataclass(frozen=True)
class GameSpec:
    """Per-player nominal/incentive stacks plus parameter and strategy boxes.

    ``true_theta`` is the simulation's ground truth; it is optional so that
    planner-agnostic experiments (no well-defined true parameters for the
    assumed model) can reuse the same machinery.
    """

    n: int
    nominal: Tuple[BasisStack, ...]
    incentive: Tuple[BasisStack, ...]
    theta_box: Tuple[np.ndarray, ...]
    domain_box: np.ndarray
    true_theta: Optional[Tuple[np.ndarray, ...]] = None
    wrap_angles: bool = False

    def __post_init__(self):
        if len(self.nominal) != self.n or len(self.incentive) != self.n:
            raise DimensionMismatch("need one nominal and one incentive stack per player")
        for st in (*self.nominal, *self.incentive):
            if st.n != self.n:
                raise DimensionMismatch("stack strategy dimension != player count")
        box = np.asarray(self.domain_box, dtype=float)
        if box.shape != (self.n, 2):
            raise DimensionMismatch("domain_box must have shape (n, 2)")
        object.__setattr__(self, "domain_box", box)
        tb = tuple(np.asarray(b, dtype=float) for b in self.theta_box)
        if len(tb) != self.n:
            raise DimensionMismatch("need one theta box per player")
        for i, b in enumerate(tb):
            if b.shape != (self.nominal[i].dimension, 2):
                raise DimensionMismatch(f"theta_box[{i}] shape mismatch")
        object.__setattr__(self, "theta_box", tb)
        if self.true_theta is not None:
            tt = tuple(np.asarray(t, dtype=float) for t in self.true_theta)
            for i, t in enumerate(tt):
                if t.shape != (self.nominal[i].dimension,):
                    raise DimensionMismatch(f"true_theta[{i}] length mismatch")
                lo, hi = tb[i][:, 0], tb[i][:, 1]
                if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
                    raise DimensionMismatch(
                        f"true_theta[{i}] lies outside its admissible box")
            object.__setattr__(self, "true_theta", tt)

    def check_player(self, i: int):
        if not (0 <= i < self.n):
            raise IndexOutOfRange(f"player index {i} out of range")

    def wrap(self, x: np.ndarray) -> np.ndarray:
        return wrap_angle(x) if self.wrap_angles else x

    def theta_center(self, i: int) -> np.ndarray:
        b = self.theta_box[i]
        return 0.5 * (b[:, 0] + b[:, 1])


def _check_params(spec: GameSpec, theta, alpha):
    for i in range(spec.n):
        if np.asarray(theta[i]).shape != (spec.nominal[i].dimension,):
            raise DimensionMismatch(f"theta[{i}] length mismatch")
        if np.asarray(alpha[i]).shape != (spec.incentive[i].dimension,):
            raise DimensionMismatch(f"alpha[{i}] length mismatch")


def zero_alpha(spec: GameSpec) -> Tuple[np.ndarray, ...]:
    return tuple(np.zeros(spec.incentive[i].dimension) for i in range(spec.n))


def incentivized_cost(spec: GameSpec, theta, alpha, i: int, x) -> float:
    """Player i's cost <Phi_i(x), theta_i> + <Psi_i(x), alpha_i>."""
    spec.check_player(i)
    _check_params(spec, theta, alpha)
    nom = spec.nominal[i].eval(x) @ np.asarray(theta[i], dtype=float)
    inc = spec.incentive[i].eval(x) @ np.asarray(alpha[i], dtype=float)
    return nom + inc


def omega(spec: GameSpec, theta, alpha, x) -> np.ndarray:
    """Stacked own-gradients (D_1 f_1, ..., D_n f_n); batched over x."""
    _check_params(spec, theta, alpha)
    comps = []
    for i in range(spec.n):
        c = spec.nominal[i].grad(x, i) @ np.asarray(theta[i], dtype=float)
        c = c + spec.incentive[i].grad(x, i) @ np.asarray(alpha[i], dtype=float)
        comps.append(c)
    return np.stack(comps, axis=-1)


def omega_jacobian(spec: GameSpec, theta, alpha, x) -> np.ndarray:
    """Jacobian of the game map: entry (i, j) = d omega_i / d x_j."""
    _check_params(spec, theta, alpha)
    rows = []
    for i in range(spec.n):
        cols = []
        for j in range(spec.n):
            c = spec.nominal[i].hess_entry(x, i, j) @ np.asarray(theta[i], dtype=float)
            c = c + spec.incentive[i].hess_entry(x, i, j) @ np.asarray(alpha[i], dtype=float)
            cols.append(c)
        rows.append(np.stack(cols, axis=-1))
    return np.stack(rows, axis=-2)


def min_eig_symmetric_part(mat: np.ndarray) -> float:
    """Smallest eigenvalue of (M + M^T) / 2 (closed form for 2x2)."""
    sym = 0.5 * (mat + mat.T)
    if sym.shape == (2, 2):
        a, b, c = sym[0, 0], sym[0, 1], sym[1, 1]
        mid = 0.5 * (a + c)
        rad = np.hypot(0.5 * (a - c), b)
        return float(mid - rad)
    return float(np.linalg.eigvalsh(sym)[0])


@dataclass
class EquilibriumReport:
    """Classification of one candidate point of the incentivized game."""

    point: np.ndarray
    omega_norm: float
    is_first_order: bool
    second_order: np.ndarray
    is_differential_nash: bool
    is_stable: bool
    converged: bool = True
    basin_label: Optional[int] = None
    basin_size: int = 0


def classify_point(spec: GameSpec, theta, alpha, x, tol: float = DEFAULT_TOL,
                   eps: float = CLASSIFY_EPS, converged: bool = True) -> EquilibriumReport:
    x = np.asarray(x, dtype=float)
    w = omega(spec, theta, alpha, x)
    jac = omega_jacobian(spec, theta, alpha, x)
    second = np.diag(jac).copy()
    wnorm = float(np.linalg.norm(w))
    first = wnorm <= max(tol, 10 * DEFAULT_TOL) if converged else wnorm <= tol
    is_dn = bool(first and np.all(second > eps))
    stable = bool(first and min_eig_symmetric_part(jac) > eps)
    return EquilibriumReport(point=x, omega_norm=wnorm, is_first_order=first,
                             second_order=second, is_differential_nash=is_dn,
                             is_stable=stable, converged=converged)


def solve_equilibrium(spec: GameSpec, theta, alpha, x0, step: float = DEFAULT_STEP,
                      tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                      halving: bool = True) -> EquilibriumReport:
    """Discretized gradient flow x <- wrap(x - step * omega(x)).

    Raises NonConvergence when the iteration cap is hit and DivergedFromBox
    when iterates escape the domain box by a wide margin (non-wrapped games).
    """
    if step <= 0:
        raise DimensionMismatch("step must be positive")
    x = spec.wrap(np.asarray(x0, dtype=float).copy())
    extent = DIVERGE_FACTOR * float(np.max(np.abs(spec.domain_box))) + 1.0
    cur = step
    w = omega(spec, theta, alpha, x)
    wn = np.linalg.norm(w)
    for _ in range(max_iters):
        if wn <= tol:
            return classify_point(spec, theta, alpha, x, tol=tol)
        x_new = spec.wrap(x - cur * w)
        if not spec.wrap_angles and np.any(np.abs(x_new) > extent):
            raise DivergedFromBox(f"iterate escaped the domain box at {x_new}")
        w_new = omega(spec, theta, alpha, x_new)
        wn_new = np.linalg.norm(w_new)
        # The map norm may rise along rotational stretches of the flow; only a
        # large jump signals overshoot, in which case retry with half the step.
        if halving and wn_new > 2.0 * wn and cur > step / 1024.0:
            cur *= 0.5
            continue
        x, w, wn = x_new, w_new, wn_new
        if halving and cur < step:
            cur = min(step, cur * 1.3)
    raise NonConvergence(
        f"equilibrium solver hit {max_iters} iterations (|omega|={wn:.3e})",
        last_point=x, residual=float(wn))


def _batch_descend(spec: GameSpec, theta, alpha, starts: np.ndarray,
                   step: float, tol: float, max_iters: int):
    """Fixed-step descent on a batch of starts; returns (ends, converged, diverged)."""
    x = spec.wrap(np.array(starts, dtype=float))
    active = np.ones(len(x), dtype=bool)
    diverged = np.zeros(len(x), dtype=bool)
    extent = DIVERGE_FACTOR * float(np.max(np.abs(spec.domain_box))) + 1.0
    for _ in range(max_iters):
        if not active.any():
            break
        w = omega(spec, theta, alpha, x[active])
        done = np.max(np.abs(w), axis=1) <= tol * 0.5
        idx = np.flatnonzero(active)
        x[idx] = spec.wrap(x[idx] - step * w * (~done)[:, None])
        if not spec.wrap_angles:
            bad = np.any(np.abs(x[idx]) > extent, axis=1)
            diverged[idx[bad]] = True
            active[idx[bad]] = False
        active[idx[done]] = False
    converged = ~active & ~diverged
    return x, converged, diverged


def _pair_dist(a: np.ndarray, b: np.ndarray, wrapped: bool) -> float:
    d = a - b
    if wrapped:
        d = wrap_angle(d)
    return float(np.linalg.norm(d))


def enumerate_equilibria(spec: GameSpec, theta, alpha, grid_density: int,
                         step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL,
                         max_iters: int = 20_000,
                         merge_radius: float = MERGE_RADIUS):
    """Run the solver from a grid of starts and cluster the endpoints.

    Returns (reports, basin_labels, starts, ends) where ``basin_labels`` maps
    each grid start to the index of its equilibrium cluster (-1 when the
    start failed to converge).
    """
    if grid_density < 2:
        raise DimensionMismatch("grid_density must be >= 2 per dimension")
    axes = []
    for i in range(spec.n):
        lo, hi = spec.domain_box[i]
        if spec.wrap_angles:
            axes.append(np.linspace(lo, hi, grid_density, endpoint=False))
        else:
            axes.append(np.linspace(lo, hi, grid_density))
    mesh = np.meshgrid(*axes, indexing="ij")
    starts = np.stack([m.ravel() for m in mesh], axis=-1)
    ends, converged, _ = _batch_descend(spec, theta, alpha, starts, step, tol,
                                        max_iters)
    centers: List[np.ndarray] = []
    labels = -np.ones(len(starts), dtype=int)
    for k in np.flatnonzero(converged):
        for c, ctr in enumerate(centers):
            if _pair_dist(ends[k], ctr, spec.wrap_angles) <= merge_radius:
                labels[k] = c
                break
        else:
            centers.append(ends[k].copy())
            labels[k] = len(centers) - 1
    reports = []
    for c, ctr in enumerate(centers):
        rep = classify_point(spec, theta, alpha, ctr, tol=tol)
        rep.basin_label = c
        rep.basin_size = int(np.sum(labels == c))
        reports.append(rep)
    return reports, labels, starts, ends


def write_basin_csv(path, spec: GameSpec, reports, labels, starts, ends):
    """Persist grid starts, basin labels, endpoints, and stability flags."""
    stable_by_label = {r.basin_label: int(r.is_stable) for r in reports}
    n = spec.n
    header = [f"start_x{i+1}" for i in range(n)] + ["basin_label"] \
        + [f"end_x{i+1}" for i in range(n)] + ["stable"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for s, lab, e in zip(starts, labels, ends):
            stable = stable_by_label.get(int(lab), 0)
            wr.writerow([f"{v:.10g}" for v in s] + [int(lab)]
                        + [f"{v:.10g}" for v in e] + [stable])
