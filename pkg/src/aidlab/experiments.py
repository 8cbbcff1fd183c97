"""Builders for the bundled experiment games.

These are the concrete instances exercised throughout the test-suite and the
shipped configs: the two-player coupled-oscillator game on the torus, a
strictly convex quadratic game with a closed-form equilibrium, and the
Bertrand price-competition setups (planner knows the linear marginal-revenue
structure, or is agnostic and models prices with radial basis functions).
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from .basis import make_basis, rbf, stack
from .game import GameSpec

OSC_THETA = (1.0, 1.05)
OSC_XD = (-1.8, 0.5)
BERTRAND_XD = (5.0, 7.0)
BERTRAND_KAPPA = 0.01
BERTRAND_THETA1 = (-1.2, -0.5)
BERTRAND_THETA2 = (0.3, -1.0)
BERTRAND_NL_THETA1 = (-1.2, -0.5, 7.5)
BERTRAND_NL_THETA2 = (0.3, -1.0, 1.5)
BERTRAND_BOX = (0.01, 50.0)


def oscillator_spec(theta: Sequence[float] = OSC_THETA,
                    x_d: Sequence[float] = OSC_XD,
                    theta_box: Tuple[float, float] = (0.25, 2.25),
                    coupling_box: Tuple[float, float] = (1.0, 1.0)) -> GameSpec:
    """Two coupled oscillators on the torus.

    Player i's cost is -theta_i cos(x_i) + cos(x_i - x_{-i}).  The coupling
    term rides along as a second basis component whose true coefficient is 1;
    its default degenerate box pins the estimate there (the coupling strength
    is common knowledge, only the self term is learned), which keeps the
    scalar regressor persistently exciting even after the responses settle.
    Incentives are sin/cos shifted to the desired phase.
    """
    n = 2
    box = np.array([[-np.pi, np.pi]] * n)
    nominal = []
    incentive = []
    for i in range(n):
        other = 1 - i
        nominal.append(stack(
            make_basis("trig-cos", n, coordinate=i),
            make_basis("trig-cos-diff", n, coordinate=i, coordinate2=other),
        ))
        incentive.append(stack(
            make_basis("trig-sin-shift", n, coordinate=i, shift=float(x_d[i])),
            make_basis("trig-cos-shift", n, coordinate=i, shift=float(x_d[i])),
        ))
    lo, hi = theta_box
    tbox = tuple(np.array([[lo, hi], list(coupling_box)]) for _ in range(n))
    true = tuple(np.array([theta[i], 1.0]) for i in range(n))
    return GameSpec(n=n, nominal=tuple(nominal), incentive=tuple(incentive),
                    theta_box=tbox, domain_box=box, true_theta=true,
                    wrap_angles=True)


def quadratic_spec(a: Sequence[float] = (2.0, 1.5),
                   b: Sequence[float] = (0.5, -0.3),
                   c: Sequence[float] = (-1.0, 0.5)) -> GameSpec:
    """Strictly convex quadratic game: f_i = a_i x_i^2 / 2 + b_i x_i x_{-i} + c_i x_i.

    The game map is affine, so the unique equilibrium solves a 2x2 linear
    system; this is the closed-form oracle used by the solver tests.
    """
    n = 2
    box = np.array([[-10.0, 10.0]] * n)
    nominal = []
    incentive = []
    for i in range(n):
        nominal.append(stack(
            make_basis("quad-coordinate", n, box=box, coordinate=i),
            make_basis("product-pair", n, box=box, coordinate=0, coordinate2=1),
            make_basis("linear-coordinate", n, box=box, coordinate=i),
        ))
        incentive.append(stack(
            make_basis("linear-coordinate", n, box=box, coordinate=i),
            make_basis("constant", n),
            make_basis("quad-coordinate", n, box=box, coordinate=i),
        ))
    tbox = tuple(np.array([[-5.0, 5.0]] * 3) for _ in range(n))
    true = tuple(np.array([a[i], b[i], c[i]]) for i in range(n))
    return GameSpec(n=n, nominal=tuple(nominal), incentive=tuple(incentive),
                    theta_box=tbox, domain_box=box, true_theta=true)


def quadratic_equilibrium(spec: GameSpec, theta=None, alpha=None) -> np.ndarray:
    """Closed-form equilibrium of the (possibly incentivized) quadratic game.

    Solves the affine system omega(x) = 0 assembled from the same coefficient
    layout as quadratic_spec (and its linear/constant/quadratic incentives).
    """
    theta = spec.true_theta if theta is None else theta
    A = np.zeros((2, 2))
    rhs = np.zeros(2)
    for i in range(2):
        a_i, b_i, c_i = np.asarray(theta[i], dtype=float)
        A[i, i] += a_i
        A[i, 1 - i] += b_i
        rhs[i] -= c_i
        if alpha is not None:
            lin, const, quad = np.asarray(alpha[i], dtype=float)
            A[i, i] += quad
            rhs[i] -= lin
            _ = const  # constant incentive term has zero gradient
    return np.linalg.solve(A, rhs)


def _bertrand_incentive(n: int, x_d: Sequence[float], kappa: float):
    stacks = []
    for i in range(n):
        e_i = np.eye(n)[i]
        stacks.append(stack(
            rbf(n, kappa, e_i, center=float(x_d[i])),
            rbf(n, kappa, e_i, center=-float(x_d[i])),
            rbf(n, kappa, e_i, center=0.0),
        ))
    return tuple(stacks)


def bertrand_true_spec(x_d: Sequence[float] = BERTRAND_XD,
                       kappa: float = BERTRAND_KAPPA,
                       theta1: Sequence[float] = BERTRAND_THETA1,
                       theta2: Sequence[float] = BERTRAND_THETA2) -> GameSpec:
    """Coordinator model when the linear marginal-revenue structure is known.

    The planner regresses price increments on Phi(x) = (x_1, x_2).  Because
    the own-price coefficient enters the marginal revenue twice, the
    effective true parameters are (2 t_{1,1}, t_{1,2}) and (t_{2,1}, 2 t_{2,2}).
    """
    n = 2
    box = np.array([list(BERTRAND_BOX)] * n)
    nominal = tuple(
        stack(make_basis("linear-coordinate", n, box=box, coordinate=0),
              make_basis("linear-coordinate", n, box=box, coordinate=1))
        for _ in range(n))
    effective = (np.array([2.0 * theta1[0], theta1[1]]),
                 np.array([theta2[0], 2.0 * theta2[1]]))
    tbox = tuple(np.array([[-5.0, 5.0]] * 2) for _ in range(n))
    return GameSpec(n=n, nominal=nominal,
                    incentive=_bertrand_incentive(n, x_d, kappa),
                    theta_box=tbox, domain_box=box, true_theta=effective)


def bertrand_agnostic_spec(x_d: Sequence[float] = BERTRAND_XD,
                           kappa: float = BERTRAND_KAPPA) -> GameSpec:
    """Coordinator model when the update rule is unknown: RBF price model."""
    n = 2
    box = np.array([list(BERTRAND_BOX)] * n)
    nominal = []
    for i in range(n):
        e_i = np.eye(n)[i]
        e_o = np.eye(n)[1 - i]
        nominal.append(stack(
            rbf(n, kappa, e_i, center=0.0),
            rbf(n, kappa, e_i - e_o, center=0.0),
            rbf(n, kappa, e_o, center=0.0),
        ))
    tbox = tuple(np.array([[-25.0, 25.0]] * 3) for _ in range(n))
    return GameSpec(n=n, nominal=tuple(nominal),
                    incentive=_bertrand_incentive(n, x_d, kappa),
                    theta_box=tbox, domain_box=box, true_theta=None)
