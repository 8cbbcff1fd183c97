"""Learner tests: observations, admissible sets, prox-mapping, the key lemma."""

import numpy as np
import pytest
from scipy.optimize import minimize

from aidlab.errors import HypothesisViolated, InfeasibleSet
from aidlab.experiments import oscillator_spec
from aidlab.game import solve_equilibrium, zero_alpha
from aidlab.learner import (AdmissibleSet, ProxOperator,
                            append_second_order_constraint, build_observation,
                            constant_eta, loss_and_gradient, pe_min_eig,
                            prox_update, stability_constant,
                            verify_prox_inequality)


def test_nash_observation_nominal_game():
    spec = oscillator_spec()
    alpha = zero_alpha(spec)
    rep = solve_equilibrium(spec, spec.true_theta, alpha, np.array([1.0, -1.0]),
                            tol=1e-9)
    rec = build_observation("nash", spec, rep.point, alpha)
    for i in range(2):
        assert rec.y[i] == 0.0
        assert np.allclose(rec.xi[i], spec.nominal[i].grad(rep.point, i))
        # First-order condition: y = <xi, theta*> up to solver tolerance.
        assert abs(rec.y[i] - rec.xi[i] @ spec.true_theta[i]) <= 1e-6


def test_myopic_observation_zero_incentive():
    spec = oscillator_spec()
    x_curr = np.array([0.3, -0.2])
    x_next = np.array([0.1, 0.4])
    rec = build_observation("myopic", spec, x_next, zero_alpha(spec),
                            x_curr=x_curr)
    assert np.allclose(rec.y, x_next)
    for i in range(2):
        assert np.allclose(rec.xi[i], spec.nominal[i].eval(x_curr))


def test_loss_examples():
    spec = oscillator_spec()
    alpha = zero_alpha(spec)
    rep = solve_equilibrium(spec, spec.true_theta, alpha, np.array([1.0, -1.0]),
                            tol=1e-11)
    rec = build_observation("nash", spec, rep.point, alpha)
    loss, grad = loss_and_gradient(rec, 0, spec.true_theta[0])
    assert loss <= 1e-12
    assert np.all(np.abs(grad) <= 1e-6)


def test_loss_hand_case():
    spec = oscillator_spec()
    rec = build_observation("myopic", spec, np.array([2.0, 0.0]),
                            zero_alpha(spec), x_curr=np.array([0.0, 0.0]))
    # Player 1: xi = Phi((0,0)) = (-1, 1); pick theta so <xi,theta> = 0.
    loss, grad = loss_and_gradient(rec, 0, np.array([1.0, 1.0]))
    assert loss == pytest.approx(0.5 * 2.0 ** 2)
    assert np.allclose(grad, -rec.xi[0] * 2.0)


def test_loss_gradient_matches_fd():
    spec = oscillator_spec()
    rng = np.random.default_rng(31)
    rec = build_observation("myopic", spec, rng.uniform(-1, 1, 2),
                            zero_alpha(spec), x_curr=rng.uniform(-1, 1, 2))
    th = rng.uniform(0.3, 2.0, 2)
    _, grad = loss_and_gradient(rec, 0, th)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        lp, _ = loss_and_gradient(rec, 0, th + e)
        lm, _ = loss_and_gradient(rec, 0, th - e)
        assert (lp - lm) / (2 * h) == pytest.approx(grad[j], abs=1e-6)


def test_second_order_constraints_nested_and_true_feasible():
    spec = oscillator_spec()
    alpha = zero_alpha(spec)
    aset = AdmissibleSet(box=spec.theta_box[0], mode="accumulating")
    rng = np.random.default_rng(37)
    sets = [aset]
    x = np.array([1.0, -1.0])
    for _ in range(20):
        rep = solve_equilibrium(spec, spec.true_theta, alpha, x, tol=1e-10)
        aset = append_second_order_constraint(aset, spec, rep.point, alpha, 0)
        sets.append(aset)
        x = rng.uniform(-np.pi, np.pi, 2)
        # True parameters stay feasible: observations are true equilibria.
        assert aset.feasible(spec.true_theta[0], tol=1e-8)
    # Nestedness on sampled parameters: feasible later implies feasible earlier.
    for _ in range(200):
        th = rng.uniform(0.25, 2.25, 2)
        for early, late in zip(sets[:-1], sets[1:]):
            if late.feasible(th):
                assert early.feasible(th)


def test_duplicate_halfspace_idempotent():
    aset = AdmissibleSet(box=np.array([[-10.0, 10.0]] * 2))
    a = np.array([1.0, 1.0])
    s1 = aset.append_halfspace(a, 1.0)
    s2 = s1.append_halfspace(a, 1.0)
    rng = np.random.default_rng(41)
    for _ in range(100):
        th = rng.uniform(-10, 10, 2)
        assert s1.feasible(th) == s2.feasible(th)
    assert len(s2.halfspaces) == 1


def test_prox_unconstrained_interior():
    prox = ProxOperator("euclidean")
    aset = AdmissibleSet(box=np.array([[-10.0, 10.0]] * 2))
    theta = np.array([0.2, -0.3])
    g = np.array([0.5, 0.1])
    assert np.allclose(prox_update(prox, aset, theta, g), theta - g)


def test_prox_box_clamp():
    prox = ProxOperator("euclidean")
    aset = AdmissibleSet(box=np.array([[0.0, 1.0]]))
    out = prox_update(prox, aset, np.array([0.5]), np.array([1.0]))
    assert out == pytest.approx([0.0])


def test_prox_halfspace_projection():
    prox = ProxOperator("euclidean")
    aset = AdmissibleSet(box=np.array([[-10.0, 10.0]] * 2)) \
        .append_halfspace(np.array([1.0, 1.0]), 1.0)
    out = prox_update(prox, aset, np.array([0.0, 0.0]), np.zeros(2))
    assert np.allclose(out, [0.5, 0.5], atol=1e-9)


def scipy_prox_oracle(theta, g, aset, weights):
    """Reference solution of the prox problem by SLSQP."""
    d = weights

    def obj(u):
        return g @ (u - theta) + 0.5 * (u - theta) @ (d * (u - theta))

    cons = []
    A, b = aset.rows()
    for r in range(len(b)):
        cons.append({"type": "ineq",
                     "fun": lambda u, r=r: A[r] @ u - b[r]})
    bounds = list(zip(aset.box[:, 0], aset.box[:, 1]))
    res = minimize(obj, np.clip(theta, aset.box[:, 0], aset.box[:, 1]),
                   bounds=bounds, constraints=cons, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 500})
    return res.x


@pytest.mark.parametrize("kind,weights", [
    ("euclidean", np.ones(3)),
    ("diagonal-quadratic", np.array([0.5, 2.0, 1.3])),
])
def test_prox_matches_scipy_oracle(kind, weights):
    rng = np.random.default_rng(43)
    prox = ProxOperator(kind, weights if kind != "euclidean" else None)
    for _ in range(25):
        box = np.stack([-rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 3)], axis=1)
        aset = AdmissibleSet(box=box)
        for _ in range(rng.integers(0, 3)):
            a = rng.standard_normal(3)
            b = float(rng.uniform(-1.5, 0.4))
            aset = aset.append_halfspace(a, b)
        theta = prox.project(rng.uniform(-1, 1, 3), aset)
        g = rng.standard_normal(3)
        mine = prox.prox(theta, g, aset)
        ref = scipy_prox_oracle(theta, g, aset, weights)
        assert np.allclose(mine, ref, atol=5e-6)


def test_prox_inequality_zero_gradient():
    prox = ProxOperator("euclidean")
    aset = AdmissibleSet(box=np.array([[-1.0, 1.0]] * 2))
    ok, slack = verify_prox_inequality(prox, aset, aset, np.array([0.3, 0.3]),
                                       np.array([-0.5, 0.7]), np.zeros(2))
    assert ok and slack >= 0.0


def random_nested_sets(rng, m):
    box = np.stack([-rng.uniform(1, 3, m), rng.uniform(1, 3, m)], axis=1)
    base = AdmissibleSet(box=box)
    theta_star = rng.uniform(box[:, 0], box[:, 1]) * 0.5
    cuts = []
    set_k = base
    for _ in range(rng.integers(0, 4)):
        a = rng.standard_normal(m)
        # Keep theta_star strictly feasible for every cut.
        b = float(a @ theta_star - rng.uniform(0.05, 1.0))
        set_k = set_k.append_halfspace(a, b)
        cuts.append((a, b))
    set_k1 = set_k
    for _ in range(rng.integers(0, 3)):
        a = rng.standard_normal(m)
        b = float(a @ theta_star - rng.uniform(0.05, 1.0))
        set_k1 = set_k1.append_halfspace(a, b)
    return set_k, set_k1, theta_star


def test_prox_inequality_randomized():
    rng = np.random.default_rng(47)
    for _ in range(300):
        m = int(rng.integers(1, 4))
        set_k, set_k1, theta_star = random_nested_sets(rng, m)
        if rng.uniform() < 0.5:
            prox = ProxOperator("euclidean")
        else:
            prox = ProxOperator("diagonal-quadratic", rng.uniform(0.3, 3.0, m))
        theta_hat = prox.project(rng.uniform(set_k.box[:, 0], set_k.box[:, 1]),
                                 set_k)
        g = rng.standard_normal(m) * rng.uniform(0.1, 3.0)
        ok, slack = verify_prox_inequality(prox, set_k, set_k1, theta_star,
                                           theta_hat, g)
        assert ok, f"slack={slack}"


def test_prox_inequality_hypothesis_guard():
    prox = ProxOperator("euclidean")
    aset = AdmissibleSet(box=np.array([[-1.0, 1.0]]))
    outside = np.array([2.0])
    with pytest.raises(HypothesisViolated):
        verify_prox_inequality(prox, aset, aset, outside, np.array([0.0]),
                               np.array([0.1]))


def test_infeasible_intersection_detected():
    prox = ProxOperator("euclidean")
    aset = AdmissibleSet(box=np.array([[0.0, 1.0]])) \
        .append_halfspace(np.array([-1.0]), 1.0)  # theta <= -1: empty
    with pytest.raises(InfeasibleSet):
        prox.project(np.array([0.5]), aset)


def test_stability_and_pe_helpers():
    xis = [np.array([1.0, 0.0]), np.array([0.0, 2.0])]
    assert stability_constant(xis) == pytest.approx(4.0)
    assert pe_min_eig(xis) == pytest.approx(0.5)
    eta, margin = constant_eta(4.0, 1.0)
    assert eta == pytest.approx(0.25)
    assert margin == pytest.approx(0.125)


def test_prox_inequality_equality_tight_unconstrained():
    """Euclidean, no constraints, interior step: both sides match exactly."""
    prox = ProxOperator("euclidean")
    aset = AdmissibleSet(box=np.array([[-100.0, 100.0]] * 3))
    rng = np.random.default_rng(53)
    for _ in range(50):
        theta_star = rng.uniform(-1, 1, 3)
        theta_hat = rng.uniform(-1, 1, 3)
        g = rng.standard_normal(3)
        ok, slack = verify_prox_inequality(prox, aset, aset, theta_star,
                                           theta_hat, g)
        assert ok
        assert abs(slack) <= 1e-12
