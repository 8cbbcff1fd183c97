"""Response-model tests: noise statistics, update rules, scalar maximizer."""

import numpy as np
import pytest

from aidlab.experiments import (bertrand_true_spec, oscillator_spec,
                                quadratic_equilibrium, quadratic_spec)
from aidlab.game import zero_alpha
from aidlab.responses import (BR_BOUNDS, CoordinatorArchitecture,
                              ExogenousSignal, LinearMarginalRevenue,
                              MyopicWorld, NoiseModel,
                              NonlinearMarginalRevenue, maximize_scalar,
                              respond_best_response, respond_fictitious_play,
                              respond_gradient_play, respond_nash)

MR = LinearMarginalRevenue([[-1.2, -0.5], [0.3, -1.0]])


def test_noise_statistics():
    model = NoiseModel(kind="gaussian-iid", sigma2=0.25, seed=123, n_players=2)
    draws = np.array([model.draw() for _ in range(100_000)])
    sigma = 0.5
    for i in range(2):
        assert abs(draws[:, i].mean()) <= 4 * sigma / np.sqrt(100_000)
        assert abs(draws[:, i].var() - 0.25) <= 0.05 * 0.25
    # Streams are independent across players.
    corr = np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]
    assert abs(corr) <= 0.02


def test_noise_deterministic_per_seed():
    a = NoiseModel(kind="gaussian-iid", sigma2=1.0, seed=9, n_players=2)
    b = NoiseModel(kind="gaussian-iid", sigma2=1.0, seed=9, n_players=2)
    for _ in range(10):
        assert np.array_equal(a.draw(), b.draw())


def test_exogenous_signal_reproducible():
    a = ExogenousSignal(kind="gaussian-iid", mean=5.0, variance=0.25, seed=4)
    b = ExogenousSignal(kind="gaussian-iid", mean=5.0, variance=0.25, seed=4)
    xs = [a.draw() for _ in range(1000)]
    ys = [b.draw() for _ in range(1000)]
    assert xs == ys
    assert abs(np.mean(xs) - 5.0) <= 0.1


def test_respond_nash_nominal_and_incentivized():
    spec = oscillator_spec()
    x = respond_nash(spec, zero_alpha(spec), np.array([1.0, -1.0]))
    assert np.linalg.norm(x - np.array([1.1, -1.0])) <= 0.1
    caption = (np.array([0.16, -0.94]), np.array([0.29, -0.11]))
    x2 = respond_nash(spec, caption, np.array([0.0, 0.0]))
    assert np.linalg.norm(x2 - np.array([-1.8, 0.5])) <= 0.05


def test_respond_nash_quadratic_matches_closed_form():
    spec = quadratic_spec()
    x = respond_nash(spec, zero_alpha(spec), np.array([3.0, -3.0]), step=0.2)
    assert np.linalg.norm(x - quadratic_equilibrium(spec)) <= 1e-8


def test_gradient_play_hand_example():
    spec = bertrand_true_spec()
    x = np.array([1.0, 1.0])
    out = respond_gradient_play(x, np.array([0.1, 0.1]), MR, spec,
                                zero_alpha(spec), tau=5.0)
    # Firm 1: 1 + 0.1 * (-1.2 - 0.5 - 1.2 + 5) = 1.21
    assert out[0] == pytest.approx(1.21)


def test_gradient_play_zero_rate_and_fixed_point():
    spec = bertrand_true_spec()
    x = np.array([2.0, 3.0])
    out = respond_gradient_play(x, np.zeros(2), MR, spec, zero_alpha(spec),
                                tau=5.0)
    assert np.allclose(out, x)
    # Construct incentives cancelling the marginal revenue at x: fixed point.
    m = MR.marginal(x, 5.0)
    alpha = tuple(
        -m[i] / spec.incentive[i].eval(x)[2] * np.array([0.0, 0.0, 1.0])
        for i in range(2))
    out2 = respond_gradient_play(x, np.array([0.1, 0.1]), MR, spec, alpha, 5.0)
    assert np.allclose(out2, x, atol=1e-12)


def test_best_response_concave_quadratic_closed_form():
    spec = bertrand_true_spec()
    x = np.array([4.0, 6.0])
    tau = 5.0
    out, flags = respond_best_response(x, MR, spec, zero_alpha(spec), tau)
    for i in range(2):
        # Vertex of x_i (rows_i . x + tau): derivative 2 r_ii x_i + r_ij x_j + tau = 0.
        other = x[1 - i]
        r = MR.rows[i]
        vertex = -(r[1 - i] * other + tau) / (2 * r[i])
        assert out[i] == pytest.approx(vertex, abs=1e-6)
        assert not flags[i]
        assert abs(MR.d_revenue(i, out[i], x, tau)) <= 1e-6


def test_best_response_incentive_moves_argmax_to_target():
    spec = bertrand_true_spec()
    x = np.array([4.0, 6.0])
    tau = 5.0
    target = np.array([5.0, 7.0])
    # Cancel the revenue slope at the target with a linear-in-own-price term:
    # gamma_i = a_i * exp(-kappa x_i^2) has nonzero derivative at target.
    alpha = []
    for i in range(2):
        pt = x.copy()
        pt[i] = target[i]
        slope = MR.d_revenue(i, target[i], x, tau)
        basis_grad = spec.incentive[i].grad(pt, i)
        a = np.zeros(3)
        a[2] = -slope / basis_grad[2]
        alpha.append(a)
    out, flags = respond_best_response(x, MR, spec, tuple(alpha), tau)
    # Stationarity was cancelled at the target, and the objective stays
    # concave, so the maximizer sits at the target.
    assert np.allclose(out, target, atol=1e-5)


def test_best_response_boundary_flag():
    spec = bertrand_true_spec()
    zero_rows = LinearMarginalRevenue([[0.0, 0.0], [0.0, 0.0]])
    out, flags = respond_best_response(np.array([1.0, 1.0]), zero_rows, spec,
                                       zero_alpha(spec), tau=-5.0)
    # Revenue -5 x_i is decreasing: maximum at the lower boundary.
    assert np.all(flags)
    assert np.allclose(out, BR_BOUNDS[0], atol=1e-6)


def test_fictitious_play_reductions():
    spec = bertrand_true_spec()
    tau = 5.0
    x = np.array([4.0, 6.0])
    br, _ = respond_best_response(x, MR, spec, zero_alpha(spec), tau)
    fp, _ = respond_fictitious_play([x], MR, spec, zero_alpha(spec), tau)
    assert np.allclose(fp, br, atol=1e-9)
    fp2, _ = respond_fictitious_play([x, x, x], MR, spec, zero_alpha(spec), tau)
    assert np.allclose(fp2, br, atol=1e-9)
    a = np.array([3.0, 5.0])
    b = np.array([5.0, 7.0])
    fp3, _ = respond_fictitious_play([a, b, a, b], MR, spec, zero_alpha(spec),
                                     tau)
    mid, _ = respond_best_response(0.5 * (a + b), MR, spec, zero_alpha(spec),
                                   tau)
    assert np.allclose(fp3, mid, atol=1e-9)


def test_maximize_scalar_precision():
    f = lambda x: -(x - 2.3) ** 2
    df = lambda x: -2 * (x - 2.3)
    x, boundary, resid = maximize_scalar(f, df, 0.0, 10.0)
    assert x == pytest.approx(2.3, abs=1e-9)
    assert not boundary
    assert resid <= 1e-8


def test_nonlinear_marginal_revenue_consistency():
    nl = NonlinearMarginalRevenue([[-1.2, -0.5], [0.3, -1.0]], [7.5, 1.5])
    x = np.array([4.0, 6.0])
    m = nl.marginal(x, 5.0)
    h = 1e-6
    for i in range(2):
        up = nl.revenue(i, x[i] + h, x, 5.0)
        dn = nl.revenue(i, x[i] - h, x, 5.0)
        assert (up - dn) / (2 * h) == pytest.approx(m[i], abs=1e-5)


def test_effective_theta():
    eff = MR.effective_theta()
    assert np.allclose(eff[0], [-2.4, -0.5])
    assert np.allclose(eff[1], [0.3, -2.0])


def test_architecture_predicts_gradient_play_exactly():
    spec = bertrand_true_spec()
    zeta = np.array([0.1, 0.1])
    arch = CoordinatorArchitecture(kind="increment", zeta=zeta)
    x = np.array([3.0, 4.0])
    tau = 5.2
    alpha = zero_alpha(spec)
    pred = arch.predict(spec, spec.true_theta, x, alpha, tau)
    truth = respond_gradient_play(x, zeta, MR, spec, alpha, tau)
    assert np.allclose(pred, truth, atol=1e-12)


def test_world_determinism():
    spec = bertrand_true_spec()
    world = MyopicWorld(update="gradient-play", zeta=np.array([0.1, 0.1]),
                        revenue=MR)
    hist = [np.array([1.0, 1.0])]
    a, _ = world.respond(spec, hist, zero_alpha(spec), 5.0)
    b, _ = world.respond(spec, hist, zero_alpha(spec), 5.0)
    assert np.array_equal(a, b)


def test_gradient_play_contraction_warning():
    spec = bertrand_true_spec()
    world = MyopicWorld(update="gradient-play", zeta=np.array([0.1, 0.1]),
                        revenue=MR)
    rho = world.contraction_check(spec, np.array([5.0, 7.0]), 5.0)
    assert rho < 1.0
    wild = MyopicWorld(update="gradient-play", zeta=np.array([2.0, 2.0]),
                       revenue=MR)
    with pytest.warns(UserWarning, match="spectral radius"):
        rho2 = wild.contraction_check(spec, np.array([5.0, 7.0]), 5.0)
    assert rho2 >= 1.0
