"""End-to-end adaptive incentive loop, traces, and convergence diagnostics.

One iteration: issue incentives, receive the agents' response, extract the
(y, xi) observation, shrink the admissible set (equilibrium play), take a
prox step on the squared prediction error, and synthesize the next incentive
parameters.  Everything observable is recorded so the convergence statements
(monotone Bregman distance, vanishing prediction residual, exponential rate
under excitation, noise-floor mean square error, tracking of the desired
point) can be checked numerically after the fact.
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .designer import DesignProblem, design
from .errors import (AidLabError, DimensionMismatch, InfeasibleMargin,
                     InfeasibleStability, NonConvergence, RankDeficient,
                     SingularJacobian)
from .game import (GameSpec, omega_jacobian, solve_equilibrium, wrap_angle,
                   zero_alpha)
from .learner import (AdmissibleSet, ProxOperator, append_second_order_constraint,
                      build_observation, loss_and_gradient, prox_update)
from .responses import (CoordinatorArchitecture, ExogenousSignal, MyopicWorld,
                        NoiseModel, respond_nash)

CS_PROBE_MARGIN = 1.5


@dataclass
class RunConfig:
    """Everything one adaptive run needs; see README for the config file map."""

    mode: str                      # 'nash' | 'myopic'
    spec: GameSpec
    x_d: np.ndarray
    v_d: np.ndarray
    iterations: int
    designer: str = "p1"           # 'p1' | 'p2' | 'myopic'
    x0: Optional[np.ndarray] = None
    eps_margin: float = 1e-3
    lam_reg: float = 0.0
    prox_kind: str = "euclidean"
    prox_weights: Optional[Sequence[np.ndarray]] = None
    eta_schedule: str = "constant"  # 'constant' | 'decay'
    eta0: Optional[float] = None
    c_s_override: Optional[float] = None
    seed: int = 0
    sigma2: float = 0.0
    tau_signal: Optional[ExogenousSignal] = None
    world: Optional[MyopicWorld] = None
    arch: Optional[CoordinatorArchitecture] = None
    theta0: object = "box-center"  # 'box-center' | 'true' | explicit list
    alpha0: str = "zeros"          # 'zeros' | 'design'
    design_fallback: bool = True
    solver_step: float = 0.05
    solver_tol: float = 1e-10
    solver_max_iters: int = 200_000
    pe_window: Optional[int] = None
    record_components: bool = False
    pin_value: bool = True

    def __post_init__(self):
        if self.mode not in ("nash", "myopic"):
            raise DimensionMismatch(f"unknown run mode {self.mode!r}")
        if self.mode == "myopic" and (self.world is None):
            raise DimensionMismatch("myopic runs need a world")
        if self.mode == "nash" and self.designer not in ("p1", "p2"):
            raise DimensionMismatch("nash runs use the p1 or p2 designer")
        if self.mode == "myopic" and self.designer != "myopic":
            raise DimensionMismatch("myopic runs use the myopic designer")
        self.x_d = np.asarray(self.x_d, dtype=float)
        self.v_d = np.asarray(self.v_d, dtype=float)
        if self.x0 is None:
            self.x0 = 0.5 * (self.spec.domain_box[:, 0] + self.spec.domain_box[:, 1])
        self.x0 = np.asarray(self.x0, dtype=float)


@dataclass
class RunTrace:
    """Per-iteration record of one run plus run-level metadata."""

    config: RunConfig
    k: np.ndarray
    x: np.ndarray                  # (K, n) responses
    xd_err: np.ndarray
    v_err: np.ndarray
    loss: np.ndarray               # (K, n)
    theta_err: np.ndarray          # (K, n), NaN when truth unknown
    V: np.ndarray                  # (K, n) post-update Bregman distances
    xi_sq: np.ndarray              # (K, n)
    pe_min_eig: np.ndarray         # (K,) min over players of windowed min-eig
    pe_by_player: np.ndarray       # (K, n)
    design_residual: np.ndarray
    design_slack: np.ndarray
    design_rank_sv: np.ndarray
    pred_err: np.ndarray           # (K, n) y - <xi, theta_hat_pre>
    eta: np.ndarray
    alpha: List[Tuple[np.ndarray, ...]]
    theta_hat: List[Tuple[np.ndarray, ...]]
    xi: List[Tuple[np.ndarray, ...]]
    w_true: np.ndarray             # (K, n) zeros when noise-free
    x_hat: Optional[np.ndarray]    # (K, n) planner response estimates (myopic)
    components: Optional[np.ndarray]  # (K, n, 2) nominal/incentive estimates
    v0: np.ndarray                 # initial Bregman distances
    x_start: np.ndarray
    c_s_hat: float
    eta_margin: float
    design_failures: int
    boundary_events: int = 0
    config_echo: Optional[dict] = None

    @property
    def iterations(self) -> int:
        return len(self.k)

    def summary(self) -> dict:
        empty = self.iterations == 0
        out = {
            "iterations": int(self.iterations),
            "mode": self.config.mode,
            "designer": self.config.designer,
            "seed": int(self.config.seed),
            "final_xd_err": float("nan") if empty else float(self.xd_err[-1]),
            "final_v_err": float("nan") if empty else float(self.v_err[-1]),
            "final_theta_err": [] if empty else
                [float(t) for t in self.theta_err[-1]],
            "final_V": [] if empty else [float(v) for v in self.V[-1]],
            "c_s_hat": float(self.c_s_hat),
            "eta_margin": float(self.eta_margin),
            "design_failures": int(self.design_failures),
            "boundary_events": int(self.boundary_events),
            "final_alpha_norm": (float("nan") if empty else float(
                np.linalg.norm(np.concatenate(self.alpha[-1])))),
            "descent_violations": int(descent_violations(self)),
        }
        if self.config_echo is not None:
            out["config"] = self.config_echo
        return out

    # -- persistence --------------------------------------------------------

    def write_csv(self, path):
        n = self.config.spec.n
        header = (["k"] + [f"x_{i+1}" for i in range(n)] + ["xd_err", "v_err"]
                  + [f"loss_{i+1}" for i in range(n)]
                  + [f"theta_err_{i+1}" for i in range(n)]
                  + [f"V_{i+1}" for i in range(n)]
                  + [f"xi_sq_{i+1}" for i in range(n)]
                  + ["pe_min_eig", "design_residual", "design_slack"])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for t in range(self.iterations):
                row = ([int(self.k[t])] + list(self.x[t])
                       + [self.xd_err[t], self.v_err[t]]
                       + list(self.loss[t]) + list(self.theta_err[t])
                       + list(self.V[t]) + list(self.xi_sq[t])
                       + [self.pe_min_eig[t], self.design_residual[t],
                          self.design_slack[t]])
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    def write_learner_csv(self, path):
        n = self.config.spec.n
        with open(path, "w") as fh:
            fh.write("k,player,loss,V_k,theta_err,xi_norm_sq,pe_window_min_eig\n")
            for t in range(self.iterations):
                for i in range(n):
                    fh.write(",".join(_fmt(v) for v in (
                        int(self.k[t]), i + 1, self.loss[t, i], self.V[t, i],
                        self.theta_err[t, i], self.xi_sq[t, i],
                        self.pe_by_player[t, i])) + "\n")

    def write_design_csv(self, path):
        n = self.config.spec.n
        s = max(st.dimension for st in self.config.spec.incentive)
        cols = ",".join(f"alpha_{j+1}" for j in range(s))
        with open(path, "w") as fh:
            fh.write(f"k,player,residual,slack,rank_sv_min,{cols}\n")
            for t in range(self.iterations):
                for i in range(n):
                    a = list(self.alpha[t][i]) + [np.nan] * (s - len(self.alpha[t][i]))
                    fh.write(",".join(_fmt(v) for v in (
                        [int(self.k[t]), i + 1, self.design_residual[t],
                         self.design_slack[t], self.design_rank_sv[t]] + a))
                        + "\n")

    def write_components_csv(self, path):
        if self.components is None:
            raise AidLabError("components were not recorded for this run")
        with open(path, "w") as fh:
            fh.write("k,player,nominal_est,incentive_est,xhat,x_actual\n")
            for t in range(self.iterations):
                for i in range(self.config.spec.n):
                    xh = self.x_hat[t, i] if self.x_hat is not None else np.nan
                    fh.write(",".join(_fmt(v) for v in (
                        int(self.k[t]), i + 1, self.components[t, i, 0],
                        self.components[t, i, 1], xh, self.x[t, i])) + "\n")

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_trace_csv(path) -> dict:
    """Load a trace CSV back into column arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: np.array([float(r[j]) for r in rows])
            for j, name in enumerate(header)}
    return cols


def check_summary_against_rows(summary: dict, cols: dict,
                               atol: float = 1e-12) -> bool:
    """Summary statistics must be recomputable from the persisted rows."""
    if int(summary["iterations"]) != len(cols["k"]):
        return False
    if len(cols["k"]) == 0:
        return True
    if abs(summary["final_xd_err"] - cols["xd_err"][-1]) > atol:
        return False
    if abs(summary["final_v_err"] - cols["v_err"][-1]) > atol:
        return False
    for i, v in enumerate(summary["final_V"]):
        if not (np.isnan(v) and np.isnan(cols[f"V_{i+1}"][-1])) \
                and abs(v - cols[f"V_{i+1}"][-1]) > atol:
            return False
    return True


def _dist(a, b, wrapped: bool) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if wrapped:
        d = wrap_angle(d)
    return float(np.linalg.norm(d))


def _certified_cs(spec: GameSpec) -> float:
    """Gradient-regressor bound from the per-basis Lipschitz constants."""
    return max(float(np.sum(spec.nominal[i].lipschitz_bounds() ** 2))
               for i in range(spec.n))


def _probe_cs(spec: GameSpec, points) -> float:
    best = 0.0
    for x in points:
        for i in range(spec.n):
            val = float(np.sum(spec.nominal[i].eval(x) ** 2))
            best = max(best, val)
    return best * CS_PROBE_MARGIN


def run(config: RunConfig, config_echo: Optional[dict] = None) -> RunTrace:
    """Execute the adaptive loop for ``config.iterations`` steps."""
    spec = config.spec
    n = spec.n
    wrapped = spec.wrap_angles

    # Learner state.
    if config.prox_kind == "euclidean":
        proxes = [ProxOperator("euclidean") for _ in range(n)]
    else:
        if config.prox_weights is None:
            raise DimensionMismatch("diagonal prox needs weights")
        proxes = [ProxOperator("diagonal-quadratic", np.asarray(w, dtype=float))
                  for w in config.prox_weights]
    set_mode = "accumulating" if config.mode == "nash" else "static"
    sets = [AdmissibleSet(box=spec.theta_box[i], mode=set_mode) for i in range(n)]
    if config.theta0 == "box-center":
        theta_hat = [spec.theta_center(i) for i in range(n)]
    elif config.theta0 == "true":
        if spec.true_theta is None:
            raise DimensionMismatch("theta0='true' needs true parameters")
        theta_hat = [t.copy() for t in spec.true_theta]
    else:
        theta_hat = [np.asarray(t, dtype=float).copy() for t in config.theta0]

    noise = NoiseModel(kind="gaussian-iid" if config.sigma2 > 0 else "none",
                       sigma2=config.sigma2, seed=config.seed, n_players=n)
    tau_sig = config.tau_signal or ExogenousSignal(kind="none", seed=config.seed)
    tau_mean = tau_sig.mean if tau_sig.kind != "none" else 0.0
    arch = config.arch or CoordinatorArchitecture(kind="plain")

    # Initial observed response.
    if config.mode == "nash":
        x_prev = respond_nash(spec, zero_alpha(spec), config.x0,
                              step=config.solver_step, tol=config.solver_tol,
                              max_iters=config.solver_max_iters)
    else:
        x_prev = config.x0.copy()
        if config.world.update == "gradient-play":
            config.world.contraction_check(spec, config.x_d, tau_mean)
    history: List[np.ndarray] = [x_prev]

    # Step size.
    nu = min(p.nu for p in proxes)
    if config.c_s_override is not None:
        c_s_hat = float(config.c_s_override)
    elif config.mode == "nash":
        c_s_hat = _certified_cs(spec)
    else:
        c_s_hat = _probe_cs(spec, [config.x0, config.x_d])
    if config.eta_schedule == "constant":
        eta_const = config.eta0 if config.eta0 is not None else nu / c_s_hat
        eta_margin = eta_const - eta_const ** 2 * c_s_hat / (2.0 * nu)
        if eta_margin <= 0:
            warnings.warn("constant step fails eta - eta^2 c_s/(2 nu) > 0",
                          stacklevel=2)
    elif config.eta_schedule == "decay":
        eta_const = config.eta0 if config.eta0 is not None else nu / c_s_hat
        eta_margin = eta_const - eta_const ** 2 * c_s_hat / (2.0 * nu)
        # Square-summability surrogate: the tail of sum eta_k^2 beyond the
        # horizon must already be negligible.
        tail = eta_const ** 2 / max(config.iterations, 1)
        if tail > 1e-4:
            warnings.warn(
                f"decay horizon too short for the step-square tail "
                f"({tail:.2e} > 1e-4)", stacklevel=2)
    else:
        raise DimensionMismatch(f"unknown eta schedule {config.eta_schedule!r}")

    v0 = np.array([proxes[i].bregman(theta_hat[i], spec.true_theta[i])
                   if spec.true_theta is not None else np.nan for i in range(n)])

    # Initial incentive parameters.
    if config.alpha0 == "design":
        problem = _make_problem(config, theta_hat, x_prev, arch, tau_mean, n)
        alpha_k = design(spec, problem).alpha
    else:
        alpha_k = zero_alpha(spec)

    window = config.pe_window or 5 * max(st.dimension for st in spec.nominal)
    xi_windows = [deque(maxlen=window) for _ in range(n)]

    rows = {name: [] for name in
            ("k", "x", "xd_err", "v_err", "loss", "theta_err", "V", "xi_sq",
             "pe_min", "pe_player", "resid", "slack", "rank", "pred", "eta",
             "w", "xhat", "comp")}
    alphas_rec: List[Tuple[np.ndarray, ...]] = []
    thetas_rec: List[Tuple[np.ndarray, ...]] = []
    xis_rec: List[Tuple[np.ndarray, ...]] = []
    design_failures = 0
    boundary_events = 0
    last_result = None

    for k in range(config.iterations):
        # Agents respond to the issued incentives.
        if config.mode == "nash":
            x_next = respond_nash(spec, alpha_k, x_prev, step=config.solver_step,
                                  tol=config.solver_tol,
                                  max_iters=config.solver_max_iters)
            w = noise.draw() if noise.active else None
            rec = build_observation("nash", spec, x_next, alpha_k, k=k, w=w)
            for i in range(n):
                sets[i] = append_second_order_constraint(sets[i], spec, x_next,
                                                         alpha_k, i)
            x_hat = None
            comp = None
        else:
            tau_k = tau_sig.draw()
            w = noise.draw() if noise.active else None
            w_resp = arch.gains(n) * w if w is not None else None
            x_hat = arch.predict(spec, theta_hat, x_prev, alpha_k, tau_k)
            x_next, br_flags = config.world.respond(spec, history, alpha_k,
                                                    tau_k, w_resp)
            boundary_events += int(np.sum(br_flags))
            rec = build_observation("myopic", spec, x_next, alpha_k,
                                    x_curr=x_prev, k=k, w=w,
                                    offsets=arch.offsets(x_prev, tau_k, n),
                                    gains=arch.gains(n))
            if config.record_components:
                comp = np.array([
                    [spec.nominal[i].eval(x_prev) @ theta_hat[i],
                     spec.incentive[i].eval(x_prev) @ alpha_k[i]]
                    for i in range(n)])
            else:
                comp = None
        history.append(x_next)

        # Parameter update.
        eta_k = eta_const if config.eta_schedule == "constant" \
            else eta_const / (k + 1.0)
        losses = np.zeros(n)
        preds = np.zeros(n)
        new_theta = []
        for i in range(n):
            loss_i, grad_i = loss_and_gradient(rec, i, theta_hat[i])
            losses[i] = loss_i
            preds[i] = rec.y[i] - rec.xi[i] @ theta_hat[i]
            new_theta.append(prox_update(proxes[i], sets[i], theta_hat[i],
                                         eta_k * grad_i))
            xi_windows[i].append(rec.xi[i])
        theta_hat = new_theta

        # Next incentives.
        problem = _make_problem(config, theta_hat, x_next, arch, tau_mean, n)
        try:
            result = design(spec, problem)
            alpha_next = result.alpha
            last_result = result
        except (RankDeficient, InfeasibleMargin, InfeasibleStability,
                NonConvergence) as exc:
            design_failures += 1
            if not config.design_fallback:
                raise AidLabError(f"design failed at iteration {k}: {exc}") from exc
            warnings.warn(f"design failed at iteration {k}; reusing incentives"
                          f" ({exc})", stacklevel=2)
            alpha_next = alpha_k
            result = last_result

        # Bookkeeping.
        pe_vals = np.array([_window_min_eig(xi_windows[i]) for i in range(n)])
        rows["k"].append(k + 1)
        rows["x"].append(x_next)
        rows["xd_err"].append(_dist(x_next, config.x_d, wrapped))
        v_now = np.array([spec.incentive[i].eval(x_next) @ alpha_next[i]
                          for i in range(n)])
        rows["v_err"].append(float(np.linalg.norm(v_now - config.v_d)))
        rows["loss"].append(losses)
        rows["theta_err"].append(np.array(
            [np.linalg.norm(theta_hat[i] - spec.true_theta[i])
             if spec.true_theta is not None else np.nan for i in range(n)]))
        rows["V"].append(np.array(
            [proxes[i].bregman(theta_hat[i], spec.true_theta[i])
             if spec.true_theta is not None else np.nan for i in range(n)]))
        rows["xi_sq"].append(np.array([float(rec.xi[i] @ rec.xi[i])
                                       for i in range(n)]))
        rows["pe_min"].append(float(np.min(pe_vals)))
        rows["pe_player"].append(pe_vals)
        rows["resid"].append(result.residual if result is not None else np.nan)
        rows["slack"].append(result.slack if result is not None else np.nan)
        rows["rank"].append(float(np.min(result.rank_certificates))
                            if result is not None else np.nan)
        rows["pred"].append(preds)
        rows["eta"].append(eta_k)
        rows["w"].append(w if w is not None else np.zeros(n))
        rows["xhat"].append(x_hat)
        rows["comp"].append(comp)
        alphas_rec.append(tuple(a.copy() for a in alpha_next))
        thetas_rec.append(tuple(t.copy() for t in theta_hat))
        xis_rec.append(rec.xi)

        alpha_k = alpha_next
        x_prev = x_next

    K = config.iterations
    has_hat = config.mode == "myopic"
    return RunTrace(
        config=config,
        k=np.array(rows["k"], dtype=int),
        x=np.array(rows["x"]).reshape(K, n),
        xd_err=np.array(rows["xd_err"]),
        v_err=np.array(rows["v_err"]),
        loss=np.array(rows["loss"]).reshape(K, n),
        theta_err=np.array(rows["theta_err"]).reshape(K, n),
        V=np.array(rows["V"]).reshape(K, n),
        xi_sq=np.array(rows["xi_sq"]).reshape(K, n),
        pe_min_eig=np.array(rows["pe_min"]),
        pe_by_player=np.array(rows["pe_player"]).reshape(K, n),
        design_residual=np.array(rows["resid"]),
        design_slack=np.array(rows["slack"]),
        design_rank_sv=np.array(rows["rank"]),
        pred_err=np.array(rows["pred"]).reshape(K, n),
        eta=np.array(rows["eta"]),
        alpha=alphas_rec,
        theta_hat=thetas_rec,
        xi=xis_rec,
        w_true=np.array(rows["w"]).reshape(K, n),
        x_hat=np.array(rows["xhat"]).reshape(K, n) if has_hat else None,
        components=(np.array([c for c in rows["comp"]]).reshape(K, n, 2)
                    if config.record_components and has_hat else None),
        v0=v0,
        x_start=history[0],
        c_s_hat=c_s_hat,
        eta_margin=eta_margin,
        design_failures=design_failures,
        boundary_events=boundary_events,
        config_echo=config_echo,
    )


def _make_problem(config: RunConfig, theta_hat, x_curr, arch, tau_mean, n):
    if config.mode == "nash":
        mode = "nash-p1" if config.designer == "p1" else "nash-p2"
        return DesignProblem(mode=mode, x_d=config.x_d, v_d=config.v_d,
                             theta_hat=tuple(theta_hat),
                             eps_margin=config.eps_margin,
                             lam_reg=config.lam_reg)
    return DesignProblem(mode="myopic", x_d=config.x_d, v_d=config.v_d,
                         theta_hat=tuple(theta_hat),
                         eps_margin=config.eps_margin, lam_reg=config.lam_reg,
                         x_curr=np.asarray(x_curr, dtype=float),
                         offsets=arch.offsets(x_curr, tau_mean, n),
                         gains=arch.gains(n), pin_value=config.pin_value)


def _window_min_eig(window) -> float:
    xs = np.stack(window)
    gram = xs.T @ xs / len(xs)
    if gram.shape == (1, 1):
        return float(gram[0, 0])
    return float(np.linalg.eigvalsh(gram)[0])


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def descent_violations(trace: RunTrace, slack: float = 1e-14) -> int:
    """Count V_{k+1} > V_k events (with a tiny numerical allowance)."""
    if np.any(np.isnan(trace.V)):
        return 0
    V = np.vstack([trace.v0, trace.V])
    diffs = np.diff(V, axis=0)
    tol = slack * (1.0 + V[:-1])
    return int(np.sum(diffs > tol))


@dataclass
class DiagnosticsReport:
    c_s_hat: float
    c_s_realized: float
    c_s_exceeded: bool
    c_p_per_step: np.ndarray
    c_p_windowed: np.ndarray
    eta_margin: float
    eta_hypothesis_ok: Optional[bool]
    descent_violations: int
    structured_descent_violations: Optional[int]
    windowed_contraction_violations: Optional[int]
    fit_slope: Optional[float]
    fit_r2: Optional[float]
    mse_running: Optional[np.ndarray]
    mse_final_quarter: Optional[float]
    sigma2: float
    r_condition_fraction: Optional[float]

    def as_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}


def diagnostics(trace: RunTrace, r_k1: Optional[float] = None,
                r_k2: Optional[float] = None, r_t: int = 10) -> DiagnosticsReport:
    """Post-run convergence diagnostics.

    Computes realized stability/excitation constants, per-step descent
    violations (plain and with the step-margin structure), a log-linear decay
    fit of the Bregman distance over the excitation-active segment, the
    running average of squared prediction residuals (vs sigma^2 for noisy
    runs), and, when ``r_k1``/``r_k2`` are supplied, the empirical fraction
    of iterations satisfying the reciprocal-step growth condition.
    """
    K, n = trace.loss.shape
    if K == 0:
        return DiagnosticsReport(
            c_s_hat=trace.c_s_hat, c_s_realized=float("nan"),
            c_s_exceeded=False, c_p_per_step=np.zeros(n),
            c_p_windowed=np.zeros(n), eta_margin=trace.eta_margin,
            eta_hypothesis_ok=None, descent_violations=0,
            structured_descent_violations=None,
            windowed_contraction_violations=None, fit_slope=None, fit_r2=None,
            mse_running=None, mse_final_quarter=None,
            sigma2=trace.config.sigma2, r_condition_fraction=None)
    c_s_real = float(np.max(trace.xi_sq))
    # The literal per-step excitation constant is meaningful only for
    # one-dimensional regressors (a rank-one outer product cannot dominate
    # the identity otherwise); report 0 in higher dimensions.
    per_step = np.array([
        min(float(trace.xi[t][i] @ trace.xi[t][i]) for t in range(K))
        if len(trace.xi[0][i]) == 1 else 0.0
        for i in range(n)])
    windowed = np.array([float(np.nanmin(trace.pe_by_player[:, i]))
                         for i in range(n)])
    noise_free = trace.config.sigma2 == 0.0
    dv = descent_violations(trace)

    structured = None
    if noise_free and trace.config.eta_schedule == "constant" \
            and not np.any(np.isnan(trace.V)):
        eps_hat = trace.eta_margin
        structured = 0
        for t in range(K):
            for i in range(n):
                lhs = trace.V[t, i]
                prev = trace.v0[i] if t == 0 else trace.V[t - 1, i]
                drop = eps_hat * float(
                    (trace.xi[t][i] @ (_theta_prev(trace, t, i)
                                       - trace.config.spec.true_theta[i])) ** 2)
                if lhs > prev - drop + 1e-12 * (1.0 + prev):
                    structured += 1

    # Windowed-excitation contraction: over any window [k, k+W) whose Gram
    # minimum eigenvalue is positive, the Bregman distance must contract by
    # at least the corresponding factor.
    windowed_viol = None
    if noise_free and trace.config.eta_schedule == "constant" \
            and not np.any(np.isnan(trace.V)):
        eps_hat = trace.eta_margin
        W = trace.config.pe_window or 5 * max(
            st.dimension for st in trace.config.spec.nominal)
        windowed_viol = 0
        V = np.vstack([trace.v0, trace.V])
        for i in range(n):
            for k in range(K - W + 1):
                cp = pe_min_eig_window = None
                gram = np.zeros((len(trace.xi[0][i]),) * 2)
                for t in range(k, k + W):
                    gram += np.outer(trace.xi[t][i], trace.xi[t][i])
                gram /= W
                cp = float(np.linalg.eigvalsh(gram)[0]) if gram.shape[0] > 1 \
                    else float(gram[0, 0])
                if cp <= 1e-12:
                    continue
                factor = max(1.0 - 2.0 * cp * eps_hat, 0.0)
                if V[k + W, i] > factor * V[k, i] + 1e-12 * (1.0 + V[k, i]):
                    windowed_viol += 1

    # Exponential-rate fit of sum_i V over the excitation-active tail.
    fit_slope = fit_r2 = None
    if not np.any(np.isnan(trace.V)):
        total_v = np.sum(trace.V, axis=1)
        start = max(int(0.05 * K), 1)
        mask = (trace.pe_min_eig[start:] > 1e-12) & (total_v[start:] > 0)
        ks = trace.k[start:][mask]
        vs = total_v[start:][mask]
        if len(ks) >= 10:
            logs = np.log(vs)
            A = np.vstack([ks, np.ones_like(ks)]).T
            coef, res, *_ = np.linalg.lstsq(A, logs, rcond=None)
            fit_slope = float(coef[0])
            ss_tot = float(np.sum((logs - logs.mean()) ** 2))
            ss_res = float(res[0]) if len(res) else float(
                np.sum((logs - A @ coef) ** 2))
            fit_r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    mse_running = None
    mse_final = None
    sq = np.sum(trace.pred_err ** 2, axis=1) / n
    mse_running = np.cumsum(sq) / np.arange(1, K + 1)
    q = 3 * K // 4
    mse_final = float(np.mean(sq[q:])) if K - q > 0 else None

    eta_ok = None
    if trace.config.eta_schedule == "constant":
        cp = float(np.min(windowed))
        eta_ok = bool(trace.eta_margin > 0
                      and (cp <= 0 or trace.eta_margin < 1.0 / (2.0 * cp)))

    r_frac = None
    if r_k1 is not None and r_k2 is not None:
        ok = 0
        total = 0
        run_sum = np.zeros(n)
        for t in range(K):
            err = trace.pred_err[t] - trace.w_true[t]
            run_sum += err ** 2
            kk = t + 1
            if kk >= r_t:
                r_prev = 1.0 / trace.eta[t]
                bound = r_k1 + r_k2 * float(np.max(run_sum)) / kk
                total += 1
                if r_prev / kk <= bound:
                    ok += 1
        r_frac = ok / total if total else None

    return DiagnosticsReport(
        c_s_hat=trace.c_s_hat, c_s_realized=c_s_real,
        c_s_exceeded=bool(c_s_real > trace.c_s_hat),
        c_p_per_step=per_step, c_p_windowed=windowed,
        eta_margin=trace.eta_margin, eta_hypothesis_ok=eta_ok,
        descent_violations=dv, structured_descent_violations=structured,
        windowed_contraction_violations=windowed_viol,
        fit_slope=fit_slope, fit_r2=fit_r2,
        mse_running=mse_running, mse_final_quarter=mse_final,
        sigma2=trace.config.sigma2, r_condition_fraction=r_frac)


def _theta_prev(trace: RunTrace, t: int, i: int) -> np.ndarray:
    if t == 0:
        cfg = trace.config
        if cfg.theta0 == "box-center":
            return cfg.spec.theta_center(i)
        if cfg.theta0 == "true":
            return cfg.spec.true_theta[i]
        return np.asarray(cfg.theta0[i], dtype=float)
    return trace.theta_hat[t - 1][i]


# ---------------------------------------------------------------------------
# Implicit-function perturbation bound
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    M: float
    distances: np.ndarray
    bounds: np.ndarray
    all_ok: bool
    dg_center: np.ndarray


def perturbation_bound_check(spec: GameSpec, x_d, alpha_fixed, theta_center,
                             radius: float, samples: int, seed: int = 0,
                             tol_slack: float = 0.05, step: float = 0.05,
                             tol: float = 1e-10,
                             max_iters: int = 200_000) -> BoundReport:
    """Check the equilibrium displacement against the implicit-function bound.

    ``Dg = -(D_x omega)^{-1} D_theta omega`` at the desired point; M is the
    largest sampled operator norm over the parameter ball.  Each sampled
    parameter's equilibrium (continued from x_d) must satisfy
    ``dist(x*, x_d) <= M * |theta - center| * (1 + tol_slack)``.
    """
    x_d = np.asarray(x_d, dtype=float)
    theta_center = tuple(np.asarray(t, dtype=float) for t in theta_center)
    n = spec.n
    dims = [spec.nominal[i].dimension for i in range(n)]

    def dg_at(theta):
        d2 = omega_jacobian(spec, theta, alpha_fixed, x_d)
        if np.linalg.cond(d2) > 1e12:
            raise SingularJacobian("game Jacobian is singular at the desired point")
        d1 = np.zeros((n, sum(dims)))
        pos = 0
        for i in range(n):
            d1[i, pos:pos + dims[i]] = spec.nominal[i].grad(x_d, i)
            pos += dims[i]
        return -np.linalg.solve(d2, d1)

    dg_center = dg_at(theta_center)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    D = sum(dims)
    thetas = []
    for _ in range(samples):
        direction = rng.normal(size=D)
        direction /= np.linalg.norm(direction)
        r = radius * rng.uniform() ** (1.0 / D)
        flat = np.concatenate(theta_center) + r * direction
        parts = []
        pos = 0
        for d in dims:
            parts.append(flat[pos:pos + d])
            pos += d
        thetas.append(tuple(parts))

    M = float(np.linalg.norm(dg_center, 2))
    for th in thetas:
        M = max(M, float(np.linalg.norm(dg_at(th), 2)))

    distances = np.zeros(samples)
    bounds = np.zeros(samples)
    for s, th in enumerate(thetas):
        rep = solve_equilibrium(spec, th, alpha_fixed, x_d, step=step, tol=tol,
                                max_iters=max_iters)
        distances[s] = _dist(rep.point, x_d, spec.wrap_angles)
        dtheta = np.linalg.norm(np.concatenate(th) - np.concatenate(theta_center))
        bounds[s] = M * dtheta * (1.0 + tol_slack)
    return BoundReport(M=M, distances=distances, bounds=bounds,
                       all_ok=bool(np.all(distances <= bounds + 1e-12)),
                       dg_center=dg_center)
