"""Experiment configuration: schema, validation, and RunConfig assembly.

Configs are YAML files with fixed sections (game, response, learner,
designer, run, noise, output).  Unknown keys are rejected with the offending
dotted path named.  ``load_config`` returns the resolved plain dict (all
defaults filled in), and ``build_run`` turns it into the executable pieces.
"""

from __future__ import annotations

import copy

import numpy as np
import yaml

from .basis import KINDS, make_basis, stack
from .designer import consistent_incentive_values
from .errors import ConfigError, UnknownParameter
from .experiments import (bertrand_agnostic_spec, bertrand_true_spec,
                          oscillator_spec, quadratic_spec)
from .game import GameSpec
from .loop import RunConfig
from .responses import (CoordinatorArchitecture, ExogenousSignal,
                        LinearMarginalRevenue, MyopicWorld,
                        NonlinearMarginalRevenue)

GAME_KINDS = ("oscillator", "quadratic", "bertrand-true", "bertrand-agnostic",
              "custom")
RESPONSE_MODES = ("nash", "glm", "gradient-play", "best-response",
                  "fictitious-play")

DEFAULTS = {
    "game": {
        "kind": "oscillator",
        "theta_star": [1.0, 1.05],
        "theta_box": [0.25, 2.25],
        "marginal": "linear",
        "theta1": [-1.2, -0.5],
        "theta2": [0.3, -1.0],
        "intercepts": [7.5, 1.5],
        "kappa": 0.01,
        "players": 2,
        "wrap_angles": False,
        "domain_box": None,
        "nominal": None,
        "incentive": None,
        "true_theta": None,
        "theta_box_full": None,
    },
    "response": {
        "mode": "nash",
        "zeta": [0.1, 0.1],
        "fp_window_start": 0,
        "br_bounds": [0.01, 50.0],
        "solver_step": 0.05,
        "solver_tol": 1.0e-10,
        "solver_max_iters": 200000,
    },
    "learner": {
        "prox": "euclidean",
        "prox_weights": None,
        "eta": "constant",
        "eta0": None,
        "c_s_override": None,
        "pe_window": None,
    },
    "designer": {
        "kind": "p1",
        "eps_margin": 1.0e-3,
        "lambda": 0.0,
        "pin_value": True,
        "fallback": True,
    },
    "run": {
        "iterations": 1000,
        "seed": 0,
        "x0": None,
        "x_d": [-1.8, 0.5],
        "v_d": [0.0, 0.0],
        "theta0": "box-center",
        "alpha0": "zeros",
    },
    "noise": {
        "sigma2": 0.0,
        "tau": {"kind": "none", "mean": 0.0, "variance": 0.0},
    },
    "output": {
        "dir": "runs/out",
        "components": False,
    },
}

SWEEPABLE = {
    "designer.lambda": float,
    "noise.sigma2": float,
    "learner.eta0": float,
    "response.mode": str,
    "run.seed": int,
}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        dotted = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(defaults[key], dict) and isinstance(val, dict):
            out[key] = _merge(defaults[key], val, dotted + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def validate(cfg: dict) -> dict:
    """Fill defaults, reject unknown keys, check value-level constraints."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    resolved = _merge(DEFAULTS, cfg)
    g = resolved["game"]
    _require(g["kind"] in GAME_KINDS, f"game.kind must be one of {GAME_KINDS}")
    r = resolved["response"]
    _require(r["mode"] in RESPONSE_MODES,
             f"response.mode must be one of {RESPONSE_MODES}")
    if g["kind"] == "oscillator":
        _require(r["mode"] == "nash", "the oscillator experiment is nash-play")
    if g["kind"] in ("bertrand-true", "bertrand-agnostic"):
        _require(r["mode"] != "nash",
                 "bertrand experiments use a myopic response mode")
    le = resolved["learner"]
    _require(le["prox"] in ("euclidean", "diagonal-quadratic"),
             "learner.prox must be euclidean or diagonal-quadratic")
    _require(le["eta"] in ("constant", "decay"),
             "learner.eta must be constant or decay")
    d = resolved["designer"]
    _require(d["kind"] in ("p1", "p2", "myopic"),
             "designer.kind must be p1, p2, or myopic")
    _require(d["lambda"] >= 0, "designer.lambda must be nonnegative")
    _require(d["eps_margin"] > 0, "designer.eps_margin must be positive")
    run_sec = resolved["run"]
    _require(int(run_sec["iterations"]) >= 0,
             "run.iterations must be nonnegative")
    nz = resolved["noise"]
    _require(nz["sigma2"] >= 0, "noise.sigma2 must be nonnegative")
    tau = nz["tau"]
    _require(tau.get("kind") in ("none", "gaussian-iid"),
             "noise.tau.kind must be none or gaussian-iid")
    if g["kind"] == "custom":
        for key in ("domain_box", "nominal", "incentive", "theta_box_full"):
            _require(g[key] is not None, f"custom games need game.{key}")
    return resolved


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return validate(raw)


def _custom_stack(decls, n, box):
    stacks = []
    for player_decl in decls:
        fns = []
        for item in player_decl:
            item = dict(item)
            kind = item.pop("kind", None)
            if kind not in KINDS:
                raise ConfigError(f"unknown basis kind {kind!r}")
            try:
                fns.append(make_basis(kind, n, box=box, **item))
            except TypeError as exc:
                raise ConfigError(f"bad basis declaration for {kind}: {exc}")
        stacks.append(stack(*fns))
    return tuple(stacks)


def build_spec(cfg: dict) -> GameSpec:
    g = cfg["game"]
    x_d = np.asarray(cfg["run"]["x_d"], dtype=float)
    if g["kind"] == "oscillator":
        lo, hi = g["theta_box"]
        return oscillator_spec(theta=g["theta_star"], x_d=x_d,
                               theta_box=(lo, hi))
    if g["kind"] == "quadratic":
        return quadratic_spec()
    if g["kind"] == "bertrand-true":
        return bertrand_true_spec(x_d=x_d, kappa=g["kappa"],
                                  theta1=g["theta1"], theta2=g["theta2"])
    if g["kind"] == "bertrand-agnostic":
        return bertrand_agnostic_spec(x_d=x_d, kappa=g["kappa"])
    n = int(g["players"])
    box = np.asarray(g["domain_box"], dtype=float)
    nominal = _custom_stack(g["nominal"], n, box)
    incentive = _custom_stack(g["incentive"], n, box)
    tbox = tuple(np.asarray(b, dtype=float) for b in g["theta_box_full"])
    true = None
    if g["true_theta"] is not None:
        true = tuple(np.asarray(t, dtype=float) for t in g["true_theta"])
    return GameSpec(n=n, nominal=nominal, incentive=incentive, theta_box=tbox,
                    domain_box=box, true_theta=true,
                    wrap_angles=bool(g["wrap_angles"]))


def _marginal(cfg: dict):
    g = cfg["game"]
    rows = [g["theta1"][:2], g["theta2"][:2]]
    if g["marginal"] == "nonlinear":
        inter = [g["theta1"][2] if len(g["theta1"]) > 2 else g["intercepts"][0],
                 g["theta2"][2] if len(g["theta2"]) > 2 else g["intercepts"][1]]
        return NonlinearMarginalRevenue(rows, inter)
    return LinearMarginalRevenue(rows)


def build_run(cfg: dict) -> RunConfig:
    """Assemble the executable run from a validated config dict."""
    spec = build_spec(cfg)
    g, r = cfg["game"], cfg["response"]
    le, d, rn, nz = cfg["learner"], cfg["designer"], cfg["run"], cfg["noise"]
    mode = "nash" if r["mode"] == "nash" else "myopic"
    zeta = np.asarray(r["zeta"], dtype=float)
    world = None
    arch = None
    if mode == "myopic":
        if r["mode"] == "glm":
            world = MyopicWorld(update="glm")
            arch = CoordinatorArchitecture(kind="plain")
        else:
            world = MyopicWorld(update=r["mode"], zeta=zeta,
                                revenue=_marginal(cfg),
                                bounds=tuple(r["br_bounds"]),
                                fp_window_start=int(r["fp_window_start"]))
            if g["kind"] == "bertrand-true":
                arch = CoordinatorArchitecture(kind="increment", zeta=zeta)
            else:
                arch = CoordinatorArchitecture(kind="direct-tau")
    tau_cfg = nz["tau"]
    tau_sig = None
    if tau_cfg["kind"] != "none":
        tau_sig = ExogenousSignal(kind=tau_cfg["kind"],
                                  mean=float(tau_cfg["mean"]),
                                  variance=float(tau_cfg["variance"]),
                                  seed=int(rn["seed"]))
    x_d = np.asarray(rn["x_d"], dtype=float)
    v_d = rn["v_d"]
    if isinstance(v_d, str):
        if v_d != "consistent":
            raise ConfigError("run.v_d must be a list or 'consistent'")
        if spec.true_theta is None:
            raise ConfigError("run.v_d='consistent' needs true parameters")
        tau_mean = tau_sig.mean if tau_sig is not None else 0.0
        offs = arch.offsets(x_d, tau_mean, spec.n) if arch is not None \
            else np.zeros(spec.n)
        gains = arch.gains(spec.n) if arch is not None else np.ones(spec.n)
        v_d = consistent_incentive_values(spec, spec.true_theta, x_d, offs,
                                          gains)
    v_d = np.asarray(v_d, dtype=float)
    theta0 = rn["theta0"]
    if isinstance(theta0, list):
        theta0 = [np.asarray(t, dtype=float) for t in theta0]
    prox_weights = le["prox_weights"]
    if prox_weights is not None:
        prox_weights = [np.asarray(w, dtype=float) for w in prox_weights]
    designer = d["kind"] if mode == "nash" else "myopic"
    try:
        return RunConfig(
            mode=mode, spec=spec, x_d=x_d, v_d=v_d,
            iterations=int(rn["iterations"]), designer=designer,
            x0=None if rn["x0"] is None else np.asarray(rn["x0"], dtype=float),
            eps_margin=float(d["eps_margin"]), lam_reg=float(d["lambda"]),
            prox_kind=le["prox"], prox_weights=prox_weights,
            eta_schedule=le["eta"],
            eta0=None if le["eta0"] is None else float(le["eta0"]),
            c_s_override=(None if le["c_s_override"] is None
                          else float(le["c_s_override"])),
            seed=int(rn["seed"]), sigma2=float(nz["sigma2"]),
            tau_signal=tau_sig, world=world, arch=arch, theta0=theta0,
            alpha0=rn["alpha0"], design_fallback=bool(d["fallback"]),
            solver_step=float(r["solver_step"]),
            solver_tol=float(r["solver_tol"]),
            solver_max_iters=int(r["solver_max_iters"]),
            pe_window=(None if le["pe_window"] is None
                       else int(le["pe_window"])),
            record_components=bool(cfg["output"]["components"]),
            pin_value=bool(d["pin_value"]),
        )
    except Exception as exc:
        raise ConfigError(f"config assembly failed: {exc}") from exc


def apply_override(cfg: dict, dotted: str, raw_value: str) -> dict:
    """Set a dotted config path to a YAML-parsed value, with validation."""
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    node[parts[-1]] = yaml.safe_load(raw_value)
    return validate(cfg)


def sweep_values(param: str, values):
    if param not in SWEEPABLE:
        raise UnknownParameter(
            f"{param} is not sweepable; choose from {sorted(SWEEPABLE)}")
    cast = SWEEPABLE[param]
    return [cast(v) for v in values]
