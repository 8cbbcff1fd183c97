"""Basis-function library: values, gradients, Hessians, and Lipschitz metadata.

Every scalar field used by the cost/incentive/update models is expressed as a
stack of basis functions over the joint strategy space.  All evaluators accept
a single point ``x`` of shape ``(n,)`` or a batch of points of shape
``(N, n)`` and broadcast accordingly; this is what makes grid-scale
equilibrium enumeration cheap.

Supported kinds
---------------
constant            1
linear-coordinate   x_i
quad-coordinate     x_i^2 / 2
product-pair        x_i * x_j
log-coordinate      log(x_i)            (requires x_i > 0)
trig-cos            -cos(x_i)
trig-cos-diff       cos(x_i - x_j)
trig-sin-shift      sin(x_i - shift)
trig-cos-shift      cos(x_i - shift)
gaussian-rbf        exp(-kappa * (<weights, x> - center)^2)

Derivatives are analytic; finite differences are used only as test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, DomainViolation, IndexOutOfRange

KINDS = (
    "constant",
    "linear-coordinate",
    "quad-coordinate",
    "product-pair",
    "log-coordinate",
    "trig-cos",
    "trig-cos-diff",
    "trig-sin-shift",
    "trig-cos-shift",
    "gaussian-rbf",
)

# Gradient-norm bound for log-coordinate is taken on [x_min, inf).
DEFAULT_LOG_XMIN = 0.1


@dataclass(frozen=True)
class BasisFunction:
    """One twice-differentiable scalar field on the joint strategy space.

    ``coordinate`` (and ``coordinate2`` for pair kinds) index into the joint
    strategy vector.  ``weights``/``center``/``kappa`` parameterize the
    Gaussian radial kind, where the field is
    ``exp(-kappa * (<weights, x> - center)^2)``.  ``lipschitz_bound`` is a
    bound on the gradient 2-norm over the declared domain box.
    """

    kind: str
    n: int
    coordinate: int = 0
    coordinate2: int = 0
    shift: float = 0.0
    kappa: float = 0.0
    weights: Tuple[float, ...] = ()
    center: float = 0.0
    lipschitz_bound: float = 0.0
    log_xmin: float = DEFAULT_LOG_XMIN

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DimensionMismatch(f"unknown basis kind {self.kind!r}")
        if self.n < 1:
            raise DimensionMismatch("joint dimension must be >= 1")
        needs_i = self.kind not in ("constant", "gaussian-rbf")
        if needs_i and not (0 <= self.coordinate < self.n):
            raise IndexOutOfRange(
                f"coordinate {self.coordinate} out of range for n={self.n}")
        if self.kind in ("product-pair", "trig-cos-diff"):
            if not (0 <= self.coordinate2 < self.n):
                raise IndexOutOfRange(
                    f"coordinate2 {self.coordinate2} out of range for n={self.n}")
        if self.kind == "gaussian-rbf":
            if self.kappa <= 0:
                raise DomainViolation("gaussian-rbf requires kappa > 0")
            if len(self.weights) != self.n:
                raise DimensionMismatch(
                    f"gaussian-rbf weights must have length n={self.n}")
        if self.kind == "log-coordinate" and self.log_xmin <= 0:
            raise DomainViolation("log-coordinate requires log_xmin > 0")

    # -- evaluation ---------------------------------------------------------

    def _coerce(self, x) -> Tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        batched = arr.ndim == 2
        if not batched:
            arr = arr.reshape(1, -1)
        if arr.shape[-1] != self.n:
            raise DimensionMismatch(
                f"point dimension {arr.shape[-1]} != joint dimension {self.n}")
        if self.kind == "log-coordinate":
            if np.any(arr[:, self.coordinate] <= 0.0):
                raise DomainViolation(
                    "log-coordinate basis evaluated at non-positive coordinate")
        return arr, batched

    def value(self, x):
        arr, batched = self._coerce(x)
        i, j = self.coordinate, self.coordinate2
        if self.kind == "constant":
            out = np.ones(arr.shape[0])
        elif self.kind == "linear-coordinate":
            out = arr[:, i].copy()
        elif self.kind == "quad-coordinate":
            out = 0.5 * arr[:, i] ** 2
        elif self.kind == "product-pair":
            out = arr[:, i] * arr[:, j]
        elif self.kind == "log-coordinate":
            out = np.log(arr[:, i])
        elif self.kind == "trig-cos":
            out = -np.cos(arr[:, i])
        elif self.kind == "trig-cos-diff":
            out = np.cos(arr[:, i] - arr[:, j])
        elif self.kind == "trig-sin-shift":
            out = np.sin(arr[:, i] - self.shift)
        elif self.kind == "trig-cos-shift":
            out = np.cos(arr[:, i] - self.shift)
        else:  # gaussian-rbf
            u = arr @ np.asarray(self.weights) - self.center
            out = np.exp(-self.kappa * u ** 2)
        return out if batched else float(out[0])

    def grad(self, x):
        arr, batched = self._coerce(x)
        N = arr.shape[0]
        i, j = self.coordinate, self.coordinate2
        g = np.zeros((N, self.n))
        if self.kind == "constant":
            pass
        elif self.kind == "linear-coordinate":
            g[:, i] = 1.0
        elif self.kind == "quad-coordinate":
            g[:, i] = arr[:, i]
        elif self.kind == "product-pair":
            g[:, i] += arr[:, j]
            g[:, j] += arr[:, i]
        elif self.kind == "log-coordinate":
            g[:, i] = 1.0 / arr[:, i]
        elif self.kind == "trig-cos":
            g[:, i] = np.sin(arr[:, i])
        elif self.kind == "trig-cos-diff":
            s = -np.sin(arr[:, i] - arr[:, j])
            g[:, i] += s
            g[:, j] -= s
        elif self.kind == "trig-sin-shift":
            g[:, i] = np.cos(arr[:, i] - self.shift)
        elif self.kind == "trig-cos-shift":
            g[:, i] = -np.sin(arr[:, i] - self.shift)
        else:  # gaussian-rbf
            w = np.asarray(self.weights)
            u = arr @ w - self.center
            g = (-2.0 * self.kappa * u * np.exp(-self.kappa * u ** 2))[:, None] * w
        return g if batched else g[0]

    def hess(self, x):
        arr, batched = self._coerce(x)
        N = arr.shape[0]
        i, j = self.coordinate, self.coordinate2
        H = np.zeros((N, self.n, self.n))
        if self.kind in ("constant", "linear-coordinate"):
            pass
        elif self.kind == "quad-coordinate":
            H[:, i, i] = 1.0
        elif self.kind == "product-pair":
            H[:, i, j] += 1.0
            H[:, j, i] += 1.0
        elif self.kind == "log-coordinate":
            H[:, i, i] = -1.0 / arr[:, i] ** 2
        elif self.kind == "trig-cos":
            H[:, i, i] = np.cos(arr[:, i])
        elif self.kind == "trig-cos-diff":
            c = -np.cos(arr[:, i] - arr[:, j])
            H[:, i, i] = c
            H[:, j, j] = c
            H[:, i, j] = -c
            H[:, j, i] = -c
        elif self.kind == "trig-sin-shift":
            H[:, i, i] = -np.sin(arr[:, i] - self.shift)
        elif self.kind == "trig-cos-shift":
            H[:, i, i] = -np.cos(arr[:, i] - self.shift)
        else:  # gaussian-rbf
            w = np.asarray(self.weights)
            u = arr @ w - self.center
            scale = (4.0 * self.kappa ** 2 * u ** 2 - 2.0 * self.kappa) \
                * np.exp(-self.kappa * u ** 2)
            H = scale[:, None, None] * np.outer(w, w)[None, :, :]
        return H if batched else H[0]


def _grad_bound(kind: str, n: int, box: Optional[np.ndarray], coordinate: int,
                coordinate2: int, kappa: float, weights, log_xmin: float) -> float:
    """Gradient-norm bound over the domain box (global bound for trig/RBF)."""
    if kind == "constant":
        return 0.0
    if kind in ("trig-cos", "trig-sin-shift", "trig-cos-shift"):
        return 1.0
    if kind == "trig-cos-diff":
        return float(np.sqrt(2.0))
    if kind == "gaussian-rbf":
        # |d/du exp(-k u^2)| peaks at u = 1/sqrt(2k) with value sqrt(2k/e).
        return float(np.sqrt(2.0 * kappa / np.e) * np.linalg.norm(weights))
    if kind == "log-coordinate":
        return 1.0 / log_xmin
    if box is None:
        raise DomainViolation(
            f"kind {kind!r} needs a domain box to bound its gradient")
    b = np.asarray(box, dtype=float)
    hi = np.max(np.abs(b), axis=1)
    if kind == "linear-coordinate":
        return 1.0
    if kind == "quad-coordinate":
        return float(hi[coordinate])
    if kind == "product-pair":
        return float(np.hypot(hi[coordinate], hi[coordinate2]))
    raise DimensionMismatch(f"unknown basis kind {kind!r}")


def make_basis(kind: str, n: int, box=None, coordinate: int = 0,
               coordinate2: int = 0, shift: float = 0.0, kappa: float = 0.0,
               weights: Sequence[float] = (), center: float = 0.0,
               log_xmin: float = DEFAULT_LOG_XMIN) -> BasisFunction:
    """Construct a BasisFunction with its Lipschitz bound filled in."""
    weights = tuple(float(w) for w in weights)
    bound = _grad_bound(kind, n, box, coordinate, coordinate2, kappa, weights,
                        log_xmin)
    return BasisFunction(kind=kind, n=n, coordinate=coordinate,
                         coordinate2=coordinate2, shift=shift, kappa=kappa,
                         weights=weights, center=center,
                         lipschitz_bound=bound, log_xmin=log_xmin)


def rbf(n: int, kappa: float, weights: Sequence[float], center: float = 0.0) -> BasisFunction:
    """Shorthand for a Gaussian radial basis exp(-kappa (<w,x> - center)^2)."""
    return make_basis("gaussian-rbf", n, kappa=kappa, weights=weights,
                      center=center)


@dataclass(frozen=True)
class BasisStack:
    """An ordered stack of basis functions sharing one joint dimension."""

    functions: Tuple[BasisFunction, ...]
    n: int = field(default=0)

    def __post_init__(self):
        if not self.functions:
            raise DimensionMismatch("a basis stack needs at least one function")
        n = self.n or self.functions[0].n
        object.__setattr__(self, "n", n)
        for f in self.functions:
            if f.n != n:
                raise DimensionMismatch(
                    "all basis functions in a stack must share the joint dimension")

    @property
    def dimension(self) -> int:
        return len(self.functions)

    def _check_coord(self, i: int):
        if not (0 <= i < self.n):
            raise IndexOutOfRange(f"coordinate {i} out of range for n={self.n}")

    def eval(self, x) -> np.ndarray:
        """Stack values: shape (m,) for a point, (N, m) for a batch."""
        cols = [f.value(x) for f in self.functions]
        return np.stack(cols, axis=-1)

    def grad(self, x, i: int) -> np.ndarray:
        """Per-function derivative with respect to coordinate i."""
        self._check_coord(i)
        cols = [f.grad(x)[..., i] for f in self.functions]
        return np.stack(cols, axis=-1)

    def jac(self, x) -> np.ndarray:
        """Full gradients: shape (m, n) or (N, m, n)."""
        rows = [f.grad(x) for f in self.functions]
        return np.stack(rows, axis=-2)

    def hess(self, x) -> np.ndarray:
        """Full Hessians: shape (m, n, n) or (N, m, n, n)."""
        blocks = [f.hess(x) for f in self.functions]
        return np.stack(blocks, axis=-3)

    def hess_entry(self, x, i: int, j: int) -> np.ndarray:
        """(i, j) Hessian entries of each function: shape (m,) or (N, m)."""
        self._check_coord(i)
        self._check_coord(j)
        cols = [f.hess(x)[..., i, j] for f in self.functions]
        return np.stack(cols, axis=-1)

    def second_own(self, x, i: int) -> np.ndarray:
        """Own-coordinate second derivatives, the (i, i) Hessian entries."""
        return self.hess_entry(x, i, i)

    def lipschitz_bounds(self) -> np.ndarray:
        return np.array([f.lipschitz_bound for f in self.functions])


def stack(*functions: BasisFunction) -> BasisStack:
    return BasisStack(functions=tuple(functions))
