"""Model primitives: dynamics parameters and the dividend-rate cap.

The surplus follows an arithmetic Brownian motion with drift ``mu`` and
volatility ``sigma``; payouts are discounted at rate ``q`` and capital
injections cost ``beta`` per unit.  Dividend rates are bounded pointwise by a
nondecreasing, concave, continuously differentiable cap ``F`` with
``F(0) >= 0``.  Everything downstream (closed forms, ODE solves, simulation)
consumes these two immutable objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    BetaNotAboveOne,
    NegativeArgument,
    NegativeAtZero,
    NonPositiveQ,
    NonPositiveSigma,
    NotConcave,
    NotNondecreasing,
)

__all__ = [
    "ModelParams",
    "RateCap",
    "validate_params",
    "make_rate_cap",
    "cap_eval",
]

#: default number of points used to certify cap shape at construction time
AUDIT_GRID_N = 10_000

#: slack allowed when certifying monotonicity/concavity on the audit grid
AUDIT_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Dynamics quadruple (mu, sigma, q, beta).

    sigma and q must be strictly positive and beta strictly above one;
    construction fails otherwise.
    """

    mu: float
    sigma: float
    q: float
    beta: float

    def __post_init__(self):
        if not (self.sigma > 0.0) or not np.isfinite(self.sigma):
            raise NonPositiveSigma(f"sigma must be > 0, got {self.sigma}")
        if not (self.q > 0.0) or not np.isfinite(self.q):
            raise NonPositiveQ(f"q must be > 0, got {self.q}")
        if not (self.beta > 1.0) or not np.isfinite(self.beta):
            raise BetaNotAboveOne(f"beta must be > 1, got {self.beta}")
        if not np.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma


def validate_params(raw: Mapping[str, float] | ModelParams) -> ModelParams:
    """Build validated ModelParams from a record with keys mu, sigma, q, beta."""
    if isinstance(raw, ModelParams):
        return raw
    try:
        return ModelParams(
            mu=float(raw["mu"]),
            sigma=float(raw["sigma"]),
            q=float(raw["q"]),
            beta=float(raw["beta"]),
        )
    except KeyError as exc:
        raise KeyError(f"missing model parameter {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class RateCap:
    """Pointwise bound on the dividend rate, with derivative.

    ``kind`` is one of "constant", "linear", "affine", "tabulated".  The cap is
    certified nondecreasing and concave on a dense audit grid at construction;
    use :func:`make_rate_cap` rather than instantiating directly.
    """

    kind: str
    coefficients: tuple
    _value: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _deriv: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    audit_hi: float = 100.0

    def __call__(self, x):
        """F(x) for x >= 0 (scalar or array)."""
        xv = _require_nonnegative(x)
        out = self._value(xv)
        return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out

    def value(self, x):
        return self(x)

    def deriv(self, x):
        """F'(x) for x >= 0 (scalar or array)."""
        xv = _require_nonnegative(x)
        out = self._deriv(xv)
        return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out

    def eval(self, x):
        """(F(x), F'(x)) pair."""
        return self(x), self.deriv(x)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def lipschitz_bound(self) -> float:
        """Upper bound for F' on [0, inf); equals F'(0) by concavity."""
        return float(self.deriv(0.0))


def _require_nonnegative(x):
    xv = np.asarray(x, dtype=float)
    if np.any(xv < 0.0):
        raise NegativeArgument(f"rate cap evaluated at negative argument {x!r}")
    return xv


def _audit_cap(value, deriv, hi: float, n: int) -> None:
    """Certify F(0) >= 0, F' >= 0 and F' nonincreasing on a dense grid."""
    grid = np.linspace(0.0, hi, n)
    f0 = float(value(np.asarray(0.0)))
    if f0 < 0.0:
        raise NegativeAtZero(f"F(0) = {f0} < 0")
    d = np.asarray(deriv(grid), dtype=float)
    scale = 1.0 + float(np.max(np.abs(d)))
    if np.min(d) < -AUDIT_TOL * scale:
        i = int(np.argmin(d))
        raise NotNondecreasing(f"F'({grid[i]:.6g}) = {d[i]:.6g} < 0")
    rises = np.diff(d)
    if np.max(rises, initial=0.0) > AUDIT_TOL * scale:
        i = int(np.argmax(rises))
        raise NotConcave(
            f"F' increases from {d[i]:.6g} to {d[i + 1]:.6g} near x = {grid[i]:.6g}"
        )


def make_rate_cap(
    kind: str,
    coefficients,
    audit_hi: float | None = None,
    audit_n: int = AUDIT_GRID_N,
) -> RateCap:
    """Construct a certified RateCap.

    Supported kinds and coefficients:

    - "constant": S            ->  F(x) = S
    - "linear":   K            ->  F(x) = K x
    - "affine":   (c0, c1)     ->  F(x) = c0 + c1 x
    - "tabulated": [(x_i, y_i)] -> shape-preserving C1 cubic through the knots,
      extended linearly (with the last slope) beyond the last knot

    Shape constraints (nondecreasing, concave, F(0) >= 0) are certified on an
    ``audit_n``-point grid over [0, audit_hi] and violated constructions are
    rejected.
    """
    kind = kind.lower()
    if kind == "constant":
        (s,) = _as_floats(coefficients, 1)
        coeffs = (s,)
        value = lambda x: np.full_like(x, s, dtype=float)
        deriv = lambda x: np.zeros_like(x, dtype=float)
        hi = audit_hi if audit_hi is not None else 100.0
    elif kind == "linear":
        (k,) = _as_floats(coefficients, 1)
        coeffs = (k,)
        value = lambda x: k * x
        deriv = lambda x: np.full_like(x, k, dtype=float)
        hi = audit_hi if audit_hi is not None else 100.0
    elif kind == "affine":
        c0, c1 = _as_floats(coefficients, 2)
        coeffs = (c0, c1)
        value = lambda x: c0 + c1 * x
        deriv = lambda x: np.full_like(x, c1, dtype=float)
        hi = audit_hi if audit_hi is not None else 100.0
    elif kind == "tabulated":
        knots = np.asarray(coefficients, dtype=float)
        if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 2:
            raise ValueError("tabulated cap needs >= 2 (x, y) knots")
        xs, ys = knots[:, 0], knots[:, 1]
        if xs[0] != 0.0:
            raise ValueError("tabulated cap knots must start at x = 0")
        if np.any(np.diff(xs) <= 0.0):
            raise ValueError("tabulated cap knots must have increasing x")
        interp = PchipInterpolator(xs, ys, extrapolate=False)
        dinterp = interp.derivative()
        x_last, y_last = float(xs[-1]), float(ys[-1])
        slope_last = float(dinterp(x_last))

        def value(x, _i=interp):
            inside = x <= x_last
            out = np.where(
                inside,
                _i(np.clip(x, 0.0, x_last)),
                y_last + slope_last * (x - x_last),
            )
            return np.asarray(out, dtype=float)

        def deriv(x, _d=dinterp):
            inside = x <= x_last
            out = np.where(inside, _d(np.clip(x, 0.0, x_last)), slope_last)
            return np.asarray(out, dtype=float)

        coeffs = tuple(map(tuple, knots))
        hi = audit_hi if audit_hi is not None else x_last
    else:
        raise ValueError(f"unknown rate-cap kind {kind!r}")

    _audit_cap(value, deriv, hi, audit_n)
    return RateCap(kind=kind, coefficients=coeffs, _value=value, _deriv=deriv, audit_hi=hi)


def _as_floats(coefficients, n: int) -> tuple:
    if np.isscalar(coefficients):
        vals = (float(coefficients),)
    elif isinstance(coefficients, Mapping):
        vals = tuple(float(v) for v in coefficients.values())
    elif isinstance(coefficients, Sequence) or isinstance(coefficients, np.ndarray):
        vals = tuple(float(v) for v in coefficients)
    else:
        raise ValueError(f"cannot interpret coefficients {coefficients!r}")
    if len(vals) != n:
        raise ValueError(f"expected {n} coefficient(s), got {len(vals)}")
    return vals


def cap_eval(cap: RateCap, x):
    """(F(x), F'(x)); raises NegativeArgument for x < 0."""
    return cap.eval(x)
