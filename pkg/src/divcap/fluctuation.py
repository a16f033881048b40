"""Closed-form fluctuation machinery for Brownian motion with drift.

Everything here derives from the two characteristic roots of
``(sigma^2/2) a^2 + mu a - q = 0``: the increasing/decreasing exponential
combinations used for two-sided exit, reflection at zero, and the expected
discounted reflection push.  All functions are exact up to floating point;
there is no discretization.

Large arguments make ``exp(alpha1 x)`` overflow, so log-scaled variants and
ratio evaluators (computed as exp of log differences) are provided for the
quantities that are themselves bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentOutOfRange, NegativeArgument
from .model import ModelParams

__all__ = [
    "FluctuationKit",
    "BasisValues",
    "build_kit",
    "shifted_kit",
    "eval_basis",
    "u_zero_b",
]


@dataclass(frozen=True)
class BasisValues:
    """The six basis quantities at a common point."""

    psi: float
    psi_prime: float
    Psi: float
    Psi_prime: float
    psi_bar: float
    Psi_bar: float


@dataclass(frozen=True)
class FluctuationKit:
    """Characteristic roots and basis-function evaluators for fixed dynamics."""

    params: ModelParams
    delta: float
    alpha1: float
    alpha2: float

    # -- raw basis functions ------------------------------------------------

    def _exps(self, x):
        x = self._check(x)
        return np.exp(self.alpha1 * x), np.exp(self.alpha2 * x)

    def _check(self, x):
        xv = np.asarray(x, dtype=float)
        if np.any(xv < 0.0):
            raise NegativeArgument(f"basis functions defined for x >= 0, got {x!r}")
        return xv

    def psi(self, x):
        e1, e2 = self._exps(x)
        return (e1 - e2) / self.delta

    def psi_prime(self, x):
        e1, e2 = self._exps(x)
        return (self.alpha1 * e1 - self.alpha2 * e2) / self.delta

    def psi_pp(self, x):
        e1, e2 = self._exps(x)
        return (self.alpha1**2 * e1 - self.alpha2**2 * e2) / self.delta

    def psi_bar(self, x):
        e1, e2 = self._exps(x)
        a1, a2, d, q = self.alpha1, self.alpha2, self.delta, self.params.q
        return e1 / (a1 * d) - e2 / (a2 * d) - 1.0 / q

    def Psi(self, x):
        e1, e2 = self._exps(x)
        a1, a2, d, q = self.alpha1, self.alpha2, self.delta, self.params.q
        return q * e1 / (a1 * d) - q * e2 / (a2 * d)

    def Psi_prime(self, x):
        return self.params.q * self.psi(x)

    def Psi_pp(self, x):
        return self.params.q * self.psi_prime(x)

    def Psi_bar(self, x):
        e1, e2 = self._exps(x)
        a1, a2, d, q = self.alpha1, self.alpha2, self.delta, self.params.q
        return q * e1 / (a1**2 * d) - q * e2 / (a2**2 * d) - self.params.mu / q

    # -- log-scaled variants and ratios --------------------------------------

    def log_psi(self, x):
        """log psi(x); -inf at x = 0.  Safe for alpha1*x far beyond 709."""
        xv = self._check(x)
        with np.errstate(divide="ignore"):
            return (
                self.alpha1 * xv
                + np.log1p(-np.exp((self.alpha2 - self.alpha1) * xv))
                - np.log(self.delta)
            )

    def log_Psi(self, x):
        xv = self._check(x)
        q, d = self.params.q, self.delta
        t1 = self.alpha1 * xv - np.log(self.alpha1)
        t2 = self.alpha2 * xv - np.log(-self.alpha2)
        return np.log(q / d) + np.logaddexp(t1, t2)

    def psi_ratio(self, x, y):
        """psi(x)/psi(y) for y > 0, overflow-safe."""
        return np.exp(self.log_psi(x) - self.log_psi(y))

    def Psi_ratio(self, x, y):
        """Psi(x)/Psi(y), overflow-safe; the Laplace transform of tau_y for
        the reflected-at-zero process when 0 <= x <= y."""
        return np.exp(self.log_Psi(x) - self.log_Psi(y))


def build_kit(params: ModelParams) -> FluctuationKit:
    """Compute Delta and the two roots, using the cancellation-free branch."""
    mu, s2, q = params.mu, params.sigma2, params.q
    delta = float(np.sqrt(mu * mu + 2.0 * q * s2))
    # root of larger magnitude is computed by addition, the other via Vieta
    if mu >= 0.0:
        alpha2 = -(mu + delta) / s2
        alpha1 = -2.0 * q / (s2 * alpha2)
    else:
        alpha1 = (delta - mu) / s2
        alpha2 = -2.0 * q / (s2 * alpha1)
    return FluctuationKit(params=params, delta=delta, alpha1=alpha1, alpha2=alpha2)


def shifted_kit(params: ModelParams, rate: float) -> FluctuationKit:
    """Kit for the drift-reduced dynamics mu - rate (same sigma, q)."""
    if rate < 0.0:
        raise ArgumentOutOfRange(f"shift rate must be >= 0, got {rate}")
    return build_kit(replace(params, mu=params.mu - rate))


def eval_basis(kit: FluctuationKit, x) -> BasisValues:
    """All six basis quantities at x >= 0 (scalar or array)."""
    return BasisValues(
        psi=kit.psi(x),
        psi_prime=kit.psi_prime(x),
        Psi=kit.Psi(x),
        Psi_prime=kit.Psi_prime(x),
        psi_bar=kit.psi_bar(x),
        Psi_bar=kit.Psi_bar(x),
    )


def u_zero_b(kit: FluctuationKit, x, b: float):
    """Expected discounted reflection push at zero before the reflected
    process first reaches level b, started from x in [0, b].

    Returns ``(value, derivative)``.  Exactly zero at x = b and has
    derivative -1 at x = 0.
    """
    b = float(b)
    if not b > 0.0:
        raise ArgumentOutOfRange(f"need b > 0, got b={b}")
    xv = np.asarray(x, dtype=float)
    if np.any((xv < 0.0) | (xv > b)):
        raise ArgumentOutOfRange(f"need 0 <= x <= b, got x={x!r}, b={b}")
    mu_q = kit.params.mu / kit.params.q
    Pb = kit.Psi_bar(b) + mu_q
    Psib = kit.Psi(b)
    value = (kit.Psi(xv) * Pb - Psib * (kit.Psi_bar(xv) + mu_q)) / Psib
    deriv = (kit.Psi_prime(xv) * Pb - Psib * kit.Psi(xv)) / Psib
    if np.ndim(x) == 0:
        return float(value), float(deriv)
    return value, deriv
