"""Performance functions, optimal barriers, and the inject-vs-ruin decision.

Mean-reverting (bang-bang) dividend strategies pay at the full cap rate above
a threshold b and nothing below.  Their performance functions glue a
homogeneous piece below b to ``const * phi + I_F`` above b:

- without injections, ``J_d(x; b) = D1 psi(x)`` below and
  ``D2 phi(x) + I_F(x)`` above; the optimal b_d makes J_d twice continuously
  differentiable, equivalently J_d'(b_d; b_d) = 1, and b_d = 0 when even at
  zero the marginal value of surplus does not reach 1.
- with forced injections at zero (bail-out), ``J_c`` uses the reflection basis
  (Psi, psi) below b and satisfies J_c'(0+; b) = beta; the optimal b_c is
  pinned by the supercontact condition (continuity of the second derivative),
  equivalently J_c'(b_c +-; b_c) = 1.

The overall optimum is a dichotomy: never inject (V = V_d) when
V_d'(0+) < beta, always bail out at zero (V = V_c) when V_d'(0+) > beta,
with indifference at equality; the sign of V_c(0) is an equivalent
discriminant and both are computed and cross-checked.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .errors import (
    InconsistentDiscriminants,
    NoBracketFound,
    OutOfDomain,
    SingularDenominator,
)
from .fluctuation import FluctuationKit, build_kit
from .model import ModelParams, RateCap
from .ode import OdeSolution, solve_IF, solve_phi

__all__ = [
    "BarrierCoeffsD",
    "BarrierCoeffsC",
    "Regime",
    "RegimeKind",
    "coeffs_d",
    "coeffs_c",
    "j_d",
    "j_d_prime",
    "j_d_second",
    "j_c",
    "j_c_prime",
    "j_c_second",
    "find_b_d",
    "find_b_d_info",
    "find_b_c",
    "find_b_c_info",
    "bc_equation_residuals",
    "free_surplus_marginal_value",
    "vd_prime_zero",
    "first_passage_h",
    "decide_regime",
    "value_V",
    "hjb_residual",
    "solve_problem",
    "Solution",
]

#: relative half-width of the indifference band around vd_prime_zero == beta
TIE_REL = 1e-6

#: absolute refinement tolerance for barrier roots
ROOT_XTOL = 1e-12

_SCAN_POINTS = 600
_ALPHA_X_CAP = 600.0  # keep exp(alpha1 * b) representable during scans


# ----------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class BarrierCoeffsD:
    b: float
    D1: float
    D2: float


@dataclass(frozen=True)
class BarrierCoeffsC:
    b: float
    C1: float
    C2: float
    C3: float
    C4: float


def _sol_at(sol: OdeSolution, b: float):
    return sol.value(b), sol.d1(b)


def coeffs_d(phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit, b: float) -> BarrierCoeffsD:
    """Gluing coefficients of J_d at barrier b >= 0."""
    b = float(b)
    if b < 0.0:
        raise OutOfDomain(f"barrier must be >= 0, got {b}")
    pb, dpb = _sol_at(phi, b)
    ib, dib = _sol_at(IF, b)
    ps, dps = kit.psi(b), kit.psi_prime(b)
    den = pb * dps - dpb * ps
    if den == 0.0 or not np.isfinite(den):
        raise SingularDenominator(f"phi psi' - phi' psi vanished at b = {b}")
    return BarrierCoeffsD(b=b, D1=(pb * dib - dpb * ib) / den, D2=(ps * dib - dps * ib) / den)


def coeffs_c(phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit, b: float) -> BarrierCoeffsC:
    """Gluing coefficients of J_c at barrier b > 0."""
    b = float(b)
    if b <= 0.0:
        raise OutOfDomain(f"barrier must be > 0, got {b}")
    pb, dpb = _sol_at(phi, b)
    ib, dib = _sol_at(IF, b)
    ps, dps = kit.psi(b), kit.psi_prime(b)
    Ps, dPs = kit.Psi(b), kit.Psi_prime(b)
    den = pb * dPs - dpb * Ps
    if den == 0.0 or not np.isfinite(den):
        raise SingularDenominator(f"phi Psi' - phi' Psi vanished at b = {b}")
    return BarrierCoeffsC(
        b=b,
        C1=(pb * dib - dpb * ib) / den,
        C2=(Ps * dib - dPs * ib) / den,
        C3=(dps * pb - ps * dpb) / den,
        C4=(Ps * dps - dPs * ps) / den,
    )


# ----------------------------------------------------------------------------
# performance functions


def _piecewise(x, b, inner, outer):
    # at b == 0 the inner piece degenerates to a point and the function is the
    # outer representation on all of [0, inf)
    xv = np.asarray(x, dtype=float)
    out = np.empty_like(xv)
    lo = (xv <= b) if b > 0.0 else np.zeros(xv.shape, dtype=bool)
    if np.any(lo):
        out[lo] = inner(xv[lo])
    if np.any(~lo):
        out[~lo] = outer(xv[~lo])
    return float(out) if np.ndim(x) == 0 else out


def j_d(x, coeffs: BarrierCoeffsD, phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit):
    """Expected discounted dividends of the threshold strategy at level b,
    stopped at ruin, started from x."""
    return _piecewise(
        x, coeffs.b,
        lambda t: coeffs.D1 * kit.psi(t),
        lambda t: coeffs.D2 * phi.value(t) + IF.value(t),
    )


def j_d_prime(x, coeffs: BarrierCoeffsD, phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit):
    return _piecewise(
        x, coeffs.b,
        lambda t: coeffs.D1 * kit.psi_prime(t),
        lambda t: coeffs.D2 * phi.d1(t) + IF.d1(t),
    )


def j_d_second(x, coeffs, phi, IF, kit):
    return _piecewise(
        x, coeffs.b,
        lambda t: coeffs.D1 * kit.psi_pp(t),
        lambda t: coeffs.D2 * phi.d2(t) + IF.d2(t),
    )


def j_c(x, coeffs: BarrierCoeffsC, phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit,
        beta: float | None = None):
    """Expected discounted dividends minus beta-weighted injections of the
    reflected threshold strategy at level b, started from x."""
    beta = kit.params.beta if beta is None else beta
    w = 0.5 * kit.params.sigma2 * beta
    a_in = coeffs.C1 - w * coeffs.C3
    a_out = coeffs.C2 - w * coeffs.C4
    return _piecewise(
        x, coeffs.b,
        lambda t: a_in * kit.Psi(t) + w * kit.psi(t),
        lambda t: a_out * phi.value(t) + IF.value(t),
    )


def j_c_prime(x, coeffs, phi, IF, kit, beta=None):
    beta = kit.params.beta if beta is None else beta
    w = 0.5 * kit.params.sigma2 * beta
    a_in = coeffs.C1 - w * coeffs.C3
    a_out = coeffs.C2 - w * coeffs.C4
    return _piecewise(
        x, coeffs.b,
        lambda t: a_in * kit.Psi_prime(t) + w * kit.psi_prime(t),
        lambda t: a_out * phi.d1(t) + IF.d1(t),
    )


def j_c_second(x, coeffs, phi, IF, kit, beta=None):
    beta = kit.params.beta if beta is None else beta
    w = 0.5 * kit.params.sigma2 * beta
    a_in = coeffs.C1 - w * coeffs.C3
    a_out = coeffs.C2 - w * coeffs.C4
    return _piecewise(
        x, coeffs.b,
        lambda t: a_in * kit.Psi_pp(t) + w * kit.psi_pp(t),
        lambda t: a_out * phi.d2(t) + IF.d2(t),
    )


# ----------------------------------------------------------------------------
# optimal barriers


def _scan_roots(fun, lo: float, hi: float, n: int = _SCAN_POINTS):
    """All sign-change roots of ``fun`` on [lo, hi], geometrically scanned."""
    bs = np.geomspace(lo, hi, n)
    vals = np.array([fun(b) for b in bs])
    ok = np.isfinite(vals)
    roots = []
    idx = np.flatnonzero(ok[:-1] & ok[1:] & (np.sign(vals[:-1]) * np.sign(vals[1:]) < 0))
    for i in idx:
        roots.append(float(brentq(fun, bs[i], bs[i + 1], xtol=ROOT_XTOL, rtol=1e-15)))
    return roots


def _scan_hi(phi: OdeSolution, kit: FluctuationKit) -> float:
    return min(0.98 * phi.x_max, _ALPHA_X_CAP / kit.alpha1)


def free_surplus_marginal_value(phi: OdeSolution, IF: OdeSolution) -> float:
    """J_d'(0; 0) = I_F'(0) - I_F(0) phi'(0): the b_d = 0 discriminant."""
    return IF.d1(0.0) - IF.value(0.0) * phi.d1(0.0)


def find_b_d(phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit) -> float:
    """Optimal no-injection barrier: 0 when the zero-barrier marginal value
    J_d'(0;0) <= 1, otherwise the root of the smooth-pasting equation."""
    b, _ = find_b_d_info(phi, IF, kit)
    return b


def find_b_d_info(phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit):
    disc = free_surplus_marginal_value(phi, IF)
    info = {"discriminant": disc, "roots": [], "borderline": abs(disc - 1.0) < 1e-8}

    def resid(b):
        pb, dpb = phi.value(b), phi.d1(b)
        ib, dib = IF.value(b), IF.d1(b)
        ps, dps = kit.psi(b), kit.psi_prime(b)
        return (dib * pb - ib * dpb - pb + (ps / dps) * dpb) / pb

    if disc <= 1.0 and not info["borderline"]:
        return 0.0, info
    roots = _scan_roots(resid, 1e-8, _scan_hi(phi, kit))
    info["roots"] = roots
    if not roots:
        if disc <= 1.0:
            return 0.0, info
        raise NoBracketFound("no sign change for the b_d equation in (0, x_max]")
    b_pos = roots[0]
    if info["borderline"]:
        # compare the two candidate branches at a probe point
        cd0 = coeffs_d(phi, IF, kit, 0.0)
        cdb = coeffs_d(phi, IF, kit, b_pos)
        probe = 0.5 * (b_pos + phi.x_max * 0.02)
        if j_d(probe, cd0, phi, IF, kit) >= j_d(probe, cdb, phi, IF, kit):
            return 0.0, info
    return b_pos, info


def vd_prime_zero(b_d: float, kit: FluctuationKit, phi: OdeSolution, IF: OdeSolution) -> float:
    """V_d'(0+): the quantity compared with beta in the dichotomy."""
    if b_d == 0.0:
        return free_surplus_marginal_value(phi, IF)
    p = kit.params
    den = kit.alpha1 * np.exp(kit.alpha1 * b_d) - kit.alpha2 * np.exp(kit.alpha2 * b_d)
    return (2.0 / p.sigma2) * kit.delta / den


def find_b_c(phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit,
             beta: float | None = None) -> float:
    b, _ = find_b_c_info(phi, IF, kit, beta)
    return b


def find_b_c_info(phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit,
                  beta: float | None = None):
    """Bail-out barrier from the supercontact equation, with diagnostics.

    All sign changes of the defining residual are reported; if several roots
    exist the one with the largest J_c at a probe point is returned and the
    multiplicity is flagged.
    """
    beta = kit.params.beta if beta is None else beta
    w = 0.5 * kit.params.sigma2 * beta

    def resid(b):
        c = coeffs_c(phi, IF, kit, b)
        return (1.0 - w * kit.psi_prime(b)) / kit.Psi_prime(b) - (c.C1 - w * c.C3)

    roots = _scan_roots(resid, 1e-7, _scan_hi(phi, kit))
    info = {"roots": roots, "multiple": len(roots) > 1}
    if not roots:
        raise NoBracketFound("no sign change for the b_c equation in (0, x_max]")
    if len(roots) == 1:
        return roots[0], info
    probe = min(2.0 * roots[0], 0.9 * phi.x_max)
    best = max(
        roots,
        key=lambda b: j_c(probe, coeffs_c(phi, IF, kit, b), phi, IF, kit, beta),
    )
    return best, info


def bc_equation_residuals(b: float, phi, IF, kit, beta=None):
    """Residuals of the two equivalent supercontact equations at b."""
    beta = kit.params.beta if beta is None else beta
    w = 0.5 * kit.params.sigma2 * beta
    c = coeffs_c(phi, IF, kit, b)
    r1 = (1.0 - w * kit.psi_prime(b)) / kit.Psi_prime(b) - (c.C1 - w * c.C3)
    r2 = (1.0 - IF.d1(b)) / phi.d1(b) - (c.C2 - w * c.C4)
    return float(r1), float(r2)


# ----------------------------------------------------------------------------
# first-passage transform of the refracted process


def first_passage_h(x, b: float, kit: FluctuationKit, phi: OdeSolution):
    """E_x[exp(-q tau_0)] for the process refracted at b (full rate above b,
    no payouts below), absorbed at zero.  Piecewise in x with value 1 at 0.

    The x <= b branch is evaluated in a translation-reduced form that avoids
    the huge cancelling exponentials of the textbook expression.
    """
    b = float(b)
    if b < 0.0:
        raise OutOfDomain(f"need b >= 0, got {b}")
    pb, dpb = phi.value(b), phi.d1(b)
    den = pb * kit.psi_prime(b) - dpb * kit.psi(b)
    s = kit.alpha1 + kit.alpha2

    def inner(t):
        return np.exp(s * t) * (pb * kit.psi_prime(b - t) - dpb * kit.psi(b - t)) / den

    def outer(t):
        c43 = (2.0 / kit.params.sigma2) * np.exp(s * b) / den
        return phi.value(t) * c43

    if b == 0.0:
        xv = np.asarray(x, dtype=float)
        out = phi.value(xv) / phi.value(0.0)
        return float(out) if np.ndim(x) == 0 else out
    return _piecewise(x, b, inner, outer)


# ----------------------------------------------------------------------------
# regime decision and the value function


class RegimeKind(str, Enum):
    NO_INJECTION = "no_injection"
    BAILOUT = "bailout"
    INDIFFERENT = "indifferent"


@dataclass(frozen=True)
class Regime:
    kind: RegimeKind
    b_d: float
    b_c: float
    vd_prime_zero: float
    vc_zero: float


def decide_regime(params: ModelParams, phi: OdeSolution, IF: OdeSolution,
                  kit: FluctuationKit, tie_rel: float = TIE_REL) -> Regime:
    """Compute both sub-problem solutions and apply the dichotomy.

    The two discriminants, V_d'(0+) - beta and V_c(0), must agree in sign
    outside the tie band; disagreement raises InconsistentDiscriminants.
    """
    beta = params.beta
    b_d = find_b_d(phi, IF, kit)
    vd0 = vd_prime_zero(b_d, kit, phi, IF)
    b_c = find_b_c(phi, IF, kit)
    cc = coeffs_c(phi, IF, kit, b_c)
    vc0 = float(j_c(0.0, cc, phi, IF, kit))

    tie = tie_rel * beta
    # V_c(0) responds to a beta perturbation with slope -(sigma^2/2) C3(b_c)
    vc_tie = tie * 0.5 * params.sigma2 * abs(cc.C3) + 1e-14
    if vd0 < beta - tie:
        kind = RegimeKind.NO_INJECTION
        if vc0 > vc_tie:
            raise InconsistentDiscriminants(
                f"V_d'(0+) = {vd0} < beta but V_c(0) = {vc0} > 0"
            )
    elif vd0 > beta + tie:
        kind = RegimeKind.BAILOUT
        if vc0 < -vc_tie:
            raise InconsistentDiscriminants(
                f"V_d'(0+) = {vd0} > beta but V_c(0) = {vc0} < 0"
            )
    else:
        kind = RegimeKind.INDIFFERENT
    return Regime(kind=kind, b_d=b_d, b_c=b_c, vd_prime_zero=vd0, vc_zero=vc0)


def value_V(x, regime: Regime, phi: OdeSolution, IF: OdeSolution, kit: FluctuationKit):
    """The value of the full problem under the decided regime."""
    if regime.kind is RegimeKind.BAILOUT:
        cc = coeffs_c(phi, IF, kit, regime.b_c)
        return j_c(x, cc, phi, IF, kit)
    cd = coeffs_d(phi, IF, kit, regime.b_d)
    return j_d(x, cd, phi, IF, kit)


def hjb_residual(u_fn, x_grid, params: ModelParams, cap: RateCap) -> float:
    """Sup over the grid of the normalized HJB residual.

    ``u_fn(x)`` must return (u, u', u'') arrays.  The running supremum over
    dividend rates is affine in the rate, so only the endpoints {0, F(x)}
    compete.
    """
    xv = np.asarray(x_grid, dtype=float)
    u, d1, d2 = u_fn(xv)
    diffusion = 0.5 * params.sigma2 * d2
    f = np.asarray(cap(xv), dtype=float)
    cand0 = params.mu * d1 + diffusion
    cand1 = (params.mu - f) * d1 + diffusion + f
    resid = params.q * u - np.maximum(cand0, cand1)
    return float(np.max(np.abs(resid) / (1.0 + np.abs(u))))


# ----------------------------------------------------------------------------
# one-call pipeline


@dataclass(frozen=True)
class Solution:
    """Everything the solver produces for one (params, cap) instance."""

    params: ModelParams
    cap: RateCap
    kit: FluctuationKit
    phi: OdeSolution
    IF: OdeSolution
    cd: BarrierCoeffsD
    cc: BarrierCoeffsC
    regime: Regime

    # -- candidate value functions ------------------------------------------

    def V_d(self, x):
        return j_d(x, self.cd, self.phi, self.IF, self.kit)

    def V_d_prime(self, x):
        return j_d_prime(x, self.cd, self.phi, self.IF, self.kit)

    def V_d_triple(self, x):
        return (
            j_d(x, self.cd, self.phi, self.IF, self.kit),
            j_d_prime(x, self.cd, self.phi, self.IF, self.kit),
            j_d_second(x, self.cd, self.phi, self.IF, self.kit),
        )

    def V_c(self, x):
        return j_c(x, self.cc, self.phi, self.IF, self.kit)

    def V_c_prime(self, x):
        return j_c_prime(x, self.cc, self.phi, self.IF, self.kit)

    def V_c_triple(self, x):
        return (
            j_c(x, self.cc, self.phi, self.IF, self.kit),
            j_c_prime(x, self.cc, self.phi, self.IF, self.kit),
            j_c_second(x, self.cc, self.phi, self.IF, self.kit),
        )

    def V(self, x):
        return value_V(x, self.regime, self.phi, self.IF, self.kit)

    def V_prime(self, x):
        if self.regime.kind is RegimeKind.BAILOUT:
            return self.V_c_prime(x)
        return self.V_d_prime(x)

    def active_barrier(self) -> float:
        if self.regime.kind is RegimeKind.BAILOUT:
            return self.regime.b_c
        return self.regime.b_d

    def active_rate(self, x):
        """Optimal dividend rate: full cap above the active barrier."""
        xv = np.asarray(x, dtype=float)
        out = np.where(xv >= self.active_barrier(), self.cap(xv), 0.0)
        return float(out) if np.ndim(x) == 0 else out

    def h(self, x, b: float | None = None):
        return first_passage_h(x, self.active_barrier() if b is None else b,
                               self.kit, self.phi)

    def report(self) -> dict:
        r = self.regime
        return {
            "b_d": r.b_d,
            "b_c": r.b_c,
            "vd_prime_zero": r.vd_prime_zero,
            "vc_zero": r.vc_zero,
            "regime": r.kind.value,
        }


def solve_problem(
    params: ModelParams,
    cap: RateCap,
    x_max: float | None = None,
    tol: float = 1e-8,
    grid_n: int | None = None,
    _retries: int = 3,
) -> Solution:
    """Solve the ODEs, locate both barriers, and decide the regime.

    If a barrier lands in the top 40% of the truncated domain the solve is
    repeated on a doubled domain; barriers are O(1) while x_max is chosen for
    tail decay, so this only triggers for unusually flat problems.
    """
    kit = build_kit(params)
    phi = solve_phi(params, cap, x_max=x_max, tol=tol, grid_n=grid_n)
    IF = solve_IF(params, cap, phi=phi)
    regime = decide_regime(params, phi, IF, kit)
    if max(regime.b_c, regime.b_d) > 0.6 * phi.x_max and _retries > 0:
        return solve_problem(params, cap, x_max=2.0 * phi.x_max, tol=tol,
                             grid_n=grid_n, _retries=_retries - 1)
    cd = coeffs_d(phi, IF, kit, regime.b_d)
    cc = coeffs_c(phi, IF, kit, regime.b_c)
    return Solution(params=params, cap=cap, kit=kit, phi=phi, IF=IF,
                    cd=cd, cc=cc, regime=regime)
