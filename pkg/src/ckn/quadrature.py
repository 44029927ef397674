"""Adaptive Gauss-Kronrod quadrature for one-dimensional improper integrals.

All integrals in this package reduce to one radial variable, so only 1D
rules are provided.  The base rule is the 7-point Gauss / 15-point Kronrod
pair, refined by global bisection of the interval with the largest error.

Semi-infinite ranges are mapped onto a finite one with
``rho = a + scale * t / (1 - t)``; alternatively, when the integrand
carries a power-law tail hint, the range can be cut at a finite radius
and the remainder added analytically.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceError, DomainError

__all__ = [
    "Integrand",
    "QuadratureResult",
    "integrate_improper",
    "integrate_interval",
    "differentiate_under_integral",
    "DEFAULT_REL_TOL",
    "MAX_SUBDIVISIONS",
]

DEFAULT_REL_TOL = 1e-10
MAX_SUBDIVISIONS = 20_000

# Kronrod 15-point abscissae on [-1, 1] (positive half, descending) and weights.
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
# Gauss 7-point weights for the nodes _XK[1], _XK[3], _XK[5], _XK[7].
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])            # 15 nodes ascending
_KW = np.concatenate([_WK[:-1], _WK[::-1]])
_GW = np.zeros(15)
_GW[[1, 3, 5]] = _WG[:3]
_GW[7] = _WG[3]
_GW[[9, 11, 13]] = _WG[2::-1]


@dataclass(frozen=True)
class Integrand:
    """A real function on (0, inf) plus hints about its endpoint behaviour.

    ``evaluator`` must accept a 1D float array and return an array of the
    same shape.  ``zero_exponent`` is the power beta with f ~ rho**beta near
    0 (must exceed -1); it is only used when ``singular_at_zero`` is set.
    ``tail_exponent_hint`` is gamma with f ~ rho**gamma at infinity.
    ``scale`` is the characteristic radius used by the infinite-range map.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    singular_at_zero: bool = False
    tail_exponent_hint: Optional[float] = None
    zero_exponent: float = 0.0
    scale: float = 1.0

    def __call__(self, rho):
        return self.evaluator(rho)


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_error_estimate: float
    evaluations: int
    method: str = "gk15"

    def __float__(self):
        return self.value


def _gk15(func, lo, hi):
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    y = func(c + h * _NODES)
    k = h * float(np.dot(_KW, y))
    g = h * float(np.dot(_GW, y))
    return k, abs(k - g)


def _check_tol(rel_tol):
    if not (1e-14 < rel_tol < 1e-2):
        raise DomainError(f"rel_tol must lie in (1e-14, 1e-2), got {rel_tol}")


def _adaptive(func, lo, hi, rel_tol, abs_tol, max_subdivisions):
    """Globally adaptive GK15 on the finite interval [lo, hi]."""
    value, err = _gk15(func, lo, hi)
    evals = 15
    heap = [(-err, lo, hi, value, err)]
    total, total_err = value, err
    n_intervals = 1
    while total_err > max(abs_tol, rel_tol * abs(total)):
        if n_intervals >= max_subdivisions:
            raise ConvergenceError(
                f"no convergence after {n_intervals} subdivisions "
                f"(estimate {total:.16g}, error {total_err:.3g})",
                estimate=total, error=total_err,
            )
        _, a, b, v, e = heapq.heappop(heap)
        mid = 0.5 * (a + b)
        if not (a < mid < b):
            # interval exhausted at machine resolution; accept what we have
            raise ConvergenceError(
                f"interval [{a}, {b}] cannot be bisected further "
                f"(estimate {total:.16g}, error {total_err:.3g})",
                estimate=total, error=total_err,
            )
        v1, e1 = _gk15(func, a, mid)
        v2, e2 = _gk15(func, mid, b)
        evals += 30
        heapq.heappush(heap, (-e1, a, mid, v1, e1))
        heapq.heappush(heap, (-e2, mid, b, v2, e2))
        n_intervals += 1
        total += v1 + v2 - v
        total_err += e1 + e2 - e
        if n_intervals % 256 == 0:
            # re-sum to purge drift from the running updates
            total = math.fsum(item[3] for item in heap)
            total_err = math.fsum(item[4] for item in heap)
    total = math.fsum(item[3] for item in heap)
    total_err = math.fsum(item[4] for item in heap)
    return total, total_err, evals


def _power_substitution(func, lo, beta):
    """Regularise a rho**beta endpoint singularity at ``lo`` via x = lo + s**k."""
    k = 1.0 / (1.0 + beta)

    def g(s):
        return func(lo + s ** k) * k * s ** (k - 1.0)

    return g, k


def integrate_interval(f, lo, hi, rel_tol=DEFAULT_REL_TOL, abs_tol=0.0,
                       max_subdivisions=MAX_SUBDIVISIONS) -> QuadratureResult:
    """Integrate ``f`` over the finite interval [lo, hi].

    ``f`` may be an :class:`Integrand` (its singular-at-zero hint is honoured
    when ``lo == 0``) or a plain vectorised callable.
    """
    _check_tol(rel_tol)
    lo, hi = float(lo), float(hi)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise DomainError("integrate_interval needs finite bounds")
    sign = 1.0
    if hi < lo:
        lo, hi, sign = hi, lo, -1.0
    if hi == lo:
        return QuadratureResult(0.0, 0.0, 1)
    func = f.evaluator if isinstance(f, Integrand) else f
    if isinstance(f, Integrand) and f.singular_at_zero and lo == 0.0:
        if f.zero_exponent <= -1.0:
            raise DomainError("zero_exponent must exceed -1 for integrability")
        g, k = _power_substitution(func, 0.0, f.zero_exponent)
        value, err, evals = _adaptive(g, 0.0, hi ** (1.0 / k), rel_tol, abs_tol,
                                      max_subdivisions)
    else:
        value, err, evals = _adaptive(func, lo, hi, rel_tol, abs_tol, max_subdivisions)
    return QuadratureResult(sign * value, err, evals)


def _map_to_unit(func, lo, scale, singular, beta):
    """Integrand over t in (0, 1) for rho = lo + scale * t / (1 - t).

    With ``singular`` the further substitution t = s**k flattens a
    rho**beta behaviour at rho = lo.
    """

    def g(t):
        one_minus = 1.0 - t
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            rho = lo + scale * t / one_minus
            y = func(rho) * scale / (one_minus * one_minus)
        return np.where(one_minus > 0.0, np.nan_to_num(y, nan=0.0, posinf=np.inf), 0.0)

    if not singular:
        return g
    k = 1.0 / (1.0 + beta)

    def gs(s):
        with np.errstate(over="ignore", invalid="ignore"):
            y = g(s ** k) * k * s ** (k - 1.0)
        return np.nan_to_num(y, nan=0.0, posinf=np.inf)

    return gs


def _integrate_mapped(f, lo, rel_tol, abs_tol, max_subdivisions):
    singular = f.singular_at_zero and lo == 0.0
    if singular and f.zero_exponent <= -1.0:
        raise DomainError("zero_exponent must exceed -1 for integrability")
    g = _map_to_unit(f.evaluator, lo, f.scale, singular, f.zero_exponent)
    value, err, evals = _adaptive(g, 0.0, 1.0, rel_tol, abs_tol, max_subdivisions)
    return QuadratureResult(value, err, evals, method="map")


def _integrate_powerlaw(f, lo, rel_tol, abs_tol, max_subdivisions):
    gam = f.tail_exponent_hint
    cut = lo + 8.0 * f.scale
    body = integrate_interval(f, lo, cut, rel_tol * 0.1, abs_tol, max_subdivisions)
    evals = body.evaluations
    body_val, body_err = body.value, body.abs_error_estimate

    def tail_at(r):
        fr = float(np.asarray(f.evaluator(np.array([r])))[0])
        return -fr * r / (gam + 1.0)

    prev = body_val + tail_at(cut)
    for _ in range(60):
        nxt = 2.0 * cut
        piece = integrate_interval(f.evaluator, cut, nxt, rel_tol * 0.1, abs_tol,
                                   max_subdivisions)
        evals += piece.evaluations + 2
        body_val += piece.value
        body_err += piece.abs_error_estimate
        cut = nxt
        est = body_val + tail_at(cut)
        change = abs(est - prev)
        if change <= max(abs_tol, 0.5 * rel_tol * abs(est)):
            return QuadratureResult(est, body_err + change, evals, method="powerlaw")
        prev = est
    raise ConvergenceError("power-law tail did not settle", estimate=prev, error=change)


def integrate_improper(f: Integrand, rel_tol: float = DEFAULT_REL_TOL, *,
                       lower: float = 0.0, abs_tol: float = 0.0,
                       max_subdivisions: int = MAX_SUBDIVISIONS,
                       tail: str = "auto") -> QuadratureResult:
    """Integrate ``f`` over (lower, inf).

    ``tail`` selects the treatment of the infinite end: ``"map"`` (the
    rational substitution), ``"powerlaw"`` (finite cut plus analytic
    remainder from ``tail_exponent_hint``) or ``"auto"``, which uses the
    map and falls back to the power-law scheme if the map fails to
    converge.
    """
    _check_tol(rel_tol)
    if not isinstance(f, Integrand):
        f = Integrand(f)
    gam = f.tail_exponent_hint
    if gam is not None and gam >= -1.0:
        raise DomainError(
            f"tail exponent {gam} >= -1: the integral diverges at infinity")
    if not f.scale > 0:
        raise DomainError("Integrand.scale must be positive")
    if tail == "map":
        return _integrate_mapped(f, lower, rel_tol, abs_tol, max_subdivisions)
    if tail == "powerlaw":
        if gam is None:
            raise DomainError("power-law tail needs tail_exponent_hint")
        return _integrate_powerlaw(f, lower, rel_tol, abs_tol, max_subdivisions)
    if tail != "auto":
        raise DomainError(f"unknown tail treatment {tail!r}")
    try:
        return _integrate_mapped(f, lower, rel_tol, abs_tol, max_subdivisions)
    except ConvergenceError:
        if gam is None:
            raise
        return _integrate_powerlaw(f, lower, rel_tol, abs_tol, max_subdivisions)


def differentiate_under_integral(f_family, dlam_integrand, lam, rel_tol=DEFAULT_REL_TOL,
                                 *, lower=0.0, upper=math.inf, fd_check=False,
                                 **hints) -> QuadratureResult:
    """d/dlambda of the integral of ``f_family(lambda, rho)`` over rho.

    The caller supplies the analytic partial derivative ``dlam_integrand``;
    this routine only integrates it at fixed ``lam``.  With ``fd_check`` a
    central difference of the integrated family (step 1e-5 * lam) is also
    computed and stored on the result as ``fd_estimate``.

    ``hints`` are forwarded to :class:`Integrand` (scale, singular_at_zero,
    zero_exponent, tail_exponent_hint).
    """

    def integrate_at(fn):
        if math.isinf(upper):
            return integrate_improper(Integrand(fn, **hints), rel_tol, lower=lower)
        return integrate_interval(Integrand(fn, **hints), lower, upper, rel_tol)

    res = integrate_at(lambda r: dlam_integrand(lam, r))
    if not fd_check:
        return res
    step = 1e-5 * lam
    plus = integrate_at(lambda r: f_family(lam + step, r)).value
    minus = integrate_at(lambda r: f_family(lam - step, r)).value
    return _FDResult(res.value, res.abs_error_estimate, res.evaluations, res.method,
                     fd_estimate=(plus - minus) / (2.0 * step))


@dataclass(frozen=True)
class _FDResult(QuadratureResult):
    fd_estimate: float = math.nan
