"""CKN parameters, the sharp constant K_a and the extremal family.

Everything downstream consumes a :class:`CknParams`; the derived exponents
are computed once here so that hot loops never recompute them.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "CknParams",
    "SharpConstant",
    "make_params",
    "gamma",
    "log_gamma",
    "unit_ball_volume",
    "sharp_constant",
    "extremal_profile",
]

# Lanczos approximation, g = 7, nine terms (Godfrey's coefficients).
# Relative accuracy about 1e-15 for real arguments >= 1/2.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _lanczos_series(z):
    # z is the shifted argument x - 1
    s = _LANCZOS_COEF[0]
    for k in range(1, len(_LANCZOS_COEF)):
        s += _LANCZOS_COEF[k] / (z + k)
    return s


def gamma(x: float) -> float:
    """Gamma function for real ``x`` (not a non-positive integer)."""
    x = float(x)
    if x <= 0.0 and x == math.floor(x):
        raise DomainError(f"gamma has a pole at x={x}")
    if x < 0.5:
        # reflection formula
        return math.pi / (math.sin(math.pi * x) * gamma(1.0 - x))
    if x > 140.0:
        return math.exp(log_gamma(x))
    z = x - 1.0
    t = z + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * math.exp(-t) * _lanczos_series(z)


def log_gamma(x: float) -> float:
    """log Gamma(x) for real ``x > 0``."""
    x = float(x)
    if x <= 0.0:
        raise DomainError(f"log_gamma requires x > 0, got {x}")
    if x < 0.5:
        return math.log(math.pi / (math.sin(math.pi * x))) - log_gamma(1.0 - x)
    z = x - 1.0
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * math.log(t) - t + math.log(_lanczos_series(z))


@dataclass(frozen=True)
class CknParams:
    """Dimension ``n``, weight ``a`` and the critical exponent ``p``.

    Build through :func:`make_params`; the remaining fields are derived.

    Attributes
    ----------
    p : 2n / (n - 2 + 2a)
    ap : a * p, always < 2
    s : 2 - ap, the power of rho inside the extremals
    extremal_exp : (2 - n) / (2 - ap)
    kernel_exp : n / (a - 1), exponent of (lambda + rho^s) in the kernel
    q_exp : (n - 1 + a) / (a - 1), exponent in the Q integrand
    scaling_exp : (n - 2 + 2a) / (2 (a - 1)), homogeneity of Q_E in lambda
    beta : (n - 1 + a) / (1 - a)
    """

    n: int
    a: float
    p: float = field(init=False)
    ap: float = field(init=False)
    s: float = field(init=False)
    extremal_exp: float = field(init=False)
    kernel_exp: float = field(init=False)
    q_exp: float = field(init=False)
    scaling_exp: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        n, a = self.n, self.a
        p = 2.0 * n / (n - 2.0 + 2.0 * a)
        ap = a * p
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "ap", ap)
        object.__setattr__(self, "s", 2.0 - ap)
        object.__setattr__(self, "extremal_exp", (2.0 - n) / (2.0 - ap))
        object.__setattr__(self, "kernel_exp", n / (a - 1.0))
        object.__setattr__(self, "q_exp", (n - 1.0 + a) / (a - 1.0))
        object.__setattr__(self, "scaling_exp", (n - 2.0 + 2.0 * a) / (2.0 * (a - 1.0)))
        object.__setattr__(self, "beta", (n - 1.0 + a) / (1.0 - a))

    @property
    def length_scale_exp(self) -> float:
        """Exponent e with rho ~ lambda**e the natural radial scale."""
        return 1.0 / self.s

    def as_dict(self) -> dict:
        return {"n": self.n, "a": self.a, "p": self.p, "ap": self.ap}


def make_params(n, a) -> CknParams:
    """Validate ``(n, a)`` and return the parameter triple.

    >>> make_params(3, 0).p
    6.0
    """
    if isinstance(n, bool):
        raise DomainError("n must be an integer >= 3")
    try:
        n = operator.index(n)
    except TypeError:
        raise DomainError(f"n must be an integer >= 3, got {n!r}") from None
    if n < 3:
        raise DomainError(f"n must satisfy n >= 3, got n={n}")
    a = float(a)
    if not math.isfinite(a) or a < 0.0 or a >= 1.0:
        raise DomainError(f"a must satisfy 0 <= a < 1, got a={a}")
    params = CknParams(n, a)
    if not params.ap < 2.0:  # pragma: no cover - implied by a < 1
        raise DomainError("a*p must be < 2")
    return params


def unit_ball_volume(n) -> float:
    """Volume of the Euclidean unit ball in R^n, pi^(n/2) / Gamma(n/2 + 1)."""
    if isinstance(n, bool):
        raise DomainError("n must be an integer >= 1")
    try:
        n = operator.index(n)
    except TypeError:
        raise DomainError(f"n must be an integer >= 1, got {n!r}") from None
    if n < 1:
        raise DomainError(f"unit ball volume needs n >= 1, got n={n}")
    return math.pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)


@dataclass(frozen=True)
class SharpConstant:
    value: float
    params: CknParams

    def __float__(self):
        return self.value

    @property
    def inverse(self) -> float:
        return 1.0 / self.value


def _log_sharp_constant(params: CknParams) -> float:
    n, ap = params.n, params.ap
    s = params.s
    expo = s / (2.0 * n - 2.0 * ap)
    inner = (
        math.log(s)
        + log_gamma((2.0 * n - 2.0 * ap) / s)
        - math.log(n * unit_ball_volume(n))
        - 2.0 * log_gamma((n - ap) / s)
    )
    return -0.5 * math.log((n - 2.0) * (n - ap)) + expo * inner


def _sharp_constant_mp(params: CknParams, dps: int = 50) -> float:
    import mpmath as mp

    with mp.workdps(dps):
        n = mp.mpf(params.n)
        a = mp.mpf(params.a)
        p = 2 * n / (n - 2 + 2 * a)
        ap = a * p
        omega = mp.pi ** (n / 2) / mp.gamma(n / 2 + 1)
        base = (2 - ap) * mp.gamma((2 * n - 2 * ap) / (2 - ap)) / (
            n * omega * mp.gamma((n - ap) / (2 - ap)) ** 2
        )
        k = ((n - 2) * (n - ap)) ** mp.mpf(-0.5) * base ** ((2 - ap) / (2 * n - 2 * ap))
        return float(k)


def sharp_constant(params: CknParams, precision: str = "double") -> SharpConstant:
    """The optimal CKN constant K_a for ``params``.

    The closed form is evaluated in log space so that large Gamma arguments
    (a close to 1) do not overflow.  ``precision="extended"`` re-evaluates
    the same closed form with mpmath at 50 digits; it is meant for
    cross-checks and needs mpmath installed.
    """
    if precision == "double":
        value = math.exp(_log_sharp_constant(params))
    elif precision == "extended":
        value = _sharp_constant_mp(params)
    else:
        raise DomainError(f"unknown precision policy {precision!r}")
    return SharpConstant(value, params)


def extremal_profile(params: CknParams, lam, rho):
    """h_lambda(rho) = (lambda + rho^(2-ap))^((2-n)/(2-ap)).

    Vectorised over ``rho``; returns a float for scalar input.
    """
    if not lam > 0:
        raise DomainError(f"lambda must be > 0, got {lam}")
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0):
        raise DomainError("rho must be non-negative")
    out = (lam + r ** params.s) ** params.extremal_exp
    return float(out) if out.ndim == 0 else out
