"""The lambda-parametrised Q functions and the volume-growth pipeline.

For a radial volume profile V(rho) = mu(B(x0, rho)) the layer-cake formula
turns the weighted integral of the extremal family into

    Q(lambda) = (1-a)/(n-1+a) * int_0^inf V(rho) f(lambda, rho) drho,

with the kernel ``f`` below.  With the Euclidean profile omega_n rho^n this
is Q_E, which satisfies an exact ODE with constant K_a; for a general space
it is Q-tilde, which satisfies the matching differential inequality when
the space carries the CKN inequality with constant C.  Comparing Q-tilde
with the ODE solution q = (K_a/C)^(n/(1-a)) Q_E yields the volume lower
bound checked by :func:`growth_pipeline`.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import CknParams, sharp_constant, unit_ball_volume
from .errors import DomainError, InsufficientDataError
from .mmspace import (AnalyticProfile, MetricMeasureSpace, Profile, check_ar, check_vd,
                      log_pairs)
from .quadrature import (DEFAULT_REL_TOL, Integrand, differentiate_under_integral,
                         integrate_improper, integrate_interval)

__all__ = [
    "QEvaluation",
    "ComparisonVerdict",
    "IdentityReport",
    "GrowthReport",
    "f_kernel",
    "f_kernel_dlambda",
    "q_profile",
    "q_e",
    "q_tilde",
    "verify_euclidean_identity",
    "verify_comparison",
    "z_lambda",
    "z_lambda_inverse",
    "volume_lower_bound",
    "implied_constant",
    "contradiction_diagnostic",
    "growth_pipeline",
    "default_lambda_grid",
    "default_rho_grid",
]

IDENTITY_TOL = 1e-6
COMPARISON_TOL = 1e-8
EQUALITY_LIMIT_TOL = 1e-12


def default_lambda_grid(lo_exp=-2.0, hi_exp=2.0, count=41):
    return np.logspace(lo_exp, hi_exp, count)


def default_rho_grid():
    return np.logspace(-3.0, 3.0, 25)


# -- kernel ------------------------------------------------------------------

def f_kernel(params: CknParams, lam, rho):
    """Layer-cake kernel f(lambda, rho).

    (lambda + rho^s)^(n/(a-1)) rho^-(ap+1) [rho^s ((n-1+a)(2-ap)/(1-a) + ap) + ap lambda],
    with s = 2 - ap.  Equals -d/drho of (lambda + rho^s)^((n-1+a)/(a-1)) rho^-ap.
    """
    r = np.asarray(rho, dtype=float)
    ap, s = params.ap, params.s
    A = params.beta * s + ap
    rs = r ** s
    with np.errstate(divide="ignore"):
        # log space keeps the large powers away from under/overflow
        out = np.exp(params.kernel_exp * np.log(lam + rs) - (ap + 1.0) * np.log(r)
                     + np.log(rs * A + ap * lam))
    return float(out) if out.ndim == 0 else out


def f_kernel_dlambda(params: CknParams, lam, rho):
    """Analytic partial derivative of :func:`f_kernel` in lambda."""
    r = np.asarray(rho, dtype=float)
    ap, s, m = params.ap, params.s, params.kernel_exp
    A = params.beta * s + ap
    rs = r ** s
    # m A + ap and m + 1 are both negative, so the bracket has one sign
    bracket = -(rs * (m * A + ap) + ap * lam * (m + 1.0))
    with np.errstate(divide="ignore"):
        out = -np.exp((m - 1.0) * np.log(lam + rs) - (ap + 1.0) * np.log(r) + np.log(bracket))
    return float(out) if out.ndim == 0 else out


# -- Q functions ---------------------------------------------------------------

@dataclass(frozen=True)
class QEvaluation:
    lam: float
    value: float
    derivative: float
    quadrature_error: float
    derivative_error: float = 0.0


def _profile_tail_exponent(profile: Profile) -> Optional[float]:
    return None if profile.tail is None else profile.tail.exponent


def q_profile(profile: Profile, params: CknParams, lam: float,
              rel_tol: float = DEFAULT_REL_TOL) -> QEvaluation:
    """Q(lambda) and Q'(lambda) for an arbitrary radial volume profile."""
    if not lam > 0:
        raise DomainError(f"lambda must be > 0, got {lam}")
    n = params.n
    k = _profile_tail_exponent(profile)
    if k is None:
        raise InsufficientDataError(
            "the volume profile has no tail model; the improper integral cannot be formed")
    if k >= 2 * n - 2:
        raise DomainError(
            f"volume growth rho^{k:g} makes the Q integral diverge (needs exponent < {2 * n - 2})")
    c = 1.0 / params.beta
    scale = lam ** params.length_scale_exp
    tail_hint = k + 1.0 - 2.0 * n
    # near 0: V ~ rho^n and f ~ rho^-(ap+1) (a > 0) or rho (a = 0)
    zero_exp = n - 1.0 - params.ap if params.ap > 0 else n + 1.0
    hints = dict(scale=scale, singular_at_zero=params.ap > 0, zero_exponent=zero_exp)

    def family(l, r):
        return c * profile(r) * f_kernel(params, l, r)

    def dfamily(l, r):
        return c * profile(r) * f_kernel_dlambda(params, l, r)

    cuts = [b for b in profile.breakpoints if b > 0]
    value = err = dval = derr = 0.0
    lo = 0.0
    for b in cuts:
        piece = Integrand(lambda r: family(lam, r), **hints) if lo == 0.0 else (
            lambda r: family(lam, r))
        res = integrate_interval(piece, lo, b, rel_tol)
        dres = differentiate_under_integral(family, dfamily, lam, rel_tol, lower=lo, upper=b,
                                            **(hints if lo == 0.0 else {}))
        value += res.value
        err += res.abs_error_estimate
        dval += dres.value
        derr += dres.abs_error_estimate
        lo = b
    tail_hints = dict(hints) if lo == 0.0 else dict(scale=max(scale, lo))
    res = integrate_improper(Integrand(lambda r: family(lam, r), tail_exponent_hint=tail_hint,
                                       **tail_hints), rel_tol, lower=lo)
    dres = differentiate_under_integral(family, dfamily, lam, rel_tol, lower=lo,
                                        tail_exponent_hint=tail_hint - params.s, **tail_hints)
    value += res.value
    err += res.abs_error_estimate
    dval += dres.value
    derr += dres.abs_error_estimate
    if not (0.0 < value < math.inf and -math.inf < dval < 0.0):
        raise DomainError(
            f"Q({lam:g}) is not representable in double precision for n={n}, a={params.a:g}; "
            f"move lambda towards 1")
    return QEvaluation(float(lam), value, dval, err, derr)


def _euclidean_profile(n: int) -> AnalyticProfile:
    return AnalyticProfile.power_law(unit_ball_volume(n), n, description=f"omega_{n} rho^{n}")


def q_e(params: CknParams, lam: float, rel_tol: float = DEFAULT_REL_TOL) -> QEvaluation:
    """Q_E(lambda) and Q_E'(lambda), using the Euclidean profile omega_n rho^n."""
    return q_profile(_euclidean_profile(params.n), params, lam, rel_tol)


def q_tilde(space: MetricMeasureSpace, params: CknParams, lam: float,
            rel_tol: float = DEFAULT_REL_TOL) -> QEvaluation:
    """Q-tilde(lambda) for ``space``, which must be declared unbounded."""
    if not space.unbounded:
        raise DomainError(f"space {space.name!r} is bounded; no CKN inequality can hold there")
    return q_profile(space.profile, params, lam, rel_tol)


@dataclass(frozen=True)
class IdentityReport:
    lambda_grid: tuple
    lhs: tuple
    rhs: tuple
    residuals: tuple
    max_residual: float
    rhs_positive: bool

    @property
    def passes(self) -> bool:
        return self.max_residual <= IDENTITY_TOL and self.rhs_positive


def _ode_sides(params: CknParams, C: float, ev: QEvaluation):
    n = params.n
    lhs = (-ev.derivative) ** (2.0 / params.p)
    bracket = params.beta * ev.value + ev.lam * ev.derivative
    return lhs, C * C * (n - 2.0) ** 2 * bracket, bracket


def verify_euclidean_identity(params: CknParams, lambda_grid: Sequence[float],
                              rel_tol: float = DEFAULT_REL_TOL) -> IdentityReport:
    """Residual of (-Q_E')^(2/p) = K_a^2 (n-2)^2 ((n-1+a)/(1-a) Q_E + lambda Q_E')."""
    K = sharp_constant(params).value
    lhs, rhs, res = [], [], []
    positive = True
    for lam in lambda_grid:
        ev = q_e(params, float(lam), rel_tol)
        l, r, bracket = _ode_sides(params, K, ev)
        positive &= bracket > 0
        lhs.append(l)
        rhs.append(r)
        res.append(abs(l - r) / abs(r))
    return IdentityReport(tuple(float(x) for x in lambda_grid), tuple(lhs), tuple(rhs),
                          tuple(res), max(res), bool(positive))


@dataclass(frozen=True)
class ComparisonVerdict:
    """Q-tilde against the ODE solution q on a lambda grid.

    ``holds`` iff min(Q-tilde - q) >= -tol |q|.  ``ode_slack`` is the
    relative slack of the differential inequality for Q-tilde (negative
    means violated); ``mechanism_holds`` records whether (Q-tilde - q)' >= 0
    wherever q >= Q-tilde, the monotonicity step of the comparison argument.
    """

    lambda_grid: tuple
    q_tilde_values: tuple
    q_values: tuple
    gaps: tuple
    min_gap: float
    min_relative_gap: float
    holds: bool
    ode_slack: tuple
    min_ode_slack: float
    ode_holds: bool
    mechanism_holds: bool
    equality_limit: bool
    tol: float

    def as_dict(self):
        return asdict(self)


def _comparison_factor(params: CknParams, C: float, K: float) -> float:
    return (K / C) ** (params.n / (1.0 - params.a))


def verify_comparison(space: MetricMeasureSpace, params: CknParams, C: float,
                      lambda_grid: Sequence[float] = None, tol: float = COMPARISON_TOL,
                      rel_tol: float = DEFAULT_REL_TOL) -> ComparisonVerdict:
    """Check Q-tilde(lambda) >= q(lambda) = (K_a/C)^(n/(1-a)) Q_E(lambda) on a grid.

    The audits (VD)/(AR) are not enforced here; the pipeline runs them.  At
    C = K_a the comparison is an equality limit and is checked non-strictly;
    the verdict flags it.
    """
    K = sharp_constant(params).value
    if C < K * (1.0 - EQUALITY_LIMIT_TOL):
        raise DomainError(f"C={C} is below the sharp constant K_a={K}")
    grid = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, float)
    factor = _comparison_factor(params, C, K)
    qt, qv, gaps, slack = [], [], [], []
    mechanism = True
    for lam in grid:
        et = q_tilde(space, params, float(lam), rel_tol)
        ee = q_e(params, float(lam), rel_tol)
        q, dq = factor * ee.value, factor * ee.derivative
        qt.append(et.value)
        qv.append(q)
        gaps.append(et.value - q)
        lhs, rhs, _ = _ode_sides(params, C, et)
        slack.append((rhs - lhs) / abs(rhs) if rhs != 0 else -math.inf)
        if q >= et.value * (1.0 - tol) and et.derivative - dq < -tol * abs(dq):
            mechanism = False
    rel = [g / abs(q) for g, q in zip(gaps, qv)]
    return ComparisonVerdict(
        tuple(float(x) for x in grid), tuple(qt), tuple(qv), tuple(gaps),
        float(min(gaps)), float(min(rel)), bool(min(rel) >= -tol),
        tuple(slack), float(min(slack)), bool(min(slack) >= -IDENTITY_TOL), mechanism,
        bool(abs(C - K) / K < EQUALITY_LIMIT_TOL), tol)


# -- z_lambda ----------------------------------------------------------------

def _z_coef(params: CknParams, C: float) -> float:
    return 1.0 / (C * C * (params.n - 2.0) ** 2)


def z_lambda(params: CknParams, C: float, lam: float, rho):
    """z(rho) = C^-2 (n-2)^-2 rho^(2/p) + lambda rho."""
    r = np.asarray(rho, dtype=float)
    out = _z_coef(params, C) * r ** (2.0 / params.p) + lam * r
    return float(out) if out.ndim == 0 else out


def z_lambda_inverse(params: CknParams, C: float, lam: float, y: float) -> float:
    """The unique rho > 0 with z(rho) = y (safeguarded Newton on a bracket)."""
    if not y > 0:
        raise DomainError(f"y must be > 0, got {y}")
    if not (lam > 0 and C > 0):
        raise DomainError("lambda and C must be positive")
    c, e = _z_coef(params, C), 2.0 / params.p
    lo = 0.0
    hi = min(y / lam, (y / c) ** (1.0 / e))
    rho = hi
    for _ in range(200):
        zr = c * rho ** e + lam * rho
        diff = zr - y
        if abs(diff) <= 1e-13 * y:
            return rho
        if diff > 0:
            hi = rho
        else:
            lo = rho
        dz = c * e * rho ** (e - 1.0) + lam
        nxt = rho - diff / dz
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        rho = nxt
    return rho  # pragma: no cover - Newton/bisection always converges in far fewer steps


# -- volume bound and pipeline -------------------------------------------------

def volume_lower_bound(params: CknParams, C: float, C0: float, rho):
    """C0^-1 (K_a/C)^(n/(1-a)) omega_n rho^n."""
    K = sharp_constant(params).value
    if C < K:
        raise DomainError(f"the bound needs C >= K_a = {K!r}, got C={C!r}")
    if C0 < 1:
        raise DomainError(f"C0 must be >= 1, got {C0}")
    r = np.asarray(rho, dtype=float)
    out = _comparison_factor(params, C, K) / C0 * unit_ball_volume(params.n) * r ** params.n
    return float(out) if out.ndim == 0 else out


def implied_constant(params: CknParams, C0: float, volume, rho):
    """Smallest C for which the volume lower bound holds at radius rho."""
    K = sharp_constant(params).value
    ratio = C0 * np.asarray(volume, float) / (unit_ball_volume(params.n) * np.asarray(rho, float) ** params.n)
    out = K * ratio ** (-(1.0 - params.a) / params.n)
    return float(out) if np.ndim(out) == 0 else out


def contradiction_diagnostic(params: CknParams, C: float, C0: float, r0: float,
                             delta0: float, rel_tol: float = DEFAULT_REL_TOL) -> dict:
    """Constants of M1 lam^e1 <= M2 lam^e2 + M3 lam^(e2+1) and where it breaks.

    If the large-scale volume ratio stayed below (K_a/C)^(n/(1-a)) - delta0
    beyond r0, this inequality would have to hold for every lambda; the
    returned ``lambda_star`` is where it fails.
    """
    n, a, ap = params.n, params.a, params.ap
    K = sharp_constant(params).value
    kappa = _comparison_factor(params, C, K)
    w = unit_ball_volume(n)
    A = params.beta * params.s + ap
    M1 = delta0 * params.beta * q_e(params, 1.0, rel_tol).value
    M2 = (C0 - kappa + delta0) * w * A * r0 ** (n - 2 * ap + 2) / (n - 2 * ap + 2)
    M3 = (C0 - kappa + delta0) * w * ap * r0 ** (n - ap) / (n - ap)
    e1 = params.scaling_exp
    e2 = params.kernel_exp

    def excess(log_lam):
        lam = math.exp(log_lam)
        # divided through by lam^e1
        return M2 * lam ** (e2 - e1) + M3 * lam ** (e2 + 1.0 - e1) - M1

    lo, hi = -50.0, 50.0
    if excess(hi) >= 0:
        lam_star = math.inf
    elif excess(lo) < 0:
        lam_star = 0.0
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if excess(mid) >= 0:
                lo = mid
            else:
                hi = mid
        lam_star = math.exp(hi)
    return {"r0": r0, "delta0": delta0, "M1": M1, "M2": M2, "M3": M3,
            "exponents": [e1, e2, e2 + 1.0], "lambda_star": lam_star}


@dataclass
class Stage:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    message: str = ""


@dataclass
class GrowthReport:
    space: str
    params: dict
    K: float
    C: float
    C0: float
    equality_limit: bool
    stages: list
    lambda_rows: list = field(default_factory=list)  # (lambda, Q-tilde, q, gap)
    rho_rows: list = field(default_factory=list)     # (rho, mu, lower bound, implied C)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.stages)

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return _json_safe({
            "space": self.space, "params": self.params, "K": self.K, "C": self.C,
            "C0": self.C0, "equality_limit": self.equality_limit, "passed": self.passed,
            "stages": [{"name": s.name, "passed": s.passed, "message": s.message,
                        "details": s.details} for s in self.stages],
            "lambda_rows": self.lambda_rows, "rho_rows": self.rho_rows,
        })

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"space {self.space}  n={self.params['n']} a={self.params['a']:g}  "
                 f"K_a={self.K:.12g}  C={self.C:.12g}  C0={self.C0:g}"]
        if self.equality_limit:
            lines.append("note: C = K_a, comparison checked as a non-strict equality limit")
        width = max(len(s.name) for s in self.stages)
        for s in self.stages:
            lines.append(f"  {s.name:<{width}}  {'PASS' if s.passed else 'FAIL'}  {s.message}")
        if self.rho_rows:
            lines.append("")
            lines.append(f"  {'rho':>12} {'mu(B)':>14} {'lower bound':>14} {'implied C':>14}")
            for r, v, b, c in self.rho_rows:
                lines.append(f"  {r:12.5g} {v:14.7g} {b:14.7g} {c:14.7g}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def write_csvs(self, outdir) -> list:
        os.makedirs(outdir, exist_ok=True)
        paths = []
        for fname, header, rows in (
                ("comparison.csv", ["lambda", "q_tilde", "q", "gap"], self.lambda_rows),
                ("volume.csv", ["rho", "mu", "bound", "implied_C"], self.rho_rows)):
            path = os.path.join(outdir, fname)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for row in rows:
                    w.writerow([repr(float(x)) for x in row])
            paths.append(path)
        return paths


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def growth_pipeline(space: MetricMeasureSpace, params: CknParams, C: float, C0: float,
                    lambda_grid=None, rho_grid=None, vd_grid=None, ar_sequence=None,
                    tol: float = COMPARISON_TOL, tight_tol: float = 1e-8,
                    rel_tol: float = DEFAULT_REL_TOL) -> GrowthReport:
    """Run the audits, the comparison and the volume bounds on ``space``.

    Stages run in order and each is reported; a failing stage does not stop
    later ones.  Only the profile is consulted, so the report does not
    depend on which centre the space is rooted at.
    """
    if not space.unbounded:
        raise DomainError(f"space {space.name!r} is bounded; the volume-growth bound does "
                          f"not apply (a bounded space cannot carry the inequality)")
    n = params.n
    K = sharp_constant(params).value
    if C < K * (1.0 - EQUALITY_LIMIT_TOL):
        raise DomainError(f"C={C} is below the sharp constant K_a={K}")
    lambda_grid = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, float)
    rho_grid = default_rho_grid() if rho_grid is None else np.asarray(rho_grid, float)
    vd_grid = log_pairs() if vd_grid is None else vd_grid
    ar_sequence = np.geomspace(1e-2, 1e-4, 9) if ar_sequence is None else ar_sequence
    stages = []

    vd = check_vd(space, n, C0, vd_grid)
    stages.append(Stage("vd", vd.passes, vd.as_dict(),
                        f"max ratio statistic {vd.statistic:.10g} vs C0={C0:g}"))
    try:
        ar = check_ar(space, n, ar_sequence)
        stages.append(Stage("ar", ar.passes, ar.as_dict(),
                            f"liminf estimate {ar.liminf_estimate:.10g}"))
    except InsufficientDataError as exc:
        stages.append(Stage("ar", False, {}, f"insufficient data: {exc}"))

    verdict = verify_comparison(space, params, C, lambda_grid, tol, rel_tol)
    stages.append(Stage(
        "comparison", verdict.holds,
        {"min_gap": verdict.min_gap, "min_relative_gap": verdict.min_relative_gap,
         "min_ode_slack": verdict.min_ode_slack, "ode_holds": verdict.ode_holds,
         "mechanism_holds": verdict.mechanism_holds},
        f"min relative gap {verdict.min_relative_gap:.3g}, "
        f"differential-inequality slack {verdict.min_ode_slack:.3g}"))

    vol = space.profile(rho_grid)
    bound = volume_lower_bound(params, max(C, K), C0, rho_grid)
    implied = implied_constant(params, C0, vol, rho_grid)
    rel = vol / bound - 1.0
    lower_ok = bool(np.all(rel >= -tight_tol))
    lower_details = {"min_relative_excess": float(np.min(rel)),
                     "max_relative_excess": float(np.max(rel)),
                     "equality_tight": bool(np.max(np.abs(rel)) <= tight_tol),
                     "implied_C": [float(x) for x in implied],
                     "implied_C_monotone_increasing": bool(np.all(np.diff(implied) > 0))}
    msg = f"min mu/bound - 1 = {np.min(rel):.3g}"
    if not lower_ok:
        msg += f"; implied C grows to {implied[-1]:.6g} at rho={rho_grid[-1]:g}"
    stages.append(Stage("lower_bound", lower_ok, lower_details, msg))

    upper = C0 * unit_ball_volume(n) * rho_grid ** n
    up_rel = vol / upper - 1.0
    stages.append(Stage("upper_bound", bool(np.all(up_rel <= tight_tol)),
                        {"max_relative_excess": float(np.max(up_rel))},
                        f"max mu/(C0 omega_n rho^n) - 1 = {np.max(up_rel):.3g}"))

    # large-scale density s0 against kappa; when it falls short, show where
    # the scaling inequality used in the contradiction argument breaks
    kappa = _comparison_factor(params, max(C, K), K)
    ratio = vol / (unit_ball_volume(n) * rho_grid ** n)
    s0 = float(ratio[-1])
    diag = {"s0_estimate": s0, "kappa": kappa}
    if s0 < kappa * (1.0 - tight_tol):
        delta0 = 0.5 * (kappa - s0)
        ok = ratio <= kappa - delta0
        idx = len(ok) - 1
        while idx > 0 and ok[idx - 1]:
            idx -= 1
        diag.update(contradiction_diagnostic(params, max(C, K), C0, float(rho_grid[idx]),
                                             delta0, rel_tol))
    stages.append(Stage("s0_claim", s0 >= kappa * (1.0 - tight_tol), diag,
                        f"s0 ~ {s0:.6g} vs (K_a/C)^(n/(1-a)) = {kappa:.6g}"))

    return GrowthReport(
                        space.name, params.as_dict(), K, float(C), float(C0), verdict.equality_limit, stages,
                        [[l, qt, q, g] for l, qt, q, g in zip(verdict.lambda_grid, verdict.q_tilde_values,
                        verdict.q_values, verdict.gaps)],
                        [[float(r), float(v), float(b), float(c)] for r, v, b, c in
                        zip(rho_grid, vol, bound, implied)])
