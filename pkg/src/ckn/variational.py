"""Radial Rayleigh quotient of the CKN inequality and a direct minimizer.

For radial u(x) = h(|x|) the inequality reduces to the one-dimensional
quotient

    R[h] = alpha_n^(1/2 - 1/p) (int h'^2 rho^(n-1))^(1/2) / (int h^p rho^(n-1-ap))^(1/p),

alpha_n = n omega_n, whose infimum over non-increasing h is 1/K_a and is
attained by the extremal family.  Profiles live on a grid starting at 0
and are continued beyond the last node by a power law.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded
from scipy.optimize import isotonic_regression

from .core import CknParams, extremal_profile, sharp_constant, unit_ball_volume
from .errors import ConvergenceError, DegenerateInputError, DomainError, ParseError

__all__ = [
    "RadialProfile",
    "ExtremalCheck",
    "MinimizationResult",
    "rayleigh_quotient",
    "discrete_quotient",
    "discrete_quotient_gradient",
    "verify_extremal",
    "resolution_study",
    "extremal_grid",
    "minimizer_grid",
    "initial_profile",
    "minimize_quotient",
    "fit_extremal",
    "project_nonincreasing",
    "save_profile",
    "load_profile",
    "save_trace",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class RadialProfile:
    """Grid samples of a radial profile h plus its power-law continuation.

    ``grid`` starts at 0 and is strictly increasing; beyond ``grid[-1]`` the
    profile is ``values[-1] * (rho / grid[-1]) ** tail_exponent``.
    """

    grid: np.ndarray
    values: np.ndarray
    tail_exponent: float

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 3:
            raise DomainError("grid and values must be 1D arrays of equal length >= 3")
        if g[0] != 0.0 or np.any(np.diff(g) <= 0):
            raise DomainError("grid must start at 0 and be strictly increasing")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("profile values must be finite and non-negative")
        if not (math.isfinite(self.tail_exponent) and self.tail_exponent < 0):
            raise DomainError("tail exponent must be negative")
        g.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "tail_exponent", float(self.tail_exponent))

    @classmethod
    def from_function(cls, func, grid, tail_exponent):
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.asarray(func(grid), dtype=float), tail_exponent)

    def with_values(self, values) -> "RadialProfile":
        return RadialProfile(self.grid, values, self.tail_exponent)

    def __call__(self, rho):
        r = np.asarray(rho, dtype=float)
        inside = np.interp(r, self.grid, self.values)
        rm = self.grid[-1]
        with np.errstate(divide="ignore"):
            tail = self.values[-1] * (np.maximum(r, rm) / rm) ** self.tail_exponent
        out = np.where(r <= rm, inside, tail)
        return float(out) if out.ndim == 0 else out

    @property
    def is_nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) <= 0))


def _alpha_factor(params: CknParams) -> float:
    alpha = params.n * unit_ball_volume(params.n)
    return alpha ** (0.5 - 1.0 / params.p)


def _tail_coefficients(params: CknParams, rm: float, tau: float):
    """Tail integrals per unit h_M^2 (numerator) and h_M^p (denominator)."""
    n, p, ap = params.n, params.p, params.ap
    e_num = 2.0 * tau + n - 2.0
    e_den = p * tau + n - ap
    if e_num >= 0 or e_den >= 0:
        raise DomainError(
            f"tail exponent {tau:g} makes the quotient integrals diverge "
            f"(needs < {min((2.0 - n) / 2.0, -(n - ap) / p):g})")
    return tau * tau * rm ** (n - 2.0) / (-e_num), rm ** (n - ap) / (-e_den)


def _quotient(params, num, den):
    if not den > 0:
        raise DegenerateInputError("the denominator integral vanishes (zero profile)")
    return _alpha_factor(params) * math.sqrt(num) / den ** (1.0 / params.p)


def _spline_integrals(params: CknParams, g, v):
    """Both quotient integrals of the PCHIP interpolant over [g[0], g[-1]]."""
    n, p, ap = params.n, params.p, params.ap
    spline = PchipInterpolator(g, v)
    dspline = spline.derivative()
    half = 0.5 * np.diff(g)
    mid = 0.5 * (g[1:] + g[:-1])
    r = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    w = half[:, None] * _GL_WEIGHTS[None, :]
    num = float(np.sum(w * dspline(r) ** 2 * r ** (n - 1.0)))
    vals = np.maximum(spline(r), 0.0)
    den = float(np.sum(w * vals ** p * r ** (n - 1.0 - ap)))
    return num, den


def _extremal_integrals(params: CknParams, lam: float, r0: float, r1: float = math.inf):
    """Exact quotient integrals of the extremal over [r0, r1].

    With u = rho^s and t = u / (lam + u) both integrands become Beta
    densities, so each piece is a difference of incomplete Beta functions.
    """
    n, p, ap, s, e = params.n, params.p, params.ap, params.s, params.extremal_exp
    t0 = r0 ** s / (lam + r0 ** s)
    t1 = 1.0 if math.isinf(r1) else r1 ** s / (lam + r1 ** s)

    def piece(c, d):
        # the complement keeps precision when t0 is close to 1
        return special.beta(c, d) * (special.betaincc(c, d, t0) - special.betaincc(c, d, t1))

    c_den = (n - ap) / s
    d_den = -e * p - c_den
    c_num = 2.0 + (n - 2.0) / s
    d_num = 2.0 - 2.0 * e - c_num
    den = lam ** -d_den * piece(c_den, d_den) / s
    num = e * e * s * lam ** -d_num * piece(c_num, d_num)
    return float(num), float(den)


def rayleigh_quotient(params: CknParams, h: RadialProfile, method: str = "spline") -> float:
    """The radial CKN quotient of ``h``.

    ``method="spline"`` interpolates with a monotone cubic (PCHIP) and
    integrates each cell with 8-point Gauss-Legendre; ``"linear"`` is the
    quotient of the piecewise-linear interpolant, the functional the
    minimizer works on.
    """
    if method == "linear":
        return discrete_quotient(params, h)
    if method != "spline":
        raise DomainError(f"unknown method {method!r}")
    g, v = h.grid, h.values
    tn, td = _tail_coefficients(params, g[-1], h.tail_exponent)
    num, den = _spline_integrals(params, g, v)
    num += tn * v[-1] ** 2
    den += td * v[-1] ** params.p
    return _quotient(params, num, den)


# -- discrete (P1) quotient ----------------------------------------------------

@dataclass(frozen=True)
class _P1Weights:
    stiffness: np.ndarray   # per cell, multiplies (v_{i+1} - v_i)^2
    t: np.ndarray           # Gauss points per cell as fractions in (0, 1)
    weight: np.ndarray      # cell x point quadrature weights times rho^(n-1-ap)
    mass: np.ndarray        # per node integral of its hat function against rho^(n-1-ap)
    tail_num: float
    tail_den: float


def _p1_weights(params: CknParams, grid, tau) -> _P1Weights:
    n, ap = params.n, params.ap
    g = np.asarray(grid, dtype=float)
    d = np.diff(g)
    stiff = (g[1:] ** n - g[:-1] ** n) / (n * d * d)
    t = 0.5 * (_GL_NODES + 1.0)
    r = g[:-1, None] + d[:, None] * t[None, :]
    weight = 0.5 * d[:, None] * _GL_WEIGHTS[None, :] * r ** (n - 1.0 - ap)
    mass = np.zeros_like(g)
    mass[:-1] += weight @ (1.0 - t)
    mass[1:] += weight @ t
    tn, td = _tail_coefficients(params, g[-1], tau)
    return _P1Weights(stiff, t, weight, mass, tn, td)


def _cell_values(W: _P1Weights, v):
    return v[:-1, None] * (1.0 - W.t)[None, :] + v[1:, None] * W.t[None, :]


def _num_den(W: _P1Weights, v, p):
    dv = np.diff(v)
    num = float(np.dot(W.stiffness, dv * dv)) + W.tail_num * v[-1] ** 2
    den = float(np.sum(W.weight * _cell_values(W, v) ** p)) + W.tail_den * v[-1] ** p
    return num, den


def discrete_quotient(params: CknParams, h: RadialProfile) -> float:
    """Quotient of the piecewise-linear interpolant, tail included.

    Both integrals are those of an actual H^1 function, so the value is
    never below 1/K_a beyond quadrature error.
    """
    W = _p1_weights(params, h.grid, h.tail_exponent)
    return _quotient(params, *_num_den(W, h.values, params.p))


def _log_quotient_gradient(W: _P1Weights, v, p):
    num, den = _num_den(W, v, p)
    dv = np.diff(v)
    gnum = np.zeros_like(v)
    flux = 2.0 * W.stiffness * dv
    gnum[:-1] -= flux
    gnum[1:] += flux
    gnum[-1] += 2.0 * W.tail_num * v[-1]
    pw = p * W.weight * _cell_values(W, v) ** (p - 1.0)
    gden = np.zeros_like(v)
    gden[:-1] += pw @ (1.0 - W.t)
    gden[1:] += pw @ W.t
    gden[-1] += p * W.tail_den * v[-1] ** (p - 1.0)
    return 0.5 * gnum / num - gden / (p * den), num, den


def discrete_quotient_gradient(params: CknParams, h: RadialProfile) -> np.ndarray:
    """Gradient of :func:`discrete_quotient` with respect to the node values."""
    W = _p1_weights(params, h.grid, h.tail_exponent)
    glog, num, den = _log_quotient_gradient(W, h.values, params.p)
    return _quotient(params, num, den) * glog


# -- extremal checks -------------------------------------------------------------

def extremal_grid(params: CknParams, lam: float = 1.0, nodes: int = 2000,
                  rho_max_factor: float = 1e3, rho_min_factor: float = 1e-4) -> np.ndarray:
    """0 followed by ``nodes - 1`` log-spaced radii, scaled by lambda^(1/(2-ap))."""
    if nodes < 3:
        raise DomainError("need at least 3 nodes")
    scale = lam ** params.length_scale_exp
    return np.concatenate([[0.0], scale * np.geomspace(rho_min_factor, rho_max_factor,
                                                       nodes - 1)])


@dataclass(frozen=True)
class ExtremalCheck:
    lam: float
    nodes: int
    quotient: float
    target: float
    gap: float

    def as_dict(self):
        return {"lambda": self.lam, "nodes": self.nodes, "quotient": self.quotient,
                "target": self.target, "gap": self.gap}


def verify_extremal(params: CknParams, lam: float = 1.0, nodes: int = 2000,
                    rho_max_factor: float = 1e3, method: str = "spline") -> ExtremalCheck:
    """Relative gap between the quotient of the sampled extremal and 1/K_a.

    The profile is sampled up to the last node and its exact tail
    integrals are added beyond it.
    """
    grid = extremal_grid(params, lam, nodes, rho_max_factor)
    h = RadialProfile(grid, extremal_profile(params, lam, grid), 2.0 - params.n)
    # the first cell holds a rho^s cusp and is integrated exactly, like the tail
    g, v = grid[1:], h.values[1:]
    if method == "spline":
        num, den = _spline_integrals(params, g, v)
    elif method == "linear":
        W = _p1_weights(params, g, h.tail_exponent)
        num, den = _num_den(W, v, params.p)
        num -= W.tail_num * v[-1] ** 2
        den -= W.tail_den * v[-1] ** params.p
    else:
        raise DomainError(f"unknown method {method!r}")
    hn, hd = _extremal_integrals(params, lam, 0.0, grid[1])
    tn, td = _extremal_integrals(params, lam, grid[-1])
    num, den = num + hn + tn, den + hd + td
    q = _quotient(params, num, den)
    target = sharp_constant(params).inverse
    return ExtremalCheck(float(lam), int(nodes), q, target, abs(q - target) / target)


def resolution_study(params: CknParams, lam: float = 1.0,
                     node_counts=(50, 100, 200, 500, 1000, 2000)) -> list:
    return [verify_extremal(params, lam, m) for m in node_counts]


# -- minimizer -------------------------------------------------------------------

def minimizer_grid(nodes: int = 400, rho_min: float = 1e-3, rho_max: float = 1e3) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(rho_min, rho_max, nodes - 1)])


def initial_profile(params: CknParams, kind: str = "gaussian", seed: Optional[int] = None,
                    grid=None) -> RadialProfile:
    """Starting profile for the minimizer.

    ``kind`` is ``gaussian``, ``plateau``, ``extremal:<lambda>`` or
    ``random`` (a seeded random non-increasing step profile).
    """
    grid = minimizer_grid() if grid is None else np.asarray(grid, dtype=float)
    tau = 2.0 - params.n
    if kind == "gaussian":
        v = np.exp(-grid ** 2)
    elif kind == "plateau":
        v = np.clip(2.0 - grid, 0.0, 1.0)
    elif kind.startswith("extremal"):
        _, _, arg = kind.partition(":")
        lam = float(arg) if arg else 1.0
        v = extremal_profile(params, lam, grid)
    elif kind == "random":
        rng = np.random.default_rng(seed)
        # a few random levels dropping at random radii inside [0.1, 10]
        k = int(rng.integers(2, 7))
        cuts = np.sort(10.0 ** rng.uniform(-1.0, 1.0, size=k))
        drops = rng.uniform(0.1, 1.0, size=k)
        level = np.concatenate([[drops.sum()], drops.sum() - np.cumsum(drops)])
        v = level[np.searchsorted(cuts, grid, side="right")]
        v = v + 1e-3 * drops.sum() * (1.0 + grid) ** tau
    else:
        raise DomainError(f"unknown initial profile {kind!r}")
    return RadialProfile(grid, v, tau)


def project_nonincreasing(values, weights=None) -> np.ndarray:
    """Weighted L2 projection onto non-negative, non-increasing sequences."""
    res = isotonic_regression(np.asarray(values, dtype=float), weights=weights, increasing=False)
    return np.maximum(res.x, 0.0)


@dataclass
class MinimizationResult:
    profile: RadialProfile
    quotient: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)   # (iteration, quotient, step)

    def __iter__(self):
        yield self.profile
        yield self.quotient


def _preconditioner_bands(W: _P1Weights, shift: float):
    """Banded form of the P1 stiffness matrix plus a small mass shift."""
    m = len(W.mass)
    diag = np.zeros(m)
    diag[:-1] += W.stiffness
    diag[1:] += W.stiffness
    diag[-1] += W.tail_num
    diag += shift * W.mass
    off = -W.stiffness
    ab = np.zeros((3, m))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    return ab


def minimize_quotient(params: CknParams, init: RadialProfile, seed: Optional[int] = None,
                      iters: int = 3000, tol: float = 1e-9) -> MinimizationResult:
    """Projected, Sobolev-preconditioned descent on the discrete quotient.

    Each step moves along -K^{-1} grad(log R) (K the P1 stiffness matrix),
    projects onto the non-increasing cone, renormalises the denominator to
    one and backtracks until the quotient does not increase.  Stops when
    the relative decrease over 5 accepted steps falls below ``tol``; the
    continuum quotient is flat under dilation, so the discrete one only
    drifts slowly along that direction and a tighter rule would chase
    discretization error.
    ``seed`` only enters through a random initial profile; the descent
    itself is deterministic.
    """
    del seed
    p = params.p
    W = _p1_weights(params, init.grid, init.tail_exponent)
    ab = _preconditioner_bands(W, 1e-8)

    def normalise(v):
        den = _num_den(W, v, p)[1]
        if not den > 0:
            raise DegenerateInputError("profile collapsed to zero")
        return v / den ** (1.0 / p)

    v = normalise(project_nonincreasing(init.values))
    q = _quotient(params, *_num_den(W, v, p))
    trace = [(0, q, 0.0)]
    if iters <= 0:
        return MinimizationResult(init.with_values(v), q, 0, False, trace)
    step = 1.0
    history = [q]
    converged = False
    it = 0
    for it in range(1, iters + 1):
        glog, _, _ = _log_quotient_gradient(W, v, p)
        d = solve_banded((1, 1), ab, glog)
        # scale so that a unit step changes v by about its own size
        d *= 1.0 / max(np.max(np.abs(d)) / max(np.max(v), 1e-300), 1e-300)
        accepted = False
        for _ in range(60):
            cand = project_nonincreasing(v - step * 0.1 * d)
            if np.any(cand > 0):
                cand = normalise(cand)
                qc = _quotient(params, *_num_den(W, cand, p))
                if qc <= q * (1.0 + 1e-12):
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if step < 1e-12:
                converged = True
                break
            exc = ConvergenceError("line search failed to find a non-increasing step",
                                   estimate=q, error=None)
            exc.trace = trace
            raise exc
        v, q = cand, qc
        trace.append((it, q, step))
        history.append(q)
        step = min(2.0 * step, 1.0)
        if len(history) > 5 and history[-6] - q <= tol * q:
            converged = True
            break
    return MinimizationResult(init.with_values(v), q, it, converged, trace)


def fit_extremal(params: CknParams, h: RadialProfile, lam_bounds=(1e-4, 1e4)):
    """Best L2 (on grid) fit c * h_lambda to ``h``; returns (lambda, c, relative residual)."""
    from scipy.optimize import minimize_scalar

    g, v = h.grid, h.values

    def resid(log_lam):
        e = extremal_profile(params, math.exp(log_lam), g)
        c = float(np.dot(e, v) / np.dot(e, e))
        return float(np.linalg.norm(v - c * e)), c

    out = minimize_scalar(lambda t: resid(t)[0], bounds=tuple(map(math.log, lam_bounds)),
                          method="bounded", options={"xatol": 1e-10})
    r, c = resid(out.x)
    return math.exp(out.x), c, r / float(np.linalg.norm(v))


# -- I/O -------------------------------------------------------------------------

def save_profile(h: RadialProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# tail: rho^{h.tail_exponent!r}\n")
        w = csv.writer(fh)
        w.writerow(["rho", "value"])
        for r, v in zip(h.grid, h.values):
            w.writerow([repr(float(r)), repr(float(v))])


def load_profile(path) -> RadialProfile:
    tau = None
    rows = []
    header_seen = False
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                body = text[1:].strip()
                if body.startswith("tail:"):
                    spec = body[5:].strip()
                    if not spec.startswith("rho^"):
                        raise ParseError(f"bad tail directive {spec!r}", lineno)
                    try:
                        tau = float(spec[4:])
                    except ValueError:
                        raise ParseError(f"bad tail exponent {spec[4:]!r}", lineno) from None
                continue
            cells = next(csv.reader([text]))
            if not header_seen:
                if [c.strip() for c in cells] != ["rho", "value"]:
                    raise ParseError("expected header 'rho,value'", lineno)
                header_seen = True
                continue
            if len(cells) != 2:
                raise ParseError(f"expected 2 columns, got {len(cells)}", lineno)
            try:
                rows.append((float(cells[0]), float(cells[1])))
            except ValueError:
                raise ParseError(f"non-numeric row {text!r}", lineno) from None
    if tau is None:
        raise ParseError("missing '# tail: rho^k' directive")
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return RadialProfile(arr[:, 0], arr[:, 1], tau)


def save_trace(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "quotient", "step"])
        for it, q, s in trace:
            w.writerow([int(it), repr(float(q)), repr(float(s))])
