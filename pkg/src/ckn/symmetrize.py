"""Decreasing rearrangement of grid functions with respect to a Minkowski norm.

A :class:`GridFunction` lives on a uniform grid of m^n cells with centres
x_i = (i - m//2) h, h = 2L/m, so the origin is a cell centre.  Every cell
carries the measure scale * h^n of the normalised measure mu_F.  The
rearrangement :func:`symmetrize` sorts cells by F-distance of their centre
from the origin (ties broken by row-major index) and fills them with the
values of u in decreasing order, so level sets become discrete F-balls of
exactly the same cell count.

The singular weight F(x)^(-ap) is infinite at the origin cell; there it is
replaced by its average over the F-ball of the same measure,
n/(n - ap) r^(-ap) with omega_n r^n = scale h^n.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CknParams, extremal_profile, sharp_constant, unit_ball_volume
from .errors import DomainError, ParseError
from .minkowski import MinkowskiNorm, norm_from_spec, normalized_measure

__all__ = [
    "GridFunction",
    "HLResult",
    "PSResult",
    "CknResult",
    "symmetrize",
    "check_hardy_littlewood",
    "check_polya_szego",
    "ckn_test",
    "dirichlet_energy",
    "weighted_lp_sum",
    "grid_from_function",
    "bump",
    "truncated_extremal",
    "smooth_test_functions",
    "random_grid_function",
    "save_grid_csv",
    "load_grid_csv",
    "save_grid_binary",
    "load_grid_binary",
    "PS_TOL",
    "BOUNDARY_LAYER",
]

PS_TOL = 0.02
BOUNDARY_LAYER = 2
MAGIC = b"CKNG"
FORMAT_VERSION = 1
_ORDER_CACHE: "OrderedDict[tuple, tuple]" = OrderedDict()
_ORDER_CACHE_SIZE = 2
_SLAB_CELLS = 1 << 20


def _norm_key(norm: MinkowskiNorm):
    try:
        return json.dumps(norm.spec(), sort_keys=True)
    except DomainError:
        return ("custom", id(norm))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Non-negative cell values on the box [-L, L)^n (m cells per axis).

    ``scale`` is the density of mu_F with respect to Lebesgue measure; by
    default it is taken from :func:`normalized_measure`.
    """

    n: int
    L: float
    m: int
    values: np.ndarray
    norm: MinkowskiNorm
    scale: float = math.nan

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if self.n < 1 or self.m < 2 * BOUNDARY_LAYER + 1:
            raise DomainError("grid needs n >= 1 and m > 2 * boundary layer")
        if v.shape != (self.m,) * self.n:
            raise DomainError(f"values must have shape {(self.m,) * self.n}, got {v.shape}")
        if self.norm.dim != self.n:
            raise DomainError("norm dimension does not match the grid")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise DomainError("box half-width L must be positive")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("grid values must be finite and non-negative")
        object.__setattr__(self, "values", v)
        if math.isnan(self.scale):
            object.__setattr__(self, "scale", normalized_measure(self.norm).scale)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.m

    @property
    def cell_measure(self) -> float:
        return self.scale * self.h ** self.n

    def axis(self) -> np.ndarray:
        return (np.arange(self.m) - self.m // 2) * self.h

    @property
    def origin_index(self) -> tuple:
        return (self.m // 2,) * self.n

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.n, self.L, self.m, values, self.norm, self.scale)

    def boundary_clear(self, values=None) -> bool:
        v = self.values if values is None else values
        b = BOUNDARY_LAYER
        for ax in range(self.n):
            lo = np.take(v, range(b), axis=ax)
            hi = np.take(v, range(self.m - b, self.m), axis=ax)
            if np.any(lo != 0) or np.any(hi != 0):
                return False
        return True

    def distances(self) -> np.ndarray:
        return _grid_geometry(self)[0]

    def __mul__(self, c):
        return self.with_values(self.values * float(c))

    __rmul__ = __mul__


def _norm_on_grid(norm: MinkowskiNorm, axis: np.ndarray, n: int) -> np.ndarray:
    m = len(axis)
    out = np.empty((m,) * n)
    rest = np.stack(np.meshgrid(*([axis] * (n - 1)), indexing="ij"), axis=-1) if n > 1 else None
    for i in range(m):
        if n == 1:
            out[i] = norm(np.array([axis[i]]))
        else:
            pts = np.concatenate([np.full(rest.shape[:-1] + (1,), axis[i]), rest], axis=-1)
            out[i] = norm(pts)
    return out


def _grid_geometry(u: GridFunction):
    """(F-distance of each centre, rearrangement order), cached per grid."""
    key = (u.n, u.m, float(u.L), _norm_key(u.norm))
    hit = _ORDER_CACHE.get(key)
    if hit is not None:
        _ORDER_CACHE.move_to_end(key)
        return hit
    dist = _norm_on_grid(u.norm, u.axis(), u.n)
    # quantise so that symmetric cells tie exactly; ties then fall back to
    # row-major order through the stable sort
    q = np.round(dist / u.h, 9)
    order = np.argsort(q, axis=None, kind="stable")
    dist.setflags(write=False)
    order.setflags(write=False)
    _ORDER_CACHE[key] = (dist, order)
    while len(_ORDER_CACHE) > _ORDER_CACHE_SIZE:
        _ORDER_CACHE.popitem(last=False)
    return dist, order


def symmetrize(u: GridFunction) -> GridFunction:
    """Discrete anisotropic decreasing rearrangement u* of ``u``."""
    if not u.boundary_clear():
        raise DomainError("support of u touches the boundary layer of the box")
    _, order = _grid_geometry(u)
    flat = np.sort(u.values, axis=None)[::-1]
    out = np.empty(u.values.size)
    out[order] = flat
    out = out.reshape(u.values.shape)
    if not u.boundary_clear(out):
        raise DomainError("the rearranged support would reach the boundary layer; enlarge L")
    return u.with_values(out)


# -- weighted sums and energies ----------------------------------------------------

def _origin_weight(params: CknParams, u: GridFunction) -> float:
    n, ap = u.n, params.ap
    r = (u.cell_measure / unit_ball_volume(n)) ** (1.0 / n)
    return n / (n - ap) * r ** (-ap)


def _weights(params: CknParams, u: GridFunction) -> np.ndarray:
    """F(x)^(-ap), with the origin cell replaced by its ball average."""
    dist = u.distances()
    if params.ap == 0:
        return np.ones_like(dist)
    w = np.empty_like(dist)
    with np.errstate(divide="ignore"):
        np.power(dist, -params.ap, out=w)
    w[u.origin_index] = _origin_weight(params, u)
    return w


def weighted_lp_sum(params: CknParams, u: GridFunction, exact: bool = False) -> float:
    """sum over cells of u^p F^(-ap) mu_F(cell)."""
    terms = u.values ** params.p * _weights(params, u)
    total = math.fsum(terms.ravel()) if exact else float(np.sum(terms))
    return total * u.cell_measure


def _dual_norm(norm: MinkowskiNorm):
    if norm.kind == "custom":
        raise DomainError("grid energies need a closed-form dual norm; custom norms are "
                          "not supported here")
    return norm.dual


def dirichlet_energy(u: GridFunction) -> float:
    """sum over cells of F*(Du)^2 mu_F(cell), Du by central differences.

    Values outside the box are taken as zero.  Evaluated in slabs along
    the first axis to bound memory.
    """
    dual = _dual_norm(u.norm)
    v, h, n, m = u.values, u.h, u.n, u.m
    padded = np.pad(v, 1)
    slab = max(1, _SLAB_CELLS // max(1, m ** (n - 1)))
    total = 0.0
    inner = (slice(1, m + 1),) * (n - 1)
    for i0 in range(0, m, slab):
        i1 = min(m, i0 + slab)
        grad = np.empty((i1 - i0,) + (m,) * (n - 1) + (n,))
        for ax in range(n):
            plus = [slice(i0 + 1, i1 + 1)] + list(inner)
            minus = [slice(i0 + 1, i1 + 1)] + list(inner)
            if ax == 0:
                plus[0] = slice(i0 + 2, i1 + 2)
                minus[0] = slice(i0, i1)
            else:
                plus[ax] = slice(2, m + 2)
                minus[ax] = slice(0, m)
            grad[..., ax] = (padded[tuple(plus)] - padded[tuple(minus)]) / (2.0 * h)
        total += float(np.sum(dual(grad) ** 2))
    return total * u.cell_measure


@dataclass(frozen=True)
class HLResult:
    lhs: float
    rhs: float
    holds: bool


@dataclass(frozen=True)
class PSResult:
    lhs: float        # energy of u*
    rhs: float        # energy of u
    margin: float     # lhs / rhs - 1; positive means a violation
    holds_within_tol: bool


@dataclass(frozen=True)
class CknResult:
    lhs: float
    rhs: float
    ratio: float


def check_hardy_littlewood(params: CknParams, u: GridFunction, rel_tol: float = 1e-12) -> HLResult:
    """int u^p F^(-ap) <= int (u*)^p F^(-ap), both as exactly rounded sums."""
    star = symmetrize(u)
    lhs = weighted_lp_sum(params, u, exact=True)
    rhs = weighted_lp_sum(params, star, exact=True)
    return HLResult(lhs, rhs, bool(lhs <= rhs * (1.0 + rel_tol)))


def check_polya_szego(params: CknParams, u: GridFunction, tol: float = PS_TOL) -> PSResult:
    """Energy of u* against energy of u; passes if E(u) >= E(u*) (1 - tol).

    The caller asserts that ``u`` samples a smooth function.  ``params``
    is accepted for a uniform signature; the energy does not depend on it.
    """
    del params
    if not u.norm.smooth:
        raise DomainError(
            f"{u.norm!r} is not smooth; the gradient comparison needs a smooth norm "
            f"(its dual is not differentiable, so finite-difference energies are not "
            f"meaningful)")
    star = symmetrize(u)
    lhs = dirichlet_energy(star)
    rhs = dirichlet_energy(u)
    return PSResult(lhs, rhs, lhs / rhs - 1.0, bool(rhs >= lhs * (1.0 - tol)))


def ckn_test(params: CknParams, u: GridFunction, norm: Optional[MinkowskiNorm] = None) -> CknResult:
    """Grid version of (int u^p F^(-ap) dmu)^(1/p) / (int F*(Du)^2 dmu)^(1/2)."""
    if norm is not None and norm is not u.norm:
        u = GridFunction(u.n, u.L, u.m, u.values, norm)
    lhs = weighted_lp_sum(params, u) ** (1.0 / params.p)
    rhs = dirichlet_energy(u) ** 0.5
    if not rhs > 0:
        raise DomainError("u has zero Dirichlet energy on the grid")
    return CknResult(lhs, rhs, lhs / rhs)


# -- test functions ------------------------------------------------------------------

def grid_from_function(func, norm: MinkowskiNorm, L: float, m: int) -> GridFunction:
    """Sample ``func`` (vectorised over points (..., n)) at the cell centres."""
    n = norm.dim
    axis = (np.arange(m) - m // 2) * (2.0 * L / m)
    out = np.empty((m,) * n)
    rest = np.stack(np.meshgrid(*([axis] * (n - 1)), indexing="ij"), axis=-1)
    for i in range(m):
        pts = np.concatenate([np.full(rest.shape[:-1] + (1,), axis[i]), rest], axis=-1)
        out[i] = func(pts)
    return GridFunction(n, L, m, out, norm)


def _smooth_step(t):
    """C-infinity bump profile exp(1 - 1/(1 - t^2)) on |t| < 1, zero outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


def bump(center=None, radius: float = 1.0, height: float = 1.0,
         shape: Optional[MinkowskiNorm] = None):
    """Smooth compactly supported bump, radial for ``shape`` (Euclidean if None)."""
    def f(x):
        c = np.zeros(x.shape[-1]) if center is None else np.asarray(center, dtype=float)
        d = x - c
        r = np.linalg.norm(d, axis=-1) if shape is None else shape(d)
        return height * _smooth_step(r / radius)

    return f


def _taper(t, start: float):
    """1 below ``start``, cos^2 ramp to 0 at t = 1."""
    t = np.asarray(t, dtype=float)
    ramp = np.cos(0.5 * np.pi * np.clip((t - start) / (1.0 - start), 0.0, 1.0)) ** 2
    return np.where(t < start, 1.0, ramp)


def truncated_extremal(params: CknParams, norm: MinkowskiNorm, lam: float = 1.0, m: int = 128,
                       L: Optional[float] = None, taper: float = 0.1) -> GridFunction:
    """(h_lambda(F(x)) - h_lambda(R))_+ tapered to zero over the outer ``taper`` of radius R.

    L defaults to 8 lambda^(1/(2-ap)); R is the largest radius whose F-ball
    stays clear of the boundary layer.
    """
    if L is None:
        L = 8.0 * lam ** params.length_scale_exp
    h = 2.0 * L / m
    eye = np.eye(norm.dim)
    reach = float(np.max(norm.dual(eye)))
    R = (L - (BOUNDARY_LAYER + 1) * h) / reach
    if R <= 0:
        raise DomainError("grid too coarse for a truncated extremal")
    floor = extremal_profile(params, lam, R)

    def f(x):
        r = norm(x)
        return np.maximum(extremal_profile(params, lam, r) - floor, 0.0) * _taper(r / R, 1.0 - taper)

    return grid_from_function(f, norm, L, m)


def smooth_test_functions(norm: MinkowskiNorm, L: float = 1.0, m: int = 64, names=None):
    """Ten smooth, compactly supported test functions.

    Yields (name, GridFunction) pairs lazily so that fine grids are held
    one at a time; ``names`` restricts the selection.
    """
    n = norm.dim
    e0 = np.eye(n)[0]
    diag = np.ones(n) / math.sqrt(n)
    specs = [
        ("radial_bump", bump(radius=0.6, shape=norm)),
        ("euclidean_bump", bump(radius=0.6)),
        ("shifted_bump", bump(center=0.3 * e0, radius=0.5)),
        ("diagonal_shift", bump(center=0.25 * diag, radius=0.5, shape=norm)),
        ("two_bumps", lambda x: bump(center=0.35 * e0, radius=0.3)(x)
         + bump(center=-0.35 * e0, radius=0.3, height=0.6)(x)),
        ("three_bumps", lambda x: bump(center=0.4 * e0, radius=0.25)(x)
         + bump(center=-0.4 * e0, radius=0.25, height=0.7)(x)
         + bump(center=0.4 * diag, radius=0.2, height=0.5)(x)),
        ("narrow_bump", bump(radius=0.3, shape=norm)),
        ("wide_bump", bump(radius=0.75)),
        ("ellipsoidal", lambda x: _smooth_step(
            np.sqrt(np.sum((x / np.linspace(0.7, 0.35, n)) ** 2, axis=-1)))),
        ("ring_plus_core", lambda x: 0.5 * bump(radius=0.7)(x) + bump(center=0.2 * e0,
                                                                    radius=0.3)(x)),
    ]
    for name, f in specs:
        if names is None or name in names:
            yield name, grid_from_function(f, norm, L, m)


def random_grid_function(norm: MinkowskiNorm, L: float = 1.0, m: int = 64, seed: int = 0,
                         fill: float = 0.5) -> GridFunction:
    """Seeded random values on a random blob of cells around the origin.

    The blob is a Euclidean ball of radius ``fill * L`` with a jittered
    boundary; its cell count keeps the rearranged support inside the box
    for norms whose unit ball is not much flatter than the Euclidean one.
    """
    rng = np.random.default_rng(seed)
    n = norm.dim
    axis = (np.arange(m) - m // 2) * (2.0 * L / m)
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    r = np.sqrt(sum(g * g for g in grids))
    centre_shift = rng.uniform(-0.2, 0.2, size=n) * L
    rs = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, centre_shift)))
    limit = fill * L * (1.0 + 0.1 * rng.standard_normal(r.shape))
    values = np.where(rs < limit, rng.exponential(1.0, size=r.shape), 0.0)
    b = BOUNDARY_LAYER
    inner = tuple(slice(b, m - b) for _ in range(n))
    clipped = np.zeros_like(values)
    clipped[inner] = values[inner]
    return GridFunction(n, L, m, clipped, norm)


# -- serialisation -------------------------------------------------------------------

def _header(u: GridFunction) -> dict:
    return {"n": u.n, "L": u.L, "m": u.m, "norm": u.norm.spec(), "scale": u.scale}


def save_grid_csv(u: GridFunction, path) -> None:
    """CSV layout: a header row ``n,L,m,norm,scale``, one data row with the
    norm as JSON, then a ``value`` column in row-major order."""
    hdr = _header(u)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "L", "m", "norm", "scale"])
        w.writerow([hdr["n"], repr(hdr["L"]), hdr["m"], json.dumps(hdr["norm"], sort_keys=True),
                    repr(hdr["scale"])])
        w.writerow(["value"])
        buf = io.StringIO()
        np.savetxt(buf, u.values.ravel(), fmt="%.17g")
        fh.write(buf.getvalue())


def load_grid_csv(path) -> GridFunction:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
            row = next(reader)
            col = next(reader)
        except StopIteration:
            raise ParseError("truncated grid CSV header") from None
        if head != ["n", "L", "m", "norm", "scale"] or col != ["value"]:
            raise ParseError("not a grid CSV (bad header)", 1)
        try:
            n, L, m = int(row[0]), float(row[1]), int(row[2])
            norm = norm_from_spec(json.loads(row[3]))
            scale = float(row[4])
        except (ValueError, IndexError, json.JSONDecodeError) as exc:
            raise ParseError(f"bad grid header: {exc}", 2) from None
        try:
            values = np.loadtxt(fh, dtype=float, ndmin=1)
        except ValueError as exc:
            raise ParseError(f"bad value row: {exc}") from None
    if values.size != m ** n:
        raise ParseError(f"expected {m ** n} values, found {values.size}")
    return GridFunction(n, L, m, values.reshape((m,) * n), norm, scale)


def save_grid_binary(u: GridFunction, path) -> None:
    """Little-endian layout::

        4 bytes   magic b"CKNG"
        uint16    format version (1)
        uint16    n
        uint32    m
        float64   L
        float64   scale
        uint32    length k of the norm spec (UTF-8 JSON)
        k bytes   norm spec
        m^n x float64 cell values, row-major
    """
    spec = json.dumps(u.norm.spec(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HHIddI", FORMAT_VERSION, u.n, u.m, u.L, u.scale, len(spec)))
        fh.write(spec)
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def load_grid_binary(path) -> GridFunction:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ParseError("missing CKNG magic bytes")
    fixed = struct.calcsize("<HHIddI")
    if len(data) < 4 + fixed:
        raise ParseError("truncated header")
    version, n, m, L, scale, k = struct.unpack_from("<HHIddI", data, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}")
    off = 4 + fixed
    try:
        norm = norm_from_spec(json.loads(data[off:off + k].decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad norm spec: {exc}") from None
    off += k
    count = m ** n
    if len(data) - off != 8 * count:
        raise ParseError(f"expected {count} values, found {(len(data) - off) // 8}")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
    return GridFunction(n, L, m, values.reshape((m,) * n), norm, scale)
