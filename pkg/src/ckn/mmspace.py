"""Metric measure spaces seen from a base point through their radial volume
profile rho -> mu(B(x0, rho)), with auditors for the doubling (VD) and
small-ball (AR) hypotheses and a few built-in spaces.

Every integral downstream depends on mu only through this profile, so a
profile is the canonical representation.  Tails are never extrapolated
silently: a sampled profile without a tail model refuses to evaluate beyond
its last sample.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import unit_ball_volume
from .errors import DomainError, InsufficientDataError, ParseError
from .minkowski import MinkowskiNorm, quartic_mix_norm, norm_eval, normalized_measure, parse_norm
from .quadrature import integrate_interval

__all__ = [
    "TailModel",
    "Profile",
    "VolumeProfile",
    "AnalyticProfile",
    "CombinedProfile",
    "MetricMeasureSpace",
    "VDReport",
    "ARReport",
    "check_vd",
    "check_ar",
    "builtin_space",
    "resolve_space",
    "load_profile",
    "dump_profile",
    "log_pairs",
    "cylinder_volume",
    "parse_profile",
]

VD_SLACK = 1e-9
AR_TOL = 1e-3


@dataclass(frozen=True)
class TailModel:
    """Power law ``coef * rho ** exponent``."""

    coef: float
    exponent: float

    def __post_init__(self):
        if not (self.coef > 0 and math.isfinite(self.coef)):
            raise DomainError(f"power-law coefficient must be positive, got {self.coef}")
        if not (self.exponent >= 0 and math.isfinite(self.exponent)):
            raise DomainError("volume power law must have a non-negative finite exponent")

    def __call__(self, rho):
        return self.coef * np.asarray(rho, dtype=float) ** self.exponent

    def __str__(self):
        return f"{self.coef!r}*rho^{self.exponent!r}"


class Profile:
    """Base class for radial volume profiles.

    Subclasses implement ``_eval`` on a float array.  ``tail`` is the power
    law valid at infinity (None if unknown), ``sampled_range`` the interval
    on which the profile is backed by data (None for closed forms) and
    ``breakpoints`` radii where the profile changes regime.
    """

    tail: Optional[TailModel] = None
    sampled_range: Optional[tuple] = None
    breakpoints: tuple = ()

    def __call__(self, rho):
        r = np.asarray(rho, dtype=float)
        out = self._eval(np.atleast_1d(r))
        return float(out[0]) if r.ndim == 0 else out.reshape(r.shape)

    def _eval(self, r):  # pragma: no cover - abstract
        raise NotImplementedError

    def scaled(self, c: float) -> "Profile":
        return CombinedProfile(((float(c), self),))

    def __add__(self, other):
        return CombinedProfile(((1.0, self), (1.0, other)))

    def __rmul__(self, c):
        return self.scaled(c)


class AnalyticProfile(Profile):
    """Closed-form profile, e.g. omega_n * rho^n."""

    def __init__(self, func: Callable, tail: Optional[TailModel] = None, description: str = ""):
        self.func = func
        self.tail = tail
        self.description = description

    def _eval(self, r):
        return np.asarray(self.func(r), dtype=float)

    @classmethod
    def power_law(cls, coef: float, exponent: float, description: str = ""):
        tail = TailModel(coef, exponent)
        return cls(tail, tail=tail, description=description or str(tail))

    def __repr__(self):
        return f"AnalyticProfile({self.description or self.func!r})"


class CombinedProfile(Profile):
    """Non-negative linear combination sum c_i P_i of profiles."""

    def __init__(self, terms):
        terms = tuple((float(c), p) for c, p in terms)
        if any(c < 0 for c, _ in terms):
            raise DomainError("profile combinations need non-negative coefficients")
        self.terms = terms
        tails = [p.tail for _, p in terms]
        if all(t is not None for t in tails):
            k = max(t.exponent for t in tails)
            coef = sum(c * t.coef for (c, _), t in zip(terms, tails) if t.exponent == k)
            self.tail = TailModel(coef, k) if coef > 0 else None
        else:
            self.tail = None
        ranges = [p.sampled_range for _, p in terms if p.sampled_range is not None]
        if ranges:
            self.sampled_range = (max(r[0] for r in ranges), min(r[1] for r in ranges))
        self.breakpoints = tuple(sorted({b for _, p in terms for b in p.breakpoints}))

    def _eval(self, r):
        return sum(c * p._eval(r) for c, p in self.terms)

    def __repr__(self):
        return " + ".join(f"{c:g}*{p!r}" for c, p in self.terms)


class VolumeProfile(Profile):
    """Sampled profile with shape-preserving interpolation.

    Parameters
    ----------
    rho, volume : strictly increasing radii and non-decreasing positive volumes.
    tail : power law used beyond the last sample.  Without it, queries past
        the last sample raise :class:`InsufficientDataError`.
    head : power law used below the first sample.  Without it a power law
        through the first two samples is used.
    scheme : ``"pchip"`` interpolates (rho, volume) directly; ``"loglog"``
        interpolates log volume against log rho, which reproduces power laws
        exactly.  Both are monotone piecewise-cubic schemes.
    """

    def __init__(self, rho, volume, tail: Optional[TailModel] = None,
                 head: Optional[TailModel] = None, scheme: str = "pchip"):
        rho = np.asarray(rho, dtype=float)
        volume = np.asarray(volume, dtype=float)
        _validate_samples(rho, volume)
        if scheme not in ("pchip", "loglog"):
            raise DomainError(f"unknown interpolation scheme {scheme!r}")
        self.rho = rho
        self.volume = volume
        self.tail = tail
        self.scheme = scheme
        if head is None:
            k = math.log(volume[1] / volume[0]) / math.log(rho[1] / rho[0])
            if k <= 0:
                k = 1.0  # flat start: fall back to a linear head
            head = TailModel(volume[0] / rho[0] ** k, k)
        self.head = head
        self.sampled_range = (float(rho[0]), float(rho[-1]))
        self.breakpoints = (float(rho[0]), float(rho[-1]))
        if scheme == "pchip":
            self._interp = PchipInterpolator(rho, volume, extrapolate=False)
        else:
            self._interp = PchipInterpolator(np.log(rho), np.log(volume), extrapolate=False)

    def _eval(self, r):
        lo, hi = self.sampled_range
        if np.any(r > hi) and self.tail is None:
            raise InsufficientDataError(
                f"profile sampled up to rho={hi:g} has no tail model; "
                f"cannot evaluate at rho={float(np.max(r)):g}")
        out = np.empty_like(r)
        inside = (r >= lo) & (r <= hi)
        if self.scheme == "pchip":
            out[inside] = self._interp(r[inside])
        else:
            out[inside] = np.exp(self._interp(np.log(r[inside])))
        below = r < lo
        out[below] = self.head(r[below])
        above = r > hi
        if np.any(above):
            out[above] = self.tail(r[above])
        return out

    def __repr__(self):
        return (f"VolumeProfile({len(self.rho)} samples on [{self.rho[0]:g}, {self.rho[-1]:g}], "
                f"tail={self.tail}, scheme={self.scheme!r})")


def _validate_samples(rho, volume):
    if rho.ndim != 1 or rho.shape != volume.shape:
        raise DomainError("rho and volume must be 1D arrays of equal length")
    if len(rho) < 2:
        raise DomainError("a sampled profile needs at least two rows")
    if np.any(rho <= 0) or np.any(np.diff(rho) <= 0):
        raise DomainError("rho samples must be positive and strictly increasing")
    if np.any(volume <= 0):
        raise DomainError("volumes must be positive for rho > 0")
    if np.any(np.diff(volume) < 0):
        raise DomainError("volumes must be non-decreasing")


@dataclass(frozen=True)
class MetricMeasureSpace:
    """A pointed metric measure space (X, d, mu, x0) known through its profile.

    ``unbounded`` and ``proper`` are declarations; a profile cannot certify
    properness.  ``distance_oracle``, when given, maps two points (arrays)
    to their distance.
    """

    name: str
    dim_hint: int
    profile: Profile
    distance_oracle: Optional[Callable] = None
    unbounded: bool = True
    proper: bool = True
    center: Optional[object] = None
    norm: Optional[MinkowskiNorm] = None
    info: dict = field(default_factory=dict)

    def volume(self, rho):
        return self.profile(rho)

    def rerooted(self, center, profile: Optional[Profile] = None) -> "MetricMeasureSpace":
        """Same space seen from another centre (same profile unless given)."""
        return replace(self, center=center, profile=profile or self.profile)

    def with_measure_scaled(self, c: float) -> "MetricMeasureSpace":
        return replace(self, name=f"{self.name}*{c:g}", profile=self.profile.scaled(c))

    def check_metric(self, points, tol: float = 1e-9) -> float:
        """Worst violation of symmetry / triangle inequality on sampled triples."""
        if self.distance_oracle is None:
            raise InsufficientDataError(f"space {self.name!r} has no distance oracle")
        d = self.distance_oracle
        worst = 0.0
        pts = list(points)
        for i in range(len(pts) - 2):
            x, y, z = pts[i], pts[i + 1], pts[i + 2]
            dxy, dyx = float(d(x, y)), float(d(y, x))
            worst = max(worst, abs(dxy - dyx), float(d(x, z)) - dxy - float(d(y, z)))
        if worst > tol:
            raise DomainError(f"distance oracle violates metric axioms by {worst:.3g}")
        return worst


@dataclass(frozen=True)
class VDReport:
    n: int
    C0: float
    statistic: float
    worst_pair: tuple
    passes: bool

    def as_dict(self):
        return {"n": self.n, "C0": self.C0, "statistic": self.statistic,
                "worst_pair": list(self.worst_pair), "passes": self.passes}


@dataclass(frozen=True)
class ARReport:
    n: int
    liminf_estimate: float
    tol: float
    passes: bool
    ratios: tuple
    ahlfors_window: tuple  # (Omega^-1 * r^n <= mu <= Omega * r^n) lower and upper bounds

    @property
    def ahlfors_constant(self) -> float:
        lo, hi = self.ahlfors_window
        return max(hi, 1.0 / lo)

    def as_dict(self):
        return {"n": self.n, "liminf_estimate": self.liminf_estimate, "tol": self.tol,
                "passes": self.passes, "ahlfors_window": list(self.ahlfors_window),
                "ahlfors_constant": self.ahlfors_constant}


def log_pairs(lo: float = 1e-3, hi: float = 1e3, count: int = 25):
    """All pairs r < R from a log-spaced radius grid."""
    radii = np.geomspace(lo, hi, count)
    return [(float(r), float(R)) for i, r in enumerate(radii) for R in radii[i + 1:]]


def check_vd(space: MetricMeasureSpace, n: int, C0: float, grid=None) -> VDReport:
    """Audit (VD)^n_{C0} at the base point on a grid of radius pairs.

    The statistic is max over the grid of mu(B(R))/mu(B(r)) * (r/R)^n; the
    audit passes iff it is <= C0 * (1 + 1e-9).
    """
    if C0 < 1:
        raise DomainError(f"C0 must be >= 1, got {C0}")
    grid = log_pairs() if grid is None else list(grid)
    if not grid:
        raise DomainError("empty radius grid")
    pairs = np.asarray(grid, dtype=float)
    r, R = pairs[:, 0], pairs[:, 1]
    if np.any(r <= 0) or np.any(R <= r):
        raise DomainError("grid pairs must satisfy 0 < r < R")
    vr, vR = space.profile(r), space.profile(R)
    stat = vR / vr * (r / R) ** n
    i = int(np.argmax(stat))
    worst = float(stat[i])
    return VDReport(n, float(C0), worst, (float(r[i]), float(R[i])),
                    bool(worst <= C0 * (1.0 + VD_SLACK)))


def check_ar(space: MetricMeasureSpace, n: int, rho_min_sequence: Sequence[float],
             tol: float = AR_TOL) -> ARReport:
    """Audit (AR)^n at the base point: liminf_{r->0} mu(B(r)) / (omega_n r^n) = 1.

    The liminf is estimated by the minimum over the last half of the
    (decreasing) sequence.  Every radius must lie inside the profile's
    sampled range, if it has one.
    """
    seq = np.asarray(rho_min_sequence, dtype=float)
    if seq.ndim != 1 or len(seq) < 3:
        raise InsufficientDataError("check_ar needs at least three small radii")
    if np.any(seq <= 0) or np.any(np.diff(seq) >= 0):
        raise DomainError("rho_min_sequence must be positive and strictly decreasing")
    rng = space.profile.sampled_range
    if rng is not None and (seq[-1] < rng[0] or seq[0] > rng[1]):
        raise InsufficientDataError(
            f"radii [{seq[-1]:g}, {seq[0]:g}] leave the sampled range [{rng[0]:g}, {rng[1]:g}]")
    ratios = space.profile(seq) / (unit_ball_volume(n) * seq ** n)
    tail = ratios[len(ratios) // 2:]
    est = float(np.min(tail))
    return ARReport(n, est, tol, bool(abs(est - 1.0) <= tol), tuple(float(x) for x in ratios),
                    (float(np.min(ratios)), float(np.max(ratios))))


# -- built-in spaces ---------------------------------------------------------

def _euclidean_space(n: int) -> MetricMeasureSpace:
    w = unit_ball_volume(n)
    prof = AnalyticProfile.power_law(w, n, description=f"omega_{n} rho^{n}")
    dist = lambda x, y: float(np.linalg.norm(np.asarray(y, float) - np.asarray(x, float)))
    return MetricMeasureSpace(f"euclidean:{n}", n, prof, dist, center=np.zeros(n))


def _minkowski_space(norm: MinkowskiNorm, seed: int = 0) -> MetricMeasureSpace:
    n = norm.dim
    meas = normalized_measure(norm, seed=seed)
    # mu_F(B_F(0, rho)) = scale * vol({F<1}) * rho^n, which is omega_n rho^n by construction
    coef = meas.scale * meas.ball_volume
    prof = AnalyticProfile.power_law(coef, n, description=f"mu_F(B_F(0,rho)) for {norm!r}")
    dist = lambda x, y: float(norm_eval(norm, np.asarray(y, float) - np.asarray(x, float)))
    return MetricMeasureSpace(f"minkowski:{norm.label}:{n}", n, prof, dist, center=np.zeros(n),
                              norm=norm, info={"scale": meas.scale,
                                               "scale_error": meas.scale_error})


def cylinder_volume(n: int, rho: float, rel_tol: float = 1e-12) -> float:
    """mu(B(x0, rho)) on S^(n-1) x R with the product Riemannian metric.

    With theta the polar angle on the sphere, B = {theta^2 + t^2 < rho^2};
    substituting theta = rho sin(phi) gives a smooth integrand.
    """
    sphere_slice = (n - 1) * unit_ball_volume(n - 1)  # area of S^(n-2)
    top = math.asin(min(1.0, math.pi / rho))

    def g(phi):
        th = rho * np.sin(phi)
        return np.sin(th) ** (n - 2) * 2.0 * rho * rho * np.cos(phi) ** 2

    return sphere_slice * integrate_interval(g, 0.0, top, rel_tol).value


def _cylinder_space(n: int, rho_lo=1e-4, rho_hi=1e6, per_decade: int = 400) -> MetricMeasureSpace:
    if n < 2:
        raise DomainError("cylinder needs n >= 2")
    count = int(round(math.log10(rho_hi / rho_lo) * per_decade)) + 1
    # rho = pi is where the ball swallows the sphere factor; keep it as a node
    # the profile is least smooth just past pi; sample that stretch densely
    rho = np.union1d(np.geomspace(rho_lo, rho_hi, count),
                     math.pi * np.geomspace(0.9, 1.5, 400))
    vol = np.array([cylinder_volume(n, r) for r in rho])
    w = unit_ball_volume(n)
    head = TailModel(vol[0] / rho[0] ** n, n)
    # V(rho) -> 2 |S^(n-1)| rho; the correction is O(1/rho), i.e. 1e-12 relative at rho_hi
    tail = TailModel(2.0 * n * w, 1.0)
    prof = VolumeProfile(rho, vol, tail=tail, head=head, scheme="loglog")

    def dist(x, y):
        (u, t), (v, s) = x, y
        c = float(np.clip(np.dot(u, v), -1.0, 1.0))
        return math.hypot(math.acos(c), t - s)

    e1 = np.zeros(n)
    e1[0] = 1.0
    return MetricMeasureSpace(f"cylinder:{n}", n, prof, dist, center=(e1, 0.0))


def builtin_space(name: str, *args, **params) -> MetricMeasureSpace:
    """Construct one of the built-in spaces.

    ``euclidean(n)``, ``minkowski(norm, seed=0)``, ``cylinder(n)`` (the round
    cylinder S^(n-1) x R) and ``quartic_mix(n, eps, seed=0)`` (Minkowski space
    of the norm :func:`~ckn.minkowski.quartic_mix_norm`).
    """
    if name == "euclidean":
        return _euclidean_space(*args, **params)
    if name == "minkowski":
        return _minkowski_space(*args, **params)
    if name == "cylinder":
        return _cylinder_space(*args, **params)
    if name == "quartic_mix":
        n, eps = (list(args) + [params.pop("n", None), params.pop("eps", None)])[:2]
        space = _minkowski_space(quartic_mix_norm(int(n), float(eps)), **params)
        return replace(space, name=f"quartic_mix:{n}:{eps:g}")
    raise DomainError(f"unknown built-in space {name!r}")


def resolve_space(text: str, seed: int = 0) -> MetricMeasureSpace:
    """Parse a CLI space identifier.

    ``euclidean:3``, ``cylinder:3``, ``minkowski:lq:4:3`` (norm then
    dimension), ``quartic_mix:3:0.5`` and ``profile:PATH``.
    """
    kind, _, rest = text.partition(":")
    try:
        if kind == "euclidean":
            return builtin_space("euclidean", int(rest))
        if kind == "cylinder":
            return builtin_space("cylinder", int(rest))
        if kind == "minkowski":
            norm_text, _, dim = rest.rpartition(":")
            return builtin_space("minkowski", parse_norm(norm_text, int(dim)), seed=seed)
        if kind == "quartic_mix":
            n, _, eps = rest.partition(":")
            return builtin_space("quartic_mix", int(n), float(eps or 1.0), seed=seed)
    except ValueError as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"bad space identifier {text!r}: {exc}") from None
    if kind == "profile":
        prof = load_profile(rest)
        return MetricMeasureSpace(f"profile:{rest}", 0, prof)
    raise DomainError(f"unknown space {text!r}")


# -- profile files -----------------------------------------------------------

_POWER_RE = re.compile(
    r"^\s*(?P<coef>[-+0-9.eE]+)\s*\*\s*rho\s*\^\s*(?P<exp>[-+0-9.eE]+)\s*$")


def _parse_power(text, line):
    m = _POWER_RE.match(text)
    if not m:
        raise ParseError(f"bad power law {text.strip()!r}; expected 'c*rho^k'", line)
    try:
        return TailModel(float(m["coef"]), float(m["exp"]))
    except (ValueError, DomainError) as exc:
        raise ParseError(str(exc), line) from None


def load_profile(path, scheme: str = "pchip") -> VolumeProfile:
    """Read a profile CSV.

    Format: optional ``#`` comments and directives ``tail: c*rho^k`` /
    ``head: c*rho^k``, a header ``rho,volume``, then rows sorted by rho.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read profile {path}: {exc}") from None
    return parse_profile(text, scheme=scheme)


def parse_profile(text: str, scheme: str = "pchip") -> VolumeProfile:
    tail = head = None
    header_seen = False
    rho, vol = [], []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        first = row[0].strip()
        low = first.lower()
        if low.startswith("tail:") or low.startswith("head:"):
            model = _parse_power(",".join(row).split(":", 1)[1], lineno)
            if low.startswith("tail:"):
                tail = model
            else:
                head = model
            continue
        if not header_seen:
            if [c.strip().lower() for c in row] != ["rho", "volume"]:
                raise ParseError("expected header 'rho,volume'", lineno)
            header_seen = True
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 columns, got {len(row)}", lineno)
        try:
            r, v = float(row[0]), float(row[1])
        except ValueError:
            raise ParseError(f"non-numeric row {row!r}", lineno) from None
        if not (math.isfinite(r) and math.isfinite(v)):
            raise ParseError("non-finite value", lineno)
        if r <= 0 or v <= 0:
            raise ParseError("rho and volume must be positive", lineno)
        if rho and r <= rho[-1]:
            raise ParseError(f"rho={r:g} is not greater than the previous row", lineno)
        if vol and v < vol[-1]:
            raise ParseError(f"volume={v:g} decreases (previous {vol[-1]:g})", lineno)
        rho.append(r)
        vol.append(v)
    if not header_seen:
        raise ParseError("missing header 'rho,volume'")
    if len(rho) < 2:
        raise ParseError("a profile needs at least two data rows")
    return VolumeProfile(rho, vol, tail=tail, head=head, scheme=scheme)


def dump_profile(profile: VolumeProfile, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if profile.tail is not None:
            fh.write(f"tail: {profile.tail}\n")
        writer = csv.writer(fh)
        writer.writerow(["rho", "volume"])
        for r, v in zip(profile.rho, profile.volume):
            writer.writerow([repr(float(r)), repr(float(v))])
