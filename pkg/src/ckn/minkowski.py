"""Minkowski norms on R^n: evaluation, dual norms, unit-ball volumes and
the normalised Lebesgue measure mu_F with mu_F({F < 1}) = omega_n.

Four kinds are supported: ``euclidean``, ``lq`` (1 <= q <= inf),
``quadratic`` (F(v) = sqrt(v^T A v)) and ``custom`` (a black-box,
vectorised evaluator).  Closed forms are used wherever they exist; custom
norms fall back to multi-start ascent for the dual and stratified Monte
Carlo for the volume.  All randomness goes through explicit seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import gamma, unit_ball_volume
from .errors import ConvergenceError, DomainError, ParseError

__all__ = [
    "MinkowskiNorm",
    "NormalizedMeasure",
    "euclidean",
    "lq",
    "quadratic",
    "custom",
    "norm_eval",
    "dual_norm_eval",
    "unit_ball_volume_of",
    "normalized_measure",
    "norm_from_spec",
    "parse_norm",
    "quartic_mix_norm",
]

DUAL_STARTS = 32
DUAL_TOL = 1e-8
DUAL_SAMPLES = 10_000
CHECK_SAMPLES = 1_000
CHECK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MinkowskiNorm:
    """A reversible Minkowski norm F on R^dim.

    Use the constructors :func:`euclidean`, :func:`lq`, :func:`quadratic`
    and :func:`custom` rather than instantiating directly.
    """

    dim: int
    kind: str
    q: Optional[float] = None
    matrix: Optional[np.ndarray] = None
    evaluator: Optional[Callable] = None
    smooth: bool = True
    reversible: bool = True
    label: str = ""
    _chol: Optional[np.ndarray] = field(default=None, repr=False)
    _inv: Optional[np.ndarray] = field(default=None, repr=False)

    def __call__(self, v):
        return norm_eval(self, v)

    def dual(self, alpha, seed: int = 0):
        return dual_norm_eval(self, alpha, seed=seed)

    @property
    def dual_q(self) -> float:
        """Conjugate exponent q' with 1/q + 1/q' = 1 (lq kind only)."""
        q = self.q
        if q == 1.0:
            return math.inf
        if math.isinf(q):
            return 1.0
        return q / (q - 1.0)

    def gradient(self, v):
        """Gradient of F at v != 0, vectorised over the last axis."""
        v = _as_vectors(self, v)
        if self.kind == "euclidean":
            return v / np.linalg.norm(v, axis=-1, keepdims=True)
        if self.kind == "lq" and not (self.q == 1.0 or math.isinf(self.q)):
            q = self.q
            f = norm_eval(self, v)[..., None]
            return np.sign(v) * (np.abs(v) / f) ** (q - 1.0)
        if self.kind == "quadratic":
            av = v @ self.matrix
            return av / np.sqrt(np.einsum("...i,...i->...", v, av))[..., None]
        return _fd_gradient(lambda x: norm_eval(self, x), v)

    def spec(self) -> dict:
        """JSON-serialisable description (not available for custom norms)."""
        if self.kind == "euclidean":
            return {"kind": "euclidean", "dim": self.dim}
        if self.kind == "lq":
            return {"kind": "lq", "q": self.q, "dim": self.dim}
        if self.kind == "quadratic":
            return {"kind": "quadratic", "matrix": self.matrix.tolist()}
        if self.label:
            return {"kind": "custom", "label": self.label, "dim": self.dim}
        raise DomainError("custom norms have no portable specification")

    def __repr__(self):
        extra = {"lq": f", q={self.q}", "custom": f", label={self.label!r}"}.get(self.kind, "")
        return f"MinkowskiNorm(dim={self.dim}, kind={self.kind!r}{extra})"


def _as_vectors(F: MinkowskiNorm, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != F.dim:
        raise DomainError(f"vector dimension {v.shape[-1:] or ()} does not match norm dim {F.dim}")
    return v


def _fd_gradient(func, v, h=1e-6):
    v = np.asarray(v, dtype=float)
    scale = np.linalg.norm(v, axis=-1, keepdims=True)
    step = h * np.where(scale > 0, scale, 1.0)
    grad = np.empty_like(v)
    for i in range(v.shape[-1]):
        e = np.zeros(v.shape[-1])
        e[i] = 1.0
        grad[..., i] = (func(v + step * e) - func(v - step * e)) / (2.0 * step[..., 0])
    return grad


def euclidean(dim: int) -> MinkowskiNorm:
    dim = _check_dim(dim)
    return MinkowskiNorm(dim, "euclidean", label=f"euclidean:{dim}")


def lq(q: float, dim: int) -> MinkowskiNorm:
    dim = _check_dim(dim)
    q = float(q)
    if not q >= 1.0:
        raise DomainError(f"lq norm needs q >= 1, got q={q}")
    smooth = not (q == 1.0 or math.isinf(q))
    return MinkowskiNorm(dim, "lq", q=q, smooth=smooth, label=f"lq:{q:g}")


def quadratic(matrix) -> MinkowskiNorm:
    A = np.array(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError("quadratic norm needs a square matrix")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-14):
        raise DomainError("quadratic norm matrix must be symmetric")
    A = 0.5 * (A + A.T)
    try:
        chol = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise DomainError("quadratic norm matrix must be positive definite") from None
    A.setflags(write=False)
    return MinkowskiNorm(A.shape[0], "quadratic", matrix=A, _chol=chol,
                         _inv=np.linalg.inv(A), label="quadratic")


def custom(evaluator: Callable, dim: int, *, smooth: bool = False, label: str = "custom",
           seed: int = 0, samples: int = CHECK_SAMPLES, tol: float = CHECK_TOL) -> MinkowskiNorm:
    """Wrap a black-box norm and run the sampled admissibility checks.

    ``evaluator`` maps an array of shape (..., dim) to shape (...).  A
    scalar-only callable is accepted and looped over.  Positivity, absolute
    homogeneity and midpoint convexity are checked on ``samples`` seeded
    random vectors/pairs with tolerance ``tol``; any violation raises
    :class:`DomainError`.  ``smooth`` is the caller's assertion that F is
    smooth away from 0 (it is not verified).
    """
    dim = _check_dim(dim)
    evaluator = _vectorize(evaluator, dim)
    F = MinkowskiNorm(dim, "custom", evaluator=evaluator, smooth=smooth, label=label)
    _check_norm_axioms(F, seed=seed, samples=samples, tol=tol)
    return F


def _vectorize(evaluator, dim):
    probe = np.eye(dim)[:2] if dim > 1 else np.ones((2, 1))
    try:
        out = np.asarray(evaluator(probe), dtype=float)
        if out.shape == (2,):
            return evaluator
    except Exception:
        pass

    def looped(v):
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, dim)
        res = np.array([float(evaluator(x)) for x in flat])
        return res.reshape(v.shape[:-1])

    return looped


def _check_norm_axioms(F: MinkowskiNorm, seed=0, samples=CHECK_SAMPLES, tol=CHECK_TOL):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((samples, F.dim))
    w = rng.standard_normal((samples, F.dim))
    t = rng.uniform(-3.0, 3.0, size=samples)
    fv, fw = F.evaluator(v), F.evaluator(w)
    if abs(float(F.evaluator(np.zeros((1, F.dim)))[0])) > tol:
        raise DomainError("custom norm: F(0) != 0")
    if np.any(fv <= 0):
        raise DomainError("custom norm: F(v) <= 0 for some v != 0")
    scaled = F.evaluator(t[:, None] * v)
    if np.any(np.abs(scaled - np.abs(t) * fv) > tol * (1.0 + np.abs(t) * fv)):
        raise DomainError("custom norm fails absolute homogeneity F(tv) = |t| F(v)")
    mid = F.evaluator(0.5 * (v + w))
    if np.any(mid > 0.5 * (fv + fw) + tol * (1.0 + fv + fw)):
        raise DomainError("custom norm fails midpoint convexity")


def _check_dim(dim) -> int:
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise DomainError(f"dimension must be a positive integer, got {dim!r}")
    return int(dim)


def _scaled_l2(v):
    """|v|_2 with the max coordinate factored out, so tiny vectors do not underflow."""
    m = np.max(np.abs(v), axis=-1)
    safe = np.where(m > 0, m, 1.0)
    return m * np.linalg.norm(v / safe[..., None], axis=-1)


def norm_eval(F: MinkowskiNorm, v):
    """F(v), vectorised over the last axis of ``v``."""
    v = _as_vectors(F, v)
    if F.kind == "euclidean":
        out = _scaled_l2(v)
    elif F.kind == "lq":
        q = F.q
        if math.isinf(q):
            out = np.max(np.abs(v), axis=-1)
        elif q == 1.0:
            out = np.sum(np.abs(v), axis=-1)
        elif q == 2.0:
            out = _scaled_l2(v)
        else:
            # factor out the max coordinate to avoid overflow of |v|**q
            m = np.max(np.abs(v), axis=-1)
            safe = np.where(m > 0, m, 1.0)
            out = m * np.sum((np.abs(v) / safe[..., None]) ** q, axis=-1) ** (1.0 / q)
    elif F.kind == "quadratic":
        m = np.max(np.abs(v), axis=-1)
        safe = np.where(m > 0, m, 1.0)
        u = v / safe[..., None]
        out = m * np.sqrt(np.einsum("...i,ij,...j->...", u, F.matrix, u))
    else:
        out = np.asarray(F.evaluator(v), dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def dual_norm_eval(F: MinkowskiNorm, alpha, seed: int = 0, method: str = "auto"):
    """The polar transform F*(alpha) = sup_{v != 0} alpha(v) / F(v).

    Closed forms for euclidean, lq and quadratic kinds.  Custom norms (or
    ``method="ascent"``) use :func:`dual_by_ascent` on each covector.
    """
    alpha = _as_vectors(F, alpha)
    if method == "auto" and F.kind != "custom":
        if F.kind == "euclidean":
            out = _scaled_l2(alpha)
        elif F.kind == "lq":
            out = norm_eval(MinkowskiNorm(F.dim, "lq", q=F.dual_q), alpha)
        else:
            out = np.sqrt(np.einsum("...i,ij,...j->...", alpha, F._inv, alpha))
        return float(out) if np.ndim(out) == 0 else out
    if method not in ("auto", "ascent"):
        raise DomainError(f"unknown dual method {method!r}")
    flat = alpha.reshape(-1, F.dim)
    res = np.array([dual_by_ascent(F, a, seed=seed)[0] for a in flat])
    res = res.reshape(alpha.shape[:-1])
    return float(res) if res.ndim == 0 else res


def dual_by_ascent(F: MinkowskiNorm, alpha, seed: int = 0, starts: int = DUAL_STARTS,
                   tol: float = DUAL_TOL, samples: int = DUAL_SAMPLES, max_iter: int = 500):
    """Maximise alpha(v)/F(v) over the Euclidean unit sphere.

    Returns ``(value, maximiser)``.  The ascent starts from ``alpha`` itself
    plus the best random sphere samples, so the result is never below the
    best of ``samples`` random evaluations (the certificate).
    """
    alpha = np.asarray(alpha, dtype=float)
    if not np.any(alpha):
        return 0.0, np.zeros_like(alpha)
    fn = lambda x: norm_eval(F, x)
    rng = np.random.default_rng(seed)
    cloud = rng.standard_normal((samples, F.dim))
    cloud /= np.linalg.norm(cloud, axis=1, keepdims=True)
    cloud_vals = (cloud @ alpha) / fn(cloud)
    certificate = float(np.max(cloud_vals))
    best = np.argsort(cloud_vals)[::-1][: starts - 1]
    v = np.vstack([alpha / np.linalg.norm(alpha), cloud[best]])

    def phi(x):
        return (x @ alpha) / fn(x)

    val = phi(v)
    step = np.full(len(v), 0.1)
    converged = np.zeros(len(v), dtype=bool)
    for _ in range(max_iter):
        fx = fn(v)
        grad = alpha / fx[:, None] - ((v @ alpha) / fx ** 2)[:, None] * _fd_gradient(fn, v)
        # tangential component only
        grad -= np.sum(grad * v, axis=1, keepdims=True) * v
        gnorm = np.linalg.norm(grad, axis=1)
        converged |= gnorm <= tol * np.maximum(np.abs(val), 1e-300)
        active = ~converged
        if not np.any(active):
            break
        for _bt in range(40):
            trial = v + step[:, None] * grad
            trial /= np.linalg.norm(trial, axis=1, keepdims=True)
            tval = phi(trial)
            ok = (tval >= val) | ~active
            if np.all(ok):
                break
            step = np.where(ok, step, 0.5 * step)
        improve = active & (tval >= val)
        small = active & (tval - val <= tol * tol * np.abs(val))
        v = np.where(improve[:, None], trial, v)
        val = np.where(improve, tval, val)
        converged |= small & improve
        step = np.where(improve, np.minimum(2.0 * step, 1.0), step)
    i = int(np.argmax(val))
    result = float(val[i])
    if not converged[i]:
        raise ConvergenceError("dual-norm ascent did not converge", estimate=result,
                               error=max(result, certificate))
    if result < certificate:  # pragma: no cover - ascent starts from the samples
        result = certificate
    return result, v[i] / fn(v[i])


def unit_ball_volume_of(F: MinkowskiNorm, seed: int = 0, method: str = "auto",
                        samples: int = 2 ** 20, strata_per_axis: Optional[int] = None):
    """Lebesgue volume of {F < 1} as ``(value, error)``.

    ``error`` is 0 for closed forms and the Monte Carlo standard error
    otherwise.  Monte Carlo uses a regular grid of strata, each with its own
    generator derived from ``seed``, so results depend only on ``seed``,
    ``samples`` and the stratum count.
    """
    n = F.dim
    if method == "auto" and F.kind != "custom":
        if F.kind == "euclidean":
            return unit_ball_volume(n), 0.0
        if F.kind == "quadratic":
            return unit_ball_volume(n) / math.sqrt(float(np.linalg.det(F.matrix))), 0.0
        q = F.q
        if math.isinf(q):
            return 2.0 ** n, 0.0
        return (2.0 * gamma(1.0 + 1.0 / q)) ** n / gamma(1.0 + n / q), 0.0
    if method not in ("auto", "montecarlo"):
        raise DomainError(f"unknown volume method {method!r}")
    if n > 10:
        raise DomainError("Monte Carlo volume is limited to dim <= 10")
    return _mc_volume(F, seed, samples, strata_per_axis)


def _mc_volume(F, seed, samples, strata_per_axis):
    n = F.dim
    # bounding box: sup of |x_i| over the unit ball is F*(e_i)
    half = np.array([dual_norm_eval(F, np.eye(n)[i], seed=seed) for i in range(n)])
    half *= 1.0 + 1e-6
    if strata_per_axis is None:
        strata_per_axis = max(1, int(round(4096 ** (1.0 / n))))
    k = strata_per_axis
    n_strata = k ** n
    per = max(2, samples // n_strata)
    cell = 2.0 * half / k
    cell_vol = float(np.prod(cell))
    children = np.random.SeedSequence(seed).spawn(n_strata)
    idx = np.indices((k,) * n).reshape(n, -1).T
    hits = np.empty(n_strata)
    for j, child in enumerate(children):
        u = np.random.default_rng(child).random((per, n))
        x = -half + (idx[j] + u) * cell
        hits[j] = np.count_nonzero(norm_eval(F, x) < 1.0)
    frac = hits / per
    value = cell_vol * float(np.sum(frac))
    var = cell_vol ** 2 * np.sum(frac * (1.0 - frac) / (per - 1))
    return value, float(math.sqrt(var))


@dataclass(frozen=True)
class NormalizedMeasure:
    """mu_F = scale * Lebesgue, normalised so mu_F({F < 1}) = omega_n."""

    norm: MinkowskiNorm
    scale: float
    ball_volume: float
    ball_volume_error: float = 0.0

    @property
    def scale_error(self) -> float:
        return self.scale * self.ball_volume_error / self.ball_volume

    def ball_measure(self, rho):
        """mu_F(B_F(0, rho)) = scale * vol({F < 1}) * rho^n."""
        return self.scale * self.ball_volume * np.asarray(rho, dtype=float) ** self.norm.dim


def normalized_measure(F: MinkowskiNorm, seed: int = 0, **volume_kwargs) -> NormalizedMeasure:
    vol, err = unit_ball_volume_of(F, seed=seed, **volume_kwargs)
    return NormalizedMeasure(F, unit_ball_volume(F.dim) / vol, vol, err)


def quartic_mix_norm(n: int, eps: float) -> MinkowskiNorm:
    """F_eps(v, w) = sqrt(|v|^2 + w^2 + eps sqrt(|v|^4 + w^4)) on R^(n-1) x R.

    A smooth, reversible, non-Euclidean Minkowski norm for eps > 0.
    """
    if n < 2 or not eps >= 0:
        raise DomainError("quartic_mix needs n >= 2 and eps >= 0")

    def F(x):
        x = np.asarray(x, dtype=float)
        v2 = np.sum(x[..., :-1] ** 2, axis=-1)
        w2 = x[..., -1] ** 2
        return np.sqrt(v2 + w2 + eps * np.sqrt(v2 * v2 + w2 * w2))

    return custom(F, n, smooth=True, label=f"quartic_mix:{n}:{eps:g}")


def norm_from_spec(spec: dict, dim: Optional[int] = None) -> MinkowskiNorm:
    """Build a norm from its JSON description.

    Accepted forms: ``{"kind": "euclidean", "dim": n}``,
    ``{"kind": "lq", "q": q, "dim": n}``, ``{"kind": "quadratic",
    "matrix": [[...], ...]}``.  ``dim`` overrides a missing ``"dim"`` key.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ParseError("norm spec must be an object with a 'kind' key")
    kind = spec["kind"]
    d = spec.get("dim", dim)
    try:
        if kind == "euclidean":
            return euclidean(d)
        if kind == "lq":
            q = spec["q"]
            q = math.inf if q in ("inf", "Infinity") else q
            return lq(q, d)
        if kind == "quadratic":
            return quadratic(spec["matrix"])
    except KeyError as exc:
        raise ParseError(f"norm spec missing field {exc}") from None
    except TypeError as exc:
        raise ParseError(f"bad norm spec: {exc}") from None
    raise ParseError(f"unknown norm kind {kind!r}")


def parse_norm(text: str, dim: int) -> MinkowskiNorm:
    """Parse a CLI norm identifier or a JSON spec / spec file path.

    Short forms: ``euclidean``, ``l2``, ``lq:4``, ``lq:inf``.
    """
    text = text.strip()
    if text.startswith("{"):
        try:
            return norm_from_spec(json.loads(text), dim)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad norm JSON: {exc}") from None
    if text in ("euclidean", "l2"):
        return euclidean(dim)
    if text.startswith("lq:") or text.startswith("l") and text[1:].replace(".", "", 1).isdigit():
        q = text[3:] if text.startswith("lq:") else text[1:]
        return lq(math.inf if q == "inf" else float(q), dim)
    try:
        with open(text, encoding="utf-8") as fh:
            return norm_from_spec(json.load(fh), dim)
    except FileNotFoundError:
        raise ParseError(f"unknown norm {text!r} (not a known name or an existing file)") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{text}: bad norm JSON: {exc}") from None
