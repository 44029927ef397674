import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckn.core import extremal_profile, make_params, sharp_constant
from ckn.errors import ConvergenceError, DegenerateInputError, DomainError, ParseError
from ckn.minkowski import euclidean
from ckn.symmetrize import ckn_test, grid_from_function
from ckn.variational import (RadialProfile, discrete_quotient, discrete_quotient_gradient,
                             extremal_grid, fit_extremal, initial_profile, load_profile,
                             minimize_quotient, minimizer_grid, project_nonincreasing,
                             rayleigh_quotient, resolution_study, save_profile, save_trace,
                             verify_extremal)


def sampled_extremal(P, lam, nodes=2000, method="spline"):
    g = extremal_grid(P, lam, nodes)
    return RadialProfile(g, extremal_profile(P, lam, g), 2.0 - P.n)


def test_extremal_quotient_is_inverse_constant():
    P = make_params(3, 0)
    q = rayleigh_quotient(P, sampled_extremal(P, 1.0))
    # closed form 1/K_0 = sqrt(3) (pi^2/4)^(1/3)
    assert q == pytest.approx(math.sqrt(3) * (math.pi ** 2 / 4) ** (1 / 3), rel=1e-4)
    assert q == pytest.approx(2.3405, abs=1e-4)


def test_lambda_invariance():
    P = make_params(3, 0)
    q1 = rayleigh_quotient(P, sampled_extremal(P, 1.0))
    q4 = rayleigh_quotient(P, sampled_extremal(P, 4.0))
    assert q1 == pytest.approx(q4, rel=1e-6)


@given(st.floats(min_value=1e-6, max_value=1e6))
@settings(max_examples=50, deadline=None)
def test_scaling_invariance(c):
    P = make_params(4, 0.25)
    h = sampled_extremal(P, 1.0, nodes=300)
    ch = h.with_values(c * h.values)
    for method in ("spline", "linear"):
        assert rayleigh_quotient(P, ch, method) == pytest.approx(rayleigh_quotient(P, h, method),
                                                                 rel=1e-12)


@pytest.mark.parametrize("n,a,lam", [(3, 0.0, 1.0), (4, 0.5, 2.0), (5, 0.25, 0.3), (3, 0.75, 1.0)])
def test_verify_extremal(n, a, lam):
    chk = verify_extremal(make_params(n, a), lam)
    assert chk.gap <= 1e-4
    assert chk.target == pytest.approx(sharp_constant(make_params(n, a)).inverse)


@pytest.mark.parametrize("n,a,lam,r0,r1", [(3, 0.0, 1.0, 0.0, 1e-3), (3, 0.75, 2.0, 0.0, 1e-4),
                                            (4, 0.5, 0.5, 10.0, math.inf),
                                            (5, 0.25, 1.0, 0.3, 7.0)])
def test_exact_extremal_integrals_against_quad(n, a, lam, r0, r1):
    from scipy.integrate import quad
    from ckn.variational import _extremal_integrals
    P = make_params(n, a)
    s, e = P.s, P.extremal_exp

    def dh(r):
        return e * (lam + r ** s) ** (e - 1) * s * r ** (s - 1)

    # substitute r = exp(x) so the cusp at 0 and the tail are both tame
    lo = math.log(r0) if r0 > 0 else -60.0
    hi = math.log(r1) if math.isfinite(r1) else 60.0
    opts = dict(limit=400, epsabs=0, epsrel=1e-12)
    num = quad(lambda x: dh(math.exp(x)) ** 2 * math.exp(x * n), lo, hi, **opts)[0]
    den = quad(lambda x: extremal_profile(P, lam, math.exp(x)) ** P.p
               * math.exp(x * (n - P.ap)), lo, hi, **opts)[0]
    got = _extremal_integrals(P, lam, r0, r1)
    assert got[0] == pytest.approx(num, rel=1e-9)
    assert got[1] == pytest.approx(den, rel=1e-9)


def test_resolution_study_reports_coarse_gap():
    study = resolution_study(make_params(3, 0), node_counts=(50, 200, 2000))
    gaps = [c.gap for c in study]
    assert gaps[0] > 1e-5 and gaps[0] > gaps[-1]
    assert gaps[-1] <= 1e-8


def test_quotient_errors():
    P = make_params(3, 0)
    g = minimizer_grid(50)
    with pytest.raises(DegenerateInputError):
        rayleigh_quotient(P, RadialProfile(g, np.zeros_like(g), -1.0))
    with pytest.raises(DomainError, match="diverge"):
        rayleigh_quotient(P, RadialProfile(g, np.exp(-g), -0.4))
    with pytest.raises(DomainError):
        rayleigh_quotient(P, RadialProfile(g, np.exp(-g), -1.0), method="cubic")


def test_radial_profile_validation():
    with pytest.raises(DomainError):
        RadialProfile([0.1, 1.0, 2.0], [1.0, 0.5, 0.1], -1.0)
    with pytest.raises(DomainError):
        RadialProfile([0.0, 1.0, 2.0], [1.0, -0.5, 0.1], -1.0)
    with pytest.raises(DomainError):
        RadialProfile([0.0, 1.0, 2.0], [1.0, 0.5, 0.1], 0.0)
    h = RadialProfile([0.0, 1.0, 2.0], [1.0, 0.5, 0.25], -1.0)
    assert h(4.0) == pytest.approx(0.125) and h(0.5) == pytest.approx(0.75)


def test_discrete_quotient_never_below_constant():
    for n, a in [(3, 0.0), (3, 0.5), (4, 0.25)]:
        P = make_params(n, a)
        target = sharp_constant(P).inverse
        for kind in ("gaussian", "plateau", "extremal:1"):
            assert discrete_quotient(P, initial_profile(P, kind)) >= target * (1 - 1e-9)


@pytest.mark.parametrize("n,a", [(3, 0.0), (3, 0.5), (5, 0.75)])
def test_gradient_matches_finite_differences(n, a):
    P = make_params(n, a)
    rng = np.random.default_rng(4)
    g = minimizer_grid(60)
    v = np.sort(rng.uniform(0.5, 1.0, g.size))[::-1] * (1.0 + g) ** (2.0 - n)
    h = RadialProfile(g, v, 2.0 - n)
    grad = discrete_quotient_gradient(P, h)
    # directional derivatives along random relative perturbations; per-node
    # differences drown in cancellation where v is tiny
    for _ in range(8):
        d = v * rng.standard_normal(g.size)
        t = 1e-6
        fd = (discrete_quotient(P, h.with_values(v + t * d))
              - discrete_quotient(P, h.with_values(v - t * d))) / (2 * t)
        assert grad @ d == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_projection():
    v = np.array([1.0, 3.0, 2.0, -1.0, 0.5])
    out = project_nonincreasing(v)
    assert np.all(np.diff(out) <= 0) and np.all(out >= 0)
    assert np.array_equal(project_nonincreasing([3.0, 2.0, 1.0]), [3.0, 2.0, 1.0])


def test_minimize_from_gaussian():
    P = make_params(3, 0)
    res = minimize_quotient(P, initial_profile(P, "gaussian"))
    target = sharp_constant(P).inverse
    assert res.converged
    assert abs(res.quotient / target - 1) <= 5e-3
    assert res.quotient >= target * (1 - 1e-3)
    assert res.profile.is_nonincreasing
    qs = [q for _, q, _ in res.trace]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(qs, qs[1:]))
    prof, q = res                                        # unpacks as (profile, quotient)
    assert q == res.quotient


def test_minimize_from_extremal_is_immediate():
    P = make_params(3, 0)
    res = minimize_quotient(P, initial_profile(P, "extremal:1"))
    assert res.converged and res.iterations <= 10


def test_minimize_from_plateau_finds_an_extremal():
    P = make_params(3, 0)
    res = minimize_quotient(P, initial_profile(P, "plateau"))
    assert abs(res.quotient / sharp_constant(P).inverse - 1) <= 5e-3
    lam, c, resid = fit_extremal(P, res.profile)
    assert resid <= 0.02
    assert lam > 0 and c > 0


def test_minimize_zero_iterations_returns_start():
    P = make_params(3, 0)
    init = initial_profile(P, "gaussian")
    res = minimize_quotient(P, init, iters=0)
    assert res.iterations == 0 and not res.converged
    assert res.quotient == pytest.approx(discrete_quotient(P, init), rel=1e-12)


def test_minimize_degenerate_start():
    P = make_params(3, 0)
    g = minimizer_grid(50)
    with pytest.raises(DegenerateInputError):
        minimize_quotient(P, RadialProfile(g, np.zeros_like(g), -1.0))


def test_random_starts_stay_above_constant():
    P = make_params(3, 0)
    target = sharp_constant(P).inverse
    for seed in range(20):
        res = minimize_quotient(P, initial_profile(P, "random", seed=seed), seed=seed)
        assert res.quotient >= target * (1 - 1e-3)
        assert res.quotient <= target * (1 + 5e-3)


def test_initial_profile_kinds():
    P = make_params(3, 0)
    a = initial_profile(P, "random", seed=3)
    b = initial_profile(P, "random", seed=3)
    assert np.array_equal(a.values, b.values) and a.is_nonincreasing
    with pytest.raises(DomainError):
        initial_profile(P, "triangle")


def test_dimensional_reduction_consistency():
    # a radial Euclidean bump: the grid CKN ratio against the radial quotient
    P = make_params(3, 0)
    prof = lambda r: np.where(r < 1, np.cos(0.5 * np.pi * np.minimum(r, 1)) ** 2, 0.0)
    u = grid_from_function(lambda x: prof(np.linalg.norm(x, axis=-1)), euclidean(3), 1.5, 96)
    g = np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 2000)])
    h = RadialProfile(g, prof(g), -1.0)
    ratio = ckn_test(P, u).ratio
    assert ratio * rayleigh_quotient(P, h) == pytest.approx(1.0, rel=0.02)


def test_profile_round_trip(tmp_path):
    P = make_params(3, 0.5)
    h = initial_profile(P, "extremal:2")
    path = tmp_path / "h.csv"
    save_profile(h, path)
    back = load_profile(path)
    assert np.array_equal(back.grid, h.grid) and np.array_equal(back.values, h.values)
    assert back.tail_exponent == h.tail_exponent


@pytest.mark.parametrize("text,line", [
    ("rho,value\n0,1\n1,0.5\n2,0.1\n", None),
    ("# tail: r^-1\nrho,value\n0,1\n", 1),
    ("# tail: rho^-1\nr,v\n0,1\n", 2),
    ("# tail: rho^-1\nrho,value\n0,x\n", 3),
])
def test_profile_parse_errors(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ParseError) as info:
        load_profile(path)
    assert info.value.line == line


def test_trace_output(tmp_path):
    path = tmp_path / "trace.csv"
    save_trace([(0, 2.5, 0.0), (1, 2.4, 0.5)], path)
    assert path.read_text().splitlines()[0] == "iter,quotient,step"
