import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from ckn.core import make_params, sharp_constant, unit_ball_volume
from ckn.errors import DomainError, ParseError
from ckn.minkowski import euclidean, lq, normalized_measure
from ckn.symmetrize import (GridFunction, _weights, bump, check_hardy_littlewood,
                            check_polya_szego, ckn_test, dirichlet_energy, grid_from_function,
                            load_grid_binary, load_grid_csv, random_grid_function,
                            save_grid_binary, save_grid_csv, smooth_test_functions, symmetrize,
                            truncated_extremal, weighted_lp_sum)

E3 = euclidean(3)
L4 = lq(4.0, 3)
NORMS = [E3, L4]


def small_random(norm, seed, m=16):
    return random_grid_function(norm, L=1.0, m=m, seed=seed)


@pytest.mark.parametrize("norm", NORMS, ids=["l2", "l4"])
@pytest.mark.parametrize("seed", range(5))
def test_multiset_and_level_measures_preserved(norm, seed):
    u = small_random(norm, seed)
    s = symmetrize(u)
    assert np.array_equal(np.sort(u.values, axis=None), np.sort(s.values, axis=None))
    for c in np.unique(u.values)[::7]:
        assert np.count_nonzero(u.values > c) == np.count_nonzero(s.values > c)


@pytest.mark.parametrize("norm", NORMS, ids=["l2", "l4"])
def test_output_radially_nonincreasing(norm):
    u = small_random(norm, 3)
    s = symmetrize(u)
    d = s.distances().ravel()
    order = np.argsort(d, kind="stable")
    assert np.all(np.diff(s.values.ravel()[order]) <= 0)


@given(st.integers(0, 10_000), st.sampled_from(NORMS))
@settings(max_examples=25, deadline=None)
def test_idempotent(seed, norm):
    s = symmetrize(small_random(norm, seed, m=12))
    assert np.array_equal(symmetrize(s).values, s.values)


def test_radial_function_is_fixed_up_to_ties():
    u = grid_from_function(bump(radius=0.6, shape=L4), L4, 1.0, 24)
    s = symmetrize(u)
    d = np.round(u.distances() / u.h, 9)
    for shell in np.unique(d[u.values > 0]):
        mask = d == shell
        assert np.allclose(np.sort(u.values[mask]), np.sort(s.values[mask]), rtol=0, atol=1e-15)


@pytest.mark.parametrize("norm", NORMS, ids=["l2", "l4"])
def test_indicator_becomes_ball(norm):
    rng = np.random.default_rng(0)
    m = 24
    v = np.zeros((m,) * 3)
    v[4:20, 4:20, 4:20] = rng.random((16, 16, 16)) < 0.1
    u = GridFunction(3, 1.0, m, v, norm)
    s = symmetrize(u)
    count = int(v.sum())
    d = s.distances()
    inside = d[s.values > 0]
    outside = d[s.values == 0]
    assert inside.max() <= outside.min() + 1e-12
    # the occupied set is the F-ball of measure count * cell, up to one shell
    radius = (count * u.cell_measure / unit_ball_volume(3)) ** (1 / 3)
    assert abs(inside.max() - radius) <= 2 * u.h


def test_boundary_support_rejected():
    v = np.zeros((12,) * 3)
    v[1, 6, 6] = 1.0
    with pytest.raises(DomainError, match="boundary"):
        symmetrize(GridFunction(3, 1.0, 12, v, E3))
    v = np.zeros((12,) * 3)
    v[2:10, 2:10, 2:10] = 1.0            # clear, but the ball of equal measure is not
    with pytest.raises(DomainError, match="enlarge"):
        symmetrize(GridFunction(3, 1.0, 12, v, E3))


def test_grid_validation():
    with pytest.raises(DomainError):
        GridFunction(3, 1.0, 8, np.zeros((8, 8)), E3)
    with pytest.raises(DomainError):
        GridFunction(3, 1.0, 8, -np.ones((8,) * 3), E3)
    with pytest.raises(DomainError):
        GridFunction(2, 1.0, 8, np.zeros((8, 8)), E3)
    u = GridFunction(3, 1.0, 8, np.zeros((8,) * 3), L4)
    assert u.scale == pytest.approx(normalized_measure(L4).scale)
    assert u.axis()[u.m // 2] == 0.0


# -- Hardy-Littlewood ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_hardy_littlewood_a0_equality(seed):
    r = check_hardy_littlewood(make_params(3, 0), small_random(L4, seed))
    assert r.lhs == r.rhs and r.holds


@pytest.mark.parametrize("norm", NORMS, ids=["l2", "l4"])
@pytest.mark.parametrize("seed", range(6))
def test_hardy_littlewood_random(norm, seed):
    r = check_hardy_littlewood(make_params(3, 0.5), small_random(norm, seed, m=24))
    assert r.holds and r.lhs <= r.rhs * (1 + 1e-12)


def test_hardy_littlewood_radial_fixed_point():
    u = grid_from_function(bump(radius=0.6, shape=L4), L4, 1.0, 24)
    r = check_hardy_littlewood(make_params(3, 0.5), u)
    assert r.lhs == pytest.approx(r.rhs, rel=1e-12)


@pytest.mark.parametrize("norm", NORMS, ids=["l2", "l4"])
@pytest.mark.parametrize("seed", range(3))
def test_rearrangement_attains_assignment_optimum(norm, seed):
    # 3^3 interior cells of a 7^3 grid: the best arrangement of the values
    # against the weights, found by an assignment solver, equals the u* sum
    P = make_params(3, 0.5)
    rng = np.random.default_rng(seed)
    v = np.zeros((7,) * 3)
    v[2:5, 2:5, 2:5] = rng.exponential(size=(3, 3, 3))
    u = GridFunction(3, 1.0, 7, v, norm)
    w = _weights(P, u)[2:5, 2:5, 2:5].ravel()
    vals = v[2:5, 2:5, 2:5].ravel() ** P.p
    rows, cols = linear_sum_assignment(-np.outer(vals, w))
    best = float(np.sum(vals[rows] * w[cols])) * u.cell_measure
    assert weighted_lp_sum(P, symmetrize(u), exact=True) == pytest.approx(best, rel=1e-13)


# -- Polya-Szego --------------------------------------------------------------------

@pytest.mark.parametrize("norm", NORMS, ids=["l2", "l4"])
def test_polya_szego_radial_bump(norm):
    (_, u), = smooth_test_functions(norm, m=48, names=["radial_bump"])
    r = check_polya_szego(make_params(3, 0), u)
    assert r.holds_within_tol and abs(r.margin) <= 0.02


def test_polya_szego_translated_and_two_bumps():
    P = make_params(3, 0)
    fns = dict(smooth_test_functions(E3, m=48, names=["shifted_bump", "two_bumps"]))
    shifted = check_polya_szego(P, fns["shifted_bump"])
    two = check_polya_szego(P, fns["two_bumps"])
    assert shifted.holds_within_tol and two.holds_within_tol
    assert two.lhs < two.rhs
    # regression snapshot: splitting the mass costs more energy than shifting it
    assert two.margin < shifted.margin


def test_polya_szego_refuses_non_smooth_norm():
    u = grid_from_function(bump(radius=0.5), lq(1, 3), 1.0, 16)
    with pytest.raises(DomainError, match="not smooth"):
        check_polya_szego(make_params(3, 0), u)


def test_dirichlet_energy_against_radial_quadrature():
    from scipy.integrate import quad
    R = 0.6

    def dphi(r):
        t = r / R
        return math.exp(1 - 1 / (1 - t * t)) * (-2 * t / (1 - t * t) ** 2) / R

    exact = 4 * math.pi * quad(lambda r: dphi(r) ** 2 * r * r, 0, R, limit=200)[0]
    errs = [abs(dirichlet_energy(grid_from_function(bump(radius=R), E3, 1.0, m)) - exact)
            for m in (32, 64, 128)]
    # central differences: second order
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3
    assert errs[2] <= 1e-2 * exact


# -- CKN ratio --------------------------------------------------------------------------

def test_ckn_scaling_invariance():
    P = make_params(3, 0.5)
    u = small_random(L4, 2)
    base = ckn_test(P, u).ratio
    for c in (1e-3, 7.0, 1e4):
        assert ckn_test(P, c * u).ratio == pytest.approx(base, rel=1e-12)


@pytest.mark.parametrize("norm", NORMS, ids=["l2", "l4"])
def test_ckn_off_center_bump_below_constant(norm):
    P = make_params(3, 0.5)
    (_, u), = smooth_test_functions(norm, m=48, names=["shifted_bump"])
    assert ckn_test(P, u).ratio < sharp_constant(P).value


def test_ckn_chain_under_symmetrization():
    P = make_params(3, 0.5)
    for name, u in smooth_test_functions(L4, m=32, names=["two_bumps", "diagonal_shift"]):
        assert ckn_test(P, symmetrize(u)).ratio >= ckn_test(P, u).ratio * (1 - 0.02)


def test_ckn_zero_function():
    with pytest.raises(DomainError):
        ckn_test(make_params(3, 0), GridFunction(3, 1.0, 8, np.zeros((8,) * 3), E3))


def test_truncated_extremal_shape():
    P = make_params(3, 0)
    u = truncated_extremal(P, E3, m=32)
    assert u.boundary_clear()
    assert u.values[u.origin_index] == u.values.max()
    assert u.L == pytest.approx(8.0)


# -- serialisation ----------------------------------------------------------------------

@pytest.mark.parametrize("saver,loader", [(save_grid_csv, load_grid_csv),
                                          (save_grid_binary, load_grid_binary)])
def test_round_trip(tmp_path, saver, loader):
    u = small_random(L4, 9, m=10)
    path = tmp_path / "u.dat"
    saver(u, path)
    back = loader(path)
    assert np.array_equal(back.values, u.values)
    assert (back.n, back.L, back.m, back.scale) == (u.n, u.L, u.m, u.scale)
    assert back.norm.spec() == u.norm.spec()


def test_binary_corruption(tmp_path):
    u = small_random(E3, 1, m=8)
    path = tmp_path / "u.bin"
    save_grid_binary(u, path)
    raw = path.read_bytes()
    for bad in (b"XXXX" + raw[4:], raw[:10], raw[:-8]):
        path.write_bytes(bad)
        with pytest.raises(ParseError):
            load_grid_binary(path)


def test_csv_corruption(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("n,L,m\n")
    with pytest.raises(ParseError):
        load_grid_csv(path)
    u = small_random(E3, 1, m=8)
    save_grid_csv(u, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ParseError, match="expected"):
        load_grid_csv(path)
