import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nelsonsim.model_space import (
    BasisTooLarge,
    ModeGrid,
    ParticleLattice,
    build_box_modes,
    build_radial_modes,
    build_tensor_basis,
    enumerate_fock,
    fock_size,
)

from oracles import brute_fock_states


def lattice(d=1, L=2 * math.pi, n=5):
    return ParticleLattice(d, L, n)


def test_box_modes_d1_inner_shell():
    g = build_box_modes(lattice(), 0.5, 1.5)
    assert sorted(g.k[:, 0]) == [-1.0, 1.0]
    assert np.all(g.weights == 1.0)


def test_box_modes_d1_two_shells():
    g = build_box_modes(lattice(), 0.5, 2.5)
    assert sorted(g.k[:, 0]) == [-2.0, -1.0, 1.0, 2.0]


@pytest.mark.parametrize("hi,count,shells", [(1.5, 18, 2), (2.0, 26, 3)])
def test_box_modes_d3_count_matches_brute_force(hi, count, shells):
    g = build_box_modes(lattice(3, 2 * math.pi, 3), 0.5, hi)
    cube = [v for v in np.ndindex(3, 3, 3) if any(c != 1 for c in v)]
    norms = [math.sqrt(sum((c - 1) ** 2 for c in v)) for v in cube]
    assert len(cube) == 26
    assert g.size == sum(1 for r in norms if r <= hi) == count
    assert len(set(np.round(g.omega, 12))) == shells


def test_box_modes_empty_window_rejected():
    with pytest.raises(ValueError, match="no modes"):
        build_box_modes(lattice(), 0.1, 0.5)


def test_box_modes_lie_on_lattice_and_exclude_zero():
    lat = lattice(2, 2 * math.pi / 0.7, 7)
    g = build_box_modes(lat, 0.0, 3.0)
    assert np.all(g.omega > 0)
    assert np.allclose(g.k, g.integer_k * lat.spacing, rtol=0, atol=0)
    assert np.all(np.abs(g.integer_k) <= lat.half)


def test_lattice_closed_under_negation():
    lat = lattice(2, 3.0, 5)
    m = {tuple(v) for v in lat.integer_momenta}
    assert all(tuple(-np.array(v)) in m for v in m)
    assert len(m) == lat.size
    assert math.isclose(lat.spacing, 2 * math.pi / 3.0)


@pytest.mark.parametrize("n", [0, 4, -3])
def test_lattice_rejects_even_or_nonpositive_points(n):
    with pytest.raises(ValueError):
        ParticleLattice(1, 1.0, n)


def test_radial_shell_volume():
    g = build_radial_modes(1.0, 2.0, 12, 50)
    assert math.isclose(g.weights.sum(), 4 * math.pi / 3 * 7, rel_tol=1e-12)


def test_radial_inverse_radius_integral():
    g = build_radial_modes(1.0, 2.0, 12, 50)
    assert math.isclose(np.sum(g.weights / g.omega), 6 * math.pi, rel_tol=1e-12)


def test_radial_tail_substitution_matches_closed_form():
    # 4 pi int_1^inf r^2 dr / (r^2 (r^2 + r)) = 4 pi ln 2
    g = build_radial_modes(1.0, math.inf, 60, 50, tail="reciprocal")
    val = np.sum(g.weights / (g.omega**2 * (g.omega**2 + g.omega)))
    assert math.isclose(val, 4 * math.pi * math.log(2), rel_tol=1e-8)


def test_radial_infinite_needs_declared_tail():
    with pytest.raises(ValueError):
        build_radial_modes(1.0, math.inf, 10, 10)


def test_mode_grid_invariants_enforced():
    with pytest.raises(ValueError):
        ModeGrid(np.array([[0.0]]), np.array([1.0]), 0.0, 1.0, 1)
    with pytest.raises(ValueError):
        ModeGrid(np.array([[1.0]]), np.array([0.0]), 0.0, 1.0, 1)


def test_mode_grid_json_round_trip():
    g = build_box_modes(lattice(2, 2 * math.pi, 5), 0.0, 2.0)
    d = json.loads(g.to_json())
    assert {"dim", "cutoffs", "spacing"} <= set(d)
    back = ModeGrid.from_dict(d)
    assert np.array_equal(back.k, g.k) and np.array_equal(back.weights, g.weights)
    assert np.array_equal(back.integer_k, g.integer_k)


@pytest.mark.parametrize("M,n,size", [(2, 1, 3), (2, 2, 6), (3, 2, 10)])
def test_fock_sizes(M, n, size):
    f = enumerate_fock(M, n)
    assert f.size == size == fock_size(M, n)
    assert not f.states[0].any()


def test_fock_m2_n1_order():
    assert [tuple(s) for s in enumerate_fock(2, 1).states] == [(0, 0), (1, 0), (0, 1)]


@pytest.mark.parametrize("M", range(1, 7))
@pytest.mark.parametrize("n_max", range(0, 5))
def test_fock_matches_brute_force(M, n_max):
    f = enumerate_fock(M, n_max)
    brute = brute_fock_states(M, n_max)
    assert [tuple(s) for s in f.states] == brute
    assert f.size == sum(math.comb(M + n - 1, n) for n in range(n_max + 1))
    for i, s in enumerate(brute):
        assert f.index_of(s) == i


def test_fock_overflow_guard():
    with pytest.raises(BasisTooLarge):
        enumerate_fock(40, 4, max_dim=1000)


@pytest.mark.parametrize("n,fock,total", [(3, (2, 1), 27), (5, (2, 2), 150)])
def test_tensor_dims(n, fock, total):
    b = build_tensor_basis(lattice(1, 2 * math.pi, n), enumerate_fock(*fock))
    assert b.total_dim == total


def test_tensor_overflow_guard():
    with pytest.raises(BasisTooLarge):
        build_tensor_basis(lattice(1, 1.0, 31), enumerate_fock(6, 3), max_dim=10_000)


@given(st.lists(st.integers(0, 26 * 6 - 1), min_size=1, max_size=100))
def test_tensor_index_round_trip(idx):
    b = build_tensor_basis(lattice(1, 1.0, 3), enumerate_fock(2, 2))
    i1, i2, f = b.unflatten(np.array(idx))
    assert np.array_equal(b.flatten(i1, i2, f), idx)


@given(st.integers(1, 3), st.sampled_from([1, 3, 5]), st.lists(st.integers(-20, 20), min_size=3, max_size=3))
def test_shift_permutation_is_bijection(d, n, shift):
    lat = ParticleLattice(d, 1.0, n)
    perm = lat.shift_permutation(shift[:d])
    assert sorted(perm) == list(range(lat.size))
    inv = lat.shift_permutation([-s for s in shift[:d]])
    assert np.array_equal(inv[perm], np.arange(lat.size))


def test_fingerprint_distinguishes_bases():
    a = build_tensor_basis(lattice(1, 1.0, 3), enumerate_fock(2, 1))
    b = build_tensor_basis(lattice(1, 1.0, 3), enumerate_fock(2, 2))
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == build_tensor_basis(lattice(1, 1.0, 3), enumerate_fock(2, 1)).fingerprint()
