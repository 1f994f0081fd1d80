import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from nelsonsim import hamiltonians as hm
from nelsonsim.experiments import GROSS_TOY, ToySpec
from nelsonsim.model_space import ParticleLattice, build_box_modes, build_tensor_basis, enumerate_fock
from nelsonsim.operators import (
    commutator,
    field_energy,
    kinetic,
    number_op,
    occupation_projector,
    total_momentum,
)

SMALL = ToySpec(spacing=2.0, points=5, n_max=2, mode_hi=4.0)
P = hm.PhysParams(mu=4.0, lambda_uv=4.0, K=2.0, eps=0.5)


def small(n_max=2):
    return SMALL.build(n_max=n_max)


def herm_err(op):
    m = op.matrix
    return abs(m - m.conj().T).max() if m.nnz else 0.0


# --- parameters ---------------------------------------------------------------------

@pytest.mark.parametrize(
    "kw",
    [dict(mu=0, lambda_uv=1, K=1), dict(mu=1, lambda_uv=1, K=2), dict(mu=1, lambda_uv=2, K=1, eps=1.5), dict(mu=1, lambda_uv=2, K=1, eps=-1)],
)
def test_params_validation(kw):
    with pytest.raises(ValueError):
        hm.PhysParams(**kw)


def test_mu_scaling():
    p = hm.PhysParams.mu_scaling(1e3, 100.0)
    assert p.K == pytest.approx(10.0) and p.eps == pytest.approx(1e-3)
    assert hm.PhysParams.mu_scaling(1e6, 16.0).K == 16.0


# --- structure ------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["HN", "HK", "HepsK", "removed", "heff", "pairs", "kB"])
def test_hamiltonians_hermitian_and_momentum_conserving(name):
    lat, grid, basis = small()
    ops = {
        "HN": lambda: hm.assemble_HN(P, grid, basis, with_self_energy=True),
        "HK": lambda: hm.assemble_HK(P, grid, basis),
        "HepsK": lambda: hm.assemble_HepsK(P, grid, basis),
        "removed": lambda: hm.removed_terms(P, grid, basis),
        "heff": lambda: hm.assemble_heff(basis, grid),
        "pairs": lambda: hm.pair_terms(P, grid, basis),
        "kB": lambda: hm.momentum_coupling(P, grid, basis),
    }
    H = ops[name]()
    assert H.hermitian and herm_err(H) == 0
    Ptot = total_momentum(basis, grid)
    c = commutator(H, Ptot)
    assert (abs(c).max() if c.nnz else 0.0) <= 1e-12 * max(1.0, abs(H.matrix).max())


def test_decoupled_limit_is_free():
    lat, grid, basis = small()
    p0 = P.with_(coupling=0.0)
    free = kinetic(basis).matrix + p0.mu * field_energy(basis, grid).matrix
    for H in (hm.assemble_HN(p0, grid, basis), hm.assemble_HK(p0, grid, basis)):
        assert abs(H.matrix - free).max() == 0


def test_HN_vacuum_expectation_is_kinetic():
    lat, grid, basis = small()
    H = hm.assemble_HN(P, grid, basis)
    kin = kinetic(basis).matrix.diagonal().real
    vac = np.nonzero(occupation_projector(basis, 0))[0]
    assert np.allclose(H.matrix.diagonal()[vac].real, kin[vac], atol=0)


def test_HN_binds_on_one_mode_toy():
    lat = ParticleLattice(1, 2 * math.pi / 1.0, 1)
    grid = build_box_modes(ParticleLattice(1, 2 * math.pi, 3), 0.0, 1.0)
    keep = grid.integer_k[:, 0] == 1
    from nelsonsim.model_space import ModeGrid

    g1 = ModeGrid(grid.k[keep], grid.weights[keep], 0.0, 1.0, 1, grid.integer_k[keep], grid.spacing)
    lat = ParticleLattice(1, 2 * math.pi, 3)
    basis = build_tensor_basis(lat, enumerate_fock(1, 6))
    H = hm.assemble_HN(hm.PhysParams(mu=1.0, lambda_uv=1.0, K=1.0), g1, basis).toarray()
    assert sla.eigvalsh(H)[0] < 0


def test_grid_beyond_cutoff_rejected():
    lat, grid, basis = small()
    with pytest.raises(ValueError):
        hm.assemble_HN(P.with_(lambda_uv=2.0, K=1.0), grid, basis)


# --- dressing unitary --------------------------------------------------------------------

def test_unitary_is_identity_at_K_equal_Lambda():
    lat, grid, basis = small()
    U = hm.assemble_gross_unitary(P.with_(K=P.lambda_uv), grid, basis)
    assert abs(U.matrix - np.eye(basis.total_dim)).max() == 0


def test_unitary_on_small_space():
    lat = ParticleLattice(1, 2 * math.pi / 2.0, 3)
    grid = build_box_modes(lat, 0.0, 2.0)
    basis = build_tensor_basis(lat, enumerate_fock(grid.size, 3))
    assert grid.size == 2
    p = hm.PhysParams(mu=4.0, lambda_uv=2.0, K=1.0)
    U = hm.assemble_gross_unitary(p, grid, basis).toarray()
    assert np.linalg.norm(U.conj().T @ U - np.eye(basis.total_dim), 2) <= 1e-12
    vac = basis.flatten(lat.index_of(np.array([[0]]))[0], lat.index_of(np.array([[0]]))[0], 0)
    assert abs(U[vac, vac]) < 1


def test_unitary_matches_scipy_expm():
    lat, grid, basis = GROSS_TOY.build(n_max=2)
    p = hm.PhysParams(mu=4.0, lambda_uv=2.0, K=1.0)
    U = hm.assemble_gross_unitary(p, grid, basis).toarray()
    ref = sla.expm(hm.gross_generator(p, grid, basis).toarray())
    assert np.abs(U - ref).max() <= 1e-12


def test_dressed_equals_bare_at_K_equal_Lambda():
    lat, grid, basis = small()
    p = P.with_(K=P.lambda_uv, eps=0.0)
    HN = hm.assemble_HN(p, grid, basis, with_self_energy=True).matrix
    HK = hm.assemble_HK(p, grid, basis).matrix
    assert abs(HN - HK).max() == 0


# --- pair operator A ------------------------------------------------------------------------

def test_A_kills_low_occupations_and_lowers_number_by_two():
    lat, grid, basis = small()
    A = hm.assemble_A(P, grid, basis, 1).matrix
    assert A.nnz > 0
    low = occupation_projector(basis, 1)
    assert abs(A[:, np.nonzero(low)[0]]).max() == 0
    tot = np.tile(basis.fock.total, basis.particle_dim)
    rows, cols = A.nonzero()
    assert np.all(tot[cols] - tot[rows] == 2)


def test_vacuum_pair_self_energy_positive():
    lat, grid, basis = small()
    op = hm.assemble_vacuum_kernel_AA(P, 1, 1, grid, basis)
    vac = basis.flatten(lat.size // 2, lat.size // 2, 0)
    v = np.zeros(basis.total_dim)
    v[vac] = 1
    assert np.vdot(v, op.matrix @ v).real > 0


def test_vacuum_kernel_stays_in_vacuum_sector():
    lat, grid, basis = small()
    op = hm.assemble_vacuum_kernel_AA(P, 1, 2, grid, basis).matrix
    vac = occupation_projector(basis, 0)
    rows, cols = op.nonzero()
    assert np.all(vac[rows]) and np.all(vac[cols])


def test_vacuum_kernel_needs_two_bosons():
    lat, grid, basis = small(n_max=1)
    with pytest.raises(ValueError):
        hm.assemble_vacuum_kernel_AA(P, 1, 1, grid, basis)


def test_e0_discrete_is_vacuum_expectation_without_kinetic_terms():
    # with huge mu the particle kinetic energy and E_K drop out of the resolvent
    lat = ParticleLattice(1, 2 * math.pi / 2.0, 1)
    grid = build_box_modes(ParticleLattice(1, 2 * math.pi / 2.0, 5), 0.0, 4.0)
    basis = build_tensor_basis(ParticleLattice(1, 2 * math.pi / 2.0, 5), enumerate_fock(grid.size, 2))
    p = hm.PhysParams(mu=1e8, lambda_uv=4.0, K=1.0)
    op = hm.assemble_vacuum_kernel_AA(p, 1, 1, grid, basis)
    vac = basis.flatten(2, 2, 0)
    got = op.matrix[vac, vac].real
    assert got == pytest.approx(hm.e0_discrete(p, grid), rel=1e-6)


# --- H_K versus H_{eps,K} ---------------------------------------------------------------------

def test_removed_terms_are_the_difference():
    lat, grid, basis = small()
    for p in (P, P.with_(eps=0.0), P.with_(eps=1.0)):
        HK = hm.assemble_HK(p, grid, basis).matrix
        HE = hm.assemble_HepsK(p, grid, basis).matrix
        R = hm.removed_terms(p, grid, basis).matrix
        assert abs(HK - HE - R).max() <= 1e-12 * abs(HK).max()


def test_removed_terms_have_no_vacuum_diagonal():
    lat, grid, basis = small()
    R = hm.removed_terms(P, grid, basis).matrix
    vac = np.nonzero(occupation_projector(basis, 0))[0]
    assert abs(R[vac][:, vac]).max() == 0


def test_heff_commutes_with_number_and_attracts():
    lat, grid, basis = small()
    h = hm.assemble_heff(basis, grid)
    N = number_op(basis, grid)
    assert commutator(h, N).nnz == 0 or abs(commutator(h, N)).max() == 0
    free = kinetic(basis).toarray()
    assert sla.eigvalsh(h.toarray())[0] < sla.eigvalsh(free)[0]


def test_heff_needs_grid_for_discrete_W():
    lat, grid, basis = small()
    with pytest.raises(ValueError):
        hm.assemble_heff(basis, None, "discrete")
    assert hm.assemble_heff(basis, None, "continuum").hermitian


# --- scalars ---------------------------------------------------------------------------------

def test_scalar_audit_matches():
    lat, grid, basis = GROSS_TOY.build(n_max=2)
    p = hm.PhysParams(mu=4.0, lambda_uv=2.0, K=1.0)
    a = hm.scalar_audit(p, grid)
    assert a["self_part"] == pytest.approx(a["expected_self"], rel=1e-12)
    assert np.allclose(a["pair_coefficients"], a["expected_pair"], rtol=1e-12, atol=0)


def test_discrete_self_energy_on_radial_grid_matches_closed_form():
    from nelsonsim.integrals import E_K0
    from nelsonsim.model_space import build_radial_modes

    p = hm.PhysParams(mu=2.0, lambda_uv=4.0, K=2.0)
    grid = build_radial_modes(0.0, 2.0, 50, 20, tail=None)
    assert hm.self_energy0_discrete(p, grid, 2.0) == pytest.approx(E_K0(2.0, 2.0).value, rel=1e-10)


def test_scalars_sources_share_form():
    lat, grid, basis = small()
    for src in ("discrete", "continuum"):
        s = hm.scalars(P, grid, src)
        assert s.E_K <= s.E_Lambda and s.e0 >= 0
        assert s.E_K0 == pytest.approx(s.E_K - s.e0)
    with pytest.raises(ValueError):
        hm.scalars(P, grid, "other")


@given(st.floats(0.0, 3.0))
def test_coupling_scales_scalars(lam):
    lat, grid, basis = small()
    s1 = hm.scalars(P, grid)
    s = hm.scalars(P.with_(coupling=lam), grid)
    assert s.E_K - s.e0 == pytest.approx(lam**2 * (s1.E_K - s1.e0), rel=1e-12, abs=1e-300)
    assert s.e0 == pytest.approx(lam**4 * s1.e0, rel=1e-12, abs=1e-300)
