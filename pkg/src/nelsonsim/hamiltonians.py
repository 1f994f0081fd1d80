"""Hamiltonians and the dressing transformation on a box-aligned toy model.

All assemblers take the same triple (params, grid, basis).  Scalar energies
(self-energies, e0, the induced pair potential) come either from mode sums on
the active grid (``source="discrete"``) or from the integrals module
(``source="continuum"``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import integrals
from .model_space import ModeGrid, TensorBasis
from .operators import (
    FormFactor,
    SparseOperator,
    diagonal,
    dressed_smeared,
    field_energy,
    form_B,
    form_G,
    form_kB,
    hermitian_part_sum,
    identity,
    kinetic,
    momentum,
    occupation_projector,
    pair_potential,
    windowed_resolvent,
)

DENSE_EXPM_THRESHOLD = 4000


@dataclass(frozen=True)
class PhysParams:
    """Physical parameters; ``coupling`` multiplies every form factor (1 = the model as stated)."""

    mu: float
    lambda_uv: float
    K: float
    eps: float = 0.0
    t: float = 0.1
    coupling: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.lambda_uv > 0:
            raise ValueError(f"lambda_uv must be positive, got {self.lambda_uv}")
        if not self.K > 0:
            raise ValueError(f"K must be positive, got {self.K}")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if not self.eps <= self.K:
            raise ValueError(f"need eps <= K (eps={self.eps}, K={self.K})")
        if not self.K <= self.lambda_uv:
            raise ValueError(f"need K <= lambda_uv (K={self.K}, lambda_uv={self.lambda_uv})")

    @classmethod
    def mu_scaling(cls, mu: float, lambda_uv: float, t: float = 0.1, coupling: float = 1.0) -> "PhysParams":
        """K = mu^{1/3}, eps = 1/mu, capped so that K <= lambda_uv."""
        K = min(mu ** (1 / 3), lambda_uv)
        return cls(mu=mu, lambda_uv=lambda_uv, K=K, eps=min(1 / mu, K), t=t, coupling=coupling)

    def with_(self, **kw) -> "PhysParams":
        d = asdict(self)
        d.update(kw)
        return PhysParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Scalars from mode sums
# ---------------------------------------------------------------------------

def self_energy0_discrete(params: PhysParams, grid: ModeGrid, hi: float, lo: float = 0.0, *, strict_lo=False) -> float:
    """sum_j w_j 2 mu / (|k_j| (k_j^2 + mu |k_j|)) over the window, times coupling^2."""
    mask = grid.window(lo, hi, include_lo=not strict_lo)
    w = grid.omega[mask]
    mu = params.mu
    return float(params.coupling**2 * np.sum(grid.weights[mask] * 2 * mu / (w * (w * w + mu * w))))


def F_coefficients(params: PhysParams, grid: ModeGrid) -> np.ndarray:
    """F(k) = k b(k) on K < |k| <= Lambda, shape (M, d)."""
    return form_kB(grid, None, params.K, params.lambda_uv, params.mu, coupling=params.coupling).coefficients.real


def e0_discrete(params: PhysParams, grid: ModeGrid) -> float:
    """sum_{j,l} w_j w_l 2 mu^2 (F_j.F_l)^2 / (mu|k_j| + mu|k_l| + (k_j + k_l)^2).

    This is the vacuum expectation of mu A R A* for one particle at zero momentum
    in the limit where particle kinetic energy and E_K are dropped from R.
    """
    F = F_coefficients(params, grid)
    on = np.nonzero(np.any(F != 0, axis=1))[0]
    if len(on) == 0:
        return 0.0
    F, k, w, om = F[on], grid.k[on], grid.weights[on], grid.omega[on]
    mu = params.mu
    dots = F @ F.T
    ksum2 = np.sum((k[:, None, :] + k[None, :, :]) ** 2, axis=-1)
    den = mu * om[:, None] + mu * om[None, :] + ksum2
    return float(np.sum(w[:, None] * w[None, :] * 2 * mu**2 * dots**2 / den))


@dataclass(frozen=True)
class Scalars:
    E_K: float
    E_Lambda: float
    e0: float
    source: str

    @property
    def E_K0(self) -> float:
        return self.E_K - self.e0


def scalars(params: PhysParams, grid: ModeGrid, source: str = "discrete") -> Scalars:
    """Self-energies sharing a single e0 so that E_Lambda - E_K is source independent in form."""
    if source == "discrete":
        e0 = e0_discrete(params, grid)
        EK = self_energy0_discrete(params, grid, params.K) + e0
        EL = self_energy0_discrete(params, grid, params.lambda_uv) + e0
    elif source == "continuum":
        lam2 = params.coupling**2
        e0 = integrals.e0_value() * lam2**2
        EK = lam2 * integrals.E_K0(params.mu, params.K).value + e0
        EL = lam2 * integrals.E_K0(params.mu, params.lambda_uv).value + e0
    else:
        raise ValueError("source must be 'discrete' or 'continuum'")
    return Scalars(EK, EL, e0, source)


def _weight_lookup(grid: ModeGrid, basis: TensorBasis):
    """Map arbitrary lattice vectors q to the grid weight (0 if q is not a grid mode)."""
    lat = basis.lattice
    wq = np.zeros(lat.size)
    wq[lat.index_of(grid.integer_k)] = grid.weights
    return wq


def V_kernel(params: PhysParams, grid: ModeGrid, basis: TensorBasis):
    """Discrete Fourier coefficients of V_{K,Lambda}: w(q) * (-2 mu (mu|q| + 2 q^2) / (|q| (mu|q| + q^2)^2))."""
    wq = _weight_lookup(grid, basis)
    lam2 = params.coupling**2

    def vhat(q):
        r = np.linalg.norm(q, axis=1)
        return lam2 * wq * integrals.V_K_fourier(r, params.mu, params.K, params.lambda_uv)

    return vhat


def W_kernel(grid: ModeGrid, basis: TensorBasis, source: str = "discrete", lo: float = 0.0, hi: float = math.inf, coupling: float = 1.0):
    """Fourier coefficients of the effective attraction W.

    discrete:   2 w(q) / q^2 over grid modes with lo <= |q| <= hi
    continuum:  2 delta^d / q^2 over every nonzero lattice vector
    The q = 0 coefficient is 0 in both cases.
    """
    lat = basis.lattice
    lam2 = coupling**2
    if source == "discrete":
        mask = grid.window(lo, hi)
        wq = np.zeros(lat.size)
        wq[lat.index_of(grid.integer_k[mask])] = grid.weights[mask]
    elif source == "continuum":
        wq = np.full(lat.size, lat.spacing**lat.dim)
    else:
        raise ValueError("source must be 'discrete' or 'continuum'")

    def vhat(q):
        r2 = np.sum(q * q, axis=1)
        with np.errstate(divide="ignore"):
            v = np.where(r2 > 0, 2 * lam2 * wq / np.where(r2 > 0, r2, 1.0), 0.0)
        return v

    return vhat


# ---------------------------------------------------------------------------
# Assemblers
# ---------------------------------------------------------------------------

def _check(grid: ModeGrid, basis: TensorBasis):
    if grid.size != basis.fock.mode_count:
        raise ValueError(f"grid has {grid.size} modes but Fock basis has {basis.fock.mode_count}")
    if not grid.box_aligned:
        raise ValueError("toy Hamiltonians need a box-aligned grid")
    if grid.dim != basis.lattice.dim or not math.isclose(grid.spacing, basis.lattice.spacing, rel_tol=1e-12):
        raise ValueError("grid and lattice are not aligned")


def _meta(params, label, **extra):
    return {"label": label, "params": params.to_dict(), **extra}


def _sum(ops, label, meta=None) -> SparseOperator:
    m = ops[0].matrix
    for o in ops[1:]:
        m = m + o.matrix
    return SparseOperator(m, all(o.hermitian for o in ops), label, meta or {})


def _scalar(basis: TensorBasis, c: float, label: str) -> SparseOperator:
    return identity(basis) * float(c) if c else SparseOperator(sp.csr_matrix((basis.total_dim,) * 2, dtype=complex), True, label)


def linear_coupling(params: PhysParams, grid: ModeGrid, basis: TensorBasis, lo: float, hi: float, *, strict_hi=False) -> SparseOperator:
    """sqrt(mu) sum_i phi(G_{lo,hi,i})."""
    ops = [
        dressed_smeared(form_G(grid, i, lo, hi, coupling=params.coupling, strict_hi=strict_hi), "phi", basis)
        for i in (1, 2)
    ]
    return _sum(ops, f"sqrt(mu) phi(G[{lo},{hi}])") * math.sqrt(params.mu)


def assemble_HN(params: PhysParams, grid: ModeGrid, basis: TensorBasis, *, with_self_energy=False, source="discrete") -> SparseOperator:
    """p1^2 + p2^2 + mu T + sqrt(mu) sum_i phi(G_{Lambda,i}) (+ E_Lambda if requested)."""
    _check(grid, basis)
    if grid.omega.max() > params.lambda_uv * (1 + 1e-12):
        raise ValueError("grid extends beyond lambda_uv")
    parts = [kinetic(basis), field_energy(basis, grid) * params.mu, linear_coupling(params, grid, basis, 0.0, params.lambda_uv)]
    if with_self_energy:
        parts.append(_scalar(basis, scalars(params, grid, source).E_Lambda, "E_Lambda"))
    return _sum(parts, "H_Lambda^N" + (" + E_Lambda" if with_self_energy else ""), _meta(params, "H_Lambda^N"))


def gross_generator(params: PhysParams, grid: ModeGrid, basis: TensorBasis) -> SparseOperator:
    """sqrt(mu) sum_i (a*(B_i) - a(B_i)), anti-hermitian."""
    _check(grid, basis)
    x = None
    for i in (1, 2):
        b = form_B(grid, i, params.K, params.lambda_uv, params.mu, coupling=params.coupling)
        m = dressed_smeared(b, "a*", basis).matrix
        x = m if x is None else x + m
    x = x * math.sqrt(params.mu)
    gen = x - x.conj().T
    return SparseOperator(gen, False, "sqrt(mu) sum_i (a*(B_i) - a(B_i))")


def assemble_gross_unitary(params: PhysParams, grid: ModeGrid, basis: TensorBasis, *, dense_threshold: int = DENSE_EXPM_THRESHOLD, unitarity_tol: float = 1e-12):
    """U = exp(generator).  Dense below ``dense_threshold``; above it a Krylov-applied operator."""
    gen = gross_generator(params, grid, basis)
    if gen.nnz == 0:
        return SparseOperator(sp.identity(basis.total_dim, dtype=complex, format="csr"), False, "U_{K,Lambda}", _meta(params, "U"))
    n = basis.total_dim
    if n > dense_threshold:
        from .propagator import KrylovExpOperator

        # exp(G) = exp(-i (iG)) with iG hermitian
        h = SparseOperator(hermitian_part_sum(0.5j * gen.matrix), True, "i*generator")
        return KrylovExpOperator(h, 1.0, label="U_{K,Lambda}")
    h = 1j * gen.toarray()
    h = 0.5 * (h + h.conj().T)
    ev, vec = sla.eigh(h)
    U = (vec * np.exp(-1j * ev)) @ vec.conj().T
    # one Newton-Schulz polar step pulls U back onto the unitary group
    U = 0.5 * U @ (3 * np.eye(n) - U.conj().T @ U)
    res = np.linalg.norm(U.conj().T @ U - np.eye(n), 2)
    if res > unitarity_tol:
        raise ArithmeticError(f"unitarity residual {res:.3e} exceeds {unitarity_tol:.1e}")
    return SparseOperator(sp.csr_matrix(U), False, "U_{K,Lambda}", _meta(params, "U", unitarity_residual=float(res)))


def _kB_components(params: PhysParams, grid: ModeGrid, i: int) -> list[FormFactor]:
    return form_kB(grid, i, params.K, params.lambda_uv, params.mu, coupling=params.coupling).components()


def momentum_coupling(params: PhysParams, grid: ModeGrid, basis: TensorBasis) -> SparseOperator:
    """sqrt(mu) sum_i (2 a*(kB_i).p_i + 2 p_i.a(kB_i))."""
    x = sp.csr_matrix((basis.total_dim,) * 2, dtype=complex)
    for i in (1, 2):
        for a, f in enumerate(_kB_components(params, grid, i)):
            x = x + 2 * dressed_smeared(f, "a*", basis).matrix @ momentum(basis, i, a).matrix
    return SparseOperator(hermitian_part_sum(x * math.sqrt(params.mu)), True, "sqrt(mu)(2a*(kB)p + 2p a(kB))")


def number_like_kB(params: PhysParams, grid: ModeGrid, basis: TensorBasis) -> SparseOperator:
    """mu sum_i 2 a*(kB_i) a(kB_i)."""
    x = sp.csr_matrix((basis.total_dim,) * 2, dtype=complex)
    for i in (1, 2):
        for f in _kB_components(params, grid, i):
            c = dressed_smeared(f, "a*", basis).matrix
            x = x + c @ c.conj().T
    # X + X^H = 2 X for hermitian X, exactly symmetric in floating point
    return SparseOperator(hermitian_part_sum(x * params.mu), True, "2 mu a*(kB)a(kB)")


def assemble_A(params: PhysParams, grid: ModeGrid, basis: TensorBasis, i: int) -> SparseOperator:
    """A_{K,i} = sum_alpha a(kB_{i,alpha}) a(kB_{i,alpha})."""
    _check(grid, basis)
    x = sp.csr_matrix((basis.total_dim,) * 2, dtype=complex)
    for f in _kB_components(params, grid, i):
        an = dressed_smeared(f, "a", basis).matrix
        x = x + an @ an
    return SparseOperator(x, False, f"A_{{K,{i}}}", _meta(params, "A", particle=i))


def pair_terms(params: PhysParams, grid: ModeGrid, basis: TensorBasis) -> SparseOperator:
    """mu sum_i (A_i + A_i^*)."""
    x = sp.csr_matrix((basis.total_dim,) * 2, dtype=complex)
    for i in (1, 2):
        x = x + assemble_A(params, grid, basis, i).matrix
    return SparseOperator(hermitian_part_sum(x * params.mu), True, "mu (A + A*)")


def assemble_V(params: PhysParams, grid: ModeGrid, basis: TensorBasis) -> SparseOperator:
    return pair_potential(V_kernel(params, grid, basis), basis, "V_{K,Lambda}(x1-x2)")


def assemble_HK(params: PhysParams, grid: ModeGrid, basis: TensorBasis, *, source="discrete", scalar_values: Scalars | None = None) -> SparseOperator:
    """Dressed Hamiltonian with finite UV cutoff."""
    _check(grid, basis)
    sc = scalar_values or scalars(params, grid, source)
    parts = [
        kinetic(basis),
        field_energy(basis, grid) * params.mu,
        linear_coupling(params, grid, basis, 0.0, params.K),
        momentum_coupling(params, grid, basis),
        number_like_kB(params, grid, basis),
        pair_terms(params, grid, basis),
        _scalar(basis, sc.E_K, "E_K"),
        assemble_V(params, grid, basis),
    ]
    return _sum(parts, "H_{K,Lambda}", _meta(params, "H_K", scalar_source=sc.source, e0=sc.e0, E_K=sc.E_K))


def assemble_HepsK(params: PhysParams, grid: ModeGrid, basis: TensorBasis, *, source="discrete", scalar_values: Scalars | None = None) -> SparseOperator:
    """Simplified Hamiltonian: infrared-cut linear coupling plus the pair terms only."""
    _check(grid, basis)
    if not params.eps < params.K:
        raise ValueError("need eps < K")
    sc = scalar_values or scalars(params, grid, source)
    parts = [
        kinetic(basis),
        field_energy(basis, grid) * params.mu,
        _scalar(basis, sc.E_K, "E_K"),
        assemble_V(params, grid, basis),
        linear_coupling(params, grid, basis, params.eps, params.K),
        pair_terms(params, grid, basis),
    ]
    return _sum(parts, "H_{eps,K}", _meta(params, "H_epsK", scalar_source=sc.source, e0=sc.e0, E_K=sc.E_K))


def removed_terms(params: PhysParams, grid: ModeGrid, basis: TensorBasis) -> SparseOperator:
    """H_K - H_{eps,K}: momentum coupling, 2 mu a*(kB)a(kB) and the infrared window phi(G_{0,eps})."""
    parts = [momentum_coupling(params, grid, basis), number_like_kB(params, grid, basis)]
    if params.eps > 0 and np.any(grid.window(0.0, params.eps, include_hi=False)):
        parts.append(linear_coupling(params, grid, basis, 0.0, params.eps, strict_hi=True))
    return _sum(parts, "H_K - H_{eps,K}")


def assemble_heff(basis: TensorBasis, grid: ModeGrid | None = None, W_source: str = "discrete", *, coupling: float = 1.0, lo=0.0, hi=math.inf) -> SparseOperator:
    """p1^2 + p2^2 - W(x1 - x2), acting trivially on the Fock factor."""
    if W_source == "discrete" and grid is None:
        raise ValueError("discrete W needs the mode grid")
    W = pair_potential(W_kernel(grid, basis, W_source, lo, hi, coupling), basis, "W(x1-x2)")
    return SparseOperator(kinetic(basis).matrix - W.matrix, True, "h^eff", {"W_source": W_source})


def vacuum_projector(basis: TensorBasis) -> SparseOperator:
    return diagonal(occupation_projector(basis, 0).astype(float), "1 (x) P_Omega")


def assemble_vacuum_kernel_AA(params: PhysParams, i: int, j: int, grid: ModeGrid, basis: TensorBasis, *, source="discrete") -> SparseOperator:
    """mu A_i R_{K,inf} A_j^* restricted to the vacuum sector (as a full-space operator)."""
    if basis.fock.n_max < 2:
        raise ValueError("two-boson states needed (n_max >= 2)")
    sc = scalars(params, grid, source)
    R = windowed_resolvent(basis, grid, params.K, math.inf, sc.E_K, params.mu)
    Ai = assemble_A(params, grid, basis, i).matrix
    Aj = assemble_A(params, grid, basis, j).matrix
    Pv = vacuum_projector(basis).matrix
    m = params.mu * (Ai @ R.matrix @ Aj.conj().T) @ Pv
    return SparseOperator(m, False, f"mu A_{i} R A_{j}^* P_Omega")


def vacuum_block(op: SparseOperator, basis: TensorBasis) -> sp.csr_matrix:
    """Particle-space block <. (x) Omega | op | . (x) Omega>."""
    idx = np.nonzero(occupation_projector(basis, 0))[0]
    return op.matrix[idx][:, idx]


def scalar_audit(params: PhysParams, grid: ModeGrid) -> dict:
    """Scalar terms produced by conjugating H_Lambda^N + E_Lambda with U, mode by mode.

    Returns the self part, the induced-pair coefficient per mode, and the
    expected values (E_K - E_Lambda and the V kernel) for comparison.
    """
    mu, lam2 = params.mu, params.coupling**2
    mask = grid.window(params.K, params.lambda_uv, include_lo=False)
    om, w = grid.omega[mask], grid.weights[mask]
    b = om**-0.5 / (om**2 + mu * om)
    field = mu**2 * om * b * b  # mu T  -> mu * mu |k| |B|^2
    linear = -2 * mu * om**-0.5 * b  # sqrt(mu) phi(G) -> -2 mu G B
    kinetic_sq = mu * om**2 * b * b  # vacuum part of mu phi(kB)^2
    self_part = float(lam2 * np.sum(w * 2 * (field + linear + kinetic_sq)))
    pair_coeff = lam2 * w * 2 * (field + linear)
    sc = scalars(params, grid, "discrete")
    return {
        "self_part": self_part,
        "expected_self": sc.E_K - sc.E_Lambda,
        "pair_coefficients": pair_coeff,
        "expected_pair": lam2 * w * integrals.V_K_fourier(om, mu, params.K, params.lambda_uv),
        "modes": grid.k[mask],
    }
