"""Sparse second-quantized operators on the particle (x) Fock tensor basis.

Conventions
-----------
* ``exp(-i k x_i)|p_i> = |p_i - k>`` with periodic wrap on the lattice.
* Smeared operators carry ``sqrt(w_j)`` per leg:
  ``a*(F) = sum_j sqrt(w_j) F(k_j) a*_j`` and ``a(F) = a*(F)^dagger``.
* Hermitian operators are assembled as ``X + X^H`` from an already
  canonicalized ``X`` so conjugate symmetry holds bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model_space import ModeGrid, TensorBasis

SHIFT_SIGN = -1  # exp(-ikx)|p> = |p + SHIFT_SIGN*k>


def _canonical(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.complex128)
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass
class SparseOperator:
    matrix: sp.csr_matrix
    hermitian: bool = False
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = _canonical(self.matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def dagger(self) -> "SparseOperator":
        return SparseOperator(self.matrix.conj().T, self.hermitian, f"({self.label})^*", dict(self.meta))

    def __add__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix + other.matrix, self.hermitian and other.hermitian, f"{self.label} + {other.label}")
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix - other.matrix, self.hermitian and other.hermitian, f"{self.label} - {other.label}")
        return NotImplemented

    def __neg__(self):
        return SparseOperator(-self.matrix, self.hermitian, f"-{self.label}")

    def __mul__(self, c):
        if np.isscalar(c):
            herm = self.hermitian and np.imag(c) == 0
            return SparseOperator(self.matrix * c, herm, f"{c}*{self.label}", dict(self.meta))
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix @ other.matrix, False, f"{self.label} {other.label}")
        return self.matrix @ other

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_exactly_hermitian(self) -> bool:
        diff = self.matrix != self.matrix.conj().T
        return diff.nnz == 0

    def expectation(self, psi: np.ndarray) -> complex:
        return np.vdot(psi, self.matrix @ psi)

    def export_triplets(self, path) -> None:
        """Write ``# dim``, ``# label``, ``# hermitian`` header then ``row col re im`` lines."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write(f"# dim {self.dim}\n# label {self.label}\n# hermitian {str(self.hermitian).lower()}\n")
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r} {c} {float(v.real)!r} {float(v.imag)!r}\n")

    @classmethod
    def import_triplets(cls, path) -> "SparseOperator":
        header = {}
        rows, cols, vals = [], [], []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition(" ")
                    header[key] = value
                    continue
                r, c, re_, im_ = line.split()
                rows.append(int(r))
                cols.append(int(c))
                vals.append(complex(float(re_), float(im_)))
        n = int(header["dim"])
        m = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))
        return cls(m, header.get("hermitian") == "true", header.get("label", ""))


def hermitian_part_sum(x: sp.spmatrix) -> sp.csr_matrix:
    """X + X^H, exactly conjugate-symmetric."""
    x = _canonical(x)
    return _canonical(x + x.conj().T)


def zero(basis: TensorBasis, label="0") -> SparseOperator:
    n = basis.total_dim
    return SparseOperator(sp.csr_matrix((n, n), dtype=complex), True, label)


def identity(basis: TensorBasis, label="1") -> SparseOperator:
    return SparseOperator(sp.identity(basis.total_dim, dtype=complex, format="csr"), True, label)


def diagonal(values: np.ndarray, label: str) -> SparseOperator:
    values = np.asarray(values)
    return SparseOperator(sp.diags(values.astype(complex), format="csr"), bool(np.all(np.imag(values) == 0)), label)


# ---------------------------------------------------------------------------
# Fock-space building blocks (F x F)
# ---------------------------------------------------------------------------

def fock_creation(fock, j: int) -> sp.csr_matrix:
    """Truncated a*_j on the Fock factor; states at total occupation n_max map to 0."""
    states = fock.states
    src = np.nonzero(fock.total < fock.n_max)[0]
    rows = np.empty(len(src), dtype=np.int64)
    for n, s in enumerate(src):
        occ = states[s].copy()
        occ[j] += 1
        rows[n] = fock.index_of(occ)
    vals = np.sqrt(states[src, j] + 1.0)
    return sp.csr_matrix((vals.astype(complex), (rows, src)), shape=(fock.size, fock.size))


def _particle_shift(basis: TensorBasis, particle: int, m_k: np.ndarray) -> np.ndarray:
    """Permutation of two-particle indices implementing exp(-i k x_particle)."""
    lat = basis.lattice
    P = lat.size
    perm1 = lat.shift_permutation(SHIFT_SIGN * np.asarray(m_k))
    i1, i2 = np.divmod(np.arange(P * P), P)
    if particle == 1:
        return perm1[i1] * P + i2
    if particle == 2:
        return i1 * P + perm1[i2]
    raise ValueError("particle index must be 1 or 2")


def particle_shift(basis: TensorBasis, particle: int, m_k, label=None) -> SparseOperator:
    """exp(-i k x_i) (x) 1_Fock for integer lattice vector m_k."""
    perm = _particle_shift(basis, particle, m_k)
    Pd = basis.particle_dim
    s = sp.csr_matrix((np.ones(Pd, dtype=complex), (perm, np.arange(Pd))), shape=(Pd, Pd))
    F = basis.fock.size
    return SparseOperator(sp.kron(s, sp.identity(F), format="csr"), False, label or f"exp(-ik x{particle})")


# ---------------------------------------------------------------------------
# Form factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FormFactor:
    """Per-mode coefficients ``c_j`` of a (possibly particle-dressed) form factor.

    ``coefficients`` has shape (M,) or (M, d) for vector-valued factors (kB).
    ``particle_index`` None means an undressed function of k only.
    """

    grid: ModeGrid
    coefficients: np.ndarray
    particle_index: int | None = None
    label: str = "f"
    shift_sign: int = SHIFT_SIGN

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        object.__setattr__(self, "coefficients", c)
        if c.shape[0] != self.grid.size:
            raise ValueError("one coefficient per grid mode required")
        if not np.all(np.isfinite(c)):
            raise ValueError("form factor coefficients must be finite")

    @property
    def vector(self) -> bool:
        return self.coefficients.ndim == 2

    def components(self) -> list["FormFactor"]:
        if not self.vector:
            return [self]
        return [
            FormFactor(self.grid, self.coefficients[:, a], self.particle_index, f"{self.label}[{a}]", self.shift_sign)
            for a in range(self.coefficients.shape[1])
        ]

    def norm(self, omega_power: float = 0.0) -> float:
        """sqrt(sum_j w_j |omega_j^p c_j|^2), summed over vector components."""
        c = self.coefficients if self.vector else self.coefficients[:, None]
        om = self.grid.omega[:, None] ** omega_power
        return float(np.sqrt(np.sum(self.grid.weights[:, None] * np.abs(om * c) ** 2)))

    def scaled(self, s) -> "FormFactor":
        return FormFactor(self.grid, self.coefficients * s, self.particle_index, self.label, self.shift_sign)


def window_mask(grid: ModeGrid, lo: float, hi: float, *, strict_lo=False, strict_hi=False) -> np.ndarray:
    return grid.window(lo, hi, include_lo=not strict_lo, include_hi=not strict_hi)


def form_G(grid: ModeGrid, particle: int | None, lo=0.0, hi=math.inf, *, coupling=1.0, strict_hi=False) -> FormFactor:
    """|k|^{-1/2} on lo <= |k| <= hi (hi exclusive if ``strict_hi``)."""
    mask = window_mask(grid, lo, hi, strict_hi=strict_hi)
    c = np.where(mask, coupling * grid.omega**-0.5, 0.0)
    return FormFactor(grid, c, particle, f"G[{lo},{hi}]_{particle}")


def form_B(grid: ModeGrid, particle: int | None, K: float, lambda_uv: float, mu: float, *, coupling=1.0) -> FormFactor:
    """|k|^{-1/2} / (k^2 + mu|k|) on K < |k| <= Lambda."""
    w = grid.omega
    mask = window_mask(grid, K, lambda_uv, strict_lo=True)
    c = np.where(mask, coupling * w**-0.5 / (w**2 + mu * w), 0.0)
    return FormFactor(grid, c, particle, f"B[{K},{lambda_uv}]_{particle}")


def form_kB(grid: ModeGrid, particle: int | None, K: float, lambda_uv: float, mu: float, *, coupling=1.0) -> FormFactor:
    b = form_B(grid, particle, K, lambda_uv, mu, coupling=coupling).coefficients
    return FormFactor(grid, grid.k * b[:, None], particle, f"kB[{K},{lambda_uv}]_{particle}")


# ---------------------------------------------------------------------------
# Operator constructors
# ---------------------------------------------------------------------------

def ladder(j: int, kind: str, basis: TensorBasis) -> SparseOperator:
    """a*_j or a_j acting on the Fock factor only."""
    if not 0 <= j < basis.fock.mode_count:
        raise IndexError("mode index out of range")
    c = fock_creation(basis.fock, j)
    if kind == "annihilate":
        c = c.conj().T
    elif kind != "create":
        raise ValueError("kind must be 'create' or 'annihilate'")
    m = sp.kron(sp.identity(basis.particle_dim), c, format="csr")
    return SparseOperator(m, False, ("a*" if kind == "create" else "a") + f"_{j}")


def _creation_matrix(f: FormFactor, basis: TensorBasis) -> sp.csr_matrix:
    grid = f.grid
    if grid.size != basis.fock.mode_count:
        raise ValueError("form factor grid does not match the Fock mode count")
    c = f.coefficients
    if c.ndim != 1:
        raise ValueError("use .components() for vector-valued form factors")
    Pd, F = basis.particle_dim, basis.fock.size
    rows, cols, vals = [], [], []
    for j in np.nonzero(c)[0]:
        cf = fock_creation(basis.fock, j).tocoo()
        coef = math.sqrt(grid.weights[j]) * c[j]
        if f.particle_index is None:
            perm = np.arange(Pd)
        else:
            perm = _particle_shift(basis, f.particle_index, grid.integer_k[j])
        # kron(shift, cf): (perm[p]*F + cf.row, p*F + cf.col)
        p = np.arange(Pd)
        rows.append((perm[:, None] * F + cf.row[None, :]).ravel())
        cols.append((p[:, None] * F + cf.col[None, :]).ravel())
        vals.append(np.broadcast_to(coef * cf.data[None, :], (Pd, cf.nnz)).ravel())
    n = basis.total_dim
    if not rows:
        return sp.csr_matrix((n, n), dtype=complex)
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return _canonical(m)


def _check_dressable(f: FormFactor, basis: TensorBasis):
    grid = f.grid
    if not grid.box_aligned:
        raise ValueError("dressed operators need a box-aligned mode grid")
    if grid.dim != basis.lattice.dim or not math.isclose(grid.spacing, basis.lattice.spacing, rel_tol=1e-12):
        raise ValueError("mode grid is not aligned with the particle lattice")


def smeared(f: FormFactor, kind: str, basis: TensorBasis) -> SparseOperator:
    """a(f), a*(f) or phi(f) for an undressed (k-only) form factor."""
    if f.particle_index is not None:
        return dressed_smeared(f, kind, basis)
    return _assemble_smeared(f, kind, basis)


def dressed_smeared(f: FormFactor, kind: str, basis: TensorBasis) -> SparseOperator:
    """Smeared operator whose mode coefficients carry exp(-i k_j x_i)."""
    if f.particle_index is not None:
        _check_dressable(f, basis)
    return _assemble_smeared(f, kind, basis)


def _assemble_smeared(f: FormFactor, kind: str, basis: TensorBasis) -> SparseOperator:
    if f.vector:
        raise ValueError("vector form factor: build per component")
    cre = _creation_matrix(f, basis)
    if kind in ("a*", "create"):
        return SparseOperator(cre, False, f"a*({f.label})")
    if kind in ("a", "annihilate"):
        return SparseOperator(cre.conj().T, False, f"a({f.label})")
    if kind == "phi":
        return SparseOperator(hermitian_part_sum(cre), True, f"phi({f.label})")
    raise ValueError("kind must be 'a', 'a*' or 'phi'")


def _fock_diag(basis: TensorBasis, per_state: np.ndarray) -> np.ndarray:
    return np.tile(per_state, basis.particle_dim)


def number_op(basis: TensorBasis, grid: ModeGrid, lo=0.0, hi=math.inf) -> SparseOperator:
    mask = grid.window(lo, hi)
    vals = basis.fock.states[:, mask].sum(axis=1).astype(float)
    return diagonal(_fock_diag(basis, vals), f"N[{lo},{hi}]")


def field_energy(basis: TensorBasis, grid: ModeGrid, lo=0.0, hi=math.inf) -> SparseOperator:
    """T_{lo,hi}: diagonal, eigenvalue sum_j |k_j| n_j over the window."""
    mask = grid.window(lo, hi)
    vals = basis.fock.states[:, mask] @ grid.omega[mask]
    return diagonal(_fock_diag(basis, vals.astype(float)), f"T[{lo},{hi}]")


def _particle_diag(basis: TensorBasis, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    pp = (v1[:, None] + v2[None, :]).ravel()
    return np.repeat(pp, basis.fock.size)


def kinetic(basis: TensorBasis) -> SparseOperator:
    p2 = basis.lattice.momentum_squared
    return diagonal(_particle_diag(basis, p2, p2), "p1^2+p2^2")


def momentum(basis: TensorBasis, particle: int, component: int = 0) -> SparseOperator:
    p = basis.lattice.momenta[:, component]
    z = np.zeros_like(p)
    vals = _particle_diag(basis, p, z) if particle == 1 else _particle_diag(basis, z, p)
    return diagonal(vals, f"p{particle}[{component}]")


def particle_momentum_squared(basis: TensorBasis, particle: int) -> SparseOperator:
    p2 = basis.lattice.momentum_squared
    z = np.zeros_like(p2)
    vals = _particle_diag(basis, p2, z) if particle == 1 else _particle_diag(basis, z, p2)
    return diagonal(vals, f"p{particle}^2")


def total_momentum(basis: TensorBasis, grid: ModeGrid, component: int = 0) -> SparseOperator:
    """Wrapped p1 + p2 + dGamma(k), one Cartesian component."""
    lat = basis.lattice
    m = lat.integer_momenta[:, component]
    mp = (m[:, None] + m[None, :]).ravel()
    mf = basis.fock.states @ grid.integer_k[:, component]
    tot = mp[:, None] + mf[None, :]
    wrapped = (tot + lat.half) % lat.points_per_dim - lat.half
    return diagonal(wrapped.ravel() * lat.spacing, f"P_tot[{component}]")


def pair_potential(vhat, basis: TensorBasis, label="v(x1-x2)") -> SparseOperator:
    """v(x1 - x2) = sum_q vhat(q) exp(iq x1) exp(-iq x2) on the lattice.

    ``vhat`` maps an (n, d) array of lattice vectors to real values; it is
    evaluated on every wrapped difference vector.  Real and even input gives
    an exactly hermitian operator.
    """
    lat = basis.lattice
    qs = lat.integer_momenta
    vals = np.asarray(vhat(qs * lat.spacing), dtype=float)
    neg = lat.index_of(-qs)
    even = np.array_equal(vals, vals[neg])
    Pd, F = basis.particle_dim, basis.fock.size
    P = lat.size
    i1, i2 = np.divmod(np.arange(Pd), P)
    rows, cols, data = [], [], []
    diag_val = 0.0
    zero_idx = lat.index_of(np.zeros(lat.dim, dtype=np.int64))
    for qi in range(len(qs)):
        v = vals[qi]
        if v == 0:
            continue
        if qi == zero_idx:
            diag_val = v
            continue
        if even and neg[qi] < qi:
            continue
        # exp(iq x1): p1 -> p1 + q ; exp(-iq x2): p2 -> p2 - q
        perm1 = lat.shift_permutation(qs[qi])
        perm2 = lat.shift_permutation(-qs[qi])
        rows.append(perm1[i1] * P + perm2[i2])
        cols.append(np.arange(Pd))
        data.append(np.full(Pd, v, dtype=complex))
    n = Pd
    if rows:
        x = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        x = hermitian_part_sum(x) if even else _canonical(x)
    else:
        x = sp.csr_matrix((n, n), dtype=complex)
    if diag_val:
        x = _canonical(x + diag_val * sp.identity(n, dtype=complex, format="csr"))
    m = sp.kron(x, sp.identity(F), format="csr")
    return SparseOperator(m, even, label)


def occupation_projector(basis: TensorBasis, max_total: int) -> np.ndarray:
    """Boolean mask over the tensor basis: total boson number <= max_total."""
    return np.tile(basis.fock.total <= max_total, basis.particle_dim)


def windowed_resolvent(basis: TensorBasis, grid: ModeGrid, lo: float, hi: float, E_K: float, mu: float) -> SparseOperator:
    """R_{lo,hi} = Q (T_{lo,hi} + (p1^2 + p2^2 + E_K)/mu)^{-1} Q, diagonal."""
    if not E_K > 0:
        raise ValueError("E_K must be positive")
    mask = grid.window(lo, hi)
    n_win = basis.fock.states[:, mask].sum(axis=1)
    t_win = basis.fock.states[:, mask] @ grid.omega[mask]
    p2 = basis.lattice.momentum_squared
    pp = (p2[:, None] + p2[None, :]).ravel()
    den = t_win[None, :] + (pp[:, None] + E_K) / mu
    vals = np.where(n_win[None, :] >= 1, 1.0 / den, 0.0).ravel()
    return diagonal(vals, f"R[{lo},{hi}]")


def commutator(a: SparseOperator, b: SparseOperator) -> sp.csr_matrix:
    return _canonical(a.matrix @ b.matrix - b.matrix @ a.matrix)
