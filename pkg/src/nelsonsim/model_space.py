"""Discretized Hilbert space: field mode grids, particle lattice, truncated Fock basis.

Momenta on the particle lattice are stored as integer vectors ``m`` with
physical value ``m * delta`` where ``delta = 2 pi / L``.  Box-aligned mode grids
reuse the same integer representation so that ``exp(-i k x)`` acts on the
lattice as an exact (wrapped) shift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MAX_DIM = 2_000_000


class BasisTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ParticleLattice:
    """Periodic momentum lattice for one particle in ``dim`` dimensions."""

    dim: int
    box_length: float
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.points_per_dim < 1 or self.points_per_dim % 2 == 0:
            raise ValueError("points_per_dim must be a positive odd integer")
        if not self.box_length > 0:
            raise ValueError("box_length must be positive")

    @property
    def spacing(self) -> float:
        return 2 * math.pi / self.box_length

    @property
    def half(self) -> int:
        return (self.points_per_dim - 1) // 2

    @property
    def size(self) -> int:
        return self.points_per_dim**self.dim

    @cached_property
    def integer_momenta(self) -> np.ndarray:
        """(size, dim) integer coordinates, last axis fastest."""
        r = np.arange(-self.half, self.half + 1)
        grids = np.meshgrid(*([r] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @property
    def momenta(self) -> np.ndarray:
        return self.integer_momenta * self.spacing

    @cached_property
    def momentum_squared(self) -> np.ndarray:
        return np.sum(self.momenta**2, axis=1)

    def wrap(self, m: np.ndarray) -> np.ndarray:
        n = self.points_per_dim
        return (np.asarray(m) + self.half) % n - self.half

    def index_of(self, m: np.ndarray) -> np.ndarray:
        """Flat index of (wrapped) integer momenta; accepts (..., dim) arrays."""
        w = self.wrap(m) + self.half
        idx = np.zeros(w.shape[:-1], dtype=np.int64)
        for a in range(self.dim):
            idx = idx * self.points_per_dim + w[..., a]
        return idx

    def shift_permutation(self, m_shift) -> np.ndarray:
        """perm[i] = index of wrap(m_i + m_shift)."""
        return self.index_of(self.integer_momenta + np.asarray(m_shift, dtype=np.int64))


@dataclass(frozen=True)
class ModeGrid:
    """Finite set of field modes with quadrature weights.

    ``integer_k`` is only set for box-aligned grids (modes on the particle
    lattice); radial quadrature grids leave it ``None``.
    """

    k: np.ndarray
    weights: np.ndarray
    lo: float
    hi: float
    dim: int
    integer_k: np.ndarray | None = None
    spacing: float | None = None

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.k, dtype=float))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if k.shape[1] != self.dim or len(self.weights) != len(k):
            raise ValueError("inconsistent mode grid shapes")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")
        if np.any(self.omega == 0):
            raise ValueError("mode grid must not contain k = 0")

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(np.sum(self.k**2, axis=1))

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def box_aligned(self) -> bool:
        return self.integer_k is not None

    def window(self, lo: float = 0.0, hi: float = math.inf, *, include_lo=True, include_hi=True) -> np.ndarray:
        """Boolean mask of modes with lo <= |k| <= hi (endpoint inclusion selectable)."""
        w = self.omega
        lo_ok = w >= lo if include_lo else w > lo
        hi_ok = w <= hi if include_hi else w < hi
        return lo_ok & hi_ok

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "cutoffs": [self.lo, None if math.isinf(self.hi) else self.hi],
            "modes": [
                {"k": list(map(float, kk)), "omega": float(om), "weight": float(w)}
                for kk, om, w in zip(self.k, self.omega, self.weights)
            ],
        }
        if self.integer_k is not None:
            d["integer_k"] = self.integer_k.tolist()
            d["spacing"] = self.spacing
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ModeGrid":
        hi = d["cutoffs"][1]
        ik = d.get("integer_k")
        return cls(
            k=np.array([m["k"] for m in d["modes"]], dtype=float).reshape(-1, d["dim"]),
            weights=np.array([m["weight"] for m in d["modes"]]),
            lo=d["cutoffs"][0],
            hi=math.inf if hi is None else hi,
            dim=d["dim"],
            integer_k=None if ik is None else np.array(ik, dtype=np.int64).reshape(-1, d["dim"]),
            spacing=d.get("spacing"),
        )


def build_box_modes(lattice: ParticleLattice, lo: float, hi: float) -> ModeGrid:
    """All nonzero lattice momenta with lo <= |k| <= hi, each with weight delta^d."""
    if not 0 <= lo < hi:
        raise ValueError("need 0 <= lo < hi")
    m = lattice.integer_momenta
    k = m * lattice.spacing
    r = np.sqrt(np.sum(k**2, axis=1))
    # small relative slack so that lattice points sitting exactly on a cutoff are kept
    tol = 1e-12 * max(1.0, hi if math.isfinite(hi) else 1.0)
    keep = (r > 0) & (r >= lo - tol) & (r <= hi + tol)
    if not keep.any():
        raise ValueError("no modes in window")
    return ModeGrid(
        k=k[keep],
        weights=np.full(int(keep.sum()), lattice.spacing**lattice.dim),
        lo=lo,
        hi=hi,
        dim=lattice.dim,
        integer_k=m[keep].astype(np.int64),
        spacing=lattice.spacing,
    )


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = math.pi * (1 + 5**0.5) * i
    s = np.sqrt(1 - z**2)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def build_radial_modes(lo: float, hi: float, n_radial: int, n_angular: int, *, tail: str | None = None) -> ModeGrid:
    """3D quadrature grid: Gauss-Legendre in |k| times an equal-weight sphere rule.

    For ``hi = inf`` pass ``tail="reciprocal"``; the radius is then mapped as
    ``r = lo / u`` with ``u`` in (0, 1], which requires ``lo > 0``.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if n_radial < 1 or n_angular < 1:
        raise ValueError("n_radial and n_angular must be >= 1")
    x, wx = np.polynomial.legendre.leggauss(n_radial)
    if math.isinf(hi):
        if tail != "reciprocal" or lo <= 0:
            raise ValueError("hi = inf requires tail='reciprocal' and lo > 0")
        u = 0.5 * (x + 1)
        r = lo / u
        wr = 0.5 * wx * lo / u**2
    else:
        r = lo + 0.5 * (hi - lo) * (x + 1)
        wr = 0.5 * (hi - lo) * wx
    dirs = _fibonacci_sphere(n_angular)
    wa = 4 * math.pi / n_angular
    k = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    w = (wr[:, None] * r[:, None] ** 2 * wa * np.ones((1, n_angular))).ravel()
    return ModeGrid(k=k, weights=w, lo=lo, hi=hi, dim=3)


@dataclass(frozen=True)
class FockBasis:
    """Occupation-number basis with total occupation <= n_max, vacuum first."""

    mode_count: int
    n_max: int
    states: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.states)

    @cached_property
    def total(self) -> np.ndarray:
        return self.states.sum(axis=1)

    @cached_property
    def _lookup(self) -> dict:
        return {tuple(s): i for i, s in enumerate(self.states.tolist())}

    def index_of(self, occupation) -> int:
        return self._lookup[tuple(int(v) for v in occupation)]

    def to_dict(self) -> dict:
        return {"mode_count": self.mode_count, "n_max": self.n_max, "occupations": self.states.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def fock_size(M: int, n_max: int) -> int:
    return sum(math.comb(M + n - 1, n) for n in range(n_max + 1))


def _compositions(M: int, n: int):
    """Occupation vectors of M modes summing to n, lexicographically descending."""
    if M == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(M - 1, n - first):
            yield (first,) + rest


def enumerate_fock(M: int, n_max: int, max_dim: int = MAX_DIM) -> FockBasis:
    """Ordered by total occupation, then lexicographically (descending) within a level.

    M=2, n_max=1 gives (0,0), (1,0), (0,1).
    """
    if M < 1 or n_max < 0:
        raise ValueError("need M >= 1 and n_max >= 0")
    size = fock_size(M, n_max)
    if size > max_dim:
        raise BasisTooLarge(f"Fock basis size {size} exceeds max_dim {max_dim}")
    states = [s for n in range(n_max + 1) for s in _compositions(M, n)]
    return FockBasis(M, n_max, np.array(states, dtype=np.int64).reshape(size, M))


@dataclass(frozen=True)
class TensorBasis:
    """Two-particle lattice (x) truncated Fock space.

    flat = (i1 * P + i2) * F + f  with P = lattice.size, F = fock.size.
    """

    lattice: ParticleLattice
    fock: FockBasis

    @property
    def n_particle_states(self) -> int:
        return self.lattice.size

    @property
    def particle_dim(self) -> int:
        return self.lattice.size**2

    @property
    def total_dim(self) -> int:
        return self.particle_dim * self.fock.size

    def flatten(self, i1, i2, f):
        P, F = self.lattice.size, self.fock.size
        return (np.asarray(i1) * P + np.asarray(i2)) * F + np.asarray(f)

    def unflatten(self, idx):
        P, F = self.lattice.size, self.fock.size
        idx = np.asarray(idx)
        f = idx % F
        pp = idx // F
        return pp // P, pp % P, f

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(json.dumps([self.lattice.dim, self.lattice.box_length, self.lattice.points_per_dim]).encode())
        h.update(self.fock.states.tobytes())
        return h.hexdigest()[:16]


def build_tensor_basis(lattice: ParticleLattice, fock: FockBasis, max_dim: int = MAX_DIM) -> TensorBasis:
    dim = lattice.size**2 * fock.size
    if dim > max_dim:
        raise BasisTooLarge(f"tensor basis dimension {dim} exceeds max_dim {max_dim}")
    return TensorBasis(lattice, fock)

