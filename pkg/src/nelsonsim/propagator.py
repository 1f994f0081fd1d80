"""Time evolution exp(-itH) psi by Lanczos-Krylov with a dense eigendecomposition oracle."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .operators import SparseOperator

DENSE_CAP = 2000


@dataclass
class SimState:
    amplitudes: np.ndarray
    provenance: str = ""
    basis_hash: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def dim(self) -> int:
        return len(self.amplitudes)

    def evolved(self, amplitudes, label) -> "SimState":
        return SimState(amplitudes, label, self.basis_hash, dict(self.params))

    def save(self, path) -> None:
        """Binary little-endian complex128 array plus a JSON header next to it."""
        path = Path(path)
        self.amplitudes.astype("<c16").tofile(path.with_suffix(".bin"))
        header = {"dim": self.dim, "dtype": "complex128-le", "basis_hash": self.basis_hash, "provenance": self.provenance, "params": self.params}
        path.with_suffix(".json").write_text(json.dumps(header, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SimState":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        amps = np.fromfile(path.with_suffix(".bin"), dtype="<c16")
        if len(amps) != header["dim"]:
            raise ValueError("state file length does not match header")
        return cls(amps, header["provenance"], header["basis_hash"], header["params"])


def _as_state(psi) -> SimState:
    return psi if isinstance(psi, SimState) else SimState(psi)


def _matvec(H):
    m = H.matrix if isinstance(H, SparseOperator) else H
    return lambda v: m @ v


def _lanczos(mv, v0: np.ndarray, m: int):
    """Lanczos with full reorthogonalization; returns (V, alpha, beta, happy)."""
    n = len(v0)
    V = np.zeros((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v0
    scale = 0.0
    for j in range(m):
        w = mv(V[j])
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w = w - V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        scale = max(scale, abs(alpha[j]), b)
        beta[j] = b
        if b <= 1e-14 * max(scale, 1.0):
            return V[: j + 1], alpha[: j + 1], beta[: j + 1], True
        V[j + 1] = w / b
    return V, alpha, beta, False


def _tridiag_exp(alpha, beta, tau):
    """exp(-i tau T) e_1 for the Lanczos tridiagonal T."""
    ev, vec = sla.eigh_tridiagonal(alpha, beta[: len(alpha) - 1])
    return vec @ (np.exp(-1j * tau * ev) * vec[0].conj())


def krylov_expmv(H: SparseOperator, psi, t: float, tol: float = 1e-12, m_max: int = 40, max_steps: int = 100000) -> SimState:
    """exp(-itH) psi with adaptive time steps.

    Each step builds an m-dimensional Krylov space and shrinks the step until
    the a posteriori error tau |beta_m [exp(-i tau T_m)]_{m,1}| meets the share
    of ``tol`` proportional to the step length.
    """
    if isinstance(H, SparseOperator) and not H.hermitian:
        raise ValueError("krylov_expmv needs a hermitian operator")
    state = _as_state(psi)
    v = state.amplitudes.copy()
    nrm0 = np.linalg.norm(v)
    if t == 0 or nrm0 == 0:
        return state.evolved(v, f"exp(-i{t}H){state.provenance}")
    mv = _matvec(H)
    sign = math.copysign(1.0, t)
    remaining = abs(t)
    tau = None
    steps = 0
    while remaining > 0:
        if steps >= max_steps:
            raise RuntimeError("krylov_expmv: step limit reached")
        beta0 = np.linalg.norm(v)
        V, alpha, beta, happy = _lanczos(mv, v / beta0, m_max)
        if happy:
            # invariant subspace: the small problem is exact for any time
            c = _tridiag_exp(alpha, beta, sign * remaining)
            v = beta0 * (V.T @ c)
            break
        if tau is None:
            width = np.abs(alpha).max() + 2 * np.abs(beta).max()
            tau = min(remaining, 10.0 / max(width, 1e-300))
        tau = min(tau, remaining)
        while True:
            budget = tol * tau / abs(t)
            c = _tridiag_exp(alpha, beta, sign * tau)
            # the local error is bounded by tau * beta0 * beta_m * max_s |[exp(-isT)]_{m,1}|
            err = beta0 * beta[-1] * abs(c[-1]) * tau
            floor = 1e-15 * beta0 * beta[-1] * tau  # roundoff level of c[-1]
            if err <= max(budget, floor) or tau < 1e-14 * abs(t):
                break
            tau *= 0.5
        v = beta0 * (V[:-1].T @ c)
        remaining -= tau
        steps += 1
        # let the step grow again when the estimate was comfortably small
        if err < 0.1 * budget:
            tau *= 1.5
    v *= nrm0 / np.linalg.norm(v)  # remove roundoff drift in the norm
    return state.evolved(v, f"exp(-i{t}H){state.provenance}")


def dense_expmv_oracle(H, psi, t: float, cap: int = DENSE_CAP) -> SimState:
    state = _as_state(psi)
    m = H.toarray() if isinstance(H, SparseOperator) else (H.toarray() if hasattr(H, "toarray") else np.asarray(H))
    if m.shape[0] > cap:
        raise ValueError(f"dimension {m.shape[0]} exceeds dense cap {cap}")
    m = 0.5 * (m + m.conj().T)
    ev, vec = sla.eigh(m)
    out = vec @ (np.exp(-1j * t * ev) * (vec.conj().T @ state.amplitudes))
    return state.evolved(out, f"dense exp(-i{t}H){state.provenance}")


def deviation(a, b) -> float:
    """Squared norm of the difference of two states."""
    va, vb = _as_state(a), _as_state(b)
    if va.dim != vb.dim:
        raise ValueError("states live on different bases")
    if va.basis_hash and vb.basis_hash and va.basis_hash != vb.basis_hash:
        raise ValueError("states live on different bases")
    d = va.amplitudes - vb.amplitudes
    return float(np.vdot(d, d).real)


class KrylovExpOperator:
    """Matrix-free exp(-i s H): applying it runs krylov_expmv."""

    def __init__(self, H: SparseOperator, s: float, label: str = "", tol: float = 1e-13):
        self.H, self.s, self.label, self.tol = H, s, label, tol
        self.hermitian = False

    @property
    def dim(self) -> int:
        return self.H.dim

    def __matmul__(self, v):
        return krylov_expmv(self.H, v, self.s, self.tol).amplitudes

    def adjoint_apply(self, v):
        return krylov_expmv(self.H, v, -self.s, self.tol).amplitudes
