"""Scalar quantities: self-energies, the constant e0, pair potentials, form-factor norms.

Closed forms are used where they exist.  Everything else is a quadrature with
an explicit error estimate taken from a refinement (or the integrator's own
estimate) so callers can tell converged values from flagged ones.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

DEFAULT_TOL_1D = 1e-10
DEFAULT_TOL_3D = 1e-6


@dataclass(frozen=True)
class ScalarResult:
    value: float
    abs_error_estimate: float
    method: str  # closed_form | quadrature | oscillatory_quadrature
    inputs: dict = field(default_factory=dict)
    converged: bool = True

    def __post_init__(self):
        if self.method == "closed_form" and self.abs_error_estimate != 0:
            raise ValueError("closed-form results carry zero error")
        if self.abs_error_estimate < 0:
            raise ValueError("error estimate must be nonnegative")

    def __float__(self):
        return float(self.value)


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{k} must be positive and finite, got {v}")


# ---------------------------------------------------------------------------
# e0
# ---------------------------------------------------------------------------

def _angular_u2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """int_{-1}^{1} u^2 / (a + b u) du for a > b >= 0."""
    z = b / a
    out = np.empty_like(z)
    small = z < 1e-2
    zs = z[small]
    z2 = zs * zs
    # 2 (1/3 + z^2/5 + z^4/7 + ...)
    series = np.zeros_like(zs)
    for n in range(8, 0, -1):
        series = series * z2 + 1.0 / (2 * n + 1)
    out[small] = 2 * series
    zl = z[~small]
    out[~small] = 2 * (np.arctanh(zl) - zl) / zl**3
    return out / a


def _e0_log_trapezoid(h: float, x_lo: float = -40.0, x_hi: float = 30.0) -> float:
    # r = e^x; integrand in (x1, x2) is smooth with exponential decay at both
    # ends, so the trapezoidal rule converges geometrically in 1/h
    x = np.arange(x_lo, x_hi + 0.5 * h, h)
    r = np.exp(x)
    pref = r**2 / (1 + r) ** 2  # r * (dr/dx) * 1/(1+r)^2
    total = 0.0
    for i in range(len(r)):
        r1 = r[i]
        r2 = r[i:]
        a = r1 + r2 + r1**2 + r2**2
        b = 2 * r1 * r2
        vals = pref[i] * pref[i:] * _angular_u2(a, b)
        # r1 <-> r2 symmetry: off-diagonal terms counted twice
        total += vals[0] + 2 * vals[1:].sum()
    return 16 * math.pi**2 * h * h * total


def e0_integrand(r1, r2, u):
    """Reduced integrand of e0 in (r1, r2, cos angle) including the 16 pi^2 measure factor."""
    r1, r2, u = np.broadcast_arrays(np.asarray(r1, float), np.asarray(r2, float), np.asarray(u, float))
    den = r1 + r2 + r1**2 + r2**2 + 2 * r1 * r2 * u
    return 16 * math.pi**2 * r1 * r2 * u**2 / ((1 + r1) ** 2 * (1 + r2) ** 2 * den)


def e0_constant(tol: float = DEFAULT_TOL_3D, h0: float = 0.2) -> ScalarResult:
    """e0 = 2 int w(k1, k2) dk1 dk2 over R^6.

    The angular integral is done in closed form; the two radial integrals use
    a log-variable trapezoid rule, halving the step until successive values
    agree to ``tol`` (relative).
    """
    _positive(tol=tol, h0=h0)
    h = h0
    prev = _e0_log_trapezoid(h)
    for _ in range(6):
        h /= 2
        cur = _e0_log_trapezoid(h)
        err = abs(cur - prev)
        if err <= tol * abs(cur):
            return ScalarResult(cur, err, "quadrature", {"tol": tol, "h": h})
        prev = cur
    return ScalarResult(cur, err, "quadrature", {"tol": tol, "h": h}, converged=False)


_E0_CACHE: dict = {}


def e0_value() -> float:
    """Cached converged e0 at default tolerance."""
    if "e0" not in _E0_CACHE:
        _E0_CACHE["e0"] = e0_constant().value
    return _E0_CACHE["e0"]


# ---------------------------------------------------------------------------
# Self-energies
# ---------------------------------------------------------------------------

def E_K0(mu: float, K: float) -> ScalarResult:
    """e0-free self-energy 8 pi mu ln(1 + K/mu)."""
    _positive(mu=mu, K=K)
    return ScalarResult(8 * math.pi * mu * math.log1p(K / mu), 0.0, "closed_form", {"mu": mu, "K": K})


def E_Lambda(mu: float, lambda_uv: float, e0: float | None = None) -> ScalarResult:
    _positive(mu=mu, lambda_uv=lambda_uv)
    e0 = e0_value() if e0 is None else e0
    v = 8 * math.pi * mu * math.log1p(lambda_uv / mu) + e0
    return ScalarResult(v, 0.0, "closed_form", {"mu": mu, "lambda_uv": lambda_uv, "e0": e0})


def E_Lambda0_quadrature(mu: float, lambda_uv: float, tol: float = DEFAULT_TOL_1D) -> ScalarResult:
    """int_{|k|<=Lambda} 2 mu dk / (|k| (k^2 + mu |k|)) by radial quadrature."""
    _positive(mu=mu, lambda_uv=lambda_uv)

    def f(r):
        return 4 * math.pi * r**2 * 2 * mu / (r * (r * r + mu * r)) if r > 0 else 8 * math.pi

    val, err = integrate.quad(f, 0.0, lambda_uv, epsabs=0.0, epsrel=tol * 1e-2, limit=200)
    return ScalarResult(val, err, "quadrature", {"mu": mu, "lambda_uv": lambda_uv}, converged=err <= tol * abs(val))


# ---------------------------------------------------------------------------
# Oscillatory radial integrals
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _gl(f, a: float, b: float) -> float:
    if b <= a:
        return 0.0
    x = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.dot(_GL_W, f(x)))


def _gl_graded(f, a: float, b: float) -> float:
    """Gauss-Legendre on geometrically graded panels (resolves 1/r-type decay from a > 0)."""
    if b <= a:
        return 0.0
    if a <= 0 or b / a <= 4:
        return _gl(f, a, b)
    edges = np.geomspace(a, b, int(math.ceil(math.log(b / a) / math.log(4))) + 1)
    return sum(_gl(f, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]))


def _euler_limit(partial: np.ndarray) -> tuple[float, float]:
    """Repeated neighbour averaging of alternating partial sums; returns (value, error)."""
    s = np.asarray(partial, dtype=float)
    prev = s[-1]
    while len(s) > 1:
        prev = s[-1]
        s = 0.5 * (s[1:] + s[:-1])
    return float(s[0]), float(abs(s[0] - prev))


def sine_transform(f, a: float, b: float, omega: float, n_terms: int = 40) -> tuple[float, float]:
    """int_a^b f(r) sin(omega r) dr for smooth, monotone-decaying f.

    The range is cut at the zeros of sin(omega r).  Finite ranges are summed
    directly; an infinite tail is summed as an alternating series with Euler
    acceleration.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    period = math.pi / omega
    first_zero = period * math.ceil(a / period)
    if first_zero == a:
        first_zero += period
    g = lambda r: f(r) * np.sin(omega * r)  # noqa: E731
    if math.isfinite(b) and first_zero >= b:
        return _gl_graded(g, a, b), 0.0
    if math.isfinite(b) and (b - first_zero) / period > 4 * n_terms:
        # many periods: difference of two accelerated tails
        v1, e1 = sine_transform(f, a, math.inf, omega, n_terms)
        v2, e2 = sine_transform(f, b, math.inf, omega, n_terms)
        return v1 - v2, e1 + e2
    head = _gl_graded(g, a, first_zero)
    if math.isfinite(b):
        n_full = int((b - first_zero) // period)
        edges = first_zero + period * np.arange(n_full + 1)
        body = sum(_gl_graded(g, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]))
        return head + body + _gl_graded(g, edges[-1], b), 0.0
    edges = first_zero + period * np.arange(n_terms + 1)
    terms = np.array([_gl(g, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])])
    # sum the first half directly, accelerate the remaining alternating tail
    m = n_terms // 2
    partial = head + terms[:m].sum() + np.cumsum(terms[m:])
    val, err = _euler_limit(partial)
    return val, err


def _vk_radial(mu):
    return lambda r: (mu + 2 * r) / (r * (mu + r) ** 2)


def V_K_potential(x_abs: float, mu: float, K: float, lambda_uv: float = math.inf, tol: float = DEFAULT_TOL_1D) -> ScalarResult:
    """Position-space V_K (or V_{K,Lambda}) at distance |x|.

    V(x) = -(8 pi mu / |x|) int_K^Lambda sin(r|x|) (mu + 2r) / (r (mu + r)^2) dr.
    At x = 0 the finite-Lambda value is elementary and the infinite-Lambda one is -inf.
    """
    _positive(mu=mu, K=K)
    if x_abs < 0:
        raise ValueError("x_abs must be nonnegative")
    inputs = {"x": x_abs, "mu": mu, "K": K, "lambda_uv": lambda_uv}
    if x_abs == 0:
        if math.isinf(lambda_uv):
            return ScalarResult(-math.inf, 0.0, "closed_form", inputs)
        v = -8 * math.pi * mu * (2 * math.log((mu + lambda_uv) / (mu + K)) + mu / (mu + lambda_uv) - mu / (mu + K))
        return ScalarResult(v, 0.0, "closed_form", inputs)
    val, err = sine_transform(_vk_radial(mu), K, lambda_uv, x_abs)
    pref = -8 * math.pi * mu / x_abs
    v, e = pref * val, abs(pref) * err
    return ScalarResult(v, e, "oscillatory_quadrature", inputs, converged=e <= max(tol * abs(v), 1e-14))


def V_K_fourier(q_abs, mu: float, K: float, lambda_uv: float = math.inf):
    """Fourier kernel of V_{K,Lambda}: -2 mu (mu|q| + 2q^2) / (|q| (mu|q| + q^2)^2) on K < |q| <= Lambda."""
    q = np.asarray(q_abs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = -2 * mu * (mu * q + 2 * q * q) / (q * (mu * q + q * q) ** 2)
    return np.where((q > K) & (q <= lambda_uv), v, 0.0)


def V_K_L2_squared(mu: float, K: float, tol: float = DEFAULT_TOL_1D) -> ScalarResult:
    """4 mu^2 int_{|k|>=K} ((mu|k| + 2k^2) / (|k|(mu|k| + k^2)^2))^2 dk."""
    _positive(mu=mu, K=K)

    def f(u):
        r = K / u
        core = (mu * r + 2 * r * r) / (r * (mu * r + r * r) ** 2)
        return 4 * mu**2 * 4 * math.pi * r * r * core**2 * K / u**2

    val, err = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=tol, limit=200)
    return ScalarResult(val, err, "quadrature", {"mu": mu, "K": K}, converged=err <= max(tol, 1e-8) * abs(val))


# ---------------------------------------------------------------------------
# Coulomb-type potentials
# ---------------------------------------------------------------------------

def W_coulomb(x_abs: float) -> ScalarResult:
    if not x_abs > 0:
        raise ValueError("W is singular at x = 0")
    return ScalarResult(4 * math.pi**2 / x_abs, 0.0, "closed_form", {"x": x_abs})


def W_truncated(x_abs: float, K: float) -> ScalarResult:
    """2 int_{|k|<=K} e^{ikx} / k^2 dk = 8 pi Si(K|x|) / |x|; tends to W as K grows."""
    _positive(K=K)
    if x_abs == 0:
        return ScalarResult(8 * math.pi * K, 0.0, "closed_form", {"x": 0.0, "K": K})
    si, _ = special.sici(K * x_abs)
    return ScalarResult(8 * math.pi * float(si) / x_abs, 0.0, "closed_form", {"x": x_abs, "K": K})


def w_kernel(l1: np.ndarray, l2: np.ndarray) -> np.ndarray:
    """w(l1, l2) for 3-vectors (last axis)."""
    a = np.linalg.norm(l1, axis=-1)
    b = np.linalg.norm(l2, axis=-1)
    dot = np.sum(l1 * l2, axis=-1)
    s2 = np.sum((l1 + l2) ** 2, axis=-1)
    return dot**2 / (a**3 * (1 + a) ** 2 * b**3 * (1 + b) ** 2 * (a + b + s2))


_H_T = np.polynomial.legendre.leggauss(32)
_H_U = np.polynomial.legendre.leggauss(64)


def _h_integrand_s(Q: float, c: float, s: np.ndarray, tmax: np.ndarray, xt, wt) -> np.ndarray:
    tt = 0.5 * tmax[:, None] * (xt[None, :] + 1)
    wtt = 0.5 * tmax[:, None] * wt[None, :]
    l1 = 0.5 * (s[:, None] + tt)
    l2 = 0.5 * (s[:, None] - tt)
    num = (0.5 * (Q * Q - l1 * l1 - l2 * l2)) ** 2
    den = l1**2 * (1 + l1) ** 2 * l2**2 * (1 + l2) ** 2 * (l1 + l2 + Q * Q)
    return np.sum(wtt * num / den, axis=1)


def _h_radial(Q: float, c: float, nodes=(_H_T, _H_U)) -> float:
    """Angular-reduced convolution of w at |l1 + l2| = Q with |l_i| >= c.

    h(Q) = (2 pi / Q) int_{s0}^inf ds int_0^{min(Q, s-2c)} dt g(s, t),
    l1,2 = (s +- t)/2, so that int_{|q|=Q} ... = 4 pi Q^2 h(Q).
    The s-range is split where the t-limit switches from s - 2c to Q.
    """
    (xt, wt), (xu, wu) = nodes
    s0 = max(Q, 2 * c)
    s1 = Q + 2 * c
    total = 0.0
    if s1 > s0:
        s = 0.5 * (s1 - s0) * (xu + 1) + s0
        ws = 0.5 * (s1 - s0) * wu
        total += float(np.dot(ws, _h_integrand_s(Q, c, s, s - 2 * c, xt, wt)))
    u = 0.5 * (xu + 1)
    s = s1 / u
    ws = 0.5 * wu * s1 / u**2
    total += float(np.dot(ws, _h_integrand_s(Q, c, s, np.full_like(s, Q), xt, wt)))
    return 2 * math.pi / Q * total


def W_tilde(x_abs: float, mu: float, K: float, tol: float = 1e-7, atol: float = 1e-10) -> ScalarResult:
    """Auxiliary potential in rescaled variables:

    int_{|l_i| >= K/mu} exp(i mu x.(l1 + l2)) w(l1, l2) dl1 dl2
        = (4 pi / (mu|x|)) int_0^inf Q h(Q) sin(mu |x| Q) dQ.
    """
    _positive(mu=mu, K=K)
    c = K / mu
    inputs = {"x": x_abs, "mu": mu, "K": K}
    if x_abs == 0:
        f = lambda Q: 4 * math.pi * Q * Q * _h_radial(Q, c)  # noqa: E731
        v1, e1 = integrate.quad(f, 0, 2 * c, epsrel=tol, limit=200)
        v2, e2 = integrate.quad(f, 2 * c, np.inf, epsrel=tol, limit=200)
        v, e = v1 + v2, e1 + e2
        return ScalarResult(v, e, "quadrature", inputs, converged=e <= 10 * tol * abs(v))
    om = mu * x_abs
    f = lambda Q: Q * _h_radial(Q, c) if Q > 0 else 0.0  # noqa: E731
    # h has a kink at Q = 2c: finite sine-weighted rule below it, Fourier-integral rule above
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        v1, e1 = integrate.quad(f, 0, 2 * c, weight="sin", wvar=om, epsabs=1e-14, limit=200)
        v2, e2 = integrate.quad(f, 2 * c, np.inf, weight="sin", wvar=om, epsabs=1e-14, limlst=200)
    pref = 4 * math.pi / om
    v, e = pref * (v1 + v2), pref * (e1 + e2)
    return ScalarResult(v, e, "oscillatory_quadrature", inputs, converged=e <= max(tol * abs(v), atol))


# ---------------------------------------------------------------------------
# Form-factor norms
# ---------------------------------------------------------------------------

def norm_G(K: float) -> ScalarResult:
    _positive(K=K)
    return ScalarResult(math.sqrt(2 * math.pi) * K, 0.0, "closed_form", {"K": K})


def norm_G_omega_half(K: float) -> ScalarResult:
    _positive(K=K)
    return ScalarResult(math.sqrt(4 * math.pi * K), 0.0, "closed_form", {"K": K})


def _tail_quad(f, K, tol):
    # r = K/u maps [K, inf) onto (0, 1]
    g = lambda u: f(K / u) * K / (u * u) if u > 0 else 0.0  # noqa: E731
    return integrate.quad(g, 0.0, 1.0, epsabs=0.0, epsrel=tol, limit=200)


def norm_B(mu: float, K: float, tol: float = DEFAULT_TOL_1D) -> ScalarResult:
    """||B_K||, ||B_K||^2 = 4 pi int_K^inf dr / (r (r + mu)^2)."""
    _positive(mu=mu, K=K)
    val, err = _tail_quad(lambda r: 4 * math.pi / (r * (r + mu) ** 2), K, tol)
    return ScalarResult(math.sqrt(val), 0.5 * err / math.sqrt(val), "quadrature", {"mu": mu, "K": K})


def norm_kB(mu: float, K: float, s: float, tol: float = DEFAULT_TOL_1D) -> ScalarResult:
    """||omega^{-s} k B_K||, squared = 4 pi int_K^inf r^{1-2s} / (r + mu)^2 dr."""
    _positive(mu=mu, K=K)
    if not 0 < s <= 0.5:
        raise ValueError("s must lie in (0, 1/2]")
    val, err = _tail_quad(lambda r: 4 * math.pi * r ** (1 - 2 * s) / (r + mu) ** 2, K, tol)
    return ScalarResult(math.sqrt(val), 0.5 * err / math.sqrt(val), "quadrature", {"mu": mu, "K": K, "s": s})


def form_factor_norms(mu: float, K: float, s: float = 0.5) -> list[ScalarResult]:
    """[||G_K||, ||omega^{-1/2} G_K||, ||B_K||, ||omega^{-s} k B_K||]."""
    return [norm_G(K), norm_G_omega_half(K), norm_B(mu, K), norm_kB(mu, K, s)]
