"""Process-family registry.

Each family carries its inversion characteristics (involution I,
excessive function h, speed v), the homogeneous data (rho, alpha, beta)
when the family is time-inversion regular, samplers, generator
coefficients for finite-difference work, and closed-form densities
where available.  All state functions act on the packed data array and
broadcast over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import sampling
from .errors import DomainError, InvalidArgumentError, UnsupportedError
from .state import SYMMATRIX, VECTOR, State, sym_pack, sym_unpack

EPS_ABS = 1e-8  # absorption threshold for rho / cone-boundary checks


@dataclass(frozen=True)
class SamplerSpec:
    kind: str  # "exact" | "euler" | "jump"
    make_stepper: Callable  # (x0 (B,d), gen) -> step(x, dt) -> (B,d)
    euler_drift: Optional[Callable] = None       # batched (B,d) -> (B,d)
    euler_dispersion: Optional[Callable] = None  # batched diagonal (B,d) -> (B,d)
    projection: Optional[Callable] = None        # batched domain projection
    jump_alpha: Optional[float] = None


@dataclass(frozen=True)
class GeneratorSpec:
    """Coefficients of L f = b . grad f + 1/2 tr(a hess f)."""

    drift: Callable      # (d,) -> (d,)
    diffusion: Callable  # (d,) -> (d, d)


@dataclass(frozen=True)
class Bijection:
    """State-space map with inverse, for conjugated-family checks."""

    name: str
    forward: Callable   # (..., d_in) -> (..., d_out)
    inverse: Callable
    dim_in: int
    dim_out: int


@dataclass(frozen=True)
class Characteristics:
    name: str
    family_id: str
    params: dict
    n: int                       # state-space dimension (packed length)
    kind: str                    # VECTOR or SYMMATRIX
    dim_info: tuple
    involution: Callable         # I, batched (..., d) -> (..., d)
    excessive_h: Callable        # h, batched (..., d) -> (...)
    speed_v: Callable            # v, batched
    jacobian_I: Optional[Callable]
    sampler: SamplerSpec
    absorbed: Callable           # batched (..., d) -> bool (...)
    validate_state: Callable     # (d,) -> None or raises DomainError
    alpha: Optional[float] = None
    beta: Optional[float] = None
    rho: Optional[Callable] = None
    theta: Optional[Callable] = None
    density: Optional[Callable] = None   # (t, x (d,), y (d,)) -> float
    generator: Optional[GeneratorSpec] = None
    grad_log_h: Optional[Callable] = None  # analytic gradient of log h
    transient: bool = True
    ip_supported: bool = True
    radial_bessel_dim: Optional[float] = None
    harmonic_dictionary: tuple = ()      # ((label, f), ...)

    def state(self, data) -> State:
        return State(self.kind, np.atleast_1d(np.asarray(data, dtype=float)), self.dim_info)


# ---------------------------------------------------------------------------
# shared helpers

def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise InvalidArgumentError("%s: %s" % (key, msg))


def _tip_pieces(rho: Callable, alpha: float, beta: float, n: int):
    """I, h, v, |Jac I| for a homogeneous family: I = x rho^-alpha."""
    e_h = 1.0 - (beta + n) * alpha / 2.0

    def involution(x):
        return x * rho(x)[..., None] ** (-alpha)

    def excessive_h(x):
        return rho(x) ** e_h

    def speed_v(x):
        return rho(x) ** 2

    def jacobian(x):
        return rho(x) ** (-n * alpha)

    return involution, excessive_h, speed_v, jacobian, e_h


# ---------------------------------------------------------------------------
# FSPBES: componentwise powered, time-scaled Bessel processes

def _fspbes_density_1d(t, u, w, nu, sigma2):
    """BES(nu) transition density at scaled time sigma2*t, from u to w."""
    s = sigma2 * t
    z = u * w / s
    small = z < 1e-8
    # exp-scaled Bessel keeps the product finite for large z
    with np.errstate(divide="ignore", invalid="ignore"):
        main = (w / s) * (w / np.where(small, 1.0, u)) ** nu \
            * special.ive(nu, z) * np.exp(-((u - w) ** 2) / (2.0 * s))
    limit = w ** (2 * nu + 1) / (2.0 ** nu * s ** (nu + 1) * special.gamma(nu + 1)) \
        * np.exp(-(u * u + w * w) / (2.0 * s))
    return np.where(small, limit, main)


def _make_fspbes(family_id, n, alpha, nu, sigma, params, name):
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if nu.size == 1:
        nu = np.full(n, nu[0])
    if sigma.size == 1:
        sigma = np.full(n, sigma[0])
    _require(nu.shape == (n,), "nu", "needs %d entries" % n)
    _require(sigma.shape == (n,), "sigma", "needs %d entries" % n)
    _require(bool((nu > -1).all()), "nu", "every nu_i must exceed -1")
    _require(bool((sigma > 0).all()), "sigma", "every sigma_i must be positive")
    _require(alpha != 0 and np.isfinite(alpha), "alpha", "must be finite and nonzero")

    delta = 2.0 * (nu + 1.0)
    sig2 = sigma ** 2
    beta = 2.0 * (n + nu.sum()) / alpha - n

    def rho(x):
        # negative overshoots yield NaN here and are caught by the
        # absorption / finite-weight checks of the callers
        with np.errstate(invalid="ignore"):
            return np.sum(x ** (2.0 / alpha) / sig2, axis=-1)

    involution, excessive_h, speed_v, jacobian, e_h = _tip_pieces(rho, alpha, beta, n)

    def make_stepper(x0, gen):
        def step(x, dt):
            q = x ** (2.0 / alpha)
            qn = sampling.besq_transition(gen, delta, q, sig2 * dt)
            return qn ** (alpha / 2.0)
        return step

    def euler_drift(x):
        return sig2 * alpha * (delta + alpha - 2.0) / 2.0 * x ** ((alpha - 2.0) / alpha)

    def euler_dispersion(x):
        return alpha * sigma * x ** ((alpha - 1.0) / alpha)

    def absorbed(x):
        return (rho(x) < EPS_ABS) | (x < EPS_ABS).any(axis=-1)

    def validate_state(x):
        if x.shape != (n,) or not (np.isfinite(x).all() and (x > 0).all()):
            raise DomainError("state must be a strictly positive %d-vector" % n)

    def theta(y):
        c = 1.0 / (abs(alpha) ** n * np.prod(sigma) ** alpha)
        return c * np.prod((y / sigma ** alpha) ** (2.0 * (1.0 + nu) / alpha - 1.0), axis=-1)

    def density(t, x, y):
        u, w = x ** (1.0 / alpha), y ** (1.0 / alpha)
        jac = np.prod(np.abs(y) ** (1.0 / alpha - 1.0), axis=-1) / abs(alpha) ** n
        return float(jac * np.prod(_fspbes_density_1d(t, u, w, nu, sig2), axis=-1))

    def grad_log_h(x):
        g = (2.0 / alpha) * x ** (2.0 / alpha - 1.0) / sig2
        return e_h * g / rho(x)[..., None]

    def generator_drift(x):
        return euler_drift(x)

    def generator_diffusion(x):
        return np.diag(euler_dispersion(x) ** 2)

    transient = 2.0 * (n + nu.sum()) > 2.0
    h = excessive_h
    return Characteristics(
        name=name, family_id=family_id, params=params, n=n, kind=VECTOR,
        dim_info=(n,), alpha=float(alpha), beta=float(beta), rho=rho,
        involution=involution, excessive_h=h, speed_v=speed_v,
        jacobian_I=jacobian,
        sampler=SamplerSpec("exact", make_stepper, euler_drift, euler_dispersion),
        theta=theta, density=density,
        generator=GeneratorSpec(generator_drift, generator_diffusion),
        grad_log_h=grad_log_h, transient=transient, ip_supported=True,
        absorbed=absorbed, validate_state=validate_state,
        radial_bessel_dim=float(2.0 * (n + nu.sum())),
        harmonic_dictionary=(("one", lambda x: np.ones(np.shape(x)[:-1])), ("h", h)),
    )


def _fspbes(params):
    n = int(params.get("n", 1))
    _require(n >= 1, "n", "must be a positive integer")
    alpha = float(params.get("alpha", 1.0))
    nu = params.get("nu", 0.0)
    sigma = params.get("sigma", 1.0)
    name = "fspbes(n=%d, alpha=%g)" % (n, alpha)
    return _make_fspbes("fspbes", n, alpha, nu, sigma,
                        {"n": n, "alpha": alpha, "nu": nu, "sigma": sigma}, name)


def _bes(params):
    nu = float(params.get("nu", 0.5))
    fam = _make_fspbes("bes", 1, 1.0, nu, 1.0, {"nu": nu},
                       "bes(delta=%g)" % (2 * (nu + 1)))
    return fam


def _besq(params):
    delta = float(params.get("delta", 2.0))
    _require(delta > 0, "delta", "must be positive")
    fam = _make_fspbes("besq", 1, 2.0, delta / 2.0 - 1.0, 1.0,
                       {"delta": delta}, "besq(delta=%g)" % delta)
    return fam


def _free_besq(params):
    n = int(params.get("n", 2))
    delta = float(params.get("delta", 2.0))
    _require(n >= 1, "n", "must be a positive integer")
    _require(delta > 0, "delta", "must be positive")
    return _make_fspbes("free_besq", n, 2.0, delta / 2.0 - 1.0, 1.0,
                        {"n": n, "delta": delta},
                        "free_besq(n=%d, delta=%g)" % (n, delta))


# ---------------------------------------------------------------------------
# Brownian motion on R^n and isotropic stable processes

def _sq_norm(x):
    return np.sum(x * x, axis=-1)


def _harmonic_poly_dictionary(n):
    entries = [("one", lambda x: np.ones(np.shape(x)[:-1]))]
    for i in range(n):
        entries.append(("x%d" % i, lambda x, i=i: x[..., i]))
    for i in range(n):
        for j in range(i + 1, n):
            entries.append(("x%dx%d" % (i, j), lambda x, i=i, j=j: x[..., i] * x[..., j]))
    for i in range(n - 1):
        entries.append(("x%d^2-x%d^2" % (i, i + 1),
                        lambda x, i=i: x[..., i] ** 2 - x[..., i + 1] ** 2))
    return tuple(entries)


def _spherical_family(family_id, params, name, n, h_exp, v_exp, sampler,
                      generator, dictionary, transient, ip_supported,
                      beta=None, theta=None, radial_dim=None):
    """Families with I = x/|x|^2: rho = |x|^2, geometric degree alpha = 1."""

    rho = _sq_norm

    def involution(x):
        return x / rho(x)[..., None]

    def excessive_h(x):
        return rho(x) ** (h_exp / 2.0)

    def speed_v(x):
        return rho(x) ** v_exp

    def jacobian(x):
        return rho(x) ** (-n)

    def grad_log_h(x):
        return h_exp * x / rho(x)[..., None]

    def absorbed(x):
        return rho(x) < EPS_ABS

    def validate_state(x):
        if x.shape != (n,) or not np.isfinite(x).all() or _sq_norm(x) <= 0:
            raise DomainError("state must be a nonzero %d-vector" % n)

    return Characteristics(
        name=name, family_id=family_id, params=params, n=n, kind=VECTOR,
        dim_info=(n,), alpha=1.0, beta=beta, rho=rho, involution=involution,
        excessive_h=excessive_h, speed_v=speed_v, jacobian_I=jacobian,
        sampler=sampler, theta=theta, density=None, generator=generator,
        grad_log_h=grad_log_h, transient=transient, ip_supported=ip_supported,
        absorbed=absorbed, validate_state=validate_state,
        radial_bessel_dim=radial_dim, harmonic_dictionary=dictionary,
    )


def _bm(params):
    n = int(params.get("n", 3))
    _require(n >= 1, "n", "must be a positive integer")

    def make_stepper(x0, gen):
        def step(x, dt):
            return x + np.sqrt(dt) * gen.standard_normal(x.shape)
        return step

    sampler = SamplerSpec("exact", make_stepper,
                          euler_drift=lambda x: np.zeros_like(x),
                          euler_dispersion=lambda x: np.ones_like(x))
    gen_spec = GeneratorSpec(lambda x: np.zeros_like(x), lambda x: np.eye(n))
    return _spherical_family(
        "bm", {"n": n}, "bm(n=%d)" % n, n, h_exp=2 - n, v_exp=2.0,
        sampler=sampler, generator=gen_spec,
        dictionary=_harmonic_poly_dictionary(n),
        transient=n >= 3, ip_supported=n >= 3, beta=0.0,
        radial_dim=float(n))


def _stable(params):
    alpha = float(params.get("alpha", 1.5))
    n = int(params.get("n", 2))
    _require(n >= 1, "n", "must be a positive integer")
    _require(np.isfinite(alpha) and 0 < alpha <= 2, "alpha", "must lie in (0, 2]")
    _require(alpha < n, "alpha", "needs alpha < n (transient regime); "
             "pointwise-recurrent 1-d cases are out of scope")

    def make_stepper(x0, gen):
        def step(x, dt):
            return x + sampling.sample_stable_increment(alpha, dt, n, gen, size=x.shape[0])
        return step

    sampler = SamplerSpec("jump", make_stepper, jump_alpha=alpha)
    return _spherical_family(
        "stable", {"alpha": alpha, "n": n}, "stable(alpha=%g, n=%d)" % (alpha, n),
        n, h_exp=alpha - n, v_exp=alpha, sampler=sampler, generator=None,
        dictionary=(), transient=True, ip_supported=True)


# ---------------------------------------------------------------------------
# GOE: symmetric-matrix Brownian motion

def _packed_weights(m):
    """1 for diagonal packed entries, 2 for off-diagonal ones."""
    iu = np.triu_indices(m)
    return np.where(iu[0] == iu[1], 1.0, 2.0)


def _goe(params):
    m = int(params.get("m", 2))
    _require(m >= 2, "m", "must be at least 2")
    n = m * (m + 1) // 2
    w = _packed_weights(m)

    def rho(x):
        return np.sum(w * x * x, axis=-1)

    involution, excessive_h, speed_v, jacobian, e_h = _tip_pieces(rho, 1.0, 0.0, n)
    scale = np.sqrt(1.0 / w)  # noise sd per packed coordinate per unit time

    def make_stepper(x0, gen):
        def step(x, dt):
            return x + np.sqrt(dt) * scale * gen.standard_normal(x.shape)
        return step

    sampler = SamplerSpec("exact", make_stepper,
                          euler_drift=lambda x: np.zeros_like(x),
                          euler_dispersion=lambda x: np.broadcast_to(scale, x.shape))
    gen_spec = GeneratorSpec(lambda x: np.zeros(n), lambda x: np.diag(1.0 / w))

    def grad_log_h(x):
        return e_h * 2.0 * w * x / rho(x)[..., None]

    def absorbed(x):
        return rho(x) < EPS_ABS

    def validate_state(x):
        if x.shape != (n,) or not np.isfinite(x).all() or float(rho(x)) <= 0:
            raise DomainError("state must be a nonzero packed %dx%d symmetric matrix" % (m, m))

    h = excessive_h
    return Characteristics(
        name="goe(m=%d)" % m, family_id="goe", params={"m": m}, n=n,
        kind=SYMMATRIX, dim_info=(m, m), alpha=1.0, beta=0.0, rho=rho,
        involution=involution, excessive_h=h, speed_v=speed_v,
        jacobian_I=jacobian, sampler=sampler, generator=gen_spec,
        grad_log_h=grad_log_h, transient=n >= 3, ip_supported=n >= 3,
        absorbed=absorbed, validate_state=validate_state,
        radial_bessel_dim=float(n),
        harmonic_dictionary=(("one", lambda x: np.ones(np.shape(x)[:-1])), ("h", h)),
    )


# ---------------------------------------------------------------------------
# Wishart

def _sym_sqrt(mats):
    """Symmetric PSD square root of a batch of symmetric matrices."""
    lam, vec = np.linalg.eigh(mats)
    return (vec * np.sqrt(np.maximum(lam, 0.0))[..., None, :]) @ np.swapaxes(vec, -1, -2)


def _min_eig_sym(x, m):
    if m == 2:
        p, r, q = x[..., 0], x[..., 1], x[..., 2]
        half = 0.5 * (p + q)
        return half - np.sqrt((0.5 * (p - q)) ** 2 + r * r)
    return np.linalg.eigvalsh(sym_unpack(x, m))[..., 0]


def _wishart(params):
    m = int(params.get("m", 2))
    delta = float(params.get("delta", 3.0))
    _require(m >= 2, "m", "must be at least 2")
    low_range = abs(delta - round(delta)) < 1e-12 and 1 <= round(delta) <= m - 2
    _require(delta >= m - 1 or low_range, "delta",
             "must lie in {1,...,m-2} or [m-1, inf)")
    n = m * (m + 1) // 2
    diag_mask = np.asarray(np.triu_indices(m)[0] == np.triu_indices(m)[1], dtype=float)

    def rho(x):
        return np.sum(x * diag_mask, axis=-1)

    beta = m * (delta - m - 1) / 2.0
    involution, excessive_h, speed_v, jacobian, e_h = _tip_pieces(rho, 2.0, beta, n)
    exact = abs(delta - round(delta)) < 1e-12 and round(delta) >= m
    dint = int(round(delta))

    def make_exact_stepper(x0, gen):
        # factor state N with N^T N = X; Gaussian increments on N keep
        # the law exactly Wishart(delta) for integer delta >= m
        N = np.zeros(x0.shape[:-1] + (dint, m))
        N[..., :m, :] = _sym_sqrt(sym_unpack(x0, m))

        def step(x, dt):
            N[...] += np.sqrt(dt) * gen.standard_normal(N.shape)
            return sym_pack(np.swapaxes(N, -1, -2) @ N)
        return step

    def make_euler_stepper(x0, gen):
        def step(x, dt):
            mat = sym_unpack(x, m)
            root = _sym_sqrt(mat)
            dB = np.sqrt(dt) * gen.standard_normal(mat.shape)
            sdB = root @ dB
            new = mat + sdB + np.swapaxes(sdB, -1, -2) + delta * dt * np.eye(m)
            # clamp eigenvalues in [-EPS_ABS, 0) to 0; larger violations
            # survive and trigger the absorption predicate
            lam, vec = np.linalg.eigh(new)
            graze = (lam < 0) & (lam >= -EPS_ABS)
            if graze.any():
                lam = np.where(graze, 0.0, lam)
                new = (vec * lam[..., None, :]) @ np.swapaxes(vec, -1, -2)
            return sym_pack(new)
        return step

    def absorbed(x):
        bad = rho(x) < EPS_ABS
        if not exact:
            bad = bad | (_min_eig_sym(x, m) < -EPS_ABS)
        return bad

    def validate_state(x):
        if x.shape != (n,) or not np.isfinite(x).all():
            raise DomainError("state must be a packed %dx%d symmetric matrix" % (m, m))
        if _min_eig_sym(x, m) <= 0:
            raise DomainError("state must be positive definite")

    def wish_generator_drift(x):
        return delta * diag_mask

    iu = np.triu_indices(m)
    pairs = list(zip(iu[0], iu[1]))

    def wish_generator_diffusion(x):
        mat = sym_unpack(x, m)
        a = np.empty((n, n))
        for c, (i, j) in enumerate(pairs):
            for cp, (k, l) in enumerate(pairs):
                a[c, cp] = (mat[i, k] * (j == l) + mat[i, l] * (j == k)
                            + mat[j, k] * (i == l) + mat[j, l] * (i == k))
        return a

    def grad_log_h(x):
        return e_h * diag_mask / rho(x)[..., None]

    h = excessive_h
    return Characteristics(
        name="wishart(m=%d, delta=%g)" % (m, delta), family_id="wishart",
        params={"m": m, "delta": delta}, n=n, kind=SYMMATRIX, dim_info=(m, m),
        alpha=2.0, beta=beta, rho=rho, involution=involution, excessive_h=h,
        speed_v=speed_v, jacobian_I=jacobian,
        sampler=SamplerSpec("exact" if exact else "euler",
                            make_exact_stepper if exact else make_euler_stepper),
        generator=GeneratorSpec(wish_generator_drift, wish_generator_diffusion),
        grad_log_h=grad_log_h, transient=m * delta > 2, ip_supported=True,
        absorbed=absorbed, validate_state=validate_state,
        radial_bessel_dim=float(m * delta),
        harmonic_dictionary=(("one", lambda x: np.ones(np.shape(x)[:-1])), ("h", h)),
    )


# ---------------------------------------------------------------------------
# Dyson eigenvalue motion (beta = 2)

def _vandermonde(x):
    n = x.shape[-1]
    out = np.ones(x.shape[:-1])
    for i in range(n):
        for j in range(i + 1, n):
            out = out * (x[..., j] - x[..., i])
    return out


def _pairwise_inverse_sum(x):
    """sum_{j != i} 1/(x_i - x_j), batched over leading axes."""
    n = x.shape[-1]
    diff = x[..., :, None] - x[..., None, :]
    inv = np.zeros_like(diff)
    np.divide(1.0, diff, out=inv, where=~np.eye(n, dtype=bool))
    return inv.sum(axis=-1)


def _eigvalsh_herm2(H):
    a = H[..., 0, 0].real
    b = H[..., 1, 1].real
    c = H[..., 0, 1]
    half = 0.5 * (a + b)
    rad = np.sqrt((0.5 * (a - b)) ** 2 + (c * c.conjugate()).real)
    return np.stack([half - rad, half + rad], axis=-1)


def _dyson(params):
    n = int(params.get("n", 2))
    _require(n >= 2, "n", "must be at least 2")
    rho = _sq_norm
    beta = float(n * (n - 1))
    involution, excessive_h, speed_v, jacobian, e_h = _tip_pieces(rho, 1.0, beta, n)
    iu = np.triu_indices(n, k=1)
    idx = np.arange(n)

    def make_stepper(x0, gen):
        # the eigenvalues of a Hermitian Brownian motion started at
        # diag(x0) reproduce the law exactly at every grid time
        H = np.zeros(x0.shape[:-1] + (n, n), dtype=complex)
        H[..., idx, idx] = x0

        def step(x, dt):
            H[..., idx, idx] += np.sqrt(dt) * gen.standard_normal(x.shape)
            re = np.sqrt(dt / 2.0) * gen.standard_normal(x.shape[:-1] + (iu[0].size,))
            im = np.sqrt(dt / 2.0) * gen.standard_normal(x.shape[:-1] + (iu[0].size,))
            H[..., iu[0], iu[1]] += re + 1j * im
            H[..., iu[1], iu[0]] += re - 1j * im
            if n == 2:
                return _eigvalsh_herm2(H)
            return np.linalg.eigvalsh(H)
        return step

    def euler_drift(x):
        return _pairwise_inverse_sum(x)

    def euler_dispersion(x):
        return np.ones_like(x)

    def absorbed(x):
        gap = np.diff(x, axis=-1).min(axis=-1)
        return (rho(x) < EPS_ABS) | (gap < EPS_ABS) | ~np.isfinite(x).all(axis=-1)

    def validate_state(x):
        if x.shape != (n,) or not np.isfinite(x).all() or not (np.diff(x) > 0).all():
            raise DomainError("state must be a strictly increasing %d-vector" % n)
        if float(rho(x)) <= 0:
            raise DomainError("state must be nonzero")

    def theta(y):
        return (2.0 * np.pi) ** (n / 2.0) * _vandermonde(y) ** 2

    def density(t, x, y):
        g = np.exp(-((y[None, :] - x[:, None]) ** 2) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
        val = _vandermonde(y) / _vandermonde(x) * np.linalg.det(g)
        return float(max(val, 0.0))  # Karlin-McGregor determinant, clipped at roundoff

    def grad_log_h(x):
        return e_h * 2.0 * x / rho(x)[..., None]

    h = excessive_h
    return Characteristics(
        name="dyson(n=%d)" % n, family_id="dyson", params={"n": n}, n=n,
        kind=VECTOR, dim_info=(n,), alpha=1.0, beta=beta, rho=rho,
        involution=involution, excessive_h=h, speed_v=speed_v,
        jacobian_I=jacobian,
        sampler=SamplerSpec("exact", make_stepper, euler_drift, euler_dispersion),
        theta=theta, density=density,
        generator=GeneratorSpec(lambda x: _pairwise_inverse_sum(x), lambda x: np.eye(n)),
        grad_log_h=grad_log_h, transient=True, ip_supported=True,
        absorbed=absorbed, validate_state=validate_state,
        radial_bessel_dim=float(n * n),
        harmonic_dictionary=(("one", lambda x: np.ones(np.shape(x)[:-1])), ("h", h)),
    )


# ---------------------------------------------------------------------------
# noncolliding squared Bessel particles

def _noncolliding_besq(params):
    n = int(params.get("n", 2))
    delta = float(params.get("delta", 2.0))
    _require(n >= 2, "n", "must be at least 2")
    _require(delta > 0, "delta", "must be positive")

    def rho(x):
        return np.sum(x, axis=-1)

    beta = n * delta / 2.0 - n + n * (n - 1)
    involution, excessive_h, speed_v, jacobian, e_h = _tip_pieces(rho, 2.0, beta, n)

    def euler_drift(x):
        return delta + 4.0 * x * _pairwise_inverse_sum(x)

    def euler_dispersion(x):
        return 2.0 * np.sqrt(np.maximum(x, 0.0))

    def make_stepper(x0, gen, drift_extra=None):
        # the pairwise repulsion varies on the gap scale, so rows take
        # internal substeps keeping the diffusive motion per substep,
        # 4 x dt, small against their squared minimal gap; substep counts
        # are fixed at step entry and grouped in powers of two so the
        # draws stay batched
        def substep_counts(x, dt):
            gap2 = np.square(np.diff(x, axis=-1).min(axis=-1))
            lam = dt * 4.0 * x.max(axis=-1) / np.maximum(gap2, 1e-300)
            return np.exp2(np.ceil(np.log2(np.clip(lam / 0.00075, 1.0, 1024.0))))

        def step(x, dt):
            k = substep_counts(x, dt)
            xn = np.empty_like(x)
            # collided rows produce infinite drift and propagate to nan,
            # which the absorption predicate retires afterwards
            with np.errstate(divide="ignore", invalid="ignore"):
                for kv in np.unique(k):
                    rows = k == kv
                    y = x[rows]
                    sub = dt / kv
                    for _ in range(int(kv)):
                        b = euler_drift(y)
                        if drift_extra is not None:
                            b = b + drift_extra(y)
                        noise = gen.standard_normal(y.shape)
                        y = y + b * sub \
                            + euler_dispersion(y) * np.sqrt(sub) * noise
                        y = np.maximum(y, 0.0)
                    xn[rows] = y
            return xn
        return step

    def absorbed(x):
        gap = np.diff(x, axis=-1).min(axis=-1)
        return (rho(x) < EPS_ABS) | (gap < EPS_ABS) | ~np.isfinite(x).all(axis=-1)

    def validate_state(x):
        if x.shape != (n,) or not np.isfinite(x).all() \
                or not (x[0] > 0 and (np.diff(x) > 0).all()):
            raise DomainError("state must satisfy 0 < x_1 < ... < x_%d" % n)

    def grad_log_h(x):
        return e_h * np.ones_like(x) / rho(x)[..., None]

    h = excessive_h
    return Characteristics(
        name="noncolliding_besq(n=%d, delta=%g)" % (n, delta),
        family_id="noncolliding_besq", params={"n": n, "delta": delta},
        n=n, kind=VECTOR, dim_info=(n,), alpha=2.0, beta=beta, rho=rho,
        involution=involution, excessive_h=h, speed_v=speed_v,
        jacobian_I=jacobian,
        sampler=SamplerSpec("euler", make_stepper, euler_drift, euler_dispersion),
        generator=GeneratorSpec(lambda x: delta + 4.0 * x * _pairwise_inverse_sum(x),
                                lambda x: np.diag(4.0 * x)),
        grad_log_h=grad_log_h, transient=True, ip_supported=True,
        absorbed=absorbed, validate_state=validate_state,
        radial_bessel_dim=float(n * delta + 2 * n * (n - 1)),
        harmonic_dictionary=(("one", lambda x: np.ones(np.shape(x)[:-1])), ("h", h)),
    )


# ---------------------------------------------------------------------------
# hyperbolic Bessel process (radial hyperbolic BM, dimension 3)

def _hyperbolic_bessel(params):
    n = int(params.get("n", 3))
    _require(n == 3, "n", "only the 3-dimensional hyperbolic Bessel process "
             "has a closed-form involution; n must be 3")

    def involution(x):
        return np.arctanh(np.exp(-2.0 * x))

    def excessive_h(x):
        return (np.sqrt(2.0) / np.expm1(2.0 * x))[..., 0]

    def speed_v(x):
        # pinned by the time change: |I'(r)|^2 v(r) = 1 so that the
        # involuted, time-changed path keeps unit diffusion
        return np.sinh(2.0 * x)[..., 0] ** 2

    def jacobian(x):
        return (1.0 / np.sinh(2.0 * x))[..., 0]

    def drift(x):
        return 1.0 / np.tanh(x)

    def make_stepper(x0, gen, drift_extra=None):
        def step(x, dt):
            b = drift(x)
            if drift_extra is not None:
                b = b + drift_extra(x)
            return x + b * dt + np.sqrt(dt) * gen.standard_normal(x.shape)
        return step

    def absorbed(x):
        r = x[..., 0]
        return (r < EPS_ABS) | ~np.isfinite(r)

    def validate_state(x):
        if x.shape != (1,) or not (np.isfinite(x[0]) and x[0] > 0):
            raise DomainError("state must be a single radius r > 0")

    def grad_log_h(x):
        return -(1.0 + 1.0 / np.tanh(x))

    h = excessive_h
    return Characteristics(
        name="hyperbolic_bessel(3)", family_id="hyperbolic_bessel",
        params={"n": n}, n=1, kind=VECTOR, dim_info=(1,),
        involution=involution, excessive_h=h, speed_v=speed_v,
        jacobian_I=jacobian,
        sampler=SamplerSpec("euler", make_stepper, drift,
                            lambda x: np.ones_like(x)),
        generator=GeneratorSpec(lambda x: drift(x), lambda x: np.eye(1)),
        grad_log_h=grad_log_h, transient=True, ip_supported=True,
        absorbed=absorbed, validate_state=validate_state,
        harmonic_dictionary=(("one", lambda x: np.ones(np.shape(x)[:-1])), ("h", h)),
    )


# ---------------------------------------------------------------------------
# registry

_BUILDERS = {
    "fspbes": _fspbes,
    "bes": _bes,
    "besq": _besq,
    "free_besq": _free_besq,
    "bm": _bm,
    "stable": _stable,
    "goe": _goe,
    "wishart": _wishart,
    "dyson": _dyson,
    "noncolliding_besq": _noncolliding_besq,
    "hyperbolic_bessel": _hyperbolic_bessel,
}

_ALLOWED_PARAMS = {
    "fspbes": {"n", "alpha", "nu", "sigma"},
    "bes": {"nu"},
    "besq": {"delta"},
    "free_besq": {"n", "delta"},
    "bm": {"n"},
    "stable": {"alpha", "n"},
    "goe": {"m"},
    "wishart": {"m", "delta"},
    "dyson": {"n"},
    "noncolliding_besq": {"n", "delta"},
    "hyperbolic_bessel": {"n"},
}

FAMILY_DESCRIPTIONS = {
    "fspbes": "componentwise powered Bessel, params n, alpha, nu[], sigma[]",
    "bes": "Bessel process on (0,inf), param nu (dimension 2(nu+1))",
    "besq": "squared Bessel process, param delta",
    "free_besq": "independent squared Bessels, params n, delta",
    "bm": "Brownian motion on R^n, param n (inversion needs n >= 3)",
    "stable": "isotropic alpha-stable process, params alpha < n",
    "goe": "symmetric-matrix Brownian motion, param m",
    "wishart": "Wishart process, params m, delta in {1..m-2} or [m-1,inf)",
    "dyson": "Dyson eigenvalue motion (beta=2), param n",
    "noncolliding_besq": "noncolliding squared Bessel particles, params n, delta",
    "hyperbolic_bessel": "hyperbolic Bessel process, param n = 3",
}


def get_family(family_id: str, params: Optional[dict] = None, **kw) -> Characteristics:
    merged = dict(params or {})
    merged.update(kw)
    if family_id not in _BUILDERS:
        raise InvalidArgumentError(
            "unknown family %r; known families: %s"
            % (family_id, ", ".join(sorted(_BUILDERS))))
    extra = set(merged) - _ALLOWED_PARAMS[family_id]
    if extra:
        raise InvalidArgumentError(
            "%s: unknown parameter(s) for family %s"
            % (", ".join(sorted(extra)), family_id))
    return _BUILDERS[family_id](merged)


# ---------------------------------------------------------------------------
# module-level operations on characteristics

def as_state_data(family: Characteristics, x) -> np.ndarray:
    """Coerce a State or array-like to the family's packed data vector."""
    if isinstance(x, State):
        if x.is_cemetery:
            raise DomainError("the Cemetery state has no coordinates")
        if x.kind != family.kind:
            raise DomainError("state kind %r does not match family kind %r"
                              % (x.kind, family.kind))
        data = x.data
    else:
        data = np.asarray(x, dtype=float)
        if family.kind == SYMMATRIX and data.ndim == 2:
            data = sym_pack(data)
        data = np.atleast_1d(data)
    if data.shape != (family.n,):
        raise DomainError("expected state of length %d, got shape %s"
                          % (family.n, data.shape))
    return data.astype(float)


def density(family: Characteristics, t: float, x, y) -> float:
    """Transition density p_t(x, y) where a closed form is registered."""
    if family.density is None:
        raise UnsupportedError("no closed-form transition density for %s" % family.name)
    if not (np.isfinite(t) and t > 0):
        raise InvalidArgumentError("t: must be positive and finite")
    xd = as_state_data(family, x)
    yd = as_state_data(family, y)
    family.validate_state(xd)
    family.validate_state(yd)
    return float(family.density(t, xd, yd))


def self_duality_residual(family: Characteristics, t: float, x, y) -> float:
    """Relative defect of p_t(x,y) theta(x) = p_t(y,x) theta(y)."""
    if family.density is None or family.theta is None:
        raise UnsupportedError("self-duality needs a registered density and theta")
    xd = as_state_data(family, x)
    yd = as_state_data(family, y)
    lhs = density(family, t, xd, yd) * float(family.theta(xd))
    rhs = density(family, t, yd, xd) * float(family.theta(yd))
    scale = max(abs(lhs), abs(rhs))
    if scale == 0.0:
        return 0.0
    return abs(lhs - rhs) / scale


def radial_process_value(family: Characteristics, s) -> float:
    """rho^(1/2) at a state, for families with homogeneous data."""
    if family.rho is None:
        raise UnsupportedError(
            "%s has no homogeneity data; radial reduction does not apply" % family.name)
    data = as_state_data(family, s)
    return float(np.sqrt(family.rho(data)))


def random_states(family: Characteristics, size: int, gen) -> np.ndarray:
    """Draw interior states of the family's state space, shape (size, n)."""
    fid = family.family_id
    n = family.n
    if fid in ("fspbes", "bes", "besq", "free_besq"):
        return gen.uniform(0.3, 2.5, (size, n))
    if fid in ("noncolliding_besq",):
        return np.sort(gen.uniform(0.3, 2.5, (size, n)), axis=-1)
    if fid == "dyson":
        return np.sort(gen.normal(0.0, 1.0, (size, n)), axis=-1)
    if fid == "hyperbolic_bessel":
        return gen.uniform(0.2, 2.5, (size, 1))
    if fid == "wishart":
        m = family.dim_info[0]
        a = gen.normal(0.0, 1.0, (size, m, m))
        return sym_pack(a @ np.swapaxes(a, -1, -2) + 0.25 * np.eye(m))
    # bm, stable, goe: full-space families with a pole at the origin only
    x = gen.normal(0.0, 1.0, (size, n))
    low = np.sqrt(np.maximum(family.rho(x), 0.0)) < 1e-3
    while low.any():
        x[low] = gen.normal(0.0, 1.0, (int(low.sum()), n))
        low = np.sqrt(np.maximum(family.rho(x), 0.0)) < 1e-3
    return x


# ---------------------------------------------------------------------------
# conjugation bijections

def goe_embedding(m: int) -> Bijection:
    """Flat BM on R^{m(m+1)/2} to GOE packed coordinates: off-diagonals / sqrt(2)."""
    s = np.sqrt(_packed_weights(m))
    return Bijection("goe_embedding(m=%d)" % m,
                     forward=lambda x: x / s,
                     inverse=lambda y: y * s,
                     dim_in=s.size, dim_out=s.size)


def squares_map(n: int) -> Bijection:
    """Componentwise squares, positive cone to positive cone."""
    return Bijection("squares(n=%d)" % n,
                     forward=lambda x: x * x,
                     inverse=lambda y: np.sqrt(y),
                     dim_in=n, dim_out=n)


def identity_map(n: int) -> Bijection:
    return Bijection("identity(n=%d)" % n,
                     forward=lambda x: x,
                     inverse=lambda y: y,
                     dim_in=n, dim_out=n)
