"""Additive functionals, time-change inversion, involuted paths, and
Doob h-transform machinery (drift form and weighted-estimator form)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (InvalidArgumentError, NumericalDomainError,
                     PastLifetimeError, UnsupportedError)
from .families import Characteristics, as_state_data
from .rng import RngStream
from .sampling import _as_generator
from .state import SYMMATRIX, Path, PathBatch, TimeGrid, sym_unpack, sym_pack


@dataclass(frozen=True)
class AdditiveFunctional:
    """Cumulative A_t = integral of 1/v(X_s) ds on the path's grid.

    values is nondecreasing with values[0] = 0 and stays frozen after
    the path's lifetime; final is the value at the lifetime.
    """

    t: np.ndarray
    values: np.ndarray
    final: float
    n_alive: int  # number of grid points the path was alive for


@dataclass(frozen=True)
class WeightedSample:
    """Empirical sub-probability law: states with nonnegative weights."""

    states: np.ndarray   # (B, d)
    weights: np.ndarray  # (B,)
    kind: str
    origin: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.states.shape[:1] != self.weights.shape:
            raise InvalidArgumentError("states and weights must align")
        if (self.weights < 0).any():
            raise InvalidArgumentError("weights must be nonnegative")

    @property
    def mass(self) -> float:
        """Mean weight; at most 1 + tolerance for excessive weightings."""
        return float(self.weights.mean())


def additive_functional(path: Path, v: Callable) -> AdditiveFunctional:
    """Trapezoid cumulative integral of 1/v along the path."""
    t = path.grid.t
    vv = np.asarray(v(path.values), dtype=float)
    n_alive = int(path.alive.sum())
    if not (vv[:n_alive] > 0).all() or not np.isfinite(vv[:n_alive]).all():
        raise NumericalDomainError("v must be positive and finite on visited states")
    f = 1.0 / vv[:n_alive]
    A = np.zeros(t.size)
    if n_alive > 1:
        seg = np.diff(t[:n_alive]) * 0.5 * (f[:-1] + f[1:])
        A[1:n_alive] = np.cumsum(seg)
    A[n_alive:] = A[n_alive - 1]
    return AdditiveFunctional(t=t, values=A, final=float(A[-1]), n_alive=n_alive)


def invert_time_change(A: AdditiveFunctional, t: float) -> float:
    """gamma_t: piecewise-linear inverse of the trapezoid A."""
    if not (np.isfinite(t) and t >= 0):
        raise InvalidArgumentError("t must be finite and nonnegative")
    if t > A.final:
        raise PastLifetimeError("t=%g exceeds the additive functional's final value %g"
                                % (t, A.final))
    k = A.n_alive
    return float(np.interp(t, A.values[:k], A.t[:k]))


def _interp_states(path: Path, gammas: np.ndarray, jump: bool) -> np.ndarray:
    """States X_gamma for an array of times within the alive range."""
    k = int(path.alive.sum())
    t = path.grid.t[:k]
    vals = path.values[:k]
    idx = np.searchsorted(t, gammas, side="right") - 1
    idx = np.clip(idx, 0, k - 1)
    if jump:
        return vals[idx]
    nxt = np.minimum(idx + 1, k - 1)
    denom = t[nxt] - t[idx]
    frac = np.where(denom > 0, (gammas - t[idx]) / np.where(denom > 0, denom, 1.0), 0.0)
    return vals[idx] + frac[:, None] * (vals[nxt] - vals[idx])


def involute_path(path: Path, family: Characteristics, out_grid: TimeGrid) -> Path:
    """Y_s = I(X_{gamma_s}) on out_grid; Cemetery past the final A value."""
    A = additive_functional(path, family.speed_v)
    s = out_grid.t
    alive = s <= A.final
    # absorption is monotone by construction since s is increasing
    gammas = np.interp(s[alive], A.values[:A.n_alive], A.t[:A.n_alive])
    x_at = _interp_states(path, gammas, jump=family.sampler.kind == "jump")
    y = family.involution(x_at)
    values = np.empty((s.size, path.values.shape[1]))
    values[alive] = y
    if not alive.all():
        values[~alive] = y[-1] if y.size else path.values[0]
    return Path(grid=out_grid, values=values, alive=alive,
                kind=path.kind, dim_info=path.dim_info)


def h_weight(path: Path, h: Callable, t: float) -> float:
    """Weight h(X_t)/h(X_0), or 0 when the path is dead or outside E_h."""
    h0 = float(h(path.values[0]))
    if not (np.isfinite(h0) and h0 > 0):
        raise InvalidArgumentError("h(X_0) must be positive and finite")
    grid_t = path.grid.t
    if not (0 <= t <= grid_t[-1]):
        raise InvalidArgumentError("t=%g is outside the path's grid" % t)
    if t >= path.lifetime:
        return 0.0
    x_t = _interp_states(path, np.array([t]), jump=False)[0]
    ht = float(h(x_t))
    if not (np.isfinite(ht) and ht > 0):
        return 0.0
    return ht / h0


def weighted_marginal(batch: PathBatch, h: Callable, t: float,
                      origin: Optional[dict] = None) -> WeightedSample:
    """Vectorized h-weighted empirical law of X_t over a path batch."""
    grid_t = batch.grid.t
    k = int(np.searchsorted(grid_t, t))
    if k >= grid_t.size or abs(grid_t[k] - t) > 1e-9 * max(1.0, t):
        raise InvalidArgumentError("t=%g is not a grid time" % t)
    x = batch.values[:, k, :]
    alive = batch.alive[:, k]
    h0 = np.asarray(h(batch.values[:, 0, :]), dtype=float)
    if not ((h0 > 0) & np.isfinite(h0)).all():
        raise InvalidArgumentError("h(X_0) must be positive and finite")
    ht = np.asarray(h(x), dtype=float)
    ok = alive & np.isfinite(ht) & (ht > 0)
    w = np.where(ok, ht / h0, 0.0)
    return WeightedSample(states=x, weights=w, kind=batch.kind,
                          origin=dict(origin or {}, t=t))


# ---------------------------------------------------------------------------
# Doob h-transform sampling

def grad_log_h_fd(h: Callable, x: np.ndarray) -> np.ndarray:
    """Central-difference gradient of log h, batched over rows of x.

    Step 1e-5 (1 + |x|); falls back to a second-order one-sided stencil
    when a probe point leaves h's domain (nonpositive or nonfinite h).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    hx = np.asarray(h(x), dtype=float)
    g = np.zeros_like(x)
    B, d = x.shape
    for k in range(d):
        step = 1e-5 * (1.0 + np.abs(x[:, k]))
        e = np.zeros_like(x)
        e[:, k] = step
        hp = np.asarray(h(x + e), dtype=float)
        hm = np.asarray(h(x - e), dtype=float)
        ok_p = np.isfinite(hp) & (hp > 0)
        ok_m = np.isfinite(hm) & (hm > 0)
        central = np.where(ok_p & ok_m, (hp - hm) / (2.0 * step), np.nan)
        need_right = ~ok_m & ok_p
        if need_right.any():
            hpp = np.asarray(h(x + 2 * e), dtype=float)
            central = np.where(need_right,
                               (-3.0 * hx + 4.0 * hp - hpp) / (2.0 * step), central)
        need_left = ~ok_p & ok_m
        if need_left.any():
            hmm = np.asarray(h(x - 2 * e), dtype=float)
            central = np.where(need_left,
                               (3.0 * hx - 4.0 * hm + hmm) / (2.0 * step), central)
        g[:, k] = central
    return g / hx[:, None]


def _wishart_drift_correction(family: Characteristics, x: np.ndarray,
                              g: np.ndarray) -> np.ndarray:
    """a(x) . grad log h in packed coordinates: 2(X G + G X) with the
    packed gradient rescaled to a symmetric matrix derivative."""
    m = family.dim_info[0]
    G = sym_unpack(g, m)
    off = ~np.eye(m, dtype=bool)
    G[..., off] *= 0.5
    X = sym_unpack(x, m)
    return sym_pack(2.0 * (X @ G + G @ X))


def _make_doob_stepper(family: Characteristics, h: Callable, x: np.ndarray,
                       gen) -> Callable:
    """One h-transform step: returns (x_next, ok_mask).

    Families with a stateless exact stepper keep their exact base step
    and add the correction a . grad log h, so a constant h reproduces
    the plain sampler path at the same seed; stateful exact steppers
    (matrix factor or Hermitian auxiliary state) fall back to Euler
    from the generator coefficients.  Jump families are unsupported.
    """
    if family.sampler.kind == "jump":
        raise UnsupportedError("no Doob-drift sampler for jump families; "
                               "use the weighted estimator instead")
    analytic = family.grad_log_h if h is family.excessive_h else None

    def grad(xc):
        if analytic is not None:
            return analytic(xc)
        return grad_log_h_fd(h, xc)

    stateful = family.family_id in ("wishart", "dyson")
    matrixy = family.family_id == "wishart"
    if stateful and not matrixy and family.sampler.euler_drift is None:
        raise UnsupportedError("family lacks diffusion coefficients")
    eulerish = family.sampler.kind == "euler" and not stateful
    if stateful:
        base_step = None
    elif eulerish:
        # euler steppers take the correction inside their own stepping
        # loop, so internal substepping refines it along with the drift
        def corr_drift(y):
            s = family.sampler.euler_dispersion(y)
            return s * s * grad(y)
        base_step = family.sampler.make_stepper(x, gen, drift_extra=corr_drift)
    else:
        base_step = family.sampler.make_stepper(x, gen)

    def step(x, dt):
        g = None if eulerish else grad(x)
        if matrixy:
            corr = _wishart_drift_correction(family, x, g)
            m = family.dim_info[0]
            X = sym_unpack(x, m)
            lam, vec = np.linalg.eigh(X)
            root = (vec * np.sqrt(np.maximum(lam, 0.0))[..., None, :]) @ np.swapaxes(vec, -1, -2)
            dB = np.sqrt(dt) * gen.standard_normal(X.shape)
            sdB = root @ dB
            delta = family.params["delta"]
            Xn = X + sdB + np.swapaxes(sdB, -1, -2) + (delta * dt) * np.eye(m)
            xn = sym_pack(Xn) + corr * dt
        elif stateful:
            b = family.sampler.euler_drift(x)
            s = family.sampler.euler_dispersion(x)
            noise = gen.standard_normal(x.shape)
            xn = x + (b + s * s * g) * dt + s * np.sqrt(dt) * noise
        elif eulerish:
            xn = base_step(x, dt)
        else:
            base = base_step(x, dt)
            s = family.sampler.euler_dispersion(x)
            xn = base + (s * s * g) * dt
        # h may pole at states the absorption check is about to retire
        with np.errstate(divide="ignore", invalid="ignore"):
            hn = np.asarray(h(xn), dtype=float)
        ok = np.isfinite(xn).all(axis=-1) & np.isfinite(hn) & (hn > 0)
        ok &= ~family.absorbed(xn)
        return xn, ok

    return step


def doob_paths(family: Characteristics, h: Callable, x0, grid: TimeGrid,
               rng, n_paths: int) -> PathBatch:
    """Paths of the h-transform X^h via drift correction a . grad log h;
    see _make_doob_stepper for the stepping scheme."""
    x0d = as_state_data(family, x0)
    family.validate_state(x0d)
    h0 = float(np.asarray(h(x0d[None, :]), dtype=float)[0])
    if not (np.isfinite(h0) and h0 > 0):
        raise InvalidArgumentError("h(x0) must be positive and finite")
    gen = _as_generator(rng)
    B = int(n_paths)
    x = np.broadcast_to(x0d, (B, family.n)).copy()
    step = _make_doob_stepper(family, h, x, gen)
    t = grid.t
    T = t.size
    values = np.empty((B, T, family.n))
    alive = np.ones((B, T), dtype=bool)
    values[:, 0, :] = x
    a_mask = np.ones(B, dtype=bool)
    for k in range(1, T):
        xn, ok = step(x, t[k] - t[k - 1])
        a_mask = a_mask & ok
        x = np.where(a_mask[:, None], xn, x)
        values[:, k, :] = x
        alive[:, k] = a_mask
    return PathBatch(grid=grid, values=values, alive=alive,
                     kind=family.kind, dim_info=family.dim_info)


def doob_drift_sampler(family: Characteristics, h: Callable, x0,
                       grid: TimeGrid, rng) -> Path:
    """Single h-transformed path; see doob_paths."""
    return doob_paths(family, h, x0, grid, rng, 1).path(0)


def kelvin_conditioning_h(family: Characteristics, H: Callable) -> Callable:
    """h-tilde = h . (H o I) / H, the conditioning function K H / H."""
    I, h = family.involution, family.excessive_h

    def h_tilde(x):
        x = np.asarray(x, dtype=float)
        return h(x) * np.asarray(H(I(x)), dtype=float) / np.asarray(H(x), dtype=float)

    return h_tilde
