"""Path samplers: exact transitions, stable increments, Euler steps.

Everything here is vectorized over a leading path axis; single-draw
entry points are thin wrappers.  Samplers consume numpy Generators
obtained from RngStream, and the number of draws per step does not
depend on which paths have died, so chunked runs are reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, InvalidArgumentError
from .rng import RngStream
from .state import Path, PathBatch, State, TimeGrid, VECTOR


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise InvalidArgumentError("rng must be an RngStream or numpy Generator")


# ---------------------------------------------------------------------------
# exact BESQ transition

def besq_transition(gen: np.random.Generator, delta, x, t):
    """Exact BESQ(delta) value at time t started from x (arrays ok).

    The transition law is t * chi'^2_delta(x / t); for delta >= 1 we use
    the decomposition chi'^2_delta(l) = chi^2_{delta-1} + (Z + sqrt(l))^2,
    otherwise the Poisson mixture of central chi-squares.
    """
    delta = np.asarray(delta, dtype=float)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(delta.shape, x.shape, t.shape)
    delta, x, t = (np.broadcast_to(a, shape) for a in (delta, x, t))
    out = np.empty(shape)

    ge1 = delta >= 1.0
    if ge1.any():
        z = gen.standard_normal(shape)
        dfm1 = np.where(ge1 & (delta > 1.0), delta - 1.0, 1.0)
        chi = gen.chisquare(dfm1, shape)
        chi = np.where(ge1 & (delta > 1.0), chi, 0.0)
        val = t * (chi + (z + np.sqrt(np.maximum(x, 0.0) / t)) ** 2)
        out[ge1] = val[ge1]
    lt1 = ~ge1
    if lt1.any():
        k = gen.poisson(np.where(lt1, x / (2.0 * t), 0.0))
        df = delta + 2.0 * k
        val = t * gen.chisquare(np.where(lt1, df, 1.0), shape)
        out[lt1] = val[lt1]
    return out


def sample_besq_exact(delta: float, x: float, t: float, rng, size=None):
    """Draw BESQ(delta) at time t from x; scalar by default."""
    if not np.isfinite(delta) or delta <= 0:
        raise InvalidArgumentError("delta must be positive")
    if x < 0:
        raise InvalidArgumentError("x must be nonnegative")
    if not np.isfinite(t) or t <= 0:
        raise InvalidArgumentError("t must be positive")
    gen = _as_generator(rng)
    if size is None:
        return float(besq_transition(gen, delta, x, t))
    return besq_transition(gen, np.full(size, delta), np.full(size, x), t)


# ---------------------------------------------------------------------------
# one-sided stable subordinator and isotropic stable increments

def one_sided_stable(gen: np.random.Generator, a: float, size):
    """Positive stable draw S with E exp(-l S) = exp(-l**a), 0 < a < 1.

    Kanter's representation: S = A(theta)^{(1-a)/a} W^{-(1-a)/a} with
    theta ~ U(0, pi), W ~ Exp(1).
    """
    if not 0.0 < a < 1.0:
        raise InvalidArgumentError("stable index a must lie in (0, 1)")
    theta = gen.uniform(0.0, np.pi, size)
    w = gen.standard_exponential(size)
    s = np.sin(a * theta) * np.sin(theta) ** (-1.0 / a)
    s *= (np.sin((1.0 - a) * theta) / w) ** ((1.0 - a) / a)
    return s


def sample_stable_increment(alpha: float, dt: float, n: int, rng, size=None):
    """Isotropic alpha-stable increment over dt in R^n.

    Normalized so alpha = 2 is standard Brownian motion (variance dt per
    coordinate): X = sqrt(S) Z with S an (alpha/2)-subordinator increment,
    E exp(-l S_dt) = exp(-dt l^{alpha/2}).
    """
    if not (np.isfinite(alpha) and 0.0 < alpha <= 2.0):
        raise InvalidArgumentError("alpha must lie in (0, 2]")
    if not np.isfinite(dt) or dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    if n < 1:
        raise InvalidArgumentError("n must be a positive integer")
    gen = _as_generator(rng)
    m = 1 if size is None else int(size)
    z = gen.standard_normal((m, n))
    if alpha == 2.0:
        incr = np.sqrt(dt) * z
    else:
        s = dt ** (2.0 / alpha) * one_sided_stable(gen, alpha / 2.0, m)
        incr = np.sqrt(s)[:, None] * z
    return incr[0] if size is None else incr


# ---------------------------------------------------------------------------
# Euler step

def euler_step(drift, dispersion, s: State, dt: float, noise) -> State:
    """One Euler-Maruyama step: s + b(s) dt + sigma(s) . noise sqrt(dt).

    Diagonal dispersion may return a (d,) array; matrix dispersion a (d, d)
    array.  Domain projection is the caller's job.
    """
    if s.is_cemetery:
        raise InvalidArgumentError("cannot step from Cemetery")
    x = s.data
    noise = np.asarray(noise, dtype=float)
    b = np.asarray(drift(x), dtype=float)
    sig = np.asarray(dispersion(x), dtype=float)
    if sig.ndim <= 1:
        incr = sig * noise
    else:
        incr = sig @ noise
    return State(s.kind, x + b * dt + incr * np.sqrt(dt), s.dim_info)


# ---------------------------------------------------------------------------
# path driver

def sample_paths(family, x0, grid: TimeGrid, rng, n_paths: int) -> PathBatch:
    """Simulate n_paths trajectories of a family on a grid.

    Absorption is checked at grid points; dead paths keep their last
    value in the numeric array but are flagged in the alive mask.
    """
    x0data = _state_data(family, x0)
    family.validate_state(x0data)
    gen = _as_generator(rng)
    B, d, T = int(n_paths), family.n, len(grid)
    x = np.broadcast_to(x0data, (B, d)).copy()
    stepper = family.sampler.make_stepper(x, gen)
    values = np.empty((B, T, d))
    alive = np.empty((B, T), dtype=bool)
    values[:, 0] = x
    alive[:, 0] = True
    a = np.ones(B, dtype=bool)
    t = grid.t
    for k in range(1, T):
        xn = stepper(x, t[k] - t[k - 1])
        a = a & ~family.absorbed(xn)
        x = np.where(a[:, None], xn, x)
        values[:, k] = x
        alive[:, k] = a
    return PathBatch(grid, values, alive, family.kind, family.dim_info)


def sample_path(family, x0, grid: TimeGrid, rng) -> Path:
    """Single trajectory; see sample_paths."""
    return sample_paths(family, x0, grid, rng, 1).path(0)


def _state_data(family, x0) -> np.ndarray:
    if isinstance(x0, State):
        if x0.is_cemetery:
            raise DomainError("cannot start a path at Cemetery")
        if x0.kind != family.kind:
            raise DomainError("state kind does not match the family")
        return np.asarray(x0.data, dtype=float)
    arr = np.atleast_1d(np.asarray(x0, dtype=float))
    if arr.shape != (family.n,):
        raise DomainError(
            "x0 must have %d entries for %s" % (family.n, family.name))
    return arr
