"""Kelvin transform machinery: the transform and its dual, finite
difference generator residuals, exit-law identities on regions, and
potential-kernel quadrature with algebraic tail extrapolation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate

from .errors import InvalidArgumentError, TailError, UnsupportedError
from .families import Characteristics, GeneratorSpec, as_state_data, random_states
from .state import TimeGrid, make_grid
from .statcheck import TestReport, _as_stream
from .transforms import WeightedSample

RESIDUAL_TOL_GENERATOR = 1e-6


# ---------------------------------------------------------------------------
# regions

@dataclass(frozen=True)
class RegionSpec:
    """Open region given by a batched membership predicate.

    meta keeps the structured description (bounds, radial choice) when
    one exists, so involuted images of radial annuli stay in closed
    form instead of going through predicate composition.
    """

    label: str
    contains: Callable            # (B, d) -> bool (B,)
    kind: str = "generic"
    meta: dict = field(default_factory=dict)

    def __contains__(self, x) -> bool:
        xd = np.asarray(x, dtype=float)
        return bool(np.asarray(self.contains(xd[None, :]))[0])


def _region_radial(family: Characteristics, which: str) -> Callable:
    if which == "rho":
        if family.rho is None:
            # the one registered family without rho is already radial
            return lambda x: np.asarray(x, dtype=float)[..., 0]
        rho = family.rho
        expo = (family.alpha or 2.0) / 2.0
        return lambda x: np.maximum(np.asarray(rho(x), dtype=float), 0.0) ** expo
    if which == "norm":
        return lambda x: np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    raise InvalidArgumentError("radial: must be 'rho' or 'norm'")


def radial_annulus(family: Characteristics, a: float, b: float,
                   radial: str = "rho") -> RegionSpec:
    """Open annulus a < radial(x) < b.

    radial='rho' uses rho^(alpha/2), which the involution maps to its
    reciprocal, so the involuted annulus is again an annulus; 'norm' is
    the Euclidean norm of the packed state.
    """
    if not (0.0 < a < b):
        raise InvalidArgumentError("annulus needs 0 < a < b")
    rfun = _region_radial(family, radial)

    def contains(x):
        r = rfun(x)
        return (r > a) & (r < b)

    return RegionSpec(label="annulus(%g, %g; %s)" % (a, b, radial),
                      contains=contains, kind="radial_annulus",
                      meta={"a": a, "b": b, "radial": radial})


def box_region(lo, hi) -> RegionSpec:
    """Open axis-aligned box lo_i < x_i < hi_i."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or not (lo < hi).all():
        raise InvalidArgumentError("box needs lo < hi componentwise")

    def contains(x):
        return ((x > lo) & (x < hi)).all(axis=-1)

    return RegionSpec(label="box(%s, %s)" % (lo.tolist(), hi.tolist()),
                      contains=contains, kind="box",
                      meta={"lo": lo, "hi": hi})


def half_order_region(level: float, coord: int = -1) -> RegionSpec:
    """Half space x[coord] < level, for ordered particle states."""
    level = float(level)

    def contains(x):
        return x[..., coord] < level

    return RegionSpec(label="half(x[%d] < %g)" % (coord, level),
                      contains=contains, kind="half_order",
                      meta={"level": level, "coord": coord})


def involuted_region(family: Characteristics, region: RegionSpec) -> RegionSpec:
    """Image I(D); y lies in I(D) iff I(y) lies in D, since I is involutive.

    Annuli in the rho radial invert in closed form to annuli with
    reciprocal bounds; everything else composes the predicate with I.
    """
    if region.kind == "radial_annulus" and region.meta.get("radial") == "rho":
        a, b = region.meta["a"], region.meta["b"]
        return radial_annulus(family, 1.0 / b, 1.0 / a, radial="rho")
    inv = family.involution

    def contains(y):
        return region.contains(inv(np.asarray(y, dtype=float)))

    return RegionSpec(label="I(%s)" % region.label, contains=contains,
                      kind="involuted", meta={"base": region.label})


# ---------------------------------------------------------------------------
# the transform and its dual

def kelvin_transform(family: Characteristics, f: Callable) -> Callable:
    """K f = h . (f o I), batched over states."""
    h = family.excessive_h
    inv = family.involution

    def kf(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(h(x), dtype=float) * np.asarray(f(inv(x)), dtype=float)

    return kf


def dual_kelvin(mu: WeightedSample, family: Characteristics) -> WeightedSample:
    """Image of the measure h.mu under I.

    Pairing identity: sum of Kf at mu's states with mu's weights equals
    the sum of f at the returned states with the returned weights.
    """
    hv = np.asarray(family.excessive_h(mu.states), dtype=float)
    if not np.isfinite(hv).all() or (hv < 0).any():
        raise InvalidArgumentError("h must be finite and nonnegative on the sample")
    return WeightedSample(states=family.involution(mu.states),
                          weights=mu.weights * hv, kind=mu.kind,
                          origin={"transform": "dual_kelvin", **mu.origin})


# ---------------------------------------------------------------------------
# finite-difference generator residual

def _fd_generator_once(spec: GeneratorSpec, f: Callable, x: np.ndarray,
                       h: float) -> float:
    """L f(x) by central differences at one step size, one batched call."""
    d = x.size
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    pts = [x]
    eye = np.eye(d)
    for i in range(d):
        pts.append(x + h * eye[i])
        pts.append(x - h * eye[i])
    for i, j in pairs:
        pts.append(x + h * (eye[i] + eye[j]))
        pts.append(x + h * (eye[i] - eye[j]))
        pts.append(x - h * (eye[i] - eye[j]))
        pts.append(x - h * (eye[i] + eye[j]))
    vals = np.asarray(f(np.array(pts)), dtype=float)
    f0 = vals[0]
    fp = vals[1:1 + 2 * d:2]
    fm = vals[2:2 + 2 * d:2]
    grad = (fp - fm) / (2.0 * h)
    diag = (fp - 2.0 * f0 + fm) / (h * h)
    b = np.asarray(spec.drift(x), dtype=float)
    a = np.asarray(spec.diffusion(x), dtype=float)
    out = float(b @ grad + 0.5 * float(a.diagonal() @ diag))
    base = 1 + 2 * d
    for k, (i, j) in enumerate(pairs):
        q = vals[base + 4 * k: base + 4 * k + 4]
        mixed = (q[0] - q[1] - q[2] + q[3]) / (4.0 * h * h)
        out += float(a[i, j]) * float(mixed)
    return out


def apply_generator(target: Union[Characteristics, GeneratorSpec], f: Callable,
                    x, step: Optional[float] = None) -> float:
    """L f(x) = b . grad f + tr(a hess f)/2, Richardson-extrapolated.

    Central differences at step and step/2 combine as (4 L_half - L)/3;
    the default step scales with the point. Jump families have no local
    generator and raise Unsupported.
    """
    spec = target.generator if isinstance(target, Characteristics) else target
    if spec is None:
        raise UnsupportedError("family has no local generator; the operator "
                               "of a jump family is nonlocal")
    xd = np.atleast_1d(np.asarray(x, dtype=float))
    if step is None:
        # large enough that roundoff eps |f| / step^2 stays below the
        # Richardson truncation term at interior points
        step = 3e-4 * (1.0 + float(np.linalg.norm(xd)))
    coarse = _fd_generator_once(spec, f, xd, step)
    fine = _fd_generator_once(spec, f, xd, step / 2.0)
    return (4.0 * fine - coarse) / 3.0


def generator_residual(target: Union[Characteristics, GeneratorSpec],
                       f: Callable, x, step: Optional[float] = None) -> float:
    """Harmonicity defect |L f(x)|."""
    return abs(apply_generator(target, f, x, step=step))


def _dictionary_points(family: Characteristics, k: int, gen) -> np.ndarray:
    """Interior states kept away from the involution pole, where the
    finite-difference stencil is well conditioned."""
    rad = _region_radial(family, "rho")
    rows = []
    got = 0
    while got < k:
        x = random_states(family, 4 * k, gen)
        keep = x[(rad(x) > 0.5) & (rad(x) < 3.0)]
        rows.append(keep)
        got += keep.shape[0]
    return np.concatenate(rows, axis=0)[:k]


def harmonic_dictionary_check(family: Characteristics, n_points: int = 32,
                              seed=0,
                              threshold: float = RESIDUAL_TOL_GENERATOR) -> list:
    """One report per dictionary entry f: worst |L(Kf)| over sampled states."""
    if not family.harmonic_dictionary:
        raise UnsupportedError("%s registers no harmonic dictionary" % family.name)
    stream = _as_stream(seed)
    pts = _dictionary_points(family, int(n_points), stream.child(0).generator())
    reports = []
    for label, f in family.harmonic_dictionary:
        kf = kelvin_transform(family, f)
        worst = max(generator_residual(family, kf, p) for p in pts)
        reports.append(TestReport(
            name="generator-kelvin[%s] K %s" % (family.name, label),
            statistic=float(worst), threshold=threshold,
            passed=bool(worst <= threshold), mode="residual",
            n=int(n_points), residual=float(worst), seed=stream.seed))
    return reports


# ---------------------------------------------------------------------------
# exit sampling and the exit-law identity

def exit_sample(family: Characteristics, x, D: RegionSpec, grid: TimeGrid,
                rng, N: int, chunk: int = 32768) -> WeightedSample:
    """Empirical exit law from D: N first-grid-points outside D.

    Paths that die inside D or are still inside when the grid ends get
    weight zero; exit times are recorded at grid resolution in
    origin["tau"].  A coverage warning fires when more than 1% of paths
    exhaust the grid without exiting.
    """
    x0d = as_state_data(family, x)
    family.validate_state(x0d)
    if x0d not in D:
        raise InvalidArgumentError("start point must lie inside the region")
    stream = _as_stream(rng)
    gen = stream.generator()
    N = int(N)
    t = grid.t
    states = np.empty((N, family.n))
    weights = np.zeros(N)
    taus = np.full(N, np.nan)
    unresolved = 0
    done = 0
    while done < N:
        B = min(int(chunk), N - done)
        xb = np.broadcast_to(x0d, (B, family.n)).copy()
        stepper = family.sampler.make_stepper(xb, gen)
        alive = np.ones(B, dtype=bool)
        st = np.broadcast_to(x0d, (B, family.n)).copy()
        wt = np.zeros(B)
        tau = np.full(B, np.nan)
        for k in range(1, t.size):
            if not alive.any():
                break
            xn = stepper(xb, t[k] - t[k - 1])
            dead = np.asarray(family.absorbed(xn), dtype=bool)
            outside = ~np.asarray(D.contains(xn), dtype=bool) & ~dead
            exits = alive & outside
            if exits.any():
                st[exits] = xn[exits]
                wt[exits] = 1.0
                tau[exits] = t[k]
            dies = alive & dead
            if dies.any():
                st[dies] = xn[dies]
            alive = alive & ~dead & ~outside
            xb = np.where(alive[:, None], xn, xb)
        st[alive] = xb[alive]
        unresolved += int(alive.sum())
        states[done:done + B] = st
        weights[done:done + B] = wt
        taus[done:done + B] = tau
        done += B
    frac = unresolved / float(N)
    if frac > 0.01:
        warnings.warn("grid too short for %.1f%% of exit paths; their "
                      "weight is zero" % (100.0 * frac), RuntimeWarning)
    return WeightedSample(states=states, weights=weights, kind=family.kind,
                          origin={"tau": taus, "unresolved_fraction": frac,
                                  "region": D.label, "t_end": float(t[-1])})


def _exit_mean(family: Characteristics, g: Callable, x0d: np.ndarray,
               D: RegionSpec, grid: TimeGrid, rng, N: int):
    mu = exit_sample(family, x0d, D, grid, rng, N)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(g(mu.states), dtype=float)
    vals = np.where(mu.weights > 0, vals, 0.0)
    if not np.isfinite(vals).all():
        raise InvalidArgumentError("test function must be finite on exit states")
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(N))
    return mean, se, mu.origin["unresolved_fraction"]


def exit_identity_check(family: Characteristics, f: Callable, x,
                        D: RegionSpec, grid: TimeGrid, rng,
                        N: int) -> TestReport:
    """E_x[Kf at exit of I(D)] against h(x) E_{I(x)}[f at exit of D].

    Both sides are Monte Carlo means over N paths; the pass threshold is
    3 pooled standard errors plus a discretization allowance measured by
    halving dt once, or a 2% relative gap, whichever is larger.
    """
    stream = _as_stream(rng)
    x0d = as_state_data(family, x)
    family.validate_state(x0d)
    ID = involuted_region(family, D)
    kf = kelvin_transform(family, f)
    hx = float(np.asarray(family.excessive_h(x0d[None, :]), dtype=float)[0])
    y0d = np.asarray(family.involution(x0d[None, :]), dtype=float)[0]

    def both(g, sub):
        m_l, se_l, bad_l = _exit_mean(family, kf, x0d, ID, g, stream.child(sub), N)
        m_r, se_r, bad_r = _exit_mean(family, f, y0d, D, g, stream.child(sub + 1), N)
        return m_l, se_l, bad_l, hx * m_r, abs(hx) * se_r, bad_r

    m_l, se_l, bad_l, m_r, se_r, bad_r = both(grid, 0)
    fine = make_grid(float(grid.t[-1]), float(grid.t[1] - grid.t[0]) / 2.0)
    m_l2, _, _, m_r2, _, _ = both(fine, 2)
    gap = abs(m_l - m_r)
    allowance = abs(gap - abs(m_l2 - m_r2))
    se_pool = float(np.hypot(se_l, se_r))
    scale = max(abs(m_l), abs(m_r), 1e-12)
    threshold = max(3.0 * se_pool + allowance, 0.02 * scale)
    return TestReport(
        name="kelvin-exit[%s] %s" % (family.name, D.label),
        statistic=gap / scale, threshold=threshold, passed=bool(gap <= threshold),
        mode="residual", n=N, residual=gap,
        dt=float(grid.t[1] - grid.t[0]), seed=stream.seed,
        details={"lhs": m_l, "rhs": m_r, "se_pool": se_pool,
                 "allowance": allowance, "relative_gap": gap / scale,
                 "unresolved_lhs": bad_l, "unresolved_rhs": bad_r})


# ---------------------------------------------------------------------------
# potential kernels

def potential_kernel(family: Characteristics, x, y, t_max: float = 64.0,
                     rtol: float = 1e-2) -> float:
    """U(x, y): time integral of the transition density.

    Quadrature runs to t_max with a substitution concentrating nodes at
    small times; beyond t_max the integrand is extrapolated by fitting
    c t^-p on its last decade.  A fitted decay at or below t^-1.02
    raises TailError, as does a tail share above rtol of the value.
    """
    if family.density is None:
        raise UnsupportedError("family has no transition density in closed form")
    xd = as_state_data(family, x)
    yd = as_state_data(family, y)
    family.validate_state(xd)
    family.validate_state(yd)
    if family.alpha is not None and family.beta is not None:
        expo = (family.n + family.beta) * family.alpha / 2.0
        if expo < 1.0 - 1e-9:
            raise UnsupportedError("transition density tail t^-%g is not "
                                   "integrable" % expo)
    if not (t_max > 2.0):
        raise InvalidArgumentError("t_max must exceed 2")
    dens = family.density

    def g(t):
        return float(dens(t, xd, yd))

    with warnings.catch_warnings():
        # accuracy is policed explicitly below (tail fit, rtol share,
        # finiteness); a divergent integrand must reach those checks
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        head, _ = integrate.quad(lambda u: 2.0 * u * g(u * u), 0.0, 1.0, limit=200)
        body, _ = integrate.quad(g, 1.0, t_max, limit=200)
    ts = np.geomspace(t_max / 10.0, t_max, 12)
    gs = np.array([g(tv) for tv in ts])
    if (gs <= 0).any():
        # the tail underflowed; nothing left to extrapolate
        return float(head + body)
    coef = np.polynomial.polynomial.polyfit(np.log(ts), np.log(gs), 1)
    p_hat = -float(coef[1])
    if p_hat <= 1.02:
        raise TailError("integrand tail decays like t^-%.3f; the potential "
                        "does not converge" % p_hat)
    c = float(np.exp(coef[0]))
    tail = c * t_max ** (1.0 - p_hat) / (p_hat - 1.0)
    total = head + body + tail
    if not np.isfinite(total):
        raise TailError("quadrature did not converge")
    if tail > rtol * max(abs(total), 1e-300):
        raise TailError("tail share %.2e exceeds rtol; increase t_max" % tail)
    return float(total)


def potential_relation_residual(family: Characteristics, x, y,
                                t_max: float = 64.0) -> float:
    """Relative defect of the involuted-potential identity.

    The potential of the involuted process at (x, y), computed as
    |Jac I(y)| U(I(x), I(y)), must equal V(y) h(y)/h(x) U(x, y) with
    V(y) = |Jac I(y)| rho(y)^(n alpha - 2).
    """
    if family.jacobian_I is None or family.rho is None or family.alpha is None:
        raise UnsupportedError("family lacks the involuted-potential pieces")
    xd = as_state_data(family, x)
    yd = as_state_data(family, y)
    jac_y = abs(float(np.asarray(family.jacobian_I(yd[None, :]), dtype=float)[0]))
    rho_y = float(np.asarray(family.rho(yd[None, :]), dtype=float)[0])
    h = family.excessive_h
    hx = float(np.asarray(h(xd[None, :]), dtype=float)[0])
    hy = float(np.asarray(h(yd[None, :]), dtype=float)[0])
    xi = np.asarray(family.involution(xd[None, :]), dtype=float)[0]
    yi = np.asarray(family.involution(yd[None, :]), dtype=float)[0]
    lhs = jac_y * potential_kernel(family, xi, yi, t_max=t_max)
    v_y = jac_y * rho_y ** (family.n * family.alpha - 2.0)
    rhs = v_y * (hy / hx) * potential_kernel(family, xd, yd, t_max=t_max)
    return abs(lhs - rhs) / max(abs(rhs), 1e-300)


# ---------------------------------------------------------------------------
# ball-model hyperbolic space: the known non-example

def hyperbolic_ball_generator(n: int = 3) -> GeneratorSpec:
    """Half the Laplace-Beltrami operator of the ball model.

    The metric is conformal with factor 2/(1 - |x|^2), which gives
    diffusion ((1 - |x|^2)^2/4) Id and drift (n-2)(1 - |x|^2) x / 4.
    """

    def drift(x):
        s2 = float(np.dot(x, x))
        return (n - 2) * (1.0 - s2) * x / 4.0

    def diffusion(x):
        s2 = float(np.dot(x, x))
        return ((1.0 - s2) ** 2 / 4.0) * np.eye(x.size)

    return GeneratorSpec(drift, diffusion)


def hyperbolic_ball_poisson(pole) -> Callable:
    """Boundary Poisson kernel of the 3-dimensional ball model.

    Harmonic for the ball-model operator and genuinely angular, unlike
    purely radial harmonic functions.
    """
    pole = np.asarray(pole, dtype=float)
    if pole.shape != (3,) or not np.isclose(np.linalg.norm(pole), 1.0):
        raise InvalidArgumentError("pole must be a unit 3-vector")

    def f(x):
        x = np.asarray(x, dtype=float)
        s2 = np.sum(x * x, axis=-1)
        d2 = np.sum((x - pole) ** 2, axis=-1)
        return ((1.0 - s2) / d2) ** 2

    return f


def hyperbolic_ball_candidate_kelvin(f: Callable) -> Callable:
    """Radial-involution candidate transform on the 3-dimensional ball.

    Extends the radial involution along rays and multiplies by the
    radial excessive function coth(r) - 1, r the distance to the
    center.  For angular-dependent harmonic f the image fails to be
    harmonic, so a generator residual well above zero at a generic
    point is the expected outcome; the construction exists to exercise
    that falsification path.
    """

    def kf(x):
        x = np.asarray(x, dtype=float)
        nr = np.linalg.norm(x, axis=-1)
        r = 2.0 * np.arctanh(nr)
        h0 = 1.0 / np.tanh(r) - 1.0
        ri = np.arctanh(np.exp(-2.0 * r))
        scale = np.tanh(ri / 2.0) / nr
        return h0 * np.asarray(f(x * scale[..., None]), dtype=float)

    return kf
