"""Weighted two-sample statistics and the verification pipelines for the
inversion identities: equality in law of the involuted time-changed path
and the h-transform, excessivity, radial reduction, and conjugation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as _st

from .errors import InvalidArgumentError, UnsupportedError
from .families import (Characteristics, as_state_data, random_states,
                       self_duality_residual)
from .rng import RngStream
from .sampling import _as_generator, besq_transition
from .state import make_grid
from .transforms import WeightedSample, _make_doob_stepper

DEFAULT_THRESHOLD = 0.01
RESIDUAL_TOL_CHARACTERISTICS = 1e-10


@dataclass(frozen=True)
class TestReport:
    """One verification outcome; exactly one of p_value / residual is set.

    mode declares the pass rule: "p_value" passes iff p_value > threshold,
    "residual" iff residual < threshold, "combined" requires both (the
    second threshold lives in details), "flagged" never passes.
    """

    name: str
    statistic: float
    threshold: float
    passed: bool
    mode: str
    n: int
    p_value: Optional[float] = None
    residual: Optional[float] = None
    dt: Optional[float] = None
    seed: Optional[int] = None
    runtime_s: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def p_or_residual(self) -> float:
        v = self.p_value if self.p_value is not None else self.residual
        return float("nan") if v is None else float(v)


def _as_stream(seed) -> RngStream:
    if isinstance(seed, RngStream):
        return seed
    if seed is None:
        raise InvalidArgumentError("seed is mandatory")
    return RngStream(int(seed))


# ---------------------------------------------------------------------------
# weighted two-sample statistics

def _ks_prepare(a: WeightedSample, b: WeightedSample):
    xa = np.asarray(a.states, dtype=float).reshape(a.weights.size, -1)
    xb = np.asarray(b.states, dtype=float).reshape(b.weights.size, -1)
    if xa.shape[1] != 1 or xb.shape[1] != 1:
        raise InvalidArgumentError("ks_statistic needs 1-d projections")
    wa, wb = a.weights, b.weights
    if wa.sum() <= 0 or wb.sum() <= 0:
        raise InvalidArgumentError("both samples need positive total mass")
    ma, mb = wa > 0, wb > 0
    values = np.concatenate([xa[ma, 0], xb[mb, 0]])
    weights = np.concatenate([wa[ma], wb[mb]])
    labels = np.concatenate([np.ones(ma.sum(), bool), np.zeros(mb.sum(), bool)])
    order = np.argsort(values, kind="stable")
    values, weights, labels = values[order], weights[order], labels[order]
    # sup over the weighted CDF difference is attained at tie-group ends
    ends = np.ones(values.size, bool)
    ends[:-1] = values[1:] != values[:-1]
    return values, weights, labels, ends


def _ks_stat_rows(weights, labels_rows, ends):
    """KS statistics for a (P, n) block of label assignments."""
    w1 = weights[None, :] * labels_rows
    w2 = weights[None, :] - w1
    c1 = np.cumsum(w1, axis=1)
    c2 = np.cumsum(w2, axis=1)
    tot1 = c1[:, -1:]
    tot2 = c2[:, -1:]
    diff = np.abs(c1 / tot1 - c2 / tot2)
    return diff[:, ends].max(axis=1)


def ks_statistic(a: WeightedSample, b: WeightedSample, rng=None,
                 n_perm: int = 999) -> tuple:
    """Weighted two-sample Kolmogorov-Smirnov with permutation p-value.

    Permutations shuffle the pooled sample labels while each weight stays
    attached to its state.
    """
    values, weights, labels, ends = _ks_prepare(a, b)
    obs = float(_ks_stat_rows(weights, labels[None, :].astype(float), ends)[0])
    gen = _as_generator(rng if rng is not None else RngStream(0))
    n = values.size
    chunk = max(4, int(5e6 / max(n, 1)))
    count = 0
    done = 0
    base = labels.astype(float)
    while done < n_perm:
        p = min(chunk, n_perm - done)
        rows = np.tile(base, (p, 1))
        rows = gen.permuted(rows, axis=1)
        d = _ks_stat_rows(weights, rows, ends)
        count += int((d >= obs - 1e-12).sum())
        done += p
    pval = (1.0 + count) / (n_perm + 1.0)
    return obs, pval


def _resample_uniform(states, weights, gen, cap):
    keep = weights > 0
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise InvalidArgumentError("sample has zero mass")
    w = weights[idx]
    if np.allclose(w, w[0]):
        # uniform weights need no resampling; duplication from sampling
        # with replacement would break permutation exchangeability
        if idx.size <= cap:
            return states[idx]
        return states[gen.choice(idx, size=int(cap), replace=False)]
    # weight-proportional resampling, capped at the effective sample size
    # so that duplicates stay rare in the pooled permutation sample
    ess = float(w.sum()) ** 2 / float((w * w).sum())
    size = int(min(cap, idx.size, max(ess, 8.0)))
    p = w / w.sum()
    take = gen.choice(idx, size=size, replace=True, p=p)
    return states[take]


def energy_distance(a: WeightedSample, b: WeightedSample, boot: int = 499,
                    rng=None, metric: str = "euclidean",
                    max_points: int = 2048) -> tuple:
    """Weighted multivariate energy distance with permutation p-value.

    Sides are reduced to uniform-weight samples by weight-proportional
    resampling (capped at max_points), which keeps the permutation null
    exchangeable; metric "bounded" uses min(Euclidean, 1) for
    heavy-tailed data.
    """
    gen = _as_generator(rng if rng is not None else RngStream(0))
    xa = np.asarray(a.states, dtype=float).reshape(a.weights.size, -1)
    xb = np.asarray(b.states, dtype=float).reshape(b.weights.size, -1)
    sa = _resample_uniform(xa, a.weights, gen, max_points)
    sb = _resample_uniform(xb, b.weights, gen, max_points)
    n1, n2 = sa.shape[0], sb.shape[0]
    pool = np.concatenate([sa, sb], axis=0)
    sq = (pool * pool).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pool @ pool.T)
    D = np.sqrt(np.maximum(d2, 0.0))
    if metric == "bounded":
        np.minimum(D, 1.0, out=D)
    elif metric != "euclidean":
        raise InvalidArgumentError("metric must be 'euclidean' or 'bounded'")
    n = n1 + n2

    def stat_for(z_cols):
        # z is the indicator of side a; columns are label assignments
        Dz = D @ z_cols                      # (n, P)
        s_az = (z_cols * Dz).sum(axis=0)     # sum_{i,j in a} D_ij
        col = D.sum(axis=0) @ z_cols         # sum_{i, j in a} D_ij over all i
        s_ab = col - s_az
        s_bb = D.sum() - 2.0 * col + s_az
        return 2.0 * s_ab / (n1 * n2) - s_az / (n1 * n1) - s_bb / (n2 * n2)

    z_obs = np.zeros((n, 1))
    z_obs[:n1, 0] = 1.0
    obs = float(stat_for(z_obs)[0])
    count = 0
    done = 0
    chunk = max(8, int(2e8 / (n * n)))
    base = z_obs[:, 0]
    while done < boot:
        p = min(chunk, boot - done)
        Z = np.tile(base, (p, 1))
        Z = gen.permuted(Z, axis=1).T
        d = stat_for(Z)
        count += int((d >= obs - 1e-12).sum())
        done += p
    pval = (1.0 + count) / (boot + 1.0)
    return obs, pval


# ---------------------------------------------------------------------------
# streaming path engines (no full-path storage)

_EXTEND_DT_CAP = {"exact": 0.05, "jump": 0.25, "euler": 0.02}
_EXTEND_T_CAP = {"exact": 512.0, "jump": 512.0, "euler": 64.0}


def _radial_fn(family: Characteristics) -> Callable:
    """Radial coordinate whose law is a unit-diffusion Bessel."""
    if family.rho is not None:
        rho = family.rho

        # euler and drift-corrected steps can leave transient negative or
        # nan coordinates on rows the absorption mask is about to retire
        def radial(x):
            with np.errstate(invalid="ignore", divide="ignore"):
                rv = np.asarray(rho(x), dtype=float)
            return np.sqrt(np.maximum(rv, 0.0))

        return radial
    return lambda x: np.asarray(x, dtype=float)[..., 0]


def _dual_barrier(family: Characteristics, x0d: np.ndarray, R: float) -> float:
    """Radial level b with {radial(X) < R} = {radial(I(X)) > b}."""
    radial = _radial_fn(family)
    rescale = _radial_rescale(family, radial)
    p = rescale(x0d[None, :], np.array([R]))
    return float(radial(family.involution(p))[0])


def _radial_rescale(family: Characteristics, radial: Callable) -> Callable:
    """Map (state, r_new) to the state rescaled to radial value r_new.

    The involution form I = x rho^-alpha forces rho to be homogeneous of
    degree 2/alpha, so scaling a state by (r_new / radial(x))^alpha moves
    its radial to r_new while staying in the state space (the spaces are
    cones).  The one family without rho has the radial as its only
    coordinate.
    """
    if family.rho is None:
        return lambda m, rnew: rnew[..., None]
    a = float(family.alpha)

    def rescale(m, rnew):
        r0 = radial(m)
        c = np.where(r0 > 0, rnew / np.where(r0 > 0, r0, 1.0), 1.0) ** a
        return m * c[..., None]

    return rescale


def _skeleton_crossing(family: Characteristics, radial: Callable,
                       rescale: Callable, xl, xr, rl, rr, Al,
                       targets: Sequence[float], dt_span: float, disp, gen,
                       depth: int = 8, chunk: int = 2048):
    """Refined within-step integral of 1/v and states at level crossings.

    Fills in the radial path at dyadic times with bridge draws (Gaussian
    with variance span/4: the radial is a unit-diffusion Bessel for every
    diffusion family) and integrates 1/v along that skeleton.  A chord or
    single-point rule is not enough here: crossings cluster on within-step
    dips of the radial, and any estimate whose dispersion differs from the
    true bridge functional biases where the first crossing lands.  The
    skeleton is a genuine path sample, so both are right up to the
    sub-step resolution dt_span/2**depth.

    Returns the refined increments (C,) and, per target, a row mask over
    the input together with the crossing states for the masked rows.
    """
    C = xl.shape[0]
    M = 1 << depth
    inc_out = np.empty(C)
    masks = [np.zeros(C, dtype=bool) for _ in targets]
    states = [[] for _ in targets]
    thetas = np.linspace(0.0, 1.0, M + 1)
    for lo in range(0, C, chunk):
        sl = slice(lo, min(lo + chunk, C))
        rg = np.empty((xl[sl].shape[0], M + 1))
        rg[:, 0] = rl[sl]
        rg[:, M] = rr[sl]
        stepw, span = M, dt_span
        while stepw > 1:
            a = rg[:, 0:M + 1 - stepw:stepw]
            b = rg[:, stepw::stepw]
            draw = (0.5 * (a + b)
                    + np.sqrt(0.25 * span) * gen.standard_normal(a.shape))
            rg[:, stepw // 2::stepw] = np.abs(draw)
            stepw //= 2
            span *= 0.5
        xc = xl[sl, None, :] + thetas[None, :, None] * (xr[sl, None, :]
                                                        - xl[sl, None, :])
        xs = rescale(xc, rg)
        f = np.asarray(family.speed_v(xs), dtype=float)
        f = np.where(np.isfinite(f) & (f > 0), 1.0 / np.where(f > 0, f, 1.0),
                     0.0)
        sub = dt_span / M
        da = sub * 0.5 * (f[:, :-1] + f[:, 1:])
        acum = np.cumsum(da, axis=1)
        inc_out[sl] = acum[:, -1]
        a0 = Al[sl]
        for k, s in enumerate(targets):
            need = s - a0
            m_k = (need > 0) & (acum[:, -1] >= need)
            if not m_k.any():
                continue
            rows = np.nonzero(m_k)[0]
            j = (acum[rows] < need[rows, None]).sum(axis=1)
            j = np.minimum(j, M - 1)
            before = np.where(j > 0, acum[rows, np.maximum(j - 1, 0)], 0.0)
            dj = da[rows, j]
            u = np.clip((need[rows] - before) / np.where(dj > 0, dj, np.inf),
                        0.0, 1.0)
            xa = xs[rows, j]
            xb = xs[rows, j + 1]
            pt = xa + u[:, None] * (xb - xa)
            ra = rg[rows, j]
            rstar = np.abs(ra + u * (rg[rows, j + 1] - ra)
                           + np.sqrt(np.clip(u * (1.0 - u), 0.0, None) * sub)
                           * gen.standard_normal(rows.size))
            if disp is not None:
                # bridge spread for the non-radial components at the
                # overall interior time; the rescale below squashes its
                # radial part
                th = (j + u) / M
                sd = np.sqrt(np.clip(th * (1.0 - th), 0.0, None)
                             * dt_span)[:, None] * disp(pt)
                cand = pt + sd * gen.standard_normal(pt.shape)
                bad = (np.asarray(family.absorbed(cand), dtype=bool)
                       | ~np.isfinite(cand).all(axis=-1))
                pt = np.where(bad[:, None], pt, cand)
            masks[k][lo + rows] = True
            states[k].append(rescale(pt, rstar))
    out = []
    for k in range(len(targets)):
        if states[k]:
            out.append((masks[k], np.concatenate(states[k], axis=0)))
        else:
            out.append((masks[k], np.zeros((0, xl.shape[1]))))
    return inc_out, out


def _crossing_samples(family: Characteristics, x0d: np.ndarray,
                      targets: Sequence[float], N: int, dt: float,
                      stream: RngStream, t_end: float, barrier: float,
                      t_cap: Optional[float] = None):
    """Involuted crossing states I(X_{gamma_s}) for paths that cross the
    time-change target s before the radial coordinate exits `barrier`.

    Streams the additive functional A_t = int 1/v ds alongside the paths;
    randomized-midpoint quadrature for diffusions (unbiased where the
    trapezoid over-counts the dips of 1/v), left rule for jump paths
    (exact there since the path is piecewise constant).  Exit monitoring
    adds the Brownian bridge touch probability exp(-2(R-r0)(R-r1)/dt),
    valid because the radial is a unit-diffusion Bessel.  After t_end the
    step grows geometrically; the working set is compacted, and exact
    steppers may be re-created at the current states because each
    family's exact transition is Markov in the recorded state.
    """
    gen = stream.generator()
    B = int(N)
    K = len(targets)
    R = float(barrier)
    radial = _radial_fn(family)
    rescale = _radial_rescale(family, radial)
    bridge = family.sampler.kind != "jump"
    x = np.broadcast_to(x0d, (B, family.n)).copy()
    stepper = family.sampler.make_stepper(x, gen)
    jump = family.sampler.kind == "jump"
    disp = family.sampler.euler_dispersion
    cap_dt = _EXTEND_DT_CAP[family.sampler.kind]
    cap_t = float(t_cap) if t_cap is not None else _EXTEND_T_CAP[family.sampler.kind]

    got = np.zeros((K, B), dtype=bool)
    cross = [np.zeros((B, family.n)) for _ in range(K)]

    idx = np.arange(B)                 # working-set positions in output arrays
    A = np.zeros(B)
    v = np.asarray(family.speed_v(x), dtype=float)
    r = radial(x)
    alive = np.ones(B, dtype=bool)
    t_now, dt_cur = 0.0, float(dt)
    steps_since_compact = 0
    while idx.size and t_now < cap_t:
        xn = stepper(x, dt_cur)
        dead_new = np.asarray(family.absorbed(xn), dtype=bool)
        vn = np.asarray(family.speed_v(xn), dtype=float)
        ok = alive & ~dead_new
        rn = radial(xn)
        if jump:
            inc = dt_cur * (1.0 / v)
            An = np.where(ok, A + inc, A)
            for k, s in enumerate(targets):
                hit = ok & (An >= s) & (A < s)
                if hit.any():
                    cross[k][idx[hit]] = x[hit]
                    got[k][idx[hit]] = True
        else:
            # provisional increment by randomized midpoint: a radial bridge
            # draw, unbiased where the trapezoid over-counts the 1/v dips
            mid = 0.5 * (x + xn)
            rm = np.abs(0.5 * (r + rn)
                        + np.sqrt(0.25 * dt_cur) * gen.standard_normal(r.shape))
            vm = np.asarray(family.speed_v(rescale(mid, rm)), dtype=float)
            good = np.isfinite(vm) & (vm > 0)
            trap = dt_cur * 0.5 * (1.0 / v + 1.0 / np.where(vn > 0, vn, np.inf))
            inc = np.where(good, dt_cur / np.where(good, vm, 1.0), trap)
            # rows that could reach a target this step, judged with 1/v at
            # a pessimistic bridge-minimum radial, get the skeleton
            # treatment: a refined increment plus crossing states
            s_next = np.full(idx.size, np.inf)
            for s in targets:
                s_next = np.where((A < s) & (s < s_next), s, s_next)
            rp = np.maximum(np.minimum(r, rn) - 3.5 * np.sqrt(dt_cur), 0.0)
            vp = np.asarray(family.speed_v(rescale(mid, rp)), dtype=float)
            fmax = np.where(np.isfinite(vp) & (vp > 0),
                            1.0 / np.where(vp > 0, vp, 1.0), np.inf)
            cand = ok & ((A + dt_cur * fmax >= s_next) | (A + inc >= s_next))
            if cand.any():
                inc_sk, hits = _skeleton_crossing(
                    family, radial, rescale, x[cand], xn[cand], r[cand],
                    rn[cand], A[cand], targets, dt_cur, disp, gen)
                inc[cand] = inc_sk
                for k, (m_k, xs_k) in enumerate(hits):
                    if m_k.any():
                        tgt = idx[cand][m_k]
                        cross[k][tgt] = xs_k
                        got[k][tgt] = True
            An = np.where(ok, A + inc, A)
        exited = ok & (rn >= R)
        if bridge:
            inside = ok & ~exited
            if inside.any():
                p_touch = np.exp(-2.0 * np.maximum(R - r, 0.0)
                                 * np.maximum(R - rn, 0.0) / dt_cur)
                exited = exited | (inside & (gen.random(ok.shape) < p_touch))
        A, v, r = An, np.where(ok, vn, v), np.where(ok, rn, r)
        alive = ok & ~exited
        x = np.where(alive[:, None], xn, x)
        t_now += dt_cur
        if t_now >= t_end:
            dt_cur = min(dt_cur * 1.05, cap_dt)
        steps_since_compact += 1
        if steps_since_compact >= 16 or not alive.all():
            resolved = got[:, idx].all(axis=0) if K else np.ones(idx.size, bool)
            keep = alive & ~resolved
            if not keep.all():
                idx, x, A, v, r, alive = (idx[keep], x[keep], A[keep], v[keep],
                                          r[keep], alive[keep])
                if idx.size:
                    stepper = family.sampler.make_stepper(x, gen)
            steps_since_compact = 0
    unresolved = int(idx.size)
    samples = []
    for k in range(K):
        g = got[k]
        y = family.involution(cross[k][g]) if g.any() else np.zeros((0, family.n))
        samples.append((y, g))
    return samples, unresolved


def _stream_marginals(family: Characteristics, x0d: np.ndarray,
                      times: Sequence[float], N: int, dt: float,
                      stream: RngStream):
    """States and alive masks at the grid points nearest to `times`."""
    t_max = max(times)
    grid = make_grid(t_max, dt)
    snap = [int(round(s / grid.step)) for s in times]
    for s, k in zip(times, snap):
        if abs(grid.t[k] - s) > 1e-9 * max(1.0, s):
            raise InvalidArgumentError("time %g is not a multiple of dt=%g" % (s, dt))
    gen = stream.generator()
    B = int(N)
    x = np.broadcast_to(x0d, (B, family.n)).copy()
    stepper = family.sampler.make_stepper(x, gen)
    alive = np.ones(B, dtype=bool)
    out = [None] * len(times)
    for j, k in enumerate(snap):
        if k == 0:
            out[j] = (x.copy(), alive.copy())
    for k in range(1, grid.t.size):
        xn = stepper(x, grid.t[k] - grid.t[k - 1])
        alive = alive & ~np.asarray(family.absorbed(xn), dtype=bool)
        x = np.where(alive[:, None], xn, x)
        for j, kj in enumerate(snap):
            if kj == k:
                out[j] = (x.copy(), alive.copy())
    return out


def _snap_indices(times, grid):
    snap = {}
    for j, s in enumerate(times):
        k = int(round(s / grid.step))
        if abs(grid.t[k] - s) > 1e-9 * max(1.0, s):
            raise InvalidArgumentError("time %g is not a multiple of dt=%g"
                                       % (s, grid.step))
        snap[k] = j
    return snap


def _h_marginals(family: Characteristics, y0d: np.ndarray,
                 times: Sequence[float], N: int, dt: float,
                 stream: RngStream, h_fn: Callable, barrier: Optional[float],
                 doob: bool = False):
    """h-weighted (or Doob drift-form) empirical laws at the given times.

    `barrier` excludes paths whose radial coordinate has dipped to b or
    below by the snapshot time, with the Brownian bridge touch
    probability added between grid points; this mirrors the crossing
    engine's exit truncation exactly, because {radial(X) stays below R
    up to the crossing} is the involuted image of {radial stays above
    b = radial(I(.))|_R}.
    """
    h0 = float(np.asarray(h_fn(y0d[None, :]), dtype=float)[0])
    if not (np.isfinite(h0) and h0 > 0):
        raise InvalidArgumentError("h(x0) must be positive and finite")
    grid = make_grid(max(times), dt)
    snap = _snap_indices(times, grid)
    radial = _radial_fn(family)
    gen = stream.generator()
    B = int(N)
    x = np.broadcast_to(y0d, (B, family.n)).copy()
    if doob:
        dstep = _make_doob_stepper(family, h_fn, x, gen)
    else:
        stepper = family.sampler.make_stepper(x, gen)
    alive = np.ones(B, dtype=bool)
    excluded = np.zeros(B, dtype=bool)
    r = radial(x)
    out = [None] * len(times)

    def record(j):
        if doob:
            w = np.where(alive & ~excluded, 1.0, 0.0)
        else:
            # dead rows sit at absorbing states where h may pole; they are
            # masked to weight zero regardless
            with np.errstate(divide="ignore", invalid="ignore"):
                hv = np.asarray(h_fn(x), dtype=float)
            ok = alive & ~excluded & np.isfinite(hv) & (hv > 0)
            w = np.where(ok, hv / h0, 0.0)
        out[j] = WeightedSample(states=x.copy(), weights=w, kind=family.kind)

    if 0 in snap:
        record(snap[0])
    # factor and auxiliary-state steppers are bound to the full batch;
    # everything else is stepped on the live subset only, since absorbed
    # or excluded rows keep weight zero at every later snapshot
    stateless = family.family_id not in ("wishart", "dyson")
    idx = np.flatnonzero(alive) if stateless else None
    for k in range(1, grid.t.size):
        ds = grid.t[k] - grid.t[k - 1]
        if stateless:
            if idx.size:
                xa = x[idx]
                if doob:
                    xna, oka = dstep(xa, ds)
                else:
                    xna = stepper(xa, ds)
                    oka = ~np.asarray(family.absorbed(xna), dtype=bool)
                keep = oka
                if barrier is not None:
                    rna = radial(xna)
                    ra = r[idx]
                    dip = oka & (rna <= barrier)
                    live = oka & ~dip
                    if live.any():
                        p_touch = np.exp(-2.0 * np.maximum(ra - barrier, 0.0)
                                         * np.maximum(rna - barrier, 0.0) / ds)
                        dip = dip | (live & (gen.random(idx.size) < p_touch))
                    excluded[idx] = excluded[idx] | dip
                    r[idx] = np.where(oka, rna, ra)
                    keep = oka & ~dip
                alive[idx] = oka
                x[idx] = np.where(oka[:, None], xna, xa)
                idx = idx[keep]
        else:
            if doob:
                xn, ok = dstep(x, ds)
                ok = alive & ok
            else:
                xn = stepper(x, ds)
                ok = alive & ~np.asarray(family.absorbed(xn), dtype=bool)
            if barrier is not None:
                rn = radial(xn)
                dip = ok & (rn <= barrier)
                inside = ok & ~dip & ~excluded
                if inside.any():
                    p_touch = np.exp(-2.0 * np.maximum(r - barrier, 0.0)
                                     * np.maximum(rn - barrier, 0.0) / ds)
                    dip = dip | (inside & (gen.random(B) < p_touch))
                excluded = excluded | dip
                r = np.where(ok, rn, r)
            alive = ok
            x = np.where(alive[:, None], xn, x)
        if k in snap:
            record(snap[k])
    return out


# ---------------------------------------------------------------------------
# verification pipelines

def _mass_test(mass_a, var_a, n_a, mass_b, var_b, n_b):
    se = math.sqrt(max(var_a / n_a + var_b / n_b, 0.0))
    if se == 0.0:
        return 0.0, 1.0 if mass_a == mass_b else 0.0
    z = (mass_a - mass_b) / se
    return z, 2.0 * float(_st.norm.sf(abs(z)))


def _compare_laws(side_a_states, side_b: WeightedSample, d: int, stream: RngStream,
                  n_perm: int, boot: int, metric: str):
    """Per-coordinate weighted KS p-values plus the energy p-value."""
    wa = np.ones(side_a_states.shape[0])
    ks_ps, ks_stats = [], []
    for c in range(d):
        a1 = WeightedSample(states=side_a_states[:, c:c + 1], weights=wa, kind="vector")
        b1 = WeightedSample(states=side_b.states[:, c:c + 1], weights=side_b.weights,
                            kind="vector")
        s, p = ks_statistic(a1, b1, rng=stream.child(c), n_perm=n_perm)
        ks_stats.append(s)
        ks_ps.append(p)
    ea = WeightedSample(states=side_a_states, weights=wa, kind="vector")
    e_stat, e_p = energy_distance(ea, side_b, boot=boot, rng=stream.child(d),
                                  metric=metric)
    return ks_stats, ks_ps, e_stat, e_p


def _flagged_reports(family, times, N, dt, seed, reason):
    return [TestReport(
        name="ip[%s] t=%g" % (family.name, s), statistic=float("nan"),
        threshold=DEFAULT_THRESHOLD, passed=False, mode="flagged", n=N,
        p_value=float("nan"), dt=dt, seed=seed.seed,
        details={"flag": reason}) for s in times]


def verify_ip(family: Characteristics, x0, times, N: int, dt: float, seed,
              side_b: str = "weighted", h_override: Optional[Callable] = None,
              allow_nontransient: bool = False, null_self_check: bool = False,
              t_end: float = 1.0, t_cap: Optional[float] = None,
              barrier_factor: float = 8.0, n_perm: int = 999, boot: int = 499,
              threshold: float = DEFAULT_THRESHOLD):
    """Equality in law of I(X_{gamma_t}) from x0 and X^h_t from I(x0).

    Side A streams N paths from x0 and interpolates the time-change
    crossings, truncating paths whose radial coordinate exits
    barrier_factor times the starting radius before they cross; side B
    forms the h-weighted law from I(x0) (or the drift-form transform
    when side_b="doob") with the involuted truncation, so both sides
    estimate the same sub-law.  Each time yields one report with
    Bonferroni aggregation over mass, per-coordinate KS, and energy
    sub-tests.  null_self_check replaces side B with a second
    independent side-A run, for calibration under an exact null.
    """
    stream = _as_stream(seed)
    x0d = as_state_data(family, x0)
    family.validate_state(x0d)
    times = [float(s) for s in np.atleast_1d(times)]
    if any(s <= 0 for s in times):
        raise InvalidArgumentError("times must be positive")
    if barrier_factor <= 1.0:
        raise InvalidArgumentError("barrier_factor must exceed 1")
    if not (family.transient and family.ip_supported) and not allow_nontransient:
        return _flagged_reports(family, times, N, dt, stream,
                                "unsupported regime: family is not transient "
                                "or lacks the inversion property")

    radial = _radial_fn(family)
    R = barrier_factor * float(radial(x0d))
    b_dual = _dual_barrier(family, x0d, R)
    samples_a, unresolved = _crossing_samples(
        family, x0d, times, N, dt, stream.child(0), t_end=t_end, barrier=R,
        t_cap=t_cap)

    if null_self_check:
        samples_b, unresolved_b = _crossing_samples(
            family, x0d, times, N, dt, stream.child(1), t_end=t_end, barrier=R,
            t_cap=t_cap)
        sides_b = [WeightedSample(states=y, weights=np.ones(y.shape[0]), kind=family.kind)
                   for (y, g) in samples_b]
        masses_b = [(float(g.mean()), float(g.mean() * (1 - g.mean()))) for (_, g) in samples_b]
    else:
        y0d = family.involution(x0d)
        h_fn = h_override if h_override is not None else family.excessive_h
        if side_b not in ("weighted", "doob"):
            raise InvalidArgumentError("side_b must be 'weighted' or 'doob'")
        sides_b = _h_marginals(family, y0d, times, N, dt, stream.child(1),
                               h_fn, barrier=b_dual, doob=side_b == "doob")
        masses_b = [(s.mass, float(s.weights.var())) for s in sides_b]

    metric = "bounded" if family.sampler.kind == "jump" else "euclidean"
    reports = []
    for j, s in enumerate(times):
        y_a, got_a = samples_a[j]
        mass_a = float(got_a.mean())
        var_a = mass_a * (1.0 - mass_a)
        mass_b, var_b = masses_b[j]
        z, p_mass = _mass_test(mass_a, var_a, N, mass_b, var_b, N)
        wb = sides_b[j]
        n_b = int((wb.weights > 0).sum())
        details = {"mass_a": mass_a, "mass_b": mass_b, "mass_z": z,
                   "p_mass": p_mass, "n_surv_a": int(y_a.shape[0]),
                   "n_surv_b": n_b, "unresolved_a": unresolved,
                   "barrier": R, "dual_barrier": b_dual,
                   "side_b": "self" if null_self_check else side_b}
        sub_ps = [p_mass]
        e_stat = float("nan")
        if y_a.shape[0] >= 10 and n_b >= 10:
            ks_stats, ks_ps, e_stat, e_p = _compare_laws(
                y_a, wb, family.n, stream.child(100 + j), n_perm, boot, metric)
            details.update({"ks": ks_stats, "p_ks": ks_ps,
                            "energy": e_stat, "p_energy": e_p})
            sub_ps += ks_ps + [e_p]
        else:
            details["shape_skipped"] = "fewer than 10 survivors on a side"
        k = len(sub_ps)
        min_p = min(sub_ps)
        adj = min(1.0, k * min_p)
        reports.append(TestReport(
            name="ip[%s] t=%g" % (family.name, s),
            statistic=e_stat if np.isfinite(e_stat) else abs(z),
            threshold=threshold, passed=bool(adj > threshold), mode="p_value",
            n=int(N), p_value=adj, dt=dt, seed=stream.seed, details=details))
    return reports


def verify_characteristics(family: Characteristics, n_points: int = 10000,
                           seed=0,
                           threshold: float = RESIDUAL_TOL_CHARACTERISTICS) -> TestReport:
    """Pointwise identities I(I(x)) = x, h(x) h(I(x)) = 1, v(x) v(I(x)) = 1."""
    stream = _as_stream(seed)
    x = random_states(family, int(n_points), stream.child(0).generator())
    ix = np.asarray(family.involution(x), dtype=float)
    r_i = np.abs(np.asarray(family.involution(ix), dtype=float) - x)
    r_i = float((r_i / np.maximum(np.abs(x), 1.0)).max())
    hx = np.asarray(family.excessive_h(x), dtype=float)
    r_h = float(np.abs(hx * np.asarray(family.excessive_h(ix), dtype=float) - 1.0).max())
    vx = np.asarray(family.speed_v(x), dtype=float)
    r_v = float(np.abs(vx * np.asarray(family.speed_v(ix), dtype=float) - 1.0).max())
    residual = max(r_i, r_h, r_v)
    return TestReport(
        name="characteristics[%s]" % family.name, statistic=residual,
        threshold=threshold, passed=bool(residual <= threshold),
        mode="residual", n=int(n_points), residual=residual,
        seed=stream.seed,
        details={"residual_involution": r_i, "residual_h": r_h,
                 "residual_v": r_v})


def verify_excessive(family: Characteristics, g: Callable, x0, times,
                     N: int, dt: float, seed,
                     threshold: float = DEFAULT_THRESHOLD) -> TestReport:
    """One-sided check that E_x g(X_t) <= g(x) at every requested time."""
    stream = _as_stream(seed)
    x0d = as_state_data(family, x0)
    family.validate_state(x0d)
    times = [float(s) for s in np.atleast_1d(times)]
    g0 = float(np.asarray(g(x0d[None, :]), dtype=float)[0])
    if not (np.isfinite(g0) and g0 > 0):
        raise InvalidArgumentError("g(x0) must be in (0, inf)")
    marg = _stream_marginals(family, x0d, times, N, dt, stream.child(0))
    zs, ps, means, ses = [], [], [], []
    for states, alive in marg:
        gv = np.where(alive, np.asarray(g(states), dtype=float), 0.0)
        mean = float(gv.mean())
        se = float(gv.std(ddof=1) / math.sqrt(N))
        # the floor keeps functions that are constant up to roundoff
        # (K h = 1 exactly) from turning machine noise into a z-score
        se = max(se, 1e-12 * max(abs(g0), 1.0))
        if se == 0.0:
            z = 0.0
            p = 1.0 if mean <= g0 else 0.0
        else:
            z = (mean - g0) / se
            p = float(_st.norm.sf(z))
        zs.append(z)
        ps.append(p)
        means.append(mean)
        ses.append(se)
    order = np.argsort(times)[::-1]
    mono = all(means[order[i]] <= means[order[i + 1]] + 3 * (ses[order[i]] + ses[order[i + 1]])
               for i in range(len(order) - 1))
    k = len(ps)
    adj = min(1.0, k * min(ps))
    return TestReport(
        name="excessive[%s]" % family.name, statistic=float(max(zs)),
        threshold=threshold, passed=bool(adj > threshold), mode="p_value",
        n=int(N), p_value=adj, dt=dt, seed=stream.seed,
        details={"g0": g0, "means": means, "se": ses, "times": times,
                 "monotone_approach": bool(mono)})


def verify_self_duality(family: Characteristics, n_points: int = 1000,
                        seed=0,
                        threshold: float = RESIDUAL_TOL_CHARACTERISTICS) -> TestReport:
    """Worst relative defect of p_t(x,y) theta(x) = p_t(y,x) theta(y)."""
    stream = _as_stream(seed)
    if family.density is None or family.theta is None:
        raise UnsupportedError("self-duality needs a registered density and "
                               "theta; %s has none" % family.name)
    gen = stream.child(0).generator()
    xs = random_states(family, int(n_points), gen)
    ys = random_states(family, int(n_points), gen)
    ts = gen.uniform(0.05, 2.0, int(n_points))
    worst = 0.0
    for t, x, y in zip(ts, xs, ys):
        worst = max(worst, self_duality_residual(family, float(t), x, y))
    return TestReport(
        name="self-duality[%s]" % family.name, statistic=float(worst),
        threshold=threshold, passed=bool(worst <= threshold), mode="residual",
        n=int(n_points), residual=float(worst), seed=stream.seed)


def verify_radial_bessel(family: Characteristics, x0, t: float, N: int,
                         dt: float, seed,
                         threshold: float = DEFAULT_THRESHOLD) -> TestReport:
    """rho^(1/2)(X_t) against an exact Bessel((beta+n)alpha) sample."""
    if family.radial_bessel_dim is None or family.rho is None:
        raise UnsupportedError("%s has no radial Bessel reduction" % family.name)
    stream = _as_stream(seed)
    x0d = as_state_data(family, x0)
    family.validate_state(x0d)
    dim = float(family.radial_bessel_dim)
    (states, alive), = _stream_marginals(family, x0d, [float(t)], N, dt,
                                         stream.child(0))
    r_a = np.sqrt(np.asarray(family.rho(states[alive]), dtype=float))
    gen = stream.child(1).generator()
    q0 = float(family.rho(x0d))
    r_b = np.sqrt(besq_transition(gen, dim, np.full(N, q0), float(t)))
    a = WeightedSample(states=r_a[:, None], weights=np.ones(r_a.size), kind="vector")
    b = WeightedSample(states=r_b[:, None], weights=np.ones(r_b.size), kind="vector")
    stat, p = ks_statistic(a, b, rng=stream.child(2))
    return TestReport(
        name="radial-bessel[%s]" % family.name, statistic=float(stat),
        threshold=threshold, passed=bool(p > threshold), mode="p_value",
        n=int(N), p_value=float(p), dt=dt, seed=stream.seed,
        details={"dimension": dim, "alive_fraction": float(alive.mean())})


def verify_conjugation(familyA: Characteristics, familyB: Characteristics,
                       bijection, x0, t: float, N: int, seed,
                       dt: Optional[float] = None,
                       threshold: float = DEFAULT_THRESHOLD) -> TestReport:
    """Phi(X^A_t) =(d)= X^B_t plus pointwise conjugacy of characteristics."""
    if bijection.dim_in != familyA.n or bijection.dim_out != familyB.n:
        raise InvalidArgumentError("bijection dimensions (%d -> %d) do not match "
                                   "the families (%d -> %d)"
                                   % (bijection.dim_in, bijection.dim_out,
                                      familyA.n, familyB.n))
    stream = _as_stream(seed)
    x0d = as_state_data(familyA, x0)
    familyA.validate_state(x0d)
    y0d = np.asarray(bijection.forward(x0d), dtype=float)
    familyB.validate_state(y0d)
    if dt is None:
        # both conjugation pairs here have exact one-step transitions
        dt = float(t) if familyA.sampler.kind == "exact" == familyB.sampler.kind else 1e-3
    (sa, la), = _stream_marginals(familyA, x0d, [float(t)], N, dt, stream.child(0))
    (sb, lb), = _stream_marginals(familyB, y0d, [float(t)], N, dt, stream.child(1))
    ya = np.asarray(bijection.forward(sa[la]), dtype=float)
    yb = sb[lb]

    pts = yb[:min(1000, yb.shape[0])]
    inv = np.asarray(bijection.inverse(pts), dtype=float)
    r_i = np.abs(np.asarray(bijection.forward(familyA.involution(inv)), dtype=float)
                 - familyB.involution(pts))
    r_i = float((r_i / (1.0 + np.abs(familyB.involution(pts)))).max())
    hb = np.asarray(familyB.excessive_h(pts), dtype=float)
    r_h = float((np.abs(np.asarray(familyA.excessive_h(inv), dtype=float) - hb)
                 / np.abs(hb)).max())
    vb = np.asarray(familyB.speed_v(pts), dtype=float)
    r_v = float((np.abs(np.asarray(familyA.speed_v(inv), dtype=float) - vb)
                 / np.abs(vb)).max())
    residual = max(r_i, r_h, r_v)

    wb = WeightedSample(states=yb, weights=np.ones(yb.shape[0]), kind=familyB.kind)
    ks_stats, ks_ps, e_stat, e_p = _compare_laws(
        ya, wb, familyB.n, stream.child(2), n_perm=999, boot=499,
        metric="euclidean")
    sub_ps = ks_ps + [e_p]
    k = len(sub_ps)
    adj = min(1.0, k * min(sub_ps))
    passed = bool(residual < RESIDUAL_TOL_CHARACTERISTICS and adj > threshold)
    return TestReport(
        name="conjugation[%s -> %s]" % (familyA.name, familyB.name),
        statistic=float(e_stat), threshold=threshold, passed=passed,
        mode="combined", n=int(N), p_value=adj, residual=residual,
        dt=dt, seed=stream.seed,
        details={"residual_involution": r_i, "residual_h": r_h,
                 "residual_v": r_v,
                 "residual_threshold": RESIDUAL_TOL_CHARACTERISTICS,
                 "p_ks": ks_ps, "p_energy": e_p,
                 "mass_a": float(la.mean()), "mass_b": float(lb.mean())})


def ip_null_calibration(family: Characteristics, x0, t: float, N: int,
                        dt: float, seeds, level: float = 0.05,
                        t_end: float = 1.0) -> dict:
    """False-rejection rate of verify_ip under an exact null (both sides
    drawn from the same pipeline), over a list of seeds."""
    ps = []
    for sd in seeds:
        rep, = verify_ip(family, x0, [t], N, dt, sd, null_self_check=True,
                         t_end=t_end, n_perm=199, boot=199)
        ps.append(rep.p_value)
    ps = np.asarray(ps)
    return {"p_values": ps, "fraction_below": float((ps < level).mean()),
            "level": level, "n_runs": len(ps)}
