"""Config-driven experiment runner: parses flat key = value files,
dispatches to the verification pipelines, and emits CSV or JSON reports.

Exit codes: 0 all reports pass, 1 some report fails, 2 invalid config,
3 unsupported family/test combination.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InvalidArgumentError, UnsupportedError
from .families import (_ALLOWED_PARAMS, FAMILY_DESCRIPTIONS, as_state_data,
                       get_family, goe_embedding, identity_map, squares_map)
from .kelvin import (RESIDUAL_TOL_GENERATOR, exit_identity_check,
                     generator_residual, harmonic_dictionary_check,
                     hyperbolic_ball_candidate_kelvin,
                     hyperbolic_ball_generator, hyperbolic_ball_poisson,
                     kelvin_transform, potential_kernel,
                     potential_relation_residual, radial_annulus,
                     _region_radial)
from .state import make_grid
from .statcheck import (TestReport, ip_null_calibration, verify_characteristics,
                        verify_conjugation, verify_excessive, verify_ip,
                        verify_radial_bessel, verify_self_duality)

TEST_KINDS = ("ip", "excessive", "kelvin-exit", "generator", "potential",
              "radial-bessel", "conjugation", "self-duality")

_CORE_KEYS = {"family", "test", "x0", "times", "N", "dt", "t_end", "seed",
              "output", "format"}

_OPTION_KEYS = {
    "ip": {"side_b", "barrier_factor"},
    "excessive": {"function"},
    "kelvin-exit": {"annulus", "function", "radial"},
    "generator": {"points"},
    "potential": {"y", "t_max"},
    "radial-bessel": set(),
    "conjugation": set(),
    "self-duality": {"points"},
}


@dataclass
class ExperimentConfig:
    family: str
    test: str
    params: dict
    seed: int
    x0: Optional[tuple] = None
    times: tuple = ()
    N: int = 20000
    dt: float = 1e-3
    t_end: Optional[float] = None
    output: Optional[str] = None
    format: str = "csv"
    options: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# config parsing

def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        toks = [t.strip() for t in raw.split(",") if t.strip()]
        try:
            return tuple(float(t) for t in toks)
        except ValueError:
            raise InvalidArgumentError("cannot parse list value %r" % raw)
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def _as_tuple(v):
    if isinstance(v, tuple):
        return v
    return (float(v),)


def parse_config(text: str) -> ExperimentConfig:
    """Flat `key = value` lines; `#` starts a comment; keys are validated
    against the core schema, the chosen test's options, and the chosen
    family's parameters."""
    pairs = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError("line %d: expected 'key = value'" % ln)
        key, raw = line.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise InvalidArgumentError("duplicate config key '%s'" % key)
        pairs[key] = _parse_value(raw)

    for req in ("family", "test", "seed"):
        if req not in pairs:
            raise InvalidArgumentError("missing required config key '%s'" % req)
    family_id = str(pairs.pop("family"))
    test = str(pairs.pop("test"))
    if family_id not in _ALLOWED_PARAMS:
        raise InvalidArgumentError(
            "family: unknown family %r; known families: %s"
            % (family_id, ", ".join(sorted(_ALLOWED_PARAMS))))
    if test not in TEST_KINDS:
        raise InvalidArgumentError(
            "test: unknown test %r; known tests: %s"
            % (test, ", ".join(TEST_KINDS)))

    param_keys = _ALLOWED_PARAMS[family_id]
    option_keys = _OPTION_KEYS[test]
    params, options, core = {}, {}, {}
    for key, value in pairs.items():
        if key in param_keys:
            params[key] = value
        elif key in option_keys:
            options[key] = value
        elif key in _CORE_KEYS:
            core[key] = value
        elif key in _CORE_KEYS | set().union(*_OPTION_KEYS.values()):
            raise InvalidArgumentError(
                "key '%s' does not apply to test '%s'" % (key, test))
        else:
            raise InvalidArgumentError("unknown config key '%s'" % key)

    seed = core.pop("seed")
    if not isinstance(seed, int):
        raise InvalidArgumentError("seed: must be an integer")
    cfg = ExperimentConfig(family=family_id, test=test, params=params,
                           seed=seed, options=options)
    if "x0" in core:
        cfg.x0 = _as_tuple(core.pop("x0"))
    if "times" in core:
        cfg.times = _as_tuple(core.pop("times"))
    if "N" in core:
        n = core.pop("N")
        if not isinstance(n, int) or n <= 0:
            raise InvalidArgumentError("N: must be a positive integer")
        cfg.N = n
    if "dt" in core:
        dt = float(core.pop("dt"))
        if not (dt > 0):
            raise InvalidArgumentError("dt: must be positive")
        cfg.dt = dt
    if "t_end" in core:
        cfg.t_end = float(core.pop("t_end"))
    if "output" in core:
        cfg.output = str(core.pop("output"))
    if "format" in core:
        fmt = str(core.pop("format"))
        if fmt not in ("csv", "json"):
            raise InvalidArgumentError("format: must be 'csv' or 'json'")
        cfg.format = fmt
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidArgumentError("cannot read config %s: %s" % (path, exc))
    return parse_config(text)


# ---------------------------------------------------------------------------
# dispatch

def _need(cfg: ExperimentConfig, key: str):
    v = getattr(cfg, key)
    if v is None or (key == "times" and len(v) == 0):
        raise InvalidArgumentError(
            "missing required config key '%s' for test '%s'" % (key, cfg.test))
    return v


def _excessive_g(family, which: str):
    one = lambda x: np.ones(np.shape(x)[:-1])
    if which == "h":
        return family.excessive_h
    if which == "one":
        return one
    if which == "kelvin-one":
        return kelvin_transform(family, one)
    if which == "kelvin-h":
        return kelvin_transform(family, family.excessive_h)
    raise InvalidArgumentError(
        "function: must be one of h, one, kelvin-one, kelvin-h")


def _exit_f(family, which: str, b: float):
    if which == "one":
        return lambda x: np.ones(np.shape(x)[:-1])
    if which == "outer":
        rad = _region_radial(family, "rho")
        return lambda x: (rad(x) >= b).astype(float)
    raise InvalidArgumentError("function: must be 'one' or 'outer'")


def _conjugation_setup(family):
    if family.family_id == "goe":
        m = int(family.params["m"])
        return get_family("bm", {"n": family.n}), goe_embedding(m)
    if family.family_id == "free_besq":
        n = int(family.params["n"])
        delta = float(family.params["delta"])
        base = get_family("fspbes", {"n": n, "alpha": 1.0,
                                     "nu": (delta / 2.0 - 1.0,) * n,
                                     "sigma": (1.0,) * n})
        return base, squares_map(n)
    return family, identity_map(family.n)


def run_experiment(config: ExperimentConfig) -> list:
    """Dispatch one experiment; returns the list of TestReports."""
    family = get_family(config.family, config.params)
    test = config.test

    if test == "ip":
        kw = {}
        if "side_b" in config.options:
            kw["side_b"] = str(config.options["side_b"])
        if "barrier_factor" in config.options:
            kw["barrier_factor"] = float(config.options["barrier_factor"])
        if config.t_end is not None:
            kw["t_end"] = config.t_end
        return verify_ip(family, _need(config, "x0"), list(_need(config, "times")),
                         config.N, config.dt, config.seed, **kw)

    if test == "excessive":
        g = _excessive_g(family, str(config.options.get("function", "h")))
        return [verify_excessive(family, g, _need(config, "x0"),
                                 list(_need(config, "times")), config.N,
                                 config.dt, config.seed)]

    if test == "kelvin-exit":
        ann = config.options.get("annulus", (0.5, 2.0))
        if not (isinstance(ann, tuple) and len(ann) == 2):
            raise InvalidArgumentError("annulus: must be 'a, b' with 0 < a < b")
        D = radial_annulus(family, float(ann[0]), float(ann[1]),
                           radial=str(config.options.get("radial", "rho")))
        f = _exit_f(family, str(config.options.get("function", "one")),
                    float(ann[1]))
        grid = make_grid(config.t_end if config.t_end is not None else 6.0,
                         config.dt)
        return [exit_identity_check(family, f, _need(config, "x0"), D, grid,
                                    config.seed, config.N)]

    if test == "generator":
        pts = int(config.options.get("points", 32))
        return harmonic_dictionary_check(family, pts, seed=config.seed)

    if test == "potential":
        y = config.options.get("y")
        if y is None:
            raise InvalidArgumentError(
                "missing required config key 'y' for test 'potential'")
        t_max = float(config.options.get("t_max", 64.0))
        x0 = _need(config, "x0")
        res = potential_relation_residual(family, x0, _as_tuple(y), t_max=t_max)
        return [TestReport(
            name="potential-relation[%s]" % family.name, statistic=float(res),
            threshold=0.02, passed=bool(res <= 0.02), mode="residual",
            n=1, residual=float(res), seed=config.seed)]

    if test == "radial-bessel":
        t = float(_need(config, "times")[0])
        return [verify_radial_bessel(family, _need(config, "x0"), t, config.N,
                                     config.dt, config.seed)]

    if test == "conjugation":
        base, phi = _conjugation_setup(family)
        t = float(_need(config, "times")[0])
        x0b = as_state_data(family, _need(config, "x0"))
        x0a = np.asarray(phi.inverse(x0b), dtype=float)
        return [verify_conjugation(base, family, phi, x0a, t, config.N,
                                   config.seed)]

    if test == "self-duality":
        pts = int(config.options.get("points", 1000))
        return [verify_self_duality(family, pts, seed=config.seed)]

    raise InvalidArgumentError("test: unknown test %r" % test)


# ---------------------------------------------------------------------------
# report emission

_COLUMNS = ("name", "statistic", "p_or_residual", "threshold", "pass",
            "n", "dt", "seed", "runtime_s")


def _report_row(rep: TestReport) -> dict:
    return {
        "name": rep.name,
        "statistic": float(rep.statistic),
        "p_or_residual": rep.p_or_residual,
        "threshold": float(rep.threshold),
        "pass": bool(rep.passed),
        "n": int(rep.n),
        "dt": None if rep.dt is None else float(rep.dt),
        "seed": rep.seed,
        "runtime_s": float(rep.runtime_s),
    }


def format_reports(reports, fmt: str) -> str:
    rows = [_report_row(r) for r in reports]
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt != "csv":
        raise InvalidArgumentError("format: must be 'csv' or 'json'")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_COLUMNS)
    for row in rows:
        writer.writerow([
            row["name"], repr(row["statistic"]), repr(row["p_or_residual"]),
            repr(row["threshold"]), "true" if row["pass"] else "false",
            row["n"], "" if row["dt"] is None else repr(row["dt"]),
            "" if row["seed"] is None else row["seed"],
            repr(row["runtime_s"]),
        ])
    return buf.getvalue()


def emit_report(reports, fmt: str, path: str) -> None:
    """Write the report table; byte-stable for identical reports."""
    text = format_reports(reports, fmt)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise InvalidArgumentError("cannot write report to %s: %s" % (path, exc))


def _print_summary(reports, out=None):
    out = out or sys.stdout
    for rep in reports:
        value = rep.p_or_residual
        label = "p" if rep.p_value is not None else "residual"
        print("%-4s %-58s %s=%.4g" % ("PASS" if rep.passed else "FAIL",
                                      rep.name, label, value), file=out)


# ---------------------------------------------------------------------------
# acceptance matrix (the `suite` verb)

_IP_MATRIX = (
    ("bm", {"n": 3}, (0.6, 0.6, 0.3), (0.5, 2.0), 1e-3, "weighted"),
    ("bes", {"nu": 0.5}, (1.0,), (0.25, 1.0), 1e-3, "weighted"),
    ("bes", {"nu": 1.5}, (1.0,), (0.25, 0.5), 1e-3, "weighted"),
    ("fspbes", {"n": 2, "alpha": 1.5, "nu": (0.5, 1.0), "sigma": (1.0, 1.0)},
     (1.0, 1.0), (0.05, 0.1), 1e-3, "doob"),
    ("stable", {"alpha": 1.5, "n": 2}, (0.8, 0.6), (0.5, 2.0), 1e-4, "weighted"),
    ("goe", {"m": 2}, (0.7, 0.3, -0.4), (0.5, 2.0), 1e-3, "weighted"),
    ("wishart", {"m": 2, "delta": 3}, (1.0, 0.3, 0.7), (0.1, 0.25), 1e-3, "doob"),
    ("dyson", {"n": 2}, (-0.5, 0.5), (0.5, 1.0), 1e-3, "weighted"),
    ("free_besq", {"n": 2, "delta": 3}, (1.0, 1.5), (0.05, 0.1), 1e-3, "weighted"),
    ("noncolliding_besq", {"n": 2, "delta": 3}, (0.5, 1.5), (0.05, 0.1), 1e-3, "doob"),
    ("hyperbolic_bessel", {"n": 3}, (0.8,), (0.1, 0.25), 1e-3, "doob"),
)

_CHAR_MATRIX = tuple((fid, params) for fid, params, *_ in _IP_MATRIX
                     if fid != "bes") + (("bes", {"nu": 0.5}), ("besq", {"delta": 3.0}))

SUITE_SEED = 424242


@dataclass
class SuiteEntry:
    criterion: int
    label: str
    run: Callable
    expect: str = "pass"   # "fail" marks a negative control


def _bes5_green(x: float, y: float) -> float:
    # scale s(r) = -r^-3 / 3, speed m(dr) = 2 r^4 dr
    return (2.0 / 3.0) * y ** 4 * max(x, y) ** -3.0


def acceptance_entries(quick: bool = False) -> list:
    n_char = 2000 if quick else 10000
    n_ip = 8000 if quick else 100000
    n_exc = 5000 if quick else 20000
    n_kelvin = 5000 if quick else 100000
    n_radial = 20000 if quick else 100000
    n_conj = 5000 if quick else 20000
    n_dual = 200 if quick else 1000
    n_cal, cal_seeds = (1000, 20) if quick else (2000, 100)
    entries = []

    def char_all():
        return [verify_characteristics(get_family(fid, params), n_char,
                                       seed=SUITE_SEED)
                for fid, params in _CHAR_MATRIX]
    entries.append(SuiteEntry(1, "characteristic identities", char_all))

    for fid, params, x0, times, dt, side_b in _IP_MATRIX:
        def ip_one(fid=fid, params=params, x0=x0, times=times, dt=dt,
                   side_b=side_b):
            fam = get_family(fid, params)
            return verify_ip(fam, x0, list(times), n_ip, dt, SUITE_SEED,
                             side_b=side_b)
        entries.append(SuiteEntry(2, "ip %s" % fid, ip_one))

    def ip_negative():
        fam = get_family("bes", {"nu": 0.5})
        return verify_ip(fam, (1.0,), [1.0], n_ip, 1e-3, SUITE_SEED,
                         h_override=lambda x: x[..., 0] ** -0.5)
    entries.append(SuiteEntry(2, "ip negative control (perturbed h)",
                              ip_negative, expect="fail"))

    def kelvin_exit_all():
        reports = []
        for fid, params, x0 in (("bm", {"n": 3}, (0.6, 0.6, 0.3)),
                                ("bes", {"nu": 0.5}, (1.0,))):
            fam = get_family(fid, params)
            for a, b in ((0.5, 2.0), (0.7, 1.6)):
                D = radial_annulus(fam, a, b)
                for which in ("one", "outer"):
                    f = _exit_f(fam, which, b)
                    rep = exit_identity_check(fam, f, x0, D,
                                              make_grid(6.0, 1e-3),
                                              SUITE_SEED, n_kelvin)
                    reports.append(rep)
        return reports
    entries.append(SuiteEntry(3, "kelvin exit identities", kelvin_exit_all))

    def excessive_all():
        reports = []
        for fid, params, x0, times, dt, _ in _IP_MATRIX:
            fam = get_family(fid, params)
            for which in ("h", "kelvin-h"):
                g = _excessive_g(fam, which)
                reports.append(verify_excessive(fam, g, x0, list(times),
                                                n_exc, dt, SUITE_SEED))
        return reports
    entries.append(SuiteEntry(4, "excessivity of h and K H", excessive_all))

    def excessive_negative():
        fam = get_family("bes", {"nu": 0.5})
        return [verify_excessive(fam, lambda x: x[..., 0], (1.0,),
                                 [0.25, 1.0], n_exc, 1e-3, SUITE_SEED)]
    entries.append(SuiteEntry(4, "excessive negative control g(x)=x",
                              excessive_negative, expect="fail"))

    def generator_all():
        reports = []
        for fid, params in (("bes", {"nu": 0.5}), ("bes", {"nu": 1.5}),
                            ("bm", {"n": 2}), ("bm", {"n": 3}),
                            ("hyperbolic_bessel", {"n": 3})):
            reports.extend(harmonic_dictionary_check(get_family(fid, params),
                                                     32, seed=SUITE_SEED))
        return reports
    entries.append(SuiteEntry(5, "generator-level Kelvin", generator_all))

    def generator_negative():
        spec = hyperbolic_ball_generator(3)
        pf = hyperbolic_ball_poisson(np.array([1.0, 0.0, 0.0]))
        x = np.array([0.3, 0.2, 0.1])
        res = generator_residual(spec, hyperbolic_ball_candidate_kelvin(pf), x)
        control = generator_residual(spec, pf, x)
        return [TestReport(
            name="generator-negative[hyperbolic ball] candidate Kelvin",
            statistic=float(res), threshold=1e-2, passed=bool(res >= 1e-2),
            mode="residual", n=1, residual=float(res),
            details={"point": [0.3, 0.2, 0.1], "pole": [1.0, 0.0, 0.0],
                     "harmonic_control": float(control)})]
    entries.append(SuiteEntry(5, "hyperbolic-BM negative case",
                              generator_negative))

    def potential_all():
        reports = []
        bes5 = get_family("bes", {"nu": 1.5})
        fsp = get_family("fspbes", {"n": 2, "alpha": 2.0, "nu": (0.5, 1.0),
                                    "sigma": (1.0, 1.0)})
        pairs5 = (((1.0,), (2.0,)), ((0.8,), (1.6,)), ((1.5,), (0.7,)),
                  ((2.0,), (2.5,)), ((1.2,), (1.2,)))
        # no diagonal pair here: in two dimensions p_t(x,x) ~ 1/t and the
        # on-diagonal potential diverges
        pairs2 = (((1.0, 1.5), (2.0, 0.7)), ((0.8, 0.8), (1.2, 1.6)),
                  ((1.5, 0.6), (0.9, 1.1)), ((2.0, 1.0), (1.0, 2.0)),
                  ((1.1, 1.3), (1.3, 1.1)))
        for fam, pairs in ((bes5, pairs5), (fsp, pairs2)):
            worst = max(potential_relation_residual(fam, x, y)
                        for x, y in pairs)
            reports.append(TestReport(
                name="potential-relation[%s]" % fam.name,
                statistic=float(worst), threshold=0.02,
                passed=bool(worst <= 0.02), mode="residual",
                n=len(pairs), residual=float(worst)))
        u = potential_kernel(bes5, (1.0,), (2.0,))
        res = abs(u - _bes5_green(1.0, 2.0)) / _bes5_green(1.0, 2.0)
        reports.append(TestReport(
            name="potential-oracle[bes(delta=5)] U(1,2)",
            statistic=float(res), threshold=0.01, passed=bool(res <= 0.01),
            mode="residual", n=1, residual=float(res),
            details={"quadrature": float(u), "oracle": _bes5_green(1.0, 2.0)}))
        return reports
    entries.append(SuiteEntry(6, "potential relation and Green oracle",
                              potential_all))

    def radial_all():
        reports = []
        for fid, params, x0, t in (
                ("wishart", {"m": 2, "delta": 3}, (1.0, 0.3, 0.7), 0.25),
                ("dyson", {"n": 2}, (-0.5, 0.5), 0.5),
                ("fspbes", {"n": 2, "alpha": 1.5, "nu": (0.5, 1.0),
                            "sigma": (1.0, 1.0)}, (1.0, 1.0), 0.25)):
            fam = get_family(fid, params)
            reports.append(verify_radial_bessel(fam, x0, t, n_radial, 1e-3,
                                                SUITE_SEED))
        return reports
    entries.append(SuiteEntry(7, "radial Bessel reductions", radial_all))

    def duality_all():
        return [verify_self_duality(get_family(fid, params), n_dual,
                                    seed=SUITE_SEED)
                for fid, params in
                (("fspbes", {"n": 2, "alpha": 1.5, "nu": (0.5, 1.0),
                             "sigma": (1.0, 1.0)}),
                 ("dyson", {"n": 2}))]
    entries.append(SuiteEntry(8, "self-duality of densities", duality_all))

    def conjugation_all():
        reports = []
        goe = get_family("goe", {"m": 2})
        base, phi = _conjugation_setup(goe)
        x0 = np.asarray(phi.inverse(np.array([0.7, 0.3, -0.4])))
        reports.append(verify_conjugation(base, goe, phi, x0, 0.5, n_conj,
                                          SUITE_SEED))
        fb = get_family("free_besq", {"n": 2, "delta": 3})
        base, phi = _conjugation_setup(fb)
        x0 = np.asarray(phi.inverse(np.array([1.0, 1.5])))
        reports.append(verify_conjugation(base, fb, phi, x0, 0.1, n_conj,
                                          SUITE_SEED))
        return reports
    entries.append(SuiteEntry(9, "conjugation bijections", conjugation_all))

    def calibration():
        fam = get_family("bes", {"nu": 0.5})
        out = ip_null_calibration(fam, (1.0,), 0.5, n_cal, 1e-3,
                                  seeds=range(SUITE_SEED, SUITE_SEED + cal_seeds))
        frac = out["fraction_below"]
        return [TestReport(
            name="calibration[bes(delta=3)] H0 false-rejection at 0.05",
            statistic=float(frac), threshold=0.12,
            passed=bool(0.01 <= frac <= 0.12), mode="combined",
            n=cal_seeds, residual=float(frac),
            details={"window": [0.01, 0.12], "level": 0.05})]
    entries.append(SuiteEntry(10, "statistical calibration", calibration))
    return entries


def run_suite(quick: bool = False, out=None) -> int:
    out = out or sys.stdout
    t0 = time.perf_counter()
    n_ok = 0
    entries = acceptance_entries(quick=quick)
    failures = []
    for entry in entries:
        t1 = time.perf_counter()
        reports = entry.run()
        elapsed = time.perf_counter() - t1
        if entry.expect == "pass":
            ok = all(r.passed for r in reports)
        else:
            ok = all(not r.passed for r in reports)
        n_ok += ok
        tag = "OK  " if ok else "FAIL"
        if not ok:
            failures.append(entry.label)
        print("[%s] criterion %2d  %-42s (%d report%s, %.1fs)"
              % (tag, entry.criterion, entry.label, len(reports),
                 "s" if len(reports) != 1 else "", elapsed), file=out)
        for rep in reports:
            value = rep.p_or_residual
            label = "p" if rep.p_value is not None else "residual"
            marker = "pass" if rep.passed else "FAIL"
            if entry.expect == "fail":
                marker = "rejected" if not rep.passed else "NOT REJECTED"
            print("       %-62s %s=%-11.4g %s"
                  % (rep.name, label, value, marker), file=out)
    total = time.perf_counter() - t0
    print("suite: %d/%d criteria entries passed in %.1f min"
          % (n_ok, len(entries), total / 60.0), file=out)
    if failures:
        print("failing: %s" % "; ".join(failures), file=out)
    return 0 if n_ok == len(entries) else 1


# ---------------------------------------------------------------------------
# entry point

def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        t0 = time.perf_counter()
        reports = run_experiment(cfg)
        if args.timings:
            # one experiment, one clock: charge the wall time to the batch
            per = (time.perf_counter() - t0) / max(len(reports), 1)
            reports = [dataclasses.replace(r, runtime_s=round(per, 3))
                       for r in reports]
    except (InvalidArgumentError, DomainError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except UnsupportedError as exc:
        print("unsupported: %s" % exc, file=sys.stderr)
        return 3
    if cfg.output:
        emit_report(reports, cfg.format, cfg.output)
        _print_summary(reports)
        print("wrote %s (%s)" % (cfg.output, cfg.format))
    else:
        sys.stdout.write(format_reports(reports, cfg.format))
    return 0 if all(r.passed for r in reports) else 1


def _cmd_suite(args) -> int:
    return run_suite(quick=args.quick)


def _cmd_list_families(args) -> int:
    width = max(len(k) for k in FAMILY_DESCRIPTIONS)
    for fid in sorted(FAMILY_DESCRIPTIONS):
        print("%-*s  %s" % (width, fid, FAMILY_DESCRIPTIONS[fid]))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="inversio",
        description="simulation and verification toolkit for processes "
                    "with the space inversion property")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--timings", action="store_true",
                       help="stamp wall-clock runtimes into the reports "
                            "(off by default so reruns are byte-identical)")
    p_run.set_defaults(fn=_cmd_run)
    p_suite = sub.add_parser("suite", help="run the acceptance matrix")
    p_suite.add_argument("--quick", action="store_true",
                         help="reduced N smoke version")
    p_suite.set_defaults(fn=_cmd_suite)
    p_list = sub.add_parser("list-families", help="list registered families")
    p_list.set_defaults(fn=_cmd_list_families)
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
