"""Config-driven batch front end.

``excursets SUBCOMMAND --config run.yaml [--output out.csv] [--format csv|json]
[--seed N] [--workers N] [--timing]``

The config is YAML (JSON is accepted too).  List values of sweepable keys
expand to a Cartesian product with one record per combination.  Exit status
is 0 on success, 2 on a configuration error and 3 on a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
import time

import numpy as np
import yaml

from . import __version__
from .capacity2 import capacity_two_segments
from .capacityk import joint_survival_k
from .covariance import make_model
from .gauss import DEFAULT_QMC_SEED, EstimateWithError, FactorizationError
from .geometry import KSegmentProblem, Line, TwoSegmentProblem, make_window
from .moments import LinePair, expected_crossing_product, second_moment_measure
from .montecarlo import empirical_capacity, empirical_crossing_product, rice_check

COMMANDS = ("capacity2", "capacityk", "second-moment", "mc-validate", "rice-check")
TRAILER = ("value", "abs_error", "method", "seed", "version")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


def _get(cfg, key, default=None, required=False):
    if key not in cfg or cfg[key] is None:
        if required:
            raise ConfigError(f"missing required key '{key}'")
        return default
    return cfg[key]


def _number(cfg, key, default=None, required=False, lo=None, hi=None, lo_open=False,
            integer=False):
    val = _get(cfg, key, default, required)
    vals = val if isinstance(val, list) else [val]
    out = []
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"key '{key}' must be numeric, got {v!r}")
        if integer and int(v) != v:
            raise ConfigError(f"key '{key}' must be an integer, got {v!r}")
        if not math.isfinite(v):
            raise ConfigError(f"key '{key}' must be finite")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ConfigError(f"key '{key}' = {v!r} is below its range")
        if hi is not None and v > hi:
            raise ConfigError(f"key '{key}' = {v!r} is above its range")
        out.append(int(v) if integer else float(v))
    return out if isinstance(val, list) else out[0]


def _sweep(**axes):
    """Cartesian product over keyword axes; scalars count as one-element axes."""
    keys = list(axes)
    lists = [v if isinstance(v, list) else [v] for v in axes.values()]
    for combo in itertools.product(*lists):
        yield dict(zip(keys, combo))


def _model(cfg):
    try:
        return make_model(_get(cfg, "model"))
    except (ValueError, TypeError, AttributeError) as exc:
        raise ConfigError(f"key 'model': {exc}") from None


def _window(cfg, key):
    spec = _get(cfg, key, required=True)
    try:
        return make_window(spec)
    except (ValueError, TypeError, KeyError, AttributeError) as exc:
        raise ConfigError(f"key '{key}': {exc}") from None


def _record(inputs, est, seed, extra=None):
    rec = dict(inputs)
    rec.update(value=float(est.value), abs_error=float(est.abs_error), method=est.method,
               seed=seed, version=__version__)
    if extra:
        rec.update(extra)
    return rec


def _capacity2(cfg, seed, workers):
    u = _number(cfg, "u", required=True)
    l1 = _number(cfg, "l1", required=True, lo=0.0)
    l2 = _number(cfg, "l2", required=True, lo=0.0)
    phi = _number(cfg, "phi_tilde", math.pi / 4, lo=0.0, lo_open=True, hi=math.pi / 2)
    m = _number(cfg, "m", 24, lo=2, integer=True)
    tq = _number(cfg, "theta_quad_order", 16, lo=2, integer=True)
    npts = _number(cfg, "n_points", 4096, lo=16, integer=True)
    model = _model(cfg)
    for p in _sweep(u=u, l1=l1, l2=l2, phi_tilde=phi):
        prob = TwoSegmentProblem(p["u"], p["l1"], p["l2"], p["phi_tilde"], model)
        est = capacity_two_segments(prob, m=m, theta_quad=tq, n_points=npts, seed=seed,
                                    workers=workers)
        inputs = {"command": "capacity2", "model": model.descriptor, **p, "m": m,
                  "theta_quad_order": tq}
        yield _record(inputs, est, seed)


def _capacityk(cfg, seed, workers):
    u = _number(cfg, "u", required=True)
    angles = _get(cfg, "angles", required=True)
    lengths = _get(cfg, "lengths", required=True)
    if not isinstance(angles, list) or not angles:
        raise ConfigError("key 'angles' must be a nonempty list")
    # a list of lists sweeps over length vectors
    sets = lengths if lengths and isinstance(lengths[0], list) else [lengths]
    for ls in sets:
        _number({"lengths": ls}, "lengths", lo=0.0, lo_open=True)
        if len(ls) != len(angles):
            raise ConfigError("key 'lengths' needs one entry per angle")
    n = _number(cfg, "n", 24, lo=2, integer=True)
    tq = _number(cfg, "t_quad_order", 16, lo=2, integer=True)
    npts = _number(cfg, "n_points", 4096, lo=16, integer=True)
    model = _model(cfg)
    for p in _sweep(u=u):
        for ls in sets:
            try:
                prob = KSegmentProblem(p["u"], tuple(angles), tuple(ls), model)
            except ValueError as exc:
                raise ConfigError(f"key 'angles': {exc}") from None
            est = joint_survival_k(prob, n=n, t_quad=tq, n_points=npts, seed=seed,
                                   workers=workers)
            inputs = {"command": "capacityk", "model": model.descriptor, "u": p["u"],
                      "angles": json.dumps(list(angles)), "lengths": json.dumps(list(ls)),
                      "n": n, "t_quad_order": tq}
            yield _record(inputs, est, seed, {"capacity": est.info["capacity"]})


def _second_moment(cfg, seed, workers):
    u = _number(cfg, "u", required=True)
    B1 = _window(cfg, "window1")
    B2 = _window(cfg, "window2")
    pairs = _number(cfg, "pairs", 200, lo=100, integer=True)
    order = _number(cfg, "order", 24, lo=4, integer=True)
    model = _model(cfg)
    for p in _sweep(u=u):
        res = second_moment_measure(model, p["u"], B1, B2, pairs=pairs, seed=seed,
                                    order=order, workers=workers)
        inputs = {"command": "second-moment", "model": model.descriptor, "u": p["u"],
                  "window1": json.dumps(cfg["window1"], sort_keys=True),
                  "window2": json.dumps(cfg["window2"], sort_keys=True),
                  "pairs": pairs, "order": order}
        extra = {"n_pairs": res.n_pairs}
        if res.mu2_cv is not None:
            extra.update(value_cv=res.mu2_cv.value, abs_error_cv=res.mu2_cv.abs_error)
        yield _record(inputs, res.mu2, seed, extra)


def _z(engine, oracle):
    # engine errors are 3-sigma style bounds; oracle carries its SE
    sd = math.hypot(engine.abs_error / 3, oracle.info["se"])
    return (engine.value - oracle.value) / sd if sd > 0 else 0.0


def _mc_validate(cfg, seed, workers):
    engine = _get(cfg, "engine", "capacity2")
    step = _number(cfg, "step", 0.01, lo=0.0, lo_open=True, hi=0.02)
    N = _number(cfg, "N", 100_000, lo=100, integer=True)
    model = _model(cfg)
    if engine == "capacity2":
        sub = {"u": 1.0, "l1": 1.0, "l2": 1.0, **cfg}
        for rec in _capacity2(sub, seed, workers):
            prob = TwoSegmentProblem(rec["u"], rec["l1"], rec["l2"], rec["phi_tilde"], model)
            mc = empirical_capacity(model, rec["u"], prob, step=step, N=N, seed=seed,
                                    workers=workers)
            est = _rebuild(rec)
            rec.update(command="mc-validate", engine=engine, mc_value=mc.value,
                       mc_se=mc.info["se"], z=_z(est, mc), step=step, N=N)
            yield rec
    elif engine == "capacityk":
        for rec in _capacityk(cfg, seed, workers):
            prob = KSegmentProblem(rec["u"], tuple(json.loads(rec["angles"])),
                                   tuple(json.loads(rec["lengths"])), model)
            mc = empirical_capacity(model, rec["u"], prob, step=step, N=N, seed=seed,
                                    workers=workers)
            # compare capacities: T = 1 - survival has the same error
            est = _rebuild(rec)
            est = EstimateWithError(rec["capacity"], est.abs_error, est.method)
            rec.update(command="mc-validate", engine=engine, mc_value=mc.value,
                       mc_se=mc.info["se"], z=_z(est, mc), step=step, N=N)
            yield rec
    elif engine == "crossing-product":
        u = _number(cfg, "u", required=True)
        lines = _get(cfg, "lines", required=True)
        try:
            g1, g2 = (Line(float(a), float(p)) for a, p in lines)
            pair = LinePair(g1, g2)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"key 'lines': {exc}") from None
        B1 = _window(cfg, "window1")
        B2 = _window(cfg, "window2")
        for p in _sweep(u=u):
            est = expected_crossing_product(model, p["u"], pair, B1, B2)
            mc = empirical_crossing_product(model, p["u"], pair, B1, B2, step=step, N=N,
                                            seed=seed, workers=workers)
            inputs = {"command": "mc-validate", "engine": engine, "model": model.descriptor,
                      "u": p["u"], "lines": json.dumps(lines)}
            yield _record(inputs, est, seed, {"mc_value": mc.value, "mc_se": mc.info["se"],
                                              "z": _z(est, mc), "step": step, "N": N})
    else:
        raise ConfigError(f"key 'engine': unknown engine {engine!r}")


def _rebuild(rec):
    return EstimateWithError(rec["value"], rec["abs_error"], rec["method"])


def _rice_check(cfg, seed, workers):
    u = _number(cfg, "u", required=True)
    length = _number(cfg, "length", 20.0, lo=0.0, lo_open=True)
    step = _number(cfg, "step", 0.01, lo=0.0, lo_open=True)
    N = _number(cfg, "N", 10_000, lo=2, integer=True)
    angle = _number(cfg, "angle", 0.0)
    model = _model(cfg)
    for p in _sweep(u=u):
        est, rice = rice_check(model, p["u"], length=length, step=step, N=N, seed=seed,
                               angle=angle, workers=workers)
        inputs = {"command": "rice-check", "model": model.descriptor, "u": p["u"],
                  "length": length, "step": step, "N": N, "angle": angle}
        yield _record(inputs, est, seed, {"rice": rice, "discrepancy": est.value - rice,
                                          "se": est.info["se"]})


_DISPATCH = {
    "capacity2": _capacity2,
    "capacityk": _capacityk,
    "second-moment": _second_moment,
    "mc-validate": _mc_validate,
    "rice-check": _rice_check,
}


def run(command, config, seed=None, workers=1):
    """Execute one command on a config mapping and return its records.

    Raises ``ConfigError`` for invalid configurations.
    """
    if command not in _DISPATCH:
        raise ConfigError(f"unknown command {command!r}")
    if not isinstance(config, dict):
        raise ConfigError("config must be a mapping of keys to values")
    if seed is None:
        seed = _number(config, "seed", DEFAULT_QMC_SEED, lo=0, integer=True)
    return list(_DISPATCH[command](config, seed, workers))


def _columns(records):
    """Keys in first-seen order: inputs, then the fixed trailer, then extras."""
    cols = []
    for rec in records:
        cols.extend(k for k in rec if k not in cols)
    return cols


def format_records(records, fmt):
    if fmt == "json":
        cols = _columns(records)
        ordered = [{c: rec.get(c) for c in cols if c in rec} for rec in records]
        return json.dumps(ordered, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_columns(records), lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.items()})
    return buf.getvalue()


def main(argv=None):
    parser = argparse.ArgumentParser(prog="excursets", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML or JSON run specification")
    parser.add_argument("--output", help="output file (default: stdout)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--timing", action="store_true",
                        help="report wall time per run on stderr")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            config = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        with np.errstate(all="ignore"):
            records = run(args.command, config or {}, seed=args.seed, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FactorizationError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return 3
    if args.timing:
        print(f"wall time: {time.perf_counter() - t0:.3f} s", file=sys.stderr)
    text = format_records(records, args.format)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
