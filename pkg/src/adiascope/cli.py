"""Command-line front end.

Commands read a JSON config whose top-level ``scenario`` object selects a
pulse train (``kind: "cp"``) or a drive (``b_pi``, ``b_2pi``, ``b_const``,
or ``drive`` for several kinds at once).  Unknown keys are rejected.
Exit codes: 0 success, 2 usage or config error, 3 numerical failure.
"""
import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .decompose import DIRECT_TOL, decompose_continuous, decompose_pulses
from .errors import AdiascopeError
from .experiments import (DRIVE_KINDS, GAMMA, CpScenario, DriveScenario, build_cp, build_drive,
                          gamma_objective, modulation_trace, resolve_jobs, solve_gamma,
                          sweep_cp, sweep_drive)
from .metrics import DEFAULT_SEED, QuadratureSpec, adiabaticity_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SWEEP_COLUMNS = ("sweep_var", "kind", "delta_u_err", "residual", "n_pulses_or_nprime",
                 "theta", "seed")

TOP_KEYS = {"scenario", "integrator", "quadrature", "samples"}
CP_KEYS = {"kind", "theta", "n", "phi_0", "phi_t", "amplitude", "angle"}
DRIVE_KEYS = {"kind", "kinds", "n_prime", "theta", "omega", "t_total", "gamma"}
INTEGRATOR_KEYS = {"slices_per_period", "path_steps"}
QUAD_KEYS = {"method", "n_polar", "n_azimuth", "samples", "seed"}


class ConfigError(Exception):
    pass


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _number(obj, key, default=None, where="scenario"):
    value = obj.get(key, default)
    if value is None:
        raise ConfigError(f"{where}.{key} is required")
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}.{key} must be a finite number, got {value!r}")
    return float(value)


def _integer(obj, key, default=None, where="scenario"):
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {value!r}")
    return value


def _values(raw, key, integer):
    """A scalar, a list, or an inclusive ``{"start", "stop", "step"}`` range."""
    if isinstance(raw, dict):
        _check_keys(raw, {"start", "stop", "step"}, f"scenario.{key}")
        start = _number(raw, "start", where=f"scenario.{key}")
        stop = _number(raw, "stop", where=f"scenario.{key}")
        step = _number(raw, "step", 1.0, where=f"scenario.{key}")
        if step <= 0:
            raise ConfigError(f"scenario.{key}.step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [start + k * step for k in range(max(count, 0))]
    elif isinstance(raw, list):
        values = raw
    else:
        values = [raw]
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"scenario.{key} entries must be numbers, got {v!r}")
        if integer:
            if float(v) != int(round(v)):
                raise ConfigError(f"scenario.{key} entries must be integers, got {v!r}")
            v = int(round(v))
        else:
            v = round(float(v), 12)
        out.append(v)
    if not out:
        raise ConfigError(f"scenario.{key} is empty")
    return out


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    _check_keys(cfg, TOP_KEYS, "config")
    if "scenario" not in cfg:
        raise ConfigError("config needs a top-level 'scenario' object")
    _check_keys(cfg["scenario"], CP_KEYS | DRIVE_KEYS, "scenario")
    kind = cfg["scenario"].get("kind")
    if kind == "cp":
        _check_keys(cfg["scenario"], CP_KEYS, "scenario (cp)")
    elif kind in DRIVE_KINDS or kind == "drive":
        _check_keys(cfg["scenario"], DRIVE_KEYS, "scenario (drive)")
    else:
        raise ConfigError(f"scenario.kind must be 'cp', 'drive' or one of {DRIVE_KINDS}, got {kind!r}")
    _check_keys(cfg.get("integrator", {}), INTEGRATOR_KEYS, "integrator")
    _check_keys(cfg.get("quadrature", {}), QUAD_KEYS, "quadrature")
    return cfg


def config_digest(cfg):
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def quadrature_from(cfg, seed=None):
    q = cfg.get("quadrature", {})
    try:
        return QuadratureSpec(
            method=q.get("method", "grid"),
            n_polar=_integer(q, "n_polar", 64, "quadrature"),
            n_azimuth=_integer(q, "n_azimuth", 128, "quadrature"),
            samples=_integer(q, "samples", 100_000, "quadrature"),
            seed=seed if seed is not None else _integer(q, "seed", DEFAULT_SEED, "quadrature"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _integrator(cfg):
    q = cfg.get("integrator", {})
    slices = _integer(q, "slices_per_period", 256, "integrator")
    steps = _integer(q, "path_steps", 4096, "integrator")
    if slices < 16 or steps < 16:
        raise ConfigError("integrator resolutions must be at least 16")
    return slices, steps


def _cp_fields(sc):
    theta = _number(sc, "theta")
    if not 0.0 <= theta <= math.pi:
        raise ConfigError("scenario.theta must lie in [0, pi]")
    return dict(theta=theta, phi_0=_number(sc, "phi_0", 0.0), phi_t=_number(sc, "phi_t", 2 * math.pi),
                amplitude=_number(sc, "amplitude", 1.0), angle=_number(sc, "angle", math.pi))


def _drive_fields(sc):
    return dict(theta=_number(sc, "theta", math.pi / 2), omega=_number(sc, "omega", 2 * math.pi),
                t_total=_number(sc, "t_total", 1.0), gamma=_number(sc, "gamma", GAMMA))


def _drive_kinds(sc):
    kind = sc["kind"]
    if "kinds" in sc:
        if kind != "drive":
            raise ConfigError("scenario.kinds is only allowed with kind 'drive'")
        kinds = sc["kinds"]
        if not isinstance(kinds, list) or not kinds or any(k not in DRIVE_KINDS for k in kinds):
            raise ConfigError(f"scenario.kinds must be a nonempty list drawn from {DRIVE_KINDS}")
        return kinds
    return list(DRIVE_KINDS) if kind == "drive" else [kind]


def _scenario(cfg, command):
    """Single scenario object for decompose / modulation."""
    sc = cfg["scenario"]
    try:
        if sc["kind"] == "cp":
            return CpScenario(n=_integer(sc, "n"), **_cp_fields(sc))
        kinds = _drive_kinds(sc)
        if len(kinds) != 1:
            raise ConfigError(f"{command} needs a single drive kind")
        return DriveScenario(kinds[0], _number(sc, "n_prime"), **_drive_fields(sc))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _matrix_columns(dim):
    return [f"m{i}{j}_{part}" for i in range(dim) for j in range(dim) for part in ("re", "im")]


def _matrix_row(m):
    flat = np.asarray(m).reshape(-1)
    return [_fmt(v) for z in flat for v in (z.real, z.imag)]


def _header(cfg, seed):
    return f"# adiascope {__version__} config_sha256={config_digest(cfg)} seed={seed}"


def _csv(lines):
    return "".join(line + "\n" for line in lines)


def _write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(out, csv_text, report_lines):
    report = _csv(report_lines)
    if out is not None:
        _write_atomic(out, csv_text)
        _write_atomic(Path(out).with_suffix(".txt"), report)
    else:
        sys.stdout.write(csv_text)
    sys.stdout.write(report)


def cmd_decompose(cfg, args):
    quad = quadrature_from(cfg, args.seed)
    slices, steps = _integrator(cfg)
    scenario = _scenario(cfg, "decompose")
    tol = DIRECT_TOL if args.tol is None else args.tol
    if isinstance(scenario, CpScenario):
        try:
            model, seq = build_cp(scenario)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        dec = decompose_pulses(model, seq, steps=steps, direct_tol=tol)
    else:
        model, path = build_drive(scenario)
        dec = decompose_continuous(model, path, direct_tol=tol, slices_per_period=slices)
    rep = adiabaticity_report(dec, quad)
    dim = dec.u_total.shape[0]
    lines = [_header(cfg, quad.seed), ",".join(["factor"] + _matrix_columns(dim))]
    for name in ("u_total", "u_dyn", "u_g1", "u_g2", "u_geo", "u_err", "u_err_direct"):
        lines.append(",".join([name] + _matrix_row(getattr(dec, name))))
    _emit(args.out, _csv(lines), [_header(cfg, quad.seed)] + rep.lines())
    return EXIT_OK


def _sweep_text(cfg, result, seed):
    lines = [_header(cfg, seed), ",".join(SWEEP_COLUMNS)]
    for r in result.rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in SWEEP_COLUMNS))
    return _csv(lines)


def _sweep_report(cfg, result, seed):
    lines = [_header(cfg, seed), f"{'kind':<8} {'x':>10} {'delta_u_err':>20} {'residual':>10}"]
    for r in result.rows:
        lines.append(f"{r.kind:<8} {_fmt(r.sweep_var):>10} {_fmt(r.delta_u_err):>20} "
                     f"{r.residual:10.2e}")
    return lines


def cmd_sweep_cp(cfg, args):
    sc = cfg["scenario"]
    if sc["kind"] != "cp":
        raise ConfigError("sweep-cp needs a scenario of kind 'cp'")
    quad = quadrature_from(cfg, args.seed)
    _, steps = _integrator(cfg)
    fields = _cp_fields(sc)
    n_values = _values(sc.get("n"), "n", integer=True)
    if min(n_values) < 1:
        raise ConfigError("scenario.n entries must be positive")
    if fields["phi_t"] <= fields["phi_0"]:
        raise ConfigError("scenario.phi_t must exceed phi_0")
    result = sweep_cp(fields["theta"], n_values, fields["phi_0"], fields["phi_t"], quad=quad,
                      jobs=args.jobs, steps=steps,
                      tol=DIRECT_TOL if args.tol is None else args.tol, angle=fields["angle"])
    _emit(args.out, _sweep_text(cfg, result, quad.seed), _sweep_report(cfg, result, quad.seed))
    return EXIT_OK


def cmd_sweep_drive(cfg, args):
    sc = cfg["scenario"]
    if sc["kind"] == "cp":
        raise ConfigError("sweep-drive needs a drive scenario")
    quad = quadrature_from(cfg, args.seed)
    slices, _ = _integrator(cfg)
    kinds = _drive_kinds(sc)
    if "n_prime" not in sc:
        raise ConfigError("scenario.n_prime is required")
    n_primes = _values(sc["n_prime"], "n_prime", integer=False)
    if min(n_primes) <= 0:
        raise ConfigError("scenario.n_prime entries must be positive")
    fields = _drive_fields(sc)
    if fields["t_total"] <= 0:
        raise ConfigError("scenario.t_total must be positive")
    result = sweep_drive(kinds, n_primes, fields["t_total"], fields["omega"], fields["theta"],
                         fields["gamma"], quad=quad, jobs=args.jobs, slices_per_period=slices,
                         tol=DIRECT_TOL if args.tol is None else args.tol)
    _emit(args.out, _sweep_text(cfg, result, quad.seed), _sweep_report(cfg, result, quad.seed))
    return EXIT_OK


def cmd_gamma(args):
    tol = 1e-12 if args.tol is None else args.tol
    if not math.isfinite(tol) or not 1e-12 <= tol < 1e-2:
        raise ConfigError(f"--tol for gamma-solve must lie in [1e-12, 1e-2), got {tol!r}")
    gamma = solve_gamma(tol)
    sys.stdout.write(f"gamma {gamma:.15g}\nobjective {gamma_objective(gamma):.3e}\n")
    return EXIT_OK


def cmd_modulation(cfg, args):
    scenario = _scenario(cfg, "modulation")
    samples = _integer(cfg, "samples", 1001, "config")
    if samples < 2:
        raise ConfigError("samples must be at least 2")
    try:
        trace = modulation_trace(scenario, samples=samples)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    lines = [_header(cfg, seed), "s,re,im"]
    lines += [f"{_fmt(s)},{_fmt(v.real)},{_fmt(v.imag)}" for s, v in zip(trace.s, trace.values)]
    report = [_header(cfg, seed), f"samples {len(trace.s)}",
              f"mean F  {_fmt(trace.values.mean().real)} {_fmt(trace.values.mean().imag)}"]
    _emit(args.out, _csv(lines), report)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adiascope",
        description="Factorize spin evolutions into dynamic, geometric and error parts.")
    parser.add_argument("--version", action="version", version=f"adiascope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON scenario config")
            p.add_argument("--out", help="CSV output path (default: stdout)")
            p.add_argument("--seed", type=int, help="override the quadrature seed")
            p.add_argument("--jobs", type=int, help="worker processes (env ADIASCOPE_JOBS)")
        p.add_argument("--tol", type=float, help="tolerance")
        return p

    common(sub.add_parser("decompose", help="factorize one scenario"))
    common(sub.add_parser("sweep-cp", help="error measure over pulse counts"))
    common(sub.add_parser("sweep-drive", help="error measure over modulation frequencies"))
    common(sub.add_parser("gamma-solve", help="solve for the B_pi modulation depth"), config=False)
    common(sub.add_parser("modulation", help="sample the modulation function"))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"decompose": cmd_decompose, "sweep-cp": cmd_sweep_cp,
                "sweep-drive": cmd_sweep_drive, "modulation": cmd_modulation}
    try:
        if args.command == "gamma-solve":
            return cmd_gamma(args)
        if args.tol is not None and not (math.isfinite(args.tol) and args.tol > 0):
            raise ConfigError(f"--tol must be positive, got {args.tol!r}")
        try:
            resolve_jobs(args.jobs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg = load_config(args.config)
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        print(f"adiascope: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdiascopeError as exc:
        print(f"adiascope: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
