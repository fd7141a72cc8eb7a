"""Command-line interface.

Usage:
    padic-schrodinger spectrum --p 2 --alpha 0.5 --b 0 --R 3 --S 3
    padic-schrodinger threshold --p 2 --alpha 0.5
    padic-schrodinger heat --p 3 --alpha 0.7 --t-min -4 --t-max 4
    padic-schrodinger green --p 3 --alpha 0.5 --b -0.1 --R 4 --S 4 --output green.csv
    padic-schrodinger witness --p 2 --alpha 0.7 --beta-off 0.3 --lam 0.1
    padic-schrodinger verify --suite all

Flags may also come from a TOML file (``--config run.toml``) using the flag names
with underscores as keys; explicit flags win.  CSV output is written with 17
significant digits, and a ``.meta.json`` sidecar holds the config echo and checks.
Exit codes: 0 success, 1 failed verification, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np

from . import checks, green, operators, schrodinger
from .operators import MultiplierSpec
from .padic import DEFAULT_CAP, CapExceeded, Grid

THREADS_ENV = "PADIC_SCHRODINGER_THREADS"

DEFAULTS: dict[str, Any] = {
    "p": 2,
    "alpha": 0.5,
    "R": 3,
    "S": 3,
    "format": None,
    "output": None,
    "extended": False,
    "cap": DEFAULT_CAP,
    # threshold
    "b_points": 21,
    "b_max": 5.0,
    # heat
    "t_min": -10,
    "t_max": 10,
    "t_step": 0.25,
    "d_min": -5,
    "d_max": 5,
    # green
    "estimator": "auto",
    "cross_check": False,
    "margin": 2,
    # witness
    "beta_off": 0.3,
    "lam": 0.1,
    "K": 12,
    # verify
    "suite": "all",
}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any]

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError as exc:
            raise AttributeError(name) from exc

    def echo(self) -> dict[str, Any]:
        return {"command": self.command, **{k: v for k, v in sorted(self.values.items()) if k not in ("config",)}}


@dataclass
class ReportEnvelope:
    meta: dict
    payload: Any
    checks: list = field(default_factory=list)
    columns: list | None = None

    @property
    def ok(self) -> bool:
        return all(c["passed"] for c in self.checks)


# -- argument handling -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="padic-schrodinger", description="Hierarchical Schrodinger operators on truncated p-adic grids.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, grid=True, coupling=False):
        sp.add_argument("--config", type=Path, help="TOML file with default values")
        sp.add_argument("--p", type=int)
        sp.add_argument("--alpha", type=float)
        if grid:
            sp.add_argument("--R", type=int)
            sp.add_argument("--S", type=int)
            sp.add_argument("--cap", type=int, help="largest dense grid (cells)")
        if coupling:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--b", type=float, help="coupling of ||x||**-alpha")
            g.add_argument("--beta", type=float, help="ground-state exponent instead of b")
        sp.add_argument("--output", type=Path, help="output file (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--extended", action="store_true", default=None, help="extended precision for Gamma_p")

    sp = sub.add_parser("spectrum", help="eigenvalues of H_N")
    common(sp, coupling=True)

    sp = sub.add_parser("threshold", help="critical coupling and the b <-> beta map")
    common(sp, grid=False)
    sp.add_argument("--b-points", type=int)
    sp.add_argument("--b-max", type=float)

    sp = sub.add_parser("heat", help="heat kernel on a log grid")
    common(sp, grid=False)
    sp.add_argument("--t-min", type=float, help="log_p of the smallest time")
    sp.add_argument("--t-max", type=float, help="log_p of the largest time")
    sp.add_argument("--t-step", type=float, help="log_p spacing of times")
    sp.add_argument("--d-min", type=int, help="log_p of the smallest distance")
    sp.add_argument("--d-max", type=int, help="log_p of the largest distance")

    sp = sub.add_parser("green", help="Green table and ratio diagnostics")
    common(sp, coupling=True)
    sp.add_argument("--estimator", choices=("auto", "matrix_inverse", "orbit_reduced"))
    sp.add_argument("--cross-check", action="store_true", default=None)
    sp.add_argument("--margin", type=int)

    sp = sub.add_parser("witness", help="negative-spectrum witness search")
    common(sp, grid=False)
    sp.add_argument("--beta-off", type=float)
    sp.add_argument("--lam", type=float)
    sp.add_argument("--K", type=int)

    sp = sub.add_parser("verify", help="run named invariant checks")
    sp.add_argument("--config", type=Path)
    sp.add_argument("--suite", choices=sorted(checks.SUITES) + ["all"])
    sp.add_argument("--output", type=Path)
    sp.add_argument("--format", choices=("csv", "json"))
    return parser


def _load_toml(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        values.update(_load_toml(args.config))
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        values[k] = v
    if args.command in ("spectrum", "green"):
        has_b = values.get("b") is not None
        has_beta = values.get("beta") is not None
        if has_b == has_beta:
            if not has_b and args.command == "spectrum":
                values["b"] = 0.0
            else:
                raise ValueError("give exactly one of --b and --beta")
    for key in ("output",):
        if values.get(key) is not None:
            values[key] = str(values[key])
    cfg = RunConfig(args.command, values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    if cfg.command == "verify":
        return
    if not v["alpha"] > 0:
        raise ValueError("alpha must be positive")
    pure_laplacian = cfg.command == "spectrum" and v.get("b") == 0 and v.get("beta") is None
    if cfg.command in ("spectrum", "green", "threshold", "witness") and not v["alpha"] < 1 and not pure_laplacian:
        raise ValueError(f"{cfg.command} needs 0 < alpha < 1")
    if pure_laplacian and v["alpha"] == 1:
        raise ValueError("alpha = 1 is not supported")
    if cfg.command in ("spectrum", "green"):
        Grid(v["p"], v["R"], v["S"], v["cap"])
    else:
        Grid(v["p"], 1, 1)
    if cfg.command == "heat" and not v["t_min"] <= v["t_max"]:
        raise ValueError("t-min must not exceed t-max")
    if cfg.command == "witness" and not 0 < v["beta_off"] < 1:
        raise ValueError("witness needs 0 < beta-off < 1")


# -- commands ----------------------------------------------------------------------


def _coupling(cfg: RunConfig) -> tuple[float, float | None]:
    if cfg.values.get("beta") is not None:
        beta = cfg.beta
        tm = schrodinger.ThresholdMap(cfg.p, cfg.alpha, cfg.extended)
        return (0.0 if beta == 0 else tm.b_from_beta(beta)), beta
    return cfg.b, None


def cmd_spectrum(cfg: RunConfig) -> ReportEnvelope:
    grid = Grid(cfg.p, cfg.R, cfg.S, cfg.cap)
    spec = MultiplierSpec.power(cfg.p, cfg.alpha)
    b, _ = _coupling(cfg)
    pot = None if b == 0 else schrodinger.PotentialSpec.inverse_power(b, cfg.alpha)
    H = schrodinger.assemble_hamiltonian(grid, spec, pot)
    res = schrodinger.eigen_spectrum(H)
    ev = res.eigenvalues
    report_checks = [
        checks._result("trace invariance", abs(ev.sum() / np.trace(H.entries) - 1), 1e-9).as_dict(),
    ]
    if b == 0:
        cf = operators.closed_form_spectrum(grid, spec)
        report_checks.append(checks._result("closed-form spectrum", float(np.max(np.abs(ev - cf) / cf)), 1e-9).as_dict())
    else:
        b_star = schrodinger.ThresholdMap(cfg.p, cfg.alpha).b_star()
        if b >= b_star:
            report_checks.append(checks._result("nonnegative at b >= b*", float(ev[0]), -1e-10, upper=False).as_dict())
    rows = [[i, float(x)] for i, x in enumerate(ev)]
    meta = {"N": grid.size, "tail": H.tail, "b": b, "min_eigenvalue": float(ev[0])}
    return ReportEnvelope(meta=meta, payload=rows, checks=report_checks, columns=["index", "eigenvalue"])


def cmd_threshold(cfg: RunConfig) -> ReportEnvelope:
    tm = schrodinger.ThresholdMap(cfg.p, cfg.alpha, cfg.extended)
    bs = tm.b_star()
    samples = []
    worst = 0.0
    for b in np.linspace(bs, cfg.b_max, cfg.b_points):
        b = float(b)
        upper = tm.beta_from_b(b, "upper")
        lower = tm.beta_from_b(b, "lower") if b <= 0 else None
        back = tm.b_from_beta(upper)
        worst = max(worst, abs(back - b))
        samples.append({"b": b, "beta_upper": upper, "beta_lower": lower, "b_roundtrip": back})
    payload = {
        "b_star": bs,
        "C_alpha_at_infinity": -float(cfg.p) ** cfg.alpha,
        "samples": samples,
    }
    rc = [checks._result("b -> beta -> b round trip", worst, 1e-10).as_dict()]
    cols = ["b", "beta_upper", "beta_lower", "b_roundtrip"]
    rows = [[s[c] if s[c] is not None else math.nan for c in cols] for s in samples]
    return ReportEnvelope(meta={"b_star": bs}, payload=payload, checks=rc, columns=cols) if cfg.format != "csv" else ReportEnvelope(
        meta={"b_star": bs}, payload=rows, checks=rc, columns=cols
    )


def cmd_heat(cfg: RunConfig) -> ReportEnvelope:
    spec = MultiplierSpec.power(cfg.p, cfg.alpha)
    P = float(cfg.p)
    n = int(round((cfg.t_max - cfg.t_min) / cfg.t_step)) + 1
    rows = []
    ratios = []
    for e in np.linspace(cfg.t_min, cfg.t_max, n):
        t = P ** float(e)
        for k in range(cfg.d_min, cfg.d_max + 1):
            d = P**k
            val = operators.heat_kernel(spec, t, d)
            ratio = val * (t ** (1 / cfg.alpha) + d) ** (1 + cfg.alpha) / t
            ratios.append(ratio)
            rows.append([t, d, val, ratio])
    mass = operators.heat_kernel_mass(spec, P ** (0.5 * (cfg.t_min + cfg.t_max)))
    meta = {"ratio_min": min(ratios), "ratio_max": max(ratios), "ratio_spread": max(ratios) / min(ratios)}
    rc = [checks._result("heat kernel mass", abs(mass - 1), 1e-8).as_dict()]
    return ReportEnvelope(meta=meta, payload=rows, checks=rc, columns=["t", "dist", "density", "ratio"])


def cmd_green(cfg: RunConfig) -> ReportEnvelope:
    grid = Grid(cfg.p, cfg.R, cfg.S, cfg.cap)
    b, beta = _coupling(cfg)
    table = green.green_table(grid, cfg.alpha, beta=beta, b=None if beta is not None else b, estimator=cfg.estimator, cross_check=cfg.cross_check)
    diag = green.ratio_diagnostics(table, cfg.margin)
    meta = {
        **table.meta,
        "b": table.b,
        "beta": table.beta,
        "estimator": table.estimator,
        "rho_min": diag.rho_min,
        "rho_max": diag.rho_max,
        "rho_spread": diag.rho_spread,
        "sigma_spread": diag.sigma_spread,
        "sigma_alt_spread": diag.sigma_alt_spread,
    }
    rc = []
    if cfg.cross_check:
        meta["estimator_gap"] = green.estimator_gap(table, cfg.margin)
    cols = ["norm_x", "norm_y", "dist", "g_H", "g_L", "ratio", "predicted_factor"]
    rows = [[r[c] for c in cols] for r in diag.rows]
    return ReportEnvelope(meta=meta, payload=rows, checks=rc, columns=cols)


def cmd_witness(cfg: RunConfig) -> ReportEnvelope:
    res = schrodinger.negative_witness(cfg.alpha, cfg.beta_off, cfg.lam, cfg.p, K=cfg.K)
    w = schrodinger.w_formula_check(cfg.p, cfg.alpha, res.best_j, cfg.K)
    payload = {
        "found": res.found,
        "j": res.j,
        "quotient": res.quotient,
        "best_j": res.best_j,
        "best_quotient": res.best_quotient,
        "energy": res.energy,
        "potential_energy": res.potential_energy,
        "norm_squared": res.norm_squared,
        "W_numeric": w.W_numeric,
        "W_exact": w.W_exact,
        "W_relative_error": w.relative_error,
    }
    cols = list(payload)
    rows = [[payload[c] for c in cols]]
    return ReportEnvelope(meta={}, payload=payload if cfg.format != "csv" else rows, columns=cols)


def cmd_verify(cfg: RunConfig) -> ReportEnvelope:
    results = [r.as_dict() for r in checks.run_suite(cfg.suite)]
    cols = ["name", "passed", "measured", "tolerance", "detail"]
    rows = [[r[c] for c in cols] for r in results]
    return ReportEnvelope(meta={"suite": cfg.suite}, payload=rows if cfg.format == "csv" else results, checks=results, columns=cols)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "threshold": cmd_threshold,
    "heat": cmd_heat,
    "green": cmd_green,
    "witness": cmd_witness,
    "verify": cmd_verify,
}

DEFAULT_FORMAT = {"spectrum": "csv", "heat": "csv", "green": "csv", "threshold": "json", "witness": "json", "verify": "json"}


# -- emission ---------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def render_csv(report: ReportEnvelope) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.payload:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def render_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def emit(report: ReportEnvelope, fmt: str, output: str | None, stream=None) -> None:
    stream = stream or sys.stdout
    envelope = {"meta": report.meta, "checks": report.checks}
    if fmt == "csv":
        text = render_csv(report)
        if output:
            Path(output).write_text(text)
            Path(output + ".meta.json").write_text(render_json(envelope))
        else:
            stream.write(text)
        return
    envelope["payload"] = report.payload
    text = render_json(envelope)
    if output:
        Path(output).write_text(text)
    else:
        stream.write(text)


def run(cfg: RunConfig) -> tuple[ReportEnvelope, int]:
    report = COMMANDS[cfg.command](cfg)
    report.meta = {"config": cfg.echo(), "version": _version(), **report.meta}
    return report, (0 if report.ok or cfg.command != "verify" else 1)


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ValueError, CapExceeded, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    fmt = cfg.format or DEFAULT_FORMAT[cfg.command]
    cfg.values["format"] = fmt
    try:
        with _thread_limit():
            report, code = run(cfg)
    except (CapExceeded, schrodinger.OutOfRange, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    emit(report, fmt, cfg.output)
    return code


if __name__ == "__main__":
    sys.exit(main())
