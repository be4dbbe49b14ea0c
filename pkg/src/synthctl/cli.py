"""Command-line front end.

Subcommands::

    synthctl check  (--config PATH | --scenario NAME)
    synthctl run    (--config PATH | --scenario NAME) [--output PATH] [--format csv|json]
    synthctl sweep  ... --parameter NAME --values v1,v2,...

Exit codes: 0 success, 1 configuration error, 2 not controllable,
3 failure of a pipeline stage (the stage is named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .closed_loop import IntegrationConfig
from .errors import (ConfigError, ExprError, NotControllable, NotControllableAtTarget,
                     PoleConditionViolated, RankDeficient, StageError)
from .pipeline import RunOptions, run
from .scenarios import get_scenario, test_systems
from .shift_cascade import build_PQ, compute_phis
from .stabilizer import build_feedback, build_S2, rank_check_S2
from .system_model import SystemModel, kalman_rank, rank_S1

EXIT_OK, EXIT_CONFIG, EXIT_UNCONTROLLABLE, EXIT_STAGE = 0, 1, 2, 3
SWEEP_PARAMETERS = ("tau_max", "alpha", "xbar_scale", "F_scale")

log = logging.getLogger("synthctl")


@dataclass(frozen=True)
class RunConfig:
    model: SystemModel
    xbar: tuple
    alpha: float = 0.1
    poles: tuple | None = None
    depth: int | None = None
    integration: IntegrationConfig = IntegrationConfig()
    fmt: str = "csv"
    output: str | None = None

    def options(self) -> RunOptions:
        return RunOptions(alpha=self.alpha, poles=self.poles, depth=self.depth,
                          integration=self.integration)


def _floats(value, name, length=None) -> tuple:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers") from None
    if length is not None and len(out) != length:
        raise ConfigError(f"{name} must have {length} entries, got {len(out)}")
    return out


def load_document(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def build_config(doc: dict, args=None) -> RunConfig:
    """Resolve a config document plus command-line overrides into a :class:`RunConfig`."""
    if ("system" in doc) == ("scenario" in doc):
        raise ConfigError("config needs exactly one of 'system' and 'scenario'")
    defaults = {}
    if "scenario" in doc:
        try:
            sc = get_scenario(doc["scenario"])
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        model = sc.model
        defaults = {"xbar": sc.xbar, "alpha": sc.alpha, "poles": sc.poles,
                    "shift_depth": sc.depth, "tau_max": sc.tau_max}
    else:
        sysdoc = doc["system"]
        if not isinstance(sysdoc, dict) or "rhs" not in sysdoc or "r" not in sysdoc:
            raise ConfigError("'system' needs 'rhs' and 'r'")
        rhs = sysdoc["rhs"]
        if "n" in sysdoc and sysdoc["n"] != len(rhs):
            raise ConfigError(f"system n={sysdoc['n']} but {len(rhs)} right-hand sides")
        try:
            model = SystemModel.from_strings(rhs, int(sysdoc["r"]), sysdoc.get("params", {}),
                                             name=sysdoc.get("name", "system"))
        except ExprError as exc:
            raise ConfigError(f"bad right-hand side: {exc}") from None
    bounds = doc.get("bounds", {})
    if bounds:
        model = replace(model, control_bound=float(bounds.get("N", model.control_bound)),
                        state_bound=float(bounds.get("C1", model.state_bound)))

    merged = {**defaults, **{k: v for k, v in doc.items() if v is not None}}
    if args is not None:
        for key, attr in (("alpha", "alpha"), ("poles", "poles"), ("tau_max", "tau_max"),
                          ("shift_depth", "depth")):
            val = getattr(args, attr, None)
            if val is not None:
                merged[key] = val
    if "xbar" not in merged:
        raise ConfigError("config needs 'xbar'")
    xbar = _floats(merged["xbar"], "xbar", model.n)
    poles = merged.get("poles")
    poles = None if poles is None else _floats(poles, "poles", model.n)
    alpha = float(merged.get("alpha", 0.1))
    depth = merged.get("shift_depth")
    depth = None if depth is None else int(depth)

    integ = dict(merged.get("integrator", {}))
    out = dict(merged.get("output", {}))
    F = merged.get("perturbation")
    kwargs = {"tau_max": float(merged.get("tau_max", 12.5))}
    for key in ("method", "rtol", "atol", "step"):
        if key in integ:
            kwargs[key] = integ[key]
    if "samples" in out:
        kwargs["samples"] = int(out["samples"])
    if F is not None:
        kwargs["perturbation"] = _floats(F, "perturbation", model.n)
    cfg = IntegrationConfig(**kwargs)

    fmt = out.get("format", "csv")
    path = out.get("path")
    if args is not None:
        fmt = getattr(args, "format", None) or fmt
        path = getattr(args, "output", None) or path
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown output format {fmt!r}")
    return RunConfig(model, xbar, alpha, poles, depth, cfg, fmt, path)


def _config_from_args(args) -> RunConfig:
    if args.config and args.scenario:
        raise ConfigError("use either --config or --scenario, not both")
    if args.config:
        doc = load_document(args.config)
    elif args.scenario:
        doc = {"scenario": args.scenario}
    else:
        raise ConfigError("one of --config or --scenario is required")
    return build_config(doc, args)


def _num(v) -> str:
    return repr(float(v))


def trajectory_csv(result) -> str:
    n, r = result.x.shape[1], result.u.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "tau"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(r)])
    for t, tau, x, u in zip(result.t, result.aux.tau, result.x, result.u):
        w.writerow([_num(t), _num(tau)] + [_num(v) for v in x] + [_num(v) for v in u])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _matrices(cfg: RunConfig) -> dict:
    m = cfg.model
    cascade = compute_phis(m, cfg.xbar, cfg.alpha, cfg.depth)
    pq = build_PQ(m, cascade)
    s2 = build_S2(pq.P, pq.Q)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PoleConditionViolated)
        law = build_feedback(s2, cfg.poles)
    return {"shift_coefficients": cascade.offset.coeffs[:, :, 0],
            "P": pq.P.coeffs, "Q": pq.Q.coeffs, "S2": s2.S2.coeffs,
            "M_at_0": law.gain(0.0)}


def _fail(exc) -> int:
    if isinstance(exc, ConfigError):
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if isinstance(exc, (NotControllable, NotControllableAtTarget)):
        print(f"not controllable: {exc}", file=sys.stderr)
        return EXIT_UNCONTROLLABLE
    if isinstance(exc, StageError):
        print(f"stage {exc.stage} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    raise exc


def cmd_check(args) -> int:
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        return _fail(exc)
    m = cfg.model
    lin = m.linearization()
    kal = kalman_rank(lin.A, lin.B)
    if kal.rank < m.n:
        print(f"kalman_rank={kal.rank} n={m.n}")
        print("verdict=not_controllable")
        return EXIT_UNCONTROLLABLE
    try:
        s1 = rank_S1(m, cfg.xbar)
    except NotControllableAtTarget as exc:
        print(f"kalman_rank={kal.rank} n={m.n}")
        print(f"verdict=not_controllable_at_target ({exc})")
        return EXIT_UNCONTROLLABLE
    except ConfigError as exc:
        return _fail(exc)
    print(f"kalman_rank={kal.rank} k=({','.join(str(k) for k in s1.block_sizes)})")
    print(f"S1_rank={s1.rank} n={m.n}")
    try:
        cascade = compute_phis(m, cfg.xbar, cfg.alpha, cfg.depth)
        pq = build_PQ(m, cascade)
        s2 = build_S2(pq.P, pq.Q)
    except RankDeficient as exc:
        print(f"verdict=S2_rank_deficient ({exc})")
        return EXIT_UNCONTROLLABLE
    except StageError as exc:
        return _fail(exc)
    chk = rank_check_S2(s2)
    print(f"S2_rank={chk['rank']} S2_condition={chk['condition']:.6g} "
          f"depth={cascade.depth}")
    print("verdict=controllable")
    return EXIT_OK


def _emit_run(cfg: RunConfig, result, args) -> None:
    report = dict(result.report)
    if getattr(args, "dump_matrices", False):
        report["matrices"] = _matrices(cfg)
    if cfg.fmt == "json":
        payload = {"columns": ["t", "tau"] + [f"x{i + 1}" for i in range(cfg.model.n)]
                   + [f"u{j + 1}" for j in range(cfg.model.r)],
                   "t": result.t, "tau": result.aux.tau, "x": result.x, "u": result.u,
                   "report": report}
        text = _dump(payload)
    else:
        text = trajectory_csv(result)
    if cfg.output:
        out = Path(cfg.output)
        _write_atomic(out, text)
        if cfg.fmt == "csv":
            _write_atomic(out.with_name(out.name + ".report.json"), _dump(report))
    else:
        sys.stdout.write(text)
        if cfg.fmt == "csv":
            sys.stderr.write(_dump(report))
    if getattr(args, "figures", None):
        from .plotting import write_figures
        for p in write_figures(result, args.figures):
            log.info("wrote %s", p)


def cmd_run(args) -> int:
    try:
        cfg = _config_from_args(args)
        result = run(cfg.model, cfg.xbar, cfg.options())
    except (ConfigError, StageError) as exc:
        return _fail(exc)
    _emit_run(cfg, result, args)
    return EXIT_OK


def _sweep_variant(cfg: RunConfig, parameter: str, value: float) -> RunConfig:
    if parameter == "tau_max":
        return replace(cfg, integration=replace(cfg.integration, tau_max=value))
    if parameter == "alpha":
        return replace(cfg, alpha=value)
    if parameter == "xbar_scale":
        return replace(cfg, xbar=tuple(value * v for v in cfg.xbar))
    # F_scale: scales the configured perturbation, or a unit vector when none is set
    base = cfg.integration.perturbation or (1.0,) * cfg.model.n
    return replace(cfg, integration=replace(cfg.integration,
                                            perturbation=tuple(value * v for v in base)))


SWEEP_COLUMNS = ("value", "status", "stage", "terminal_error", "peak_control",
                 "state_slope", "control_slope")


def sweep_rows(cfg: RunConfig, parameter: str, values) -> list[dict]:
    rows = []
    for v in values:
        row = {"value": v, "status": "ok", "stage": "", "terminal_error": float("nan"),
               "peak_control": float("nan"), "state_slope": float("nan"),
               "control_slope": float("nan")}
        try:
            variant = _sweep_variant(cfg, parameter, v)
            res = run(variant.model, variant.xbar, variant.options())
            rep = res.report
            row.update(terminal_error=rep["terminal_error"], peak_control=rep["peak_control"])
            decay = rep.get("decay", {})
            row.update(state_slope=decay.get("state_slope", float("nan")),
                       control_slope=decay.get("control_slope", float("nan")))
        except (StageError, ConfigError) as exc:
            row.update(status="failed", stage=getattr(exc, "stage", "config"))
            log.warning("sweep value %r failed: %s", v, exc)
        rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    try:
        cfg = _config_from_args(args)
        if args.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"parameter must be one of {', '.join(SWEEP_PARAMETERS)}")
        values = _floats(args.values or "", "values")
        if not values:
            raise ConfigError("sweep needs at least one value")
    except ConfigError as exc:
        return _fail(exc)
    rows = sweep_rows(cfg, args.parameter, values)
    if cfg.fmt == "json":
        text = _dump({"parameter": args.parameter, "rows": rows})
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_num(row[k]) if isinstance(row[k], float) else row[k]
                        for k in SWEEP_COLUMNS])
        text = buf.getvalue()
    if cfg.output:
        _write_atomic(Path(cfg.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_STAGE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--scenario", metavar="NAME",
                        help=f"built-in scenario ({', '.join(sorted(test_systems()))})")
    common.add_argument("--alpha", type=float)
    common.add_argument("--poles", type=lambda s: _floats(s, "poles"),
                        help='comma separated, e.g. "-1,-2,-3"')
    common.add_argument("--tau-max", dest="tau_max", type=float)
    common.add_argument("--depth", type=int, help="shift depth K")
    common.add_argument("--output", metavar="PATH")
    common.add_argument("--format", choices=("csv", "json"))

    parser = argparse.ArgumentParser(prog="synthctl",
                                     description="Synthesizing feedback for steering problems.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", parents=[common], help="controllability verdicts")
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("run", parents=[common], help="synthesize and integrate")
    p.add_argument("--dump-matrices", action="store_true",
                   help="include shift, P, Q, S2 coefficients and M(0) in the report")
    p.add_argument("--figures", metavar="DIR", help="also write PNG plots into DIR")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", parents=[common], help="repeat run over parameter values")
    p.add_argument("--parameter", required=True)
    p.add_argument("--values", default="", help='comma separated, e.g. "5,10,15"')
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SYNTHCTL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are config errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
