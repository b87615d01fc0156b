"""Command line entry point: ``mvsde {simulate,converge,validate,moments,chaos}``.

Exit codes: 0 success, 1 configuration error, 2 divergence during a run,
3 too many diverged repetitions in a convergence study, 4 derivative
validation failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import chaos_study, moment_track, strong_error, validate_derivatives
from .measure import EmpiricalMeasure
from .model import MODELS, build_model
from .scheme import SCHEMES, InitialLaw, SimConfig, simulate

log = logging.getLogger("mvsde")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_STUDY_DIVERGED, EXIT_VALIDATION = 0, 1, 2, 3, 4

_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "N"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string", "enum": sorted(MODELS)},
                "params": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
        "N": _POS_INT,
        "n": _POS_INT,
        "n_fine": _POS_INT,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "scheme": {"enum": list(SCHEMES)},
        "taming": {"type": "boolean"},
        "seed": {"type": "integer"},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "gaussian", "uniform"]},
                "params": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"path": {"type": "string"}, "stride": _POS_INT},
        },
        "levels": {"type": "array", "items": _POS_INT, "minItems": 2},
        "n_ref": _POS_INT,
        "repetitions": _POS_INT,
    },
}


class ConfigError(Exception):
    pass


def _locate(text: str, path) -> int:
    """Best-effort 1-based line of the JSON element at ``path``."""
    pos = 0
    for key in path:
        if isinstance(key, str):
            found = text.find(json.dumps(key), pos)
            if found < 0:
                break
            pos = found
    return text.count("\n", 0, pos) + 1


def load_config(path: str | Path, mode: str) -> dict:
    """Read and schema-check a config file; raises ConfigError with a line number."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None

    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            allowed = err.schema.get("properties", {})
            extra = [k for k in err.instance if k not in allowed]
            where = where + extra[:1]
        loc = "/".join(str(p) for p in where) or "<root>"
        raise ConfigError(f"{path}:{_locate(text, where)}: {loc}: {err.message}")

    needed = {"converge": ("levels", "n_ref", "repetitions")}.get(mode, ("n",))
    missing = [k for k in needed if k not in cfg]
    if missing:
        raise ConfigError(f"{path}:1: '{mode}' needs keys {missing}")
    return cfg


def build_run(cfg: dict, seed: int | None = None, threads: int = 1, lambda2: bool = True):
    """Turn a checked config dict into (model, SimConfig)."""
    mcfg = cfg["model"]
    try:
        model = build_model(mcfg["name"], mcfg.get("params", {}))
    except TypeError as err:
        raise ConfigError(f"model params: {err}") from None
    init = cfg.get("initial", {"kind": "constant"})
    n = cfg.get("n", max(cfg.get("levels", [1])))
    try:
        sim = SimConfig(
            N=cfg["N"],
            n=n,
            T=float(cfg.get("T", 1.0)),
            scheme=cfg.get("scheme", "milstein"),
            seed=cfg.get("seed", 0) if seed is None else seed,
            initial=InitialLaw(init["kind"], dict(init.get("params", {}))),
            n_fine=cfg.get("n_fine"),
            stride=cfg.get("output", {}).get("stride", 1),
            taming=cfg.get("taming", True),
            lambda2=lambda2,
            workers=threads,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return model, sim


def trajectory_csv(traj, d: int) -> str:
    buf = io.StringIO()
    buf.write("step,t,particle," + ",".join(f"x_{p + 1}" for p in range(d)) + "\n")
    for s in traj.states:
        for i, row in enumerate(s.X):
            buf.write(f"{s.k},{s.t!r},{i}," + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def _emit(text: str, out: str | None, cfg: dict | None = None) -> None:
    target = out or (cfg or {}).get("output", {}).get("path")
    if target:
        Path(target).write_text(text)
    else:
        sys.stdout.write(text)


def _divergence_json(event) -> str:
    return json.dumps(event.as_dict())


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, "simulate")
    model, sim = build_run(cfg, args.seed, args.threads, not args.no_lambda2)
    traj = simulate(sim, model)
    _emit(trajectory_csv(traj, model.d), args.out, cfg)
    if traj.diverged:
        print(_divergence_json(traj.divergence), file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = load_config(args.config, "converge")
    model, sim = build_run(cfg, args.seed, args.threads, not args.no_lambda2)
    levels = cfg["levels"]
    try:
        report = strong_error(model, replace(sim, workers=1), levels, cfg["n_ref"], cfg["repetitions"], workers=args.threads)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if args.metric == "sup":
        report = replace(report, rmse=report.rmse_sup, slope=report.slope_sup)
    _emit(report.to_csv(), args.out, cfg)
    print(f"slope={report.slope_label()}")
    if report.failed:
        print(
            json.dumps({"event": "excessive_divergence", "diverged": report.diverged,
                        "repetitions": report.repetitions}),
            file=sys.stderr,
        )
        return EXIT_STUDY_DIVERGED
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        params = json.loads(args.params) if args.params else {}
        model = build_model(args.model, params)
    except (ValueError, TypeError) as err:
        raise ConfigError(str(err)) from None
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(-1.5, 1.5, size=model.d)
    mu = EmpiricalMeasure(rng.uniform(-1.5, 1.5, size=(args.atoms, model.d)))
    failures = []
    worst = 0.0
    for j in range(mu.N):
        rep = validate_derivatives(model, x, mu, j, eps=args.eps, rtol=args.rtol)
        worst = max(worst, rep.max_error)
        failures.extend(rep.failures)
    print(f"model={args.model} eps={args.eps:g} rtol={args.rtol:g} max_error={worst:.3e}")
    if failures:
        seen = set()
        for c in failures:
            if c.label() in seen:
                continue
            seen.add(c.label())
            print(f"FAIL {c.label()}: finite difference {c.finite_difference:.6e} vs analytic {c.analytic:.6e}")
        return EXIT_VALIDATION
    print("PASS")
    return EXIT_OK


def cmd_moments(args) -> int:
    cfg = load_config(args.config, "moments")
    model, sim = build_run(cfg, args.seed, args.threads, not args.no_lambda2)
    traj = simulate(sim, model)
    series = moment_track(traj, args.p)
    lines = ["step,t,moment"]
    ks = [s.k for s in traj.states] + ([traj.divergence.step + 1] if traj.diverged else [])
    for k, t, v in zip(ks, series.t, series.values):
        lines.append(f"{k},{float(t)!r},{float(v)!r}")
    _emit("\n".join(lines) + "\n", args.out, cfg)
    print(f"max_moment={series.max!r}")
    if traj.diverged:
        print(_divergence_json(traj.divergence), file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_chaos(args) -> int:
    cfg = load_config(args.config, "chaos")
    model, sim = build_run(cfg, args.seed, args.threads, not args.no_lambda2)
    try:
        sizes = [int(s) for s in args.sizes.split(",")]
        report = chaos_study(model, sim, sizes, args.repetitions)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    except ArithmeticError as err:
        print(json.dumps({"event": "divergence", "detail": str(err)}), file=sys.stderr)
        return EXIT_DIVERGED
    _emit(report.to_csv(), args.out, cfg)
    print(" ".join(f"{k}_decreasing={v}" for k, v in report.decreasing().items()))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON experiment config")
            p.add_argument("--no-lambda2", action="store_true",
                           help="diagnostic: drop the measure-derivative correction")
        p.add_argument("--out", help="output CSV path (default: config output.path, else stdout)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")

    p = sub.add_parser("simulate", help="run the particle system and write the trajectory")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("converge", help="strong error study against a fine reference")
    common(p)
    p.add_argument("--metric", choices=["terminal", "sup"], default="terminal")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("validate", help="finite-difference check of a model's derivatives")
    common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--params", help="JSON object of model parameters")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--atoms", type=int, default=5)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("moments", help="track the empirical p-th moment over time")
    common(p)
    p.add_argument("--p", type=float, default=4.0)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("chaos", help="compare terminal laws across particle counts")
    common(p)
    p.add_argument("--sizes", default="256,1024,4096")
    p.add_argument("--repetitions", type=int, default=8)
    p.set_defaults(func=cmd_chaos)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    if args.command == "validate" and args.seed is None:
        args.seed = 0
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
