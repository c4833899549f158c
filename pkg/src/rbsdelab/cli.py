"""Command line entry point: ``rbsdelab run|validate|list|schema``.

Exit codes: 0 all checks pass, 1 a check failed, 2 the configuration could
not be parsed, 3 a runtime error stopped the experiment.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, build, git_blob_sha1, load_config, resolved_dict
from .core import ConfigurationError, RBSDEError
from .experiments import assumption_report, run_experiment
from .registry import format_registry, list_registry

EXIT_OK, EXIT_FAILED, EXIT_PARSE, EXIT_RUNTIME = 0, 1, 2, 3


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``"nan"``/``"inf"``/``"-inf"``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_report(cfg: ExperimentConfig, raw: bytes, config_name: str, outcome, assumptions, overrides,
                 artifacts) -> dict:
    return {
        "version": __version__,
        "experiment": cfg.experiment,
        "description": cfg.description,
        "config": {"file": config_name, "sha1": git_blob_sha1(raw), "resolved": resolved_dict(cfg),
                   "overrides": overrides},
        "seeds": outcome.seeds,
        "tolerances": dict(cfg.tolerances.model_dump(mode="json"), **outcome.derived_tolerances),
        "assumptions": [a.to_dict() for a in assumptions],
        "checks": outcome.checks,
        "passed": outcome.passed,
        "result": outcome.result,
        "artifacts": artifacts,
    }


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load(path):
    try:
        return load_config(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None


def cmd_run(args) -> int:
    try:
        cfg, raw = _load(args.config)
        cfg = cfg.with_overrides(args.seed_override, args.paths_override)
        specs = build(cfg)
        assumptions = assumption_report(cfg, specs)
    except ConfigError as exc:
        _err(f"config error in {args.config}:\n{exc}")
        return EXIT_PARSE
    except Exception as exc:  # pydantic bounds on overrides
        _err(f"config error in {args.config}: {exc}")
        return EXIT_PARSE
    violated = [c for rep in assumptions for c in rep.checks if not c.passed]
    if violated:
        for c in violated:
            _err(f"config error in {args.config}: assumption '{c.name}' fails "
                 f"(excess {c.worst_excess:g} at {c.worst_point})")
        return EXIT_PARSE
    try:
        outcome = run_experiment(cfg, specs)
    except ConfigurationError as exc:
        _err(f"config error in {args.config}: {exc}")
        return EXIT_PARSE
    except (RBSDEError, FloatingPointError, np.linalg.LinAlgError) as exc:
        _err(f"runtime error in experiment {cfg.experiment!r} ({args.config}): {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    stem = cfg.output.name or Path(args.config).stem
    # the output location is not an input: it stays out of the report
    out_dir = Path(args.out_dir or cfg.output.dir)
    artifacts = {name: f"{stem}_{name}.csv" for name in sorted(outcome.tables)}
    overrides = {"seed": args.seed_override, "n_paths": args.paths_override}
    report = build_report(cfg, raw, Path(args.config).name, outcome, assumptions, overrides,
                          dict(artifacts, report=f"{stem}.json"))
    for name, fname in artifacts.items():
        write_atomic(out_dir / fname, outcome.tables[name])
    write_atomic(out_dir / f"{stem}.json", dumps(report))
    for c in outcome.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    print(f"report: {out_dir / (stem + '.json')}")
    return EXIT_OK if outcome.passed else EXIT_FAILED


def cmd_validate(args) -> int:
    try:
        cfg, raw = _load(args.config)
        assumptions = assumption_report(cfg, build(cfg))
    except ConfigError as exc:
        _err(f"config error in {args.config}:\n{exc}")
        return EXIT_PARSE
    ok = True
    for rep in assumptions:
        for c in rep.checks:
            ok &= c.passed
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  (n={c.n_checked}, worst excess {c.worst_excess:.3g})")
    print(f"config sha1 {git_blob_sha1(raw)}  experiment {cfg.experiment}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_list(args) -> int:
    catalog = list_registry()
    sys.stdout.write(dumps(catalog) if args.json else format_registry(catalog))
    return EXIT_OK


def cmd_schema(args) -> int:
    sys.stdout.write(dumps(ExperimentConfig.model_json_schema()))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbsdelab", description="Reflected BSDE solvers and verification experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run an experiment file")
    r.add_argument("config")
    r.add_argument("--seed-override", type=int, default=None)
    r.add_argument("--paths-override", type=int, default=None)
    r.add_argument("--out-dir", default=None)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="parse a config and sample the standing assumptions")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    ls = sub.add_parser("list", help="print the built-in registry")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=cmd_list)
    s = sub.add_parser("schema", help="print the JSON schema of experiment files")
    s.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
