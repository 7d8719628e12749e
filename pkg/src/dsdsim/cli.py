"""Batch front end: ``dsdsim list | run | check``.

Precedence for every setting: command-line flag, then ``--set``, then the
``--config`` file, then ``DSDSIM_SEED`` (seed only), then the scenario preset.
Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import ExperimentSpec, rows_to_csv, rows_to_json, run_experiment
from .scenarios import REGISTRY, get

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

_TUPLE_ITEM = {"snr_db": float, "speeds_kmh": float, "paths": int, "bits": int, "methods": str,
               "horizons": int}
_SCALAR = {"int": int, "float": float, "str": str, "bool": None}
_FLAG_KEYS = {"snr": "snr_db", "speed": "speeds_kmh", "paths": "paths", "frames": "frames",
              "polls": "polls", "trials": "trials"}


class UsageError(Exception):
    pass


def valid_keys() -> list[str]:
    return [k for k in ExperimentSpec.field_names() if k != "scenario"]


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def expand_range(text: str, kind=float) -> tuple:
    """``"0:2:10"`` -> ``(0, 2, ..., 10)``; comma lists and single values pass through."""
    items = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part and kind is not str:
            bits = part.split(":")
            if len(bits) != 3:
                raise UsageError(f"range must be start:step:stop, got {part!r}")
            start, step, stop = (float(b) for b in bits)
            if step == 0 or (stop - start) * step < 0:
                raise UsageError(f"empty or endless range {part!r}")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            items.extend(kind(start + i * step) for i in range(count))
        else:
            items.append(kind(part))
    if not items:
        raise UsageError(f"empty value list {text!r}")
    return tuple(items)


def coerce(key: str, text: str):
    if key not in valid_keys():
        raise UsageError(f"unknown key {key!r}; valid keys: {', '.join(valid_keys())}")
    try:
        if key in _TUPLE_ITEM:
            return expand_range(text, _TUPLE_ITEM[key])
        kind = next(f.type for f in ExperimentSpec.__dataclass_fields__.values() if f.name == key)
        if kind == "bool":
            return _parse_bool(text)
        return _SCALAR[kind](text.strip())
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {exc}") from None


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    out = {}
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "scenario":
            out[key] = val
        else:
            out[key] = coerce(key, val)
    return out


@dataclass
class RunConfig:
    command: str
    scenario: str
    overrides: dict = field(default_factory=dict)
    out: Path | None = None
    jobs: int = 1
    formats: tuple = ("csv",)

    @property
    def seed(self) -> int:
        return self.spec().seed

    def spec(self) -> ExperimentSpec:
        return get(self.scenario).spec(**self.overrides)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\nvalid experiment keys: {', '.join(valid_keys())}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dsdsim", description="Doubly-sparse channel estimation experiments.")
    p.add_argument("--version", action="version", version=f"dsdsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("list", help="print the scenario registry")
    for name, text in (("run", "run a scenario and write artifacts"),
                       ("check", "run a scenario and evaluate its pass/fail checks")):
        q = sub.add_parser(name, help=text)
        q.add_argument("name", nargs="?", help="scenario name")
        q.add_argument("--scenario", dest="scenario_flag")
        q.add_argument("--seed", type=int)
        q.add_argument("--out", type=Path)
        q.add_argument("--jobs", type=int, default=1)
        q.add_argument("--snr")
        q.add_argument("--speed")
        q.add_argument("--paths")
        q.add_argument("--frames")
        q.add_argument("--polls")
        q.add_argument("--trials")
        q.add_argument("--format", action="append", choices=("csv", "json"), dest="formats")
        q.add_argument("--config", help="flat key=value file")
        q.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return p


def parse_config(argv: list[str], env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    args = build_parser().parse_args(argv)
    if args.command == "list":
        return RunConfig(command="list", scenario="")
    if args.name and args.scenario_flag and args.name != args.scenario_flag:
        raise UsageError(f"conflicting scenarios {args.name!r} and {args.scenario_flag!r}")
    file_vals = read_config_file(args.config) if args.config else {}
    scenario = args.name or args.scenario_flag or file_vals.pop("scenario", None)
    file_vals.pop("scenario", None)
    if not scenario:
        raise UsageError("no scenario given; try `dsdsim list`")
    if scenario not in REGISTRY:
        raise UsageError(f"unknown scenario {scenario!r}; known: {', '.join(REGISTRY)}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")

    overrides = dict(file_vals)
    if "DSDSIM_SEED" in env and "seed" not in overrides:
        overrides["seed"] = coerce("seed", env["DSDSIM_SEED"])
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = coerce(key.strip(), val)
    for flag, key in _FLAG_KEYS.items():
        val = getattr(args, flag)
        if val is not None:
            overrides[key] = coerce(key, val)
    if args.seed is not None:
        overrides["seed"] = args.seed

    cfg = RunConfig(command=args.command, scenario=scenario, overrides=overrides,
                    out=args.out if args.out or args.command == "check" else Path("results"),
                    jobs=args.jobs, formats=tuple(dict.fromkeys(args.formats or ("csv",))))
    try:
        cfg.spec()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def manifest(cfg: RunConfig, outputs: list[str]) -> dict:
    spec = cfg.spec()
    return {
        "tool": "dsdsim",
        "version": __version__,
        "numpy": np.__version__,
        "scenario": cfg.scenario,
        "seed": spec.seed,
        "jobs": cfg.jobs,
        "config": spec.to_dict(),
        "rerun": ["dsdsim", "run", cfg.scenario, "--config", "config.txt"],
        "outputs": outputs,
    }


def config_text(spec: ExperimentSpec) -> str:
    lines = []
    for key, val in spec.to_dict().items():
        if isinstance(val, (tuple, list)):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def write_artifacts(cfg: RunConfig, rows: list[dict]) -> list[Path]:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.scenario
    written = []
    if "csv" in cfg.formats:
        written.append(out / f"{stem}.csv")
        written[-1].write_text(rows_to_csv(rows))
    if "json" in cfg.formats:
        written.append(out / f"{stem}.json")
        written[-1].write_text(rows_to_json(rows))
    (out / "config.txt").write_text(config_text(cfg.spec()))
    names = [p.name for p in written] + ["config.txt"]
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, names), indent=2) + "\n")
    return written + [out / "config.txt", out / "manifest.json"]


def execute(cfg: RunConfig, stream=None) -> int:
    stream = stream or sys.stdout
    if cfg.command == "list":
        for s in REGISTRY.values():
            print(f"{s.name:<10} {s.summary}", file=stream)
        return EXIT_OK
    spec = cfg.spec()
    try:
        rows = run_experiment(spec, jobs=cfg.jobs)
    except Exception as exc:
        print(f"dsdsim: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if cfg.out is not None:
        try:
            written = write_artifacts(cfg, rows)
        except OSError as exc:
            print(f"dsdsim: cannot write artifacts to {cfg.out}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        for path in written:
            print(f"wrote {path}", file=stream)
    checks = get(cfg.scenario).checks(rows)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]", file=stream)
    return EXIT_CHECK if any(not ok for _, ok, _ in checks) else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"dsdsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
