"""Command-line entry point: generate / run / sweep / report.

Exit codes: 0 ok, 2 configuration error, 3 I/O or data-format error,
4 numerical failure.  Diagnostics go to stderr as single-line key=value
records; every subcommand writes its fully resolved configuration alongside
its outputs so runs can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

from .curves import (
    PerfSpec,
    SyntheticFamilySpec,
    best_candidate,
    generate_synthetic,
    load_curves_csv,
    save_curves_csv,
)
from .errors import ConfigError, DataFormatError, NumericalError
from .halving import ShConfig, compute_units, run_halving
from .report import write_report
from .rng import substream
from .sweep import (
    SweepSpec,
    aggregate,
    default_reference_perf,
    relative_regret,
    run_sweep,
    write_aggregate_csv,
    write_results_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

SEED_ENV_VAR = "HALVINGLAB_SEED"


def _emit(stream, **fields) -> None:
    print(" ".join(f"{key}={value}" for key, value in fields.items()), file=stream)


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else 0


def _load_json(path) -> dict:
    try:
        with open(path, "r") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}")


def _file_sha256(path) -> str:
    hasher = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


_GENERATE_FIELDS = {
    "family", "n_curves", "n_steps", "param_ranges",
    "noise_std", "slow_starter_fraction",
}


def _parse_generate_spec(data: dict) -> tuple[SyntheticFamilySpec, int, int]:
    unknown = set(data) - _GENERATE_FIELDS
    if unknown:
        raise ConfigError(f"unknown field in generator spec: {sorted(unknown)[0]}")
    for required in ("family", "n_curves", "n_steps"):
        if required not in data:
            raise ConfigError(f"generator spec is missing the field {required!r}")
    try:
        n_curves = int(data["n_curves"])
        n_steps = int(data["n_steps"])
    except (TypeError, ValueError):
        raise ConfigError("fields n_curves and n_steps must be integers")
    ranges = data.get("param_ranges", {})
    if not isinstance(ranges, dict):
        raise ConfigError("field param_ranges must be an object of [low, high] pairs")
    spec = SyntheticFamilySpec(
        family=data["family"],
        param_ranges={name: tuple(bounds) for name, bounds in ranges.items()},
        noise_std=float(data.get("noise_std", 0.0)),
        slow_starter_fraction=float(data.get("slow_starter_fraction", 0.0)),
    )
    return spec, n_curves, n_steps


def cmd_generate(args) -> int:
    seed = _resolve_seed(args.seed)
    spec, n_curves, n_steps = _parse_generate_spec(_load_json(args.config))
    curve_set = generate_synthetic(spec, n_curves, n_steps, seed)
    save_curves_csv(curve_set, args.out)
    resolved = {
        "family": spec.family,
        "n_curves": n_curves,
        "n_steps": n_steps,
        "param_ranges": {k: list(v) for k, v in spec.param_ranges.items()},
        "noise_std": spec.noise_std,
        "slow_starter_fraction": spec.slow_starter_fraction,
        "seed": seed,
    }
    config_path = Path(str(args.out) + ".config.json")
    config_path.write_text(json.dumps(resolved, indent=2) + "\n")
    _emit(
        sys.stdout,
        n_curves=curve_set.n_curves,
        n_steps=curve_set.n_steps,
        dim=curve_set.dim,
        out=args.out,
        config=config_path,
    )
    return EXIT_OK


def cmd_run(args) -> int:
    seed = _resolve_seed(args.seed)
    curve_set = load_curves_csv(args.curves)
    n_training = args.training_curves
    training_ids: tuple[int, ...] = ()
    if n_training:
        if n_training >= curve_set.n_curves:
            raise ConfigError(
                f"cannot reserve {n_training} training curves out of "
                f"{curve_set.n_curves}"
            )
        rng = substream(seed, "training-split")
        drawn = rng.choice(
            sorted(curve_set.candidate_ids), size=n_training, replace=False
        )
        training_ids = tuple(sorted(int(i) for i in drawn))
    config = ShConfig(
        n_initial=curve_set.n_curves - n_training,
        n_final=args.final_candidates,
        eta=args.eta,
        grace_fraction=args.grace,
        ranker=args.ranker,
        training_ids=training_ids,
    )
    perf_spec = PerfSpec()
    trace = run_halving(curve_set, config, perf_spec, seed)

    competing = curve_set.subset(
        sorted(set(curve_set.candidate_ids) - set(training_ids))
    )
    _, best_perf = best_candidate(competing, perf_spec)
    reference = default_reference_perf(competing, perf_spec)
    absolute, relative = compute_units(trace, config.n_initial, curve_set.n_steps)

    out_path = Path(args.out)
    payload = trace.to_json_dict()
    payload["seed"] = seed
    payload["curves"] = str(args.curves)
    out_path.write_text(json.dumps(payload, indent=2) + "\n")
    trace.save_csv(out_path.with_suffix(".csv"))
    _emit(
        sys.stdout,
        picked_id=trace.picked_id,
        picked_perf=repr(trace.picked_perf),
        best_perf=repr(best_perf),
        absolute_regret=repr(trace.picked_perf - best_perf),
        relative_regret=repr(
            relative_regret(trace.picked_perf, best_perf, reference)
        ),
        absolute_compute=absolute,
        relative_compute=repr(relative),
        out=out_path,
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    universe = load_curves_csv(args.curves)
    spec = SweepSpec.from_json_dict(_load_json(args.config))
    if args.seed is not None or os.environ.get(SEED_ENV_VAR):
        spec = dataclasses.replace(spec, root_seed=_resolve_seed(args.seed))
    if args.trials is not None:
        spec = dataclasses.replace(spec, trials=args.trials)

    results = run_sweep(universe, spec, jobs=args.jobs)
    rows = aggregate(results)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    aggregate_path = out_dir / "aggregate.csv"
    write_results_csv(results, results_path)
    write_aggregate_csv(rows, aggregate_path)
    resolved = spec.to_json_dict()
    resolved["universe"] = str(args.curves)
    resolved["universe_sha256"] = _file_sha256(args.curves)
    (out_dir / "resolved_config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    _emit(
        sys.stdout,
        trials=len(results),
        cells=len(rows),
        results=results_path,
        aggregate=aggregate_path,
    )
    return EXIT_OK


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    produced = write_report(args.results, out_dir)
    (out_dir / "report_config.json").write_text(
        json.dumps({"source": str(args.results), "out": str(out_dir)}, indent=2) + "\n"
    )
    print(produced["table"])
    _emit(
        sys.stdout,
        figure=produced["figure"],
        series=len(produced["series"]),
        summary=produced["summary"],
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="halvinglab",
        description="Successive Halving simulation lab over learning curves",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic curve universe")
    gen.add_argument("--config", required=True, help="generator spec JSON")
    gen.add_argument("--out", required=True, help="output curves CSV")
    gen.add_argument("--seed", type=int, default=None)
    gen.set_defaults(handler=cmd_generate)

    run = sub.add_parser("run", help="execute one halving run and dump its trace")
    run.add_argument("--curves", required=True, help="curves CSV")
    run.add_argument("--ranker", choices=("current", "gp", "oracle"), default="current")
    run.add_argument("--final-candidates", type=int, default=1)
    run.add_argument(
        "--training-curves", type=int, default=0,
        help="curves split off as GP training data (gp ranker only)",
    )
    run.add_argument("--eta", type=int, default=2)
    run.add_argument("--grace", type=float, default=0.10)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default="trace.json", help="trace JSON path")
    run.set_defaults(handler=cmd_run)

    swp = sub.add_parser("sweep", help="run the full (ranker, F, C) x trials grid")
    swp.add_argument("--curves", required=True, help="universe curves CSV")
    swp.add_argument("--config", required=True, help="sweep spec JSON")
    swp.add_argument("--out", default="sweep_out", help="output directory")
    swp.add_argument("--seed", type=int, default=None, help="override root seed")
    swp.add_argument("--trials", type=int, default=None, help="override trial count")
    swp.add_argument("--jobs", type=int, default=1, help="concurrent trials")
    swp.set_defaults(handler=cmd_sweep)

    rep = sub.add_parser("report", help="emit plot series, figure, and summary")
    rep.add_argument("results", help="results.csv or aggregate.csv")
    rep.add_argument("--out", default="report_out", help="output directory")
    rep.set_defaults(handler=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        _emit(sys.stderr, error="config", message=f'"{exc}"')
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        _emit(sys.stderr, error="io", message=f'"{exc}"')
        return EXIT_IO
    except NumericalError as exc:
        _emit(sys.stderr, error="numerical", message=f'"{exc}"')
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
