"""Command-line interface.

Subcommands: ``fit`` (coefficient table), ``quantiles`` (grouped quantile
estimates with pointwise intervals), ``bands`` (simultaneous bands),
``simulate`` (write synthetic datasets) and ``coverage`` (Monte Carlo
report).  Every command writes a ``manifest.json`` capturing the resolved
configuration and seed; ``rerun`` replays a manifest and reproduces the
outputs byte for byte.

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bands import default_workers, simultaneous_bands
from .errors import (
    ConvergenceError,
    EstimationDomainError,
    InputError,
    SingularityError,
)
from .estimator import FitConfig, fit
from .io import (
    DatasetSpec,
    PartitionSpec,
    RunConfig,
    coefficient_table,
    ingest,
    load_config,
    quantile_frame,
    read_manifest,
    write_manifest,
)
from .quantiles import group_curves, pointwise_ci, quantile_curve
from .simulate import (
    Censoring,
    DiscreteCovariates,
    PowerTransformation,
    SimScenario,
    UniformCovariates,
    generate,
    run_coverage,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_NUMERIC = 4


def _parse_partition_flag(raw: str) -> PartitionSpec:
    if ":" in raw:
        col, cuts = raw.split(":", 1)
        thresholds = [float(c) for c in cuts.split(",") if c.strip()]
        return PartitionSpec(by=col, thresholds=thresholds)
    return PartitionSpec(by=raw)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantsurv",
        description="Transformation-model survival regression with "
                    "grouped quantile bands",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--data", help="CSV path or packaged dataset name")
        p.add_argument("--config", help="dataset spec JSON (or packaged name)")
        p.add_argument("--family", choices=["ph", "po"], help="hazard family")
        p.add_argument("--partition",
                       help="partition column, optionally col:cut1,cut2")
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--p-min", type=float, default=0.25, dest="p_min")
        p.add_argument("--p-max", type=float, default=0.75, dest="p_max")
        p.add_argument("--replicates", type=int, default=1000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")

    for name in ("fit", "quantiles", "bands"):
        add_common(sub.add_parser(name))

    sim = sub.add_parser("simulate")
    sim.add_argument("--scenario", required=True, help="scenario JSON path")
    sim.add_argument("--replicate", type=int, default=0)
    sim.add_argument("--out", required=True)

    cov = sub.add_parser("coverage")
    cov.add_argument("--scenario", required=True)
    cov.add_argument("--alpha", type=float, default=0.05)
    cov.add_argument("--replicates", type=int, default=500,
                     help="multiplier draws per replication")
    cov.add_argument("--no-bands", action="store_true")
    cov.add_argument("--out", required=True)

    rerun = sub.add_parser("rerun")
    rerun.add_argument("--manifest", required=True)
    rerun.add_argument("--out", required=True)
    return parser


def _resolve_inputs(args) -> tuple[DatasetSpec, RunConfig]:
    family = None
    if args.config:
        spec, raw = load_config(args.config)
        family = raw.get("family")
    else:
        raise InputError("provide --config (and optionally --data to override "
                         "the config's data path)")
    if args.data:
        spec.path = args.data
    if args.partition:
        spec.partition = _parse_partition_flag(args.partition)
    config = RunConfig(
        family=args.family or family or "po",
        alpha=args.alpha,
        p_min=args.p_min,
        p_max=args.p_max,
        replicates=args.replicates,
        tau=args.tau,
        seed=args.seed,
        workers=args.workers,
    )
    return spec, config


def _fit_from_spec(spec: DatasetSpec, config: RunConfig):
    sample, partition, meta = ingest(spec, tau=config.tau)
    fit_config = FitConfig(tol=config.tol, max_iter=config.max_iter,
                           phi_mode=config.phi_mode)
    result = fit(sample, config.family, theta0=None, config=fit_config)
    return result, partition, meta


def _spec_as_dict(spec: DatasetSpec) -> dict:
    out = asdict(spec)
    return out


def cmd_fit(args) -> int:
    spec, config = _resolve_inputs(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result, _, meta = _fit_from_spec(spec, config)
        table = coefficient_table(meta["covariates"], result)
    table_path = out_dir / "coefficients.csv"
    table.to_csv(table_path, index=False)
    write_manifest(
        out_dir / "manifest.json", "fit", config, _spec_as_dict(spec),
        [table_path.name],
        [str(w.message) for w in caught] + result.warnings,
    )
    print(table.to_string(index=False))
    if not result.converged:
        print(f"fit did not converge: score norm {result.score_norm:.3e}",
              file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _quantile_outputs(args, with_bands: bool) -> int:
    spec, config = _resolve_inputs(args)
    if spec.partition is None:
        raise InputError("quantile commands need a partition (--partition)")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result, partition, meta = _fit_from_spec(spec, config)
        if not result.converged:
            print(f"fit did not converge: score norm {result.score_norm:.3e}",
                  file=sys.stderr)
            return EXIT_NO_CONVERGENCE
        curves = group_curves(result, partition)
        p_grid = config.p_grid()
        quantiles = quantile_curve(curves, p_grid)
        if with_bands:
            band = simultaneous_bands(
                result, curves, p_grid, alpha=config.alpha,
                replicates=config.replicates, seed=config.seed,
                transform_g=config.transform_g,
                workers=config.workers or default_workers(),
            )
            rows = band.bands
            extra = {
                "u_star": band.u_star,
                "replicate_sups_mean": float(band.replicate_sups.mean()),
                "replicate_sups_sd": float(band.replicate_sups.std(ddof=1))
                if band.replicates > 1 else 0.0,
                "excluded_points": band.excluded_points,
            }
        else:
            rows = pointwise_ci(curves, quantiles, alpha=config.alpha,
                                transform_g=config.transform_g)
            extra = None
    frame = quantile_frame(rows)
    name = "bands.csv" if with_bands else "quantiles.csv"
    frame.to_csv(out_dir / name, index=False)
    outputs = [name]
    if extra is not None:
        with open(out_dir / "band_summary.json", "w") as fh:
            json.dump(extra, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs.append("band_summary.json")
    n_oor = int(frame["out_of_range"].sum())
    notes = [str(w.message) for w in caught] + result.warnings
    if n_oor:
        notes.append(f"{n_oor} requested probabilities outside the attained range")
        print(f"warning: {n_oor} rows flagged out of range", file=sys.stderr)
    write_manifest(out_dir / "manifest.json",
                   "bands" if with_bands else "quantiles",
                   config, _spec_as_dict(spec), outputs, notes)
    print(frame.head(12).to_string(index=False))
    return EXIT_OK


def cmd_quantiles(args) -> int:
    return _quantile_outputs(args, with_bands=False)


def cmd_bands(args) -> int:
    return _quantile_outputs(args, with_bands=True)


def _scenario_from_json(path) -> SimScenario:
    with open(path) as fh:
        raw = json.load(fh)
    cov_raw = dict(raw["covariates"])
    kind = cov_raw.pop("kind", "discrete")
    if kind == "discrete":
        covariates = DiscreteCovariates(
            support=tuple(tuple(row) for row in cov_raw["support"]),
            probs=tuple(cov_raw["probs"]),
        )
    elif kind == "uniform":
        covariates = UniformCovariates(low=tuple(cov_raw["low"]),
                                       high=tuple(cov_raw["high"]))
    else:
        raise InputError(f"unknown covariate law {kind!r}")
    cens = Censoring(**raw.get("censoring", {"kind": "none"}))
    trans = PowerTransformation(**raw.get("transformation", {}))
    return SimScenario(
        family=raw["family"],
        theta0=tuple(raw["theta0"]),
        n=int(raw["n"]),
        covariates=covariates,
        censoring=cens,
        transformation=trans,
        replications=int(raw.get("replications", 100)),
        seed=int(raw.get("seed", 0)),
    )


def cmd_simulate(args) -> int:
    scenario = _scenario_from_json(args.scenario)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sample = generate(scenario, args.replicate)
    import pandas as pd

    cols = {f"z{i+1}": sample.z[:, i] for i in range(sample.d)}
    frame = pd.DataFrame({"time": sample.times, "status": sample.status, **cols})
    name = f"sample_{args.replicate}.csv"
    frame.to_csv(out_dir / name, index=False)
    config = RunConfig(family=scenario.family, seed=scenario.seed)
    write_manifest(out_dir / "manifest.json", "simulate", config,
                   {"scenario": str(args.scenario), "replicate": args.replicate},
                   [name], [])
    print(f"wrote {name} (n={sample.n}, events={int(sample.status.sum())})")
    return EXIT_OK


def cmd_coverage(args) -> int:
    scenario = _scenario_from_json(args.scenario)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_coverage(
        scenario,
        alpha=args.alpha,
        band_replicates=args.replicates,
        with_bands=not args.no_bands,
    )
    with open(out_dir / "coverage.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    config = RunConfig(family=scenario.family, alpha=args.alpha,
                       replicates=args.replicates, seed=scenario.seed)
    write_manifest(out_dir / "manifest.json", "coverage", config,
                   {"scenario": str(args.scenario)}, ["coverage.json"], [])
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_rerun(args) -> int:
    manifest = read_manifest(args.manifest)
    command = manifest["command"]
    config = manifest["config"]
    dataset = manifest.get("dataset") or {}
    argv = [command]
    if command in ("fit", "quantiles", "bands"):
        spec_path = Path(args.out) / "_rerun_spec.json"
        spec_path.parent.mkdir(parents=True, exist_ok=True)
        raw = dict(dataset)
        raw["data"] = raw.pop("path")
        raw["family"] = config["family"]
        raw["covariates"] = raw.get("covariates") or []
        with open(spec_path, "w") as fh:
            json.dump(raw, fh)
        argv += ["--config", str(spec_path)]
        argv += ["--family", config["family"]]
        argv += ["--alpha", str(config["alpha"])]
        argv += ["--p-min", str(config["p_min"])]
        argv += ["--p-max", str(config["p_max"])]
        argv += ["--replicates", str(config["replicates"])]
        argv += ["--seed", str(config["seed"])]
        if config.get("tau") is not None:
            argv += ["--tau", str(config["tau"])]
    elif command == "simulate":
        argv += ["--scenario", dataset["scenario"],
                 "--replicate", str(dataset.get("replicate", 0))]
    elif command == "coverage":
        argv += ["--scenario", dataset["scenario"],
                 "--alpha", str(config["alpha"]),
                 "--replicates", str(config["replicates"])]
    else:
        raise InputError(f"cannot rerun command {command!r}")
    argv += ["--out", args.out]
    return main(argv)


_COMMANDS = {
    "fit": cmd_fit,
    "quantiles": cmd_quantiles,
    "bands": cmd_bands,
    "simulate": cmd_simulate,
    "coverage": cmd_coverage,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (SingularityError, EstimationDomainError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
