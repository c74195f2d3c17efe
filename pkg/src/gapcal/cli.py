"""Command-line pipelines: case generation, data generation, evaluation.

Every run resolves a manifest (command, flags, config content, seeds, tool
version) whose hash is recorded in each output file, so results are
traceable to their inputs and two runs with identical manifests produce
byte-identical artifacts.

Exit codes: 0 success, 1 computational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .dispatch import TOPOLOGIES, build_case, case_from_dict, case_to_dict
from .harness import (
    ExperimentConfig,
    MethodSpec,
    emit_results,
    generate_pool,
    plot_data,
    read_dataset,
    render_report,
    run_experiment,
    write_dataset,
)
from .methods import METHOD_NAMES
from .proxies import fit_dual_proxy, fit_primal_proxy, make_bounded_samples

__all__ = ["main", "build_parser", "PipelineManifest", "UsageError"]

SEED_ENV_VAR = "GAPCAL_SEED"


class UsageError(Exception):
    """Bad invocation (missing files, unknown names); exits with code 2."""


@dataclass
class PipelineManifest:
    """Record of everything that determines a pipeline's outputs."""

    command: str
    inputs: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    version: str = __version__

    def hash(self) -> str:
        payload = {
            "command": self.command,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "version": self.version,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "version": self.version,
            "manifest_hash": self.hash(),
        }


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV_VAR, "0"))


def _check_output(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"output {path} exists; pass --force to overwrite")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapcal",
        description="Calibrated prediction intervals for certified dispatch bounds.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen_case = sub.add_parser("gen-case", help="generate a synthetic grid case file")
    gen_case.add_argument("--topology", choices=TOPOLOGIES, default="ring")
    gen_case.add_argument("--buses", type=int, required=True)
    gen_case.add_argument("--seed", type=int, default=None)
    gen_case.add_argument("--out", required=True)
    gen_case.add_argument("--force", action="store_true")

    gen_data = sub.add_parser(
        "gen-data", help="sample loads, solve LPs, fit proxies, write the dataset"
    )
    gen_data.add_argument("--case", required=True)
    gen_data.add_argument("--n", type=int, required=True)
    gen_data.add_argument("--global-range", type=float, nargs=2, default=(0.6, 1.0))
    gen_data.add_argument("--local-range", type=float, nargs=2, default=(0.85, 1.15))
    gen_data.add_argument("--seed", type=int, default=None)
    gen_data.add_argument("--out", required=True)
    gen_data.add_argument("--force", action="store_true")
    gen_data.add_argument(
        "--fit-count", type=int, default=None,
        help="rows used to fit the bound predictors (default: first half)",
    )
    gen_data.add_argument("--ridge-primal", type=float, default=1e-6)
    gen_data.add_argument("--ridge-dual", type=float, default=1e-2)

    evaluate = sub.add_parser("evaluate", help="run the experiment harness")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--out-dir", required=True)
    evaluate.add_argument(
        "--methods", default=None,
        help="comma-separated subset of methods (overrides the config)",
    )
    evaluate.add_argument("--jobs", type=int, default=1)
    evaluate.add_argument("--force", action="store_true")
    return parser


def _cmd_gen_case(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    out = Path(args.out)
    _check_output(out, args.force)
    case = build_case(args.buses, topology=args.topology, seed=seed)
    manifest = PipelineManifest(
        command="gen-case",
        inputs={"topology": args.topology, "buses": args.buses},
        seeds={"case": seed},
        artifacts={"case": str(out)},
    )
    payload = case_to_dict(case)
    payload["manifest_hash"] = manifest.hash()
    out.write_text(json.dumps(payload, sort_keys=True) + "\n")
    print(f"wrote {out} (manifest {manifest.hash()})")
    return 0


def _load_case(path: Path):
    if not path.exists():
        raise UsageError(f"case file not found: {path}")
    return case_from_dict(json.loads(path.read_text()))


def _cmd_gen_data(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    seed = args.seed if args.seed is not None else _default_seed()
    out = Path(args.out)
    _check_output(out, args.force)
    case = _load_case(Path(args.case))
    pool = generate_pool(
        case, args.n,
        global_range=tuple(args.global_range),
        local_range=tuple(args.local_range),
        seed=seed,
    )
    fit_count = args.fit_count if args.fit_count is not None else max(1, args.n // 2)
    if not 1 <= fit_count <= args.n:
        raise UsageError(f"--fit-count must be in [1, {args.n}]")
    primal_proxy = fit_primal_proxy(
        case, pool.loads[:fit_count], pool.p_opt[:fit_count], args.ridge_primal
    )
    dual_proxy = fit_dual_proxy(
        case, pool.loads[:fit_count], pool.lam_opt[:fit_count],
        pool.pi_opt[:fit_count], args.ridge_dual,
    )
    manifest = PipelineManifest(
        command="gen-data",
        inputs={
            "case": str(args.case),
            "n": args.n,
            "global_range": list(args.global_range),
            "local_range": list(args.local_range),
            "fit_count": fit_count,
            "ridge_primal": args.ridge_primal,
            "ridge_dual": args.ridge_dual,
        },
        seeds={"data": seed},
        artifacts={"dataset": str(out)},
    )

    def rows():
        for i in range(pool.size):
            yield from make_bounded_samples(
                case, [pool.loads[i]], primal_proxy, dual_proxy,
                labels=pool.labels[i : i + 1],
            )

    n_rows = write_dataset(out, rows(), manifest_hash=manifest.hash())
    print(f"wrote {n_rows} rows to {out} (manifest {manifest.hash()})")
    return 0


def _parse_method_entry(entry) -> MethodSpec:
    if isinstance(entry, str):
        return MethodSpec(entry)
    if isinstance(entry, dict):
        known = {"name", "ell_grid", "reserved_fraction"}
        unknown = set(entry) - known
        if unknown:
            raise UsageError(f"unknown method config keys: {sorted(unknown)}")
        return MethodSpec(
            name=entry["name"],
            ell_grid=tuple(entry["ell_grid"]) if entry.get("ell_grid") else None,
            reserved_fraction=float(entry.get("reserved_fraction", 0.2)),
        )
    raise UsageError(f"bad method entry: {entry!r}")


def _cmd_evaluate(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        raise UsageError(f"config file not found: {config_path}")
    try:
        raw = json.loads(config_path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc

    method_entries = raw.get("methods", list(METHOD_NAMES))
    if args.methods is not None:
        method_entries = [m.strip() for m in args.methods.split(",") if m.strip()]
    for entry in method_entries:
        name = entry if isinstance(entry, str) else entry.get("name")
        if name not in METHOD_NAMES:
            raise UsageError(
                f"unknown method {name!r}; valid names: {', '.join(METHOD_NAMES)}"
            )
    methods = tuple(_parse_method_entry(e) for e in method_entries)

    required = ("n_train", "n_cal", "n_test", "n_repeats", "alphas")
    missing = [k for k in required if k not in raw]
    if missing:
        raise UsageError(f"config missing keys: {missing}")

    config = ExperimentConfig(
        n_train=int(raw["n_train"]),
        n_cal=int(raw["n_cal"]),
        n_test=int(raw["n_test"]),
        n_repeats=int(raw["n_repeats"]),
        alphas=tuple(raw["alphas"]),
        methods=methods,
        base_seed=int(raw.get("base_seed", _default_seed())),
        ridge_primal=float(raw.get("ridge_primal", 1e-6)),
        ridge_dual=float(raw.get("ridge_dual", 1e-2)),
        global_range=tuple(raw.get("global_range", (0.6, 1.0))),
        local_range=tuple(raw.get("local_range", (0.85, 1.15))),
        dataset_label=str(raw.get("dataset_label", "synthetic")),
    )

    pool = None
    dataset = None
    if "dataset" in raw:
        dataset_path = (config_path.parent / raw["dataset"]).resolve()
        if not dataset_path.exists():
            raise UsageError(f"dataset file not found: {dataset_path}")
        dataset = read_dataset(dataset_path)
        source = {"dataset": str(raw["dataset"])}
    elif "case" in raw:
        case_path = (config_path.parent / raw["case"]).resolve()
        case = _load_case(case_path)
        pool_seed = int(raw.get("pool_seed", config.base_seed))
        pool = generate_pool(
            case, config.n_total,
            global_range=config.global_range,
            local_range=config.local_range,
            seed=pool_seed,
        )
        source = {"case": str(raw["case"]), "pool_seed": pool_seed}
    else:
        raise UsageError("config must name either a 'case' or a 'dataset'")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = PipelineManifest(
        command="evaluate",
        inputs={"config": raw, "source": source, "jobs_independent": True},
        seeds={"base_seed": config.base_seed},
        artifacts={
            "results_csv": str(out_dir / "results.csv"),
            "results_json": str(out_dir / "results.json"),
            "report": str(out_dir / "report.txt"),
            "plot_data": str(out_dir / "plot_data.json"),
        },
    )
    for artifact in manifest.artifacts.values():
        _check_output(Path(artifact), args.force)

    results = run_experiment(config, pool=pool, dataset=dataset, jobs=args.jobs)
    mh = manifest.hash()
    emit_results(results, "csv", out_dir / "results.csv", manifest_hash=mh)
    emit_results(results, "json", out_dir / "results.json", manifest_hash=mh)
    report = render_report(results) + f"\nmanifest-hash: {mh}\n"
    (out_dir / "report.txt").write_text(report)
    plots = plot_data(results)
    plots["manifest_hash"] = mh
    (out_dir / "plot_data.json").write_text(
        json.dumps(plots, indent=2, sort_keys=True) + "\n"
    )
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    print(render_report(results))
    print(f"wrote results to {out_dir} (manifest {mh})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-case": _cmd_gen_case,
        "gen-data": _cmd_gen_data,
        "evaluate": _cmd_evaluate,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
