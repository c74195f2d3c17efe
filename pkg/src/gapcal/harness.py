"""Metrics, the repeated-split experiment protocol, and result emission.

An experiment repeats R times: shuffle the sample pool with seed
base_seed + r, split into train/calibration/test, fit the bound predictors
on the training split (pool mode) or reuse precomputed bounds (dataset
mode), fit every configured method, and score coverage (PICP) and expected
normalized interval length on the test split. Means and sample standard
deviations are reported across repeats. Everything is deterministic given
the configuration; repeats are independent and may run in worker processes
without changing any output bit.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dispatch import GridCase, LoadSample, load_rng, sample_loads, solve_dispatch
from .intervals import BoundedSample, Interval
from .methods import METHOD_NAMES, fit_method, method_predict
from .proxies import fit_dual_proxy, fit_primal_proxy, make_bounded_samples

__all__ = [
    "MethodSpec",
    "ExperimentConfig",
    "MethodResult",
    "SolvedPool",
    "BoundedDataset",
    "picp",
    "normalized_length",
    "generate_pool",
    "run_experiment",
    "emit_results",
    "render_report",
    "plot_data",
    "write_dataset",
    "read_dataset",
]

logger = logging.getLogger(__name__)

_NEAR_ZERO_FACTOR = 1e-12


@dataclass(frozen=True)
class MethodSpec:
    """Declarative method configuration; serializable to the config file."""

    name: str
    ell_grid: Optional[tuple[float, ...]] = None
    reserved_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.name not in METHOD_NAMES:
            raise ValueError(
                f"unknown method {self.name!r}; valid names: {', '.join(METHOD_NAMES)}"
            )
        if not 0.0 < self.reserved_fraction < 1.0:
            raise ValueError("reserved_fraction must be in (0, 1)")
        if self.ell_grid is not None:
            object.__setattr__(
                self, "ell_grid", tuple(float(v) for v in self.ell_grid)
            )


@dataclass(frozen=True)
class ExperimentConfig:
    n_train: int
    n_cal: int
    n_test: int
    n_repeats: int
    alphas: tuple[float, ...]
    methods: tuple[MethodSpec, ...]
    base_seed: int = 0
    ridge_primal: float = 1e-6
    ridge_dual: float = 1e-2
    global_range: tuple[float, float] = (0.6, 1.0)
    local_range: tuple[float, float] = (0.85, 1.15)
    dataset_label: str = "synthetic"

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        methods = tuple(
            m if isinstance(m, MethodSpec) else MethodSpec(str(m)) for m in self.methods
        )
        object.__setattr__(self, "methods", methods)
        self.validate()

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_cal + self.n_test

    def validate(self) -> None:
        if min(self.n_train, self.n_cal, self.n_test) < 1:
            raise ValueError("split sizes must be positive")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")
        if not self.alphas:
            raise ValueError("need at least one alpha")
        if any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1)")
        if not self.methods:
            raise ValueError("need at least one method")
        if self.ridge_primal < 0 or self.ridge_dual < 0:
            raise ValueError("ridge regularization must be >= 0")


@dataclass(frozen=True)
class MethodResult:
    """Per-method, per-alpha summary over repeats (percent units)."""

    dataset: str
    method: str
    alpha: float
    picp_mean: float
    picp_std: float
    length_mean: float
    length_std: float
    n_repeats: int
    picp_values: tuple[float, ...]
    length_values: tuple[float, ...]
    n_excluded: int = 0


def picp(intervals: Sequence[Interval], ys: Sequence[float]) -> float:
    """Prediction interval coverage percentage: 100 * covered / n."""
    if len(intervals) != len(ys):
        raise ValueError("intervals and labels must have equal length")
    if not ys:
        raise ValueError("empty input")
    covered = sum(1 for itv, y in zip(intervals, ys) if itv.contains(y))
    return 100.0 * covered / len(ys)


def _normalized_length_stats(
    intervals: Sequence[Interval], ys: Sequence[float]
) -> tuple[float, int]:
    if len(intervals) != len(ys):
        raise ValueError("intervals and labels must have equal length")
    if not ys:
        raise ValueError("empty input")
    threshold = _NEAR_ZERO_FACTOR * max(abs(float(y)) for y in ys)
    ratios = []
    excluded = 0
    for itv, y in zip(intervals, ys):
        if abs(y) < threshold or y == 0.0:
            excluded += 1
            continue
        ratios.append(itv.width / abs(y))
    if excluded:
        logger.warning(
            "normalized_length: excluded %d sample(s) with near-zero label", excluded
        )
    if not ratios:
        raise ValueError("all samples excluded from normalized length")
    return 100.0 * sum(ratios) / len(ratios), excluded


def normalized_length(intervals: Sequence[Interval], ys: Sequence[float]) -> float:
    """Mean of 100 * |C(x_i)| / |y_i|; near-zero labels are dropped with a
    logged warning."""
    return _normalized_length_stats(intervals, ys)[0]


@dataclass(frozen=True)
class SolvedPool:
    """LP-labeled sample pool: loads plus optimal values and dual prices."""

    case: GridCase
    loads: np.ndarray  # (n, D) in MW
    labels: np.ndarray  # (n,) optimal objective values
    p_opt: np.ndarray  # (n, G)
    lam_opt: np.ndarray  # (n,)
    pi_opt: np.ndarray  # (n, E)

    @property
    def size(self) -> int:
        return self.loads.shape[0]


@dataclass(frozen=True)
class BoundedDataset:
    """Precomputed records (per-unit load features, label, bound pair)."""

    features: np.ndarray  # (n, D)
    y: np.ndarray
    b_lo: np.ndarray
    b_hi: np.ndarray

    @property
    def size(self) -> int:
        return self.y.shape[0]

    def sample(self, i: int) -> BoundedSample:
        return BoundedSample(
            y=float(self.y[i]),
            b_lo=float(self.b_lo[i]),
            b_hi=float(self.b_hi[i]),
            features=tuple(self.features[i]),
        )


def generate_pool(
    case: GridCase,
    n: int,
    global_range: tuple[float, float] = (0.6, 1.0),
    local_range: tuple[float, float] = (0.85, 1.15),
    seed: int = 0,
    max_attempts: int = 100,
) -> SolvedPool:
    """Draw n load samples and solve the dispatch LP for each.

    Each sample owns the random stream (seed, index); draws whose aggregate
    demand falls outside the generation range are retried up to max_attempts
    times within that stream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    loads = np.empty((n, case.n_load))
    labels = np.empty(n)
    p_opt = np.empty((n, case.n_gen))
    lam_opt = np.empty(n)
    pi_opt = np.empty((n, case.n_line))
    lo_total, hi_total = float(case.p_min.sum()), float(case.p_max.sum())
    for i in range(n):
        rng = load_rng(seed, i)
        for _ in range(max_attempts):
            ls = sample_loads(case, global_range, local_range, rng)
            if lo_total <= float(ls.d.sum()) <= hi_total:
                break
        else:
            raise RuntimeError(
                f"sample {i}: no feasible demand after {max_attempts} attempts"
            )
        primal, dual = solve_dispatch(case, ls.d)
        loads[i] = ls.d
        labels[i] = primal.objective
        p_opt[i] = primal.p
        lam_opt[i] = dual.lam
        pi_opt[i] = dual.pi
    return SolvedPool(
        case=case, loads=loads, labels=labels, p_opt=p_opt,
        lam_opt=lam_opt, pi_opt=pi_opt,
    )


def _pool_split_samples(
    pool: SolvedPool, config: ExperimentConfig, idx_train, idx_cal, idx_test
):
    case = pool.case
    primal_proxy = fit_primal_proxy(
        case, pool.loads[idx_train], pool.p_opt[idx_train], config.ridge_primal
    )
    dual_proxy = fit_dual_proxy(
        case,
        pool.loads[idx_train],
        pool.lam_opt[idx_train],
        pool.pi_opt[idx_train],
        config.ridge_dual,
    )
    splits = []
    for idx in (idx_train, idx_cal, idx_test):
        splits.append(
            make_bounded_samples(
                case, [pool.loads[i] for i in idx], primal_proxy, dual_proxy,
                labels=pool.labels[idx],
            )
        )
    return splits


def _run_single_repeat(args) -> dict:
    """One repeat; top-level so process pools can pickle it."""
    pool, dataset, config, repeat = args
    source_size = pool.size if pool is not None else dataset.size
    perm = np.random.default_rng(config.base_seed + repeat).permutation(source_size)
    idx = perm[: config.n_total]
    idx_train = idx[: config.n_train]
    idx_cal = idx[config.n_train : config.n_train + config.n_cal]
    idx_test = idx[config.n_train + config.n_cal :]

    if pool is not None:
        train, cal, test = _pool_split_samples(pool, config, idx_train, idx_cal, idx_test)
    else:
        train = [dataset.sample(i) for i in idx_train]
        cal = [dataset.sample(i) for i in idx_cal]
        test = [dataset.sample(i) for i in idx_test]

    ys = [s.y for s in test]
    out: dict = {}
    for spec in config.methods:
        for alpha in config.alphas:
            reserved = max(1, int(round(spec.reserved_fraction * len(cal))))
            model = fit_method(
                spec.name, train, cal, alpha,
                ell_grid=spec.ell_grid,
                reserved_count=reserved if spec.name == "cpul-omlt" else None,
                seed=config.base_seed + repeat,
            )
            intervals = [method_predict(model, s) for s in test]
            cov = picp(intervals, ys)
            length, excluded = _normalized_length_stats(intervals, ys)
            out[(spec.name, alpha)] = (cov, length, excluded)
    return out


def run_experiment(
    config: ExperimentConfig,
    *,
    pool: Optional[SolvedPool] = None,
    dataset: Optional[BoundedDataset] = None,
    jobs: int = 1,
) -> list[MethodResult]:
    """Run the repeated-split protocol and aggregate across repeats.

    Exactly one of pool (LP-labeled loads; proxies are refit per repeat) or
    dataset (precomputed bound pairs) must be given. The aggregation is a
    deterministic fold over repeats in ascending order regardless of jobs.
    """
    config.validate()
    if (pool is None) == (dataset is None):
        raise ValueError("pass exactly one of pool or dataset")
    source_size = pool.size if pool is not None else dataset.size
    if source_size < config.n_total:
        raise ValueError(
            f"insufficient samples: need {config.n_total}, have {source_size}"
        )

    args = [(pool, dataset, config, r) for r in range(config.n_repeats)]
    if jobs > 1 and config.n_repeats > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.n_repeats)) as pool_exec:
            per_repeat = list(pool_exec.map(_run_single_repeat, args))
    else:
        per_repeat = [_run_single_repeat(a) for a in args]

    results = []
    for spec in config.methods:
        for alpha in config.alphas:
            covs = tuple(rep[(spec.name, alpha)][0] for rep in per_repeat)
            lens = tuple(rep[(spec.name, alpha)][1] for rep in per_repeat)
            excl = sum(rep[(spec.name, alpha)][2] for rep in per_repeat)
            results.append(
                MethodResult(
                    dataset=config.dataset_label,
                    method=spec.name,
                    alpha=alpha,
                    picp_mean=float(np.mean(covs)),
                    picp_std=float(np.std(covs, ddof=1)) if len(covs) > 1 else 0.0,
                    length_mean=float(np.mean(lens)),
                    length_std=float(np.std(lens, ddof=1)) if len(lens) > 1 else 0.0,
                    n_repeats=config.n_repeats,
                    picp_values=covs,
                    length_values=lens,
                    n_excluded=excl,
                )
            )
    return results


def _fmt4(x: float) -> str:
    return f"{x:.4g}"


def emit_results(
    results: Sequence[MethodResult], fmt: str, path, *, manifest_hash: Optional[str] = None
) -> None:
    """Write the result table as CSV or JSON (stable bytes for fixed input)."""
    if not results:
        raise ValueError("no results to emit")
    path = Path(path)
    if fmt == "csv":
        buf = io.StringIO()
        if manifest_hash:
            buf.write(f"# manifest-hash: {manifest_hash}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            [
                "dataset", "method", "alpha", "picp_mean", "picp_std",
                "length_mean", "length_std", "n_repeats",
            ]
        )
        for r in results:
            writer.writerow(
                [
                    r.dataset, r.method, _fmt4(r.alpha), _fmt4(r.picp_mean),
                    _fmt4(r.picp_std), _fmt4(r.length_mean), _fmt4(r.length_std),
                    r.n_repeats,
                ]
            )
        path.write_text(buf.getvalue())
    elif fmt == "json":
        payload = {
            "results": [
                {
                    "dataset": r.dataset,
                    "method": r.method,
                    "alpha": r.alpha,
                    "picp_mean": r.picp_mean,
                    "picp_std": r.picp_std,
                    "length_mean": r.length_mean,
                    "length_std": r.length_std,
                    "n_repeats": r.n_repeats,
                    "picp_values": list(r.picp_values),
                    "length_values": list(r.length_values),
                    "n_excluded": r.n_excluded,
                }
                for r in results
            ]
        }
        if manifest_hash:
            payload["manifest_hash"] = manifest_hash
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}; use 'csv' or 'json'")


def render_report(results: Sequence[MethodResult]) -> str:
    """Human-readable table, mean with std in parentheses."""
    lines = []
    by_dataset: dict[str, list[MethodResult]] = {}
    for r in results:
        by_dataset.setdefault(r.dataset, []).append(r)
    for dataset, rows in by_dataset.items():
        lines.append(f"dataset: {dataset}   repeats: {rows[0].n_repeats}")
        lines.append(f"{'method':<14} {'alpha':>6}   {'PICP (%)':>16}   {'Length (%)':>16}")
        for r in rows:
            picp_s = f"{r.picp_mean:.2f} ({r.picp_std:.2f})"
            len_s = f"{r.length_mean:.3f} ({r.length_std:.3f})"
            lines.append(f"{r.method:<14} {r.alpha:>6.3f}   {picp_s:>16}   {len_s:>16}")
        lines.append("")
    return "\n".join(lines)


def plot_data(results: Sequence[MethodResult]) -> dict:
    """Per-method curves of mean length against mean coverage across alpha,
    ready for external plotting."""
    methods: dict[str, dict[str, list]] = {}
    for r in sorted(results, key=lambda r: (r.method, r.alpha)):
        entry = methods.setdefault(
            r.method, {"alpha": [], "picp_mean": [], "length_mean": []}
        )
        entry["alpha"].append(r.alpha)
        entry["picp_mean"].append(r.picp_mean)
        entry["length_mean"].append(r.length_mean)
    return {"methods": methods}


def write_dataset(
    path, samples, *, manifest_hash: Optional[str] = None
) -> int:
    """Stream records to a delimited text file.

    Columns: id, d_1..d_D (per-unit load features), y, b_lo, b_hi. Floats are
    written with repr so that reading the file back reproduces them exactly.
    Returns the number of rows written.
    """
    path = Path(path)
    count = 0
    with path.open("w", newline="") as fh:
        if manifest_hash:
            fh.write(f"# manifest-hash: {manifest_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        header_written = False
        for i, sample in enumerate(samples):
            if not header_written:
                n_feat = len(sample.features)
                writer.writerow(
                    ["id"] + [f"d_{j + 1}" for j in range(n_feat)] + ["y", "b_lo", "b_hi"]
                )
                header_written = True
            writer.writerow(
                [i]
                + [repr(v) for v in sample.features]
                + [repr(sample.y), repr(sample.b_lo), repr(sample.b_hi)]
            )
            count += 1
        if not header_written:
            raise ValueError("no samples to write")
    return count


def read_dataset(path) -> BoundedDataset:
    """Read a dataset file written by write_dataset."""
    path = Path(path)
    features, ys, blos, bhis = [], [], [], []
    with path.open(newline="") as fh:
        rows = (line for line in fh if not line.startswith("#"))
        reader = csv.reader(rows)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"empty dataset file: {path}")
        n_feat = len(header) - 4
        if header[:1] != ["id"] or header[-3:] != ["y", "b_lo", "b_hi"] or n_feat < 0:
            raise ValueError(f"unrecognized dataset header in {path}")
        for row in reader:
            if not row:
                continue
            vals = [float(v) for v in row[1:]]
            features.append(vals[:n_feat])
            ys.append(vals[n_feat])
            blos.append(vals[n_feat + 1])
            bhis.append(vals[n_feat + 2])
    if not ys:
        raise ValueError(f"dataset file has no rows: {path}")
    return BoundedDataset(
        features=np.asarray(features),
        y=np.asarray(ys),
        b_lo=np.asarray(blos),
        b_hi=np.asarray(bhis),
    )
