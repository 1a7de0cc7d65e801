"""Experiment runner behind the ``truffle-bench`` command.

``run`` sweeps input sizes and added cold-start delays over both modes,
repeats each point, and writes per-point means to ``results.csv`` (with a
JSON mirror) plus every raw record to ``records.jsonl``. ``summarize``
rebuilds the comparison table from those records.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import statistics
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from truffle.engine import StorageKind
from truffle.errors import ConfigError
from truffle.sim.cluster import Cluster, ClusterProfiles, MeasurementRecord, Mode, deploy
from truffle.sim.config import ClusterConfig, load_document, parse_profiles, resolve_scale
from truffle.sim.workflow import WORKLOADS, WorkflowSpec

log = logging.getLogger("truffle.bench")

CSV_COLUMNS = [
    "workload",
    "storage_kind",
    "size_mb",
    "added_delay_ms",
    "mode",
    "mean_ms",
    "stddev_ms",
    "improvement_pct",
    "io_ratio",
]

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


@dataclass
class ExperimentConfig:
    workload: str = "chain"
    storage_kind: StorageKind = StorageKind.DIRECT
    input_sizes_mb: list[float] = field(default_factory=lambda: [128.0])
    added_delays_ms: list[float] = field(default_factory=lambda: [0.0])
    repetitions: int = 3
    modes: list[Mode] = field(default_factory=lambda: [Mode.BASELINE, Mode.TRUFFLE])
    scale_factor: float = 1.0
    output_path: str = "results"
    profiles: ClusterProfiles = field(default_factory=ClusterProfiles)
    cluster: Optional[ClusterConfig] = None
    nodes: Optional[int] = None

    def __post_init__(self) -> None:
        try:
            self.storage_kind = StorageKind(self.storage_kind)
            self.modes = [Mode(m) for m in self.modes]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.cluster is None and self.workload not in WORKLOADS:
            raise ConfigError(f"unknown workload {self.workload!r}; choose from {sorted(WORKLOADS)}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.input_sizes_mb or not self.added_delays_ms or not self.modes:
            raise ConfigError("input_sizes_mb, added_delays_ms and modes must be non-empty")
        if any(s < 0 for s in self.input_sizes_mb) or any(d < 0 for d in self.added_delays_ms):
            raise ConfigError("sizes and delays must be >= 0")
        if self.scale_factor <= 0:
            raise ConfigError("scale_factor must be > 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        cluster = None
        if "cluster" in doc:
            raw = doc.pop("cluster")
            cluster = ClusterConfig.load(raw) if isinstance(raw, str) else ClusterConfig.from_dict(raw)
        profiles = parse_profiles(doc.pop("backends", None), cluster.profiles if cluster else None)
        allowed = {"workload", "storage_kind", "input_sizes_mb", "added_delays_ms", "repetitions", "modes",
                   "scale_factor", "output_path", "nodes"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown experiment keys {sorted(unknown)}")
        try:
            if "input_sizes_mb" in doc:
                doc["input_sizes_mb"] = [float(x) for x in doc["input_sizes_mb"]]
            if "added_delays_ms" in doc:
                doc["added_delays_ms"] = [float(x) for x in doc["added_delays_ms"]]
            if cluster is not None:
                doc.setdefault("workload", cluster.workflow.name)
                doc.setdefault("storage_kind", cluster.workflow.storage_kind)
                doc.setdefault("scale_factor", cluster.scale_factor)
            return cls(profiles=profiles, cluster=cluster, **doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(load_document(path))

    def workflow(self) -> WorkflowSpec:
        if self.cluster is not None:
            return self.cluster.workflow.with_storage(self.storage_kind)
        return WORKLOADS[self.workload](self.storage_kind)

    def deploy(self, scale: float) -> Cluster:
        wf = self.workflow()
        if self.cluster is not None:
            return deploy(wf, self.nodes or self.cluster.nodes, scale, profiles=self.profiles,
                          scheduling_ms=self.cluster.scheduling_ms)
        placements = {f.placement for f in wf.functions if f.placement is not None}
        return deploy(wf, self.nodes or max(len(placements), 1), scale, profiles=self.profiles)


@dataclass
class Point:
    size_mb: float
    added_delay_ms: float


@dataclass
class SummaryRow:
    workload: str
    storage_kind: str
    size_mb: float
    added_delay_ms: float
    baseline_mean_ms: float = math.nan
    truffle_mean_ms: float = math.nan
    baseline_stddev_ms: float = math.nan
    truffle_stddev_ms: float = math.nan
    improvement_pct: float = math.nan
    io_ratio: float = math.nan
    baseline_io_ms: float = math.nan
    truffle_io_ms: float = math.nan
    baseline_predicted_ms: float = math.nan
    truffle_predicted_ms: float = math.nan
    comparable: bool = False


@dataclass
class RunResult:
    records: list[MeasurementRecord]
    summary: list[SummaryRow]
    failed_points: list[tuple[float, float, str]]
    out_dir: Optional[Path] = None

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failed_points else EXIT_OK


def _mean(values: Sequence[float]) -> float:
    return statistics.fmean(values) if values else math.nan


def _pstdev(values: Sequence[float]) -> float:
    return statistics.pstdev(values) if values else math.nan


def improvement_pct(baseline_ms: float, truffle_ms: float) -> float:
    if not baseline_ms or math.isnan(baseline_ms) or math.isnan(truffle_ms):
        return math.nan
    return 100.0 * (1.0 - truffle_ms / baseline_ms)


def summarize(records: Iterable[MeasurementRecord]) -> list[SummaryRow]:
    """Per grid point: mean per mode, improvement %, IO-impact ratio. Failed records are ignored."""
    groups: dict[tuple, dict[Mode, list[MeasurementRecord]]] = {}
    for r in records:
        key = (r.workload, r.storage_kind, float(r.size_mb), float(r.added_delay_ms))
        groups.setdefault(key, {m: [] for m in Mode})[Mode(r.mode)].append(r)
    rows = []
    for key in sorted(groups):
        by_mode = groups[key]
        row = SummaryRow(*key)
        for mode in Mode:
            ok = [r for r in by_mode[mode] if not r.failed]
            e2e = [r.end_to_end_ms for r in ok]
            setattr(row, f"{mode.value}_mean_ms", _mean(e2e))
            setattr(row, f"{mode.value}_stddev_ms", _pstdev(e2e))
            setattr(row, f"{mode.value}_io_ms", _mean([r.io_critical_path_ms for r in ok]))
            setattr(row, f"{mode.value}_predicted_ms", _mean([r.predicted_ms for r in ok]))
        row.comparable = not (math.isnan(row.baseline_mean_ms) or math.isnan(row.truffle_mean_ms))
        if row.comparable:
            row.improvement_pct = improvement_pct(row.baseline_mean_ms, row.truffle_mean_ms)
            if row.baseline_io_ms > 0:
                row.io_ratio = row.truffle_io_ms / row.baseline_io_ms
        rows.append(row)
    return rows


def csv_rows(summary: Iterable[SummaryRow], modes: Iterable[Mode] = tuple(Mode)) -> list[dict]:
    out = []
    for row in summary:
        for mode in modes:
            mean = getattr(row, f"{Mode(mode).value}_mean_ms")
            out.append({
                "workload": row.workload,
                "storage_kind": row.storage_kind,
                "size_mb": row.size_mb,
                "added_delay_ms": row.added_delay_ms,
                "mode": Mode(mode).value,
                "mean_ms": mean,
                "stddev_ms": getattr(row, f"{Mode(mode).value}_stddev_ms"),
                "improvement_pct": row.improvement_pct,
                "io_ratio": row.io_ratio,
            })
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.3f}"
    return str(value)


def _json_safe(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def write_results(out_dir: Path, records: Sequence[MeasurementRecord], summary: Sequence[SummaryRow],
                  modes: Iterable[Mode] = tuple(Mode)) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = csv_rows(summary, modes)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    (out_dir / "results.json").write_text(json.dumps(_json_safe(rows), indent=2))
    (out_dir / "summary.json").write_text(json.dumps(_json_safe([asdict(s) for s in summary]), indent=2))
    with open(out_dir / "records.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(_json_safe(r.to_dict())) + "\n")


def read_records(in_dir: Path) -> list[MeasurementRecord]:
    records = []
    with open(Path(in_dir) / "records.jsonl") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                for k in ("end_to_end_ms", "io_critical_path_ms", "predicted_ms"):
                    if d.get(k) is None:
                        d[k] = math.nan
                records.append(MeasurementRecord.from_dict(d))
    return records


def _run_point(config: ExperimentConfig, cluster: Cluster, point: Point) -> list[MeasurementRecord]:
    records = []
    for rep in range(config.repetitions):
        for mode in config.modes:
            rec = cluster.invoke_workflow(point.size_mb, mode, added_delay_ms=point.added_delay_ms)
            rec.workload = config.workload
            rec.storage_kind = config.storage_kind.value
            rec.added_delay_ms = point.added_delay_ms
            log.info("%s %s size=%s delay=%s rep=%d: %.1f ms%s", config.workload, mode.value, point.size_mb,
                     point.added_delay_ms, rep, rec.end_to_end_ms, " FAILED " + rec.failure if rec.failed else "")
            records.append(rec)
    return records


def run(config: ExperimentConfig, scale: Optional[float] = None, out_dir: Optional[Path] = None,
        parallel: bool = False) -> RunResult:
    scale = resolve_scale(config.scale_factor, scale)
    points = [Point(s, d) for s in config.input_sizes_mb for d in config.added_delays_ms]
    if parallel:
        warnings.warn("running grid points concurrently; timing fidelity is not guaranteed", stacklevel=2)
        with ThreadPoolExecutor(max_workers=len(points)) as pool:
            chunks = list(pool.map(lambda p: _run_point(config, config.deploy(scale), p), points))
    else:
        cluster = config.deploy(scale)
        chunks = [_run_point(config, cluster, p) for p in points]
    records = [r for chunk in chunks for r in chunk]

    failed_points = []
    for point, chunk in zip(points, chunks):
        for mode in config.modes:
            mode_recs = [r for r in chunk if r.mode is mode]
            if mode_recs and all(r.failed for r in mode_recs):
                failed_points.append((point.size_mb, point.added_delay_ms, mode.value))
    summary = summarize(records)
    result = RunResult(records, summary, failed_points)
    if out_dir is not None:
        write_results(out_dir, records, summary, config.modes)
        result.out_dir = out_dir
    return result


def format_table(summary: Sequence[SummaryRow]) -> str:
    header = f"{'workload':<8} {'storage':<12} {'MB':>6} {'delay':>7} {'baseline':>10} {'truffle':>10} " \
             f"{'improv%':>8} {'io_ratio':>8}"
    lines = [header, "-" * len(header)]
    for r in summary:
        lines.append(f"{r.workload:<8} {r.storage_kind:<12} {r.size_mb:>6g} {r.added_delay_ms:>7g} "
                     f"{_fmt(r.baseline_mean_ms):>10} {_fmt(r.truffle_mean_ms):>10} "
                     f"{_fmt(r.improvement_pct):>8} {_fmt(r.io_ratio):>8}")
    return "\n".join(lines)


def _cmd_run(args) -> int:
    try:
        config = ExperimentConfig.load(args.config)
        if args.mode != "both":
            config.modes = [Mode(args.mode)]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or config.output_path)
    try:
        result = run(config, scale=args.scale, out_dir=out_dir, parallel=args.parallel)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(format_table(result.summary))
    print(f"wrote {out_dir}/results.csv")
    for size, delay, mode in result.failed_points:
        print(f"all repetitions failed: size={size} delay={delay} mode={mode}", file=sys.stderr)
    return result.exit_code


def _cmd_summarize(args) -> int:
    in_dir = Path(args.in_dir)
    try:
        records = read_records(in_dir)
    except (OSError, ValueError) as exc:
        print(f"cannot read records from {in_dir}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = summarize(records)
    (in_dir / "summary.json").write_text(json.dumps(_json_safe([asdict(s) for s in summary]), indent=2))
    print(format_table(summary))
    return EXIT_OK if all(s.comparable for s in summary) else EXIT_PARTIAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="truffle-bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--mode", choices=["baseline", "truffle", "both"], default="both")
    p_run.add_argument("--scale", type=float, default=None, help="time-scale factor (overrides config and env)")
    p_run.add_argument("--out", default=None, help="output directory (default: config output_path)")
    p_run.add_argument("--parallel", action="store_true", help="run grid points concurrently")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="rebuild the summary table from records.jsonl")
    p_sum.add_argument("--in", dest="in_dir", required=True)
    p_sum.set_defaults(func=_cmd_summarize)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
