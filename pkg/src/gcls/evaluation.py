"""Metric reconstruction, sampling error, speedup, and a name-based baseline.

Given a cluster plan and a per-kernel metric table, the full-workload
value of an additive metric is estimated as the weight-scaled sum of
the representatives' values; rate-like metrics use a weight-normalized
mean.  Sampling error is the absolute relative deviation in percent,
and speedup is the ratio of total execution time over all kernels to
the execution time of the representatives alone.

The baseline mirrors name-based stratification: kernels sharing a name
form one cluster unless their instruction counts vary too much, in
which case the group is split by count quartiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterGroup, ClusterPlan
from .errors import ConfigError, MissingMetric, ZeroFull, ZeroSampledTime

RATIO_METRICS = ("l1_hit", "l2_hit", "occupancy", "ipc")


@dataclass(slots=True)
class KernelMetrics:
    launch_id: int
    kernel_name: str
    cycles: float
    exec_time: float
    instruction_count: int
    l1_hit: float | None = None
    l2_hit: float | None = None
    occupancy: float | None = None
    ipc: float | None = None
    class_id: int | None = None

    def get(self, metric: str):
        if not hasattr(self, metric):
            raise MissingMetric(f"unknown metric {metric!r}")
        return getattr(self, metric)


@dataclass(slots=True)
class MetricTable:
    rows: dict[int, KernelMetrics] = field(default_factory=dict)

    def add(self, row: KernelMetrics) -> None:
        self.rows[row.launch_id] = row

    def launch_ids(self) -> list[int]:
        return sorted(self.rows)

    def value(self, launch_id: int, metric: str) -> float:
        row = self.rows.get(launch_id)
        if row is None:
            raise MissingMetric(f"launch {launch_id} absent from metric table")
        v = row.get(metric)
        if v is None:
            raise MissingMetric(f"metric {metric!r} missing for launch {launch_id}")
        return float(v)

    def has_metric(self, metric: str) -> bool:
        return all(r.get(metric) is not None for r in self.rows.values())

    def to_json(self) -> list[dict]:
        out = []
        for lid in self.launch_ids():
            r = self.rows[lid]
            rec = {
                "launch_id": r.launch_id,
                "kernel_name": r.kernel_name,
                "cycles": r.cycles,
                "exec_time": r.exec_time,
                "instruction_count": r.instruction_count,
            }
            for name in (*RATIO_METRICS, "class_id"):
                v = getattr(r, name)
                if v is not None:
                    rec[name] = v
            out.append(rec)
        return out

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, raw: list[dict]) -> "MetricTable":
        table = cls()
        for rec in raw:
            table.add(
                KernelMetrics(
                    launch_id=int(rec["launch_id"]),
                    kernel_name=str(rec["kernel_name"]),
                    cycles=float(rec["cycles"]),
                    exec_time=float(rec["exec_time"]),
                    instruction_count=int(rec["instruction_count"]),
                    l1_hit=None if rec.get("l1_hit") is None else float(rec["l1_hit"]),
                    l2_hit=None if rec.get("l2_hit") is None else float(rec["l2_hit"]),
                    occupancy=None if rec.get("occupancy") is None else float(rec["occupancy"]),
                    ipc=None if rec.get("ipc") is None else float(rec["ipc"]),
                    class_id=None if rec.get("class_id") is None else int(rec["class_id"]),
                )
            )
        return table

    @classmethod
    def load(cls, path: str) -> "MetricTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def reconstruct_additive(plan: ClusterPlan, table: MetricTable, metric: str) -> float:
    """Estimated full-workload total: sum of weight * representative value."""
    return float(
        sum(c.weight * table.value(c.rep, metric) for c in plan.clusters)
    )


def reconstruct_ratio(
    plan: ClusterPlan, table: MetricTable, metric: str, weighting: str = "count"
) -> float:
    """Estimated workload-level rate as a weighted mean of representatives.

    weighting="count" weights each cluster by its cardinality;
    weighting="cycles" additionally scales by the representative's
    cycle count, approximating a time-weighted rate.
    """
    if weighting not in ("count", "cycles"):
        raise ConfigError(f"unknown ratio weighting {weighting!r}")
    num = 0.0
    den = 0.0
    for c in plan.clusters:
        w = float(c.weight)
        if weighting == "cycles":
            w *= table.value(c.rep, "cycles")
        num += w * table.value(c.rep, metric)
        den += w
    return num / den


def full_additive(table: MetricTable, metric: str) -> float:
    return float(sum(table.value(lid, metric) for lid in table.launch_ids()))


def full_ratio(table: MetricTable, metric: str, weighting: str = "count") -> float:
    """Reference workload-level rate computed over every kernel."""
    if weighting not in ("count", "cycles"):
        raise ConfigError(f"unknown ratio weighting {weighting!r}")
    num = 0.0
    den = 0.0
    for lid in table.launch_ids():
        w = 1.0 if weighting == "count" else table.value(lid, "cycles")
        num += w * table.value(lid, metric)
        den += w
    return num / den


def sampling_error(full: float, sampled: float) -> float:
    """Absolute relative deviation in percent, |full-sampled|/full * 100."""
    if full <= 0.0:
        raise ZeroFull(f"full metric value must be positive, got {full}")
    return abs(full - sampled) / full * 100.0


def speedup(plan: ClusterPlan, table: MetricTable) -> float:
    """Total execution time over all kernels divided by the time spent
    executing each representative exactly once."""
    total = sum(table.value(lid, "exec_time") for lid in table.launch_ids())
    sampled = sum(table.value(rep, "exec_time") for rep in plan.representatives)
    if sampled <= 0.0:
        raise ZeroSampledTime("representatives have zero total execution time")
    return total / sampled


def _cov(values: np.ndarray) -> float:
    mean = values.mean()
    if mean == 0.0:
        return 0.0
    return float(values.std() / mean)


def _stratify(launches: list[int], counts: dict[int, float], threshold: float, depth: int) -> list[list[int]]:
    values = np.array([counts[lid] for lid in launches], dtype=np.float64)
    if len(launches) <= 1 or _cov(values) <= threshold or depth >= 2:
        return [launches]
    q25, q50, q75 = np.percentile(values, [25, 50, 75])
    bins: list[list[int]] = [[], [], [], []]
    for lid in launches:
        c = counts[lid]
        if c <= q25:
            bins[0].append(lid)
        elif c <= q50:
            bins[1].append(lid)
        elif c <= q75:
            bins[2].append(lid)
        else:
            bins[3].append(lid)
    nonempty = [b for b in bins if b]
    if len(nonempty) <= 1:
        return [launches]
    out: list[list[int]] = []
    for b in nonempty:
        out.extend(_stratify(b, counts, threshold, depth + 1))
    return out


def sieve_baseline(table: MetricTable, cov_threshold: float = 0.25) -> ClusterPlan:
    """Name-based stratification baseline.

    Kernels are grouped by name; a group whose instruction counts have
    a coefficient of variation above the threshold is split into
    quartile bins, recursing one level.  Representatives are the
    earliest launch of each stratum.
    """
    if cov_threshold <= 0.0:
        raise ConfigError("cov_threshold must be positive")
    by_name: dict[str, list[int]] = {}
    for lid in table.launch_ids():
        by_name.setdefault(table.rows[lid].kernel_name, []).append(lid)
    counts = {lid: float(table.rows[lid].instruction_count) for lid in table.rows}
    clusters: list[ClusterGroup] = []
    for name in sorted(by_name):
        for stratum in _stratify(by_name[name], counts, cov_threshold, depth=0):
            clusters.append(
                ClusterGroup(rep=min(stratum), weight=len(stratum), members=sorted(stratum))
            )
    clusters.sort(key=lambda c: c.rep)
    return ClusterPlan(k=len(clusters), silhouette=0.0, clusters=clusters)


@dataclass(slots=True)
class MetricComparison:
    full: float
    sampled: float
    error_pct: float


@dataclass(slots=True)
class EvalReport:
    k: int
    speedup: float
    metrics: dict[str, MetricComparison] = field(default_factory=dict)
    plan_ref: str | None = None

    def to_json(self) -> dict:
        return {
            "K": self.k,
            "speedup": self.speedup,
            "plan": self.plan_ref,
            "metrics": {
                name: {"full": m.full, "sampled": m.sampled, "error_pct": m.error_pct}
                for name, m in sorted(self.metrics.items())
            },
        }

    @classmethod
    def from_json(cls, raw: dict) -> "EvalReport":
        report = cls(k=int(raw["K"]), speedup=float(raw["speedup"]), plan_ref=raw.get("plan"))
        for name, m in raw["metrics"].items():
            report.metrics[name] = MetricComparison(
                full=float(m["full"]), sampled=float(m["sampled"]), error_pct=float(m["error_pct"])
            )
        return report

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def compile_report(
    plan: ClusterPlan,
    table: MetricTable,
    ratio_weighting: str = "count",
    plan_ref: str | None = None,
) -> EvalReport:
    """Errors for cycles plus every rate metric the table fully covers."""
    report = EvalReport(k=plan.k, speedup=speedup(plan, table), plan_ref=plan_ref)
    full_cycles = full_additive(table, "cycles")
    sampled_cycles = reconstruct_additive(plan, table, "cycles")
    report.metrics["cycles"] = MetricComparison(
        full=full_cycles,
        sampled=sampled_cycles,
        error_pct=sampling_error(full_cycles, sampled_cycles),
    )
    for name in RATIO_METRICS:
        if not table.has_metric(name):
            continue
        full = full_ratio(table, name, ratio_weighting)
        sampled = reconstruct_ratio(plan, table, name, ratio_weighting)
        report.metrics[name] = MetricComparison(
            full=full, sampled=sampled, error_pct=sampling_error(full, sampled)
        )
    return report
