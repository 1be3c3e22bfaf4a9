"""Native-vs-modified latency comparison and the partition sweep."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, replace

from orderedlog.errors import ConfigInvalid
from orderedlog.sim.config import MODIFIED_STRATEGIES, ScenarioConfig, Strategy
from orderedlog.sim.harness import run_scenario

# buffering only pays off once the buffer is allowed to fill
BENCH_WRITE_SIZE = 10


@dataclass(frozen=True)
class ComparisonRow:
    strategy: Strategy
    native_latency_ms: float
    modified_latency_ms: float
    modified_throughput_per_s: float

    @property
    def overhead_ms(self) -> float:
        return self.modified_latency_ms - self.native_latency_ms


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]
    seeds: list[int]

    def row(self, strategy: Strategy) -> ComparisonRow:
        for r in self.rows:
            if r.strategy is strategy:
                return r
        raise KeyError(strategy)

    def overheads(self) -> dict[Strategy, float]:
        return {r.strategy: r.overhead_ms for r in self.rows}

    def ranking(self) -> list[Strategy]:
        """Modified strategies, smallest overhead first."""
        mods = [r for r in self.rows if r.strategy is not Strategy.NATIVE]
        return [r.strategy for r in sorted(mods, key=lambda r: r.overhead_ms)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "native_latency_ms", "modified_latency_ms", "overhead_ms",
                    "throughput_per_s"])
        for r in self.rows:
            w.writerow([r.strategy.value, f"{r.native_latency_ms:.6f}",
                        f"{r.modified_latency_ms:.6f}", f"{r.overhead_ms:.6f}",
                        f"{r.modified_throughput_per_s:.3f}"])
        return buf.getvalue()

    def findings(self) -> list[str]:
        order = self.ranking()
        if not order:
            return []
        lines = [f"smallest overhead: {order[0].value} ({self.row(order[0]).overhead_ms:.3f} ms)",
                 f"largest overhead: {order[-1].value} ({self.row(order[-1]).overhead_ms:.3f} ms)",
                 "overhead order: " + " < ".join(s.value for s in order)]
        return lines


def native_equivalent(config: ScenarioConfig) -> ScenarioConfig:
    """Native run with the same workload, delays and consumer count."""
    return replace(config, strategy=Strategy.NATIVE, num_consumers=config.effective_consumers,
                   faults=())


def _mean_over_seeds(config: ScenarioConfig, seeds) -> tuple[float, float]:
    lat, thr = [], []
    for seed in seeds:
        report = run_scenario(replace(config, seed=seed)).report
        lat.append(report.mean_latency_ms)
        thr.append(report.throughput_per_s)
    return statistics.fmean(lat), statistics.fmean(thr)


def compare_strategies(base: ScenarioConfig, strategies, seeds) -> ComparisonTable:
    strategies = [Strategy.parse(s) if isinstance(s, str) else s for s in strategies]
    seeds = list(seeds)
    if len(set(strategies)) < 2:
        raise ConfigInvalid("bench needs at least two distinct strategies")
    if not seeds:
        raise ConfigInvalid("bench needs at least one seed")
    rows = []
    for s in strategies:
        cfg = replace(base, strategy=s).validate()
        modified, thr = _mean_over_seeds(cfg, seeds)
        if s is Strategy.NATIVE:
            native = modified
        else:
            native, _ = _mean_over_seeds(native_equivalent(cfg), seeds)
        rows.append(ComparisonRow(s, native, modified, thr))
    return ComparisonTable(rows, seeds)


@dataclass(frozen=True)
class SweepPoint:
    num_partitions: int
    burst_size: int
    arrival_interval_ms: float
    aggregator_throughput: float
    single_throughput: float
    aggregator_latency_ms: float
    single_latency_ms: float

    @property
    def aggregator_wins_throughput(self) -> bool:
        return self.aggregator_throughput >= self.single_throughput


def partition_sweep(base: ScenarioConfig, partitions=(3, 8, 16), bursts=(700, 3000),
                    intervals=(1.5, 0.5), seeds=(1,)) -> list[SweepPoint]:
    """Aggregator vs single consumer as partitions and message rate grow.

    Aggregator consumers are matched one per partition.
    """
    points = []
    for p in partitions:
        for burst in bursts:
            for interval in intervals:
                cfg = replace(base, num_partitions=p, num_consumers=p, burst_size=burst,
                              arrival_interval_ms=interval)
                agg_lat, agg_thr = _mean_over_seeds(replace(cfg, strategy=Strategy.AGGREGATOR),
                                                    seeds)
                sc_lat, sc_thr = _mean_over_seeds(
                    replace(cfg, strategy=Strategy.SINGLE_CONSUMER), seeds)
                points.append(SweepPoint(p, burst, interval, agg_thr, sc_thr, agg_lat, sc_lat))
    return points


def sweep_csv(points: list[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["partitions", "burst", "arrival_interval_ms", "aggregator_throughput_per_s",
                "single_consumer_throughput_per_s", "aggregator_latency_ms",
                "single_consumer_latency_ms"])
    for p in points:
        w.writerow([p.num_partitions, p.burst_size, p.arrival_interval_ms,
                    f"{p.aggregator_throughput:.3f}", f"{p.single_throughput:.3f}",
                    f"{p.aggregator_latency_ms:.6f}", f"{p.single_latency_ms:.6f}"])
    return buf.getvalue()


__all__ = ["BENCH_WRITE_SIZE", "ComparisonRow", "ComparisonTable", "MODIFIED_STRATEGIES",
           "SweepPoint", "compare_strategies", "native_equivalent", "partition_sweep",
           "sweep_csv"]
