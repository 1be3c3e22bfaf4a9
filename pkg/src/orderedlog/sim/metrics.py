"""Delivery records, latency summaries and their file formats."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path

from orderedlog.sim.clock import NS_PER_MS
from orderedlog.sim.oracle import oracle_check, per_partition_violations


@dataclass(frozen=True, slots=True)
class DeliveryRecord:
    key: int
    batch_id: int | None
    consumer_id: int
    partition: int
    offset: int
    produce_ts: int
    deliver_ts: int

    @property
    def latency_ns(self) -> int:
        return self.deliver_ts - self.produce_ts

    @property
    def latency_ms(self) -> float:
        return self.latency_ns / NS_PER_MS

    def to_json(self) -> str:
        d = asdict(self)
        d["latency_ms"] = self.latency_ms
        return json.dumps(d, separators=(",", ":"))


@dataclass
class MetricsReport:
    strategy: str
    produced: int
    delivered: int
    latency_by_key: dict[int, float] = field(default_factory=dict)
    mean_latency_ms: float = 0.0
    median_latency_ms: float = 0.0
    p99_latency_ms: float = 0.0
    total_runtime_ms: float = 0.0
    throughput_per_s: float = 0.0
    violations: int = 0
    duplicates: int = 0
    gaps: int = 0
    per_partition_violations: int = 0
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("latency_by_key")
        return d


def percentile(values: list[float], q: float) -> float:
    """Linear-interpolated percentile, q in [0, 100]."""
    if not values:
        return 0.0
    ordered = sorted(values)
    pos = (len(ordered) - 1) * q / 100.0
    lo = int(pos)
    hi = min(lo + 1, len(ordered) - 1)
    return ordered[lo] + (ordered[hi] - ordered[lo]) * (pos - lo)


def build_report(strategy: str, transcript: list[DeliveryRecord], produced_keys,
                 start_ts: int, extra: dict | None = None) -> MetricsReport:
    produced_keys = list(produced_keys)
    report = MetricsReport(strategy=strategy, produced=len(produced_keys),
                           delivered=len(transcript), extra=dict(extra or {}))
    if not transcript:
        report.gaps = len(set(produced_keys))
        return report
    series = [r.latency_ms for r in transcript]
    report.latency_by_key = {r.key: r.latency_ms for r in transcript}
    report.mean_latency_ms = statistics.fmean(series)
    report.median_latency_ms = statistics.median(series)
    report.p99_latency_ms = percentile(series, 99)
    runtime_ns = max(r.deliver_ts for r in transcript) - start_ts
    report.total_runtime_ms = runtime_ns / NS_PER_MS
    if runtime_ns > 0:
        report.throughput_per_s = len(transcript) / (runtime_ns / 1e9)
    result = oracle_check([r.key for r in transcript], produced_keys)
    report.violations = result.violations
    report.duplicates = result.duplicates
    report.gaps = result.gaps
    report.per_partition_violations = per_partition_violations(transcript)
    return report


# -- exports ----------------------------------------------------------------------

def transcript_jsonl(transcript: list[DeliveryRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in transcript)


def latency_csv(transcript: list[DeliveryRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["request_id", "latency_ms"])
    for r in sorted(transcript, key=lambda r: r.key):
        w.writerow([r.key, f"{r.latency_ms:.6f}"])
    return buf.getvalue()


def summary_json(report: MetricsReport) -> str:
    return json.dumps(report.summary(), indent=2, sort_keys=True) + "\n"


def write_outputs(out_dir: str | Path, transcript, report, stem: str = "run") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "transcript": out / f"{stem}.transcript.jsonl",
        "latency": out / f"{stem}.latency.csv",
        "summary": out / f"{stem}.summary.json",
    }
    paths["transcript"].write_text(transcript_jsonl(transcript))
    paths["latency"].write_text(latency_csv(transcript))
    paths["summary"].write_text(summary_json(report))
    return paths


def read_transcript(path: str | Path) -> list[DeliveryRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        d.pop("latency_ms", None)
        records.append(DeliveryRecord(**d))
    return records
