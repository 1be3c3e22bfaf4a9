"""Scenario configuration and fault descriptions."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from orderedlog.errors import ConfigInvalid


class Strategy(str, enum.Enum):
    NATIVE = "native"
    AGGREGATOR = "aggregator"
    SINGLE_CONSUMER = "single_consumer"
    BATCH_BROADCAST = "batch_broadcast"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        try:
            return cls(name.strip().lower().replace("-", "_"))
        except ValueError:
            raise ConfigInvalid(f"unknown strategy {name!r}; choose from "
                                f"{', '.join(s.value for s in cls)}") from None


MODIFIED_STRATEGIES = (Strategy.AGGREGATOR, Strategy.SINGLE_CONSUMER, Strategy.BATCH_BROADCAST)


class Mode(str, enum.Enum):
    VIRTUAL = "virtual"
    WALLCLOCK = "wallclock"


@dataclass(frozen=True)
class DelayModel:
    """Per-hop base delays in milliseconds.

    Each hop draws ``base * uniform(1 - jitter, 1 + jitter)``. ``lock_acquire_ms``
    is the round trip to the lock service; ``lock_hold_ms`` is how long the
    service keeps the lock per token.
    """

    produce_broker_ms: float = 1.0
    broker_consumer_ms: float = 1.0
    broadcast_ms: float = 0.5
    lock_acquire_ms: float = 1.0
    lock_hold_ms: float = 0.25
    raft_rpc_ms: float = 0.5
    middleware_ms: float = 0.5
    jitter: float = 0.5


# -- faults ---------------------------------------------------------------------

@dataclass(frozen=True)
class DropKey:
    """The producer holding this sequence token never sends the message."""
    key: int


@dataclass(frozen=True)
class PauseConsumer:
    consumer_id: int
    at_ms: float
    duration_ms: float


@dataclass(frozen=True)
class KillRaftNode:
    """Crash a Raft node (``"leader"`` picks whoever leads at ``at_ms``)."""
    node: int | str = "leader"
    at_ms: float = 0.0
    restart_after_ms: float | None = None


@dataclass(frozen=True)
class LoseBroadcasts:
    rate: float
    retransmit: bool = True


Fault = DropKey | PauseConsumer | KillRaftNode | LoseBroadcasts
_FAULT_TYPES = {cls.__name__: cls for cls in (DropKey, PauseConsumer, KillRaftNode, LoseBroadcasts)}


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    strategy: Strategy = Strategy.AGGREGATOR
    num_partitions: int = 3
    num_producers: int = 4
    num_consumers: int = 3
    burst_size: int = 700
    arrival_interval_ms: float = 1.5
    batch_size: int = 1
    write_size: int = 1
    high_watermark: int | None = None
    broadcast_timeout_ms: float = 50.0
    loss_rate: float = 0.0
    retransmit: bool = True
    raft_nodes: int = 3
    election_timeout_ms: tuple[float, float] = (150.0, 300.0)
    heartbeat_ms: float = 50.0
    idle_timeout_ms: float = 10_000.0
    delays: DelayModel = field(default_factory=DelayModel)
    mode: Mode = Mode.VIRTUAL
    time_scale: float = 1.0
    faults: tuple = ()
    topic: str = "events"

    @property
    def effective_consumers(self) -> int:
        if self.strategy is Strategy.SINGLE_CONSUMER:
            return 1
        return min(self.num_consumers, self.num_partitions)

    def validate(self) -> "ScenarioConfig":
        problems = []
        if not isinstance(self.strategy, Strategy):
            problems.append(f"strategy {self.strategy!r}")
        if self.num_partitions < 1:
            problems.append("num_partitions must be >= 1")
        if self.num_producers < 1:
            problems.append("num_producers must be >= 1")
        if self.num_consumers < 1:
            problems.append("num_consumers must be >= 1")
        if self.burst_size < 0:
            problems.append("burst_size must be >= 0")
        if self.arrival_interval_ms < 0:
            problems.append("arrival_interval_ms must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.write_size < 1:
            problems.append("write_size must be >= 1")
        if self.high_watermark is not None and self.high_watermark < 1:
            problems.append("high_watermark must be >= 1")
        if self.broadcast_timeout_ms <= 0:
            problems.append("broadcast_timeout_ms must be > 0")
        if not 0.0 <= self.loss_rate < 1.0:
            problems.append("loss_rate must be in [0, 1)")
        if self.raft_nodes < 1 or self.raft_nodes % 2 == 0:
            problems.append("raft_nodes must be a positive odd number")
        lo, hi = self.election_timeout_ms
        if not 0 < lo <= hi:
            problems.append("election_timeout_ms must be an increasing positive range")
        if self.idle_timeout_ms <= 0:
            problems.append("idle_timeout_ms must be > 0")
        if not 0.0 <= self.delays.jitter < 1.0:
            problems.append("delays.jitter must be in [0, 1)")
        if self.strategy is Strategy.BATCH_BROADCAST and self.burst_size % self.batch_size:
            problems.append("burst_size must be a multiple of batch_size for batch_broadcast")
        if self.time_scale <= 0:
            problems.append("time_scale must be > 0")
        for f in self.faults:
            if not isinstance(f, tuple(_FAULT_TYPES.values())):
                problems.append(f"unknown fault {f!r}")
            elif isinstance(f, LoseBroadcasts) and not 0.0 <= f.rate < 1.0:
                problems.append("LoseBroadcasts.rate must be in [0, 1)")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["mode"] = self.mode.value
        d["election_timeout_ms"] = list(self.election_timeout_ms)
        d["faults"] = [{"type": type(f).__name__, **asdict(f)} for f in self.faults]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config fields: {sorted(unknown)}")
        kw = dict(data)
        try:
            if "strategy" in kw:
                kw["strategy"] = Strategy.parse(str(kw["strategy"]))
            if "mode" in kw:
                kw["mode"] = Mode(kw["mode"])
            if "delays" in kw:
                kw["delays"] = replace(DelayModel(), **kw["delays"])
            if "election_timeout_ms" in kw:
                kw["election_timeout_ms"] = tuple(kw["election_timeout_ms"])
            if "faults" in kw:
                kw["faults"] = tuple(_fault_from_dict(f) for f in kw["faults"])
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigInvalid("config file must hold a JSON object")
        return cls.from_dict(data)


def _fault_from_dict(data: dict):
    data = dict(data)
    kind = data.pop("type", None)
    if kind not in _FAULT_TYPES:
        raise ConfigInvalid(f"unknown fault type {kind!r}")
    return _FAULT_TYPES[kind](**data)


def inject_fault(config: ScenarioConfig, fault) -> ScenarioConfig:
    return replace(config, faults=tuple(config.faults) + (fault,))
