"""In-process partitioned log broker.

Topics are split into a fixed number of append-only partitions. Each partition
hands out offsets starting at 0 and never reorders what it stores, which is the
only ordering guarantee the broker gives. Ordering across partitions is the job
of the strategies layered on top.
"""

from __future__ import annotations

import enum
import struct
import threading
from dataclasses import dataclass, field
from typing import Iterable

from orderedlog.errors import (
    DuplicateTopic,
    OffsetRegression,
    UnknownPartition,
    UnknownTopic,
    ZeroPartitions,
)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


@dataclass(slots=True)
class Message:
    topic: str
    key: int
    payload: bytes = b""
    batch_id: int | None = None
    intra_batch_index: int | None = None
    produce_ts: int | None = None  # virtual nanoseconds
    partition: int | None = None
    offset: int | None = None


@dataclass(frozen=True)
class TopicSpec:
    name: str
    num_partitions: int


class PartitionerPolicy(enum.Enum):
    HASH_OF_KEY = "hash"
    ROUND_ROBIN = "round_robin"


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & _U64
    return h


def key_hash(key: int) -> int:
    return fnv1a_64(struct.pack("<Q", key & _U64))


@dataclass
class PartitionLog:
    entries: list[Message] = field(default_factory=list)

    @property
    def next_offset(self) -> int:
        return len(self.entries)

    def append(self, message: Message) -> int:
        offset = len(self.entries)
        message.offset = offset
        self.entries.append(message)
        return offset

    def read(self, from_offset: int, max_count: int) -> list[Message]:
        if from_offset >= len(self.entries):
            return []
        return self.entries[from_offset:from_offset + max_count]


@dataclass
class Topic:
    spec: TopicSpec
    partitions: list[PartitionLog]
    rr_cursor: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def num_partitions(self) -> int:
        return self.spec.num_partitions


class Broker:
    """A single logical broker holding every topic.

    ``clock`` is a zero-argument callable returning the current time in
    nanoseconds; it stamps ``produce_ts`` on messages that arrive without one.
    """

    def __init__(self, clock=None, record_fetches: bool = False):
        self._topics: dict[str, Topic] = {}
        self._offsets: dict[tuple[str, str, int], int] = {}
        self._lock = threading.Lock()
        self._clock = clock or (lambda: 0)
        self.record_fetches = record_fetches
        self.fetch_log: list[tuple[object, str, int, int]] = []

    # -- topics --------------------------------------------------------------

    def create_topic(self, spec: TopicSpec) -> Topic:
        if spec.num_partitions < 1:
            raise ZeroPartitions(f"topic {spec.name!r} needs at least one partition")
        if not spec.name:
            raise ValueError("topic name must be nonempty")
        with self._lock:
            if spec.name in self._topics:
                raise DuplicateTopic(spec.name)
            topic = Topic(spec, [PartitionLog() for _ in range(spec.num_partitions)])
            self._topics[spec.name] = topic
            return topic

    def topic(self, name: str) -> Topic:
        try:
            return self._topics[name]
        except KeyError:
            raise UnknownTopic(name) from None

    def _partition(self, topic: str, partition: int) -> PartitionLog:
        t = self.topic(topic)
        if not 0 <= partition < t.num_partitions:
            raise UnknownPartition(f"{topic}[{partition}]")
        return t.partitions[partition]

    # -- produce -------------------------------------------------------------

    def select_partition(self, topic: Topic, message: Message, policy: PartitionerPolicy) -> int:
        """Pick a partition. Caller must hold ``topic.lock``.

        Round-robin over batched messages cycles by batch number, so a whole
        batch lands in one partition and consecutive batches rotate.
        """
        n = topic.num_partitions
        if policy is PartitionerPolicy.HASH_OF_KEY:
            return key_hash(message.key) % n
        if message.batch_id is not None:
            return message.batch_id % n
        p = topic.rr_cursor
        topic.rr_cursor = (p + 1) % n
        return p

    def produce(self, topic: str, message: Message,
                policy: PartitionerPolicy = PartitionerPolicy.HASH_OF_KEY) -> tuple[int, int]:
        if message.offset is not None:
            raise ValueError("message already has an offset")
        t = self.topic(topic)
        with t.lock:
            p = self.select_partition(t, message, policy)
            if message.produce_ts is None:
                message.produce_ts = self._clock()
            message.partition = p
            offset = t.partitions[p].append(message)
        return p, offset

    def produce_batch(self, topic: str, messages: Iterable[Message],
                      policy: PartitionerPolicy = PartitionerPolicy.ROUND_ROBIN) -> tuple[int, list[int]]:
        """Append messages atomically and contiguously to one partition."""
        messages = list(messages)
        if not messages:
            raise ValueError("empty batch")
        t = self.topic(topic)
        with t.lock:
            p = self.select_partition(t, messages[0], policy)
            log = t.partitions[p]
            now = self._clock()
            offsets = []
            for m in messages:
                if m.offset is not None:
                    raise ValueError("message already has an offset")
                if m.produce_ts is None:
                    m.produce_ts = now
                m.partition = p
                offsets.append(log.append(m))
        return p, offsets

    # -- fetch ---------------------------------------------------------------

    def fetch(self, topic: str, partition: int, from_offset: int, max_count: int,
              consumer=None) -> list[Message]:
        log = self._partition(topic, partition)
        if self.record_fetches:
            self.fetch_log.append((consumer, topic, partition, from_offset))
        return log.read(from_offset, max_count)

    def end_offset(self, topic: str, partition: int) -> int:
        return self._partition(topic, partition).next_offset

    # -- consumer offsets ------------------------------------------------------

    def committed_offset(self, group: str, topic: str, partition: int) -> int:
        self._partition(topic, partition)
        return self._offsets.get((group, topic, partition), 0)

    def advance_offset(self, group: str, topic: str, partition: int, new_offset: int) -> None:
        self._partition(topic, partition)
        with self._lock:
            current = self._offsets.get((group, topic, partition), 0)
            if new_offset < current:
                raise OffsetRegression(
                    f"{group}/{topic}[{partition}]: {new_offset} < committed {current}")
            self._offsets[(group, topic, partition)] = new_offset


def assign_partitions(num_partitions: int, consumer_ids: list) -> dict:
    """Round-robin assignor: partition p goes to consumer p mod len(consumers).

    Consumers beyond the partition count get nothing, as in a real group.
    """
    assignment = {c: [] for c in consumer_ids}
    for p in range(num_partitions):
        assignment[consumer_ids[p % len(consumer_ids)]].append(p)
    return assignment
