"""Batch commit on the producer side, atomic broadcast on the consumer side.

Producers get a batch number from the Raft allocator and write the whole batch
to partition ``batch_id % P``. Consumers hold complete batches and deliver
them strictly in batch-number order. Knowledge of the next batch to commit
spreads through ``Delivered`` broadcasts; when those go missing, a timeout
makes a consumer announce its lowest held batch, and peers answer with theirs.

A consumer only ever delivers the batch equal to ``next_commit``, and
``next_commit`` only moves forward when the previous batch was delivered, so
the announce rounds can speed things up but cannot break the order.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from orderedlog.broker import Broker, Message, PartitionerPolicy
from orderedlog.errors import DuplicateDelivery, IncompleteBatchAtEnd


@dataclass(frozen=True, slots=True)
class AnnounceLowest:
    sender: int
    lowest_batch: int | None
    next_commit: int
    reply: bool = False
    attempt: int = 0


@dataclass(frozen=True, slots=True)
class Delivered:
    sender: int
    batch_id: int
    next_commit: int

    def __post_init__(self):
        if self.next_commit != self.batch_id + 1:
            raise ValueError("Delivered.next_commit must be batch_id + 1")


BroadcastMessage = AnnounceLowest | Delivered


@dataclass
class Step:
    deliveries: list[tuple[int, list[Message]]] = field(default_factory=list)
    outbound: list = field(default_factory=list)

    def extend(self, other: "Step") -> None:
        self.deliveries.extend(other.deliveries)
        self.outbound.extend(other.outbound)


def stamp_batch(batch_id: int, messages: list[Message], batch_size: int) -> list[Message]:
    """Give each message its batch identity and a batch-contiguous key."""
    if len(messages) > batch_size:
        raise ValueError(f"{len(messages)} messages exceed batch size {batch_size}")
    for i, m in enumerate(messages):
        m.batch_id = batch_id
        m.intra_batch_index = i
        m.key = batch_id * batch_size + i
    return messages


def produce_batch(broker: Broker, topic: str, batch_id: int, messages: list[Message],
                  batch_size: int) -> tuple[int, list[int]]:
    """Stamp and append a batch to partition ``batch_id % P`` in index order."""
    if len(messages) != batch_size:
        raise ValueError(f"expected exactly {batch_size} messages, got {len(messages)}")
    stamp_batch(batch_id, messages, batch_size)
    return broker.produce_batch(topic, messages, PartitionerPolicy.ROUND_ROBIN)


class BatchBroadcastConsumer:
    def __init__(self, consumer_id: int, peers, batch_size: int,
                 owned_partitions=(), next_commit: int = 0):
        self.consumer_id = consumer_id
        self.peers = sorted(set(peers) | {consumer_id})
        self.batch_size = batch_size
        self.owned_partitions = list(owned_partitions)
        self.next_commit = next_commit

        self._partial: dict[int, dict[int, Message]] = {}
        self.held: dict[int, list[Message]] = {}
        self._held_heap: list[int] = []
        self.delivered_batches: list[int] = []
        self.observed_commits: list[int] = []

        self._announces: dict[int, dict[int, int | None]] = {}
        self._replied: set[tuple[int, int]] = set()
        self._attempt = 0
        self.agreed_lowest: dict[int, int | None] = {}

    # -- state -----------------------------------------------------------------

    def lowest(self) -> int | None:
        heap = self._held_heap
        while heap and heap[0] not in self.held:
            heapq.heappop(heap)
        return heap[0] if heap else None

    def needs_timer(self) -> bool:
        """True while this consumer holds a batch it cannot deliver yet."""
        return bool(self.held)

    def partial_batches(self) -> dict[int, int]:
        return {b: len(parts) for b, parts in self._partial.items()}

    def teardown_check(self) -> None:
        if self._partial:
            raise IncompleteBatchAtEnd(
                f"consumer {self.consumer_id} has incomplete batches {self.partial_batches()}")

    # -- delivery ----------------------------------------------------------------

    def _deliver_ready(self) -> Step:
        step = Step()
        while self.next_commit in self.held:
            b = self.next_commit
            msgs = self.held.pop(b)
            self.delivered_batches.append(b)
            self.observed_commits.append(b)
            self.next_commit = b + 1
            step.deliveries.append((b, msgs))
            step.outbound.append(Delivered(self.consumer_id, b, b + 1))
        return step

    def _learn(self, next_commit: int) -> None:
        if next_commit > self.next_commit:
            self.next_commit = next_commit

    # -- inputs --------------------------------------------------------------------

    def on_fetch(self, messages) -> Step:
        for m in messages:
            if m.batch_id is None or m.intra_batch_index is None:
                raise ValueError(f"message {m.key} has no batch identity")
            if m.batch_id < self.next_commit or m.batch_id in self.held:
                raise DuplicateDelivery(f"batch {m.batch_id} fetched after it was complete")
            parts = self._partial.setdefault(m.batch_id, {})
            parts[m.intra_batch_index] = m
            if len(parts) == self.batch_size:
                del self._partial[m.batch_id]
                self.held[m.batch_id] = [parts[i] for i in range(self.batch_size)]
                heapq.heappush(self._held_heap, m.batch_id)
        return self._deliver_ready()

    def on_timeout(self) -> AnnounceLowest:
        self._attempt += 1
        msg = AnnounceLowest(self.consumer_id, self.lowest(), self.next_commit,
                             reply=False, attempt=self._attempt)
        self._record_announce(msg)
        return msg

    def on_broadcast(self, msg) -> Step:
        if isinstance(msg, Delivered):
            return self._on_delivered(msg)
        if isinstance(msg, AnnounceLowest):
            return self._on_announce(msg)
        raise TypeError(f"unexpected broadcast {msg!r}")

    def _on_delivered(self, msg: Delivered) -> Step:
        if msg.sender != self.consumer_id and (
                msg.batch_id in self.held or msg.batch_id in self.delivered_batches):
            raise DuplicateDelivery(
                f"batch {msg.batch_id} delivered by {msg.sender} but owned by {self.consumer_id}")
        if msg.batch_id not in self.observed_commits:
            self.observed_commits.append(msg.batch_id)
        self._learn(msg.next_commit)
        return self._deliver_ready()

    def _on_announce(self, msg: AnnounceLowest) -> Step:
        self._learn(msg.next_commit)
        step = self._deliver_ready()
        if not msg.reply and (msg.sender, msg.attempt) not in self._replied:
            self._replied.add((msg.sender, msg.attempt))
            reply = AnnounceLowest(self.consumer_id, self.lowest(), self.next_commit, reply=True)
            self._record_announce(reply)
            step.outbound.append(reply)
        self._record_announce(msg)
        step.extend(self._try_complete_round())
        return step

    def _record_announce(self, msg: AnnounceLowest) -> None:
        self._announces.setdefault(msg.next_commit, {})[msg.sender] = msg.lowest_batch
        # rounds behind our knowledge can never complete usefully
        for r in [r for r in self._announces if r < self.next_commit]:
            del self._announces[r]

    def _try_complete_round(self) -> Step:
        r = self.next_commit
        got = self._announces.get(r)
        if got is None or len(got) < len(self.peers):
            return Step()
        del self._announces[r]
        lows = [v for v in got.values() if v is not None]
        agreed = min(lows) if lows else None
        self.agreed_lowest[r] = agreed
        if agreed is not None and agreed == self.next_commit:
            return self._deliver_ready()
        return Step()
