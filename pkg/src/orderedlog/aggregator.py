"""Aggregator-and-sorter ordering layer.

A middleware outside the consumers pulls from every consumer, parks messages
in a min-ordered reorder buffer and lets through only the contiguous run that
starts at the next expected sequence token. Delivery is attempted only once
the buffer holds at least ``write_size`` messages.
"""

from __future__ import annotations

import heapq
from typing import Callable, Iterable

from orderedlog.broker import Broker, Message
from orderedlog.errors import BufferOverflow, IdleTimeout, StaleOrDuplicateKey


class ReorderBuffer:
    def __init__(self, write_size: int = 1, high_watermark: int | None = None,
                 next_expected: int = 0):
        if write_size < 1:
            raise ValueError("write_size must be positive")
        if high_watermark is not None and high_watermark < 1:
            raise ValueError("high_watermark must be positive")
        self.write_size = write_size
        self.high_watermark = high_watermark
        self.next_expected = next_expected
        self._heap: list[tuple[int, int, Message]] = []
        self._keys: set[int] = set()
        self._seq = 0
        self.peak = 0

    def __len__(self) -> int:
        return len(self._heap)

    def __contains__(self, key: int) -> bool:
        return key in self._keys

    def pending_keys(self) -> list[int]:
        return sorted(self._keys)

    def ingest(self, message: Message) -> None:
        key = message.key
        if key < self.next_expected or key in self._keys:
            raise StaleOrDuplicateKey(f"key {key} (next expected {self.next_expected})")
        if self.high_watermark is not None and len(self._heap) >= self.high_watermark:
            raise BufferOverflow(
                f"{len(self._heap)} messages pending, waiting on key {self.next_expected}")
        heapq.heappush(self._heap, (key, self._seq, message))
        self._seq += 1
        self._keys.add(key)
        if len(self._heap) > self.peak:
            self.peak = len(self._heap)

    def drain(self, force: bool = False) -> list[Message]:
        """Release the maximal contiguous run starting at ``next_expected``.

        Nothing is released while fewer than ``write_size`` messages are
        pending, unless ``force`` is set (end of stream).
        """
        heap = self._heap
        if not force and len(heap) < self.write_size:
            return []
        out = []
        while heap and heap[0][0] == self.next_expected:
            _, _, msg = heapq.heappop(heap)
            self._keys.discard(msg.key)
            out.append(msg)
            self.next_expected += 1
        return out


def aggregator_ingest(buffer: ReorderBuffer, message: Message) -> None:
    buffer.ingest(message)


def aggregator_drain(buffer: ReorderBuffer) -> list[Message]:
    return buffer.drain()


class PartitionConsumer:
    """Reads one message per call, cycling over its assigned partitions."""

    def __init__(self, broker: Broker, topic: str, partitions: Iterable[int], consumer_id=0):
        self.broker = broker
        self.topic = topic
        self.partitions = list(partitions)
        self.consumer_id = consumer_id
        self.cursors = {p: 0 for p in self.partitions}
        self._turn = 0

    def get_message(self) -> Message | None:
        for _ in range(len(self.partitions)):
            p = self.partitions[self._turn]
            self._turn = (self._turn + 1) % len(self.partitions)
            got = self.broker.fetch(self.topic, p, self.cursors[p], 1, consumer=self.consumer_id)
            if got:
                self.cursors[p] += 1
                return got[0]
        return None


def aggregator_run(consumers: list, buffer: ReorderBuffer,
                   on_deliver: Callable[[Message], None] | None = None) -> list[Message]:
    """Poll consumers round-robin until they run dry, delivering in order.

    When a full round yields nothing the stream has ended: the buffer is
    flushed regardless of ``write_size``. Anything still pending after the
    flush sits behind a missing token and raises ``IdleTimeout``.
    """
    delivered: list[Message] = []

    def emit(batch):
        for m in batch:
            delivered.append(m)
            if on_deliver is not None:
                on_deliver(m)

    while True:
        progressed = False
        for consumer in consumers:
            message = consumer.get_message()
            if message is None:
                continue
            progressed = True
            buffer.ingest(message)
            emit(buffer.drain())
        if not progressed:
            break
    emit(buffer.drain(force=True))
    if len(buffer):
        raise IdleTimeout(
            f"stalled waiting for key {buffer.next_expected}; {len(buffer)} messages pending",
            transcript=delivered, pending=buffer.pending_keys())
    return delivered
