"""One consumer owns every partition and restores key order locally."""

from __future__ import annotations

from dataclasses import dataclass, field

from orderedlog.aggregator import ReorderBuffer
from orderedlog.broker import Broker, Message
from orderedlog.errors import IdleTimeout


@dataclass
class SingleConsumerState:
    topic: str
    num_partitions: int
    consumer_id: int = 0
    cursors: list[int] = field(default_factory=list)
    buffer: ReorderBuffer = field(default_factory=lambda: ReorderBuffer(write_size=1))
    turn: int = 0
    buffered_total: int = 0

    def __post_init__(self):
        if not self.cursors:
            self.cursors = [0] * self.num_partitions

    @property
    def assigned_partitions(self) -> list[int]:
        return list(range(self.num_partitions))

    @property
    def next_expected(self) -> int:
        return self.buffer.next_expected


def single_poll_round_robin(state: SingleConsumerState, broker: Broker) -> Message | None:
    """Fetch at most one message from the partition whose turn it is.

    An empty partition still uses up its turn.
    """
    p = state.turn
    state.turn = (p + 1) % state.num_partitions
    got = broker.fetch(state.topic, p, state.cursors[p], 1, consumer=state.consumer_id)
    if not got:
        return None
    state.cursors[p] += 1
    return got[0]


def single_deliver(state: SingleConsumerState, message: Message) -> list[Message]:
    state.buffer.ingest(message)
    out = state.buffer.drain()
    if not out:
        state.buffered_total += 1
    return out


def drain_partitions(state: SingleConsumerState, broker: Broker) -> list[Message]:
    """Poll until every partition is read to its end, delivering in key order."""
    delivered: list[Message] = []
    idle_turns = 0
    while idle_turns < state.num_partitions:
        message = single_poll_round_robin(state, broker)
        if message is None:
            idle_turns += 1
            continue
        idle_turns = 0
        delivered.extend(single_deliver(state, message))
    if len(state.buffer):
        raise IdleTimeout(
            f"stalled waiting for key {state.next_expected}; {len(state.buffer)} messages pending",
            transcript=delivered, pending=state.buffer.pending_keys())
    return delivered


def single_consumer_run(config):
    """Run a full simulated scenario with the single-consumer strategy."""
    from dataclasses import replace

    from orderedlog.sim.config import Strategy
    from orderedlog.sim.harness import run_scenario

    return run_scenario(replace(config, strategy=Strategy.SINGLE_CONSUMER))
