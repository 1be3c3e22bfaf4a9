"""Global sequence identifiers.

Two sources:

* ``LockTokenService`` hands out per-message tokens 0, 1, 2, ... from a
  counter guarded by an exclusive lock. Callers serialize on the lock.
* ``RaftSequencer`` allocates gapless batch numbers by committing allocation
  entries through a small Raft cluster running on the simulated network.
"""

from __future__ import annotations

import logging
import random
import threading
from dataclasses import dataclass, field

from orderedlog.errors import AllocationTimeout, NoLeader, ServiceStopped
from orderedlog.raft import LogEntry, RaftNode, Role, SafetyMonitor
from orderedlog.sim.clock import EventLoop, Network, ms

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenGrant:
    token: int
    producer_id: int
    requested_at: int
    granted_at: int
    released_at: int


class LockTokenService:
    """Counter behind an exclusive lock.

    Acquiring is itself exclusive: a request waits for the previous holder to
    release, then spends ``acquire_latency`` getting the lock, then keeps it
    for ``hold`` while the counter is read, bumped and released. One cycle
    therefore occupies the service for ``acquire_latency + hold``, which caps
    the issue rate. ``grants`` is the lock's grant transcript, in grant order.
    """

    def __init__(self, acquire_latency: int = ms(1), hold: int = ms(0.25)):
        self.acquire_latency = acquire_latency
        self.hold = hold
        self.counter = 0
        self.grants: list[TokenGrant] = []
        self._lock = threading.Lock()
        self._free_at = 0
        self._stopped = False

    def issue(self, producer_id: int, now: int = 0) -> TokenGrant:
        with self._lock:
            if self._stopped:
                raise ServiceStopped("token service stopped")
            granted = max(now, self._free_at) + self.acquire_latency
            self._free_at = granted + self.hold
            grant = TokenGrant(self.counter, producer_id, now, granted, self._free_at)
            self.counter += 1
            self.grants.append(grant)
            return grant

    def acquire_token(self, producer_id: int, now: int = 0) -> int:
        return self.issue(producer_id, now).token

    def stop(self) -> None:
        with self._lock:
            self._stopped = True


@dataclass(frozen=True, slots=True)
class Allocation:
    producer_id: int
    request_id: int
    message_count: int

    @property
    def request_key(self) -> tuple[int, int]:
        return (self.producer_id, self.request_id)


@dataclass
class BatchTable:
    """Replicated state machine fed by committed log entries.

    A retried proposal can be committed twice; the second copy is ignored, so
    batch numbers stay gapless even though log indices are not contiguous
    over allocations.
    """

    by_request: dict[tuple[int, int], int] = field(default_factory=dict)
    order: list[tuple[int, int]] = field(default_factory=list)
    log_index: list[int] = field(default_factory=list)
    duplicates: int = 0

    def apply(self, index: int, entry: LogEntry) -> int | None:
        cmd = entry.command
        if not isinstance(cmd, Allocation):
            return None
        key = cmd.request_key
        if key in self.by_request:
            self.duplicates += 1
            return self.by_request[key]
        batch_id = len(self.order)
        self.by_request[key] = batch_id
        self.order.append(key)
        self.log_index.append(index)
        return batch_id


@dataclass
class _Call:
    allocation: Allocation
    on_done: object
    on_error: object
    deadline: int
    target: int
    attempt: int = 0
    timer: list | None = None
    done: bool = False


class RaftSequencer:
    """Raft cluster plus the client side of batch allocation.

    Runs on a caller-supplied event loop. ``allocate`` is asynchronous and
    reports through callbacks; ``allocate_batch`` drives the loop until the
    answer arrives and is meant for a loop nobody else is using.
    """

    def __init__(self, loop: EventLoop | None = None, rng: random.Random | None = None, *,
                 cluster_size: int = 3, rpc_delay: int = ms(0.5), jitter: float = 0.5,
                 election_timeout: tuple[int, int] = (ms(150), ms(300)),
                 heartbeat: int = ms(50), client_timeout: int = ms(100),
                 deadline: int = ms(5000), retry_backoff: int = ms(10),
                 loss: float = 0.0, batch_size: int | None = None,
                 network: Network | None = None):
        if cluster_size < 1:
            raise ValueError("cluster_size must be positive")
        self.loop = loop or EventLoop()
        self.rng = rng or random.Random(0)
        self.network = network or Network(self.loop, random.Random(self.rng.random()), jitter)
        self.rpc_delay = rpc_delay
        self.client_timeout = client_timeout
        self.deadline = deadline
        self.retry_backoff = retry_backoff
        self.loss = loss
        self.batch_size = batch_size

        ids = list(range(cluster_size))
        self.nodes = [RaftNode(i, ids, random.Random(self.rng.random()), election_timeout,
                               heartbeat, now=self.loop.now) for i in ids]
        self.tables = [BatchTable() for _ in ids]
        self.down: set[int] = set()
        self.monitor = SafetyMonitor()
        self._timers: dict[int, list] = {}
        self._pending: dict[int, dict[tuple[int, int], list[_Call]]] = {i: {} for i in ids}
        self._next_request: dict[int, int] = {}
        self._leader_hint: int = 0
        self.started = False

    # -- cluster plumbing ------------------------------------------------------

    def start(self) -> None:
        if self.started:
            return
        self.started = True
        for node in self.nodes:
            self._arm(node)

    def _arm(self, node: RaftNode) -> None:
        EventLoop.cancel(self._timers.get(node.id))
        if node.id in self.down:
            return
        if node.role is Role.LEADER:
            when = node.last_heartbeat + node.heartbeat
        else:
            when = node.election_deadline
        self._timers[node.id] = self.loop.call_at(when, self._tick, node.id)

    def _tick(self, node_id: int) -> None:
        self._timers.pop(node_id, None)
        if node_id in self.down:
            return
        node = self.nodes[node_id]
        out = node.tick(self.loop.now)
        self._after_step(node, out)

    def _after_step(self, node: RaftNode, out: list) -> None:
        self.monitor.observe(node)
        self._apply(node)
        for msg in out:
            self.network.send(self.rpc_delay, self._deliver, msg, loss=self.loss)
        self._arm(node)

    def _deliver(self, msg) -> None:
        if msg.dst in self.down:
            return
        node = self.nodes[msg.dst]
        out = node.handle(msg, self.loop.now)
        self._after_step(node, out)

    def _apply(self, node: RaftNode) -> None:
        table = self.tables[node.id]
        for index, entry in node.take_committed():
            batch_id = table.apply(index, entry)
            if batch_id is None:
                continue
            key = entry.command.request_key
            for call in self._pending[node.id].pop(key, []):
                self._reply(call, batch_id)

    # -- faults ------------------------------------------------------------------

    def leader(self) -> int | None:
        best = None
        for node in self.nodes:
            if node.id in self.down or node.role is not Role.LEADER:
                continue
            if best is None or node.current_term > self.nodes[best].current_term:
                best = node.id
        return best

    def kill(self, node_id: int) -> None:
        self.down.add(node_id)
        EventLoop.cancel(self._timers.pop(node_id, None))
        self._pending[node_id] = {}

    def restart(self, node_id: int) -> None:
        if node_id not in self.down:
            return
        self.down.discard(node_id)
        node = self.nodes[node_id]
        node.restart(self.loop.now)
        self._arm(node)

    # -- client side -------------------------------------------------------------

    def allocate(self, producer_id: int, message_count: int, on_done, on_error=None,
                 request_id: int | None = None) -> Allocation:
        if self.batch_size is not None and message_count != self.batch_size:
            raise ValueError(f"batch of {message_count} messages, configured size is {self.batch_size}")
        if request_id is None:
            request_id = self._next_request.get(producer_id, 0)
        self._next_request[producer_id] = max(self._next_request.get(producer_id, 0), request_id + 1)
        self.start()
        alloc = Allocation(producer_id, request_id, message_count)
        call = _Call(alloc, on_done, on_error, self.loop.now + self.deadline, self._leader_hint)
        self._send_request(call)
        return alloc

    def _send_request(self, call: _Call) -> None:
        if call.done:
            return
        if self.loop.now >= call.deadline:
            call.done = True
            err = NoLeader if self.leader() is None else AllocationTimeout
            exc = err(f"allocation {call.allocation} gave up after {call.attempt} attempts")
            if call.on_error is None:
                raise exc
            call.on_error(exc)
            return
        call.attempt += 1
        EventLoop.cancel(call.timer)
        call.timer = self.loop.call_later(self.client_timeout, self._on_client_timeout, call)
        self.network.send(self.rpc_delay, self._on_client_request, call, call.target,
                          loss=self.loss)

    def _on_client_timeout(self, call: _Call) -> None:
        if call.done:
            return
        call.target = (call.target + 1) % len(self.nodes)
        self._send_request(call)

    def _on_client_request(self, call: _Call, node_id: int) -> None:
        if call.done or node_id in self.down:
            return
        node = self.nodes[node_id]
        table = self.tables[node_id]
        key = call.allocation.request_key
        if node.role is not Role.LEADER:
            hint = node.leader_id
            self.network.send(self.rpc_delay, self._on_not_leader, call, node_id, hint,
                              loss=self.loss)
            return
        if key in table.by_request:
            self._reply(call, table.by_request[key], node_id)
            return
        self._pending[node_id].setdefault(key, []).append(call)
        _, out = node.propose(call.allocation, self.loop.now)
        self._after_step(node, out)

    def _on_not_leader(self, call: _Call, node_id: int, hint: int | None) -> None:
        if call.done:
            return
        if hint is not None and hint != node_id:
            call.target = hint
            self._send_request(call)
            return
        call.target = (node_id + 1) % len(self.nodes)
        EventLoop.cancel(call.timer)
        call.timer = self.loop.call_later(self.retry_backoff, self._send_request, call)

    def _reply(self, call: _Call, batch_id: int, node_id: int | None = None) -> None:
        self.network.send(self.rpc_delay, self._on_reply, call, batch_id, node_id,
                          loss=self.loss)

    def _on_reply(self, call: _Call, batch_id: int, node_id) -> None:
        if call.done:
            return
        call.done = True
        EventLoop.cancel(call.timer)
        if node_id is not None:
            self._leader_hint = node_id
        else:
            leader = self.leader()
            if leader is not None:
                self._leader_hint = leader
        call.on_done(batch_id)

    def allocate_batch(self, producer_id: int, message_count: int) -> int:
        """Blocking allocation: runs the loop until this request commits."""
        result: dict = {}
        self.allocate(producer_id, message_count, lambda b: result.setdefault("id", b),
                      lambda e: result.setdefault("err", e))
        self.loop.run(stop=lambda: bool(result))
        if "err" in result:
            raise result["err"]
        if "id" not in result:
            raise NoLeader("event loop drained before the allocation committed")
        return result["id"]

    # -- verification --------------------------------------------------------------

    def committed_batches(self) -> list[tuple[int, int]]:
        """Batch ids of the most advanced table, with their request keys."""
        table = max(self.tables, key=lambda t: len(t.order))
        return list(enumerate(table.order))

    def safety_violations(self) -> list[str]:
        found = list(self.monitor.violations)
        found.extend(self.monitor.check_logs(self.nodes))
        tables = [t.order for t in self.tables]
        longest = max(tables, key=len)
        for i, order in enumerate(tables):
            if order != longest[:len(order)]:
                found.append(f"node {i} batch table diverges from the longest table")
        return found
