"""Discrete-event scenario runner.

Every actor is a set of callbacks on one event loop. Producers, the lock
service, the Raft cluster, the broker and the consumers exchange work only
through scheduled events with delays drawn from the seeded network, so a run
is a pure function of its config.

Producers on one host share a single FIFO connection to the broker and to
the lock service, the way threads share one client. That keeps each
partition's append order equal to token order; cross-partition order is lost
only on the consumer side.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

from orderedlog.aggregator import ReorderBuffer
from orderedlog.batch_broadcast import BatchBroadcastConsumer, Step, stamp_batch
from orderedlog.broker import Broker, Message, PartitionerPolicy, TopicSpec, assign_partitions
from orderedlog.errors import DuplicateDelivery, IdleTimeout, OrderedLogError
from orderedlog.sequencing import LockTokenService, RaftSequencer
from orderedlog.sim.clock import EventLoop, Network, WallClockLoop, ms
from orderedlog.sim.config import (
    DropKey, KillRaftNode, LoseBroadcasts, Mode, PauseConsumer, ScenarioConfig, Strategy,
)
from orderedlog.sim.metrics import DeliveryRecord, MetricsReport, build_report
from orderedlog.single_consumer import SingleConsumerState, single_deliver, single_poll_round_robin

log = logging.getLogger(__name__)


@dataclass
class ScenarioResult:
    transcript: list[DeliveryRecord]
    report: MetricsReport
    scenario: "Scenario" = field(repr=False, default=None)

    def __iter__(self):
        # allows ``transcript, report = run_scenario(cfg)``
        yield self.transcript
        yield self.report


class _Consumer:
    """Pull loop shared by every strategy: one outstanding fetch at a time."""

    def __init__(self, sc: "Scenario", cid: int, partitions: list[int], fetch_max: int, on_messages):
        self.sc = sc
        self.cid = cid
        self.partitions = partitions
        self.fetch_max = fetch_max
        self.on_messages = on_messages
        self.cursors = {p: 0 for p in partitions}
        self.turn = 0
        self.paused_until = 0
        self.exhausted = False
        self.on_exhausted = None

    def start(self):
        self.sc.loop.call_at(self.sc.start_ts, self.poll)

    def poll(self):
        sc = self.sc
        if self.exhausted:
            return
        if sc.loop.now < self.paused_until:
            sc.loop.call_at(self.paused_until, self.poll)
            return
        p = self.partitions[self.turn]
        self.turn = (self.turn + 1) % len(self.partitions)
        msgs = self._fetch(p)
        if not msgs and self._caught_up():
            self.exhausted = True
            if self.on_exhausted is not None:
                self.on_exhausted(self.cid)
            return
        sc.loop.call_later(sc.net.draw(sc.d_bc), self.receive, msgs)

    def _fetch(self, p):
        msgs = self.sc.broker.fetch(self.sc.topic, p, self.cursors[p], self.fetch_max,
                                    consumer=self.cid)
        self.cursors[p] += len(msgs)
        return msgs

    def _caught_up(self) -> bool:
        sc = self.sc
        if not sc.production_complete:
            return False
        return all(self.cursors[p] == sc.broker.end_offset(sc.topic, p) for p in self.partitions)

    def receive(self, msgs):
        if msgs:
            self.on_messages(self.cid, msgs)
        self.poll()


class _SingleConsumer(_Consumer):
    """Round-robin over every partition, one message per turn."""

    def __init__(self, sc, state: SingleConsumerState, on_messages):
        super().__init__(sc, state.consumer_id, state.assigned_partitions, 1, on_messages)
        self.state = state

    def _fetch(self, p):
        msg = single_poll_round_robin(self.state, self.sc.broker)
        return [msg] if msg is not None else []

    def _caught_up(self) -> bool:
        sc = self.sc
        if not sc.production_complete:
            return False
        return all(self.state.cursors[p] == sc.broker.end_offset(sc.topic, p)
                   for p in self.partitions)


class Scenario:
    def __init__(self, config: ScenarioConfig):
        self.config = config.validate()
        c = config
        self.loop = WallClockLoop(c.time_scale) if c.mode is Mode.WALLCLOCK else EventLoop()
        seed = c.seed
        self.net = Network(self.loop, random.Random(f"{seed}:net"), c.delays.jitter)
        self.workload_rng = random.Random(f"{seed}:workload")
        self.broker = Broker(clock=lambda: self.loop.now, record_fetches=True)
        self.topic = c.topic
        self.broker.create_topic(TopicSpec(c.topic, c.num_partitions))

        d = c.delays
        self.d_pb = ms(d.produce_broker_ms)
        self.d_bc = ms(d.broker_consumer_ms)
        self.d_bcast = ms(d.broadcast_ms)
        self.d_mid = ms(d.middleware_ms)

        self.transcript: list[DeliveryRecord] = []
        self.produced_keys: list[int] = []
        self.unresolved = c.burst_size
        self.start_ts = 0
        self.last_progress = 0
        self.errors: list[Exception] = []
        self.dropped_keys = {f.key for f in c.faults if isinstance(f, DropKey)}

        self.tokens: LockTokenService | None = None
        self.sequencer: RaftSequencer | None = None
        self.buffer: ReorderBuffer | None = None
        self.drain_log: list[tuple[int, int, bool]] = []
        self.bb_consumers: dict[int, BatchBroadcastConsumer] = {}
        self.single: SingleConsumerState | None = None
        self.consumers: dict[int, _Consumer] = {}
        self._bb_timers: dict[int, list | None] = {}
        self._bb_delivered: set[int] = set()
        self._native_seq = 0
        self._eos: set[int] = set()

        loss = c.loss_rate
        retransmit = c.retransmit
        for f in c.faults:
            if isinstance(f, LoseBroadcasts):
                loss = max(loss, f.rate)
                retransmit = f.retransmit
        self.bcast_loss = loss
        self.bcast_retransmit = retransmit

    # -- bookkeeping -------------------------------------------------------------------

    @property
    def production_complete(self) -> bool:
        return self.unresolved == 0

    def _progress(self):
        self.last_progress = self.loop.now

    def _resolved(self, n: int = 1):
        self.unresolved -= n
        self._progress()

    def _record(self, msg: Message, cid: int):
        now = self.loop.now
        self.transcript.append(DeliveryRecord(msg.key, msg.batch_id, cid, msg.partition,
                                              msg.offset, msg.produce_ts, now))
        self._progress()

    # -- setup ---------------------------------------------------------------------------

    def _setup(self):
        c = self.config
        s = c.strategy
        if s in (Strategy.AGGREGATOR, Strategy.SINGLE_CONSUMER):
            self.tokens = LockTokenService(ms(c.delays.lock_acquire_ms), ms(c.delays.lock_hold_ms))
        if s is Strategy.BATCH_BROADCAST:
            lo, hi = c.election_timeout_ms
            self.sequencer = RaftSequencer(
                self.loop, random.Random(f"{c.seed}:raft"), cluster_size=c.raft_nodes,
                rpc_delay=ms(c.delays.raft_rpc_ms), election_timeout=(ms(lo), ms(hi)),
                heartbeat=ms(c.heartbeat_ms), batch_size=c.batch_size, network=self.net)
            self.sequencer.start()
            # let the cluster elect a leader before the burst starts
            self.loop.run(stop=lambda: self.sequencer.leader() is not None,
                          until=self.loop.now + ms(c.idle_timeout_ms))
        self.start_ts = self.loop.now
        self.last_progress = self.loop.now

        if s is Strategy.AGGREGATOR:
            self.buffer = ReorderBuffer(c.write_size, c.high_watermark)

        ids = list(range(c.effective_consumers))
        if s is Strategy.SINGLE_CONSUMER:
            self.single = SingleConsumerState(self.topic, c.num_partitions, consumer_id=0)
            cons = _SingleConsumer(self, self.single, self._on_single)
            self.consumers[0] = cons
        else:
            assignment = assign_partitions(c.num_partitions, ids)
            handler = {
                Strategy.NATIVE: self._on_native,
                Strategy.AGGREGATOR: self._on_aggregator,
                Strategy.BATCH_BROADCAST: self._on_bb_fetch,
            }[s]
            fetch_max = c.batch_size if s is Strategy.BATCH_BROADCAST else 1
            for cid, parts in assignment.items():
                if parts:
                    self.consumers[cid] = _Consumer(self, cid, parts, fetch_max, handler)
            if s is Strategy.AGGREGATOR:
                for cons in self.consumers.values():
                    cons.on_exhausted = self._aggregator_eos
            if s is Strategy.BATCH_BROADCAST:
                peers = list(self.consumers)
                for cid, cons in self.consumers.items():
                    self.bb_consumers[cid] = BatchBroadcastConsumer(
                        cid, peers, c.batch_size, cons.partitions)
                    self._bb_timers[cid] = None
        for cons in self.consumers.values():
            cons.start()

        self._schedule_workload()
        self._schedule_faults()

    def _schedule_workload(self):
        c = self.config
        t = self.start_ts
        mean = ms(c.arrival_interval_ms)
        self._batch_buf: dict[int, list[Message]] = {}
        for i in range(c.burst_size):
            if i and mean > 0:
                t += int(self.workload_rng.expovariate(1.0) * mean)
            if c.strategy is Strategy.BATCH_BROADCAST:
                pid = (i // c.batch_size) % c.num_producers
            else:
                pid = i % c.num_producers
            self.loop.call_at(t, self._on_request, i, pid)

    def _schedule_faults(self):
        for f in self.config.faults:
            if isinstance(f, PauseConsumer):
                self.loop.call_at(self.start_ts + ms(f.at_ms), self._pause, f.consumer_id,
                                  ms(f.duration_ms))
            elif isinstance(f, KillRaftNode) and self.sequencer is not None:
                self.loop.call_at(self.start_ts + ms(f.at_ms), self._kill_raft, f)

    def _pause(self, cid, duration):
        cons = self.consumers.get(cid)
        if cons is not None:
            cons.paused_until = max(cons.paused_until, self.loop.now + duration)

    def _kill_raft(self, fault: KillRaftNode):
        seq = self.sequencer
        node = seq.leader() if fault.node == "leader" else int(fault.node)
        if node is None:
            return
        seq.kill(node)
        log.debug("killed raft node %s at %d", node, self.loop.now)
        if fault.restart_after_ms is not None:
            self.loop.call_later(ms(fault.restart_after_ms), seq.restart, node)

    # -- producers -------------------------------------------------------------------------

    def _on_request(self, i: int, pid: int):
        now = self.loop.now
        s = self.config.strategy
        msg = Message(self.topic, key=-1, payload=b"req-%d" % i, produce_ts=now)
        if s is Strategy.NATIVE:
            msg.key = i
            self._send_to_broker(msg)
        elif s is Strategy.BATCH_BROADCAST:
            buf = self._batch_buf.setdefault(pid, [])
            buf.append(msg)
            if len(buf) == self.config.batch_size:
                batch = self._batch_buf.pop(pid)
                self.sequencer.allocate(pid, len(batch),
                                        lambda b, batch=batch: self._on_allocated(b, batch),
                                        self._on_alloc_error)
        else:
            grant = self.tokens.issue(pid, now)
            self.loop.call_at(grant.granted_at, self._on_token, grant.token, msg)

    def _on_token(self, token: int, msg: Message):
        self._progress()
        msg.key = token
        if token in self.dropped_keys:
            self._resolved()
            return
        self._send_to_broker(msg)

    def _send_to_broker(self, msg: Message):
        self.net.send(self.d_pb, self._append, msg, channel="producers->broker")

    def _append(self, msg: Message):
        self.broker.produce(self.topic, msg, PartitionerPolicy.HASH_OF_KEY)
        self.produced_keys.append(msg.key)
        self._resolved()

    def _on_allocated(self, batch_id: int, batch: list[Message]):
        stamp_batch(batch_id, batch, self.config.batch_size)
        self._progress()
        kept = [m for m in batch if m.key not in self.dropped_keys]
        dropped = len(batch) - len(kept)
        if dropped:
            self._resolved(dropped)
        if kept:
            self.net.send(self.d_pb, self._append_batch, kept, channel="producers->broker")

    def _append_batch(self, batch: list[Message]):
        self.broker.produce_batch(self.topic, batch, PartitionerPolicy.ROUND_ROBIN)
        self.produced_keys.extend(m.key for m in batch)
        self._resolved(len(batch))

    def _on_alloc_error(self, exc: Exception):
        self.errors.append(exc)

    # -- strategies ------------------------------------------------------------------------

    def _on_native(self, cid, msgs):
        for m in msgs:
            self._record(m, cid)

    def _on_single(self, cid, msgs):
        for m in msgs:
            for out in single_deliver(self.single, m):
                self._record(out, cid)

    def _on_aggregator(self, cid, msgs):
        for m in msgs:
            self.net.send(self.d_mid, self._middleware_ingest, cid, m, channel=("c->mw", cid))

    def _aggregator_eos(self, cid):
        self.net.send(self.d_mid, self._middleware_eos, cid, channel=("c->mw", cid))

    def _middleware_ingest(self, cid, msg):
        buf = self.buffer
        buf.ingest(msg)
        self._fetched_by[msg.key] = cid
        pending = len(buf)
        out = buf.drain()
        self.drain_log.append((pending, len(out), False))
        for m in out:
            self._record(m, self._fetched_by.pop(m.key))

    def _middleware_eos(self, cid):
        self._eos.add(cid)
        if len(self._eos) < len(self.consumers):
            return
        pending = len(self.buffer)
        out = self.buffer.drain(force=True)
        self.drain_log.append((pending, len(out), True))
        for m in out:
            self._record(m, self._fetched_by.pop(m.key))

    _fetched_by: dict

    def _on_bb_fetch(self, cid, msgs):
        self._bb_step(cid, self.bb_consumers[cid].on_fetch(msgs))

    def _bb_step(self, cid, step: Step):
        for batch_id, msgs in step.deliveries:
            if batch_id in self._bb_delivered:
                raise DuplicateDelivery(f"batch {batch_id} delivered twice")
            self._bb_delivered.add(batch_id)
            for m in msgs:
                self._record(m, cid)
        for out in step.outbound:
            for peer in self.bb_consumers:
                if peer != cid:
                    self.net.send(self.d_bcast, self._bb_receive, peer, out,
                                  loss=self.bcast_loss, retransmit=self.bcast_retransmit,
                                  rto=2 * self.d_bcast)
        self._bb_arm(cid)

    def _bb_receive(self, cid, msg):
        self._bb_step(cid, self.bb_consumers[cid].on_broadcast(msg))

    def _bb_arm(self, cid):
        state = self.bb_consumers[cid]
        if state.needs_timer() and self._bb_timers[cid] is None:
            self._bb_timers[cid] = self.loop.call_later(
                ms(self.config.broadcast_timeout_ms), self._bb_timeout, cid)

    def _bb_timeout(self, cid):
        self._bb_timers[cid] = None
        state = self.bb_consumers[cid]
        if not state.needs_timer():
            return
        self._bb_step(cid, Step(outbound=[state.on_timeout()]))

    # -- run -------------------------------------------------------------------------------

    def run(self) -> ScenarioResult:
        c = self.config
        self._fetched_by = {}
        self._setup()
        if self.errors:
            raise self.errors[0]
        target = c.burst_size
        idle = ms(c.idle_timeout_ms)
        loop = self.loop

        def stop():
            return (len(self.transcript) >= target or bool(self.errors)
                    or loop.now - self.last_progress > idle)

        if target:
            loop.run(stop=stop)
        if self.errors:
            raise self.errors[0]
        report = self.report()
        if len(self.transcript) < target:
            pending = self._pending_keys()
            stalled_for = (loop.now - self.last_progress) / 1e6
            raise IdleTimeout(
                f"{c.strategy.value}: delivered {len(self.transcript)}/{target}, "
                f"no progress for {stalled_for:.1f} ms", transcript=self.transcript,
                report=report, pending=pending)
        return ScenarioResult(self.transcript, report, self)

    def _pending_keys(self) -> list[int]:
        if self.buffer is not None:
            return self.buffer.pending_keys()
        if self.single is not None:
            return self.single.buffer.pending_keys()
        keys = []
        for state in self.bb_consumers.values():
            for msgs in state.held.values():
                keys.extend(m.key for m in msgs)
        return sorted(keys)

    def report(self) -> MetricsReport:
        c = self.config
        extra = {"events": self.loop.events_run}
        if self.buffer is not None:
            extra["buffer_peak"] = self.buffer.peak
        if self.single is not None:
            extra["buffered_total"] = self.single.buffered_total
        if self.sequencer is not None:
            extra["raft_terms"] = max(n.current_term for n in self.sequencer.nodes)
        if self.bb_consumers:
            extra["broadcasts_lost"] = self.net.lost
        return build_report(c.strategy.value, self.transcript, range(c.burst_size),
                            self.start_ts, extra)


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run one scenario to quiescence.

    Raises ``IdleTimeout`` (carrying the partial transcript) when delivery
    stalls, and any strategy error such as ``BufferOverflow`` as-is.
    """
    return Scenario(config).run()


__all__ = ["Scenario", "ScenarioResult", "run_scenario", "OrderedLogError"]
