import random
from collections import deque

import pytest

from orderedlog.batch_broadcast import (
    AnnounceLowest, BatchBroadcastConsumer, Delivered, Step, produce_batch, stamp_batch,
)
from orderedlog.broker import Broker, Message, TopicSpec
from orderedlog.errors import DuplicateDelivery, IncompleteBatchAtEnd
from orderedlog.sim.clock import ms
from orderedlog.sim.config import LoseBroadcasts, ScenarioConfig, Strategy
from orderedlog.sim.harness import Scenario


def batch(b, size):
    return stamp_batch(b, [Message("t", key=-1) for _ in range(size)], size)


def delivered_ids(step: Step):
    return [b for b, _ in step.deliveries]


def test_delivered_requires_successor():
    Delivered(0, 4, 5)
    with pytest.raises(ValueError):
        Delivered(0, 4, 6)


def test_stamping_gives_batch_contiguous_keys():
    msgs = batch(3, 4)
    assert [(m.batch_id, m.intra_batch_index, m.key) for m in msgs] == [
        (3, 0, 12), (3, 1, 13), (3, 2, 14), (3, 3, 15)]


def test_produce_batch_size_one_goes_to_batch_mod_p():
    broker = Broker()
    broker.create_topic(TopicSpec("t", 3))
    for b in range(7):
        p, _ = produce_batch(broker, "t", b, [Message("t", key=-1)], 1)
        assert p == b % 3


def test_produce_batch_first_batch_offsets():
    broker = Broker()
    broker.create_topic(TopicSpec("t", 2))
    p, offsets = produce_batch(broker, "t", 0, [Message("t", key=-1) for _ in range(4)], 4)
    assert (p, offsets) == (0, [0, 1, 2, 3])
    with pytest.raises(ValueError):
        produce_batch(broker, "t", 1, [Message("t", key=-1)], 4)


def test_batches_never_span_partitions():
    rng = random.Random(1)
    broker = Broker()
    broker.create_topic(TopicSpec("t", 3))
    ids = list(range(10))
    rng.shuffle(ids)  # two producers finishing in arbitrary order
    for b in ids:
        produce_batch(broker, "t", b, [Message("t", key=-1) for _ in range(3)], 3)
    where = {}
    for p in range(3):
        log = broker.fetch("t", p, 0, 1000)
        for i in range(0, len(log), 3):
            chunk = log[i:i + 3]
            assert {m.batch_id for m in chunk} == {chunk[0].batch_id}
            assert [m.intra_batch_index for m in chunk] == [0, 1, 2]
            where[chunk[0].batch_id] = p
    assert where == {b: b % 3 for b in range(10)}


def test_complete_batch_is_held():
    c = BatchBroadcastConsumer(0, [0, 1], 4, next_commit=0)
    c.on_fetch(batch(7, 4))
    assert set(c.held) == {7}


def test_incomplete_batch_not_held():
    c = BatchBroadcastConsumer(0, [0, 1], 4)
    c.on_fetch(batch(7, 4)[:3])
    assert c.held == {} and c.partial_batches() == {7: 3}
    with pytest.raises(IncompleteBatchAtEnd):
        c.teardown_check()


def test_interleaved_fetches_complete_both():
    c = BatchBroadcastConsumer(0, [0, 1], 2)
    a, b = batch(2, 2), batch(5, 2)
    c.on_fetch([a[0], b[1]])
    c.on_fetch([b[0], a[1]])
    assert set(c.held) == {2, 5}
    c.teardown_check()


def test_timeout_announces_lowest():
    c = BatchBroadcastConsumer(0, [0, 1], 1)
    c.on_fetch(batch(3, 1) + batch(6, 1))
    assert c.on_timeout().lowest_batch == 3
    assert BatchBroadcastConsumer(1, [0, 1], 1).on_timeout().lowest_batch is None


def test_holder_of_next_commit_delivers_on_fetch():
    c = BatchBroadcastConsumer(0, [0, 1], 1)
    step = c.on_fetch(batch(0, 1))
    assert delivered_ids(step) == [0]
    assert step.outbound == [Delivered(0, 0, 1)]


def test_chaining_on_delivered():
    c = BatchBroadcastConsumer(2, [0, 1, 2], 1)
    c.on_fetch(batch(2, 1))
    step = c.on_broadcast(Delivered(1, 1, 2))
    assert delivered_ids(step) == [2]
    assert step.outbound == [Delivered(2, 2, 3)]


def test_delivered_for_held_batch_is_a_safety_violation():
    c = BatchBroadcastConsumer(0, [0, 1], 1)
    c.on_fetch(batch(1, 1))
    with pytest.raises(DuplicateDelivery):
        c.on_broadcast(Delivered(1, 1, 2))


def simulate(holdings, batch_size=1, timeout_first=None):
    """Lossless synchronous broadcast among consumers; returns delivery order."""
    ids = list(range(len(holdings)))
    cons = [BatchBroadcastConsumer(i, ids, batch_size) for i in ids]
    queue = deque()
    order = []

    def emit(sender, step):
        order.extend(b for b, _ in step.deliveries)
        for msg in step.outbound:
            for peer in ids:
                if peer != sender:
                    queue.append((peer, msg))

    for i, held in enumerate(holdings):
        emit(i, cons[i].on_fetch([m for b in held for m in batch(b, batch_size)]))
    if timeout_first is not None:
        emit(timeout_first, Step(outbound=[cons[timeout_first].on_timeout()]))
    while queue:
        peer, msg = queue.popleft()
        emit(peer, cons[peer].on_broadcast(msg))
    return order, cons


def test_spread_batches_deliver_in_order():
    order, cons = simulate([{0, 3}, {1, 4}, {2, 5}], batch_size=2)
    assert order == [0, 1, 2, 3, 4, 5]
    for c in cons:
        assert sorted(c.observed_commits) == [0, 1, 2, 3, 4, 5]


def test_single_consumer_chain():
    order, _ = simulate([set(range(8))])
    assert order == list(range(8))


def test_announce_round_reaches_unanimity():
    # batch 0 is still in flight; everyone holds something later
    order, cons = simulate([{1}, {2}, {3}], timeout_first=0)
    assert order == []
    assert [c.agreed_lowest.get(0) for c in cons] == [1, 1, 1]


def test_announce_spreads_next_commit_after_lost_delivered():
    # batch 0's Delivered is lost; consumer 1 only learns next_commit=1 from a round
    ids = [0, 1]
    a, b = (BatchBroadcastConsumer(i, ids, 1) for i in ids)
    assert delivered_ids(a.on_fetch(batch(0, 1))) == [0]
    assert b.on_fetch(batch(1, 1)).deliveries == []
    ann = b.on_timeout()
    reply = a.on_broadcast(ann)
    assert reply.outbound[0].next_commit == 1
    assert delivered_ids(b.on_broadcast(reply.outbound[0])) == [1]


def test_replies_once_per_attempt():
    a = BatchBroadcastConsumer(0, [0, 1], 1)
    ann = AnnounceLowest(1, None, 0, attempt=1)
    assert len(a.on_broadcast(ann).outbound) == 1
    assert a.on_broadcast(ann).outbound == []
    assert len(a.on_broadcast(AnnounceLowest(1, None, 0, attempt=2)).outbound) == 1


def test_lossy_broadcast_scenario_delivers_every_batch_in_order():
    for seed in range(10):
        cfg = ScenarioConfig(seed=seed, strategy=Strategy.BATCH_BROADCAST, burst_size=120,
                             batch_size=4, faults=(LoseBroadcasts(0.2, retransmit=False),))
        sc = Scenario(cfg)
        transcript, report = sc.run()
        assert [r.key for r in transcript] == list(range(120))
        for c in sc.bb_consumers.values():
            assert len(c.observed_commits) == len(set(c.observed_commits))


def test_uniqueness_and_agreement_in_scenario():
    cfg = ScenarioConfig(seed=4, strategy=Strategy.BATCH_BROADCAST, burst_size=90, batch_size=3)
    sc = Scenario(cfg)
    transcript, _ = sc.run()
    owners = {}
    for r in transcript:
        owners.setdefault(r.batch_id, set()).add(r.consumer_id)
    assert all(len(o) == 1 for o in owners.values())
    assert sorted(owners) == list(range(30))
    # let the last Delivered broadcasts land
    sc.loop.run(until=sc.loop.now + ms(20))
    for c in sc.bb_consumers.values():
        assert c.observed_commits == list(range(30))
        c.teardown_check()
