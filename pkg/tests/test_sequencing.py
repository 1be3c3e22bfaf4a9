import random
import threading

import pytest

from orderedlog.errors import NoLeader, ServiceStopped
from orderedlog.raft import (
    AppendEntries, AppendReply, LogEntry, RaftNode, RequestVote, Role, SafetyMonitor, VoteReply,
)
from orderedlog.sequencing import Allocation, BatchTable, LockTokenService, RaftSequencer
from orderedlog.sim.clock import EventLoop, ms
from orderedlog.sim.fuzz import raft_fuzz_run


# -- lock token service -------------------------------------------------------------

def test_first_token_is_zero():
    assert LockTokenService().acquire_token(0) == 0


def test_tokens_from_one_producer_increase():
    svc = LockTokenService()
    a, b = svc.acquire_token(1), svc.acquire_token(1)
    assert a < b


def test_stopped_service_refuses():
    svc = LockTokenService()
    svc.stop()
    with pytest.raises(ServiceStopped):
        svc.acquire_token(0)


def test_grants_serialize_through_the_lock():
    svc = LockTokenService(acquire_latency=ms(1), hold=ms(0.25))
    grants = [svc.issue(pid, now=0) for pid in range(4)]
    assert [g.granted_at for g in grants] == [ms(1), ms(2.25), ms(3.5), ms(4.75)]
    for prev, nxt in zip(grants, grants[1:]):
        assert nxt.granted_at >= prev.released_at


def test_idle_lock_grants_after_acquire_latency():
    svc = LockTokenService(acquire_latency=ms(1), hold=ms(0.25))
    g = svc.issue(0, now=ms(100))
    assert g.granted_at == ms(101) and g.released_at == ms(101.25)


def test_700_tokens_from_4_threads_are_exactly_0_to_699():
    svc = LockTokenService()
    got = {pid: [] for pid in range(4)}

    def producer(pid):
        for _ in range(175):
            got[pid].append(svc.acquire_token(pid))

    threads = [threading.Thread(target=producer, args=(pid,)) for pid in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    tokens = sorted(t for seq in got.values() for t in seq)
    assert tokens == list(range(700))
    # each producer sees its own tokens strictly increasing
    assert all(seq == sorted(set(seq)) for seq in got.values())
    # token order is grant order
    assert [g.token for g in svc.grants] == list(range(700))


# -- batch table ------------------------------------------------------------------

def test_batch_table_skips_retried_duplicates():
    table = BatchTable()
    a, b = Allocation(0, 0, 1), Allocation(1, 0, 1)
    assert table.apply(0, LogEntry(1, a)) == 0
    assert table.apply(1, LogEntry(1, a)) == 0
    assert table.apply(2, LogEntry(1, b)) == 1
    assert table.duplicates == 1
    assert table.log_index == [0, 2]


# -- raft node ------------------------------------------------------------------------

def nodes(n=3, seed=0):
    rng = random.Random(seed)
    ids = list(range(n))
    return [RaftNode(i, ids, random.Random(rng.random()), (150, 300), 50) for i in ids]


def test_stale_vote_request_rejected():
    a = nodes()[0]
    a.current_term = 5
    out = a.handle(RequestVote(1, 0, 4, -1, 0), now=0)
    assert out == [VoteReply(0, 1, 5, False)]


def test_vote_granted_once_per_term():
    a = nodes()[0]
    assert a.handle(RequestVote(1, 0, 1, -1, 0), 0)[0].granted
    assert not a.handle(RequestVote(2, 0, 1, -1, 0), 0)[0].granted
    assert a.handle(RequestVote(1, 0, 1, -1, 0), 0)[0].granted


def test_vote_refused_to_out_of_date_log():
    a = nodes()[0]
    a.log = [LogEntry(2, "x")]
    a.current_term = 2
    assert not a.handle(RequestVote(1, 0, 3, 5, 1), 0)[0].granted


def test_leader_before_heartbeat_interval_is_silent():
    a = nodes()[0]
    a.current_term = 1
    a._become_leader(now=0)
    assert a.tick(now=10) == []
    assert len(a.tick(now=50)) == 2


def test_candidate_with_majority_becomes_leader_and_heartbeats():
    a = nodes()[0]
    out = a.tick(now=10**6)
    assert a.role is Role.CANDIDATE and len(out) == 2
    out = a.handle(VoteReply(1, 0, a.current_term, True), 10**6)
    assert a.role is Role.LEADER
    assert {m.dst for m in out} == {1, 2}
    assert all(isinstance(m, AppendEntries) for m in out)


def test_mismatched_prev_fails_and_leader_backs_off():
    leader, follower = nodes()[:2]
    leader.current_term = 2
    leader.log = [LogEntry(1, "a"), LogEntry(2, "b")]
    leader._become_leader(0)
    follower.current_term = 2
    follower.log = [LogEntry(1, "a"), LogEntry(1, "stale")]
    msg = AppendEntries(0, 1, 2, 1, 2, (), -1)
    reply = follower.handle(msg, 0)
    assert reply == [AppendReply(1, 0, 2, False, -1)]
    before = leader.next_index[1]
    out = leader.handle(reply[0], 0)
    assert leader.next_index[1] == before - 1
    assert out[0].prev_index == before - 2


def test_conflicting_suffix_truncated_and_commit_clamped():
    f = nodes()[1]
    f.current_term = 2
    f.log = [LogEntry(1, "a"), LogEntry(1, "stale"), LogEntry(1, "stale2")]
    out = f.handle(AppendEntries(0, 1, 2, 0, 1, (LogEntry(2, "b"),), 10), 0)
    assert out[0].success and out[0].match_index == 1
    assert f.log == [LogEntry(1, "a"), LogEntry(2, "b")]
    assert f.commit_index == 1
    assert f.truncated_at == [1]


def test_malformed_messages_dropped_and_counted():
    a = nodes()[0]
    a.handle(RequestVote(1, 2, 1, -1, 0), 0)  # wrong destination
    a.handle(AppendEntries(1, 0, 1, -5, 0, (), -1), 0)
    a.handle(object(), 0)
    assert a.dropped == 3


def test_commit_index_never_moves_back_on_old_leader_commit():
    f = nodes()[1]
    f.handle(AppendEntries(0, 1, 1, -1, 0, (LogEntry(1, "a"), LogEntry(1, "b")), 1), 0)
    assert f.commit_index == 1
    f.handle(AppendEntries(0, 1, 1, 1, 1, (), 0), 0)
    assert f.commit_index == 1


def test_monitor_flags_two_leaders_in_one_term():
    a, b, _ = nodes()
    for n in (a, b):
        n.current_term = 3
        n.role = Role.LEADER
    mon = SafetyMonitor()
    mon.observe(a)
    mon.observe(b)
    assert any("election safety" in v for v in mon.violations)


def test_monitor_flags_divergent_committed_prefix():
    a, b, _ = nodes()
    a.log = [LogEntry(1, "x")]
    b.log = [LogEntry(1, "y")]
    a.commit_index = b.commit_index = 0
    mon = SafetyMonitor()
    mon.observe(a)
    mon.observe(b)
    assert any("disagreement" in v for v in mon.violations)
    assert any("committed prefix" in v for v in mon.check_logs([a, b]))


def test_monitor_flags_overwritten_commit():
    a = nodes()[1]
    a.handle(AppendEntries(0, 1, 1, -1, 0, (LogEntry(1, "a"),), 0), 0)
    mon = SafetyMonitor()
    mon.observe(a)
    a.truncated_at.append(0)
    mon.observe(a)
    assert any("overwrote" in v for v in mon.violations)


def test_three_fresh_nodes_elect_one_leader():
    seq = RaftSequencer(EventLoop(), random.Random(11))
    seq.start()
    seq.loop.run(stop=lambda: seq.leader() is not None, until=ms(2000))
    leaders = [n.id for n in seq.nodes if n.role is Role.LEADER]
    assert len(leaders) == 1
    assert seq.safety_violations() == []


# -- raft sequencer -----------------------------------------------------------------

def test_first_allocation_is_batch_zero():
    seq = RaftSequencer(EventLoop(), random.Random(1))
    assert seq.allocate_batch(0, 1) == 0


def test_concurrent_allocations_follow_leader_log_order():
    seq = RaftSequencer(EventLoop(), random.Random(2))
    seq.allocate_batch(9, 1)
    got = {}
    seq.allocate(0, 1, lambda b: got.setdefault(0, b))
    seq.allocate(1, 1, lambda b: got.setdefault(1, b))
    seq.loop.run(stop=lambda: len(got) == 2)
    assert sorted(got.values()) == [1, 2]
    leader = seq.nodes[seq.leader()]
    by_log = [e.command.producer_id for e in leader.log
              if isinstance(e.command, Allocation) and e.command.producer_id in (0, 1)]
    assert [pid for pid, _ in sorted(got.items(), key=lambda kv: kv[1])] == by_log


def test_allocation_survives_leader_crash():
    seq = RaftSequencer(EventLoop(), random.Random(3))
    ids = [seq.allocate_batch(p, 1) for p in range(3)]
    seq.kill(seq.leader())
    ids += [seq.allocate_batch(p, 1) for p in range(3)]
    assert ids == list(range(6))
    assert seq.safety_violations() == []


def test_batch_size_mismatch_rejected():
    seq = RaftSequencer(EventLoop(), random.Random(3), batch_size=4)
    with pytest.raises(ValueError):
        seq.allocate(0, 3, lambda b: None)


def test_no_quorum_surfaces_noleader():
    seq = RaftSequencer(EventLoop(), random.Random(4), deadline=ms(1000))
    seq.allocate_batch(0, 1)
    leader = seq.leader()
    for n in range(3):
        if n != leader:
            seq.kill(n)
    seq.kill(leader)
    with pytest.raises(NoLeader):
        seq.allocate_batch(0, 1)


def test_five_node_fuzz_under_heavy_jitter():
    bad = [r for r in (raft_fuzz_run(s, allocations=40) for s in range(40)) if not r.ok]
    assert bad == []


def test_fuzz_detects_a_quorum_of_one(monkeypatch):
    # every node counting itself as a majority must produce visible violations
    monkeypatch.setattr(RaftNode, "majority", property(lambda self: 1))
    flagged = sum(bool(raft_fuzz_run(seed).violations) for seed in range(10))
    assert flagged > 0
