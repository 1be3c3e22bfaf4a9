"""Randomized crash-and-jitter runs against the Raft batch allocator."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from orderedlog.sequencing import RaftSequencer
from orderedlog.sim.clock import EventLoop, ms


@dataclass
class FuzzResult:
    seed: int
    cluster_size: int
    kills: int
    jitter: float
    loss: float = 0.0
    violations: list[str] = field(default_factory=list)
    batch_ids: dict[tuple[int, int], int] = field(default_factory=dict)
    errors: list[Exception] = field(default_factory=list)

    @property
    def gapless(self) -> bool:
        ids = sorted(self.batch_ids.values())
        return ids == list(range(len(ids)))

    @property
    def ok(self) -> bool:
        return not self.violations and self.gapless


def raft_fuzz_run(seed: int, allocations: int = 24, producers: int = 3,
                  max_kills: int = 2) -> FuzzResult:
    """One randomized run: 3 or 5 nodes, jittered and sometimes lossy RPCs, up to
    ``max_kills`` leader crashes.

    Killed leaders come back after a random outage so the cluster keeps a
    quorum overall; allocations issued while no leader exists retry.
    """
    rng = random.Random(f"{seed}:fuzz")
    size = rng.choice((3, 5))
    jitter = rng.uniform(0.0, 0.9)
    loss = rng.choice((0.0, rng.uniform(0.0, 0.2)))
    loop = EventLoop()
    seq = RaftSequencer(loop, random.Random(f"{seed}:cluster"), cluster_size=size,
                        jitter=jitter, rpc_delay=ms(rng.uniform(0.2, 2.0)), loss=loss,
                        deadline=ms(20_000))
    kills = rng.randint(0, max_kills)
    result = FuzzResult(seed, size, kills, jitter, loss)
    horizon = ms(600)

    for _ in range(kills):
        at = rng.randrange(ms(50), horizon)
        outage = rng.randrange(ms(20), ms(400))

        def crash(outage=outage):
            leader = seq.leader()
            if leader is None:
                return
            seq.kill(leader)
            loop.call_later(outage, seq.restart, leader)

        loop.call_at(at, crash)

    outstanding = [allocations]

    def done(key, batch_id):
        result.batch_ids[key] = batch_id
        outstanding[0] -= 1

    def failed(exc):
        result.errors.append(exc)
        outstanding[0] -= 1

    for n in range(allocations):
        pid = n % producers
        rid = n // producers
        loop.call_at(rng.randrange(0, horizon),
                     lambda pid=pid, rid=rid: seq.allocate(
                         pid, 1, lambda b, k=(pid, rid): done(k, b), failed, request_id=rid))

    seq.start()
    loop.run(stop=lambda: outstanding[0] == 0, until=ms(60_000))
    result.violations = seq.safety_violations()
    # every id handed to a client must sit at the same slot in the replicated table
    table = {key: i for i, key in seq.committed_batches()}
    for key, batch_id in result.batch_ids.items():
        if table.get(key) != batch_id:
            result.violations.append(f"client {key} got batch {batch_id}, table says "
                                     f"{table.get(key)}")
    return result
