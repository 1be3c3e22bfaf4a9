"""Event loops and the simulated network.

Time is an integer count of nanoseconds. ``EventLoop`` advances a virtual
clock from event to event; ``WallClockLoop`` runs the same callbacks but
sleeps until each event is due, so the delays are real.
"""

from __future__ import annotations

import heapq
import random
import time

NS_PER_MS = 1_000_000


def ms(value: float) -> int:
    return int(round(value * NS_PER_MS))


class EventLoop:
    def __init__(self):
        self.now = 0
        self._queue: list[list] = []
        self._seq = 0
        self.events_run = 0

    def call_at(self, when: int, fn, *args) -> list:
        if when < self.now:
            when = self.now
        entry = [when, self._seq, fn, args]
        self._seq += 1
        heapq.heappush(self._queue, entry)
        return entry

    def call_later(self, delay: int, fn, *args) -> list:
        return self.call_at(self.now + delay, fn, *args)

    @staticmethod
    def cancel(entry) -> None:
        if entry is not None:
            entry[2] = None

    def _advance_to(self, when: int) -> None:
        self.now = when

    def pending(self) -> int:
        return sum(1 for e in self._queue if e[2] is not None)

    def run(self, stop=None, until: int | None = None) -> bool:
        """Run events in time order.

        Returns True if ``stop()`` became true, False if the queue drained or
        ``until`` was reached first.
        """
        queue = self._queue
        pop = heapq.heappop
        while queue:
            entry = queue[0]
            if until is not None and entry[0] > until:
                self.now = max(self.now, until)
                return False
            pop(queue)
            fn = entry[2]
            if fn is None:
                continue
            self._advance_to(entry[0])
            fn(*entry[3])
            self.events_run += 1
            if stop is not None and stop():
                return True
        return False


class WallClockLoop(EventLoop):
    """Same scheduling rules, but each event waits for its real due time.

    ``time_scale`` stretches virtual durations (2.0 means a 1 ms hop takes
    2 ms of wall time). ``now`` reports elapsed real nanoseconds rescaled back
    to the virtual unit, so latencies stay comparable.
    """

    def __init__(self, time_scale: float = 1.0):
        super().__init__()
        self.time_scale = time_scale
        self._t0 = time.monotonic_ns()

    def _advance_to(self, when: int) -> None:
        target = self._t0 + int(when * self.time_scale)
        remaining = target - time.monotonic_ns()
        if remaining > 0:
            time.sleep(remaining / 1e9)
        elapsed = (time.monotonic_ns() - self._t0) / self.time_scale
        self.now = max(when, int(elapsed))


class Network:
    """Delivers callbacks after a jittered delay.

    Every hop draws ``base * uniform(1 - jitter, 1 + jitter)``. Lossy sends
    drop with probability ``loss``; with ``retransmit`` the sender retries
    every ``rto`` until the message gets through. A ``channel`` key makes the
    link FIFO: nothing on it overtakes an earlier send.
    """

    def __init__(self, loop: EventLoop, rng: random.Random, jitter: float = 0.0):
        self.loop = loop
        self.rng = rng
        self.jitter = jitter
        self._fifo_tail: dict = {}
        self.sent = 0
        self.lost = 0
        self.retransmits = 0

    def draw(self, base: int) -> int:
        if base <= 0:
            return 0
        if self.jitter <= 0:
            return base
        lo = 1.0 - self.jitter
        return max(1, int(base * (lo + 2.0 * self.jitter * self.rng.random())))

    def send(self, base: int, fn, *args, loss: float = 0.0, retransmit: bool = False,
             rto: int | None = None, channel=None) -> None:
        self.sent += 1
        if loss > 0.0 and self.rng.random() < loss:
            self.lost += 1
            if retransmit:
                self.retransmits += 1
                wait = rto if rto is not None else max(2 * base, 1)
                self.loop.call_later(wait, self._retry, base, fn, args, loss, rto, channel)
            return
        self._deliver(base, fn, args, channel)

    def _retry(self, base, fn, args, loss, rto, channel):
        self.send(base, fn, *args, loss=loss, retransmit=True, rto=rto, channel=channel)
        self.sent -= 1

    def _deliver(self, base, fn, args, channel):
        arrive = self.loop.now + self.draw(base)
        if channel is not None:
            tail = self._fifo_tail.get(channel, 0)
            if arrive < tail:
                arrive = tail
            self._fifo_tail[channel] = arrive
        self.loop.call_at(arrive, fn, *args)
