"""A minimal Raft node as a pure state machine.

Nodes never touch a clock or a socket. The driver passes ``now`` into
``tick``/``handle``/``propose`` and routes whatever messages come back. Log
indices are 0-based and ``commit_index`` starts at -1. Membership changes,
snapshots and persistence are not modeled; a crashed node keeps its state
and comes back as a follower.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Any


class Role(enum.Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


@dataclass(frozen=True, slots=True)
class LogEntry:
    term: int
    command: Any


@dataclass(frozen=True, slots=True)
class RequestVote:
    src: int
    dst: int
    term: int
    last_log_index: int
    last_log_term: int


@dataclass(frozen=True, slots=True)
class VoteReply:
    src: int
    dst: int
    term: int
    granted: bool


@dataclass(frozen=True, slots=True)
class AppendEntries:
    src: int
    dst: int
    term: int
    prev_index: int
    prev_term: int
    entries: tuple
    leader_commit: int


@dataclass(frozen=True, slots=True)
class AppendReply:
    src: int
    dst: int
    term: int
    success: bool
    match_index: int


RaftMessage = RequestVote | VoteReply | AppendEntries | AppendReply


class RaftNode:
    def __init__(self, node_id: int, peers, rng: random.Random,
                 election_timeout: tuple[int, int], heartbeat: int,
                 max_entries: int = 64, now: int = 0):
        self.id = node_id
        self.peers = [p for p in peers if p != node_id]
        self.cluster_size = len(self.peers) + 1
        self.rng = rng
        self.election_timeout = election_timeout
        self.heartbeat = heartbeat
        self.max_entries = max_entries

        self.current_term = 0
        self.voted_for: int | None = None
        self.role = Role.FOLLOWER
        self.log: list[LogEntry] = []
        self.commit_index = -1
        self.last_applied = -1
        self.leader_id: int | None = None

        self.next_index: dict[int, int] = {}
        self.match_index: dict[int, int] = {}
        self.votes: set[int] = set()

        self.election_deadline = 0
        self.last_heartbeat = 0
        self.dropped = 0
        self.truncated_at: list[int] = []
        self._reset_election_timer(now)

    # -- helpers ---------------------------------------------------------------

    @property
    def majority(self) -> int:
        return self.cluster_size // 2 + 1

    @property
    def last_index(self) -> int:
        return len(self.log) - 1

    @property
    def last_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def term_at(self, index: int) -> int:
        if index < 0:
            return 0
        return self.log[index].term

    def _reset_election_timer(self, now: int) -> None:
        lo, hi = self.election_timeout
        self.election_deadline = now + self.rng.randint(lo, hi)

    def _step_down(self, term: int, now: int) -> None:
        if term > self.current_term:
            self.current_term = term
            self.voted_for = None
        if self.role is not Role.FOLLOWER:
            self.role = Role.FOLLOWER
            self._reset_election_timer(now)
        self.votes = set()

    def _append_for(self, peer: int) -> AppendEntries:
        nxt = self.next_index[peer]
        entries = tuple(self.log[nxt:nxt + self.max_entries])
        return AppendEntries(self.id, peer, self.current_term, nxt - 1,
                             self.term_at(nxt - 1), entries, self.commit_index)

    def _broadcast_append(self, now: int) -> list:
        self.last_heartbeat = now
        return [self._append_for(p) for p in self.peers]

    def _become_leader(self, now: int) -> list:
        self.role = Role.LEADER
        self.leader_id = self.id
        self.next_index = {p: len(self.log) for p in self.peers}
        self.match_index = {p: -1 for p in self.peers}
        self._advance_commit()
        return self._broadcast_append(now)

    def _start_election(self, now: int) -> list:
        self.role = Role.CANDIDATE
        self.current_term += 1
        self.voted_for = self.id
        self.votes = {self.id}
        self.leader_id = None
        self._reset_election_timer(now)
        if len(self.votes) >= self.majority:
            return self._become_leader(now)
        return [RequestVote(self.id, p, self.current_term, self.last_index, self.last_term)
                for p in self.peers]

    def _advance_commit(self) -> None:
        # only entries from the current term are committed by counting replicas
        for n in range(self.last_index, self.commit_index, -1):
            if self.log[n].term != self.current_term:
                break
            replicas = 1 + sum(1 for m in self.match_index.values() if m >= n)
            if replicas >= self.majority:
                self.commit_index = n
                break

    # -- public transitions -----------------------------------------------------

    def tick(self, now: int) -> list:
        if self.role is Role.LEADER:
            if now - self.last_heartbeat >= self.heartbeat:
                return self._broadcast_append(now)
            return []
        if now >= self.election_deadline:
            return self._start_election(now)
        return []

    def propose(self, command, now: int) -> tuple[int | None, list]:
        """Append ``command`` if this node leads; returns (index, outbound)."""
        if self.role is not Role.LEADER:
            return None, []
        self.log.append(LogEntry(self.current_term, command))
        index = self.last_index
        self._advance_commit()
        return index, self._broadcast_append(now)

    def handle(self, msg, now: int) -> list:
        if getattr(msg, "dst", None) != self.id or getattr(msg, "term", -1) < 0:
            self.dropped += 1
            return []
        if msg.term > self.current_term:
            self._step_down(msg.term, now)
            self.leader_id = None

        if isinstance(msg, RequestVote):
            return self._on_request_vote(msg, now)
        if isinstance(msg, VoteReply):
            return self._on_vote_reply(msg, now)
        if isinstance(msg, AppendEntries):
            return self._on_append(msg, now)
        if isinstance(msg, AppendReply):
            return self._on_append_reply(msg, now)
        self.dropped += 1
        return []

    def _on_request_vote(self, msg: RequestVote, now: int) -> list:
        granted = False
        if msg.term == self.current_term and self.voted_for in (None, msg.src):
            up_to_date = (msg.last_log_term, msg.last_log_index) >= (self.last_term, self.last_index)
            if up_to_date:
                granted = True
                self.voted_for = msg.src
                self._reset_election_timer(now)
        return [VoteReply(self.id, msg.src, self.current_term, granted)]

    def _on_vote_reply(self, msg: VoteReply, now: int) -> list:
        if self.role is not Role.CANDIDATE or msg.term != self.current_term or not msg.granted:
            return []
        self.votes.add(msg.src)
        if len(self.votes) >= self.majority:
            return self._become_leader(now)
        return []

    def _on_append(self, msg: AppendEntries, now: int) -> list:
        if msg.term < self.current_term:
            return [AppendReply(self.id, msg.src, self.current_term, False, -1)]
        if msg.prev_index < -1:
            self.dropped += 1
            return []
        if self.role is not Role.FOLLOWER:
            self._step_down(msg.term, now)
        self.leader_id = msg.src
        self._reset_election_timer(now)

        if msg.prev_index > self.last_index or self.term_at(msg.prev_index) != msg.prev_term:
            return [AppendReply(self.id, msg.src, self.current_term, False, -1)]

        index = msg.prev_index
        for entry in msg.entries:
            index += 1
            if index <= self.last_index:
                if self.log[index].term == entry.term:
                    continue
                self.truncated_at.append(index)
                del self.log[index:]
            self.log.append(entry)
        last_new = msg.prev_index + len(msg.entries)
        if msg.leader_commit > self.commit_index:
            self.commit_index = max(self.commit_index, min(msg.leader_commit, last_new))
        return [AppendReply(self.id, msg.src, self.current_term, True, last_new)]

    def _on_append_reply(self, msg: AppendReply, now: int) -> list:
        if self.role is not Role.LEADER or msg.term != self.current_term:
            return []
        peer = msg.src
        if peer not in self.next_index:
            self.dropped += 1
            return []
        if msg.success:
            if msg.match_index > self.match_index[peer]:
                self.match_index[peer] = msg.match_index
            self.next_index[peer] = max(self.next_index[peer], self.match_index[peer] + 1)
            self._advance_commit()
            if self.next_index[peer] <= self.last_index:
                return [self._append_for(peer)]
            return []
        self.next_index[peer] = max(0, self.next_index[peer] - 1)
        return [self._append_for(peer)]

    def take_committed(self) -> list[tuple[int, LogEntry]]:
        """Entries committed since the last call, in index order."""
        out = []
        while self.last_applied < self.commit_index:
            self.last_applied += 1
            out.append((self.last_applied, self.log[self.last_applied]))
        return out

    def restart(self, now: int) -> None:
        """Come back after a crash with term, vote and log intact."""
        self.role = Role.FOLLOWER
        self.leader_id = None
        self.votes = set()
        self.next_index = {}
        self.match_index = {}
        self._reset_election_timer(now)


@dataclass
class SafetyMonitor:
    """Watches a cluster for election-safety and log-safety violations."""

    leaders_by_term: dict[int, set[int]] = field(default_factory=dict)
    committed: dict[int, LogEntry] = field(default_factory=dict)
    last_commit: dict[int, int] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    def observe(self, node: RaftNode) -> None:
        if node.role is Role.LEADER:
            leaders = self.leaders_by_term.setdefault(node.current_term, set())
            leaders.add(node.id)
            if len(leaders) > 1:
                self.violations.append(
                    f"election safety: term {node.current_term} has leaders {sorted(leaders)}")
        prev = self.last_commit.get(node.id, -1)
        if node.commit_index < prev:
            self.violations.append(f"node {node.id} commit_index went {prev} -> {node.commit_index}")
        for i in range(prev + 1, node.commit_index + 1):
            entry = node.log[i]
            seen = self.committed.setdefault(i, entry)
            if seen != entry:
                self.violations.append(f"commit disagreement at index {i}: {seen} vs {entry}")
        self.last_commit[node.id] = max(prev, node.commit_index)
        if node.truncated_at:
            for i in node.truncated_at:
                if i in self.committed:
                    self.violations.append(f"node {node.id} overwrote committed index {i}")
            node.truncated_at.clear()

    def check_logs(self, nodes) -> list[str]:
        """Log matching and committed-prefix agreement over final states."""
        found = []
        nodes = list(nodes)
        for a_i, a in enumerate(nodes):
            for b in nodes[a_i + 1:]:
                same_prefix = True
                for i in range(min(len(a.log), len(b.log))):
                    same_prefix = same_prefix and a.log[i] == b.log[i]
                    if a.log[i].term == b.log[i].term and not same_prefix:
                        found.append(f"log matching: nodes {a.id},{b.id} agree on term at {i} "
                                     f"but differ earlier")
                        break
                upto = min(a.commit_index, b.commit_index) + 1
                if a.log[:upto] != b.log[:upto]:
                    found.append(f"committed prefix differs between nodes {a.id} and {b.id}")
        self.violations.extend(found)
        return found
