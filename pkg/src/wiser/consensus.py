"""Minimal Raft-style log holding only Serializers rows.

Terms are serializer seq numbers.  A candidate collects a majority of votes
for a fresh seq, then appends one row naming itself and replicates the whole
(tiny) log; the row is accepted once a majority acks it.  Voters grant at
most one candidate per seq and only to candidates whose log is at least as
up to date as their own, so every accepted row survives later elections.

The participant is a pure state machine: messages go out through ``send``
and elections report back through callbacks, so it runs equally on simnet
or in a unit test.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .serializer import SerializersRow, current_serializer


class AlreadyInitialized(Exception):
    pass


class Rejected(Exception):
    pass


@dataclass
class VoteRequest:
    candidate: int
    seq: int
    last_seq: int
    log_len: int


@dataclass
class VoteGrant:
    voter: int
    seq: int
    granted: bool
    promised: int
    payload: object = None


@dataclass
class AppendRow:
    leader: int
    seq: int
    rows: tuple


@dataclass
class AckRow:
    voter: int
    seq: int
    ok: bool
    promised: int


@dataclass
class CommitRow:
    rows: tuple


def majority(n: int) -> int:
    return n // 2 + 1


def _last_seq(rows) -> int:
    return rows[-1].seq if rows else -1


class ConsensusParticipant:
    def __init__(self, node_id: int, send: Callable, members: Callable[[], list],
                 on_elected: Optional[Callable] = None, on_committed: Optional[Callable] = None,
                 vote_payload: Optional[Callable] = None):
        self.node_id = node_id
        self.send = send
        self.members = members
        self.on_elected = on_elected
        self.on_committed = on_committed
        self.vote_payload = vote_payload
        self.promised = 0
        self.voted_for: Optional[int] = None
        self.acked: tuple = ()
        self.committed: tuple = ()
        self.candidacy: Optional[dict] = None
        self.accepted: list[SerializersRow] = []  # rows this node got accepted

    # -- queries ---------------------------------------------------------

    def bootstrap(self) -> tuple:
        if self.acked or self.committed:
            raise AlreadyInitialized(f"node {self.node_id} already has a Serializers log")
        self.acked = self.committed = (SerializersRow(0, 0, 0),)
        return self.committed

    def current(self) -> SerializersRow:
        return current_serializer(self.committed)

    def learn(self, rows) -> bool:
        """Adopt a committed log seen elsewhere if it is newer."""
        rows = tuple(rows)
        if _last_seq(rows) > _last_seq(self.committed):
            self.committed = rows
            if _last_seq(rows) >= _last_seq(self.acked):
                self.acked = rows
            if rows[-1].seq > self.promised:
                self.promised = rows[-1].seq
            return True
        return False

    # -- candidate side --------------------------------------------------

    def start_candidacy(self) -> int:
        seq = max(self.promised, _last_seq(self.acked)) + 1
        self.promised = seq
        self.voted_for = self.node_id
        self.candidacy = {"seq": seq, "grants": {self.node_id}, "acks": set(), "phase": "vote",
                          "payloads": {self.node_id: self.vote_payload() if self.vote_payload else None},
                          "log": None, "members": list(self.members())}
        req = VoteRequest(self.node_id, seq, _last_seq(self.acked), len(self.acked))
        for m in self.candidacy["members"]:
            if m != self.node_id:
                self.send(m, req)
        self._check_votes()
        return seq

    def abandon(self) -> None:
        self.candidacy = None

    def append_self(self, starting_batch: int) -> None:
        """After winning the vote: append our row and replicate the log."""
        c = self.candidacy
        if c is None or c["phase"] != "elected":
            raise Rejected("not an elected candidate")
        prev = current_serializer(self.acked) if self.acked else None
        if prev is not None and starting_batch < prev.starting_batch:
            raise Rejected(f"startingBatch {starting_batch} below predecessor's {prev.starting_batch}")
        row = SerializersRow(self.node_id, c["seq"], starting_batch)
        log = self.acked + (row,)
        c["log"] = log
        c["phase"] = "append"
        c["acks"] = {self.node_id}
        self.acked = log
        msg = AppendRow(self.node_id, c["seq"], log)
        for m in c["members"]:
            if m != self.node_id:
                self.send(m, msg)
        self._check_acks()

    def _check_votes(self) -> None:
        c = self.candidacy
        if c and c["phase"] == "vote" and len(c["grants"]) >= majority(len(c["members"])):
            c["phase"] = "elected"
            if self.on_elected:
                self.on_elected(c["seq"], dict(c["payloads"]))

    def _check_acks(self) -> None:
        c = self.candidacy
        if c and c["phase"] == "append" and len(c["acks"]) >= majority(len(c["members"])):
            log = c["log"]
            self.candidacy = None
            self.committed = log
            self.accepted.append(log[-1])
            msg = CommitRow(log)
            for m in c["members"]:
                if m != self.node_id:
                    self.send(m, msg)
            if self.on_committed:
                self.on_committed(log[-1])

    # -- message handling ------------------------------------------------

    def handle(self, src: int, msg) -> None:
        if isinstance(msg, VoteRequest):
            self.send(src, self._vote(msg))
        elif isinstance(msg, VoteGrant):
            c = self.candidacy
            if c and msg.seq == c["seq"]:
                if msg.granted:
                    c["grants"].add(msg.voter)
                    c["payloads"][msg.voter] = msg.payload
                    self._check_votes()
                elif msg.promised > c["seq"]:
                    self.promised = max(self.promised, msg.promised)
                    self.candidacy = None
        elif isinstance(msg, AppendRow):
            self.send(src, self._append(msg))
        elif isinstance(msg, AckRow):
            c = self.candidacy
            if c and c["phase"] == "append" and msg.seq == c["seq"]:
                if msg.ok:
                    c["acks"].add(msg.voter)
                    self._check_acks()
                elif msg.promised > c["seq"]:
                    self.promised = max(self.promised, msg.promised)
                    self.candidacy = None
        elif isinstance(msg, CommitRow):
            self.learn(msg.rows)

    def _vote(self, req: VoteRequest) -> VoteGrant:
        fresh = req.seq > self.promised or (req.seq == self.promised and self.voted_for == req.candidate)
        up_to_date = (req.last_seq, req.log_len) >= (_last_seq(self.acked), len(self.acked))
        if fresh and up_to_date:
            self.promised = req.seq
            self.voted_for = req.candidate
            if self.candidacy and self.candidacy["seq"] < req.seq:
                self.candidacy = None
            payload = self.vote_payload() if self.vote_payload else None
            return VoteGrant(self.node_id, req.seq, True, self.promised, payload)
        return VoteGrant(self.node_id, req.seq, False, self.promised)

    def _append(self, msg: AppendRow) -> AckRow:
        if msg.seq < self.promised:
            return AckRow(self.node_id, msg.seq, False, self.promised)
        self.promised = msg.seq
        if _last_seq(msg.rows) >= _last_seq(self.acked):
            self.acked = tuple(msg.rows)
        return AckRow(self.node_id, msg.seq, True, self.promised)
