import pytest

from wiser.consensus import AlreadyInitialized, ConsensusParticipant, Rejected, majority
from wiser.serializer import SerializersRow


class Bus:
    """Synchronous FIFO delivery with optional cut links."""

    def __init__(self, n):
        self.queue = []
        self.cut = set()
        self.elected = {}
        self.committed = {}
        ids = list(range(n))
        self.p = {i: ConsensusParticipant(i, lambda dst, msg, i=i: self.queue.append((i, dst, msg)),
                                          lambda: ids,
                                          on_elected=lambda seq, pl, i=i: self.elected.setdefault(i, []).append(seq),
                                          on_committed=lambda row, i=i: self.committed.setdefault(i, []).append(row),
                                          vote_payload=lambda i=i: f"file-{i}")
                  for i in ids}
        for q in self.p.values():
            q.bootstrap()

    def isolate(self, *ids):
        for a in ids:
            for b in self.p:
                if a != b:
                    self.cut |= {(a, b), (b, a)}

    def run(self):
        while self.queue:
            src, dst, msg = self.queue.pop(0)
            if (src, dst) not in self.cut:
                self.p[dst].handle(src, msg)


def test_majority():
    assert [majority(n) for n in (1, 2, 3, 4, 5)] == [1, 2, 2, 3, 3]


def test_bootstrap_once():
    b = Bus(1)
    assert b.p[0].current() == SerializersRow(0, 0, 0)
    with pytest.raises(AlreadyInitialized):
        b.p[0].bootstrap()


def test_election_then_append_is_accepted_everywhere():
    b = Bus(3)
    seq = b.p[1].start_candidacy()
    b.run()
    assert b.elected == {1: [seq]}
    b.p[1].append_self(7)
    b.run()
    assert b.committed[1] == [SerializersRow(1, seq, 7)]
    assert all(q.current() == SerializersRow(1, seq, 7) for q in b.p.values())


def test_minority_candidate_cannot_win():
    b = Bus(5)
    b.isolate(0, 1)
    b.p[0].start_candidacy()
    b.run()
    assert 0 not in b.elected


def test_competing_candidates_one_row_per_seq():
    b = Bus(3)
    s1 = b.p[1].start_candidacy()
    s2 = b.p[2].start_candidacy()
    assert s1 == s2
    b.run()
    assert len(b.elected) <= 1


def test_deposed_leader_append_rejected():
    b = Bus(3)
    b.p[1].start_candidacy()
    b.run()
    # a newer election that node 1 hears about cancels its candidacy
    b.p[2].start_candidacy()
    b.run()
    with pytest.raises(Rejected):
        b.p[1].append_self(3)


def test_cut_off_leader_append_is_nacked():
    b = Bus(3)
    b.p[1].start_candidacy()
    b.run()
    b.isolate(1)
    b.p[2].start_candidacy()
    b.run()
    b.cut.clear()
    b.p[1].append_self(3)
    b.run()
    assert 1 not in b.committed
    b.p[2].append_self(3)
    b.run()
    assert b.committed[2][0].node_id == 2
    assert all(q.current().node_id == 2 for q in b.p.values())


def test_append_requires_election_and_monotone_start():
    b = Bus(3)
    with pytest.raises(Rejected):
        b.p[0].append_self(1)
    b.p[1].start_candidacy()
    b.run()
    b.p[1].append_self(5)
    b.run()
    b.p[2].start_candidacy()
    b.run()
    with pytest.raises(Rejected):
        b.p[2].append_self(4)


def test_accepted_row_survives_later_elections():
    b = Bus(5)
    b.p[1].start_candidacy()
    b.run()
    b.p[1].append_self(2)
    b.run()
    won = b.committed[1][0]
    b.isolate(1)
    b.p[3].start_candidacy()
    b.run()
    b.p[3].append_self(4)
    b.run()
    assert won in b.p[3].committed
