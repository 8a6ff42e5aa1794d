import random
import struct
import zlib

import pytest
from hypothesis import given, strategies as st

from twinsim.store import CorruptSegment, EventStore, StoreError


@pytest.fixture(params=["memory", "disk"])
def store(request, tmp_path):
    s = EventStore(None if request.param == "memory" else tmp_path / "store", known_instances={"a", "b", "c"})
    yield s
    s.close()


def test_sequences_per_key(store):
    assert store.append("i", "a", 1.0, b"x") == 1
    assert store.append("i", "a", 2.0, b"y") == 2
    assert store.append("i", "b", 2.0, b"z") == 1


def test_unknown_instance_flagged(store):
    store.append("i", "ghost", 0.0, b"{}")
    [e] = store.history("i", "ghost")
    assert e.unknown_instance
    store.append("i", "a", 0.0, b"{}")
    assert not store.latest("i", "a").unknown_instance


def test_latest(store):
    assert store.latest("i", "a") is None
    for t in (1.0, 2.0, 3.0):
        store.append("i", "a", t, f"{t}".encode())
    e = store.latest("i", "a")
    assert (e.time, e.sequence, e.payload) == (3.0, 3, b"3.0")


def test_time_must_not_go_backwards(store):
    store.append("i", "a", 5.0, b"")
    with pytest.raises(StoreError):
        store.append("i", "a", 4.0, b"")


def test_pagination_three_pages(store):
    for k in range(25):
        store.append("i", "a", float(k), str(k).encode())
    first = store.range("i", "a", limit=10)
    assert len(first.events) == 10 and first.token is not None
    second = store.range("i", "a", limit=10, token=first.token)
    third = store.range("i", "a", limit=10, token=second.token)
    assert third.token is None
    got = first.events + second.events + third.events
    assert [e.sequence for e in got] == list(range(1, 26))
    assert got == store.range("i", "a").events


def test_inverted_range_and_bad_token(store):
    with pytest.raises(StoreError):
        store.range("i", "a", start=2, end=1)
    store.append("i", "a", 0.0, b"")
    with pytest.raises(StoreError):
        store.range("i", "a", token="99")


@given(st.lists(st.tuples(st.sampled_from("abc"), st.floats(0, 5)), max_size=60), st.floats(0, 5), st.floats(0, 5))
def test_interface_query_is_union_and_latest_is_max_seq(ops, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    s = EventStore()
    clock = {}
    for inst, dt in ops:
        t = clock.get(inst, 0.0) + dt
        clock[inst] = t
        seq = s.append("i", inst, t, f"{inst}{t}".encode())
        assert s.latest("i", inst).sequence == seq  # append-then-latest coherence
    merged = s.range("i", start=lo, end=hi).events
    union = [e for inst in "abc" for e in s.range("i", inst, start=lo, end=hi).events]
    assert sorted(merged, key=lambda e: (e.instance, e.sequence)) == sorted(union, key=lambda e: (e.instance, e.sequence))
    assert [e.time for e in merged] == sorted(e.time for e in merged)
    for inst in "abc":
        seqs = [e.sequence for e in s.range("i", inst, start=lo, end=hi).events]
        assert seqs == list(range(seqs[0], seqs[0] + len(seqs))) if seqs else True
        hist = s.history("i", inst)
        if hist:
            assert s.latest("i", inst) == max(hist, key=lambda e: e.sequence)


def test_reopen_recovers(tmp_path):
    path = tmp_path / "s"
    s = EventStore(path, segment_bytes=200)
    rng = random.Random(1)
    for k in range(50):
        s.append("iface", f"x{k % 3}", float(k), bytes(rng.randrange(256) for _ in range(20)))
    s.close()
    assert len(list(path.glob("seg-*.log"))) > 1
    again = EventStore(path)
    assert again.count == 50
    assert again.keys() == s.keys()
    for key in s.keys():
        assert again.history(*key) == s.history(*key)
    assert again.append("iface", "x0", 100.0, b"more") == 18
    again.close()


def test_record_framing(tmp_path):
    s = EventStore(tmp_path)
    s.append("if", "in", 1.5, b"payload")
    s.close()
    raw = (tmp_path / "seg-000000.log").read_bytes()
    length, crc = struct.unpack_from("<II", raw, 0)
    body = raw[8:8 + length]
    assert zlib.crc32(body) == crc
    t, seq, flags, li, ln = struct.unpack_from("<dQBHH", body, 0)
    assert (t, seq, li, ln) == (1.5, 1, 2, 2)
    assert body.endswith(b"ifinpayload")


def test_corruption_detected(tmp_path):
    s = EventStore(tmp_path)
    s.append("if", "in", 1.0, b"payload")
    s.close()
    seg = tmp_path / "seg-000000.log"
    data = bytearray(seg.read_bytes())
    data[-1] ^= 0xFF
    seg.write_bytes(bytes(data))
    with pytest.raises(CorruptSegment):
        EventStore(tmp_path)
