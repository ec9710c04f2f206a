from hypothesis import given, settings
from hypothesis import strategies as st
import pytest

from parasite_lab.tcp_inject import (MSS, SEQ_MOD, ConnState, InjectionError, RoutingError, TcpSegment,
                                     Verdict, accept, craft_injection, observe, seq_add, split_payload)
from parasite_lab.tcp_inject import InjectionParams


def test_observe_mirror_example():
    req = TcpSegment(51000, 80, 1000, 5000, bytes(200))
    p = observe(req)
    assert (p.src_port, p.dst_port, p.seq, p.ack) == (80, 51000, 5000, 1200)


def test_observe_wraps():
    req = TcpSegment(51000, 80, SEQ_MOD - 10, 1, bytes(20))
    assert observe(req).ack == 10


def test_observe_rejects_empty():
    with pytest.raises(InjectionError):
        observe(TcpSegment(51000, 80, 1, 1, b""))


def test_craft_single_and_split():
    p = InjectionParams(80, 51000, 7, 9)
    seg = craft_injection(p, bytes(300))
    assert len(seg.payload) == 300 and seg.src_port == 80 and seg.seq == 7
    with pytest.raises(InjectionError):
        craft_injection(p, bytes(4000))
    segs = split_payload(p, bytes(4000))
    assert [s.seq for s in segs] == [7, 7 + 1460, 7 + 2920]
    assert [len(s.payload) for s in segs] == [1460, 1460, 1080]


def test_split_wraps_sequence_space():
    p = InjectionParams(80, 51000, SEQ_MOD - 100, 0)
    segs = split_payload(p, bytes(3000))
    assert segs[1].seq == MSS - 100


def conn_for(req):
    return ConnState(req.src_port, req.dst_port, req.ack)


def test_injected_first_genuine_ignored():
    req = TcpSegment(51000, 80, 1000, 5000, b"GET / HTTP/1.1\r\n\r\n")
    conn = conn_for(req)
    p = observe(req)
    fake = craft_injection(p, b"EVIL", arrival_time=5)
    real = craft_injection(p, b"GOOD", arrival_time=9)
    assert accept(conn, fake).verdict is Verdict.DELIVERED
    assert accept(conn, real).verdict is Verdict.IGNORED_DUPLICATE
    assert conn.delivered == b"EVIL"


def test_out_of_window():
    conn = ConnState(51000, 80, 100)
    seg = TcpSegment(80, 51000, 100 + 70000, 0, b"x")
    assert accept(conn, seg).verdict is Verdict.IGNORED_OUT_OF_WINDOW


def test_first_segment_at_isn_delivered():
    conn = ConnState(51000, 80, 12345)
    assert accept(conn, TcpSegment(80, 51000, 12345, 0, b"hi")).data == b"hi"


def test_port_mismatch():
    conn = ConnState(51000, 80, 0)
    with pytest.raises(RoutingError):
        accept(conn, TcpSegment(80, 51001, 0, 0, b"x"))


def test_future_segment_buffered_then_drained():
    conn = ConnState(51000, 80, 0)
    assert accept(conn, TcpSegment(80, 51000, 3, 0, b"def")).verdict is Verdict.BUFFERED
    r = accept(conn, TcpSegment(80, 51000, 0, 0, b"abc"))
    assert r.verdict is Verdict.DELIVERED and conn.delivered == b"abcdef"


_req = st.builds(lambda sp, dp, seq, ack, n: TcpSegment(sp, dp, seq, ack, bytes(n)),
                 st.integers(1, 65535), st.integers(1, 65535), st.integers(0, SEQ_MOD - 1),
                 st.integers(0, SEQ_MOD - 1), st.integers(1, 3000))


@settings(max_examples=300)
@given(_req, st.binary(min_size=1, max_size=5000))
def test_mirror_injection_always_delivered(req, body):
    conn = conn_for(req)
    segs = split_payload(observe(req), body)
    for s in segs:
        assert accept(conn, s).verdict is Verdict.DELIVERED
    assert conn.delivered == body


@settings(max_examples=200)
@given(st.integers(0, SEQ_MOD - 1),
       st.lists(st.tuples(st.integers(0, 300), st.binary(min_size=1, max_size=60)), max_size=25))
def test_first_writer_wins_against_offset_oracle(isn, arrivals):
    conn = ConnState(51000, 80, isn)
    first = {}
    prev = b""
    for off, data in arrivals:
        accept(conn, TcpSegment(80, 51000, seq_add(isn, off), 0, data))
        for i, b in enumerate(data):
            first.setdefault(off + i, b)
        cur = conn.delivered
        assert cur.startswith(prev)  # never overwritten
        prev = cur
    expect = bytearray()
    while len(expect) in first:
        expect.append(first[len(expect)])
    assert conn.delivered == bytes(expect)
