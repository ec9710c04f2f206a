"""Simplified TCP receive path and the on-path injector's segment crafting.

Connections are born synchronized: the eavesdropper reads the ports and
sequence numbers straight off the client's request, so no guessing or
handshake is modelled. The receiver keeps the first bytes it sees at every
stream offset, which is why a spoofed response that arrives first shadows
the genuine one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

SEQ_MOD = 1 << 32
WINDOW = 65535
MSS = 1460


class InjectionError(ValueError):
    pass


class RoutingError(ValueError):
    pass


class Verdict(str, Enum):
    DELIVERED = "delivered"
    BUFFERED = "buffered"
    IGNORED_DUPLICATE = "ignored-duplicate"
    IGNORED_OUT_OF_WINDOW = "ignored-out-of-window"


def seq_add(a: int, b: int) -> int:
    return (a + b) % SEQ_MOD


def seq_diff(a: int, b: int) -> int:
    """Signed distance from ``b`` to ``a`` in sequence space."""
    d = (a - b) % SEQ_MOD
    return d - SEQ_MOD if d >= SEQ_MOD // 2 else d


@dataclass(frozen=True)
class TcpSegment:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    payload: bytes = b""
    arrival_time: int = 0

    def __post_init__(self):
        for name in ("src_port", "dst_port"):
            port = getattr(self, name)
            if not 0 < port < 65536:
                raise ValueError(f"{name} must be in 1..65535, got {port}")
        for name in ("seq", "ack"):
            if not 0 <= getattr(self, name) < SEQ_MOD:
                raise ValueError(f"{name} must be a 32-bit unsigned value")

    @property
    def end_seq(self) -> int:
        return seq_add(self.seq, len(self.payload))


@dataclass(frozen=True)
class InjectionParams:
    src_port: int
    dst_port: int
    seq: int
    ack: int


def observe(request: TcpSegment) -> InjectionParams:
    """Mirror a client->server request into spoofed server->client parameters."""
    if not request.payload:
        raise InjectionError("segment carries no payload; not an HTTP request")
    return InjectionParams(
        src_port=request.dst_port,
        dst_port=request.src_port,
        seq=request.ack,
        ack=request.end_seq,
    )


def craft_injection(params: InjectionParams, payload: bytes, arrival_time: int = 0,
                    mss: int = MSS) -> TcpSegment:
    if len(payload) > mss:
        raise InjectionError(f"{len(payload)}-byte payload exceeds MSS {mss}; use split_payload")
    return TcpSegment(params.src_port, params.dst_port, params.seq, params.ack, payload, arrival_time)


def split_payload(params: InjectionParams, payload: bytes, arrival_time: int = 0,
                  mss: int = MSS) -> list[TcpSegment]:
    """Cut ``payload`` into MSS-sized segments with contiguous sequence numbers."""
    if not payload:
        return [craft_injection(params, b"", arrival_time, mss)]
    out = []
    for off in range(0, len(payload), mss):
        out.append(TcpSegment(params.src_port, params.dst_port, seq_add(params.seq, off),
                              params.ack, payload[off:off + mss], arrival_time))
    return out


@dataclass
class AcceptResult:
    verdict: Verdict
    data: bytes = b""


@dataclass
class ConnState:
    """Receive side of one connection (the endpoint that sent the request)."""

    client_port: int
    server_port: int
    next_expected_seq: int
    window: int = WINDOW
    _delivered: bytearray = field(default_factory=bytearray, repr=False)
    _pending: dict[int, int] = field(default_factory=dict, repr=False)

    @property
    def delivered(self) -> bytes:
        return bytes(self._delivered)

    def accept(self, seg: TcpSegment) -> AcceptResult:
        return accept(self, seg)


def accept(conn: ConnState, seg: TcpSegment) -> AcceptResult:
    if seg.src_port != conn.server_port or seg.dst_port != conn.client_port:
        raise RoutingError(
            f"segment {seg.src_port}->{seg.dst_port} not for connection "
            f"{conn.server_port}->{conn.client_port}")
    start = seq_diff(seg.seq, conn.next_expected_seq)
    if start > conn.window:
        return AcceptResult(Verdict.IGNORED_OUT_OF_WINDOW)

    # offsets relative to next_expected_seq; negative = already delivered
    end = start + len(seg.payload)
    if end <= 0:
        return AcceptResult(Verdict.IGNORED_DUPLICATE)
    if start <= 0 and not conn._pending:
        ready = seg.payload[-start:conn.window + 1 - start]
        conn._delivered += ready
        conn.next_expected_seq = seq_add(conn.next_expected_seq, len(ready))
        return AcceptResult(Verdict.DELIVERED, bytes(ready))
    fresh = False
    for i, byte in enumerate(seg.payload):
        off = start + i
        if off < 0 or off > conn.window:
            continue
        if off not in conn._pending:
            conn._pending[off] = byte
            fresh = True
    if not fresh:
        return AcceptResult(Verdict.IGNORED_DUPLICATE)

    ready = bytearray()
    while len(ready) in conn._pending:
        ready.append(conn._pending.pop(len(ready)))
    if not ready:
        return AcceptResult(Verdict.BUFFERED)
    conn._pending = {off - len(ready): b for off, b in conn._pending.items()}
    conn._delivered += ready
    conn.next_expected_seq = seq_add(conn.next_expected_seq, len(ready))
    return AcceptResult(Verdict.DELIVERED, bytes(ready))


def segment_trace(seg: TcpSegment, verdict: Verdict | str, time: int | None = None) -> dict:
    """One trace record in event-log field order."""
    return {
        "time": seg.arrival_time if time is None else time,
        "src_port": seg.src_port,
        "dst_port": seg.dst_port,
        "seq": seg.seq,
        "ack": seg.ack,
        "len": len(seg.payload),
        "verdict": Verdict(verdict).value,
    }
