import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunknet.wire import (ControlHeader, HeaderRangeError, OutOfWindowError, SeqWindow, csn_before, csn_unwrap,
                           decode_header, encode_header, pack_fields)

FIELDS = (("conn_id", 255), ("msg_id", 127), ("csn", 255), ("reserved", 255))


def ref_pack(conn, msg, csn, last, rsvd):
    # reference packing, built field by field from the bit positions
    word = 0
    for value, width in ((conn, 8), (msg, 7), (csn, 8), (int(last), 1), (rsvd, 8)):
        word = (word << width) | value
    return word


def test_zero_and_saturation():
    assert encode_header(ControlHeader()) == 0
    assert decode_header(0) == ControlHeader()
    full = ControlHeader(255, 127, 255, True, 255)
    assert encode_header(full) == 0xFFFFFFFF
    assert decode_header(0xFFFFFFFF) == full


def test_reference_example():
    # 5 << 24 | 3 << 17 | 200 << 9 | 1 << 8
    assert ref_pack(5, 3, 200, True, 0) == 0x05079100
    assert encode_header(ControlHeader(5, 3, 200, True, 0)) == 0x05079100
    assert pack_fields(5, 3, 200, True) == 0x05079100


@pytest.mark.parametrize("name,hi", FIELDS)
def test_each_field_exhaustive(name, hi):
    base = dict(conn_id=17, msg_id=99, csn=3, last_chunk=True, reserved=8)
    for v in range(hi + 1):
        h = ControlHeader(**dict(base, **{name: v}))
        w = encode_header(h)
        assert w == ref_pack(h.conn_id, h.msg_id, h.csn, h.last_chunk, h.reserved)
        assert decode_header(w) == h


def test_last_bit_both_values():
    for last in (False, True):
        h = ControlHeader(1, 2, 3, last, 4)
        assert decode_header(encode_header(h)) == h


def test_random_joint_roundtrips():
    rng = random.Random(2024)
    for _ in range(100_000):
        h = ControlHeader(rng.randrange(256), rng.randrange(128), rng.randrange(256), rng.random() < 0.5,
                          rng.randrange(256))
        w = encode_header(h)
        assert decode_header(w) == h
        assert encode_header(decode_header(w)) == w


def test_random_words_roundtrip():
    rng = np.random.default_rng(7)
    for w in rng.integers(0, 1 << 32, size=20_000, dtype=np.int64):
        w = int(w)
        assert encode_header(decode_header(w)) == w


@pytest.mark.parametrize("kw", [dict(conn_id=256), dict(msg_id=128), dict(csn=-1), dict(reserved=300),
                                dict(conn_id=True), dict(last_chunk=1)])
def test_range_errors(kw):
    with pytest.raises(HeaderRangeError):
        ControlHeader(**kw)


def test_decode_rejects_wide_words():
    with pytest.raises(HeaderRangeError):
        decode_header(1 << 32)
    with pytest.raises(HeaderRangeError):
        decode_header(-1)


def test_csn_before_examples():
    assert csn_before(3, 5, SeqWindow(0))
    assert csn_before(250, 4, SeqWindow(245, 100))
    assert not csn_before(4, 250, SeqWindow(245, 100))
    assert not csn_before(5, 5, SeqWindow(0))


def test_csn_before_out_of_window():
    with pytest.raises(OutOfWindowError):
        csn_before(3, 200, SeqWindow(0, 100))
    with pytest.raises(HeaderRangeError):
        SeqWindow(0, 129)


def test_csn_before_brute_force():
    """Every (a, b, base) triple for every width <= 127, against absolute-index comparison."""
    for width in range(1, 128):
        n = np.arange(width)
        na, nb = np.meshgrid(n, n, indexing="ij")
        truth = na < nb
        for base in range(256):
            # absolute indices base..base+width-1 and their 8-bit images
            a = (base + na) % 256
            b = (base + nb) % 256
            got = csn_before(a, b, SeqWindow(base, width))
            assert np.array_equal(got, truth), (width, base)


def test_csn_before_full_cube_width_127():
    """All 256^3 (a, b, base): in-window pairs compare like integers, the rest are rejected."""
    w = 127
    a, b = np.meshgrid(np.arange(256), np.arange(256), indexing="ij")
    for base in range(256):
        oa, ob = (a - base) % 256, (b - base) % 256
        inside = (oa < w) & (ob < w)
        win = SeqWindow(base, w)
        got = csn_before(a[inside], b[inside], win)
        assert np.array_equal(got, oa[inside] < ob[inside])
        if base % 37 == 0:
            for x, y in zip(a[~inside][:50], b[~inside][:50]):
                with pytest.raises(OutOfWindowError):
                    csn_before(int(x), int(y), win)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 255), st.integers(1, 127), st.data())
def test_csn_order_is_total(base, width, data):
    win = SeqWindow(base, width)
    offs = data.draw(st.lists(st.integers(0, width - 1), min_size=3, max_size=3))
    x, y, z = [(base + o) % 256 for o in offs]
    assert not (csn_before(x, y, win) and csn_before(y, x, win))
    if csn_before(x, y, win) and csn_before(y, z, win):
        assert csn_before(x, z, win)
    if x != y:
        assert csn_before(x, y, win) or csn_before(y, x, win)


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 10_000), st.integers(-127, 127))
def test_unwrap_recovers_absolute(ref, delta):
    n = ref + delta
    assert csn_unwrap(n % 256, ref) == n
