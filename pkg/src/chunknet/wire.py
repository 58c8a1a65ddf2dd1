"""Chunk control header codec and wrap-around CSN arithmetic.

Layout of the 32-bit control word (most significant bit first)::

    31..24  conn_id     8 bits
    23..17  msg_id      7 bits
    16..9   csn         8 bits
    8       last_chunk  1 bit
    7..0    reserved    8 bits (credit / RTS opcodes for receiver-driven CC)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONN_BITS, MSG_BITS, CSN_BITS, LAST_BITS, RSVD_BITS = 8, 7, 8, 1, 8

CONN_SHIFT = 24
MSG_SHIFT = 17
CSN_SHIFT = 9
LAST_SHIFT = 8
RSVD_SHIFT = 0

CONN_MAX = (1 << CONN_BITS) - 1
MSG_MAX = (1 << MSG_BITS) - 1
CSN_MAX = (1 << CSN_BITS) - 1
RSVD_MAX = (1 << RSVD_BITS) - 1

CSN_SPACE = 1 << CSN_BITS
MAX_WINDOW = CSN_SPACE // 2  # 128; tracked span must stay below this
WORD_MASK = 0xFFFFFFFF


class HeaderRangeError(ValueError):
    pass


class OutOfWindowError(ValueError):
    """A CSN fell outside the tracked window; callers treat it as stale."""


@dataclass(frozen=True)
class ControlHeader:
    conn_id: int = 0
    msg_id: int = 0
    csn: int = 0
    last_chunk: bool = False
    reserved: int = 0

    def __post_init__(self):
        for name, hi in (("conn_id", CONN_MAX), ("msg_id", MSG_MAX), ("csn", CSN_MAX), ("reserved", RSVD_MAX)):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or not 0 <= v <= hi:
                raise HeaderRangeError(f"{name}={v!r} outside 0..{hi}")
        if not isinstance(self.last_chunk, (bool, np.bool_)):
            raise HeaderRangeError(f"last_chunk must be bool, got {self.last_chunk!r}")

    def encode(self) -> int:
        return encode_header(self)

    def __str__(self):
        return f"{encode_header(self):08x}"


def encode_header(h: ControlHeader) -> int:
    return (
        (h.conn_id << CONN_SHIFT)
        | (h.msg_id << MSG_SHIFT)
        | (h.csn << CSN_SHIFT)
        | (int(h.last_chunk) << LAST_SHIFT)
        | (h.reserved << RSVD_SHIFT)
    )


def pack_fields(conn_id: int, msg_id: int, csn: int, last_chunk: bool, reserved: int = 0) -> int:
    """Range-checked encode without building a ControlHeader."""
    return encode_header(ControlHeader(conn_id, msg_id, csn, bool(last_chunk), reserved))


def decode_header(word: int) -> ControlHeader:
    if not 0 <= word <= WORD_MASK:
        raise HeaderRangeError(f"word {word!r} is not a 32-bit value")
    return ControlHeader(
        conn_id=(word >> CONN_SHIFT) & CONN_MAX,
        msg_id=(word >> MSG_SHIFT) & MSG_MAX,
        csn=(word >> CSN_SHIFT) & CSN_MAX,
        last_chunk=bool((word >> LAST_SHIFT) & 1),
        reserved=(word >> RSVD_SHIFT) & RSVD_MAX,
    )


@dataclass(frozen=True)
class SeqWindow:
    base_csn: int = 0
    width: int = MAX_WINDOW

    def __post_init__(self):
        if not 0 <= self.base_csn <= CSN_MAX:
            raise HeaderRangeError(f"base_csn={self.base_csn} outside 0..{CSN_MAX}")
        if not 1 <= self.width <= MAX_WINDOW:
            raise HeaderRangeError(f"width={self.width} outside 1..{MAX_WINDOW}")

    def offset(self, csn):
        """Distance of ``csn`` from the window base (mod 256), validated."""
        off = (csn - self.base_csn) % CSN_SPACE
        if np.any(off >= self.width):
            raise OutOfWindowError(f"csn {csn} outside [{self.base_csn}, +{self.width})")
        return off

    def contains(self, csn: int) -> bool:
        return (csn - self.base_csn) % CSN_SPACE < self.width


def csn_before(a, b, window: SeqWindow):
    """True iff ``a`` precedes ``b`` inside ``window``.

    Works elementwise on numpy arrays as well as on plain ints.
    """
    return window.offset(a) < window.offset(b)


def csn_unwrap(csn: int, ref_abs: int) -> int:
    """Absolute chunk index for an 8-bit ``csn`` seen near absolute index ``ref_abs``.

    Offsets below MAX_WINDOW map forward of ``ref_abs``; the rest map behind it.
    """
    off = (csn - ref_abs) % CSN_SPACE
    if off < MAX_WINDOW:
        return ref_abs + off
    return ref_abs + off - CSN_SPACE
