"""Message chunking, packet segmentation, control messages, receive reassembly."""
from __future__ import annotations

from ..wire import CSN_SPACE, MAX_WINDOW, MSG_MAX

KB = 1024
DEFAULT_CHUNK = 32 * KB


class CorruptionError(AssertionError):
    pass


class BackpressureError(RuntimeError):
    """The connection already has the maximum number of in-flight messages."""


def chunk_spans(size: int, chunk_size: int = DEFAULT_CHUNK) -> list:
    """(offset, length) spans tiling ``[0, size)`` with fixed-size chunks."""
    if size <= 0 or chunk_size <= 0:
        raise ValueError("size and chunk size must be positive")
    return [(off, min(chunk_size, size - off)) for off in range(0, size, chunk_size)]


def segment(length: int, mtu_payload: int) -> list:
    """Payload lengths of the packets carrying one chunk."""
    n, rem = divmod(length, mtu_payload)
    out = [mtu_payload] * n
    if rem:
        out.append(rem)
    return out or [0]


# ------------------------------------------------------------ control messages
class Ack:
    __slots__ = ("conn_id", "msg_id", "uid", "cum", "sack", "echo_ts", "path_id", "ecn", "csn",
                 "nack", "rx_host", "tx_host", "rtt", "acked_bytes", "retx")

    def __init__(self, conn_id, msg_id, uid, cum, sack, echo_ts, path_id, ecn, csn, rx_host, tx_host,
                 nack=False, retx=False):
        self.conn_id = conn_id
        self.msg_id = msg_id
        self.uid = uid
        self.cum = cum
        self.sack = sack
        self.echo_ts = echo_ts
        self.path_id = path_id
        self.ecn = ecn
        self.csn = csn
        self.nack = nack
        self.rx_host = rx_host
        self.tx_host = tx_host
        self.rtt = 0
        self.acked_bytes = 0
        self.retx = retx

    def sacked_offsets(self):
        """Offsets (relative to ``cum``) whose SACK bit is set."""
        s = self.sack
        i = 0
        while s:
            if s & 1:
                yield i
            s >>= 1
            i += 1


class Nack:
    """Trimmed-header notification: chunk (msg_id, csn) lost in the fabric."""
    __slots__ = ("conn_id", "msg_id", "uid", "csn", "path_id", "rx_host", "tx_host", "xmit")

    def __init__(self, conn_id, msg_id, uid, csn, path_id, rx_host, tx_host, xmit=0):
        self.xmit = xmit
        self.conn_id = conn_id
        self.msg_id = msg_id
        self.uid = uid
        self.csn = csn
        self.path_id = path_id
        self.rx_host = rx_host
        self.tx_host = tx_host


# ------------------------------------------------------------- reassembly
class RxMessage:
    """Receive state of one message: cumulative point, SACK set, payload buffer."""

    __slots__ = ("msg_id", "uid", "expected", "received", "last_index", "nbytes", "buf", "done",
                 "first_ts", "done_ts", "covered")

    def __init__(self, msg_id, uid, with_data=False, size_hint=0):
        self.msg_id = msg_id
        self.uid = uid
        self.expected = 0  # next absolute chunk index needed
        self.received = {}  # abs index -> (offset, length), only beyond ``expected``
        self.last_index = None
        self.nbytes = 0
        self.buf = bytearray(size_hint) if with_data else None
        self.covered = {} if with_data else None  # abs index -> (offset, length) already stored
        self.done = False
        self.first_ts = None
        self.done_ts = None

    def locate(self, csn: int):
        """Absolute index for ``csn``, or None if it lies behind the cumulative point."""
        off = (csn - self.expected) % CSN_SPACE
        if off >= MAX_WINDOW:
            return None
        return self.expected + off

    def accept(self, csn: int, last: bool, offset: int, length: int):
        """Record a complete chunk. Returns (status, abs index): 'new', 'dup' or 'out_of_window'."""
        off = (csn - self.expected) % CSN_SPACE
        if off >= MAX_WINDOW:
            return "dup", None
        idx = self.expected + off
        if off and idx in self.received:
            return "dup", idx
        if self.last_index is not None and idx > self.last_index:
            return "out_of_window", idx
        self.nbytes += length
        if last:
            self.last_index = idx
        if off == 0:
            self.expected += 1
            rec = self.received
            while self.expected in rec:
                del rec[self.expected]
                self.expected += 1
        else:
            self.received[idx] = (offset, length)
        if self.last_index is not None and self.expected > self.last_index:
            self.done = True
        return "new", idx

    def sack_bitmap(self) -> int:
        e = self.expected
        bm = 0
        for idx in self.received:
            bm |= 1 << (idx - e)
        return bm

    @property
    def cum_csn(self) -> int:
        return self.expected % CSN_SPACE

    def write_chunk(self, idx, pieces):
        """Place a chunk's payload pieces ``[(offset, bytes)]``.

        A chunk seen before must carry identical bytes; anything else is corruption.
        """
        buf = self.buf
        if idx in self.covered:
            for off, data in pieces:
                if buf[off:off + len(data)] != data:
                    raise CorruptionError(f"chunk {idx} at {off} rewritten with different bytes")
            return
        for off, data in pieces:
            end = off + len(data)
            if len(buf) < end:
                buf.extend(bytes(end - len(buf)))
            buf[off:end] = data
        self.covered[idx] = True


def next_msg_id(seq: int) -> int:
    return seq % (MSG_MAX + 1)
