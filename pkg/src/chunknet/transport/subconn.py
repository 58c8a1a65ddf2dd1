"""Sender-side reliability: chunk windows, SACK processing, fast and timeout retransmission.

Reliability works at chunk granularity. Each transmission of a chunk gets a
fresh ``tx_seq``; a chunk counts one duplicate ACK whenever a chunk sent after
its latest transmission is acknowledged, and ``dup_thresh`` of those mark it
lost. A retransmission restarts that count, so each loss signal triggers at most
one fast retransmission.
"""
from __future__ import annotations

from collections import deque

from ..lb import PathScoreboard
from ..wire import CSN_SPACE, MAX_WINDOW
from .framing import Ack, Nack
from .policy import PolicyViolation

UNSENT, INFLIGHT, ACKED, LOST = 0, 1, 2, 3
INF = float("inf")

SELECTIVE, GO_BACK_N = "selective", "gbn"


class TxChunk:
    __slots__ = ("msg", "index", "csn", "offset", "length", "last", "state", "tx_seq", "sent_at", "path",
                 "dups", "timeouts", "n_tx", "loss_signal", "timed_out", "rts_sent", "xmit", "pace_at")

    def __init__(self, msg, index, offset, length, last):
        self.msg = msg
        self.index = index
        self.csn = index % CSN_SPACE
        self.offset = offset
        self.length = length
        self.last = last
        self.state = UNSENT
        self.tx_seq = -1
        self.sent_at = 0
        self.path = -1
        self.dups = 0
        self.timeouts = 0
        self.n_tx = 0
        self.loss_signal = False
        self.timed_out = False
        self.rts_sent = False
        self.xmit = 0
        self.pace_at = 0

    @property
    def data(self):
        d = self.msg.data
        return None if d is None else d[self.offset:self.offset + self.length]


class TxMessage:
    __slots__ = ("uid", "msg_id", "seq", "size", "data", "chunked", "next_index", "base", "chunks",
                 "n_acked_bytes", "done", "subconn", "issued_at", "acked_at", "tag")

    def __init__(self, uid, size, data=None, tag=None):
        if size <= 0:
            raise ValueError("message size must be positive")
        self.uid = uid
        self.msg_id = None
        self.seq = None
        self.size = size
        self.data = None if data is None else memoryview(data)
        self.chunked = 0
        self.next_index = 0
        self.base = 0
        self.chunks = []
        self.n_acked_bytes = 0
        self.done = False
        self.subconn = None
        self.issued_at = None
        self.acked_at = None
        self.tag = tag

    @property
    def remaining(self):
        return self.size - self.chunked

    def new_chunk(self, length):
        idx = self.next_index
        ch = TxChunk(self, idx, self.chunked, length, self.chunked + length == self.size)
        self.chunks.append(ch)
        self.chunked += length
        self.next_index += 1
        return ch


class SubConnection:
    """One engine's share of a connection: its own path slice, CC and LB state."""

    def __init__(self, conn, engine, sub_id, paths, policy, scope, *, chunk_size, base_rtt, rto_min, rto_max,
                 dup_thresh=8, mode=SELECTIVE, rng=None, avoid_rtx_path=False):
        self.conn = conn
        self.engine = engine
        self.sub_id = sub_id
        self.paths = list(paths)
        self.policy = policy
        self.scope = scope
        self.chunk_size = chunk_size
        self.base_rtt = base_rtt
        self.rto_min = rto_min
        self.rto_max = rto_max
        self.dup_thresh = dup_thresh
        self.mode = mode
        self.rng = rng
        self.avoid_rtx_path = avoid_rtx_path
        self.board = PathScoreboard(self.paths, base_rtt)
        self.sendq = deque()
        self.txq = deque()  # (tx_seq, chunk) in transmission order; stale entries skipped lazily
        self.rtx = deque()
        self.inflight_bytes = 0
        self.inflight_chunks = 0
        self.tx_seq = 0
        self.srtt = 0.0
        self.rttvar = 0.0
        self.timer_at = None
        self.deficit = 0
        # counters
        self.bytes_sent = 0
        self.retx_bytes = 0
        self.retx_chunks = 0
        self.fast_rtx = 0
        self.timeouts = 0
        self.protocol_errors = 0
        self.stale_acks = 0
        self.max_inflight_per_msg = 0

    # ------------------------------------------------------------ accessors
    @property
    def now(self):
        return self.conn.host.ev.now

    @property
    def rto(self) -> float:
        if not self.srtt:
            return self.rto_min
        return min(max(self.srtt + 4 * self.rttvar, self.rto_min), self.rto_max)

    def has_work(self) -> bool:
        return bool(self.sendq or self.rtx)

    def unfinished(self) -> bool:
        return bool(self.sendq or self.rtx or self.inflight_chunks)

    def peek_size(self) -> int:
        """Bytes the next transmission would carry (0 if nothing is queued)."""
        for ch in self.rtx:
            if ch.state == LOST:
                return ch.length
        for msg in self.sendq:
            if msg.remaining:
                return min(self.chunk_size, msg.remaining)
        return 0

    # ------------------------------------------------------------------ tx
    def enqueue(self, msg):
        msg.subconn = self
        self.sendq.append(msg)

    def next_chunk(self, now, rtx_only=False):
        """Next chunk to put on the wire (retransmissions first), or None."""
        pol = self.policy
        rtx = self.rtx
        while rtx:
            ch = rtx[0]
            if ch.state != LOST:
                rtx.popleft()
                continue
            if not pol.on_tx_rtx_chunk(self, ch):
                return None
            rtx.popleft()
            return self._emit(ch, now, True)
        if rtx_only:
            return None
        sq = self.sendq
        for msg in sq:
            rem = msg.remaining
            if msg.next_index - msg.base >= MAX_WINDOW:
                if self.mode == GO_BACK_N:
                    return None  # one in-order sequence: never skip ahead
                continue
            sz = pol.on_chunk_size(self, rem)
            if sz <= 0:
                return None
            if sz > rem or sz > self.conn.max_chunk:
                raise PolicyViolation(f"on_chunk_size returned {sz} (remaining {rem}, max {self.conn.max_chunk})")
            ch = msg.new_chunk(sz)
            if msg.remaining == 0:
                sq.remove(msg)
            return self._emit(ch, now, False)
        return None

    def _emit(self, ch, now, is_rtx):
        path = self.policy.on_select_path(self, ch)
        if path not in self.board._pos:
            raise PolicyViolation(f"on_select_path returned {path}, not in {self.paths[:4]}...")
        ch.path = path
        self.tx_seq += 1
        ch.tx_seq = self.tx_seq
        ch.sent_at = INF  # set to the NIC departure time by the fabric
        ch.state = INFLIGHT
        ch.dups = 0
        ch.n_tx += 1
        ln = ch.length
        self.txq.append((ch.tx_seq, ch))
        self.inflight_bytes += ln
        self.inflight_chunks += 1
        self.scope.add_inflight(path, ln)
        self.board.on_send(path, ln, now)
        self.bytes_sent += ln
        msg = ch.msg
        span = msg.next_index - msg.base
        if span > self.max_inflight_per_msg:
            self.max_inflight_per_msg = span
        if is_rtx:
            self.retx_bytes += ln
            self.retx_chunks += 1
        if self.timer_at is None:
            self._arm_timer(now + self.rto)
        return ch

    # ----------------------------------------------------------------- ack
    def _retire(self, ch, now):
        was = ch.state
        ch.state = ACKED
        ln = ch.length
        if was == INFLIGHT:
            self.inflight_bytes -= ln
            self.inflight_chunks -= 1
            self.scope.add_inflight(ch.path, -ln)
        msg = ch.msg
        msg.n_acked_bytes += ln
        self.engine.load -= ln

    def _resolve_cum(self, msg, cum_csn):
        off = (cum_csn - msg.base) % CSN_SPACE
        if off > MAX_WINDOW or msg.base + off > msg.next_index:
            return None
        return msg.base + off

    def on_ack(self, ack, now):
        if ack.nack:
            if self.inflight_chunks:
                self.gbn_rewind(now)
            return
        msg = self.conn.inflight_msgs.get(ack.msg_id)
        if msg is None or msg.uid != ack.uid:
            self.stale_acks += 1
            return
        cum = self._resolve_cum(msg, ack.cum)
        if cum is None:
            self.protocol_errors += 1
            return
        chunks = msg.chunks
        acked_bytes = 0
        newest = -1
        for idx in range(msg.base, cum):
            ch = chunks[idx]
            if ch.state != ACKED:
                if ch.tx_seq > newest:
                    newest = ch.tx_seq
                acked_bytes += ch.length
                self._retire(ch, now)
        if ack.sack and self.mode == SELECTIVE:
            for i in ack.sacked_offsets():
                idx = cum + i
                if idx >= msg.next_index:
                    self.protocol_errors += 1
                    break
                ch = chunks[idx]
                if ch.state != ACKED:
                    if ch.tx_seq > newest:
                        newest = ch.tx_seq
                    acked_bytes += ch.length
                    self._retire(ch, now)
        if cum > msg.base:
            msg.base = cum
        while msg.base < msg.next_index and chunks[msg.base].state == ACKED:
            msg.base += 1

        rtt = now - ack.echo_ts
        if rtt > 0:
            if not self.srtt:
                self.srtt = rtt
                self.rttvar = rtt / 2
            else:
                self.rttvar += 0.25 * (abs(self.srtt - rtt) - self.rttvar)
                self.srtt += 0.125 * (rtt - self.srtt)
        ack.rtt = rtt if rtt > 0 else 0
        ack.acked_bytes = acked_bytes
        self.policy.on_rx_ack(self, ack)

        if newest >= 0 and self.mode == SELECTIVE:
            self._count_dups(newest, now)
        if msg.n_acked_bytes == msg.size and not msg.done:
            msg.done = True
            msg.acked_at = now
            msg.chunks = []
            self.conn.message_acked(msg, now)

    def _count_dups(self, newest_seq, now):
        txq = self.txq
        while txq:
            seq, ch = txq[0]
            if ch.tx_seq == seq and ch.state == INFLIGHT:
                break
            txq.popleft()
        k = self.dup_thresh
        if k == INF:
            return
        for seq, ch in txq:
            if seq >= newest_seq:
                break
            if ch.tx_seq != seq or ch.state != INFLIGHT:
                continue
            ch.dups += 1
            if ch.dups >= k:
                self.fast_rtx += 1
                self.mark_lost(ch, now)

    def mark_lost(self, ch, now, timed_out=False):
        if ch.state != INFLIGHT:
            return
        ch.state = LOST
        ch.loss_signal = True
        ch.timed_out = timed_out
        ch.rts_sent = False
        ln = ch.length
        self.inflight_bytes -= ln
        self.inflight_chunks -= 1
        self.scope.add_inflight(ch.path, -ln)
        self.rtx.append(ch)

    def on_nack(self, nack, now):
        """A trimmed header reported this chunk lost."""
        msg = self.conn.inflight_msgs.get(nack.msg_id)
        if msg is None or msg.uid != nack.uid:
            self.stale_acks += 1
            return
        off = (nack.csn - msg.base) % CSN_SPACE
        idx = msg.base + off
        if off >= MAX_WINDOW or idx >= msg.next_index:
            return
        ch = msg.chunks[idx]
        if ch.state == INFLIGHT and ch.xmit == nack.xmit:
            self.mark_lost(ch, now)
            ch.rts_sent = True  # the receiver saw the trimmed header already

    def handle_control(self, msg, now):
        if isinstance(msg, Ack):
            self.on_ack(msg, now)
        elif isinstance(msg, Nack):
            self.on_nack(msg, now)
        else:
            self.policy.on_rx_credit(self, msg)

    # ---------------------------------------------------------- go-back-N
    def gbn_rewind(self, now, timed_out=False):
        """Resend every unacknowledged transmitted chunk, in sequence order."""
        live = [ch for seq, ch in self.txq if ch.tx_seq == seq and ch.state == INFLIGHT]
        self.txq.clear()
        pending = [ch for ch in self.rtx if ch.state == LOST]
        for ch in live:
            self.mark_lost(ch, now, timed_out)
        allc = sorted({id(c): c for c in live + pending}.values(), key=lambda c: (c.msg.seq, c.index))
        self.rtx = deque(allc)

    # -------------------------------------------------------------- timers
    def _arm_timer(self, at):
        self.timer_at = at
        self.conn.host.ev.at(int(at), self._on_timer, None)

    def _on_timer(self, _):
        self.timer_at = None
        now = self.now
        fired = self.rto_check(now)
        nxt = self._next_deadline()
        if nxt is not None:
            self._arm_timer(max(nxt, now + 1))
        elif self.inflight_chunks:
            self._arm_timer(now + self.rto)  # chunks still queued in the NIC
        extra = self.policy.on_timer(self, now) if hasattr(self.policy, "on_timer") else None
        if extra is not None and self.timer_at is None:
            self._arm_timer(extra)
        if fired or self.has_work():
            self.conn.host.kick(now)

    def _deadline(self, ch):
        return ch.sent_at + min(self.rto * (1 << ch.timeouts), self.rto_max)

    def _next_deadline(self):
        best = None
        for seq, ch in self.txq:
            if ch.tx_seq != seq or ch.state != INFLIGHT:
                continue
            d = self._deadline(ch)
            if d == INF:
                break
            if best is None or d < best:
                best = d
            if ch.sent_at + self.rto > best:
                break
        return best

    def rto_check(self, now) -> list:
        """Mark chunks whose retransmission timer expired as lost. Returns them."""
        base_rto = self.rto
        expired = []
        for seq, ch in self.txq:
            if ch.tx_seq != seq or ch.state != INFLIGHT:
                continue
            if ch.sent_at + base_rto > now:
                break
            if self._deadline(ch) <= now:
                expired.append(ch)
        if not expired:
            return expired
        self.timeouts += 1
        if self.mode == GO_BACK_N:
            for ch in expired:
                ch.timeouts += 1
            self.gbn_rewind(now, timed_out=True)
            return expired
        for ch in expired:
            ch.timeouts += 1
            self.mark_lost(ch, now, timed_out=True)
        return expired

    def backoff_of(self, ch) -> float:
        return min(self.rto * (1 << ch.timeouts), self.rto_max)


def rto_value(srtt: float, rttvar: float, rto_min: float, rto_max: float) -> float:
    """clamp(srtt + 4 * rttvar, rto_min, rto_max)."""
    return min(max(srtt + 4 * rttvar, rto_min), rto_max)

