"""Receiver-driven congestion control: a per-receiver credit pacer.

Senders announce demand with a REQUEST. The receiver's pacer hands out one
credit quantum per tick, where a tick is the time the receiver's link needs to
carry one quantum of data, so granted traffic never exceeds line rate. Senders
sit in one of three lists: ``rtx`` (owed a retransmission, served first),
``active`` (credit demand outstanding, round-robin) and ``idle``.

Losses reach the pacer either as trimmed headers (trim-capable fabric) or as
RTS messages sent by a sender whose retransmission timer fired.
"""
from __future__ import annotations

import math
from collections import deque

from . import lb as lbmod
from .transport.policy import TransportPolicy
from .wire import pack_fields

# opcodes carried in the control word's reserved byte
OP_CREDIT = 0x01
OP_RTS = 0x02
OP_REQUEST = 0x03

RTX, ACTIVE, IDLE = "rtx", "active", "idle"
DEFAULT_BANK_QUANTA = 4


class CreditMsg:
    __slots__ = ("conn_id", "rx_host", "tx_host", "credit", "word")

    def __init__(self, conn_id, rx_host, tx_host, credit):
        self.conn_id = conn_id
        self.rx_host = rx_host
        self.tx_host = tx_host
        self.credit = credit
        self.word = pack_fields(conn_id, 0, 0, False, OP_CREDIT)


class RequestMsg:
    """Sender -> receiver demand announcement (``chunks`` needing credit)."""
    __slots__ = ("conn_id", "tx_host", "chunks", "unsolicited", "word")

    def __init__(self, conn_id, tx_host, chunks, unsolicited=0):
        self.conn_id = conn_id
        self.tx_host = tx_host
        self.chunks = chunks
        self.unsolicited = unsolicited
        self.word = pack_fields(conn_id, 0, 0, False, OP_REQUEST)


class RtsMsg:
    """Request-to-send. ``lost``: chunks lost without a trimmed header; ``pending``: uncredited demand."""
    __slots__ = ("conn_id", "tx_host", "lost", "pending", "word")

    def __init__(self, conn_id, tx_host, lost=0, pending=0):
        self.conn_id = conn_id
        self.tx_host = tx_host
        self.lost = lost
        self.pending = pending
        self.word = pack_fields(conn_id, 0, 0, False, OP_RTS)


# ------------------------------------------------------------------ receiver
class SenderEntry:
    __slots__ = ("key", "to_credit", "rtx_need", "demand", "granted", "where")

    def __init__(self, key):
        self.key = key
        self.to_credit = 0
        self.rtx_need = 0
        self.demand = 0
        self.granted = 0
        self.where = IDLE


class PacerState:
    """Per-receiver pacer lists; ``pacer_tick`` chooses who gets the next quantum."""

    def __init__(self, quantum: int, tick_interval: int):
        if quantum <= 0 or tick_interval <= 0:
            raise ValueError("quantum and tick interval must be positive")
        self.quantum = quantum
        self.tick_interval = tick_interval
        self.senders = {}
        self.lists = {RTX: deque(), ACTIVE: deque(), IDLE: deque()}
        self.credits_issued = 0

    def entry(self, key) -> SenderEntry:
        e = self.senders.get(key)
        if e is None:
            e = self.senders[key] = SenderEntry(key)
            self.lists[IDLE].append(key)
        return e

    def _move(self, e, where):
        if e.where == where:
            return
        self.lists[e.where].remove(e.key)
        self.lists[where].append(e.key)
        e.where = where

    def classify(self, e):
        """Put ``e`` in the list its needs dictate."""
        if e.rtx_need > 0:
            self._move(e, RTX)
        elif e.to_credit > 0:
            self._move(e, ACTIVE)
        else:
            self._move(e, IDLE)

    def busy(self) -> bool:
        return bool(self.lists[RTX] or self.lists[ACTIVE])

    def check_partition(self):
        seen = {}
        for name, lst in self.lists.items():
            for k in lst:
                if k in seen:
                    raise AssertionError(f"sender {k} in both {seen[k]} and {name}")
                seen[k] = name
                if self.senders[k].where != name:
                    raise AssertionError(f"sender {k} list mismatch")
        if set(seen) != set(self.senders):
            raise AssertionError("sender missing from every list")


def pacer_tick(state: PacerState, now=None):
    """Grant one quantum: rtx head first, then active round-robin. Returns (sender key, bytes) or None."""
    rtx, active = state.lists[RTX], state.lists[ACTIVE]
    if rtx:
        key = rtx[0]
        e = state.senders[key]
        e.rtx_need -= 1
        rtx.rotate(-1)
    elif active:
        key = active[0]
        e = state.senders[key]
        e.to_credit -= 1
        active.rotate(-1)
    else:
        return None
    e.granted += state.quantum
    state.credits_issued += 1
    state.classify(e)
    return key, state.quantum


def on_request(state: PacerState, key, chunks: int, unsolicited: int = 0):
    e = state.entry(key)
    e.to_credit += chunks
    e.demand += chunks + unsolicited
    state.classify(e)


def on_data_or_trim(state: PacerState, key, trimmed: bool, now=None):
    """A complete chunk retires demand; a trimmed header earns the sender a retransmission credit."""
    e = state.entry(key)
    if trimmed:
        e.rtx_need += 1
    elif e.demand > 0:
        e.demand -= 1
    state.classify(e)


def on_rts(state: PacerState, key, lost: int = 0, pending: int = 0):
    e = state.entry(key)
    e.rtx_need += lost
    if pending > e.to_credit:
        e.to_credit = pending  # resync: the sender is owed more than we know of
    if lost == 0 and pending > 0:
        e.rtx_need += 1  # jump the queue once to break a starvation
        e.to_credit -= 1
    state.classify(e)


def quantum_wire_time(quantum: int, mtu_payload: int, header_bytes: int, rate_bps: float) -> int:
    """Serialization time (ns) of one quantum's packets, headers included."""
    n, rem = divmod(quantum, mtu_payload)
    wire = n * (mtu_payload + header_bytes) + (rem + header_bytes if rem else 0)
    return int(math.ceil(wire * 8e9 / rate_bps))


class Pacer:
    """Event-driven wrapper: ticks only while some sender is owed credit."""

    def __init__(self, host, state: PacerState):
        self.host = host
        self.state = state
        self.next_tick = 0
        self.armed = False

    def wake(self):
        if self.armed or not self.state.busy():
            return
        now = self.host.ev.now
        self.armed = True
        self.host.ev.at(max(now, self.next_tick), self._tick, None)

    def _tick(self, _):
        self.armed = False
        now = self.host.ev.now
        got = pacer_tick(self.state, now)
        if got is None:
            return
        self.next_tick = now + self.state.tick_interval
        (src, conn_id), credit = got
        h = self.host
        h.fabric.send_control(CreditMsg(conn_id, h.host_id, src, credit), h.host_id, src, 0)
        self.wake()


# -------------------------------------------------------------------- sender
class EqdsSender:
    __slots__ = ("bank", "unsolicited", "requested", "credits_rx", "credit_bytes", "sent_credited",
                 "sent_unsolicited", "last_credit_at", "rts_lost", "rts_starve", "bank_expired", "owed", "timer")

    def __init__(self):
        self.bank = 0
        self.unsolicited = 0  # chunks we may send without credit
        self.requested = 0  # chunks announced and not yet covered by credit
        self.credits_rx = 0
        self.credit_bytes = 0
        self.sent_credited = 0
        self.sent_unsolicited = 0
        self.last_credit_at = 0
        self.rts_lost = 0
        self.rts_starve = 0
        self.bank_expired = 0
        self.owed = False  # credit expired since the last resync
        self.timer = False


class EqdsPolicy(TransportPolicy):
    """Credit-gated transmission plus the receiver-side pacer for this host."""

    name = "eqds"
    receiver_driven = True

    def __init__(self, host, quantum=None, unsolicited_bytes=None, bank_quanta=DEFAULT_BANK_QUANTA,
                 starvation_rts=True, notify_latency_ns=0, lb="rtt",
                 dup_ack_rtx=False):
        if lb not in lbmod.POLICIES:
            raise ValueError(f"unknown lb policy {lb!r}")
        self.host = host
        self.lb = lb
        self.dup_ack_rtx = dup_ack_rtx
        self.quantum = quantum
        self.unsolicited_bytes = unsolicited_bytes
        self.bank_quanta = bank_quanta
        self.starvation_rts = starvation_rts
        self.notify_latency_ns = notify_latency_ns
        self.pacer = None

    def _pacer(self, quantum):
        if self.pacer is None:
            h = self.host
            tick = quantum_wire_time(quantum, h.mtu_payload, h.header_bytes, h.line_rate)
            self.pacer = Pacer(h, PacerState(quantum, tick))
        return self.pacer

    # ----------------------------------------------------------- sender side
    def on_connect(self, conn):
        conn.eq = EqdsSender()
        if not self.dup_ack_rtx:
            # losses surface as trimmed headers or timeouts; spray reordering
            # would otherwise burn credit on spurious retransmissions
            for sc in conn.subconns:
                sc.dup_thresh = math.inf
        if self.quantum is None:
            self.quantum = conn.cfg.chunk_size

    def _charge(self, nbytes):
        q = self.quantum
        return -(-nbytes // q) * q

    def on_enqueue(self, conn, msg):
        st = conn.eq
        chunk = conn.cfg.chunk_size
        n = -(-msg.size // chunk)
        unsol = 0
        if len(conn.inflight_msgs) == 1 and not any(sc.unfinished() for sc in conn.subconns):
            budget = self.unsolicited_bytes if self.unsolicited_bytes is not None else self.host.bdp
            unsol = min(n, max(1, budget // chunk)) if budget > 0 else 0
            unsol = max(0, unsol - st.unsolicited)
        st.unsolicited += unsol
        need = n - unsol
        st.requested += need
        self._send_to_rx(conn, RequestMsg(conn.conn_id, self.host.host_id, need, unsol))
        self._arm_starvation(conn)

    def _send_to_rx(self, conn, msg):
        h = self.host
        lat = self.notify_latency_ns
        if lat:
            h.ev.after(lat, lambda m: h.fabric.send_control(m, h.host_id, conn.dst, 0), msg)
        else:
            h.fabric.send_control(msg, h.host_id, conn.dst, 0)

    def on_chunk_size(self, sc, remaining_bytes):
        st = sc.conn.eq
        size = min(sc.chunk_size, remaining_bytes)
        if st.unsolicited > 0:
            st.unsolicited -= 1
            st.sent_unsolicited += size
            return size
        charge = self._charge(size)
        if st.bank >= charge:
            st.bank -= charge
            st.requested -= charge // self.quantum
            st.sent_credited += size
            return size
        return 0

    def on_select_path(self, sc, chunk):
        cands = sc.paths
        if sc.avoid_rtx_path and chunk.n_tx and len(cands) > 1:
            cands = [p for p in cands if p != chunk.path] or cands
        return lbmod.choose_path(self.lb, sc.board, sc.rng, cands)

    def on_rx_ack(self, sc, ack):
        if ack.rtt > 0:
            lbmod.record_sample(sc.board, ack.path_id, ack.rtt, ack.ecn, ack.acked_bytes)

    def on_tx_rtx_chunk(self, sc, chunk):
        st = sc.conn.eq
        charge = self._charge(chunk.length)
        if not chunk.rts_sent:
            # the receiver saw no trimmed header for this loss: ask for the
            # credit even if the bank can cover it now, so that whatever the
            # bank was holding credit for is not starved later
            chunk.rts_sent = True
            self.on_sender_timeout(sc.conn, lost=charge // self.quantum)
        if st.bank >= charge:
            st.bank -= charge
            st.sent_credited += chunk.length
            chunk.loss_signal = False
            return True
        return False

    def on_sender_timeout(self, conn, lost=0, pending=0):
        """Ask the receiver for retransmission credit (no trimmed header reached it)."""
        st = conn.eq
        if lost:
            st.rts_lost += 1
        else:
            st.rts_starve += 1
        self._send_to_rx(conn, RtsMsg(conn.conn_id, self.host.host_id, lost, pending))

    def on_rx_credit(self, sc, credit):
        st = sc.conn.eq
        st.credits_rx += 1
        st.credit_bytes += credit.credit
        st.last_credit_at = self.host.ev.now
        cap = self.bank_quanta * self.quantum
        st.bank += credit.credit
        if st.bank > cap:
            st.bank_expired += st.bank - cap
            st.bank = cap
            st.owed = True

    def _arm_starvation(self, conn):
        st = conn.eq
        if not self.starvation_rts or st.timer:
            return
        st.timer = True
        rto = conn.subconns[0].rto
        self.host.ev.after(int(rto), self._starvation_check, conn)

    def _starvation_check(self, conn):
        st = conn.eq
        st.timer = False
        if st.requested <= 0 and not any(sc.unfinished() for sc in conn.subconns):
            return
        now = self.host.ev.now
        rto = conn.subconns[0].rto
        # lost chunks blocked on credit: a timeout retransmission may have spent
        # credit the receiver granted for something else
        blocked = sum(len(sc.rtx) for sc in conn.subconns)
        waiting = (st.requested > 0 or blocked) and st.bank < self.quantum
        # expired credit means the receiver under-counts our demand: resync
        # after one quiet RTO instead of waiting out a full starvation period
        limit = rto if st.owed else rto * 8
        if waiting and now - st.last_credit_at > limit:
            self.on_sender_timeout(conn, lost=blocked, pending=st.requested)
            st.last_credit_at = now
            st.owed = False
        self._arm_starvation(conn)

    # --------------------------------------------------------- receiver side
    def _rx_key(self, rx):
        return (rx.src, rx.conn_id)

    def on_rx_chunk(self, rx, hdr):
        p = self._pacer(self._rx_quantum(rx))
        on_data_or_trim(p.state, self._rx_key(rx), False)

    def on_rx_rtx_chunk(self, rx, hdr):
        self.on_rx_chunk(rx, hdr)

    def on_rx_trim(self, rx, hdr):
        p = self._pacer(self._rx_quantum(rx))
        on_data_or_trim(p.state, self._rx_key(rx), True)
        p.wake()

    def _rx_quantum(self, rx):
        return self.quantum or self.host.fabric.hosts[rx.src].conns_by_id[rx.conn_id].cfg.chunk_size

    def on_control(self, host, msg, now):
        if isinstance(msg, CreditMsg):
            conn = host.conns_by_id[msg.conn_id]
            self.on_rx_credit(conn.subconns[0], msg)
            host.kick(now)
            return
        q = self.quantum or host.fabric.hosts[msg.tx_host].conns_by_id[msg.conn_id].cfg.chunk_size
        p = self._pacer(q)
        key = (msg.tx_host, msg.conn_id)
        if isinstance(msg, RequestMsg):
            on_request(p.state, key, msg.chunks, msg.unsolicited)
        elif isinstance(msg, RtsMsg):
            on_rts(p.state, key, msg.lost, msg.pending)
        else:
            raise TypeError(f"unexpected control message {type(msg).__name__}")
        p.wake()
