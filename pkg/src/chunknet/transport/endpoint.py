"""Hosts: NIC feeding, packetization, chunk assembly and the receive state machines."""
from __future__ import annotations

from ..simnet.fabric import Packet
from ..wire import CONN_SHIFT, CSN_MAX, CSN_SHIFT, CSN_SPACE, LAST_SHIFT, MAX_WINDOW, MSG_MAX, MSG_SHIFT, RSVD_MAX
from .connection import Connection, TransportConfig
from .engine import Engine
from .framing import Ack, Nack, RxMessage, segment
from .subconn import GO_BACK_N

RETX_FLAG = 0x01  # reserved-byte bit on data packets: retransmitted chunk


class RxConnection:
    """Receiver side of one connection (keyed by sender host and conn id)."""

    def __init__(self, host, src, conn_id, mode, policy, with_data=False):
        self.host = host
        self.src = src
        self.conn_id = conn_id
        self.mode = mode
        self.policy = policy
        self.with_data = with_data
        self.msgs = {}
        self.delivered = 0
        self.dups = 0
        self.out_of_window = 0
        self.stale = 0
        self.gbn_drops = 0
        self.naks = 0
        self.trimmed = 0
        self.chunks_rx = 0
        self.max_cum_seen = {}
        # go-back-N expectations: (message uid, chunk index)
        self.exp_uid = 0
        self.exp_idx = 0
        self.exp_msg = None
        self._nak_for = None
        self._trimmed_xmits = set()

    @property
    def now(self):
        return self.host.ev.now

    def _ack(self, msg_id, uid, cum, sack, ts, path_id, ecn, csn, nack=False):
        h = self.host
        ack = Ack(self.conn_id, msg_id, uid, cum, sack, ts, path_id, ecn, csn, h.host_id, self.src, nack)
        h.fabric.send_control(ack, h.host_id, self.src, path_id)

    def on_chunk(self, hdr, offset, length, ecn, ts, path_id, uid, pieces):
        msg_id = (hdr >> MSG_SHIFT) & MSG_MAX
        csn = (hdr >> CSN_SHIFT) & CSN_MAX
        last = bool((hdr >> LAST_SHIFT) & 1)
        self.chunks_rx += 1
        if self.mode == GO_BACK_N:
            self._on_chunk_gbn(hdr, msg_id, csn, last, offset, length, ecn, ts, path_id, uid, pieces)
            return
        rm = self.msgs.get(msg_id)
        if rm is None or rm.uid != uid:
            if rm is not None and uid < rm.uid:
                self.stale += 1
                return
            rm = RxMessage(msg_id, uid, self.with_data)
            rm.first_ts = self.now
            self.msgs[msg_id] = rm
        if rm.done:
            self.dups += 1
            self.policy.on_rx_rtx_chunk(self, hdr)
            self._ack(msg_id, uid, rm.cum_csn, 0, ts, path_id, ecn, csn)
            return
        status, idx = rm.accept(csn, last, offset, length)
        if status == "out_of_window":
            self.out_of_window += 1
            return
        if pieces is not None and idx is not None:
            rm.write_chunk(idx, pieces)
        if status == "new":
            if hdr & RETX_FLAG:
                self.policy.on_rx_rtx_chunk(self, hdr)
            else:
                self.policy.on_rx_chunk(self, hdr)
        else:
            self.dups += 1
            self.policy.on_rx_rtx_chunk(self, hdr)
        prev = self.max_cum_seen.get(msg_id)
        if prev is not None and prev[0] == uid and rm.expected < prev[1]:
            raise AssertionError("cumulative ack regressed")
        self.max_cum_seen[msg_id] = (uid, rm.expected)
        self._ack(msg_id, uid, rm.cum_csn, rm.sack_bitmap(), ts, path_id, ecn, csn)
        if status == "new" and rm.done:
            rm.done_ts = self.now
            self.delivered += 1
            self.host.deliver(self, rm)

    def _on_chunk_gbn(self, hdr, msg_id, csn, last, offset, length, ecn, ts, path_id, uid, pieces):
        if uid < self.exp_uid or (uid == self.exp_uid and (csn - self.exp_idx) % CSN_SPACE >= MAX_WINDOW):
            # behind the expected point: already delivered, re-acknowledge
            self.dups += 1
            self._ack(msg_id, uid, (csn + 1) % CSN_SPACE, 0, ts, path_id, ecn, csn)
            return
        if uid != self.exp_uid or csn != self.exp_idx % CSN_SPACE:
            self.gbn_drops += 1
            key = (self.exp_uid, self.exp_idx)
            if self._nak_for != key:
                self._nak_for = key
                self.naks += 1
                self._ack(msg_id, uid, self.exp_idx % CSN_SPACE, 0, ts, path_id, ecn, csn, nack=True)
            return
        rm = self.exp_msg
        if rm is None:
            rm = self.exp_msg = RxMessage(msg_id, uid, self.with_data)
            rm.first_ts = self.now
        rm.accept(csn, last, offset, length)
        if pieces is not None:
            rm.write_chunk(self.exp_idx, pieces)
        self.policy.on_rx_chunk(self, hdr)
        self.exp_idx += 1
        self._ack(msg_id, uid, self.exp_idx % CSN_SPACE, 0, ts, path_id, ecn, csn)
        if last:
            rm.done_ts = self.now
            self.delivered += 1
            self.exp_uid += 1
            self.exp_idx = 0
            self.exp_msg = None
            self.host.deliver(self, rm)

    def on_trim(self, pkt):
        if pkt.xmit in self._trimmed_xmits:
            return
        if len(self._trimmed_xmits) > 4096:
            self._trimmed_xmits.clear()
        self._trimmed_xmits.add(pkt.xmit)
        self.trimmed += 1
        hdr = pkt.hdr
        h = self.host
        nack = Nack(self.conn_id, (hdr >> MSG_SHIFT) & MSG_MAX, pkt.uid, (hdr >> CSN_SHIFT) & CSN_MAX,
                    pkt.path_id, h.host_id, self.src, pkt.xmit)
        h.fabric.send_control(nack, h.host_id, self.src, pkt.path_id)
        on_trim = getattr(self.policy, "on_rx_trim", None)
        if on_trim is not None:
            on_trim(self, hdr)


class Host:
    """A NIC endpoint: engines and connections on the send side, reassembly on the receive side.

    The NIC queue is filled on demand: whenever its backlog drops under
    ``low_watermark`` bytes the engines are polled (round-robin) for chunks.
    """

    def __init__(self, host_id, fabric, policy_factory, *, n_engines=1, quantum=32 * 1024, seed=0,
                 with_data=False, low_watermark=None):
        self.host_id = host_id
        self.fabric = fabric
        self.ev = fabric.ev
        self.seed = seed
        self.mtu = fabric.mtu
        self.header_bytes = fabric.header_bytes
        self.mtu_payload = fabric.mtu - fabric.header_bytes
        topo = fabric.topo
        self.base_rtt = topo.base_rtt_ns(fabric.mtu, fabric.header_bytes)
        self.bdp = topo.bdp_bytes(fabric.mtu)
        self.line_rate = fabric.nic(host_id).rate
        self.engines = [Engine(e, quantum) for e in range(n_engines)]
        self.policy = policy_factory(self)
        self.with_data = with_data
        self.nic = fabric.nic(host_id)
        self.low = low_watermark if low_watermark is not None else 2 * self.mtu
        self.conns = {}  # dst -> Connection
        self.conns_by_id = {}
        self.rx = {}  # (src, conn_id) -> RxConnection
        self.partial = {}  # (src, xmit) -> [count, bytes, ecn, ts, offset, pieces]
        self.xmit = 0
        self._rr = 0
        self._kicking = False
        self._pace_at = None
        self._seg_cache = {}
        self.on_deliver = None  # fn(host, rxconn, rxmsg)
        self.on_acked = None  # fn(host, conn, txmsg, now)
        self.chunks_tx = 0
        fabric.attach(host_id, self)

    # -------------------------------------------------------------- connections
    def connect(self, dst, cfg: TransportConfig) -> Connection:
        if dst in self.conns:
            return self.conns[dst]
        cid = len(self.conns)
        if cid > 255:
            raise ValueError("at most 256 connections per host")
        conn = Connection(self, dst, cid, cfg, self.policy)
        self.conns[dst] = conn
        self.conns_by_id[cid] = conn
        return conn

    def on_message_acked(self, conn, msg, now):
        if self.on_acked is not None:
            self.on_acked(self, conn, msg, now)

    def deliver(self, rx, rm):
        if self.on_deliver is not None:
            self.on_deliver(self, rx, rm)

    # --------------------------------------------------------------- transmit
    def kick(self, now=None):
        """Feed the NIC while its backlog is under the low watermark."""
        if self._kicking:
            return
        now = self.ev.now if now is None else now
        self._kicking = True
        nic, low = self.nic, self.low
        try:
            while nic.backlog(now) < low:
                got = self._next_tx(now)
                if got is None:
                    break
                self._transmit(got[0], got[1], now)
            else:
                nic.request_wakeup(low, self.kick, now)
        finally:
            self._kicking = False
        self._arm_pacer(now)

    def _arm_pacer(self, now):
        nxt = None
        for eng in self.engines:
            t = eng.next_release()
            if t is not None and (nxt is None or t < nxt):
                nxt = t
        if nxt is not None and (self._pace_at is None or nxt < self._pace_at):
            self._pace_at = max(nxt, now)
            self.ev.at(self._pace_at, self._pace_fire, None)

    def _pace_fire(self, _):
        self._pace_at = None
        self.kick(self.ev.now)

    def _next_tx(self, now):
        engines = self.engines
        n = len(engines)
        for i in range(n):
            e = (self._rr + i) % n
            eng = engines[e]
            r = eng.drr_tick(now)
            while r is not None and r[0] not in ("tx", "pace"):
                r = eng.drr_tick(now)
            if r is not None:
                self._rr = e + 1
                return r[1]
        return None

    def _segments(self, length):
        s = self._seg_cache.get(length)
        if s is None:
            s = self._seg_cache[length] = segment(length, self.mtu_payload)
        return s

    def _transmit(self, sc, ch, now):
        conn = sc.conn
        msg = ch.msg
        self.xmit += 1
        xmit = ch.xmit = self.xmit
        self.chunks_tx += 1
        reserved = self.policy.data_reserved(sc, ch) & RSVD_MAX
        if ch.n_tx > 1:
            reserved |= RETX_FLAG
        hdr = ((conn.conn_id << CONN_SHIFT) | (msg.msg_id << MSG_SHIFT) | (ch.csn << CSN_SHIFT)
               | (int(ch.last) << LAST_SHIFT) | reserved)
        sizes = self._segments(ch.length)
        n = len(sizes)
        off = ch.offset
        view = msg.data
        send = self.fabric.send
        src, dst, path, hb, uid = self.host_id, conn.dst, ch.path, self.header_bytes, msg.uid
        for i, sz in enumerate(sizes):
            data = None if view is None else bytes(view[off:off + sz])
            pkt = Packet(src, dst, path, hdr, sz, i, n, xmit, off, data, uid, hb)
            if i == n - 1:
                pkt.txc = ch  # retransmission timer runs from the send completion
            send(pkt, now)
            off += sz

    # ---------------------------------------------------------------- receive
    def on_packet(self, pkt):
        if pkt.trimmed:
            self._rx_conn(pkt.src, pkt.hdr).on_trim(pkt)
            return
        n = pkt.n_in_chunk
        data = pkt.data
        if n == 1:
            self._rx_conn(pkt.src, pkt.hdr).on_chunk(
                pkt.hdr, pkt.offset, pkt.payload_len, pkt.ecn, pkt.tx_ts, pkt.path_id, pkt.uid,
                None if data is None else [(pkt.offset, data)])
            return
        key = (pkt.src, pkt.xmit)
        e = self.partial.get(key)
        if e is None:
            e = self.partial[key] = [0, 0, False, 0, pkt.offset, None if data is None else []]
        e[0] += 1
        e[1] += pkt.payload_len
        if pkt.ecn:
            e[2] = True
        if pkt.tx_ts > e[3]:
            e[3] = pkt.tx_ts
        if pkt.offset < e[4]:
            e[4] = pkt.offset
        if data is not None:
            e[5].append((pkt.offset, data))
        if e[0] == n:
            del self.partial[key]
            self._rx_conn(pkt.src, pkt.hdr).on_chunk(pkt.hdr, e[4], e[1], e[2], e[3], pkt.path_id, pkt.uid, e[5])

    def _rx_conn(self, src, hdr):
        cid = hdr >> CONN_SHIFT
        key = (src, cid)
        rx = self.rx.get(key)
        if rx is None:
            sender = self.fabric.hosts[src]
            mode = sender.conns_by_id[cid].cfg.mode  # connections exist from t=0 on both ends
            rx = self.rx[key] = RxConnection(self, src, cid, mode, self.policy, self.with_data)
        return rx

    def on_control(self, msg):
        now = self.ev.now
        if isinstance(msg, (Ack, Nack)):
            conn = self.conns_by_id[msg.conn_id]
            sc = conn.owner[msg.path_id]
            eng = sc.engine
            eng.ack_q.append((sc, msg))
            eng.poll_rx(now)
            self.kick(now)
        else:
            self.policy.on_control(self, msg, now)

    # ------------------------------------------------------------------ state
    def unfinished(self) -> bool:
        return any(c.unfinished for c in self.conns.values())

