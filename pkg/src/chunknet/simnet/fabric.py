"""Runtime network: links with queues, ECN, trimming, pause, loss injection.

Data links in ``drop_tail`` and ``trim`` mode are FIFO with a single server, so
a packet's departure time is known at enqueue; the link keeps only the time it
frees up and the backlog in bytes follows from it. ``pause`` mode needs
explicit queues because a paused transmitter delays packets already queued.

Control traffic (ACK, NACK, credit, RTS, trimmed headers) rides a strict
priority class and is delivered after the unloaded per-hop latency; it does not
consume data-queue capacity and is never dropped.
"""
from __future__ import annotations

import math
import random
from collections import deque

from ..wire import CSN_MAX, CSN_SHIFT
from .events import EventQueue, SimulationError
from .topology import LinkSpec, Topology

DROP_TAIL, TRIM, PAUSE = "drop_tail", "trim", "pause"
MODES = (DROP_TAIL, TRIM, PAUSE)

HEADER_BYTES = 64
TRIM_QUEUE_PKTS = 16
MIN_DROP_RATIO = 1.0 / (1 << 24)

# enqueue outcomes
ACCEPTED, MARKED, TRIMMED, DROPPED, PAUSED_UPSTREAM = "accepted", "marked", "trimmed", "dropped", "paused-upstream"


def stream_rng(seed, name: str) -> random.Random:
    """Independent named RNG stream; changing one stream never perturbs another."""
    return random.Random(f"{seed}:{name}")


class Packet:
    __slots__ = (
        "src", "dst", "path_id", "hdr", "payload_len", "wire_len", "seq_in_chunk", "n_in_chunk",
        "ecn", "trimmed", "route", "hop", "tx_ts", "xmit", "offset", "data", "uid", "up", "txc",
    )

    def __init__(self, src, dst, path_id, hdr, payload_len, seq_in_chunk=0, n_in_chunk=1,
                 xmit=0, offset=0, data=None, uid=0, header_bytes=HEADER_BYTES):
        self.src = src
        self.dst = dst
        self.path_id = path_id
        self.hdr = hdr
        self.payload_len = payload_len
        self.wire_len = payload_len + header_bytes
        self.seq_in_chunk = seq_in_chunk
        self.n_in_chunk = n_in_chunk
        self.ecn = False
        self.trimmed = False
        self.route = None
        self.hop = 0
        self.tx_ts = 0
        self.xmit = xmit
        self.offset = offset
        self.data = data
        self.uid = uid
        self.up = None
        self.txc = None  # sender-side completion hook: object whose ``sent_at`` is set on NIC departure

    @property
    def flow_key(self):
        return (self.src, self.dst, self.path_id)

    @property
    def csn(self):
        return (self.hdr >> CSN_SHIFT) & CSN_MAX


class Link:
    """FIFO drop-tail / trimming link with analytic departure times."""

    def __init__(self, fabric, u, v, spec, mode, ecn_frac, infinite=False):
        self.fabric = fabric
        self.u, self.v = u, v
        self.name = f"{u}->{v}"
        self.rate = spec.rate_bps
        self.prop = int(spec.delay_ns)
        self.cap = math.inf if infinite else spec.qcap_bytes
        self.ecn_thr = math.inf if infinite else ecn_frac * spec.qcap_bytes
        self.mode = mode
        self.bytes_per_ns = spec.rate_bps / 8e9
        self._ser = {}
        self.free_at = 0
        self.hdr_free_at = 0
        self.drop_ratio = 0.0
        self.rng = None
        self.max_occ = 0.0
        self.n_enq = 0
        self.n_marked = 0
        self.n_dropped = 0
        self.n_trimmed = 0
        self.n_lost = 0
        self._wake_pending = False

    def ser(self, nbytes: int) -> int:
        t = self._ser.get(nbytes)
        if t is None:
            t = self._ser[nbytes] = int(math.ceil(nbytes / self.bytes_per_ns))
        return t

    def backlog(self, now: int) -> float:
        f = self.free_at
        return (f - now) * self.bytes_per_ns if f > now else 0.0

    @property
    def occupancy(self):
        return self.backlog(self.fabric.ev.now)

    def _lose(self, pkt) -> bool:
        if self.drop_ratio and pkt.payload_len and self.rng.random() < self.drop_ratio:
            self.n_lost += 1
            if pkt.hop == 0 and pkt.txc is not None:
                pkt.txc.sent_at = self.fabric.ev.now  # lost leaving the NIC: the timer still runs
            self.fabric._drop(pkt, self, "loss")
            return True
        return False

    def accept(self, pkt, now):
        if self.drop_ratio and self._lose(pkt):
            return DROPPED
        f = self.free_at
        backlog = (f - now) * self.bytes_per_ns if f > now else 0.0
        wl = pkt.wire_len
        if backlog + wl > self.cap:
            if self.mode == TRIM and pkt.payload_len:
                return self._trim(pkt, now)
            self.n_dropped += 1
            self.fabric._drop(pkt, self, "drop")
            return DROPPED
        out = ACCEPTED
        if backlog > self.ecn_thr:
            pkt.ecn = True
            self.n_marked += 1
            out = MARKED
        occ = backlog + wl
        if occ > self.max_occ:
            self.max_occ = occ
        start = f if f > now else now
        done = start + self.ser(wl)
        self.free_at = done
        self.n_enq += 1
        if pkt.hop == 0:
            pkt.tx_ts = start
            if pkt.txc is not None:
                pkt.txc.sent_at = done
        pkt.hop += 1
        fab = self.fabric
        fab.on_wire += 1
        fab.ev.at(done + self.prop, fab._hop, pkt)
        return out

    def _trim(self, pkt, now):
        fab = self.fabric
        ser_h = self.ser(fab.header_bytes)
        hf = self.hdr_free_at
        if hf > now and (hf - now) >= TRIM_QUEUE_PKTS * ser_h:
            self.n_dropped += 1
            fab._drop(pkt, self, "drop")
            return DROPPED
        self.n_trimmed += 1
        fab.trimmed_payload_bytes += pkt.payload_len
        pkt.trimmed = True
        pkt.payload_len = 0
        pkt.data = None
        pkt.wire_len = fab.header_bytes
        start = hf if hf > now else now
        self.hdr_free_at = start + ser_h
        # remaining hops at unloaded priority latency
        rest = pkt.route[pkt.hop:]
        lat = self.hdr_free_at - now + self.prop
        for ln in rest[1:]:
            lat += ln.ser(fab.header_bytes) + ln.prop
        pkt.hop = len(pkt.route)
        fab.on_wire += 1
        fab.ev.at(now + lat, fab._hop, pkt)
        return TRIMMED

    def request_wakeup(self, below_bytes, fn, now):
        """Call ``fn(now)`` once the backlog has drained below ``below_bytes``."""
        if self._wake_pending:
            return
        t = self.free_at - below_bytes / self.bytes_per_ns
        t = max(now + 1, int(math.ceil(t)))
        self._wake_pending = True
        self.fabric.ev.at(t, self._wake, fn)

    def _wake(self, fn):
        self._wake_pending = False
        fn(self.fabric.ev.now)


class PauseLink(Link):
    """Explicit-queue link for the lossless (hop-by-hop pause) fabric."""

    def __init__(self, fabric, u, v, spec, ecn_frac, xoff, xon, infinite=False):
        super().__init__(fabric, u, v, spec, PAUSE, ecn_frac, infinite)
        self.queue = deque()
        self.occ = 0
        self.busy = False
        self.paused_by = set()
        self.paused_upstream = set()
        self.ingress = {}
        self.xoff = math.inf if infinite else xoff
        self.xon = math.inf if infinite else xon
        self.paused_ns = 0
        self._paused_since = None
        self._waiter = None
        self._wake_below = 0

    def backlog(self, now):
        return float(self.occ)

    def accept(self, pkt, now):
        if self.drop_ratio and self._lose(pkt):
            return DROPPED
        wl = pkt.wire_len
        if self.occ + wl > self.cap:
            self.n_dropped += 1
            self.fabric._drop(pkt, self, "drop")
            return DROPPED
        out = ACCEPTED
        if self.occ > self.ecn_thr:
            pkt.ecn = True
            self.n_marked += 1
            out = MARKED
        self.queue.append(pkt)
        self.occ += wl
        if self.occ > self.max_occ:
            self.max_occ = self.occ
        self.n_enq += 1
        up = pkt.route[pkt.hop - 1] if pkt.hop > 0 else None
        pkt.up = up
        if up is not None:
            self.ingress[up] = self.ingress.get(up, 0) + wl
        if self.occ > self.xoff:
            for ln, b in self.ingress.items():
                if b > 0 and ln not in self.paused_upstream:
                    self.paused_upstream.add(ln)
                    ln.pause(self, now)
                    out = PAUSED_UPSTREAM
        if not self.busy and not self.paused_by:
            self._start(now)
        return out

    def _start(self, now):
        pkt = self.queue[0]
        self.busy = True
        if pkt.hop == 0:
            pkt.tx_ts = now
        self.fabric.ev.at(now + self.ser(pkt.wire_len), self._done, None)

    def _done(self, _):
        fab = self.fabric
        now = fab.ev.now
        pkt = self.queue.popleft()
        wl = pkt.wire_len
        self.occ -= wl
        if pkt.up is not None:
            self.ingress[pkt.up] -= wl
        pkt.up = None
        if pkt.hop == 0 and pkt.txc is not None:
            pkt.txc.sent_at = now
        pkt.hop += 1
        fab.on_wire += 1
        fab.ev.at(now + self.prop, fab._hop, pkt)
        self.busy = False
        if self.paused_upstream and self.occ < self.xon:
            ups = sorted(self.paused_upstream, key=lambda ln: (ln.u, ln.v))
            self.paused_upstream.clear()
            for ln in ups:
                ln.resume(self, now)
        if self.queue and not self.paused_by:
            self._start(now)
        if self._waiter is not None and self.occ < self._wake_below:
            fn, self._waiter = self._waiter, None
            fn(now)

    def pause(self, by, now):
        if not self.paused_by:
            self._paused_since = now
        self.paused_by.add(by)

    def resume(self, by, now):
        self.paused_by.discard(by)
        if not self.paused_by:
            if self._paused_since is not None:
                self.paused_ns += now - self._paused_since
                self._paused_since = None
            if not self.busy and self.queue:
                self._start(now)

    def request_wakeup(self, below_bytes, fn, now):
        self._wake_below = below_bytes
        self._waiter = fn


class Fabric:
    """Links plus delivery. Hosts attach with ``on_packet(pkt)`` / ``on_control(msg)``."""

    def __init__(self, topo: Topology, mode: str = DROP_TAIL, ecn_frac: float = 0.2, mtu: int = 4096,
                 header_bytes: int = HEADER_BYTES, ev: EventQueue | None = None, trace=None,
                 pause_xoff: int | None = None):
        if mode not in MODES:
            raise ValueError(f"unknown queue mode {mode!r}")
        self.topo = topo
        self.mode = mode
        self.mtu = mtu
        self.header_bytes = header_bytes
        self.ev = ev or EventQueue()
        self.trace = trace
        self.hosts = {}
        self.injected = 0
        self.delivered = 0
        self.dropped = 0
        self.trimmed_delivered = 0
        self.trimmed_payload_bytes = 0
        self.on_wire = 0
        self.ctrl_sent = 0
        self._routes = {}
        self._ctrl_lat = {}
        self.links = {}
        host_set = set(topo.hosts)
        in_deg = {}
        for (u, v) in topo.links:
            in_deg[u] = in_deg.get(u, 0) + 1
        for (u, v), spec in topo.links.items():
            infinite = u in host_set  # host NIC queue is host memory
            if mode == PAUSE:
                rate_bytes = spec.rate_bps / 8e9
                headroom = 2 * mtu + int(math.ceil(2 * spec.delay_ns * rate_bytes))
                xoff = pause_xoff if pause_xoff is not None else spec.qcap_bytes
                cap = xoff + in_deg.get(u, 1) * headroom
                sized = LinkSpec(spec.rate_bps, spec.delay_ns, cap)
                ln = PauseLink(self, u, v, sized, ecn_frac * xoff / cap, xoff, xoff // 2, infinite)
            else:
                ln = Link(self, u, v, spec, mode, ecn_frac, infinite)
            self.links[(u, v)] = ln

    # ------------------------------------------------------------------ setup
    def attach(self, host_id, handler):
        self.hosts[host_id] = handler

    def nic(self, host_id):
        u = host_id
        for (a, b), ln in self.links.items():
            if a == u:
                return ln
        raise KeyError(host_id)

    def inject_loss(self, link, drop_ratio: float, seed) -> None:
        if isinstance(link, tuple):
            link = self.links[link]
        if drop_ratio != 0 and not (MIN_DROP_RATIO <= drop_ratio <= 1.0):
            raise ValueError(f"drop ratio must be 0 or in [2^-24, 1], got {drop_ratio}")
        link.drop_ratio = float(drop_ratio)
        link.rng = stream_rng(seed, f"loss:{link.name}")

    def route_links(self, src, dst, path_id):
        key = (src, dst, path_id)
        r = self._routes.get(key)
        if r is None:
            paths = self.topo.paths(src, dst)
            nodes = paths[path_id % len(paths)]
            r = tuple(self.links[(nodes[i], nodes[i + 1])] for i in range(len(nodes) - 1))
            self._routes[key] = r
        return r

    def n_paths(self, src, dst) -> int:
        return len(self.topo.paths(src, dst))

    def ctrl_latency(self, src, dst, path_id, nbytes=HEADER_BYTES) -> int:
        key = (src, dst, path_id, nbytes)
        lat = self._ctrl_lat.get(key)
        if lat is None:
            lat = sum(ln.ser(nbytes) + ln.prop for ln in self.route_links(src, dst, path_id))
            self._ctrl_lat[key] = lat
        return lat

    # --------------------------------------------------------------- traffic
    def send(self, pkt, now=None):
        """Inject a data packet at its source NIC."""
        now = self.ev.now if now is None else now
        pkt.route = self.route_links(pkt.src, pkt.dst, pkt.path_id)
        pkt.hop = 0
        self.injected += 1
        return pkt.route[0].accept(pkt, now)

    def send_control(self, msg, src, dst, path_id=0, nbytes=HEADER_BYTES):
        """Deliver ``msg`` to ``dst.on_control`` over the priority class."""
        self.ctrl_sent += 1
        lat = self.ctrl_latency(src, dst, path_id, nbytes)
        self.ev.at(self.ev.now + lat, self._ctrl_arrive, (dst, msg))

    def _ctrl_arrive(self, arg):
        dst, msg = arg
        self.hosts[dst].on_control(msg)

    def _hop(self, pkt):
        self.on_wire -= 1
        route = pkt.route
        if pkt.hop >= len(route):
            self.delivered += 1
            if pkt.trimmed:
                self.trimmed_delivered += 1
            if self.trace is not None:
                self._trace("trim_deliver" if pkt.trimmed else "deliver", route[-1], pkt)
            self.hosts[pkt.dst].on_packet(pkt)
        else:
            route[pkt.hop].accept(pkt, self.ev.now)

    def _drop(self, pkt, link, why):
        self.dropped += 1
        if self.trace is not None:
            self._trace(why, link, pkt)

    def _trace(self, event, link, pkt):
        flags = "".join(c for c, on in (("E", pkt.ecn), ("T", pkt.trimmed)) if on) or "-"
        self.trace.append((self.ev.now, event, link.name, f"{pkt.src}-{pkt.dst}-{pkt.path_id}", pkt.csn, flags))

    # ---------------------------------------------------------------- stats
    def in_flight(self) -> int:
        n = self.on_wire
        for ln in self.links.values():
            if isinstance(ln, PauseLink):
                n += len(ln.queue)
        return n

    def check_conservation(self) -> None:
        lhs = self.injected
        rhs = self.delivered + self.dropped + self.in_flight()
        if lhs != rhs:
            raise SimulationError(f"packet conservation violated: injected={lhs} != {rhs}")

    def stats(self) -> dict:
        return {
            "packets_injected": self.injected,
            "packets_delivered": self.delivered,
            "packets_dropped": self.dropped,
            "packets_in_flight": self.in_flight(),
            "trimmed_headers_delivered": self.trimmed_delivered,
            "trimmed_payload_bytes": self.trimmed_payload_bytes,
            "ecn_marks": sum(ln.n_marked for ln in self.links.values()),
            "trims": sum(ln.n_trimmed for ln in self.links.values()),
            "queue_drops": sum(ln.n_dropped for ln in self.links.values()),
            "injected_losses": sum(ln.n_lost for ln in self.links.values()),
            "control_packets": self.ctrl_sent,
            "events": self.ev.executed,
        }

    def reset_max_occupancy(self):
        for ln in self.links.values():
            ln.max_occ = ln.backlog(self.ev.now)


def write_trace(rows, path) -> None:
    with open(path, "w") as f:
        f.write("time_ns\tevent\tlink\tflow_key\tcsn\tflags\n")
        for r in rows:
            f.write("\t".join(str(x) for x in r) + "\n")
