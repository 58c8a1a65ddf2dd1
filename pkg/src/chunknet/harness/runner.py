"""Build a simulation from a spec, drive its workload, and collect the report."""
from __future__ import annotations

import math

from ..eqds import EqdsPolicy
from ..simnet import Fabric, build_fattree, build_star
from ..simnet.fabric import stream_rng
from ..transport import Host, SenderDrivenPolicy, TransportConfig
from .config import ExperimentSpec, SpecError, validate
from .metrics import MetricsReport, ideal_time_ns, tail_stats
from .workloads import Flow, gen_colocated_incast, permutation_flows


class Nonquiescence(RuntimeError):
    """Messages still unfinished at the cutoff (CLI exit code 3)."""

    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


def build_topology(spec: ExperimentSpec):
    t = spec.topology
    rate = t.rate_gbps * 1e9
    qcap = t.qcap_bytes or None
    if t.kind == "star":
        topo = build_star(t.n_hosts, rate, t.delay_ns, qcap)
    else:
        topo = build_fattree(t.k, rate, t.delay_ns, qcap)
    if qcap is None:
        # one BDP of the longest path at the configured MTU
        bdp = topo.bdp_bytes(t.mtu)
        topo = (build_star(t.n_hosts, rate, t.delay_ns, bdp) if t.kind == "star"
                else build_fattree(t.k, rate, t.delay_ns, bdp))
    return topo


def make_flows(spec: ExperimentSpec, n_hosts: int) -> list:
    w = spec.workload
    seed = spec.run.seed
    total = 0 if w.duration_ns > 0 else w.bytes_per_host
    if w.kind == "permutation":
        return permutation_flows(n_hosts, w.msg_size, w.max_inflight, total, seed)
    if w.kind in ("incast", "colocated"):
        return gen_colocated_incast(n_hosts, w.fan_in, w.msg_size, w.max_inflight, seed, w.victim, total,
                                    permutation=w.kind == "colocated")
    dst = w.dst if w.dst >= 0 else n_hosts - 1
    return [Flow(0, w.src, dst, "stream", w.msg_size, w.max_inflight, total)]


def transport_config(spec: ExperimentSpec, bdp: float) -> TransportConfig:
    tr = spec.transport
    return TransportConfig(
        chunk_size=tr.chunk_size, mode=tr.mode, dup_thresh=tr.dup_thresh, quantum=tr.quantum, policy=tr.policy,
        cc=tr.cc, cc_scope=tr.cc_scope, cc_params=dict(tr.cc_params), ecn_reactive=tr.ecn_reactive,
        cwnd_cap=tr.cwnd_cap_bdp * bdp if tr.cwnd_cap_bdp > 0 else math.inf, lb=tr.lb, n_paths=tr.n_paths,
        engines=tr.engines, rto_min=tr.rto_min_ns, rto_max=tr.rto_max_ns, avoid_rtx_path=tr.avoid_rtx_path,
        adaptive_chunk=tr.adaptive_chunk)


def _unsolicited(spec: ExperimentSpec):
    """Explicit setting, else one BDP where the fabric can trim the excess and none elsewhere."""
    u = spec.eqds.unsolicited_bytes
    if u >= 0:
        return u
    return None if spec.topology.mode == "trim" else 0


def _policy_factory(spec: ExperimentSpec):
    tr, eq = spec.transport, spec.eqds
    if tr.policy == "eqds":
        return lambda host: EqdsPolicy(
            host, quantum=eq.quantum or None,
            unsolicited_bytes=_unsolicited(spec),
            bank_quanta=eq.bank_quanta, starvation_rts=eq.starvation_rts, notify_latency_ns=eq.notify_latency_ns,
            lb=tr.lb, dup_ack_rtx=eq.dup_ack_rtx)
    return lambda host: SenderDrivenPolicy(tr.lb, adaptive_chunk=tr.adaptive_chunk)


class _FlowDriver:
    """Keeps up to ``max_inflight`` messages of one flow outstanding."""

    def __init__(self, flow: Flow, conn, issue_ts, data_fn=None):
        self.flow = flow
        self.issue_ts = issue_ts
        self.conn = conn
        self.issued = 0
        self.bytes_issued = 0
        self.outstanding = 0
        self.delivered = 0
        self.bytes_delivered = 0
        self.start_ns = None
        self.end_ns = None
        self.stopped = False
        self.data_fn = data_fn
        self.msg_rows = []

    def want_more(self) -> bool:
        f = self.flow
        if self.stopped:
            return False
        if f.total_bytes:
            return self.bytes_issued < f.total_bytes
        return True

    def pump(self, now):
        f = self.flow
        while self.outstanding < f.max_inflight and self.want_more():
            size = f.msg_size if not f.total_bytes else min(f.msg_size, f.total_bytes - self.bytes_issued)
            data = self.data_fn(self.flow, self.issued, size) if self.data_fn else None
            if self.start_ns is None:
                self.start_ns = now
            msg = self.conn.send_message(size, data, tag=(f.flow_id, self.issued))
            self.issue_ts[(f.src, self.conn.conn_id, msg.uid)] = (f.flow_id, msg.issued_at, size)
            self.issued += 1
            self.bytes_issued += size
            self.outstanding += 1

    @property
    def done(self) -> bool:
        return not self.want_more() and self.outstanding == 0 and self.delivered == self.issued


def run_experiment(spec: ExperimentSpec, data_fn=None, on_deliver=None) -> MetricsReport:
    """Run one deterministic simulation; raises :class:`Nonquiescence` past the cutoff."""
    validate(spec)
    t, tr, w = spec.topology, spec.transport, spec.workload
    topo = build_topology(spec)
    trace = [] if spec.run.trace else None
    fab = Fabric(topo, t.mode, t.ecn_frac, t.mtu, t.header_bytes, trace=trace)
    seed = spec.run.seed
    factory = _policy_factory(spec)
    with_data = spec.run.with_data or data_fn is not None
    hosts = [Host(h, fab, factory, n_engines=tr.engines, quantum=tr.quantum, seed=seed, with_data=with_data)
             for h in topo.hosts]
    bdp = hosts[0].bdp
    cfg = transport_config(spec, bdp)
    flows = make_flows(spec, topo.n_hosts)
    for f in flows:
        if f.src >= topo.n_hosts or f.dst >= topo.n_hosts or f.src == f.dst:
            raise SpecError(f"flow {f} does not fit the topology")

    # the sender learns of completion from ACKs; FCT is measured at the receiver
    issue_ts = {}  # (src, conn_id, uid) -> (flow_id, issue time, size)
    drivers = {}
    for f in flows:
        conn = hosts[f.src].connect(f.dst, cfg)
        drivers[f.flow_id] = _FlowDriver(f, conn, issue_ts, data_fn)

    def on_acked(host, conn, msg, now):
        fid = msg.tag[0]
        d = drivers[fid]
        d.outstanding -= 1
        if w.duration_ns > 0 and now >= w.duration_ns:
            d.stopped = True
        d.pump(now)

    def deliver(host, rx, rm):
        fid, issued_at, size = issue_ts.pop((rx.src, rx.conn_id, rm.uid))
        d = drivers[fid]
        d.delivered += 1
        d.bytes_delivered += size
        now = rm.done_ts
        d.end_ns = now
        d.msg_rows.append((issued_at, now, size))
        if on_deliver is not None:
            on_deliver(fid, rm)

    for h in hosts:
        h.on_acked = on_acked
        h.on_deliver = deliver

    if spec.loss.ratio:
        _inject_loss(spec, fab, topo, flows)

    ideal = ideal_time_ns(w.bytes_per_host, t.rate_gbps * 1e9) if w.duration_ns <= 0 else float(w.duration_ns)
    cutoff = int(spec.run.cutoff_factor * ideal)
    ev = fab.ev
    jit = stream_rng(seed, "workload:start")
    for f in flows:
        if w.start_jitter_ns > 0:
            ev.at(int(jit.random() * w.start_jitter_ns), lambda d: d.pump(ev.now), drivers[f.flow_id])
        else:
            drivers[f.flow_id].pump(0)
    if w.duration_ns > 0:
        def stop_all(_):
            for d in drivers.values():
                d.stopped = True
        ev.at(int(w.duration_ns), stop_all, None)

    if w.warmup_ns > 0:
        ev.at(int(w.warmup_ns), lambda _: fab.reset_max_occupancy(), None)

    all_done = lambda: all(d.done for d in drivers.values())  # noqa: E731
    # run in slices so an idle-but-unfinished system terminates at the cutoff
    step = max(int(ideal // 20), 1000)
    while ev.now < cutoff and not all_done():
        nxt = ev.peek_time()
        if nxt is None:
            break
        ev.run_until(min(cutoff, max(ev.now + step, nxt)))
    completed = all_done()
    fab.check_conservation()
    report = _report(spec, fab, hosts, drivers, ideal, completed, trace)
    if not completed:
        raise Nonquiescence(f"{sum(not d.done for d in drivers.values())} flows unfinished at "
                            f"{cutoff} ns ({spec.run.cutoff_factor:g}x ideal)", report)
    return report


def _inject_loss(spec, fab, topo, flows):
    lo = spec.loss
    if lo.where == "all":
        links = list(fab.links.values())
    else:
        links = [fab.nic(s) for s in sorted({f.src for f in flows})]
    for ln in links:
        fab.inject_loss(ln, lo.ratio, lo.seed)


def _report(spec, fab, hosts, drivers, ideal, completed, trace) -> MetricsReport:
    w = spec.workload
    rows = []
    per_message = w.duration_ns > 0
    for fid in sorted(drivers):
        d = drivers[fid]
        f = d.flow
        if per_message:
            for i, (a, b, size) in enumerate(sorted(d.msg_rows)):
                if a < w.warmup_ns:
                    continue
                rows.append({"flow_id": fid * 1_000_000 + i, "src": f.src, "dst": f.dst, "kind": f.kind,
                             "bytes": size, "start_ns": a, "end_ns": b, "fct_ns": b - a})
        elif d.done:
            rows.append({"flow_id": fid, "src": f.src, "dst": f.dst, "kind": f.kind, "bytes": d.bytes_delivered,
                         "start_ns": d.start_ns, "end_ns": d.end_ns, "fct_ns": d.end_ns - d.start_ns})
    slowest = max((r["end_ns"] for r in rows), default=0) if not per_message else \
        max((r["fct_ns"] for r in rows), default=0)
    goodput = {}
    for d in drivers.values():
        if d.end_ns and d.start_ns is not None and d.end_ns > d.start_ns:
            goodput[f"{d.flow.src}->{d.flow.dst}:{d.flow.flow_id}"] = d.bytes_delivered * 8e9 / (d.end_ns - d.start_ns)
    retx = sent = 0
    tx = {"fast_retransmits": 0, "timeouts": 0, "protocol_errors": 0, "chunks_sent": 0}
    rx = {"dup_chunks": 0, "out_of_window": 0, "gbn_drops": 0, "naks": 0, "trim_nacks": 0}
    for h in hosts:
        tx["chunks_sent"] += h.chunks_tx
        for c in h.conns.values():
            for sc in c.subconns:
                retx += sc.retx_bytes
                sent += sc.bytes_sent
                tx["fast_retransmits"] += sc.fast_rtx
                tx["timeouts"] += sc.timeouts
                tx["protocol_errors"] += sc.protocol_errors
        for r in h.rx.values():
            rx["dup_chunks"] += r.dups
            rx["out_of_window"] += r.out_of_window
            rx["gbn_drops"] += r.gbn_drops
            rx["naks"] += r.naks
            rx["trim_nacks"] += r.trimmed
    counters = dict(fab.stats())
    counters.update(tx)
    counters.update(rx)
    counters["end_time_ns"] = fab.ev.now
    finite = [ln for ln in fab.links.values() if ln.cap != math.inf]
    counters["max_queue_bytes"] = max((ln.max_occ for ln in finite), default=0)
    if w.kind in ("incast", "colocated"):
        into = [ln for ln in finite if ln.v == w.victim]
        counters["victim_link_max_occ"] = max((ln.max_occ for ln in into), default=0)
        counters["victim_link_drops"] = sum(ln.n_dropped + ln.n_lost for ln in into)
        counters["victim_link_trims"] = sum(ln.n_trimmed for ln in into)
    kinds = sorted({r["kind"] for r in rows})
    by_kind = {k: tail_stats([r["fct_ns"] for r in rows if r["kind"] == k]) for k in kinds}
    return MetricsReport(spec=spec.to_dict(), spec_hash=spec.spec_hash(), flows=rows, ideal_ns=ideal,
                         slowest_ns=float(slowest), slowdown=slowest / ideal if ideal else math.nan,
                         completed=completed, goodput_bps=goodput, retx_bytes=retx, bytes_sent=sent,
                         counters=counters, by_kind=by_kind, trace=trace or [])
