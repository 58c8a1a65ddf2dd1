"""Connections: path partitioning across engines and least-loaded message dispatch."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..cc import CcScope, make_controller
from ..simnet.fabric import stream_rng
from ..wire import MSG_MAX
from .framing import DEFAULT_CHUNK, KB, BackpressureError
from .subconn import GO_BACK_N, SELECTIVE, SubConnection, TxMessage

MAX_INFLIGHT_MSGS = MSG_MAX + 1


@dataclass
class TransportConfig:
    chunk_size: int = DEFAULT_CHUNK
    max_chunk: int = 0  # 0: same as chunk_size
    mode: str = SELECTIVE
    dup_thresh: int = 8
    quantum: int = 32 * KB
    policy: str = "sender"  # sender | eqds
    cc: str = "cubic"
    cc_scope: str = "global"
    cc_params: dict = field(default_factory=dict)
    ecn_reactive: bool = False
    cwnd_cap: float = math.inf
    lb: str = "rtt"
    n_paths: int = 64
    engines: int = 1
    rto_min: float = 0.0  # 0: 4 x base RTT
    rto_max: float = 0.0  # 0: 64 x rto_min
    avoid_rtx_path: bool = False
    adaptive_chunk: bool = False
    eqds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (SELECTIVE, GO_BACK_N):
            raise ValueError(f"unknown reliability mode {self.mode!r}")
        if self.chunk_size <= 0 or self.n_paths <= 0 or self.engines <= 0 or self.dup_thresh <= 0:
            raise ValueError("chunk_size, n_paths, engines and dup_thresh must be positive")
        if not self.max_chunk:
            self.max_chunk = self.chunk_size
        if self.chunk_size > self.max_chunk:
            raise ValueError("chunk_size exceeds max_chunk")


def partition_paths(n_paths: int, n_engines: int) -> list:
    """Contiguous, disjoint slices of ``range(n_paths)``, one per engine."""
    if n_engines > n_paths:
        raise ValueError("more engines than paths")
    bounds = [n_paths * e // n_engines for e in range(n_engines + 1)]
    return [list(range(bounds[e], bounds[e + 1])) for e in range(n_engines)]


class Connection:
    """Sender side of one (src, dst) connection, split into one sub-connection per engine."""

    def __init__(self, host, dst, conn_id, cfg: TransportConfig, policy):
        self.host = host
        self.dst = dst
        self.conn_id = conn_id
        self.cfg = cfg
        self.policy = policy
        self.max_chunk = cfg.max_chunk
        self.inflight_msgs = {}
        self.seq = 0
        self.completed = 0
        engines = host.engines
        single = cfg.mode == GO_BACK_N
        n_paths = 1 if single else cfg.n_paths
        slices = partition_paths(n_paths, 1 if single else len(engines))
        base_rtt = host.base_rtt
        rto_min = cfg.rto_min or 4 * base_rtt
        rto_max = cfg.rto_max or 64 * rto_min
        self.subconns = []
        self.owner = {}
        for e, paths in enumerate(slices):
            eng = engines[e]
            scope = self._make_scope(paths)
            sc = SubConnection(self, eng, e, paths, policy, scope, chunk_size=cfg.chunk_size, base_rtt=base_rtt,
                               rto_min=rto_min, rto_max=rto_max, dup_thresh=cfg.dup_thresh, mode=cfg.mode,
                               rng=stream_rng(host.seed, f"lb:{host.host_id}:{conn_id}:{e}"),
                               avoid_rtx_path=cfg.avoid_rtx_path)
            eng.add(sc)
            self.subconns.append(sc)
            for p in paths:
                self.owner[p] = sc
        policy.on_connect(self)

    def _make_scope(self, paths):
        cfg, host = self.cfg, self.host
        mk = dict(mtu=host.mtu_payload, base_rtt_ns=host.base_rtt, bdp_bytes=host.bdp, cwnd_cap=cfg.cwnd_cap,
                  ecn_reactive=cfg.ecn_reactive, params=cfg.cc_params)
        name = "none" if cfg.policy != "sender" else cfg.cc
        if cfg.cc_scope == "per_path":
            per = dict(mk, bdp_bytes=max(host.bdp / len(paths), host.mtu_payload))
            return CcScope("per_path", [make_controller(name, **per) for _ in paths], list(paths))
        return CcScope("global", [make_controller(name, **mk)], list(paths))

    def send_message(self, size: int, data=None, tag=None) -> TxMessage:
        msg = TxMessage(self.seq, size, data, tag)
        dispatch_message(self, msg)
        self.host.kick(self.host.ev.now)
        return msg

    def message_acked(self, msg, now):
        del self.inflight_msgs[msg.msg_id]
        self.completed += 1
        self.host.on_message_acked(self, msg, now)

    @property
    def unfinished(self) -> bool:
        return bool(self.inflight_msgs)


def dispatch_message(conn: Connection, msg: TxMessage):
    """Assign ``msg`` an id and queue it on the least-loaded engine (ties: lowest id)."""
    if len(conn.inflight_msgs) >= MAX_INFLIGHT_MSGS:
        raise BackpressureError(f"connection {conn.conn_id} has {MAX_INFLIGHT_MSGS} messages in flight")
    mid = conn.seq % MAX_INFLIGHT_MSGS
    while mid in conn.inflight_msgs:
        mid = (mid + 1) % MAX_INFLIGHT_MSGS
    msg.msg_id = mid
    msg.seq = conn.seq
    msg.uid = conn.seq
    conn.seq += 1
    msg.issued_at = conn.host.ev.now
    sc = min(conn.subconns, key=lambda s: (s.engine.load, s.engine.engine_id))
    sc.engine.load += msg.size
    conn.inflight_msgs[mid] = msg
    conn.policy.on_enqueue(conn, msg)
    sc.enqueue(msg)
    return sc.engine
