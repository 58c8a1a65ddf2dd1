"""Traffic patterns: permutation, incast, and co-located incast + permutation."""
from __future__ import annotations

from dataclasses import dataclass

from ..simnet.fabric import stream_rng


@dataclass(frozen=True)
class Flow:
    flow_id: int
    src: int
    dst: int
    kind: str  # permutation | incast | stream
    msg_size: int
    max_inflight: int
    total_bytes: int = 0  # 0: stream until the experiment's duration ends


def gen_permutation(n_hosts: int, seed=0) -> list:
    """A random derangement as (src, dst) pairs: every host sends once and receives once, never to itself."""
    if n_hosts < 2:
        raise ValueError("permutation needs at least two hosts")
    rng = stream_rng(seed, "workload:permutation")
    hosts = list(range(n_hosts))
    while True:
        perm = hosts[:]
        rng.shuffle(perm)
        if all(perm[i] != i for i in hosts):
            return [(i, perm[i]) for i in hosts]


def permutation_flows(n_hosts, msg_size, max_inflight, total_bytes, seed=0) -> list:
    return [Flow(i, s, d, "permutation", msg_size, max_inflight, total_bytes)
            for i, (s, d) in enumerate(gen_permutation(n_hosts, seed))]


def gen_colocated_incast(n_hosts: int, fan_in: int = 15, msg_size: int = 1 << 20, max_inflight: int = 4,
                         seed=0, victim: int = 0, total_bytes: int = 0, permutation: bool = True) -> list:
    """``fan_in`` senders stream to ``victim`` while (optionally) every host also runs a permutation."""
    if fan_in < 1 or fan_in + 1 > n_hosts:
        raise ValueError(f"fan_in must be in [1, {n_hosts - 1}]")
    if msg_size <= 0 or max_inflight <= 0:
        raise ValueError("msg_size and max_inflight must be positive")
    if not 0 <= victim < n_hosts:
        raise ValueError("victim out of range")
    senders = [h for h in range(n_hosts) if h != victim][:fan_in]
    flows = [Flow(i, s, victim, "incast", msg_size, max_inflight, total_bytes) for i, s in enumerate(senders)]
    if permutation:
        base = len(flows)
        for j, (s, d) in enumerate(gen_permutation(n_hosts, seed)):
            flows.append(Flow(base + j, s, d, "permutation", msg_size, max_inflight, total_bytes))
    return flows


def offered_load(flows, host: int) -> float:
    """Offered load at ``host``'s downlink, in line rates, when every flow sends at line rate."""
    return float(sum(1 for f in flows if f.dst == host))
