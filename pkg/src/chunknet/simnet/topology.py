"""Static topologies: k-ary fat-tree and a single-switch star."""
from __future__ import annotations

from dataclasses import dataclass, field


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class LinkSpec:
    rate_bps: float
    delay_ns: int
    qcap_bytes: int


@dataclass
class Topology:
    kind: str
    k: int
    hosts: list
    edges: list
    aggs: list
    cores: list
    links: dict  # (u, v) -> LinkSpec, one entry per direction
    _paths: dict = field(default_factory=dict, repr=False)
    # host -> (pod, edge index within pod); only meaningful for fat-trees
    _loc: dict = field(default_factory=dict, repr=False)

    @property
    def n_hosts(self) -> int:
        return len(self.hosts)

    @property
    def switches(self) -> list:
        return self.edges + self.aggs + self.cores

    def neighbors(self, u):
        return [v for (a, v) in self.links if a == u]

    def paths(self, src: int, dst: int) -> list:
        """All shortest node paths ``src -> dst`` in a fixed enumeration order."""
        key = (src, dst)
        p = self._paths.get(key)
        if p is None:
            p = self._enumerate(src, dst)
            self._paths[key] = p
        return p

    def _check_host(self, h):
        if not isinstance(h, int) or not 0 <= h < len(self.hosts):
            raise TopologyError(f"unknown host {h!r}")

    def _enumerate(self, src, dst):
        self._check_host(src)
        self._check_host(dst)
        if src == dst:
            raise TopologyError("src and dst must differ")
        if self.kind == "star":
            sw = self.edges[0]
            return [(src, sw, dst)]
        half = self.k // 2
        ps, es = self._loc[src]
        pd, ed = self._loc[dst]
        e_src = self.edges[ps * half + es]
        e_dst = self.edges[pd * half + ed]
        if e_src == e_dst:
            return [(src, e_src, dst)]
        if ps == pd:
            return [(src, e_src, self.aggs[ps * half + a], e_dst, dst) for a in range(half)]
        out = []
        for a in range(half):
            for j in range(half):
                out.append((src, e_src, self.aggs[ps * half + a], self.cores[a * half + j],
                            self.aggs[pd * half + a], e_dst, dst))
        return out

    def base_rtt_ns(self, mtu_wire: int = 4096, ctrl_wire: int = 64) -> int:
        """Unloaded RTT of the longest path: one MTU packet out, one control packet back."""
        longest = self._longest_hops()
        spec = next(iter(self.links.values()))
        ns_per_byte = 8e9 / spec.rate_bps
        fwd = longest * (spec.delay_ns + mtu_wire * ns_per_byte)
        rev = longest * (spec.delay_ns + ctrl_wire * ns_per_byte)
        return int(round(fwd + rev))

    def bdp_bytes(self, mtu_wire: int = 4096) -> int:
        spec = next(iter(self.links.values()))
        return int(self.base_rtt_ns(mtu_wire) * spec.rate_bps / 8e9)

    def _longest_hops(self) -> int:
        return 2 if self.kind == "star" else 6


def _add(links, u, v, spec):
    links[(u, v)] = spec
    links[(v, u)] = spec


def build_fattree(k: int, rate_bps: float = 100e9, delay_ns: int = 500, qcap_bytes: int | None = None) -> Topology:
    """Fully provisioned three-tier k-ary fat-tree.

    Node ids: hosts first, then edge, aggregation and core switches.
    ``qcap_bytes=None`` sizes every queue at one BDP of the longest path.
    """
    if not isinstance(k, int) or k < 2 or k % 2:
        raise TopologyError(f"fat-tree arity must be an even integer >= 2, got {k!r}")
    half = k // 2
    n_hosts = k ** 3 // 4
    n_edge = n_agg = k * half
    n_core = half * half
    hosts = list(range(n_hosts))
    edges = list(range(n_hosts, n_hosts + n_edge))
    aggs = list(range(n_hosts + n_edge, n_hosts + n_edge + n_agg))
    cores = list(range(n_hosts + n_edge + n_agg, n_hosts + n_edge + n_agg + n_core))

    topo = Topology("fattree", k, hosts, edges, aggs, cores, {})
    if qcap_bytes is None:
        probe = LinkSpec(rate_bps, delay_ns, 0)
        topo.links = {(0, 1): probe}
        qcap_bytes = topo.bdp_bytes()
    spec = LinkSpec(rate_bps, delay_ns, int(qcap_bytes))
    links = {}
    for h in hosts:
        pod, rest = divmod(h, half * half)
        e = rest // half
        topo._loc[h] = (pod, e)
        _add(links, h, edges[pod * half + e], spec)
    for pod in range(k):
        for e in range(half):
            for a in range(half):
                _add(links, edges[pod * half + e], aggs[pod * half + a], spec)
        for a in range(half):
            for j in range(half):
                _add(links, aggs[pod * half + a], cores[a * half + j], spec)
    topo.links = links
    return topo


def build_star(n_hosts: int, rate_bps: float = 100e9, delay_ns: int = 500, qcap_bytes: int | None = None) -> Topology:
    """``n_hosts`` hosts on one switch (single-switch tier, same-rack testbed shape)."""
    if n_hosts < 2:
        raise TopologyError("star needs at least two hosts")
    hosts = list(range(n_hosts))
    sw = n_hosts
    topo = Topology("star", 0, hosts, [sw], [], [], {})
    if qcap_bytes is None:
        topo.links = {(0, sw): LinkSpec(rate_bps, delay_ns, 0)}
        qcap_bytes = topo.bdp_bytes()
    spec = LinkSpec(rate_bps, delay_ns, int(qcap_bytes))
    links = {}
    for h in hosts:
        _add(links, h, sw, spec)
    topo.links = links
    return topo


def route(topo: Topology, flow_key) -> tuple:
    """Hop list (node ids) for ``(src, dst, path_id)``: enumerated path ``path_id mod count``."""
    src, dst, path_id = flow_key
    paths = topo.paths(src, dst)
    return paths[path_id % len(paths)]
