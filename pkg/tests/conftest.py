import random

from chunknet.eqds import EqdsPolicy
from chunknet.simnet import Fabric, build_fattree, build_star, stream_rng
from chunknet.transport import Host, SenderDrivenPolicy, TransportConfig


class Net:
    """A small fabric with one host object per node and a payload-checking sink."""

    def __init__(self, topo, mode="drop_tail", policy="sender", lb="rtt", engines=1, seed=0, eqds_kw=None):
        self.fab = Fabric(topo, mode)
        if policy == "eqds":
            factory = lambda h: EqdsPolicy(h, lb=lb, **(eqds_kw or {}))  # noqa: E731
        else:
            factory = lambda h: SenderDrivenPolicy(lb)  # noqa: E731
        self.hosts = [Host(h, self.fab, factory, n_engines=engines, seed=seed, with_data=True) for h in topo.hosts]
        self.sent = {}  # (src, conn_id, uid) -> bytes
        self.got = {}
        self.acked = []
        for h in self.hosts:
            h.on_deliver = self._deliver
            h.on_acked = lambda host, conn, msg, now: self.acked.append((host.host_id, msg.uid, now))

    def _deliver(self, host, rx, rm):
        key = (rx.src, rx.conn_id, rm.uid)
        assert key not in self.got, "message delivered twice"
        self.got[key] = bytes(rm.buf)

    def send(self, src, dst, size, cfg, rng):
        conn = self.hosts[src].connect(dst, cfg)
        data = rng.randbytes(size)
        msg = conn.send_message(size, data)
        self.sent[(src, conn.conn_id, msg.uid)] = data
        return msg

    def run(self, limit_ns=50_000_000):
        ev = self.fab.ev
        while len(ev) and ev.now < limit_ns and (len(self.got) < len(self.sent) or len(self.acked) < len(self.sent)):
            ev.run_until(min(limit_ns, ev.now + 200_000))
        return self

    def loss(self, ratio, seed, links=None):
        for ln in links if links is not None else self.fab.links.values():
            self.fab.inject_loss(ln, ratio, seed)

    def subconns(self):
        return [sc for h in self.hosts for c in h.conns.values() for sc in c.subconns]


def transfer(seed, drop=0.0, engines=1, mode="selective", n_msgs=3, cc="none", lb="oblivious", chunk=4096,
             max_size=150_000, k=4):
    """Send random messages across pods of a k=4 fat-tree with loss on every link."""
    topo = build_fattree(k, qcap_bytes=64 * 4096)
    net = Net(topo, lb=lb, engines=engines, seed=seed)
    rng = random.Random(seed)
    cfg = TransportConfig(chunk_size=chunk, mode=mode, cc=cc, lb=lb, n_paths=16, engines=engines,
                          dup_thresh=rng.choice([2, 3, 8]))
    if drop:
        net.loss(drop, seed)
    src, dst = 0, topo.n_hosts - 1
    for _ in range(n_msgs):
        net.send(src, dst, rng.randrange(1, max_size), cfg, rng)
    return net.run()


def star_net(n=2, **kw):
    return Net(build_star(n, qcap_bytes=1 << 20), **kw)


def data_rng(seed=0):
    return stream_rng(seed, "test-data")
