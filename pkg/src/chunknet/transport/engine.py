"""Run-to-completion engine: ACK and receive work first, then DRR over sub-connections."""
from __future__ import annotations

import heapq
from collections import deque

DRR_QUANTUM = 32 * 1024


class Engine:
    def __init__(self, engine_id: int, quantum: int = DRR_QUANTUM):
        self.engine_id = engine_id
        self.quantum = quantum
        self.subconns = []
        self.active = deque()  # sub-connections visited by DRR
        self.ack_q = deque()  # (subconn, ack)
        self.rx_q = deque()  # (handler, item)
        self.wheel = []  # pacing wheel: (release_ns, seq, subconn, chunk)
        self._wseq = 0
        self.load = 0  # unconsumed (unacknowledged) bytes
        self.served = {}  # sub-connection -> bytes sent through DRR
        self._fresh = True

    def add(self, sc):
        self.subconns.append(sc)
        self.active.append(sc)
        self.served[sc] = 0

    # ------------------------------------------------------------ receive side
    def poll_rx(self, now) -> int:
        """Drain ACK completions, then received data. Returns items processed."""
        n = 0
        aq, rq = self.ack_q, self.rx_q
        while aq or rq:
            if aq:
                sc, ack = aq.popleft()
                sc.handle_control(ack, now)
            else:
                fn, item = rq.popleft()
                fn(item, now)
            n += 1
        return n

    # ----------------------------------------------------------------- pacing
    def pace(self, sc, ch, release_ns):
        self._wseq += 1
        heapq.heappush(self.wheel, (release_ns, self._wseq, sc, ch))

    def next_release(self):
        return self.wheel[0][0] if self.wheel else None

    # -------------------------------------------------------------- scheduler
    def drr_tick(self, now):
        """One unit of work in priority order.

        Returns ``("ack", x)``, ``("rx", x)``, ``("pace", (sc, chunk))``,
        ``("tx", (sc, chunk))`` or ``None`` when nothing can run.
        """
        if self.ack_q:
            sc, ack = self.ack_q.popleft()
            sc.handle_control(ack, now)
            return ("ack", ack)
        if self.rx_q:
            fn, item = self.rx_q.popleft()
            fn(item, now)
            return ("rx", item)
        w = self.wheel
        if w and w[0][0] <= now:
            _, _, sc, ch = heapq.heappop(w)
            return ("pace", (sc, ch))
        return self._drr(now)

    def _drr(self, now):
        act = self.active
        for _ in range(2 * len(act) + 1):
            if not act:
                return None
            sc = act[0]
            size = sc.peek_size()
            if size == 0:
                sc.deficit = 0  # idle flows do not bank credit
                act.rotate(-1)
                self._fresh = True
                continue
            if self._fresh:
                sc.deficit += self.quantum
                self._fresh = False
            if sc.deficit < size:
                act.rotate(-1)
                self._fresh = True
                continue
            ch = sc.next_chunk(now)
            if ch is None:
                # window or credit closed: give up the turn without banking
                sc.deficit = 0
                act.rotate(-1)
                self._fresh = True
                continue
            sc.deficit -= ch.length
            self.served[sc] += ch.length
            if sc.policy.on_pacing_chunk(sc, ch):
                self.pace(sc, ch, ch.pace_at)
                return ("paced", (sc, ch))
            return ("tx", (sc, ch))
        return None

    def has_tx_work(self) -> bool:
        return any(sc.has_work() for sc in self.active) or bool(self.wheel)
