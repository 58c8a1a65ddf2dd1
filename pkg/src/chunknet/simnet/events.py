from __future__ import annotations

import heapq


class SimulationError(RuntimeError):
    pass


class EventQueue:
    """Discrete-event clock. Ties on time run in insertion order.

    Handlers take a single argument; pack several into a tuple.
    """

    __slots__ = ("now", "_heap", "_seq", "executed")

    def __init__(self):
        self.now = 0
        self._heap = []
        self._seq = 0
        self.executed = 0

    def at(self, t: int, fn, arg=None) -> None:
        if t < self.now:
            raise SimulationError(f"event scheduled in the past: t={t} < now={self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, arg))

    def after(self, dt: int, fn, arg=None) -> None:
        self.at(self.now + dt, fn, arg)

    def __len__(self):
        return len(self._heap)

    def peek_time(self):
        return self._heap[0][0] if self._heap else None

    def run_until(self, t_end: int) -> int:
        if t_end < self.now:
            raise SimulationError(f"t_end={t_end} is before now={self.now}")
        heap = self._heap
        pop = heapq.heappop
        n = 0
        while heap and heap[0][0] <= t_end:
            t, _, fn, arg = pop(heap)
            self.now = t
            fn(arg)
            n += 1
        self.now = t_end
        self.executed += n
        return n

    def run(self, stop=None) -> int:
        """Run until the queue empties or ``stop()`` turns true (checked per event)."""
        heap = self._heap
        pop = heapq.heappop
        n = 0
        while heap:
            t, _, fn, arg = pop(heap)
            self.now = t
            fn(arg)
            n += 1
            if stop is not None and stop():
                break
        self.executed += n
        return n
