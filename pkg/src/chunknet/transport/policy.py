"""Extension interface: the eight callbacks a transport policy implements.

``conn_state`` is the sender's :class:`SubConnection` for transmit-side hooks and
the receiver's :class:`RxConnection` for receive-side hooks. ``now`` is always
available as ``conn_state.now``.
"""
from __future__ import annotations

from .. import lb as lbmod
from ..cc import window_available


class PolicyViolation(AssertionError):
    pass


class TransportPolicy:
    name = "base"
    receiver_driven = False

    def on_chunk_size(self, conn_state, remaining_bytes: int) -> int:
        """Permitted chunk size now; 0 defers chunking (window closed)."""
        return min(conn_state.chunk_size, remaining_bytes)

    def on_pacing_chunk(self, conn_state, chunk) -> bool:
        return False

    def on_select_path(self, conn_state, chunk) -> int:
        return conn_state.paths[0]

    def on_tx_rtx_chunk(self, conn_state, chunk) -> bool:
        return True

    def on_rx_chunk(self, conn_state, ctrl_hdr) -> None:
        pass

    def on_rx_rtx_chunk(self, conn_state, ctrl_hdr) -> None:
        pass

    def on_rx_ack(self, conn_state, sack_hdr) -> None:
        pass

    def on_rx_credit(self, conn_state, credit_hdr) -> None:
        pass

    # plumbing hooks outside the eight callbacks
    def on_connect(self, conn) -> None:
        pass

    def on_enqueue(self, conn, msg) -> None:
        pass

    def data_reserved(self, conn_state, chunk) -> int:
        """Reserved-byte value stamped on data packets."""
        return 0

    def on_control(self, host, msg, now) -> None:
        raise TypeError(f"{self.name} policy does not handle {type(msg).__name__}")


class SenderDrivenPolicy(TransportPolicy):
    """Window CC (CUBIC/Swift) plus multipath LB over the sub-connection's paths."""

    name = "sender"

    def __init__(self, lb: str = "rtt", adaptive_chunk: bool = False, small_chunk: int = 4096,
                 adaptive_threshold_chunks: int = 8):
        if lb not in lbmod.POLICIES:
            raise ValueError(f"unknown lb policy {lb!r}")
        self.lb = lb
        self.adaptive_chunk = adaptive_chunk
        self.small_chunk = small_chunk
        self.adaptive_threshold_chunks = adaptive_threshold_chunks

    def on_chunk_size(self, cs, remaining_bytes):
        if window_available(cs.scope) <= 0:
            return 0
        size = cs.chunk_size
        if self.adaptive_chunk and cs.scope.connection_window() < self.adaptive_threshold_chunks * size:
            size = min(size, self.small_chunk)
        return min(size, remaining_bytes)

    def _candidates(self, cs):
        if cs.scope.mode == "global":
            return cs.paths
        open_paths = [p for p in cs.paths if window_available(cs.scope, p) > 0]
        return open_paths or cs.paths

    def on_select_path(self, cs, chunk):
        cands = self._candidates(cs)
        if cs.avoid_rtx_path and chunk.n_tx and len(cands) > 1:
            cands = [p for p in cands if p != chunk.path] or cands
        return lbmod.choose_path(self.lb, cs.board, cs.rng, cands)

    def on_tx_rtx_chunk(self, cs, chunk):
        if chunk.loss_signal:
            chunk.loss_signal = False
            cs.scope.controller(chunk.path).on_loss(cs.now, cs.srtt or cs.base_rtt, chunk.timed_out)
        return window_available(cs.scope, None if cs.scope.mode == "global" else chunk.path) > 0 \
            or window_available(cs.scope) > 0

    def on_rx_ack(self, cs, ack):
        if ack.rtt > 0:
            lbmod.record_sample(cs.board, ack.path_id, ack.rtt, ack.ecn, ack.acked_bytes)
        if ack.acked_bytes:
            cs.scope.controller(ack.path_id).on_ack(ack.acked_bytes, ack.rtt or cs.base_rtt, cs.now, ack.ecn)
