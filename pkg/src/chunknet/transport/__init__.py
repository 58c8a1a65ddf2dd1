from .connection import MAX_INFLIGHT_MSGS, Connection, TransportConfig, dispatch_message, partition_paths
from .endpoint import Host, RxConnection
from .engine import DRR_QUANTUM, Engine
from .framing import KB, BackpressureError, CorruptionError, RxMessage, chunk_spans, segment
from .policy import PolicyViolation, SenderDrivenPolicy, TransportPolicy
from .subconn import GO_BACK_N, SELECTIVE, SubConnection, TxChunk, TxMessage

__all__ = [
    "MAX_INFLIGHT_MSGS", "Connection", "TransportConfig", "dispatch_message", "partition_paths", "Host",
    "RxConnection", "DRR_QUANTUM", "Engine", "KB", "BackpressureError", "CorruptionError", "RxMessage",
    "chunk_spans", "segment", "PolicyViolation", "SenderDrivenPolicy", "TransportPolicy", "GO_BACK_N",
    "SELECTIVE", "SubConnection", "TxChunk", "TxMessage",
]
