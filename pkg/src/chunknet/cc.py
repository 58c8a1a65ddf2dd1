"""Sender-driven congestion control: CUBIC and Swift, global or per-path.

Windows are in bytes. CUBIC's growth curve is evaluated in MTU units with time
measured in ``time_unit_ns`` (the unloaded fabric RTT by default), which keeps
the standard constants meaningful at microsecond RTTs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

CUBIC_C = 0.4
CUBIC_BETA = 0.7


@dataclass
class CubicState:
    cwnd: float
    mtu: int = 4096
    c: float = CUBIC_C
    beta: float = CUBIC_BETA
    time_unit_ns: float = 10_000.0
    min_cwnd: float = 4096
    cwnd_cap: float = math.inf
    ssthresh: float = math.inf
    w_max: float = 0.0
    epoch_start: int | None = None
    k: float = 0.0  # in time units
    srtt: float = 0.0
    last_loss: int | None = None
    ecn_reactive: bool = False

    def __post_init__(self):
        self.cwnd = min(max(self.cwnd, self.min_cwnd), self.cwnd_cap)


def cubic_k(w_max_mtu: float, beta: float = CUBIC_BETA, c: float = CUBIC_C) -> float:
    return math.copysign(abs(w_max_mtu * (1 - beta) / c) ** (1 / 3), w_max_mtu)


def w_cubic(state: CubicState, now: int) -> float:
    """Closed-form CUBIC window (bytes) at ``now`` for the current epoch."""
    t = (now - state.epoch_start) / state.time_unit_ns
    return (state.c * (t - state.k) ** 3) * state.mtu + state.w_max


def _clamp(state, w):
    if w > state.cwnd_cap:
        w = state.cwnd_cap
    if w < state.min_cwnd:
        w = state.min_cwnd
    return w


def cubic_on_ack(state: CubicState, acked_bytes: int, now: int, rtt: float | None = None) -> float:
    if rtt:
        state.srtt = rtt if not state.srtt else 0.875 * state.srtt + 0.125 * rtt
    if state.cwnd < state.ssthresh:
        state.cwnd = _clamp(state, state.cwnd + acked_bytes)
        return state.cwnd
    if state.epoch_start is None:
        state.epoch_start = now
        if state.cwnd >= state.w_max:
            state.w_max = state.cwnd
            state.k = 0.0
        else:
            state.k = ((state.w_max - state.cwnd) / state.mtu / state.c) ** (1 / 3)
    state.cwnd = _clamp(state, w_cubic(state, now))
    return state.cwnd


def cubic_on_loss(state: CubicState, now: int) -> float:
    """Multiplicative decrease, at most once per smoothed RTT."""
    if state.last_loss is not None and now - state.last_loss < state.srtt:
        return state.cwnd
    state.last_loss = now
    state.w_max = state.cwnd
    state.cwnd = _clamp(state, state.cwnd * state.beta)
    state.ssthresh = state.cwnd
    state.epoch_start = now
    state.k = cubic_k(state.w_max / state.mtu, state.beta, state.c)
    return state.cwnd


@dataclass
class SwiftState:
    cwnd: float
    target_delay: float
    ai: float = 4096
    md_beta: float = 0.8
    max_md: float = 0.5
    min_cwnd: float = 4096
    cwnd_cap: float = math.inf
    last_decrease: int | None = None
    ecn_reactive: bool = False  # Swift is delay-based; kept for a uniform interface

    def __post_init__(self):
        self.cwnd = min(max(self.cwnd, self.min_cwnd), self.cwnd_cap)


def _swift_can_decrease(state, now, rtt):
    return state.last_decrease is None or now - state.last_decrease >= rtt


def swift_on_ack(state: SwiftState, rtt_sample: float, now: int, acked_bytes: int | None = None) -> float:
    if rtt_sample <= 0:
        raise ValueError("rtt sample must be positive")
    acked = state.ai if acked_bytes is None else acked_bytes
    if rtt_sample < state.target_delay:
        w = state.cwnd + state.ai * acked / state.cwnd
    elif _swift_can_decrease(state, now, rtt_sample):
        factor = max(1 - state.md_beta * (rtt_sample - state.target_delay) / rtt_sample, 1 - state.max_md)
        w = state.cwnd * factor
        state.last_decrease = now
    else:
        return state.cwnd
    state.cwnd = min(max(w, state.min_cwnd), state.cwnd_cap)
    return state.cwnd


def swift_on_loss(state: SwiftState, now: int, rtt: float, timeout: bool = False) -> float:
    if timeout:
        state.cwnd = state.min_cwnd
        state.last_decrease = now
    elif _swift_can_decrease(state, now, rtt):
        state.cwnd = max(state.cwnd * (1 - state.max_md), state.min_cwnd)
        state.last_decrease = now
    return state.cwnd


class Controller:
    """Uniform on_ack / on_loss wrapper over one CC state."""

    def __init__(self, name: str, state):
        self.name = name
        self.state = state

    @property
    def cwnd(self):
        return self.state.cwnd

    def on_ack(self, acked_bytes, rtt, now, ecn=False):
        s = self.state
        if self.name == "cubic":
            if ecn and s.ecn_reactive:
                cubic_on_loss(s, now)
            cubic_on_ack(s, acked_bytes, now, rtt)
        elif self.name == "swift":
            if ecn and s.ecn_reactive:
                swift_on_loss(s, now, rtt)
            swift_on_ack(s, rtt, now, acked_bytes)

    def on_loss(self, now, rtt, timeout=False):
        if self.name == "cubic":
            cubic_on_loss(self.state, now)
        elif self.name == "swift":
            swift_on_loss(self.state, now, rtt, timeout)


class NoCC(Controller):
    """Congestion control disabled: unlimited window."""

    def __init__(self):
        super().__init__("none", None)

    @property
    def cwnd(self):
        return math.inf

    def on_ack(self, *a, **k):
        pass

    def on_loss(self, *a, **k):
        pass


def make_controller(name: str, *, mtu: int, base_rtt_ns: float, bdp_bytes: float, cwnd_cap=math.inf,
                    ecn_reactive=False, params: dict | None = None) -> Controller:
    p = params or {}
    init = p.get("init_cwnd", bdp_bytes)
    if name == "cubic":
        return Controller("cubic", CubicState(
            cwnd=init, mtu=mtu, c=p.get("c", CUBIC_C), beta=p.get("beta", CUBIC_BETA),
            time_unit_ns=p.get("time_unit_ns", base_rtt_ns), min_cwnd=mtu, cwnd_cap=cwnd_cap,
            srtt=base_rtt_ns, ecn_reactive=ecn_reactive))
    if name == "swift":
        return Controller("swift", SwiftState(
            cwnd=init, target_delay=p.get("target_scale", 1.5) * base_rtt_ns, ai=p.get("ai", mtu),
            md_beta=p.get("md_beta", 0.8), max_md=p.get("max_md", 0.5), min_cwnd=mtu, cwnd_cap=cwnd_cap,
            ecn_reactive=ecn_reactive))
    if name == "none":
        return NoCC()
    raise ValueError(f"unknown cc {name!r}")


@dataclass
class CcScope:
    """Global state, or one state per path with windows summed at connection level."""

    mode: str
    states: list
    paths: list = field(default_factory=list)
    inflight: dict = field(default_factory=dict)  # path_id -> bytes (per_path) or {None: bytes}

    def __post_init__(self):
        if self.mode not in ("global", "per_path"):
            raise ValueError(f"unknown cc scope {self.mode!r}")
        if self.mode == "per_path" and len(self.states) != len(self.paths):
            raise ValueError("per_path scope needs one state per path")
        if self.mode == "global":
            self.inflight.setdefault(None, 0)
        else:
            for p in self.paths:
                self.inflight.setdefault(p, 0)
        self._idx = {p: i for i, p in enumerate(self.paths)}

    def controller(self, path_id=None):
        if self.mode == "global":
            return self.states[0]
        return self.states[self._idx[path_id]]

    def connection_window(self) -> float:
        if self.mode == "global":
            return self.states[0].cwnd
        return sum(s.cwnd for s in self.states)

    def add_inflight(self, path_id, nbytes):
        key = None if self.mode == "global" else path_id
        self.inflight[key] += nbytes

    def total_inflight(self):
        return sum(self.inflight.values())


def window_available(scope: CcScope, path_id=None) -> float:
    if scope.mode == "global":
        return max(0.0, scope.states[0].cwnd - scope.inflight[None])
    if path_id is None:
        return sum(window_available(scope, p) for p in scope.paths)
    return max(0.0, scope.controller(path_id).cwnd - scope.inflight[path_id])
