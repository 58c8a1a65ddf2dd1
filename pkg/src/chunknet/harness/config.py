"""Experiment specs: INI-style files (or JSON), dotted ``--set`` overrides, stable hashing.

File grammar (``configparser``)::

    [topology]
    kind = fattree
    k = 8
    [transport]
    chunk_size = 32768
    lb = "ecn"

Values are parsed as Python literals when possible (``8``, ``1e-3``, ``true``,
``[1, 2]``) and kept as strings otherwise.
"""
from __future__ import annotations

import ast
import configparser
import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .. import lb as lbmod


class SpecError(ValueError):
    """Invalid experiment spec (CLI exit code 2)."""


@dataclass
class TopologySpec:
    kind: str = "fattree"  # fattree | star
    k: int = 8
    n_hosts: int = 16  # star only
    rate_gbps: float = 100.0
    delay_ns: int = 500
    qcap_bytes: int = 0  # 0: one BDP of the longest path
    mode: str = "drop_tail"  # drop_tail | trim | pause
    ecn_frac: float = 0.2
    mtu: int = 4096
    header_bytes: int = 64


@dataclass
class TransportSpec:
    policy: str = "sender"  # sender | eqds
    chunk_size: int = 32768
    mode: str = "selective"  # selective | gbn
    dup_thresh: int = 8
    quantum: int = 32768
    cc: str = "cubic"  # cubic | swift | none
    cc_scope: str = "global"
    ecn_reactive: bool = False
    cwnd_cap_bdp: float = 0.0  # 0: uncapped; else multiple of BDP
    cc_params: dict = field(default_factory=dict)
    lb: str = "rtt"  # rtt | ecn | oblivious
    n_paths: int = 64
    engines: int = 1
    rto_min_ns: int = 0
    rto_max_ns: int = 0
    avoid_rtx_path: bool = False
    adaptive_chunk: bool = False


@dataclass
class EqdsSpec:
    quantum: int = 0  # 0: one chunk
    unsolicited_bytes: int = -1  # -1: one BDP
    bank_quanta: int = 4
    starvation_rts: bool = True
    notify_latency_ns: int = 0
    dup_ack_rtx: bool = False


@dataclass
class WorkloadSpec:
    kind: str = "permutation"  # permutation | incast | colocated | stream
    bytes_per_host: int = 8 * 1024 * 1024
    msg_size: int = 1024 * 1024
    max_inflight: int = 8
    fan_in: int = 15
    victim: int = 0
    duration_ns: int = 0  # >0: stream messages until this time (per-message FCTs)
    warmup_ns: int = 0
    start_jitter_ns: int = 0  # flows start uniformly in [0, jitter)
    src: int = 0  # stream only
    dst: int = -1  # stream only; -1 = last host


@dataclass
class LossSpec:
    ratio: float = 0.0
    where: str = "sender_nic"  # sender_nic | all
    seed: int = 1


@dataclass
class RunSpec:
    seed: int = 1
    cutoff_factor: float = 100.0
    trace: bool = False
    with_data: bool = False


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    topology: TopologySpec = field(default_factory=TopologySpec)
    transport: TransportSpec = field(default_factory=TransportSpec)
    eqds: EqdsSpec = field(default_factory=EqdsSpec)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    run: RunSpec = field(default_factory=RunSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


SECTIONS = {f.name: f.default_factory for f in fields(ExperimentSpec) if f.name != "name"}


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(t)
    except (ValueError, SyntaxError):
        return t


def _coerce(section, key, value, proto):
    if isinstance(proto, bool):
        if not isinstance(value, bool):
            raise SpecError(f"{section}.{key} must be a boolean, got {value!r}")
        return value
    if isinstance(proto, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise SpecError(f"{section}.{key} must be an integer, got {value!r}")
        return value
    if isinstance(proto, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SpecError(f"{section}.{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(proto, dict):
        if not isinstance(value, dict):
            raise SpecError(f"{section}.{key} must be a mapping, got {value!r}")
        return value
    return str(value)


def apply_override(spec: ExperimentSpec, dotted: str, value) -> None:
    """Set ``section.key`` (or ``name``); ``transport.cc_params.beta`` style keys reach into dicts."""
    if isinstance(value, str):
        value = parse_value(value)
    parts = dotted.split(".")
    if parts == ["name"]:
        spec.name = str(value)
        return
    if len(parts) < 2 or parts[0] not in SECTIONS:
        raise SpecError(f"unknown config key {dotted!r}")
    sec = getattr(spec, parts[0])
    key = parts[1]
    if not hasattr(sec, key):
        raise SpecError(f"unknown config key {dotted!r}")
    proto = getattr(sec, key)
    if len(parts) > 2:
        if not isinstance(proto, dict):
            raise SpecError(f"{parts[0]}.{key} is not a mapping")
        proto[".".join(parts[2:])] = value
        return
    setattr(sec, key, _coerce(parts[0], key, value, proto))


def load_spec(path=None, overrides=()) -> ExperimentSpec:
    spec = ExperimentSpec()
    if path is not None:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as e:
            raise SpecError(f"cannot read {path}: {e}") from None
        if str(path).endswith(".json"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as e:
                raise SpecError(f"cannot parse {path}: {e}") from None
            for k, v in _flatten(data):
                apply_override(spec, k, v)
        else:
            cp = configparser.ConfigParser(interpolation=None)
            cp.optionxform = str
            try:
                cp.read_string(text)
            except configparser.Error as e:
                raise SpecError(f"cannot parse {path}: {e}") from None
            for k, v in cp.defaults().items():
                apply_override(spec, k, v)
            for sec in cp.sections():
                for k, v in cp.items(sec, raw=True):
                    if k in cp.defaults():
                        continue
                    apply_override(spec, f"{sec}.{k}", v)
    for ov in overrides:
        if "=" not in ov:
            raise SpecError(f"override must be key=value, got {ov!r}")
        k, v = ov.split("=", 1)
        apply_override(spec, k.strip(), v)
    validate(spec)
    return spec


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key.count(".") < 1 and key in SECTIONS:
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def validate(spec: ExperimentSpec) -> None:
    t, tr, w, lo = spec.topology, spec.transport, spec.workload, spec.loss
    if t.kind not in ("fattree", "star"):
        raise SpecError(f"unknown topology kind {t.kind!r}")
    if t.kind == "fattree" and (t.k < 2 or t.k % 2):
        raise SpecError(f"fat-tree arity must be even and >= 2, got {t.k}")
    if t.kind == "star" and t.n_hosts < 2:
        raise SpecError("star needs at least two hosts")
    if t.mode not in ("drop_tail", "trim", "pause"):
        raise SpecError(f"unknown queue mode {t.mode!r}")
    if t.mtu <= t.header_bytes:
        raise SpecError("mtu must exceed header_bytes")
    if tr.policy not in ("sender", "eqds"):
        raise SpecError(f"unknown transport policy {tr.policy!r}")
    if tr.cc not in ("cubic", "swift", "none"):
        raise SpecError(f"unknown cc {tr.cc!r}")
    if tr.cc_scope not in ("global", "per_path"):
        raise SpecError(f"unknown cc scope {tr.cc_scope!r}")
    if tr.lb not in lbmod.POLICIES:
        raise SpecError(f"unknown lb policy {tr.lb!r}")
    if tr.mode not in ("selective", "gbn"):
        raise SpecError(f"unknown reliability mode {tr.mode!r}")
    if tr.chunk_size <= 0 or tr.n_paths <= 0 or tr.engines <= 0 or tr.engines > tr.n_paths:
        raise SpecError("chunk_size, n_paths, engines must be positive and engines <= n_paths")
    if w.kind not in ("permutation", "incast", "colocated", "stream"):
        raise SpecError(f"unknown workload {w.kind!r}")
    if w.msg_size <= 0 or w.max_inflight <= 0 or w.max_inflight > 128:
        raise SpecError("msg_size must be positive and 1 <= max_inflight <= 128")
    if w.start_jitter_ns < 0 or w.warmup_ns < 0:
        raise SpecError("start_jitter_ns and warmup_ns must be non-negative")
    if w.duration_ns <= 0 and w.bytes_per_host <= 0:
        raise SpecError("need bytes_per_host or duration_ns")
    if lo.ratio and not (2.0 ** -24 <= lo.ratio <= 1.0):
        raise SpecError("loss ratio must be 0 or in [2^-24, 1]")
    if lo.where not in ("sender_nic", "all"):
        raise SpecError(f"unknown loss placement {lo.where!r}")


def clone(spec: ExperimentSpec) -> ExperimentSpec:
    return copy.deepcopy(spec)
