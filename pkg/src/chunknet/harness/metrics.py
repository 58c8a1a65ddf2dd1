"""FCT statistics, CCDF, and the per-run report."""
from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np


def ideal_time_ns(bytes_per_host: float, rate_bps: float) -> float:
    """Per-host volume over host line rate."""
    return bytes_per_host * 8 / rate_bps * 1e9


def fct_ccdf(fcts) -> list:
    """(fct, P(FCT >= fct)) for each distinct value, in increasing fct order."""
    x = np.sort(np.asarray(list(fcts), dtype=float))
    if x.size == 0:
        raise ValueError("empty FCT list")
    vals, first = np.unique(x, return_index=True)
    probs = (x.size - first) / x.size
    return [(float(v), float(p)) for v, p in zip(vals, probs)]


def quantile(fcts, q: float) -> float:
    x = np.asarray(list(fcts), dtype=float)
    if x.size == 0:
        raise ValueError("empty FCT list")
    return float(np.quantile(x, q))


def tail_stats(fcts) -> dict:
    if not len(fcts):
        return {"count": 0}
    return {"count": len(fcts), "mean": float(np.mean(fcts)), "p50": quantile(fcts, 0.5),
            "p99": quantile(fcts, 0.99), "p999": quantile(fcts, 0.999), "max": float(np.max(fcts))}


FLOW_COLUMNS = ("flow_id", "src", "dst", "kind", "bytes", "start_ns", "end_ns", "fct_ns")


@dataclass
class MetricsReport:
    spec: dict
    spec_hash: str
    flows: list  # dicts with FLOW_COLUMNS
    ideal_ns: float
    slowest_ns: float
    slowdown: float
    completed: bool
    goodput_bps: dict = field(default_factory=dict)  # "src->dst" -> bits/s
    retx_bytes: int = 0
    bytes_sent: int = 0
    counters: dict = field(default_factory=dict)
    by_kind: dict = field(default_factory=dict)  # kind -> tail stats
    trace: list = field(default_factory=list)

    @property
    def fcts(self) -> list:
        return [f["fct_ns"] for f in self.flows]

    def kind_fcts(self, kind) -> list:
        return [f["fct_ns"] for f in self.flows if f["kind"] == kind]

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("flows")
        d.pop("trace")
        d["n_flows"] = len(self.flows)
        return d


def _atomic_write(path, text):
    d = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def emit_results(report: MetricsReport, out_root: str, fmt: str = "csv+json") -> str:
    """Write ``<out_root>/<spec-hash>/{flows.csv, summary.json[, trace.tsv]}``; returns the directory."""
    out = os.path.join(out_root, report.spec_hash)
    os.makedirs(out, exist_ok=True)
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FLOW_COLUMNS)
    for f in report.flows:
        w.writerow([f[c] for c in FLOW_COLUMNS])
    _atomic_write(os.path.join(out, "flows.csv"), buf.getvalue())
    _atomic_write(os.path.join(out, "summary.json"), json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    if report.trace:
        lines = ["time_ns\tevent\tlink\tflow_key\tcsn\tflags"]
        lines += ["\t".join(str(x) for x in r) for r in report.trace]
        _atomic_write(os.path.join(out, "trace.tsv"), "\n".join(lines) + "\n")
    return out


def read_flows(path) -> list:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        for c in ("flow_id", "src", "dst", "bytes", "start_ns", "end_ns", "fct_ns"):
            r[c] = int(r[c])
    return rows
