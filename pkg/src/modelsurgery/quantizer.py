"""Post-training int8 simulation by per-tensor fake quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import interpreter
from .errors import DomainError
from .graph import Graph, OpKind, nodes_in_order
from .tensor import DType, QuantParams, Tensor, compute_qparams, fake_quantize

MIN_WIDTH = 1e-12


@dataclass
class CalibrationResult:
    ranges: dict[str, tuple[float, float]]
    samples: int

    def qparams(self, edge: str) -> QuantParams:
        lo, hi = self.ranges[edge]
        return compute_qparams(lo, hi, "asymmetric")

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "samples": self.samples,
            "ranges": {k: [self.ranges[k][0], self.ranges[k][1]] for k in sorted(self.ranges)},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalibrationResult":
        ranges = {}
        for k, v in d["ranges"].items():
            lo, hi = float(v[0]), float(v[1])
            if not lo <= hi:
                raise DomainError(f"calibration range for {k!r} has min > max")
            ranges[k] = (lo, hi)
        return cls(ranges, int(d.get("samples", 0)))


def _finite_or_text(x: float):
    return x if math.isfinite(x) else str(x)


@dataclass
class QuantErrorReport:
    max_abs_error: dict[str, float]
    sqnr_db: dict[str, float]
    qparams: dict[str, QuantParams]
    # Elementwise max |error| over all samples, one array per output.
    error_map: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "outputs": [
                {"name": k, "max_abs_error": self.max_abs_error[k], "sqnr_db": _finite_or_text(self.sqnr_db[k])}
                for k in self.max_abs_error
            ],
            "qparams": {
                k: {"scale": q.scale, "zero_point": q.zero_point} for k, q in sorted(self.qparams.items())
            },
        }


@dataclass
class RangeFinding:
    node: str
    branches: list[tuple[str, float, float]]
    ratio: float
    feeds_output: str | None

    @property
    def recommendation(self) -> str | None:
        if self.feeds_output is None:
            return None
        return f"split_output_branches(output_name={self.feeds_output!r})"

    def describe(self) -> str:
        spans = ", ".join(f"{e}=[{lo:g}, {hi:g}]" for e, lo, hi in self.branches)
        text = f"{self.node}: branch range ratio {self.ratio:.4g} ({spans})"
        if self.recommendation:
            text += f"; recommend {self.recommendation}"
        return text


def calibrate(g: Graph, calib_feeds: Sequence[Mapping[str, Tensor]]) -> CalibrationResult:
    """Min/max calibration over every edge, widened to include zero."""
    if not calib_feeds:
        raise DomainError("calibration needs at least one feed map")
    _, trace = interpreter.run_recording(g, calib_feeds)
    ranges = {}
    for edge in g.edges():
        lo, hi = trace.ranges.get(edge, (0.0, 0.0))
        ranges[edge] = (min(lo, 0.0), max(hi, 0.0))
    return CalibrationResult(ranges, len(calib_feeds))


def _fq(t: Tensor, qp: QuantParams) -> Tensor:
    if t.dtype is not DType.F32:
        return t
    return fake_quantize(t, qp)


def run_fake_quant(g: Graph, calib: CalibrationResult, feeds: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """One sample through ``g`` with every graph input and node output fake-quantized."""
    edges = set(g.input_names) | {n.outputs[0] for n in g.nodes}
    missing = sorted(e for e in edges if e not in calib.ranges)
    if missing:
        raise DomainError(f"calibration lacks edges {missing}")
    interpreter._check_feeds(g, feeds)
    env: dict[str, Tensor] = dict(g.constants)
    for name, t in feeds.items():
        env[name] = _fq(t, calib.qparams(name))
    for node in nodes_in_order(g):
        out = interpreter.execute_node(node, [env[e].array for e in node.inputs])
        env[node.outputs[0]] = _fq(Tensor.of(out), calib.qparams(node.outputs[0]))
    return {o: env[o] for o in g.outputs}


def simulate_quantized(
    g: Graph, calib: CalibrationResult, eval_feeds: Sequence[Mapping[str, Tensor]]
) -> QuantErrorReport:
    if not eval_feeds:
        raise DomainError("simulation needs at least one feed map")
    error_map: dict[str, np.ndarray] = {}
    sig = {o: 0.0 for o in g.outputs}
    noise = {o: 0.0 for o in g.outputs}
    for feeds in eval_feeds:
        ref = interpreter.run(g, feeds)
        got = run_fake_quant(g, calib, feeds)
        for o in g.outputs:
            r = ref[o].array.astype(np.float64)
            err = np.abs(got[o].array.astype(np.float64) - r)
            error_map[o] = err if o not in error_map else np.maximum(error_map[o], err)
            sig[o] += float(np.sum(r * r))
            noise[o] += float(np.sum(err * err))
    max_err = {o: float(error_map[o].max()) if error_map[o].size else 0.0 for o in g.outputs}
    sqnr = {}
    for o in g.outputs:
        if noise[o] == 0.0:
            sqnr[o] = math.inf
        elif sig[o] == 0.0:
            sqnr[o] = -math.inf
        else:
            sqnr[o] = 10.0 * math.log10(sig[o] / noise[o])
    qps = {e: calib.qparams(e) for e in list(g.input_names) + [n.outputs[0] for n in g.nodes]}
    return QuantErrorReport(max_err, sqnr, qps, error_map)


def diagnose_range_disparity(g: Graph, calib: CalibrationResult, ratio_threshold: float = 10.0) -> list[RangeFinding]:
    """Flag Concats whose inputs span very different ranges (one shared scale hurts the narrow one)."""
    findings = []
    for node in nodes_in_order(g):
        if node.op is not OpKind.Concat:
            continue
        branches = [(e, *calib.ranges[e]) for e in node.inputs]
        widths = [hi - lo for _, lo, hi in branches]
        ratio = max(widths) / max(min(widths), MIN_WIDTH)
        if ratio >= ratio_threshold:
            out = node.outputs[0]
            findings.append(RangeFinding(node.name, branches, ratio, out if out in g.outputs else None))
    return findings
