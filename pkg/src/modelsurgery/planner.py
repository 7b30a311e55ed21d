"""Accelerator offload partitioning and a linear latency model.

Nodes the device supports run on the accelerator, everything else falls
back to the CPU.  Graph inputs and outputs live in host (CPU) memory, and
every tensor that crosses between placements pays a fixed per-transfer
overhead plus ``bytes / bandwidth``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import DomainError, ParseError
from .graph import Graph, Node, OpKind, ValueInfo, infer_shapes, nodes_in_order

ACCEL = "accel"
CPU = "cpu"

RULES = ("supported", "unsupported", "no_channel_padding")


def _rule_check(rule: str, node: Node, shapes) -> tuple[bool, str]:
    if rule == "supported":
        return True, ""
    if rule == "unsupported":
        return False, f"{node.op.value.lower()} unsupported"
    if rule == "no_channel_padding":
        paddings = node.attrs.get("paddings") or ()
        if paddings and any(paddings[-1]):
            return False, "channel-wise constant padding unsupported"
        return True, ""
    return False, f"unknown rule {rule!r}"


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    supported: Mapping[str, str]
    accel_throughput: float
    cpu_throughput: float
    transfer_bandwidth: float
    transfer_overhead: float

    def __post_init__(self):
        if not (self.accel_throughput > 0 and self.cpu_throughput > 0):
            raise DomainError("throughputs must be positive")
        if not self.transfer_bandwidth > 0:
            raise DomainError("transfer_bandwidth must be positive")
        if not self.transfer_overhead >= 0:
            raise DomainError("transfer_overhead must be non-negative")
        for op, rule in self.supported.items():
            if rule not in RULES:
                raise DomainError(f"unknown support rule {rule!r} for {op}")
        object.__setattr__(self, "supported", dict(self.supported))

    def with_rules(self, **rules: str) -> "DeviceProfile":
        merged = dict(self.supported)
        merged.update(rules)
        return replace(self, supported=merged)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "supported": {op.value: self.supported[op.value] for op in OpKind if op.value in self.supported},
            "accel_throughput": self.accel_throughput,
            "cpu_throughput": self.cpu_throughput,
            "transfer_bandwidth": self.transfer_bandwidth,
            "transfer_overhead": self.transfer_overhead,
        }

    @classmethod
    def from_dict(cls, d: Mapping, source: str | None = None) -> "DeviceProfile":
        try:
            return cls(
                name=str(d["name"]),
                supported={str(k): str(v) for k, v in d["supported"].items()},
                accel_throughput=float(d["accel_throughput"]),
                cpu_throughput=float(d["cpu_throughput"]),
                transfer_bandwidth=float(d["transfer_bandwidth"]),
                transfer_overhead=float(d["transfer_overhead"]),
            )
        except KeyError as exc:
            raise ParseError(f"device profile is missing field {exc.args[0]!r}", source) from None
        except (TypeError, ValueError, AttributeError, DomainError) as exc:
            raise ParseError(f"bad device profile: {exc}", source) from None


def load_profile(path: str | Path) -> DeviceProfile:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, str(path), exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("device profile must be an object", str(path))
    return DeviceProfile.from_dict(doc, str(path))


def default_profile() -> DeviceProfile:
    text = resources.files("modelsurgery").joinpath("profiles/tda4vm-like.json").read_text()
    return DeviceProfile.from_dict(json.loads(text), "tda4vm-like.json")


def check_support(node: Node, shapes: Mapping[str, ValueInfo], profile: DeviceProfile) -> tuple[bool, str]:
    rule = profile.supported.get(node.op.value)
    if rule is None:
        return False, "no rule"
    return _rule_check(rule, node, shapes)


@dataclass(frozen=True)
class Segment:
    placement: str
    nodes: tuple[str, ...]


@dataclass(frozen=True)
class Transfer:
    edge: str
    nbytes: int
    direction: str  # "upload" (host -> accel) or "download" (accel -> host)


@dataclass
class Partition:
    segments: list[Segment]
    boundary_tensors: list[Transfer]
    placements: dict[str, str] = field(default_factory=dict)
    reasons: dict[str, str] = field(default_factory=dict)

    def cpu_nodes(self) -> list[str]:
        return [n for n, p in self.placements.items() if p == CPU]


def partition(g: Graph, profile: DeviceProfile) -> Partition:
    shapes = infer_shapes(g)
    order = nodes_in_order(g)
    placements, reasons = {}, {}
    for node in order:
        ok, why = check_support(node, shapes, profile)
        placements[node.name] = ACCEL if ok else CPU
        if not ok:
            reasons[node.name] = why
    segments: list[Segment] = []
    for node in order:
        p = placements[node.name]
        if segments and segments[-1].placement == p:
            segments[-1] = Segment(p, segments[-1].nodes + (node.name,))
        else:
            segments.append(Segment(p, (node.name,)))

    # Where each edge lives once produced; constants are preloaded wherever needed.
    home = {v.name: CPU for v in g.inputs}
    for node in order:
        home[node.outputs[0]] = placements[node.name]
    wanted: dict[str, list[str]] = {}
    for node in order:
        for e in node.inputs:
            if e in home:
                wanted.setdefault(e, []).append(placements[node.name])
    for e in g.outputs:
        if e in home:
            wanted.setdefault(e, []).append(CPU)
    transfers = []
    for e in home:
        for dst in dict.fromkeys(wanted.get(e, ())):
            if dst != home[e]:
                transfers.append(Transfer(e, shapes[e].nbytes, "upload" if dst == ACCEL else "download"))
    return Partition(segments, transfers, placements, reasons)


@dataclass
class LatencyEstimate:
    compute_ms: list[float]
    transfer_ms: list[float]
    total_ms: float
    fps: float

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.fps)

    def fps_text(self) -> str:
        return "unbounded" if self.unbounded else f"{self.fps:.2f}"

    def to_dict(self) -> dict:
        return {
            "compute_ms": list(self.compute_ms),
            "transfer_ms": list(self.transfer_ms),
            "total_ms": self.total_ms,
            "fps": "unbounded" if self.unbounded else self.fps,
        }


def fps_from_ms(total_ms: float) -> float:
    return math.inf if total_ms == 0 else 1000.0 / total_ms


def estimate_latency(
    g: Graph, p: Partition, profile: DeviceProfile, macs: Mapping[str, int]
) -> LatencyEstimate:
    compute = []
    for seg in p.segments:
        missing = [n for n in seg.nodes if n not in macs]
        if missing:
            raise DomainError(f"no MAC count for nodes {missing}")
        rate = profile.accel_throughput if seg.placement == ACCEL else profile.cpu_throughput
        compute.append(math.fsum(macs[n] for n in seg.nodes) / rate)
    transfer = [profile.transfer_overhead + t.nbytes / profile.transfer_bandwidth for t in p.boundary_tensors]
    total = math.fsum(compute + transfer)
    return LatencyEstimate(compute, transfer, total, fps_from_ms(total))


def plan(g: Graph, profile: DeviceProfile, macs: Mapping[str, int] | None = None) -> tuple[Partition, LatencyEstimate]:
    """Partition and estimate in one go, counting MACs analytically when none are given."""
    from .interpreter import count_ops

    p = partition(g, profile)
    return p, estimate_latency(g, p, profile, count_ops(g) if macs is None else macs)


def relative_improvement(before_fps: float, after_fps: float) -> float:
    if not before_fps > 0:
        raise DomainError("baseline FPS must be positive")
    return 100.0 * (after_fps - before_fps) / before_fps


def compare_reports(before, after) -> float:
    """Relative FPS improvement in percent; accepts estimates or plain FPS numbers."""
    b = before.fps if isinstance(before, LatencyEstimate) else float(before)
    a = after.fps if isinstance(after, LatencyEstimate) else float(after)
    return relative_improvement(b, a)


@dataclass
class PipelineBudget:
    stages: list[tuple[str, float]]
    total_ms: float
    fps: float

    def describe(self) -> str:
        fps = "unbounded" if math.isinf(self.fps) else f"{self.fps:.2f}"
        return f"total {round(self.total_ms, 6):g} ms, {fps} FPS"

    def to_dict(self) -> dict:
        return {
            "stages": [{"name": n, "ms": ms} for n, ms in self.stages],
            "total_ms": self.total_ms,
            "fps": "unbounded" if math.isinf(self.fps) else self.fps,
        }


def pipeline_budget(stages: Sequence[tuple[str, float]]) -> PipelineBudget:
    cleaned = []
    for name, ms in stages:
        ms = float(ms)
        if math.isnan(ms) or ms < 0:
            raise DomainError(f"stage {name!r} has invalid time {ms}")
        cleaned.append((str(name), ms))
    total = math.fsum(ms for _, ms in cleaned)
    return PipelineBudget(cleaned, total, fps_from_ms(total))
