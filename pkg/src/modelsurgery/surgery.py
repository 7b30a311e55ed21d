"""Rewrite passes that remove accelerator-unsupported operators.

Every pass is a pure ``Graph -> (Graph, PassReport)`` function.  Sites a
pass cannot handle are reported with a reason rather than ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import interpreter
from .errors import ApplicabilityError, DomainError, SurgeryError, VerificationError
from .graph import Graph, Node, OpKind, ValueInfo, infer_shapes, nodes_in_order, rewire_replace, unique_name, validate
from .tensor import DType, Tensor, cast_f16_to_f32


@dataclass
class PassReport:
    pass_name: str
    nodes_removed: list[str] = field(default_factory=list)
    nodes_added: list[str] = field(default_factory=list)
    constants_added: list[str] = field(default_factory=list)
    inputs_added: list[str] = field(default_factory=list)
    sites_matched: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def sites_skipped(self) -> int:
        return len(self.skipped)

    def to_dict(self) -> dict:
        return {
            "pass": self.pass_name,
            "sites_matched": self.sites_matched,
            "sites_skipped": self.sites_skipped,
            "nodes_removed": list(self.nodes_removed),
            "nodes_added": list(self.nodes_added),
            "constants_added": list(self.constants_added),
            "inputs_added": list(self.inputs_added),
            "skipped": [{"node": n, "reason": r} for n, r in self.skipped],
        }

    def summary(self) -> str:
        line = f"{self.pass_name}: matched {self.sites_matched}, skipped {self.sites_skipped}"
        for node, reason in self.skipped:
            line += f"\n  skip {node}: {reason}"
        return line


@dataclass
class EquivalenceReport:
    samples: int
    seed: int
    max_abs_diff: dict[str, float]
    bit_exact: dict[str, bool]

    @property
    def all_bit_exact(self) -> bool:
        return all(self.bit_exact.values())

    def within(self, tolerance: float) -> bool:
        return all(d <= tolerance for d in self.max_abs_diff.values())

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "seed": self.seed,
            "outputs": [
                {"name": k, "max_abs_diff": self.max_abs_diff[k], "bit_exact": self.bit_exact[k]}
                for k in self.max_abs_diff
            ],
        }


@dataclass(frozen=True)
class OutputMapping:
    """How a split output is rebuilt: concatenate ``parts`` along ``axis``."""

    output: str
    axis: int
    parts: tuple[tuple[str, int], ...]

    def reconstruct(self, outputs: Mapping[str, Tensor]) -> Tensor:
        return Tensor.of(np.concatenate([outputs[name].array for name, _ in self.parts], axis=self.axis))

    def to_dict(self) -> dict:
        return {"output": self.output, "axis": self.axis, "parts": [[n, e] for n, e in self.parts]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "OutputMapping":
        return cls(str(d["output"]), int(d["axis"]), tuple((str(n), int(e)) for n, e in d["parts"]))


def build_identity_pad_filter(c_in: int, pad_before: int, pad_after: int) -> Tensor:
    """1x1 Conv2D filter that zero-pads the channel axis.

    ``filter[0, 0, i, pad_before + i] = 1``; every other entry is 0, so output
    channels outside ``[pad_before, pad_before + c_in)`` come out as zeros.
    """
    if c_in < 1:
        raise DomainError(f"c_in must be >= 1, got {c_in}")
    if pad_before < 0 or pad_after < 0:
        raise DomainError("padding amounts must be non-negative")
    cout = pad_before + c_in + pad_after
    w = np.zeros((1, 1, c_in, cout), dtype=np.float32)
    w[0, 0, np.arange(c_in), pad_before + np.arange(c_in)] = 1.0
    return Tensor(DType.F32, w)


def _channel_pad_site(node: Node, shapes) -> tuple[int, int] | str:
    """(before, after) on the last axis if this Pad is a zero channel pad, else a skip reason."""
    a = node.attrs
    if a.get("constant_value", 0) != 0:
        return "non-zero constant value"
    paddings = a["paddings"]
    if any(b or e for b, e in paddings[:-1]):
        return "non-channel padding"
    if len(paddings) == 0:
        return "scalar input"
    if shapes[node.inputs[0]].dtype is not DType.F32:
        return "non-F32 data"
    return paddings[-1]


def _taken_names(g: Graph) -> set[str]:
    return {n.name for n in g.nodes} | set(g.edges())


def _identity_node(name: str, src: str, dst: str, shape) -> Node:
    return Node(name, OpKind.Reshape, (src,), (dst,), {"new_shape": tuple(shape)})


def _drop_zero_pad(g, node, shapes, taken, removed, added, renames):
    # A zero-amount Pad is an identity; keep the output edge name if the graph exposes it.
    out = node.outputs[0]
    removed.append(node.name)
    if out in g.outputs:
        nm = unique_name(f"{node.name}/identity", taken)
        taken.add(nm)
        added.append(_identity_node(nm, node.inputs[0], out, shapes[out].shape))
    else:
        renames[out] = node.inputs[0]


def _rewrite_pads(g: Graph, pass_name: str, make_replacement) -> tuple[Graph, PassReport]:
    shapes = infer_shapes(g)
    report = PassReport(pass_name)
    taken = _taken_names(g)
    removed, added, renames = [], [], {}
    constants: dict[str, Tensor] = {}
    new_inputs: list[ValueInfo] = []
    for node in nodes_in_order(g):
        if node.op is not OpKind.Pad:
            continue
        site = _channel_pad_site(node, shapes)
        if isinstance(site, str):
            report.skipped.append((node.name, site))
            continue
        before, after = site
        if before == 0 and after == 0:
            _drop_zero_pad(g, node, shapes, taken, removed, added, renames)
        else:
            reason = make_replacement(node, shapes, before, after, taken, added, constants, new_inputs)
            if reason:
                report.skipped.append((node.name, reason))
                continue
            removed.append(node.name)
        report.sites_matched += 1
    if not report.sites_matched:
        return g, report
    result = rewire_replace(g, removed, added, constants, renames, new_inputs)
    report.nodes_removed = removed
    report.nodes_added = [n.name for n in added]
    report.constants_added = list(constants)
    report.inputs_added = [v.name for v in new_inputs]
    return result, report


def pad_to_conv2d(g: Graph) -> tuple[Graph, PassReport]:
    """Replace zero channel-wise Pads with a 1x1 Conv2D over an identity-pad filter."""

    def replace(node, shapes, before, after, taken, added, constants, new_inputs):
        x = shapes[node.inputs[0]]
        if len(x.shape) != 4:
            return "non-NHWC (rank != 4) input"
        if x.shape[-1] < 1:
            return "empty channel axis"
        fname = unique_name(f"{node.name}/pad_filter", taken)
        cname = unique_name(f"{node.name}/conv", taken | {fname})
        taken.update((fname, cname))
        constants[fname] = build_identity_pad_filter(x.shape[-1], before, after)
        added.append(
            Node(
                cname,
                OpKind.Conv2D,
                (node.inputs[0], fname),
                node.outputs,
                {"strides": (1, 1), "padding_scheme": "VALID"},
            )
        )
        return None

    return _rewrite_pads(g, "pad_to_conv2d", replace)


def pad_to_concat(g: Graph, zeros_as: str = "constant") -> tuple[Graph, PassReport]:
    """Replace zero channel-wise Pads with a channel Concat against zero tensors.

    ``zeros_as="graph_input"`` feeds the zero blocks in as extra graph inputs
    instead of embedding them, which the offload planner then charges as
    host-to-accelerator uploads.
    """
    if zeros_as not in ("constant", "graph_input"):
        raise DomainError(f"zeros_as must be 'constant' or 'graph_input', got {zeros_as!r}")

    def replace(node, shapes, before, after, taken, added, constants, new_inputs):
        x = shapes[node.inputs[0]]
        parts = []
        for label, amount in (("before", before), ("after", after)):
            if not amount:
                parts.append(None)
                continue
            zshape = x.shape[:-1] + (amount,)
            zname = unique_name(f"{node.name}/zeros_{label}", taken)
            taken.add(zname)
            if zeros_as == "constant":
                constants[zname] = Tensor.zeros(DType.F32, zshape)
            else:
                new_inputs.append(ValueInfo(zname, DType.F32, zshape))
            parts.append(zname)
        ins = tuple(p for p in (parts[0], node.inputs[0], parts[1]) if p is not None)
        cname = unique_name(f"{node.name}/concat", taken)
        taken.add(cname)
        added.append(Node(cname, OpKind.Concat, ins, node.outputs, {"axis": len(x.shape) - 1}))
        return None

    return _rewrite_pads(g, "pad_to_concat", replace)


def eliminate_dequantize(g: Graph) -> tuple[Graph, PassReport]:
    """Fold F16 constant -> Dequantize into a single F32 constant."""
    report = PassReport("eliminate_dequantize")
    removed, constants = [], {}
    for node in nodes_in_order(g):
        if node.op is not OpKind.Dequantize:
            continue
        src = node.inputs[0]
        if src not in g.constants:
            report.skipped.append((node.name, "activation dequantize"))
            continue
        removed.append(node.name)
        constants[node.outputs[0]] = cast_f16_to_f32(g.constants[src])
        report.sites_matched += 1
    if not report.sites_matched:
        return g, report
    result = rewire_replace(g, removed, (), constants)
    report.nodes_removed = removed
    report.constants_added = list(constants)
    return result, report


def split_output_branches(g: Graph, output_name: str) -> tuple[Graph, PassReport, OutputMapping]:
    """Expose each input of the Concat producing ``output_name`` as its own output.

    New outputs are named ``output_name#k``.  The returned mapping rebuilds
    the original output by concatenating the parts along the original axis.
    """
    if output_name not in g.outputs:
        raise ApplicabilityError(f"{output_name!r} is not a graph output")
    producer = g.producers().get(output_name)
    if producer is None or producer.op is not OpKind.Concat:
        raise ApplicabilityError(f"{output_name!r} is not produced by a Concat node")
    shapes = infer_shapes(g)
    rank = len(shapes[output_name].shape)
    axis = producer.attrs["axis"] % rank
    report = PassReport("split_output_branches")
    taken = _taken_names(g)
    producers = g.producers()
    added: list[Node] = []
    renames: dict[str, str] = {}
    parts = []
    new_names = []
    counts: dict[str, int] = {}
    for e in producer.inputs:
        counts[e] = counts.get(e, 0) + 1
    for k, e in enumerate(producer.inputs):
        new = unique_name(f"{output_name}#{k}", taken)
        taken.add(new)
        parts.append((new, shapes[e].shape[axis]))
        new_names.append(new)
        renamable = e in producers and counts[e] == 1 and e not in g.outputs and e not in renames
        if renamable:
            renames[e] = new
        else:
            nm = unique_name(f"{producer.name}/branch{k}", taken)
            taken.add(nm)
            added.append(_identity_node(nm, e, new, shapes[e].shape))
    outputs = []
    for o in g.outputs:
        outputs.extend(new_names if o == output_name else [o])
    # Renamed edges get their new name at the producer; rewire re-points consumers.
    nodes = [
        Node(n.name, n.op, n.inputs, tuple(renames.get(o, o) for o in n.outputs), n.attrs)
        for n in g.nodes
        if n.name != producer.name
    ]
    base = Graph(g.name, g.inputs, g.outputs, g.constants, nodes)
    result = rewire_replace(base, (), added, None, renames, outputs=outputs)
    report.sites_matched = 1
    report.nodes_removed = [producer.name]
    report.nodes_added = [n.name for n in added]
    return result, report, OutputMapping(output_name, axis, tuple(parts))


PASSES: dict[str, Callable] = {
    "pad_to_conv2d": pad_to_conv2d,
    "pad_to_concat": pad_to_concat,
    "eliminate_dequantize": eliminate_dequantize,
    "split_output_branches": split_output_branches,
}


@dataclass
class PipelineResult:
    graph: Graph
    reports: list[PassReport]
    mappings: list[OutputMapping]
    error: SurgeryError | None = None


def apply_passes(g: Graph, passes: Sequence[Mapping]) -> PipelineResult:
    """Run ``[{"pass": name, "options": {...}}, ...]`` in order.

    The first failing pass stops the pipeline; the result then carries the
    error, the graph before the failing pass, and the reports gathered so far.
    """
    report = validate(g)
    if not report.ok:
        return PipelineResult(g, [], [], ApplicabilityError("input graph is invalid:\n" + report.describe()))
    reports: list[PassReport] = []
    mappings: list[OutputMapping] = []
    current = g
    for spec in passes:
        name = spec.get("pass")
        options = dict(spec.get("options") or {})
        fn = PASSES.get(name)
        if fn is None:
            return PipelineResult(current, reports, mappings, ApplicabilityError(f"unknown pass {name!r}"))
        try:
            out = fn(current, **options)
        except TypeError as exc:
            return PipelineResult(current, reports, mappings, ApplicabilityError(f"bad options for {name}: {exc}"))
        except SurgeryError as exc:
            return PipelineResult(current, reports, mappings, exc)
        if name == "split_output_branches":
            current, rep, mapping = out
            mappings.append(mapping)
        else:
            current, rep = out
        reports.append(rep)
    return PipelineResult(current, reports, mappings)


def _compare(a: Tensor, b: Tensor) -> tuple[float, bool]:
    if a.dtype is not b.dtype or a.shape != b.shape:
        raise VerificationError(f"output mismatch: {a!r} vs {b!r}")
    if a.bit_equal(b):
        return 0.0, True
    diff = np.abs(a.array.astype(np.float64) - b.array.astype(np.float64))
    # A NaN on either side (or -0.0 vs +0.0) still breaks bit-exactness.
    return (math.inf if np.isnan(diff).any() else float(diff.max())), False


def verify_equivalence(
    before: Graph,
    after: Graph,
    n_samples: int = 100,
    seed: int = 42,
    tolerance: float = 0.0,
    output_mapping: OutputMapping | Sequence[OutputMapping] | None = None,
) -> EquivalenceReport:
    """Feed both graphs identical seeded uniform [-1, 1] inputs and compare outputs.

    Inputs that exist only in ``after`` (zero blocks added by
    ``pad_to_concat(zeros_as="graph_input")``) are fed zeros.  Outputs of
    ``before`` that were split are rebuilt through ``output_mapping`` first.
    ``tolerance`` does not change the report; use :meth:`EquivalenceReport.within`.
    """
    if tolerance < 0:
        raise DomainError("tolerance must be non-negative")
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if output_mapping is None:
        mappings = {}
    elif isinstance(output_mapping, OutputMapping):
        mappings = {output_mapping.output: output_mapping}
    else:
        mappings = {m.output: m for m in output_mapping}

    before_inputs = {v.name: v for v in before.inputs}
    after_inputs = {v.name: v for v in after.inputs}
    for name, v in before_inputs.items():
        if after_inputs.get(name) != v:
            raise VerificationError(f"input {name!r} differs or is missing after rewrite")
    extra_inputs = [v for k, v in after_inputs.items() if k not in before_inputs]

    after_outputs = set(after.outputs)
    for o in before.outputs:
        if o in mappings:
            missing = [n for n, _ in mappings[o].parts if n not in after_outputs]
            if missing:
                raise VerificationError(f"mapped parts {missing} of {o!r} are not outputs of the rewritten graph")
        elif o not in after_outputs:
            raise VerificationError(f"output {o!r} missing after rewrite and not covered by a mapping")

    rng = np.random.default_rng(seed)
    max_diff = {o: 0.0 for o in before.outputs}
    exact = {o: True for o in before.outputs}
    for _ in range(n_samples):
        feeds = interpreter.random_feeds(before, rng)
        out_a = interpreter.run(before, feeds)
        feeds_b = dict(feeds)
        for v in extra_inputs:
            feeds_b[v.name] = Tensor.zeros(v.dtype, v.shape)
        out_b = interpreter.run(after, feeds_b)
        for o in before.outputs:
            got = mappings[o].reconstruct(out_b) if o in mappings else out_b[o]
            d, e = _compare(out_a[o], got)
            max_diff[o] = max(max_diff[o], d)
            exact[o] = exact[o] and e
    return EquivalenceReport(n_samples, seed, max_diff, exact)
