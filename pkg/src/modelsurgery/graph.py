"""Operator graph data model.

A :class:`Graph` is an immutable DAG over named edges.  Every edge is
produced by exactly one of: a graph input, a constant, or a node output.
Layout is fixed to NHWC with Conv2D filters stored as ``[kh, kw, Cin, Cout]``.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import GraphCycleError, RewireError, ShapeError
from .tensor import DType, Tensor


class OpKind(str, enum.Enum):
    Conv2D = "Conv2D"
    Pad = "Pad"
    Concat = "Concat"
    MatMul = "MatMul"
    Add = "Add"
    Mul = "Mul"
    Relu = "Relu"
    Sigmoid = "Sigmoid"
    Reshape = "Reshape"
    Dequantize = "Dequantize"


UNARY_OPS = frozenset({OpKind.Pad, OpKind.Relu, OpKind.Sigmoid, OpKind.Reshape, OpKind.Dequantize})
ELEMENTWISE_BINARY = frozenset({OpKind.Add, OpKind.Mul})

# (min, max) input arity; None means unbounded.
_ARITY = {
    OpKind.Conv2D: (2, 3),
    OpKind.MatMul: (2, 2),
    OpKind.Concat: (2, None),
    OpKind.Add: (2, 2),
    OpKind.Mul: (2, 2),
    **{op: (1, 1) for op in UNARY_OPS},
}

_ATTR_KEYS = {
    OpKind.Conv2D: {"strides", "padding_scheme"},
    OpKind.Pad: {"paddings", "mode", "constant_value"},
    OpKind.Concat: {"axis"},
    OpKind.Reshape: {"new_shape"},
}


def _freeze(value):
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


def _thaw(value):
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


def default_attrs(op: OpKind) -> dict:
    if op is OpKind.Conv2D:
        return {"strides": (1, 1), "padding_scheme": "VALID"}
    if op is OpKind.Pad:
        return {"mode": "CONSTANT", "constant_value": 0.0}
    return {}


@dataclass(frozen=True)
class Node:
    name: str
    op: OpKind
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attrs: Mapping = field(default_factory=dict)

    def __post_init__(self):
        op = OpKind(self.op)
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        attrs = default_attrs(op)
        attrs.update({k: _freeze(v) for k, v in dict(self.attrs).items()})
        object.__setattr__(self, "attrs", attrs)

    @property
    def output(self) -> str:
        return self.outputs[0]

    def attrs_json(self) -> dict:
        return {k: _thaw(v) for k, v in self.attrs.items()}

    def __hash__(self):
        return hash((self.name, self.op, self.inputs, self.outputs))


@dataclass(frozen=True)
class ValueInfo:
    name: str
    dtype: DType
    shape: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dtype", DType(self.dtype))
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        return self.size * self.dtype.itemsize


@dataclass(frozen=True, eq=False)
class Graph:
    name: str
    inputs: tuple[ValueInfo, ...]
    outputs: tuple[str, ...]
    constants: Mapping[str, Tensor]
    nodes: tuple[Node, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "constants", dict(self.constants))
        object.__setattr__(self, "nodes", tuple(self.nodes))

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.name == other.name
            and self.inputs == other.inputs
            and self.outputs == other.outputs
            and self.constants == other.constants
            and {n.name: n for n in self.nodes} == {n.name: n for n in other.nodes}
        )

    __hash__ = None

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.inputs)

    def producers(self) -> dict[str, Node]:
        """Edge name -> producing node (node outputs only)."""
        return {e: n for n in self.nodes for e in n.outputs}

    def consumers(self) -> dict[str, list[Node]]:
        out: dict[str, list[Node]] = {}
        for n in self.nodes:
            for e in dict.fromkeys(n.inputs):
                out.setdefault(e, []).append(n)
        return out

    def edges(self) -> list[str]:
        seen = dict.fromkeys(self.input_names)
        seen.update(dict.fromkeys(self.constants))
        for n in self.nodes:
            seen.update(dict.fromkeys(n.outputs))
        return list(seen)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str

    def __str__(self):
        return f"[{self.kind}] {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def describe(self) -> str:
        return "ok" if self.ok else "\n".join(str(v) for v in self.violations)


def _check_attrs(node: Node) -> list[str]:
    problems = []
    a = node.attrs
    extra = set(a) - _ATTR_KEYS.get(node.op, set())
    if extra:
        problems.append(f"unexpected attributes {sorted(extra)}")
    if node.op is OpKind.Conv2D:
        s = a.get("strides")
        if not (isinstance(s, tuple) and len(s) == 2 and all(isinstance(v, int) and v >= 1 for v in s)):
            problems.append(f"strides must be two positive ints, got {_thaw(s)}")
        if a.get("padding_scheme") not in ("VALID", "SAME"):
            problems.append(f"padding_scheme must be VALID or SAME, got {a.get('padding_scheme')!r}")
    elif node.op is OpKind.Pad:
        p = a.get("paddings")
        if not (
            isinstance(p, tuple)
            and all(
                isinstance(r, tuple) and len(r) == 2 and all(isinstance(v, int) and v >= 0 for v in r)
                for r in p
            )
        ):
            problems.append(f"paddings must be per-axis [before, after] non-negative ints, got {_thaw(p)}")
        if a.get("mode") != "CONSTANT":
            problems.append(f"Pad mode must be CONSTANT, got {a.get('mode')!r}")
        cv = a.get("constant_value")
        if not isinstance(cv, (int, float)) or isinstance(cv, bool) or math.isnan(cv):
            problems.append(f"constant_value must be a real number, got {cv!r}")
    elif node.op is OpKind.Concat:
        if not isinstance(a.get("axis"), int) or isinstance(a.get("axis"), bool):
            problems.append(f"axis must be an int, got {a.get('axis')!r}")
    elif node.op is OpKind.Reshape:
        ns = a.get("new_shape")
        if not (isinstance(ns, tuple) and all(isinstance(v, int) and v >= 0 for v in ns)):
            problems.append(f"new_shape must be non-negative ints, got {_thaw(ns)}")
    return problems


def _structural_violations(g: Graph) -> list[Violation]:
    out: list[Violation] = []
    producers: dict[str, str] = {}

    def produce(edge: str, who: str):
        if edge in producers:
            out.append(Violation("duplicate_edge", f"edge {edge!r} produced by both {producers[edge]} and {who}"))
        else:
            producers[edge] = who

    for v in g.inputs:
        produce(v.name, "graph input")
    for c in g.constants:
        produce(c, "constant")
    seen_names: set[str] = set()
    for n in g.nodes:
        if n.name in seen_names:
            out.append(Violation("duplicate_name", f"node name {n.name!r} used more than once"))
        seen_names.add(n.name)
        lo, hi = _ARITY[n.op]
        k = len(n.inputs)
        if k < lo or (hi is not None and k > hi):
            want = f"{lo}" if lo == hi else f"{lo}..{hi if hi is not None else 'n'}"
            out.append(Violation("arity", f"{n.name}: {n.op.value} takes {want} inputs, got {k}"))
        if len(n.outputs) != 1:
            out.append(Violation("arity", f"{n.name}: {n.op.value} has exactly 1 output, got {len(n.outputs)}"))
        for problem in _check_attrs(n):
            out.append(Violation("attribute", f"{n.name}: {problem}"))
        for e in n.outputs:
            produce(e, f"node {n.name}")
    for n in g.nodes:
        for e in n.inputs:
            if e not in producers:
                out.append(Violation("unknown_edge", f"{n.name}: input edge {e!r} is never produced"))
    for e in g.outputs:
        if e not in producers:
            out.append(Violation("unknown_edge", f"graph output {e!r} is never produced"))
    if len(set(g.outputs)) != len(g.outputs):
        out.append(Violation("duplicate_name", "graph outputs listed more than once"))
    try:
        topo_order(g)
    except GraphCycleError as exc:
        out.append(Violation("cycle", str(exc)))
    return out


def validate(g: Graph) -> ValidationReport:
    """Collect every structural, schema and type problem; never raises."""
    violations = _structural_violations(g)
    if not violations:
        try:
            infer_shapes(g)
        except ShapeError as exc:
            violations.append(Violation("type", str(exc)))
    return ValidationReport(tuple(violations))


def topo_order(g: Graph) -> list[str]:
    """Kahn's algorithm; among ready nodes the earliest-inserted goes first."""
    index = {n.name: i for i, n in enumerate(g.nodes)}
    producer = {}
    for n in g.nodes:
        for e in n.outputs:
            producer.setdefault(e, n.name)
    deps = {n.name: set() for n in g.nodes}
    users: dict[str, set[str]] = {n.name: set() for n in g.nodes}
    for n in g.nodes:
        for e in n.inputs:
            p = producer.get(e)
            if p is not None:
                deps[n.name].add(p)
                users[p].add(n.name)
    remaining = {k: len(v) for k, v in deps.items()}
    ready = [index[k] for k, v in remaining.items() if v == 0]
    heapq.heapify(ready)
    order = []
    names = [n.name for n in g.nodes]
    while ready:
        name = names[heapq.heappop(ready)]
        order.append(name)
        for u in users[name]:
            remaining[u] -= 1
            if remaining[u] == 0:
                heapq.heappush(ready, index[u])
    if len(order) != len(remaining):
        stuck = sorted(k for k, v in remaining.items() if v > 0)
        raise GraphCycleError(f"cycle through nodes {stuck}")
    return order


def nodes_in_order(g: Graph) -> list[Node]:
    by_name = {n.name: n for n in g.nodes}
    return [by_name[k] for k in topo_order(g)]


def _conv_out(size: int, k: int, s: int, scheme: str) -> int:
    if scheme == "SAME":
        return -(-size // s)
    return (size - k) // s + 1


def same_padding(size: int, k: int, s: int) -> tuple[int, int]:
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def infer_node(node: Node, ins: Sequence[ValueInfo]) -> ValueInfo:
    """Shape/dtype rule for one node given its input infos."""
    op, a = node.op, node.attrs
    out_name = node.outputs[0]

    def fail(msg):
        raise ShapeError(msg, node.name)

    if op is not OpKind.Dequantize:
        for v in ins:
            if v.dtype is DType.F16:
                fail(f"{op.value} cannot consume F16 edge {v.name!r}; cast to F32 first")
    if op is OpKind.Conv2D:
        x, w = ins[0], ins[1]
        if x.dtype is not DType.F32 or w.dtype is not DType.F32:
            fail("Conv2D requires F32 data and filter")
        if len(x.shape) != 4 or len(w.shape) != 4:
            fail(f"Conv2D needs NHWC data and [kh,kw,Cin,Cout] filter, got {list(x.shape)} and {list(w.shape)}")
        n, h, wd, c = x.shape
        kh, kw, cin, cout = w.shape
        if cin != c:
            fail(f"filter Cin {cin} != data channels {c}")
        if kh < 1 or kw < 1:
            fail("filter spatial dims must be positive")
        sh, sw = a["strides"]
        scheme = a["padding_scheme"]
        ho, wo = _conv_out(h, kh, sh, scheme), _conv_out(wd, kw, sw, scheme)
        if ho < 1 or wo < 1:
            fail(f"filter {kh}x{kw} larger than input {h}x{wd} under VALID padding")
        if len(ins) == 3:
            b = ins[2]
            if b.dtype is not DType.F32 or b.shape != (cout,):
                fail(f"bias must be F32 [{cout}], got {b.dtype.value} {list(b.shape)}")
        return ValueInfo(out_name, DType.F32, (n, ho, wo, cout))
    if op is OpKind.MatMul:
        x, y = ins
        if x.dtype is not DType.F32 or y.dtype is not DType.F32:
            fail("MatMul requires F32 operands")
        if len(x.shape) != 2 or len(y.shape) != 2 or x.shape[1] != y.shape[0]:
            fail(f"MatMul needs [m,k]x[k,n], got {list(x.shape)} x {list(y.shape)}")
        return ValueInfo(out_name, DType.F32, (x.shape[0], y.shape[1]))
    if op is OpKind.Pad:
        (x,) = ins
        p = a["paddings"]
        if len(p) != len(x.shape):
            fail(f"paddings rank {len(p)} != input rank {len(x.shape)}")
        return ValueInfo(out_name, x.dtype, tuple(d + b + e for d, (b, e) in zip(x.shape, p)))
    if op is OpKind.Concat:
        rank = len(ins[0].shape)
        axis = a["axis"]
        if rank == 0 or not -rank <= axis < rank:
            fail(f"axis {axis} out of range for rank {rank}")
        axis %= rank
        total = 0
        for v in ins:
            if v.dtype is not ins[0].dtype:
                fail(f"Concat dtype mismatch {v.dtype.value} vs {ins[0].dtype.value}")
            if len(v.shape) != rank or any(
                d != d0 for i, (d, d0) in enumerate(zip(v.shape, ins[0].shape)) if i != axis
            ):
                fail(f"Concat shapes {[list(u.shape) for u in ins]} disagree off axis {axis}")
            total += v.shape[axis]
        shape = list(ins[0].shape)
        shape[axis] = total
        return ValueInfo(out_name, ins[0].dtype, tuple(shape))
    if op in ELEMENTWISE_BINARY:
        x, y = ins
        if x.shape != y.shape or x.dtype is not y.dtype:
            fail(
                f"{op.value} needs identical operands, "
                f"got {x.dtype.value}{list(x.shape)} and {y.dtype.value}{list(y.shape)}"
            )
        return ValueInfo(out_name, x.dtype, x.shape)
    if op is OpKind.Relu:
        return ValueInfo(out_name, ins[0].dtype, ins[0].shape)
    if op is OpKind.Sigmoid:
        if ins[0].dtype is not DType.F32:
            fail("Sigmoid requires F32")
        return ValueInfo(out_name, DType.F32, ins[0].shape)
    if op is OpKind.Reshape:
        ns = tuple(a["new_shape"])
        if math.prod(ns) != ins[0].size:
            fail(f"cannot reshape {list(ins[0].shape)} to {list(ns)}")
        return ValueInfo(out_name, ins[0].dtype, ns)
    if op is OpKind.Dequantize:
        if ins[0].dtype is not DType.F16:
            fail(f"Dequantize expects F16 input, got {ins[0].dtype.value}")
        return ValueInfo(out_name, DType.F32, ins[0].shape)
    fail(f"no shape rule for {op}")


def infer_shapes(g: Graph) -> dict[str, ValueInfo]:
    info: dict[str, ValueInfo] = {v.name: v for v in g.inputs}
    for name, t in g.constants.items():
        info[name] = ValueInfo(name, t.dtype, t.shape)
    for node in nodes_in_order(g):
        missing = [e for e in node.inputs if e not in info]
        if missing:
            raise ShapeError(f"unknown input edges {missing}", node.name)
        info[node.outputs[0]] = infer_node(node, [info[e] for e in node.inputs])
    return info


def rewire_replace(
    g: Graph,
    remove: Iterable[str] = (),
    add: Iterable[Node] = (),
    add_constants: Mapping[str, Tensor] | None = None,
    edge_renames: Mapping[str, str] | None = None,
    add_inputs: Iterable[ValueInfo] = (),
    outputs: Sequence[str] | None = None,
) -> Graph:
    """Return a new graph with ``remove`` dropped and ``add`` spliced in.

    Added nodes take the insertion slot of the first removed node, so
    topological tie-breaking stays close to the original order.  Consumers
    (and graph outputs) of a renamed edge are re-pointed to the new name.
    Constants nobody reads any more are pruned.  ``outputs`` optionally
    replaces the output list before renames are applied.
    """
    remove = list(remove)
    add = list(add)
    renames = dict(edge_renames or {})
    names = {n.name for n in g.nodes}
    unknown = [r for r in remove if r not in names]
    if unknown:
        raise RewireError(
            ValidationReport(tuple(Violation("unknown_node", f"cannot remove missing node {r!r}") for r in unknown))
        )

    def rn(e: str) -> str:
        seen = set()
        while e in renames and e not in seen:
            seen.add(e)
            e = renames[e]
        return e

    removed = set(remove)
    kept: list[Node] = []
    inserted = False
    for n in g.nodes:
        if n.name in removed:
            if not inserted:
                kept.extend(add)
                inserted = True
            continue
        kept.append(n)
    if not inserted:
        kept.extend(add)
    nodes = [
        Node(n.name, n.op, tuple(rn(e) for e in n.inputs), n.outputs, n.attrs) for n in kept
    ]
    new_outputs = tuple(rn(e) for e in (g.outputs if outputs is None else outputs))
    constants = dict(g.constants)
    constants.update(add_constants or {})
    referenced = {e for n in nodes for e in n.inputs} | set(new_outputs)
    constants = {k: v for k, v in constants.items() if k in referenced}
    result = Graph(g.name, tuple(g.inputs) + tuple(add_inputs), new_outputs, constants, tuple(nodes))
    report = validate(result)
    if not report.ok:
        raise RewireError(report)
    return result


def unique_name(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    i = 1
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"
