"""Text formats: graph exchange documents, feeds, pass specs, mappings, stage times.

Graph documents are JSON with a fixed layout so that writing the same graph
twice gives byte-identical files::

    {
      "version": 1,
      "name": ...,
      "inputs": [{"name", "dtype", "shape"}, ...],      # declaration order
      "outputs": [...],
      "constants": [{"name", "dtype", "shape", "data"}, ...],   # sorted by name
      "nodes": [{"name", "op", "inputs", "outputs", "attrs"}, ...]  # topo order, ties by name
    }

Constant data is a flat row-major array.  F32 values use the shortest
decimal that round-trips through float32; F16 values are stored as their
unsigned 16-bit bit patterns.  Attribute keys are sorted.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DomainError, ParseError, SurgeryError, VersionError
from .graph import Graph, Node, OpKind, ValueInfo, nodes_in_order, validate
from .surgery import OutputMapping
from .tensor import DType, Tensor

FORMAT_VERSION = 1


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        raise TypeError("bool is not a number")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return "NaN"
    if math.isinf(f):
        return "Infinity" if f > 0 else "-Infinity"
    return repr(f)


def _f32_token(v: np.float32) -> str:
    if np.isnan(v):
        return "NaN"
    if np.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return str(v)


def _data_tokens(t: Tensor) -> list[str]:
    if t.dtype is DType.F32:
        return [_f32_token(v) for v in t.array.ravel()]
    return [str(v) for v in t.flat_data()]


def _tensor_record(name: str, t: Tensor) -> str:
    return (
        f'{{"name": {json.dumps(name)}, "dtype": "{t.dtype.value}", '
        f'"shape": [{", ".join(str(d) for d in t.shape)}], '
        f'"data": [{", ".join(_data_tokens(t))}]}}'
    )


def _json_value(v: Any) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_json_value(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    return _num(v)


def _block(items: Sequence[str], indent: str = "    ") -> str:
    if not items:
        return "[]"
    return "[\n" + ",\n".join(indent + i for i in items) + "\n  ]"


def dumps_graph(g: Graph) -> str:
    report = validate(g)
    if not report.ok:
        raise DomainError("refusing to serialize an invalid graph:\n" + report.describe())
    inputs = [
        f'{{"name": {json.dumps(v.name)}, "dtype": "{v.dtype.value}", "shape": {_json_value(v.shape)}}}'
        for v in g.inputs
    ]
    constants = [_tensor_record(k, g.constants[k]) for k in sorted(g.constants)]
    nodes = []
    # ties broken by name so value-equal graphs serialize identically
    for n in nodes_in_order(replace(g, nodes=sorted(g.nodes, key=lambda n: n.name))):
        attrs = n.attrs_json()
        attr_text = "{" + ", ".join(f"{json.dumps(k)}: {_json_value(attrs[k])}" for k in sorted(attrs)) + "}"
        nodes.append(
            f'{{"name": {json.dumps(n.name)}, "op": "{n.op.value}", '
            f'"inputs": {_json_value(n.inputs)}, "outputs": {_json_value(n.outputs)}, "attrs": {attr_text}}}'
        )
    return (
        "{\n"
        f'  "version": {FORMAT_VERSION},\n'
        f'  "name": {json.dumps(g.name)},\n'
        f'  "inputs": {_block(inputs)},\n'
        f'  "outputs": {_json_value(g.outputs)},\n'
        f'  "constants": {_block(constants)},\n'
        f'  "nodes": {_block(nodes)}\n'
        "}\n"
    )


def save_graph(g: Graph, path: str | Path) -> None:
    Path(path).write_text(dumps_graph(g))


class _Reader:
    """Field access that reports a JSON-path-like location on failure."""

    def __init__(self, source: str | None):
        self.source = source

    def fail(self, where: str, msg: str):
        raise ParseError(f"{where}: {msg}", self.source)

    def get(self, obj, key, where, kind=None):
        if not isinstance(obj, dict):
            self.fail(where, "expected an object")
        if key not in obj:
            self.fail(where, f"missing field {key!r}")
        value = obj[key]
        if kind is not None and (not isinstance(value, kind) or (isinstance(value, bool) and kind is not bool)):
            self.fail(f"{where}.{key}", f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
        return value

    def shape(self, obj, where):
        shape = self.get(obj, "shape", where, list)
        if not all(isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in shape):
            self.fail(f"{where}.shape", "dimensions must be non-negative integers")
        return shape

    def dtype(self, obj, where):
        raw = self.get(obj, "dtype", where, str)
        try:
            return DType(raw)
        except ValueError:
            self.fail(f"{where}.dtype", f"unknown dtype {raw!r}")

    def tensor(self, obj, where) -> tuple[str, Tensor]:
        name = self.get(obj, "name", where, str)
        dtype = self.dtype(obj, where)
        shape = self.shape(obj, where)
        data = self.get(obj, "data", where, list)
        if dtype is not DType.F32 and not all(isinstance(v, int) and not isinstance(v, bool) for v in data):
            self.fail(f"{where}.data", f"{dtype.value} data must be integers")
        if dtype is DType.F32 and not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in data):
            self.fail(f"{where}.data", "F32 data must be numbers")
        try:
            return name, Tensor.from_flat(dtype, shape, data)
        except (SurgeryError, ValueError, TypeError, OverflowError) as exc:
            self.fail(f"{where}.data", str(exc))


def _parse_json(text: str, source: str | None):
    if not text.strip():
        raise ParseError("empty document", source, 1)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{exc.msg} (column {exc.colno})", source, exc.lineno) from None


def _check_version(doc, r: _Reader):
    if not isinstance(doc, dict):
        r.fail("$", "document must be an object")
    version = r.get(doc, "version", "$")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported version {version!r} (expected {FORMAT_VERSION})", r.source)


def loads_graph(text: str, source: str | None = None, check: bool = True) -> Graph:
    doc = _parse_json(text, source)
    r = _Reader(source)
    _check_version(doc, r)
    name = r.get(doc, "name", "$", str)
    inputs = []
    for i, v in enumerate(r.get(doc, "inputs", "$", list)):
        where = f"inputs[{i}]"
        inputs.append(ValueInfo(r.get(v, "name", where, str), r.dtype(v, where), r.shape(v, where)))
    outputs = r.get(doc, "outputs", "$", list)
    if not all(isinstance(o, str) for o in outputs):
        r.fail("outputs", "entries must be strings")
    constants = {}
    for i, c in enumerate(r.get(doc, "constants", "$", list)):
        cname, t = r.tensor(c, f"constants[{i}]")
        if cname in constants:
            r.fail(f"constants[{i}].name", f"duplicate constant {cname!r}")
        constants[cname] = t
    nodes = []
    for i, n in enumerate(r.get(doc, "nodes", "$", list)):
        where = f"nodes[{i}]"
        op_raw = r.get(n, "op", where, str)
        try:
            op = OpKind(op_raw)
        except ValueError:
            r.fail(f"{where}.op", f"unknown op {op_raw!r}")
        ins = r.get(n, "inputs", where, list)
        outs = r.get(n, "outputs", where, list)
        if not all(isinstance(e, str) for e in ins + outs):
            r.fail(where, "edge names must be strings")
        attrs = n.get("attrs", {})
        if not isinstance(attrs, dict):
            r.fail(f"{where}.attrs", "expected an object")
        nodes.append(Node(r.get(n, "name", where, str), op, ins, outs, attrs))
    g = Graph(name, inputs, outputs, constants, nodes)
    report = validate(g) if check else None
    if report is not None and not report.ok:
        raise ParseError("graph failed validation:\n" + report.describe(), source)
    return g


def load_graph(path: str | Path) -> Graph:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", str(path)) from None
    return loads_graph(text, str(path))


def read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", str(path)) from None


# Feeds: {"version": 1, "samples": [[tensor, ...], ...]}
def dumps_feeds(samples: Sequence[Mapping[str, Tensor]]) -> str:
    rows = []
    for s in samples:
        rows.append("[" + ", ".join(_tensor_record(k, s[k]) for k in s) + "]")
    return '{\n  "version": 1,\n  "samples": ' + _block(rows) + "\n}\n"


def loads_feeds(text: str, source: str | None = None) -> list[dict[str, Tensor]]:
    doc = _parse_json(text, source)
    r = _Reader(source)
    _check_version(doc, r)
    samples = []
    for i, s in enumerate(r.get(doc, "samples", "$", list)):
        if not isinstance(s, list):
            r.fail(f"samples[{i}]", "expected a list of tensors")
        feed = {}
        for j, t in enumerate(s):
            name, tensor = r.tensor(t, f"samples[{i}][{j}]")
            if name in feed:
                r.fail(f"samples[{i}][{j}].name", f"duplicate feed {name!r}")
            feed[name] = tensor
        samples.append(feed)
    if not samples:
        r.fail("samples", "at least one sample is required")
    return samples


def load_feeds(path: str | Path) -> list[dict[str, Tensor]]:
    return loads_feeds(read_text(path), str(path))


# Pass pipeline: [{"pass": name, "options": {...}}, ...]
def loads_passes(text: str, source: str | None = None) -> list[dict]:
    doc = _parse_json(text, source)
    r = _Reader(source)
    if isinstance(doc, dict):
        _check_version(doc, r)
        doc = r.get(doc, "passes", "$", list)
    if not isinstance(doc, list):
        r.fail("$", "pass spec must be a list of {pass, options}")
    out = []
    for i, spec in enumerate(doc):
        name = r.get(spec, "pass", f"[{i}]", str)
        options = spec.get("options", {})
        if not isinstance(options, dict):
            r.fail(f"[{i}].options", "expected an object")
        out.append({"pass": name, "options": options})
    return out


def load_passes(path: str | Path) -> list[dict]:
    return loads_passes(read_text(path), str(path))


def dumps_mappings(mappings: Sequence[OutputMapping]) -> str:
    return json.dumps({"version": 1, "mappings": [m.to_dict() for m in mappings]}, indent=2) + "\n"


def load_mappings(path: str | Path) -> list[OutputMapping]:
    source = str(path)
    doc = _parse_json(read_text(path), source)
    r = _Reader(source)
    _check_version(doc, r)
    out = []
    for i, m in enumerate(r.get(doc, "mappings", "$", list)):
        try:
            out.append(OutputMapping.from_dict(m))
        except (KeyError, TypeError, ValueError) as exc:
            r.fail(f"mappings[{i}]", f"malformed mapping ({exc})")
    return out


def load_json_document(path: str | Path) -> Any:
    return _parse_json(read_text(path), str(path))


def loads_stage_times(text: str, source: str | None = None) -> list[tuple[str, float]]:
    """One ``name: ms`` pair per line; blank lines and ``#`` comments are ignored."""
    stages = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = line.rpartition(":")
        if not sep or not name.strip():
            raise ParseError(f"expected 'name: ms', got {raw.strip()!r}", source, lineno)
        try:
            ms = float(value)
        except ValueError:
            raise ParseError(f"not a number: {value.strip()!r}", source, lineno) from None
        if math.isnan(ms) or ms < 0:
            raise ParseError(f"stage time must be a non-negative number, got {value.strip()}", source, lineno)
        stages.append((name.strip(), ms))
    if not stages:
        raise ParseError("no stages found", source)
    return stages


def load_stage_times(path: str | Path) -> list[tuple[str, float]]:
    return loads_stage_times(read_text(path), str(path))
