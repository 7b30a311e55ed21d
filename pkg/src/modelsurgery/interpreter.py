"""Reference executor: the ground truth every rewrite is checked against."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import DomainError, FeedError
from .graph import Graph, Node, OpKind, infer_shapes, nodes_in_order, same_padding
from .tensor import DType, Tensor, cast_f16_to_f32


@dataclass
class ExecutionTrace:
    """Per-edge extrema over every executed sample, plus per-node op counts."""

    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    op_counts: dict[str, int] = field(default_factory=dict)
    samples: int = 0

    def observe(self, edge: str, t: Tensor) -> None:
        if t.size == 0 or t.dtype is DType.F16:
            # F16 is storage-only; record it through its exact F32 image.
            if t.size == 0:
                return
            t = cast_f16_to_f32(t)
        lo, hi = float(t.array.min()), float(t.array.max())
        if edge in self.ranges:
            plo, phi = self.ranges[edge]
            lo, hi = min(lo, plo), max(hi, phi)
        self.ranges[edge] = (lo, hi)


def op_count(node: Node, shapes) -> int:
    """Multiply-accumulates for Conv2D/MatMul, output element count otherwise."""
    out = shapes[node.outputs[0]]
    if node.op is OpKind.Conv2D:
        kh, kw, cin, _ = shapes[node.inputs[1]].shape
        return out.size * kh * kw * cin
    if node.op is OpKind.MatMul:
        return out.size * shapes[node.inputs[0]].shape[1]
    return out.size


def count_ops(g: Graph) -> dict[str, int]:
    shapes = infer_shapes(g)
    return {n.name: op_count(n, shapes) for n in g.nodes}


def _check_feeds(g: Graph, feeds: Mapping[str, Tensor]) -> None:
    expected = {v.name: v for v in g.inputs}
    missing = sorted(set(expected) - set(feeds))
    extra = sorted(set(feeds) - set(expected))
    if missing or extra:
        raise FeedError(f"feeds must cover exactly the graph inputs; missing {missing}, unexpected {extra}")
    for name, v in expected.items():
        t = feeds[name]
        if not isinstance(t, Tensor):
            raise FeedError(f"feed {name!r} is not a Tensor")
        if t.dtype is not v.dtype or tuple(t.shape) != v.shape:
            raise FeedError(
                f"feed {name!r} is {t.dtype.value}{list(t.shape)}, graph expects {v.dtype.value}{list(v.shape)}"
            )


def execute_node(node: Node, args: Sequence[np.ndarray]) -> np.ndarray:
    op, a = node.op, node.attrs
    if op is OpKind.Conv2D:
        x, w = args[0], args[1]
        bias = args[2] if len(args) == 3 else None
        sh, sw = a["strides"]
        if a["padding_scheme"] == "SAME":
            pads = (same_padding(x.shape[1], w.shape[0], sh), same_padding(x.shape[2], w.shape[1], sw))
        else:
            pads = ((0, 0), (0, 0))
        return kernels.conv2d_nhwc(x, w, bias, (sh, sw), pads)
    if op is OpKind.MatMul:
        return kernels.matmul(args[0], args[1])
    if op is OpKind.Pad:
        x = args[0]
        return np.pad(x, a["paddings"], mode="constant", constant_values=x.dtype.type(a["constant_value"]))
    if op is OpKind.Concat:
        return np.concatenate(args, axis=a["axis"])
    if op is OpKind.Add:
        return args[0] + args[1]
    if op is OpKind.Mul:
        return args[0] * args[1]
    if op is OpKind.Relu:
        x = args[0]
        return np.maximum(x, x.dtype.type(0))
    if op is OpKind.Sigmoid:
        x = args[0]
        one = np.float32(1)
        with np.errstate(over="ignore"):
            return one / (one + np.exp(-x))
    if op is OpKind.Reshape:
        return args[0].reshape(a["new_shape"])
    if op is OpKind.Dequantize:
        return args[0].astype(np.float32)
    raise DomainError(f"no kernel for {op}")


def _execute(g: Graph, feeds: Mapping[str, Tensor], trace: ExecutionTrace | None, shapes=None):
    _check_feeds(g, feeds)
    env: dict[str, Tensor] = dict(g.constants)
    env.update(feeds)
    if trace is not None:
        shapes = shapes or infer_shapes(g)
        for name, t in env.items():
            trace.observe(name, t)
    for node in nodes_in_order(g):
        result = execute_node(node, [env[e].array for e in node.inputs])
        t = Tensor.of(result)
        env[node.outputs[0]] = t
        if trace is not None:
            trace.observe(node.outputs[0], t)
            trace.op_counts.setdefault(node.name, op_count(node, shapes))
    return {name: env[name] for name in g.outputs}


def run(g: Graph, feeds: Mapping[str, Tensor]) -> dict[str, Tensor]:
    return _execute(g, feeds, None)


def run_recording(g: Graph, feed_set: Sequence[Mapping[str, Tensor]]):
    """Run every sample and return ``(outputs_per_sample, trace)``."""
    if not feed_set:
        raise DomainError("run_recording needs at least one feed map")
    trace = ExecutionTrace()
    shapes = infer_shapes(g)
    for n in g.nodes:
        trace.op_counts[n.name] = op_count(n, shapes)
    outputs = []
    for feeds in feed_set:
        outputs.append(_execute(g, feeds, trace, shapes))
        trace.samples += 1
    return outputs, trace


def random_feeds(g: Graph, rng: np.random.Generator, low: float = -1.0, high: float = 1.0) -> dict[str, Tensor]:
    """Uniform [low, high] feeds for every graph input (F32); integer inputs get zeros."""
    feeds = {}
    for v in g.inputs:
        if v.dtype is DType.F32:
            feeds[v.name] = Tensor(DType.F32, rng.uniform(low, high, size=v.shape).astype(np.float32))
        else:
            feeds[v.name] = Tensor.zeros(v.dtype, v.shape)
    return feeds

