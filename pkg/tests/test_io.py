import json

import numpy as np
import pytest
from graphs import dequant_graph, detector_graph, f32, identity_pad_graph, pad_corpus

from modelsurgery import DType, Graph, Node, ParseError, Tensor, ValueInfo, VersionError
from modelsurgery.io import (
    dumps_feeds,
    dumps_graph,
    dumps_mappings,
    load_graph,
    load_mappings,
    loads_feeds,
    loads_graph,
    loads_passes,
    loads_stage_times,
    save_graph,
)
from modelsurgery.surgery import OutputMapping


def test_identity_pad_roundtrip(tmp_path):
    path = tmp_path / "identity_pad.gx"
    save_graph(identity_pad_graph(), path)
    assert load_graph(path) == identity_pad_graph()


@pytest.mark.parametrize("index", range(0, 100, 7))
def test_corpus_roundtrip_is_identity(index):
    g = pad_corpus()[index]
    text = dumps_graph(g)
    h = loads_graph(text)
    assert h == g
    assert dumps_graph(h) == text


def test_writer_is_byte_deterministic(tmp_path):
    g = detector_graph()
    a, b = tmp_path / "a.gx", tmp_path / "b.gx"
    save_graph(g, a)
    shuffled = Graph(g.name, g.inputs, g.outputs, dict(reversed(list(g.constants.items()))), list(reversed(g.nodes)))
    save_graph(shuffled, b)
    assert a.read_bytes() == b.read_bytes()


def test_layout_and_key_order():
    doc = json.loads(dumps_graph(detector_graph()))
    assert list(doc) == ["version", "name", "inputs", "outputs", "constants", "nodes"]
    assert [c["name"] for c in doc["constants"]] == sorted(c["name"] for c in doc["constants"])
    assert list(doc["nodes"][0]) == ["name", "op", "inputs", "outputs", "attrs"]
    for n in doc["nodes"]:
        assert list(n["attrs"]) == sorted(n["attrs"])


def test_f16_is_stored_as_bits():
    g = dequant_graph()
    doc = json.loads(dumps_graph(g))
    (rec,) = [c for c in doc["constants"] if c["dtype"] == "F16"]
    assert all(isinstance(v, int) and 0 <= v < 65536 for v in rec["data"])
    assert rec["data"] == g.constants[rec["name"]].bits().ravel().tolist()
    assert loads_graph(dumps_graph(g)) == g


def test_f32_shortest_decimal_roundtrips():
    values = np.array([0.1, 1 / 3, -2.5e-38, 3.4028235e38, 1e-45, -0.0], dtype=np.float32)
    g = Graph(
        "c", [ValueInfo("x", DType.F32, (6,))], ["y"], {"k": f32(values)}, [Node("a", "Add", ["x", "k"], ["y"])]
    )
    text = dumps_graph(g)
    assert '"0.1"' not in text and "0.1," in text
    back = loads_graph(text).constants["k"]
    assert back.bit_equal(f32(values))


def test_special_values_survive():
    values = np.array([np.inf, -np.inf, np.nan], dtype=np.float32)
    g = Graph(
        "c", [ValueInfo("x", DType.F32, (3,))], ["y"], {"k": f32(values)}, [Node("a", "Add", ["x", "k"], ["y"])]
    )
    back = loads_graph(dumps_graph(g)).constants["k"].array
    assert np.isposinf(back[0]) and np.isneginf(back[1]) and np.isnan(back[2])


def base_doc():
    return json.loads(dumps_graph(identity_pad_graph()))


class TestErrors:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.gx"
        path.write_text("")
        with pytest.raises(ParseError) as info:
            load_graph(path)
        assert str(info.value).startswith(f"{path}:1:")

    def test_syntax_error_has_line(self):
        with pytest.raises(ParseError) as info:
            loads_graph('{\n  "version": 1,\n  "name" "x"\n}', "g.gx")
        assert info.value.line == 3 and str(info.value).startswith("g.gx:3:")

    def test_version(self):
        doc = base_doc()
        doc["version"] = 2
        with pytest.raises(VersionError):
            loads_graph(json.dumps(doc))

    def test_duplicate_node_name(self):
        doc = base_doc()
        doc["nodes"].append(dict(doc["nodes"][0], outputs=["other"]))
        with pytest.raises(ParseError, match="duplicate"):
            loads_graph(json.dumps(doc))

    @pytest.mark.parametrize(
        "mutate, where",
        [
            (lambda d: d["inputs"][0].pop("dtype"), "inputs[0]"),
            (lambda d: d["inputs"][0].update(shape=[3, -1]), "inputs[0].shape"),
            (lambda d: d["constants"][0].update(dtype="F64"), "constants[0].dtype"),
            (lambda d: d["constants"][0].update(data=[1.0]), "constants[0].data"),
            (lambda d: d["constants"][0].update(data=["a"] * 21), "constants[0].data"),
            (lambda d: d["nodes"][0].update(op="Gemm"), "nodes[0].op"),
            (lambda d: d["nodes"][0].update(name=7), "nodes[0].name"),
            (lambda d: d.update(outputs=[1]), "outputs"),
        ],
    )
    def test_field_locations(self, mutate, where):
        doc = base_doc()
        mutate(doc)
        with pytest.raises(ParseError) as info:
            loads_graph(json.dumps(doc))
        assert where in str(info.value)

    def test_unchecked_load_keeps_invalid_graph(self):
        doc = base_doc()
        doc["nodes"][0]["inputs"] = ["nope", "filter"]
        with pytest.raises(ParseError):
            loads_graph(json.dumps(doc))
        assert loads_graph(json.dumps(doc), check=False).nodes[0].inputs == ("nope", "filter")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="cannot read"):
            load_graph(tmp_path / "absent.gx")


def test_feeds_roundtrip():
    rng = np.random.default_rng(0)
    samples = [
        {"a": f32(rng.uniform(-1, 1, (2, 3))), "b": Tensor.of(np.array([1, -2], np.int32))},
        {"a": f32(np.zeros((2, 3))), "b": Tensor.of(np.array([0, 5], np.int32))},
    ]
    back = loads_feeds(dumps_feeds(samples))
    assert back == samples


def test_feeds_errors():
    with pytest.raises(ParseError, match="at least one"):
        loads_feeds('{"version": 1, "samples": []}')
    rec = {"name": "a", "dtype": "F32", "shape": [1], "data": [0]}
    with pytest.raises(ParseError, match="duplicate"):
        loads_feeds(json.dumps({"version": 1, "samples": [[rec, rec]]}))


def test_pass_specs():
    plain = '[{"pass": "pad_to_conv2d"}, {"pass": "pad_to_concat", "options": {"zeros_as": "graph_input"}}]'
    assert loads_passes(plain) == [
        {"pass": "pad_to_conv2d", "options": {}},
        {"pass": "pad_to_concat", "options": {"zeros_as": "graph_input"}},
    ]
    wrapped = '{"version": 1, "passes": [{"pass": "eliminate_dequantize"}]}'
    assert loads_passes(wrapped) == [{"pass": "eliminate_dequantize", "options": {}}]
    with pytest.raises(ParseError, match=r"\[0\]"):
        loads_passes('[{"options": {}}]')
    with pytest.raises(VersionError):
        loads_passes('{"version": 3, "passes": []}')


def test_mappings_roundtrip(tmp_path):
    m = OutputMapping("head", 1, (("head#0", 4), ("head#1", 136)))
    path = tmp_path / "m.json"
    path.write_text(dumps_mappings([m]))
    assert load_mappings(path) == [m]


class TestStageTimes:
    def test_parses_pairs(self):
        text = "# DMS stages\nface detect: 0.2\n\nlandmarks: 6.1  # slowest\nhead pose:0.4\n"
        assert loads_stage_times(text) == [("face detect", 0.2), ("landmarks", 6.1), ("head pose", 0.4)]

    def test_colon_in_name(self):
        assert loads_stage_times("stage: a: 1.5") == [("stage: a", 1.5)]

    @pytest.mark.parametrize(
        "text, line",
        [("a: 1\nno colon here\n", 2), ("a: x", 1), ("a: 1\n\nb: -3", 3), (": 4", 1)],
    )
    def test_errors_carry_line(self, text, line):
        with pytest.raises(ParseError) as info:
            loads_stage_times(text, "t.stages")
        assert info.value.line == line

    def test_empty(self):
        with pytest.raises(ParseError):
            loads_stage_times("# nothing\n")
