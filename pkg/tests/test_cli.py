import json
import subprocess
import sys

import numpy as np
import pytest
from graphs import (
    channel_pad_graph,
    dequant_graph,
    detector_graph,
    f32,
    pad_in_the_middle,
    two_branch_feeds,
    two_branch_graph,
)

from modelsurgery import Graph, Node
from modelsurgery.cli import cmd_dispatch, main
from modelsurgery.io import dumps_feeds, load_graph, save_graph

DMS_STAGES_TEXT = "face detection: 0.2\nlandmarks: 6.1\ndrowsiness: 0.4\nhead pose: 1.8\ngaze: 3.2\nyawn: 0.3\nobjects: 3.8\n"


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, g in [
        ("pad", channel_pad_graph()),
        ("mp", detector_graph()),
        ("dq", dequant_graph()),
        ("two", two_branch_graph()),
        ("mid", pad_in_the_middle()),
    ]:
        paths[name] = tmp_path / f"{name}.gx"
        save_graph(g, paths[name])
    paths["pad2conv"] = tmp_path / "pad2conv.spec"
    paths["pad2conv"].write_text('[{"pass": "pad_to_conv2d"}]\n')
    paths["stages"] = tmp_path / "dms.stages"
    paths["stages"].write_text(DMS_STAGES_TEXT)
    paths["dir"] = tmp_path
    return paths


def call(*argv):
    return cmd_dispatch([str(a) for a in argv])


def test_budget_stage_file(files):
    res = call("budget", files["stages"])
    assert res.exit_code == 0
    assert res.text.splitlines()[-1] == "total 15.8 ms, 63.29 FPS"


def test_verify_is_reflexive(files):
    res = call("verify", files["mp"], files["mp"])
    assert res.exit_code == 0
    assert all(o["bit_exact"] for o in res.report["outputs"])


def test_surgery_then_verify(files):
    out = files["dir"] / "out.gx"
    res = call("surgery", files["pad"], "--passes", files["pad2conv"], "-o", out)
    assert res.exit_code == 0, res.text
    assert res.report["reports"][0]["sites_matched"] == 1
    assert [n.op.value for n in load_graph(out).nodes] == ["Conv2D"]
    res = call("verify", files["pad"], out, "--tol", 0)
    assert res.exit_code == 0, res.text
    assert res.report["outputs"] == [{"name": "y", "max_abs_diff": 0.0, "bit_exact": True}]


def test_split_writes_mapping_and_verify_uses_it(files):
    spec = files["dir"] / "split.spec"
    spec.write_text('[{"pass": "split_output_branches", "options": {"output_name": "head"}}]')
    out = files["dir"] / "split.gx"
    assert call("surgery", files["two"], "--passes", spec, "-o", out).exit_code == 0
    mapping = files["dir"] / "split.gx.mapping.json"
    assert mapping.exists()
    assert call("verify", files["two"], out).exit_code == 1
    res = call("verify", files["two"], out, "--mapping", mapping)
    assert res.exit_code == 0, res.text


def test_verify_reports_difference(files):
    g = channel_pad_graph()
    other = files["dir"] / "other.gx"
    pad = Node("pad", "Pad", ["x"], ["y"], dict(g.nodes[0].attrs, constant_value=1.0))
    bumped = Graph(g.name, g.inputs, g.outputs, {}, [pad])
    save_graph(bumped, other)
    res = call("verify", files["pad"], other, "--samples", 3)
    assert res.exit_code == 1
    assert "NOT equivalent" in res.text
    assert call("verify", files["pad"], other, "--samples", 3, "--tol", 1.0).exit_code == 0


def test_validate_and_run(files):
    assert call("validate", files["mp"]).exit_code == 0
    res = call("run", files["mp"], "--seed", 3)
    assert res.exit_code == 0 and "features" in res.text
    feeds = files["dir"] / "feeds.json"
    feeds.write_text(dumps_feeds([{"image": f32(np.zeros((1, 8, 8, 3)))}]))
    assert call("run", files["mp"], "--feeds", feeds).exit_code == 0


def test_validate_flags_invalid_file(files):
    doc = json.loads(files["pad"].read_text())
    doc["nodes"][0]["inputs"] = ["ghost"]
    bad = files["dir"] / "bad.gx"
    bad.write_text(json.dumps(doc))
    res = call("validate", bad)
    assert res.exit_code == 1 and "unknown_edge" in res.text


def test_quantize_diagnose(files):
    calib = files["dir"] / "calib.json"
    calib.write_text(dumps_feeds(two_branch_feeds(20, 0, with_extremes=True)))
    out = files["dir"] / "ranges.json"
    res = call("quantize", files["two"], "--calib", calib, "--diagnose", "--calib-out", out)
    assert res.exit_code == 0, res.text
    (finding,) = res.report["findings"]
    assert finding["node"] == "head_concat" and finding["ratio"] > 100
    assert json.loads(out.read_text())["version"] == 1


def test_plan_compare(files):
    out = files["dir"] / "out.gx"
    call("surgery", files["mid"], "--passes", files["pad2conv"], "-o", out)
    res = call("plan", files["mid"], "--compare", out)
    assert res.exit_code == 0
    assert res.report["relative_improvement_pct"] > 0
    assert "channel-wise constant padding unsupported" in res.text


def test_plan_dequantize_fallback(files):
    res = call("plan", files["dq"])
    assert res.report["graph"]["fallback_reasons"] == {"dq": "dequantize unsupported"}


@pytest.mark.parametrize(
    "argv",
    [["frobnicate"], ["verify", "only_one.gx"], ["budget"], ["verify", "a", "b", "--samples", "many"], []],
)
def test_usage_errors(argv):
    assert cmd_dispatch(argv).exit_code == 2


def test_help_exits_zero(capsys):
    assert cmd_dispatch(["--help"]).exit_code == 0
    assert "budget" in capsys.readouterr().out


def test_empty_graph_file(files):
    empty = files["dir"] / "empty.gx"
    empty.write_text("")
    res = call("validate", empty)
    assert res.exit_code == 1 and f"{empty}:1:" in res.text


def test_bad_stage_file_location(files):
    bad = files["dir"] / "bad.stages"
    bad.write_text("a: 1\nb: fast\n")
    res = call("budget", bad)
    assert res.exit_code == 1 and f"{bad}:2:" in res.text


def test_unknown_pass_is_operation_error(files):
    spec = files["dir"] / "nope.spec"
    spec.write_text('[{"pass": "fuse_everything"}]')
    res = call("surgery", files["pad"], "--passes", spec, "-o", files["dir"] / "x.gx")
    assert res.exit_code == 1 and not (files["dir"] / "x.gx").exists()


def test_unwritable_output(files):
    res = call("surgery", files["pad"], "--passes", files["pad2conv"], "-o", files["dir"] / "no" / "such" / "out.gx")
    assert res.exit_code == 1 and res.text.startswith("error:")


def test_report_written_and_deterministic(files):
    reports = []
    for i in range(2):
        path = files["dir"] / f"r{i}.json"
        res = call("--report", path, "quantize", files["mp"], "--samples", 4)
        assert res.exit_code == 0
        reports.append(path.read_bytes())
    assert reports[0] == reports[1]
    doc = json.loads(reports[0])
    assert doc["command"] == "quantize" and doc["exit_code"] == 0


def test_report_on_failure(files):
    path = files["dir"] / "r.json"
    res = call("--report", path, "validate", files["dir"] / "missing.gx")
    assert res.exit_code == 1
    assert json.loads(path.read_text())["exit_code"] == 1


def test_surgery_output_is_deterministic(files):
    a, b = files["dir"] / "a.gx", files["dir"] / "b.gx"
    call("surgery", files["pad"], "--passes", files["pad2conv"], "-o", a)
    call("surgery", files["pad"], "--passes", files["pad2conv"], "-o", b)
    assert a.read_bytes() == b.read_bytes()


def test_main_streams(files, capsys):
    assert main(["budget", str(files["stages"])]) == 0
    assert "63.29 FPS" in capsys.readouterr().out
    assert main(["validate", str(files["dir"] / "missing.gx")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_module_entry_point(files):
    proc = subprocess.run(
        [sys.executable, "-m", "modelsurgery.cli", "budget", str(files["stages"])],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip().endswith("total 15.8 ms, 63.29 FPS")
