import numpy as np
import pytest
from graphs import (
    IDENTITY_PAD_FILTER,
    channel_pad_graph,
    dequant_graph,
    detector_graph,
    f32,
    pad_corpus,
    two_branch_graph,
)
from hypothesis import given, settings
from hypothesis import strategies as st

from modelsurgery import (
    ApplicabilityError,
    DomainError,
    DType,
    Graph,
    Node,
    OpKind,
    ValueInfo,
    VerificationError,
    apply_passes,
    build_identity_pad_filter,
    eliminate_dequantize,
    pad_to_concat,
    pad_to_conv2d,
    run,
    split_output_branches,
    validate,
    verify_equivalence,
)
from modelsurgery.interpreter import random_feeds


def ops(g):
    return sorted(n.op.value for n in g.nodes)


class TestIdentityPadFilter:
    def test_identity_pad_filter(self):
        w = build_identity_pad_filter(3, 0, 4)
        assert w.shape == (1, 1, 3, 7)
        assert w.array[0, 0].tolist() == IDENTITY_PAD_FILTER

    def test_no_padding_is_identity(self):
        w = build_identity_pad_filter(2, 0, 0)
        assert w.array.reshape(2, 2).tolist() == [[1, 0], [0, 1]]

    def test_pad_before_shifts_columns(self):
        w = build_identity_pad_filter(1, 2, 0)
        assert w.shape == (1, 1, 1, 3)
        assert w.array.ravel().tolist() == [0, 0, 1]

    def test_rejects_zero_channels(self):
        with pytest.raises(DomainError):
            build_identity_pad_filter(0, 1, 1)

    @given(c=st.integers(1, 16), b=st.integers(0, 8), a=st.integers(0, 8))
    @settings(max_examples=100, deadline=None)
    def test_structure(self, c, b, a):
        w = build_identity_pad_filter(c, b, a).array[0, 0]
        assert w.shape == (c, b + c + a)
        assert w.sum() == c and np.all(w[np.arange(c), b + np.arange(c)] == 1)
        assert not np.isnan(w).any()


class TestPadToConv2D:
    def test_replaces_channel_pad(self):
        g = channel_pad_graph()
        out, rep = pad_to_conv2d(g)
        assert rep.sites_matched == 1 and rep.nodes_removed == ["pad"]
        assert ops(out) == ["Conv2D"]
        (fname,) = rep.constants_added
        assert out.constants[fname].shape == (1, 1, 3, 7)
        assert out.inputs == g.inputs and out.outputs == g.outputs
        assert not set(rep.nodes_removed) & set(rep.nodes_added)

    def test_no_pads_unchanged(self):
        g = dequant_graph()
        out, rep = pad_to_conv2d(g)
        assert out == g and rep.sites_matched == 0

    def test_spatial_padding_is_skipped(self):
        g = Graph(
            "spatial",
            [ValueInfo("x", DType.F32, (1, 3, 3, 2))],
            ["y"],
            {},
            [Node("pad", "Pad", ["x"], ["y"], {"paddings": [[0, 0], [1, 1], [1, 1], [0, 0]]})],
        )
        out, rep = pad_to_conv2d(g)
        assert rep.sites_matched == 0
        assert rep.skipped == [("pad", "non-channel padding")]
        assert verify_equivalence(g, out, 20, 0).all_bit_exact

    def test_other_skip_reasons(self):
        g = Graph(
            "skips",
            [ValueInfo("x", DType.F32, (2, 3))],
            ["a", "b"],
            {},
            [
                Node("p_rank2", "Pad", ["x"], ["a"], {"paddings": [[0, 0], [0, 2]]}),
                Node("p_value", "Pad", ["x"], ["b"], {"paddings": [[0, 0], [0, 2]], "constant_value": 1.0}),
            ],
        )
        out, rep = pad_to_conv2d(g)
        assert dict(rep.skipped) == {"p_rank2": "non-NHWC (rank != 4) input", "p_value": "non-zero constant value"}
        assert out == g

    def test_pad_before_and_after(self):
        g = channel_pad_graph((1, 3, 2, 4), 2, 5)
        out, rep = pad_to_conv2d(g)
        assert rep.sites_matched == 1
        r = verify_equivalence(g, out, 100, 3)
        assert r.all_bit_exact and r.max_abs_diff["y"] == 0

    def test_zero_amount_pad_on_output_keeps_name(self):
        g = channel_pad_graph((1, 2, 2, 3), 0, 0)
        out, rep = pad_to_conv2d(g)
        assert rep.sites_matched == 1 and out.outputs == ("y",)
        assert OpKind.Pad not in {n.op for n in out.nodes}
        assert verify_equivalence(g, out, 10, 0).all_bit_exact


class TestPadToConcat:
    def test_constant_mode(self):
        g = channel_pad_graph()
        out, rep = pad_to_concat(g)
        assert ops(out) == ["Concat"]
        (zname,) = rep.constants_added
        assert out.constants[zname].shape == (1, 2, 2, 4)
        assert not out.constants[zname].array.any()
        assert out.node(rep.nodes_added[0]).inputs == ("x", zname)

    def test_graph_input_mode(self):
        g = channel_pad_graph()
        out, rep = pad_to_concat(g, zeros_as="graph_input")
        assert len(out.inputs) == len(g.inputs) + 1
        assert out.inputs[-1].shape == (1, 2, 2, 4) and out.inputs[-1].dtype is DType.F32
        assert rep.inputs_added == [out.inputs[-1].name]

    def test_pad_before_concatenates_in_front(self):
        g = channel_pad_graph((1, 2, 2, 3), 2, 1)
        out, rep = pad_to_concat(g)
        concat = out.node(rep.nodes_added[0])
        assert concat.inputs[1] == "x"
        assert out.constants[concat.inputs[0]].shape == (1, 2, 2, 2)
        assert verify_equivalence(g, out, 50, 0).all_bit_exact

    def test_zero_padding_removes_pad(self):
        g = Graph(
            "zp",
            [ValueInfo("x", DType.F32, (1, 2, 2, 3))],
            ["y"],
            {},
            [
                Node("pad", "Pad", ["x"], ["p"], {"paddings": [[0, 0]] * 4}),
                Node("relu", "Relu", ["p"], ["y"]),
            ],
        )
        out, rep = pad_to_concat(g)
        assert rep.sites_matched == 1
        assert ops(out) == ["Relu"] and out.node("relu").inputs == ("x",)

    def test_rejects_bad_mode(self):
        with pytest.raises(DomainError):
            pad_to_concat(channel_pad_graph(), zeros_as="file")

    @pytest.mark.parametrize("mode", ["constant", "graph_input"])
    def test_bit_exact(self, mode):
        g = channel_pad_graph()
        out, _ = pad_to_concat(g, zeros_as=mode)
        rep = verify_equivalence(g, out, 100, 11)
        assert rep.all_bit_exact


def test_conv_and_concat_rewrites_agree_bitwise():
    for g in pad_corpus(20, seed=5):
        conv, _ = pad_to_conv2d(g)
        cat, _ = pad_to_concat(g)
        rng = np.random.default_rng(0)
        for _ in range(5):
            feeds = random_feeds(g, rng)
            a, b = run(conv, feeds), run(cat, feeds)
            assert all(a[k] == b[k] for k in g.outputs)


class TestEliminateDequantize:
    def test_folds_constant(self):
        g = dequant_graph()
        out, rep = eliminate_dequantize(g)
        assert rep.sites_matched == 1 and ops(out) == ["Conv2D"]
        w = out.constants[out.node("conv").inputs[1]]
        assert w.dtype is DType.F32
        assert not any(t.dtype is DType.F16 for t in out.constants.values())
        assert verify_equivalence(g, out, 50, 1).all_bit_exact

    def test_no_dequantize_unchanged(self):
        g = channel_pad_graph()
        out, rep = eliminate_dequantize(g)
        assert out == g and rep.sites_matched == 0

    def test_activation_dequantize_skipped(self):
        g = Graph(
            "act",
            [ValueInfo("x", DType.F16, (4,))],
            ["y"],
            {},
            [Node("dq", "Dequantize", ["x"], ["d"]), Node("relu", "Relu", ["d"], ["y"])],
        )
        out, rep = eliminate_dequantize(g)
        assert rep.sites_matched == 0 and rep.sites_skipped == 1
        assert rep.skipped[0] == ("dq", "activation dequantize")
        assert out == g

    def test_shared_f16_constant(self):
        g = dequant_graph()
        g = Graph(
            g.name,
            g.inputs,
            ["y", "w_again"],
            g.constants,
            list(g.nodes) + [Node("dq2", "Dequantize", ["w_f16"], ["w_again"])],
        )
        out, rep = eliminate_dequantize(g)
        assert rep.sites_matched == 2
        assert "w_f16" not in out.constants
        assert verify_equivalence(g, out, 10, 0).all_bit_exact


class TestSplitOutputBranches:
    def test_bbox_and_keypoint_split(self):
        g = two_branch_graph()
        out, rep, mapping = split_output_branches(g, "head")
        assert out.outputs == ("head#0", "head#1")
        assert mapping.axis == 1 and mapping.parts == (("head#0", 4), ("head#1", 136))
        assert rep.nodes_removed == ["head_concat"]
        assert verify_equivalence(g, out, 50, 9, output_mapping=mapping).all_bit_exact

    def test_degenerate_single_input(self):
        # A 1-input Concat left behind by upstream pruning: not a valid graph on
        # its own (arity), but splitting it yields a valid single-output graph.
        g = Graph(
            "one",
            [ValueInfo("x", DType.F32, (1, 3))],
            ["c"],
            {},
            [Node("r", "Relu", ["x"], ["a"]), Node("cat", "Concat", ["a"], ["c"], {"axis": 1})],
        )
        assert "arity" in validate(g).kinds()
        out, _, mapping = split_output_branches(g, "c")
        assert validate(out).ok
        assert out.outputs == ("c#0",) and mapping.parts == (("c#0", 3),)
        x = f32([[-1, 2, 3]])
        assert run(out, {"x": x})["c#0"].array.tolist() == [[0, 2, 3]]

    def test_graph_input_branch_gets_identity(self):
        g = Graph(
            "gi",
            [ValueInfo("x", DType.F32, (1, 3))],
            ["c"],
            {},
            [Node("cat", "Concat", ["x", "x"], ["c"], {"axis": 1})],
        )
        out, rep, mapping = split_output_branches(g, "c")
        assert out.outputs == ("c#0", "c#1")
        assert len(rep.nodes_added) == 2
        assert verify_equivalence(g, out, 10, 0, output_mapping=mapping).all_bit_exact

    def test_other_outputs_untouched(self):
        g = two_branch_graph()
        g = Graph(g.name, g.inputs, ["keypoints", "head"], g.constants, g.nodes)
        out, _, mapping = split_output_branches(g, "head")
        assert out.outputs[0] == "keypoints"
        assert verify_equivalence(g, out, 10, 0, output_mapping=mapping).all_bit_exact

    def test_not_a_concat(self):
        with pytest.raises(ApplicabilityError):
            split_output_branches(channel_pad_graph(), "y")
        with pytest.raises(ApplicabilityError):
            split_output_branches(channel_pad_graph(), "nope")


class TestApplyPasses:
    PIPELINE = [{"pass": "eliminate_dequantize"}, {"pass": "pad_to_conv2d"}]

    def test_empty_pipeline(self):
        g = detector_graph()
        res = apply_passes(g, [])
        assert res.graph == g and res.reports == [] and res.error is None

    def test_detector_pipeline(self):
        g = detector_graph()
        res = apply_passes(g, self.PIPELINE)
        assert res.error is None
        assert [r.sites_matched for r in res.reports] == [2, 1]
        assert {n.op for n in res.graph.nodes} <= {OpKind.Conv2D, OpKind.Relu, OpKind.Add}
        assert verify_equivalence(g, res.graph, 30, 2).all_bit_exact

    def test_idempotent(self):
        once = apply_passes(detector_graph(), self.PIPELINE).graph
        twice = apply_passes(once, self.PIPELINE)
        assert [r.sites_matched for r in twice.reports] == [0, 0]
        assert twice.graph == once

    def test_first_error_aborts(self):
        res = apply_passes(
            detector_graph(),
            [
                {"pass": "eliminate_dequantize"},
                {"pass": "split_output_branches", "options": {"output_name": "features"}},
                {"pass": "pad_to_conv2d"},
            ],
        )
        assert isinstance(res.error, ApplicabilityError)
        assert len(res.reports) == 1

    def test_unknown_pass_and_bad_options(self):
        g = channel_pad_graph()
        assert apply_passes(g, [{"pass": "nope"}]).error is not None
        assert apply_passes(g, [{"pass": "pad_to_conv2d", "options": {"x": 1}}]).error is not None

    def test_split_pass_records_mapping(self):
        res = apply_passes(two_branch_graph(), [{"pass": "split_output_branches", "options": {"output_name": "head"}}])
        assert res.error is None and len(res.mappings) == 1


class TestVerifyEquivalence:
    def test_reflexive(self):
        g = detector_graph()
        rep = verify_equivalence(g, g, 10, 0)
        assert rep.all_bit_exact and rep.max_abs_diff == {"features": 0.0}

    def test_detects_difference(self):
        g = channel_pad_graph()
        attrs = {"paddings": [[0, 0], [0, 0], [0, 0], [0, 4]], "constant_value": 0.5}
        other = Graph(g.name, g.inputs, g.outputs, {}, [Node("pad", "Pad", ["x"], ["y"], attrs)])
        rep = verify_equivalence(g, other, 5, 0)
        assert not rep.all_bit_exact and rep.max_abs_diff["y"] == 0.5
        assert rep.within(0.5) and not rep.within(0.25)

    def test_deterministic_in_seed(self):
        g = detector_graph()
        h, _ = pad_to_concat(g)
        assert verify_equivalence(g, h, 5, 3) == verify_equivalence(g, h, 5, 3)

    def test_signature_mismatch(self):
        g = two_branch_graph()
        out, _, _ = split_output_branches(g, "head")
        with pytest.raises(VerificationError):
            verify_equivalence(g, out, 2, 0)
        with pytest.raises(VerificationError):
            verify_equivalence(channel_pad_graph(), channel_pad_graph((1, 2, 2, 4)), 2, 0)

    def test_bad_arguments(self):
        g = channel_pad_graph()
        with pytest.raises(DomainError):
            verify_equivalence(g, g, 0, 0)
        with pytest.raises(DomainError):
            verify_equivalence(g, g, 1, 0, tolerance=-1)


def test_passes_do_not_mutate_input():
    g = detector_graph()
    snapshot = (g.nodes, dict(g.constants), g.inputs, g.outputs)
    pad_to_conv2d(g)
    pad_to_concat(g, "graph_input")
    eliminate_dequantize(g)
    assert (g.nodes, dict(g.constants), g.inputs, g.outputs) == snapshot
