"""Operator graph surgery for accelerator deployment.

Replace accelerator-unsupported operators with exactly equivalent ones,
check rewrites bit-for-bit against a reference interpreter, simulate int8
inference, and estimate what CPU fallback costs in host/accelerator traffic.
"""

from .errors import (
    ApplicabilityError,
    DomainError,
    DTypeError,
    FeedError,
    GraphCycleError,
    ParseError,
    RewireError,
    ShapeError,
    SurgeryError,
    VerificationError,
    VersionError,
)
from .graph import Graph, Node, OpKind, ValidationReport, ValueInfo, infer_shapes, rewire_replace, topo_order, validate
from .interpreter import ExecutionTrace, count_ops, run, run_recording
from .io import load_graph, save_graph
from .kernels import BACKEND as KERNEL_BACKEND
from .planner import (
    DeviceProfile,
    LatencyEstimate,
    Partition,
    PipelineBudget,
    check_support,
    compare_reports,
    default_profile,
    estimate_latency,
    partition,
    pipeline_budget,
)
from .quantizer import CalibrationResult, QuantErrorReport, calibrate, diagnose_range_disparity, simulate_quantized
from .surgery import (
    EquivalenceReport,
    OutputMapping,
    PassReport,
    apply_passes,
    build_identity_pad_filter,
    eliminate_dequantize,
    pad_to_concat,
    pad_to_conv2d,
    split_output_branches,
    verify_equivalence,
)
from .tensor import DType, QuantParams, Tensor, cast_f16_to_f32, compute_qparams, dequantize_affine, quantize_affine

__version__ = "0.1.0"
