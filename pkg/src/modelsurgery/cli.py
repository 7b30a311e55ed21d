"""``modelsurgery`` command line.

Exit codes: 0 success, 1 operation error (including unreadable or malformed
input files), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import interpreter, io, planner, quantizer, surgery
from .errors import SurgeryError
from .graph import validate

DEFAULT_SEED = 42


@dataclass
class CommandResult:
    exit_code: int
    text: str
    report: dict | None = None


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")

    def exit(self, status=0, message=None):
        # --help has already printed; report it as a result instead of exiting.
        if status:
            raise UsageError(message or "")
        raise _HelpShown()


class _HelpShown(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modelsurgery", description="Graph surgery, verification, int8 simulation and offload planning.")
    p.add_argument("--report", metavar="PATH", help="also write a machine-readable JSON report here")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("validate", help="check a graph document")
    s.add_argument("graph")

    s = sub.add_parser("run", help="execute a graph with the reference interpreter")
    s.add_argument("graph")
    s.add_argument("--feeds", help="feeds document; random uniform [-1, 1] inputs when omitted")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)

    s = sub.add_parser("surgery", help="apply a pass pipeline")
    s.add_argument("graph")
    s.add_argument("--passes", required=True, help="pass pipeline spec")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--mapping-out", help="where to write output mappings (default: <output>.mapping.json)")

    s = sub.add_parser("verify", help="check two graphs compute the same function")
    s.add_argument("before")
    s.add_argument("after")
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--tol", type=float, default=0.0)
    s.add_argument("--mapping", help="output mapping document from a split pass")

    s = sub.add_parser("quantize", help="simulate int8 inference and report error")
    s.add_argument("graph")
    s.add_argument("--calib", help="calibration feeds; random feeds from --seed when omitted")
    s.add_argument("--eval", dest="eval_feeds", help="evaluation feeds (default: the calibration feeds)")
    s.add_argument("--samples", type=int, default=16, help="random calibration samples when --calib is omitted")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--diagnose", action="store_true", help="report Concat range disparities")
    s.add_argument("--threshold", type=float, default=10.0)
    s.add_argument("--calib-out", help="write the calibration ranges here")

    s = sub.add_parser("plan", help="partition for an accelerator and estimate latency")
    s.add_argument("graph")
    s.add_argument("--profile", help="device profile (default: shipped tda4vm-like)")
    s.add_argument("--compare", metavar="OTHER", help="second graph to compare against (e.g. after surgery)")

    s = sub.add_parser("budget", help="per-frame time budget from 'name: ms' lines")
    s.add_argument("stages")
    return p


def _fmt_tensor(name, t) -> str:
    if t.size == 0:
        return f"{name}: {t.dtype.value}{list(t.shape)} (empty)"
    a = t.array.astype(np.float64)
    return f"{name}: {t.dtype.value}{list(t.shape)} min {a.min():.6g} max {a.max():.6g} mean {a.mean():.6g}"


def _cmd_validate(args) -> CommandResult:
    g = io.loads_graph(io.read_text(args.graph), args.graph, check=False)
    report = validate(g)
    doc = {"ok": report.ok, "violations": [{"kind": v.kind, "message": v.message} for v in report.violations]}
    if report.ok:
        return CommandResult(0, f"{args.graph}: ok ({len(g.nodes)} nodes)", doc)
    return CommandResult(1, f"{args.graph}: invalid\n{report.describe()}", doc)


def _cmd_run(args) -> CommandResult:
    g = io.load_graph(args.graph)
    if args.feeds:
        samples = io.load_feeds(args.feeds)
    else:
        samples = [interpreter.random_feeds(g, np.random.default_rng(args.seed))]
    lines, doc = [], []
    for i, feeds in enumerate(samples):
        out = interpreter.run(g, feeds)
        lines.append(f"sample {i}:")
        lines.extend("  " + _fmt_tensor(k, t) for k, t in out.items())
        doc.append({k: {"dtype": t.dtype.value, "shape": list(t.shape), "data": t.flat_data()} for k, t in out.items()})
    return CommandResult(0, "\n".join(lines), {"samples": doc})


def _cmd_surgery(args) -> CommandResult:
    g = io.load_graph(args.graph)
    passes = io.load_passes(args.passes)
    result = surgery.apply_passes(g, passes)
    text = [r.summary() for r in result.reports]
    doc = {"reports": [r.to_dict() for r in result.reports], "mappings": [m.to_dict() for m in result.mappings]}
    if result.error is not None:
        text.append(f"error: {result.error}")
        doc["error"] = str(result.error)
        return CommandResult(1, "\n".join(text), doc)
    io.save_graph(result.graph, args.output)
    text.append(f"wrote {args.output}")
    if result.mappings:
        mpath = args.mapping_out or f"{args.output}.mapping.json"
        Path(mpath).write_text(io.dumps_mappings(result.mappings))
        text.append(f"wrote {mpath}")
    return CommandResult(0, "\n".join(text), doc)


def _cmd_verify(args) -> CommandResult:
    before = io.load_graph(args.before)
    after = io.load_graph(args.after)
    mapping = io.load_mappings(args.mapping) if args.mapping else None
    rep = surgery.verify_equivalence(before, after, args.samples, args.seed, args.tol, mapping)
    lines = [f"{rep.samples} samples, seed {rep.seed}"]
    for name in rep.max_abs_diff:
        tag = "bit-exact" if rep.bit_exact[name] else "differs"
        lines.append(f"  {name}: max_abs_diff {rep.max_abs_diff[name]:.6g} ({tag})")
    ok = rep.within(args.tol)
    lines.append("equivalent" if ok else f"NOT equivalent within tolerance {args.tol:g}")
    doc = rep.to_dict()
    doc["tolerance"] = args.tol
    doc["equivalent"] = ok
    return CommandResult(0 if ok else 1, "\n".join(lines), doc)


def _cmd_quantize(args) -> CommandResult:
    g = io.load_graph(args.graph)
    if args.calib:
        calib_feeds = io.load_feeds(args.calib)
    else:
        rng = np.random.default_rng(args.seed)
        calib_feeds = [interpreter.random_feeds(g, rng) for _ in range(max(args.samples, 1))]
    eval_feeds = io.load_feeds(args.eval_feeds) if args.eval_feeds else calib_feeds
    calib = quantizer.calibrate(g, calib_feeds)
    rep = quantizer.simulate_quantized(g, calib, eval_feeds)
    lines = [f"calibrated on {calib.samples} samples, evaluated on {len(eval_feeds)}"]
    for name in rep.max_abs_error:
        lines.append(f"  {name}: max_abs_error {rep.max_abs_error[name]:.6g}, sqnr {rep.sqnr_db[name]:.2f} dB")
    doc = rep.to_dict()
    if args.diagnose:
        findings = quantizer.diagnose_range_disparity(g, calib, args.threshold)
        lines.append(f"range disparity findings: {len(findings)}")
        lines.extend("  " + f.describe() for f in findings)
        doc["findings"] = [
            {
                "node": f.node,
                "ratio": f.ratio,
                "branches": [{"edge": e, "min": lo, "max": hi} for e, lo, hi in f.branches],
                "recommendation": f.recommendation,
            }
            for f in findings
        ]
    if args.calib_out:
        Path(args.calib_out).write_text(json.dumps(calib.to_dict(), indent=2) + "\n")
        lines.append(f"wrote {args.calib_out}")
    return CommandResult(0, "\n".join(lines), doc)


def _plan_lines(label, g, part, est) -> list[str]:
    lines = [f"{label} ({g.name}): {len(part.segments)} segments, {len(part.boundary_tensors)} transfers"]
    for seg, ms in zip(part.segments, est.compute_ms):
        lines.append(f"  {seg.placement:5s} {ms:.6f} ms  {', '.join(seg.nodes)}")
    for t, ms in zip(part.boundary_tensors, est.transfer_ms):
        lines.append(f"  {t.direction:8s} {t.edge} ({t.nbytes} B) {ms:.6f} ms")
    for node, why in part.reasons.items():
        lines.append(f"  cpu fallback {node}: {why}")
    lines.append(f"  total {est.total_ms:.6f} ms, {est.fps_text()} FPS (inference only, modelled)")
    return lines


def _plan_doc(part, est) -> dict:
    return {
        "segments": [{"placement": s.placement, "nodes": list(s.nodes)} for s in part.segments],
        "transfers": [{"edge": t.edge, "bytes": t.nbytes, "direction": t.direction} for t in part.boundary_tensors],
        "fallback_reasons": dict(part.reasons),
        "estimate": est.to_dict(),
    }


def _cmd_plan(args) -> CommandResult:
    profile = planner.load_profile(args.profile) if args.profile else planner.default_profile()
    g = io.load_graph(args.graph)
    part, est = planner.plan(g, profile)
    lines = [f"profile {profile.name}"] + _plan_lines("graph", g, part, est)
    doc = {"profile": profile.name, "graph": _plan_doc(part, est)}
    if args.compare:
        other = io.load_graph(args.compare)
        p2, e2 = planner.plan(other, profile)
        lines += _plan_lines("compare", other, p2, e2)
        if est.unbounded or e2.unbounded:
            lines.append("relative FPS improvement: undefined (unbounded FPS)")
        else:
            gain = planner.compare_reports(est, e2)
            lines.append(f"relative FPS improvement: {gain:.2f}%")
            doc["relative_improvement_pct"] = gain
        doc["compare"] = _plan_doc(p2, e2)
    return CommandResult(0, "\n".join(lines), doc)


def _cmd_budget(args) -> CommandResult:
    budget = planner.pipeline_budget(io.load_stage_times(args.stages))
    lines = [f"  {name}: {ms:g} ms" for name, ms in budget.stages]
    lines.append(budget.describe())
    return CommandResult(0, "\n".join(lines), budget.to_dict())


COMMANDS = {
    "validate": _cmd_validate,
    "run": _cmd_run,
    "surgery": _cmd_surgery,
    "verify": _cmd_verify,
    "quantize": _cmd_quantize,
    "plan": _cmd_plan,
    "budget": _cmd_budget,
}


def cmd_dispatch(argv: Sequence[str]) -> CommandResult:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except _HelpShown:
        return CommandResult(0, "")
    except UsageError as exc:
        return CommandResult(2, str(exc).rstrip())
    if args.command is None:
        return CommandResult(2, parser.format_usage().rstrip())
    try:
        result = COMMANDS[args.command](args)
    except SurgeryError as exc:
        result = CommandResult(1, f"error: {exc}", {"error": str(exc)})
    except OSError as exc:
        msg = f"{exc.filename}: {exc.strerror}" if exc.filename else str(exc)
        result = CommandResult(1, f"error: {msg}", {"error": msg})
    if args.report:
        doc = dict(result.report or {})
        doc.setdefault("command", args.command)
        doc.setdefault("exit_code", result.exit_code)
        try:
            Path(args.report).write_text(json.dumps(_strict(doc), indent=2, sort_keys=True, default=_jsonable) + "\n")
        except OSError as exc:
            return CommandResult(1, f"{result.text}\nerror: cannot write report: {exc.strerror}", result.report)
    return result


def _strict(obj):
    """Non-finite floats become strings so the report stays plain JSON."""
    if isinstance(obj, dict):
        return {k: _strict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_strict(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return str(float(obj))
    return obj


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def main(argv: Sequence[str] | None = None) -> int:
    result = cmd_dispatch(sys.argv[1:] if argv is None else argv)
    stream = sys.stdout if result.exit_code == 0 else sys.stderr
    if result.text:
        print(result.text, file=stream)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
