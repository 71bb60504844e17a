"""Command-line front end: plan, simulate, perf, sweep.

Exit codes: 0 success, 1 invalid network or arguments, 2 capacity exceeded,
3 verification mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import zoo
from .engine import EngineError, run_network
from .formats import apply_explicit_values, load_network, read_feature_map, read_weights, write_feature_map, write_trace
from .mesh import MeshConfig, MeshError, run_mesh_network, slice_network
from .network import ChipConfig, FeatureMap, NetworkError, random_feature_map, random_params, validate_network
from .oracle import network_reference
from .perf import OPERATING_POINTS, energy, sweep
from .planner import PlanError, memory_report, plan_segments

EXIT_OK, EXIT_INVALID, EXIT_CAPACITY, EXIT_MISMATCH = 0, 1, 2, 3
CAPACITY_CODES = {"does-not-fit", "fragmentation", "wbuf-overflow", "fmm-overflow",
                  "bm-overflow", "cm-overflow", "buffer-overflow"}


def parse_chip(text: str) -> ChipConfig:
    parts = [int(p) for p in text.split(",")]
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("--chip expects M,N,C or M,N,C,fmm-words")
    fields = dict(zip(("M", "N", "C", "fmm_words"), parts))
    return replace(ChipConfig(), **fields)


def parse_mesh(text: str) -> MeshConfig:
    try:
        return MeshConfig.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--mesh expects MxN, got {text!r}") from exc


def load_net(name: str, resolution: Optional[int] = None):
    """A bundled network name or a JSON path. Returns (net, explicit scale/bias values)."""
    if name in zoo.BUILDERS:
        build, default = zoo.BUILDERS[name]
        if resolution and resolution != default:
            return build(resolution), {}
        return zoo.load_fixture(name), {}
    net, values = load_network(name)
    if resolution:
        raise NetworkError("shape-mismatch", "--resolution only applies to bundled networks")
    return net, values


def _emit(text: str, out: Optional[Path], name: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_plan(args) -> int:
    net, _ = load_net(args.network, args.resolution)
    validate_network(net).raise_for_errors()
    chip_net = slice_network(net, args.mesh) if args.mesh.m * args.mesh.n > 1 else net
    rep = memory_report(chip_net, args.chip)
    doc = {"network": net.name, "mesh": [args.mesh.m, args.mesh.n], **rep.to_dict()}
    if args.out:
        _emit(_json(doc), args.out, "memory_report.json")
    print(f"{'network':<14}{net.name}")
    print(f"{'wcl':<14}{rep.wcl_words} words ({rep.wcl_bits / 1e6:.2f} Mbit) at layer {rep.wcl_layer}"
          + (f" [{rep.wcl_block}]" if rep.wcl_block else ""))
    print(f"{'fmm':<14}{args.chip.fmm_words} words")
    print(f"{'border mem':<14}{rep.border_bits} bit (capacity {args.chip.bm_bits})")
    print(f"{'corner mem':<14}{rep.corner_bits} bit (capacity {args.chip.cm_bits})")
    try:
        plan = plan_segments(chip_net, args.chip)
    except PlanError as exc:
        print(f"does not fit: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    if args.out:
        _emit(_json(plan.to_dict()), args.out, "segment_plan.json")
    print(f"{'peak':<14}{plan.peak_words} words at layer {plan.peak_layer}: fits")
    return EXIT_OK


def _params(args, net, values):
    if args.weights:
        params = read_weights(args.weights)
    else:
        params = random_params(net, np.random.default_rng(args.weights_seed))
    return apply_explicit_values(params, values)


def _input(args, net) -> FeatureMap:
    if args.input:
        return read_feature_map(args.input)
    return random_feature_map(net.input_shape, np.random.default_rng(args.input_seed))


def cmd_simulate(args) -> int:
    net, values = load_net(args.network, args.resolution)
    validate_network(net).raise_for_errors()
    params = _params(args, net, values)
    fm = _input(args, net)
    t0 = time.perf_counter()
    traffic = None
    if args.mesh.m * args.mesh.n > 1:
        res = run_mesh_network(net, params, fm, args.mesh, args.chip, trace=args.trace)
        out, traffic = res.output, res.traffic
        events = [ev for pos in sorted(res.chips) for ev in res.chips[pos].engine.state.trace]
    else:
        out, events = run_network(net, params, fm, args.chip, trace=args.trace)
    elapsed = time.perf_counter() - t0
    verdict = {"network": net.name, "mesh": [args.mesh.m, args.mesh.n], "shape": list(out.shape)}
    code = EXIT_OK
    if args.verify:
        ref = network_reference(net, params, fm.data, cfg=args.chip)
        diff = np.argwhere(out.bits() != FeatureMap(ref).bits())
        if diff.size:
            c, y, x = (int(v) for v in diff[0])
            verdict["verdict"] = "mismatch"
            verdict["first_difference"] = {"c": c, "y": y, "x": x,
                                           "engine": float(out.data[c, y, x]), "oracle": float(ref[c, y, x])}
            print(f"mismatch at (c={c}, y={y}, x={x}): engine {out.data[c, y, x]} oracle {ref[c, y, x]}",
                  file=sys.stderr)
            code = EXIT_MISMATCH
        else:
            verdict["verdict"] = "bit-exact"
    verdict["metadata"] = {"elapsed_s": round(elapsed, 3), "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_feature_map(args.out / "output.fm", out)
        _emit(_json(verdict), args.out, "verdict.json")
        if traffic is not None:
            _emit(traffic.to_csv(), args.out, "traffic.csv")
        if args.trace:
            write_trace(args.out / "trace.jsonl", events)
    print(verdict.get("verdict", "done"))
    return code


def cmd_perf(args) -> int:
    net, _ = load_net(args.network, args.resolution)
    validate_network(net).raise_for_errors()
    rep = energy(net, OPERATING_POINTS[args.op_point], args.mesh, args.chip)
    if args.format == "json":
        _emit(_json(rep.to_dict()), args.out, "perf.json")
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "conv_cycles", "epilogue_cycles", "cycles", "ops"])
        for l in rep.layers:
            w.writerow([l.index, l.conv_cycles, l.epilogue_cycles, l.cycles, l.ops])
        _emit(buf.getvalue(), args.out, "perf.csv")
    return EXIT_OK


def _resolutions(text: str) -> list[int]:
    if ":" in text:
        start, stop, step = (int(p) for p in text.split(":"))
        return list(range(start, stop + 1, step))
    return [int(p) for p in text.split(",") if p]


def cmd_sweep(args) -> int:
    if args.network not in zoo.BUILDERS:
        raise NetworkError("unsupported-network", "sweep needs a bundled network that can be rebuilt per resolution")
    build = zoo.BUILDERS[args.network][0]
    rows = sweep(build, _resolutions(args.resolutions), crossings=args.crossings, base=args.base)
    if args.format == "json":
        doc = [{"resolution": r.resolution, "mesh": r.mesh, "io_bits_ws": r.io_bits_ws,
                "io_bits_fms": r.io_bits_fms, "ratio": r.ratio} for r in rows]
        _emit(_json(doc), args.out, "sweep.json")
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["resolution", "mesh", "io_bits_ws", "io_bits_fms", "ratio"])
        for r in rows:
            w.writerow([r.resolution, r.mesh, r.io_bits_ws, r.io_bits_fms, f"{r.ratio:.4f}"])
        _emit(buf.getvalue(), args.out, "sweep.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bwnsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, default_format="json"):
        sp.add_argument("--network", required=True, help="bundled name (%s) or JSON path" % ", ".join(zoo.fixture_names()))
        sp.add_argument("--resolution", type=int, help="image resolution for a bundled network")
        sp.add_argument("--chip", type=parse_chip, default=ChipConfig(), help="M,N,C[,fmm-words]")
        sp.add_argument("--mesh", type=parse_mesh, default=MeshConfig(), help="chip mesh MxN (default 1x1)")
        sp.add_argument("--format", choices=("json", "csv"), default=default_format)
        sp.add_argument("--out", type=Path, help="output directory")

    sp = sub.add_parser("plan", help="memory plan and worst-case layer")
    common(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="bit-exact functional run")
    common(sp)
    w = sp.add_mutually_exclusive_group()
    w.add_argument("--weights", type=Path)
    w.add_argument("--weights-seed", type=int, default=0)
    x = sp.add_mutually_exclusive_group()
    x.add_argument("--input", type=Path)
    x.add_argument("--input-seed", type=int, default=1)
    sp.add_argument("--verify", action="store_true", help="compare against the reference oracle")
    sp.add_argument("--trace", action="store_true", help="record the per-cycle access trace")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("perf", help="cycles, utilization, I/O and energy")
    common(sp)
    sp.add_argument("--op-point", choices=sorted(OPERATING_POINTS), default="0.5V")
    sp.set_defaults(func=cmd_perf)

    sp = sub.add_parser("sweep", help="I/O of both dataflows over image resolution")
    common(sp, default_format="csv")
    sp.add_argument("--resolutions", default="224:1344:32", help="start:stop:step or comma list")
    sp.add_argument("--crossings", type=float, default=2.0, help="times each intermediate map crosses the chip boundary")
    sp.add_argument("--base", type=int, default=224, help="largest resolution one chip holds")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PlanError, EngineError, MeshError) as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_CAPACITY if exc.code in CAPACITY_CODES else EXIT_INVALID
    except (NetworkError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
