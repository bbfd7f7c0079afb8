"""Command line front end.

Thin orchestration over the library: each subcommand loads artifacts,
calls one module, and writes UTF-8 JSON (sorted keys, no timestamps), so
rerunning a command with the same flags produces byte-identical output.
Verbosity comes from the NBSMT_LOG environment variable (debug, info,
warning, error); errors print a single ``error: ...`` line on stderr and
exit nonzero.
"""

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from nbsmt.container import ContainerError, load_model, save_model
from nbsmt.data import DatasetError, load_dataset, sample_calibration_subset
from nbsmt.engine import ExecutionMode, evaluate, uniform_threads
from nbsmt.gemm import ArrayConfig, speedup
from nbsmt.graph import GraphError
from nbsmt.prune import magnitude_prune, sparsity_report
from nbsmt.quant import QuantError, calibrate, load_qparams, save_qparams
from nbsmt.recalib import RecalibPlan, recalibrate, stat_drift
from nbsmt.sweep import (SweepPoint, enumerate_configs, pareto_front,
                         run_sweep, write_dat, write_report)

log = logging.getLogger("nbsmt.cli")

_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO,
           "warning": logging.WARNING, "error": logging.ERROR}


def _setup_logging():
    name = os.environ.get("NBSMT_LOG", "warning").strip().lower()
    logging.basicConfig(level=_LEVELS.get(name, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _thread_config(graph, uniform, per_layer):
    """Parse `--threads NT` plus `--threads-per-layer a=2,b=1` overrides."""
    m = re.fullmatch(r"(\d+)T", uniform)
    if m is None:
        raise ValueError(f"bad thread spec {uniform!r}, expected e.g. 4T")
    config = uniform_threads(graph, int(m.group(1)))
    if per_layer:
        for item in per_layer.split(","):
            name, sep, value = item.partition("=")
            if not sep or not value:
                raise ValueError(f"bad per-layer override {item!r}")
            if name not in config:
                eligible = ", ".join(sorted(config)) or "none"
                raise ValueError(
                    f"layer {name!r} is not eligible (eligible: {eligible})")
            config[name] = int(value)
    return config


def _mode_from_args(graph, args):
    if args.mode == "float32":
        return ExecutionMode.float32()
    if args.mode == "quant":
        return ExecutionMode.quant_reference()
    return ExecutionMode.nbsmt(
        _thread_config(graph, args.threads, args.threads_per_layer))


def _array_from_args(args):
    return ArrayConfig(rows=args.array_rows, cols=args.array_cols)


def _sampled_images(ds, count, seed):
    return sample_calibration_subset(ds, min(count, len(ds)), seed).images


def cmd_calibrate(args):
    graph = load_model(args.model)
    ds = load_dataset(args.data, args.format, args.split)
    subset = sample_calibration_subset(ds, min(args.samples, len(ds)), args.seed)
    log.info("calibrating on %d images", len(subset))
    qparams = calibrate(graph, subset, batch_size=args.batch_size)
    save_qparams(qparams, args.out)
    _emit({"layers": sorted(qparams.layers), "samples": len(subset),
           "out": str(args.out)})
    return 0


def cmd_eval(args):
    graph = load_model(args.model)
    ds = load_dataset(args.data, args.format, args.split)
    mode = _mode_from_args(graph, args)
    qparams = load_qparams(args.quant) if args.quant else None
    if mode.kind != "float32" and qparams is None:
        raise ValueError(f"--mode {args.mode} needs --quant")
    log.info("evaluating %d images in %s mode", len(ds), mode.kind)
    result = evaluate(graph, qparams, ds, mode, batch_size=args.batch_size,
                      array=_array_from_args(args), jobs=args.jobs)
    doc = {"mode": mode.kind,
           "threads": dict(mode.thread_map()) if mode.kind == "nbsmt" else None,
           "speedup": speedup(result.report) if result.report.layers else None}
    doc.update(result.to_dict())
    _emit(doc, args.out)
    return 0


def cmd_recalibrate(args):
    graph = load_model(args.model)
    qparams = load_qparams(args.quant)
    ds = load_dataset(args.data, args.format, args.split)
    mode = ExecutionMode.nbsmt(
        _thread_config(graph, args.threads, args.threads_per_layer))
    images = _sampled_images(ds, args.batches * args.batch_size, args.seed)
    plan = RecalibPlan(images=images, mode=mode, batch_size=args.batch_size,
                       num_batches=args.batches, momentum=args.momentum)
    log.info("recalibrating: %d batches of %d", args.batches, args.batch_size)
    updated = recalibrate(graph, qparams, plan, array=_array_from_args(args),
                          log_path=args.log)
    save_model(updated, args.out)
    drift = {name: {"mean_l2": dm, "var_l2": dv}
             for name, (dm, dv) in stat_drift(graph, updated).items()}
    _emit({"out": str(args.out), "threads": dict(mode.thread_map()),
           "batches": args.batches, "drift": drift})
    return 0


def cmd_prune(args):
    graph = load_model(args.model)
    names = args.layers.split(",") if args.layers else None
    pruned = magnitude_prune(graph, args.sparsity, layer_names=names)
    save_model(pruned, args.out)
    qparams = load_qparams(args.quant) if args.quant else None
    _emit({"out": str(args.out), "target_sparsity": args.sparsity,
           "sparsity": sparsity_report(pruned, qparams)})
    return 0


def _explicit_configs(graph, specs):
    configs = []
    for spec in specs or []:
        configs.append(_thread_config(graph, "4T", spec))
    return configs or None


def cmd_sweep(args):
    graph = load_model(args.model)
    qparams = load_qparams(args.quant)
    ds = load_dataset(args.data, args.format, args.split)
    configs = enumerate_configs(graph, args.strategy, max_flips=args.max_flips,
                                explicit=_explicit_configs(graph, args.config))
    log.info("sweeping %d configurations", len(configs))

    recalib_images = None
    recalib_kwargs = None
    if args.recalib:
        src = load_dataset(args.recalib_data or args.data, args.format,
                           args.recalib_split)
        recalib_images = _sampled_images(
            src, args.recalib_batches * args.recalib_batch_size, args.seed)
        recalib_kwargs = {"batch_size": args.recalib_batch_size,
                          "num_batches": args.recalib_batches,
                          "momentum": args.momentum}

    points = run_sweep(graph, qparams, ds, configs, with_recalib=args.recalib,
                       recalib_images=recalib_images,
                       recalib_kwargs=recalib_kwargs, fp32_top1=args.fp32_top1,
                       batch_size=args.batch_size,
                       array=_array_from_args(args), jobs=args.jobs)
    front = pareto_front(points)

    if args.out:
        write_dat(points, args.out)
        out = Path(args.out)
        front_path = args.front or out.with_name(f"{out.stem}.front{out.suffix}")
        write_dat(front, front_path)
    if args.report:
        write_report(points, front, args.report)
    _emit({"num_points": len(points), "num_front": len(front),
           "front": [p.to_dict() for p in front]})
    return 0


def _format_config(d):
    return ",".join(f"{k}={v}" for k, v in sorted(d.items())) or "-"


def cmd_report(args):
    doc = json.loads(Path(args.input).read_text(encoding="utf-8"))
    if "points" in doc:
        points = [SweepPoint(
            thread_config=tuple(sorted(d["thread_config"].items())),
            recalibrated=d["recalibrated"], speedup=d["speedup"],
            top1=d["top1"], accuracy_decrease=d["accuracy_decrease"])
            for d in doc["points"]]
        front = pareto_front(points)
        if args.dat:
            write_dat(points, args.dat)
        if args.front:
            write_dat(front, args.front)
        on_front = set(front)
        print(f"{'speedup':>8} {'top1':>8} {'decrease':>9}  configuration")
        for p in sorted(points, key=lambda p: (p.speedup, p.accuracy_decrease)):
            marker = " *" if p in on_front else "  "
            recal = " [recal]" if p.recalibrated else ""
            print(f"{p.speedup:8.3f} {p.top1:8.4f} {p.accuracy_decrease:8.2f}pp"
                  f"{marker} {_format_config(dict(p.thread_config))}{recal}")
        print(f"{len(front)} of {len(points)} points on the front (*)")
    elif "top1" in doc:
        speed = doc.get("speedup")
        speed_text = f"{speed:.3f}x" if speed is not None else "n/a"
        print(f"mode {doc.get('mode', '?')}  top1 {doc['top1']:.4f} "
              f"({doc.get('correct', '?')}/{doc.get('total', '?')})  "
              f"speedup {speed_text}")
        for name, entry in sorted(doc.get("layers", {}).items()):
            print(f"  {name}: cycles {entry['cycles']} "
                  f"collision_rate {entry['collision_rate']:.4f} "
                  f"mean_abs_err {entry['mean_abs_squeeze_error']:.3f}")
    else:
        raise ValueError(f"{args.input}: not a recognized report document")
    return 0


def _add_data_flags(p, default_split):
    p.add_argument("--data", required=True, help="dataset file or directory")
    p.add_argument("--format", default="mnist-idx",
                   choices=["mnist-idx", "cifar10-bin"])
    p.add_argument("--split", default=default_split)


def _add_thread_flags(p):
    p.add_argument("--threads", default="4T",
                   help="uniform thread capacity, e.g. 1T, 2T, 4T")
    p.add_argument("--threads-per-layer", default=None, metavar="L=T,...",
                   help="per-layer overrides, e.g. conv2=2,conv3=1")


def _add_array_flags(p):
    p.add_argument("--array-rows", type=int, default=32)
    p.add_argument("--array-cols", type=int, default=32)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nbsmt",
        description="Quantized CNN inference under shared-MAC multithreading")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="derive quantization constants")
    p.add_argument("--model", required=True)
    _add_data_flags(p, "train")
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="qparams JSON path")
    p.set_defaults(run=cmd_calibrate)

    p = sub.add_parser("eval", help="measure accuracy and cycle counts")
    p.add_argument("--model", required=True)
    p.add_argument("--quant", default=None, help="qparams JSON path")
    _add_data_flags(p, "t10k")
    p.add_argument("--mode", default="nbsmt",
                   choices=["float32", "quant", "nbsmt"])
    _add_thread_flags(p)
    _add_array_flags(p)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="report JSON path (default stdout)")
    p.set_defaults(run=cmd_eval)

    p = sub.add_parser("recalibrate",
                       help="refresh normalization statistics under squeeze noise")
    p.add_argument("--model", required=True)
    p.add_argument("--quant", required=True)
    _add_data_flags(p, "train")
    _add_thread_flags(p)
    _add_array_flags(p)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--momentum", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None, help="per-batch statistics JSON path")
    p.add_argument("--out", required=True, help="output container directory")
    p.set_defaults(run=cmd_recalibrate)

    p = sub.add_parser("prune", help="zero the smallest-magnitude weights")
    p.add_argument("--model", required=True)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--layers", default=None, help="comma-separated layer names")
    p.add_argument("--quant", default=None,
                   help="also report zero fractions after quantization")
    p.add_argument("--out", required=True, help="output container directory")
    p.set_defaults(run=cmd_prune)

    p = sub.add_parser("sweep", help="speedup/accuracy trade-off sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--quant", required=True)
    _add_data_flags(p, "t10k")
    p.add_argument("--strategy", default="flip-one-to-2T",
                   choices=["flip-one-to-2T", "flip-one-to-1T",
                            "exhaustive", "explicit"])
    p.add_argument("--max-flips", type=int, default=None)
    p.add_argument("--config", action="append", metavar="L=T,...",
                   help="explicit strategy: one configuration per flag")
    p.add_argument("--recalib", action="store_true",
                   help="refresh statistics per configuration before scoring")
    p.add_argument("--recalib-data", default=None,
                   help="dataset for statistics (default: --data)")
    p.add_argument("--recalib-split", default="train")
    p.add_argument("--recalib-batches", type=int, default=100)
    p.add_argument("--recalib-batch-size", type=int, default=64)
    p.add_argument("--momentum", type=float, default=0.1)
    p.add_argument("--fp32-top1", type=float, default=None,
                   help="anchor accuracy (default: measured)")
    _add_array_flags(p)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help=".dat path (front written beside it)")
    p.add_argument("--front", default=None, help="override front .dat path")
    p.add_argument("--report", default=None, help="full JSON report path")
    p.set_defaults(run=cmd_sweep)

    p = sub.add_parser("report", help="render a saved JSON report")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--dat", default=None, help="rewrite point data here")
    p.add_argument("--front", default=None, help="rewrite front data here")
    p.set_defaults(run=cmd_report)

    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except (ContainerError, DatasetError, GraphError, QuantError,
            ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
