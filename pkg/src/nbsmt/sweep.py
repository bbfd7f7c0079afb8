"""Sweep per-layer thread configurations and extract the Pareto front.

Which layers to decelerate is an open question; this harness enumerates
candidate configurations (a handful of strategies, no optimizer), measures
each one's (speedup, top-1) with and without statistics recalibration, and
emits plot-ready data: the dot cloud and its non-dominated front.
"""

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

from nbsmt.engine import ArrayConfig, ExecutionMode, evaluate
from nbsmt.gemm import speedup as report_speedup
from nbsmt.recalib import RecalibPlan, recalibrate

EXHAUSTIVE_BOUND = 4096


@dataclass(frozen=True)
class SweepPoint:
    thread_config: tuple  # ((layer, T), ...)
    recalibrated: bool
    speedup: float
    top1: float
    accuracy_decrease: float  # percentage points below the float model

    def to_dict(self):
        return {
            "thread_config": dict(self.thread_config),
            "recalibrated": self.recalibrated,
            "speedup": self.speedup,
            "top1": self.top1,
            "accuracy_decrease": self.accuracy_decrease,
        }


def _freeze(config):
    return tuple(sorted(config.items()))


def enumerate_configs(graph, strategy, max_flips=None, explicit=None,
                      bound=EXHAUSTIVE_BOUND):
    """Deterministic list of thread configs over the eligible layers.

    Strategies: "flip-one-to-2T" and "flip-one-to-1T" start from all-4T
    and slow one layer at a time; "exhaustive" tries every assignment that
    differs from all-4T in at most `max_flips` layers (refused with a
    count estimate past `bound`); "explicit" passes `explicit` through.
    Exempt layers never appear; they are pinned single-threaded.
    """
    eligible = graph.eligible_layers()
    if strategy == "explicit":
        if not explicit:
            raise ValueError("explicit strategy needs a config list")
        out = []
        for config in explicit:
            unknown = set(config) - set(eligible)
            if unknown:
                raise ValueError(f"config names non-eligible layers: {sorted(unknown)}")
            out.append({name: config.get(name, 4) for name in eligible})
        return out

    base = {name: 4 for name in eligible}
    if strategy in ("flip-one-to-2T", "flip-one-to-1T"):
        slow = 2 if strategy.endswith("2T") else 1
        configs = [dict(base)]
        for name in eligible:
            c = dict(base)
            c[name] = slow
            configs.append(c)
        return configs

    if strategy == "exhaustive":
        k = len(eligible) if max_flips is None else min(max_flips, len(eligible))
        count = sum(
            math.comb(len(eligible), j) * 2**j for j in range(k + 1)
        )
        if count > bound:
            raise ValueError(
                f"exhaustive sweep would enumerate {count} configs (bound {bound}); "
                "lower max_flips or raise the bound"
            )
        configs = []
        for j in range(k + 1):
            for names in itertools.combinations(eligible, j):
                for values in itertools.product((1, 2), repeat=j):
                    c = dict(base)
                    c.update(zip(names, values))
                    configs.append(c)
        return configs

    raise ValueError(f"unknown strategy {strategy!r}")


def run_sweep(graph, qparams, dataset, configs, with_recalib=False,
              recalib_images=None, recalib_kwargs=None, fp32_top1=None,
              batch_size=64, array=ArrayConfig(), jobs=1):
    """Evaluate every config; returns SweepPoints in enumeration order.

    With recalibration on, each config gets its own statistics pass on a
    fresh copy of the graph (the noise being corrected depends on the
    config). `fp32_top1` anchors accuracy_decrease; when omitted it is
    measured here with a float pass over `dataset`.
    """
    if fp32_top1 is None:
        fp32_top1 = evaluate(graph, None, dataset, ExecutionMode.float32(),
                             batch_size, array, jobs).top1
    if with_recalib and recalib_images is None:
        raise ValueError("recalibration sweep needs recalib_images")

    points = []
    for config in configs:
        mode = ExecutionMode.nbsmt(config)
        g = graph
        if with_recalib:
            plan = RecalibPlan(images=recalib_images, mode=mode,
                               **(recalib_kwargs or {}))
            g = recalibrate(graph, qparams, plan, array)
        r = evaluate(g, qparams, dataset, mode, batch_size, array, jobs)
        points.append(
            SweepPoint(
                thread_config=_freeze(config),
                recalibrated=with_recalib,
                speedup=report_speedup(r.report),
                top1=r.top1,
                accuracy_decrease=(fp32_top1 - r.top1) * 100.0,
            )
        )
    return points


def pareto_front(points):
    """Non-dominated subset: nothing else has >= speedup and <= decrease
    with one strict. Exact duplicates survive together. Sorted by speedup."""
    if not points:
        raise ValueError("empty point set")
    front = []
    for p in points:
        dominated = False
        for q in points:
            if (
                q.speedup >= p.speedup
                and q.accuracy_decrease <= p.accuracy_decrease
                and (q.speedup > p.speedup or q.accuracy_decrease < p.accuracy_decrease)
            ):
                dominated = True
                break
        if not dominated:
            front.append(p)
    return sorted(front, key=lambda p: (p.speedup, p.accuracy_decrease))


def write_dat(points, path):
    """Two whitespace-separated columns: speedup, accuracy_decrease."""
    lines = [f"{p.speedup:.6f} {p.accuracy_decrease:.6f}" for p in points]
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def write_report(points, front, path):
    doc = {
        "points": [p.to_dict() for p in points],
        "front": [p.to_dict() for p in front],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")
