"""Micro-benchmark of the filter application operator.

Variants are gated on numerical equality against the naive reference
before any timing; a variant off by more than 1e-6 is flagged and kept
out of the timing report. Filter normalization happens outside the
timed region so the numbers isolate the application cost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .filters import FilterGeometry, apply_dp3df, normalize_filters

GATE = 1e-6


@dataclass
class BenchResult:
    variant: str
    height: int
    width: int
    t_frames: int
    r: int
    k_h: int
    k_w: int
    k_t: int
    threads: int
    max_abs_diff: float
    gate_passed: bool
    timed: bool
    wall_time_s: float
    throughput_px_s: float

    @property
    def dims(self) -> str:
        return (f"{self.t_frames}x{self.height}x{self.width}"
                f" r{self.r} k{self.k_h}x{self.k_w}x{self.k_t}")


def bench_instance(height=256, width=256, t_frames=3, r=4, k_h=3, k_w=3, k_t=3,
                   threads=4, repeats=3, seed=0):
    """Gate and time all variants on one random instance."""
    geom = FilterGeometry(r=r, k_h=k_h, k_w=k_w, k_t=k_t, t_frames=t_frames)
    rng = np.random.default_rng(seed)
    clip = rng.random((t_frames, height, width, 3), dtype=np.float32)
    raw = rng.standard_normal((height, width, geom.raw_channels)).astype(np.float32)
    field = normalize_filters(raw, geom)

    reference = apply_dp3df(clip, field, geom, variant="naive")
    plan = [("naive", 1), ("tiled", 1), ("parallel", threads)]
    out_px = height * r * width * r
    results = []
    for variant, nthreads in plan:
        got = apply_dp3df(clip, field, geom, variant=variant, threads=nthreads)
        diff = float(np.max(np.abs(got.astype(np.float64) - reference.astype(np.float64))))
        gate = diff <= GATE
        wall = float("nan")
        throughput = float("nan")
        if gate:
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                apply_dp3df(clip, field, geom, variant=variant, threads=nthreads)
                best = min(best, time.perf_counter() - t0)
            wall = best
            throughput = out_px / best
        results.append(BenchResult(
            variant=variant, height=height, width=width, t_frames=t_frames,
            r=r, k_h=k_h, k_w=k_w, k_t=k_t, threads=nthreads,
            max_abs_diff=diff, gate_passed=gate, timed=gate,
            wall_time_s=wall, throughput_px_s=throughput,
        ))
    return results


def run_bench(instances, repeats=3, seed=0):
    """Run bench_instance over a list of dim dicts; returns a flat list."""
    results = []
    for inst in instances:
        results.extend(bench_instance(repeats=repeats, seed=seed, **inst))
    return results


def bench_csv(results) -> str:
    lines = ["variant,dims,threads,max_abs_diff,gate_passed,wall_time_s,throughput_px_s\n"]
    for r in results:
        wall = "" if not r.timed else f"{r.wall_time_s:.6f}"
        thr = "" if not r.timed else f"{r.throughput_px_s:.1f}"
        lines.append(
            f"{r.variant},{r.dims},{r.threads},{r.max_abs_diff:.3e},"
            f"{r.gate_passed},{wall},{thr}\n"
        )
    return "".join(lines)
