"""Wall-clock scaling benchmark of softmax attention vs LAM, with CSV output."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import memtrack
from .attention import AttentionDims, FlopMethod, flop_count, linear_attention_vectorized, softmax_attention
from .errors import FormatError, ParameterError
from .numerics import Rng, seeded_fill

CSV_HEADER = ("method", "n", "d_k", "d_v", "wall_ns", "flops", "peak_aux_floats")
METHODS: dict[str, tuple[Callable, FlopMethod]] = {
    "softmax": (softmax_attention, FlopMethod.SOFTMAX),
    "lam": (linear_attention_vectorized, FlopMethod.LAM),
}
DEFAULT_SIZES = tuple(2**p for p in range(10, 19))  # 1024 .. 262144


@dataclass
class RunConfig:
    seed: int = 0
    sizes: Sequence[int] = DEFAULT_SIZES
    d_k: int = 64
    d_v: int = 64
    repeats: int = 5
    out: str | Path | None = None
    softmax_max_n: int = 16384
    methods: Sequence[str] = ("softmax", "lam")

    def __post_init__(self):
        self.sizes = tuple(int(n) for n in self.sizes)
        if not self.sizes or any(n < 1 for n in self.sizes):
            raise ParameterError("sizes must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ParameterError(f"sizes must be strictly increasing, got {list(self.sizes)}")
        if self.repeats < 5:
            raise ParameterError(f"repeats must be >= 5, got {self.repeats}")
        if self.d_k < 1 or self.d_v < 1:
            raise ParameterError("d_k and d_v must be positive")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ParameterError(f"unknown methods {sorted(unknown)}")


@dataclass
class BenchRecord:
    method: str
    n: int
    d_k: int
    d_v: int
    wall_ns: int
    flops: int
    peak_aux_floats: int


@dataclass
class BenchResult:
    records: list[BenchRecord] = field(default_factory=list)
    slopes: dict[str, float] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.records:
            writer.writerow([r.method, r.n, r.d_k, r.d_v, r.wall_ns, r.flops, r.peak_aux_floats])
        for method, slope in self.slopes.items():
            writer.writerow(["slope", method, repr(slope)])
        return buf.getvalue()


def time_median_ns(fn: Callable[[], object], repeats: int, warmup: bool = True) -> int:
    """Median wall time of ``repeats`` calls after one discarded warm-up call."""
    if warmup:
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return max(1, int(statistics.median(samples)))


def aux_floats(kernel: Callable, q, k, v) -> int:
    """Floats held in non per-row temporaries during one kernel call."""
    with memtrack.track_allocations() as log:
        kernel(q, k, v)
    return log.aux_floats


def fit_loglog_slope(ns: Sequence[int], wall_ns: Sequence[float]) -> float:
    """Least-squares slope of ``log(wall) ~ log(n)``."""
    if len(ns) < 2:
        raise ParameterError("need at least two sizes to fit a slope")
    slope, _ = np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(wall_ns, float)), 1)
    return float(slope)


def run_bench(config: RunConfig, progress: Callable[[BenchRecord], None] | None = None) -> BenchResult:
    """Time each method at every configured size (softmax capped at ``softmax_max_n``).

    Kernels run on one BLAS thread. Inputs are regenerated per size from
    ``config.seed`` so a run is reproducible apart from the timings.
    """
    result = BenchResult()
    with threadpool_limits(limits=1):
        for method in config.methods:
            kernel, flop_method = METHODS[method]
            ns = [n for n in config.sizes if method != "softmax" or n <= config.softmax_max_n]
            for n in ns:
                rng = Rng(config.seed + n)
                q = seeded_fill(rng, n, config.d_k)
                k = seeded_fill(rng, n, config.d_k)
                v = seeded_fill(rng, n, config.d_v)
                # the tracked call doubles as the discarded warm-up
                aux = aux_floats(kernel, q, k, v)
                wall = time_median_ns(lambda: kernel(q, k, v), config.repeats, warmup=False)
                rec = BenchRecord(
                    method=method,
                    n=n,
                    d_k=config.d_k,
                    d_v=config.d_v,
                    wall_ns=wall,
                    flops=flop_count(flop_method, AttentionDims(n=n, c=config.d_v, d_k=config.d_k, d_v=config.d_v)),
                    peak_aux_floats=aux,
                )
                result.records.append(rec)
                if progress:
                    progress(rec)
                del q, k, v
            if len(ns) >= 2:
                rows = [r for r in result.records if r.method == method]
                result.slopes[method] = fit_loglog_slope([r.n for r in rows], [r.wall_ns for r in rows])
    if config.out is not None:
        Path(config.out).write_text(result.to_csv(), encoding="utf-8")
    return result


def read_bench_csv(path) -> BenchResult:
    """Parse a CSV written by :func:`run_bench`."""
    result = BenchResult()
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise FormatError(f"{path}: unexpected CSV header {rows[:1]}")
    for row in rows[1:]:
        if row[0] == "slope":
            result.slopes[row[1]] = float(row[2])
        else:
            m, n, dk, dv, wall, flops, aux = row
            result.records.append(BenchRecord(m, int(n), int(dk), int(dv), int(wall), int(flops), int(aux)))
    return result
