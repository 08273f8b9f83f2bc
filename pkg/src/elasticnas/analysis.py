"""Population-level statistics and figure-data generation.

All outputs are plain data (lists / numpy arrays / CSV rows); plotting is
left to external tools.
"""

from __future__ import annotations

import csv
import math
import random
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import TooFewSamples
from .space import ArchSpec, BlockConfig, SearchSpaceDef, sample_uniform

DEFAULT_BUCKET_MS = 5.0


@dataclass
class LatencyBucket:
    lower_ms: float
    upper_ms: float
    samples: list = field(default_factory=list)  # (arch, accuracy, latency)


@dataclass
class CdfCurve:
    """Classification-error CDF: fraction of samples at or below each error."""

    errors: list[float]
    fractions: list[float]

    @staticmethod
    def from_accuracies(accuracies) -> "CdfCurve":
        errors = sorted(1.0 - a for a in accuracies)
        n = len(errors)
        return CdfCurve(errors, [(i + 1) / n for i in range(n)])


@dataclass
class ParetoFront:
    points: list[tuple[float, float]]  # (latency_ms, accuracy), both ascending


@dataclass
class CostReport:
    gpu_hours: float
    price_per_hour: float
    co2_per_hour: float
    dollars: float
    co2_lbs: float


def bucket_cdf(space: SearchSpaceDef, n_per_bucket: int, lat_model, acc_fn,
               bucket_ms: float = DEFAULT_BUCKET_MS, seed: int = 0,
               n_probe: int = 500, max_draws: int = 100_000,
               pooled: bool = False):
    """Per-latency-bucket error CDFs from random sampling.

    Default mode rejection-samples until every nonempty bucket (nonempty =
    hit by a probe draw) holds ``n_per_bucket`` archs; buckets that cannot
    be filled within ``max_draws`` are skipped with a warning. With
    ``pooled=True`` a single stream of samples is bucketed as-is and
    buckets with fewer than 2 members are dropped.
    """
    if n_per_bucket < 2:
        raise TooFewSamples("need n_per_bucket >= 2")
    rng = random.Random(seed)

    def bucket_index(ms):
        return math.floor(ms / bucket_ms)

    buckets: dict[int, LatencyBucket] = {}

    def ensure(idx):
        if idx not in buckets:
            buckets[idx] = LatencyBucket(idx * bucket_ms, (idx + 1) * bucket_ms)
        return buckets[idx]

    if pooled:
        for _ in range(max(n_probe, n_per_bucket)):
            arch = sample_uniform(space, rng)
            ms = lat_model(arch)
            ensure(bucket_index(ms)).samples.append((arch, acc_fn(arch), ms))
        for idx in [i for i, b in buckets.items() if len(b.samples) < 2]:
            del buckets[idx]
    else:
        probes = []
        for _ in range(n_probe):
            arch = sample_uniform(space, rng)
            probes.append((arch, lat_model(arch)))
        wanted = {bucket_index(ms) for _, ms in probes}
        for arch, ms in probes:
            b = ensure(bucket_index(ms))
            if len(b.samples) < n_per_bucket:
                b.samples.append((arch, acc_fn(arch), ms))
        draws = 0
        while draws < max_draws and any(
            len(buckets[i].samples) < n_per_bucket for i in wanted
        ):
            arch = sample_uniform(space, rng)
            ms = lat_model(arch)
            draws += 1
            idx = bucket_index(ms)
            if idx in wanted and len(buckets[idx].samples) < n_per_bucket:
                buckets[idx].samples.append((arch, acc_fn(arch), ms))
        for idx in sorted(wanted):
            if len(buckets[idx].samples) < n_per_bucket:
                warnings.warn(
                    f"bucket [{idx * bucket_ms}, {(idx + 1) * bucket_ms}) ms "
                    f"underfilled ({len(buckets[idx].samples)}/{n_per_bucket}); skipped"
                )
                del buckets[idx]

    out = []
    for idx in sorted(buckets):
        b = buckets[idx]
        curve = CdfCurve.from_accuracies([acc for _, acc, _ in b.samples])
        out.append((b, curve))
    return out


def _t_quantile(q: float, df: int) -> float:
    """Upper t quantile via the inverse regularized incomplete beta.

    More accurate than the generic percent-point inversion (error at
    machine epsilon rather than ~1e-10), which matters for closed-form
    comparisons.
    """
    from scipy import special

    z = float(special.betaincinv(df / 2.0, 0.5, 2.0 * (1.0 - q)))
    return math.sqrt(df * (1.0 / z - 1.0))


def bucket_mean_ci(samples, confidence: float = 0.95):
    """Sample mean and t-distribution CI half-width."""
    samples = list(samples)
    if len(samples) < 2:
        raise TooFewSamples(f"need >= 2 samples, got {len(samples)}")
    arr = np.asarray(samples, dtype=float)
    mean = float(arr.mean())
    sem = float(arr.std(ddof=1) / math.sqrt(len(arr)))
    t = _t_quantile(0.5 + confidence / 2, len(arr) - 1)
    return mean, t * sem


def boxplot_stats(samples):
    """(min, q1, median, q3, max) with linear-interpolation quartiles."""
    arr = np.asarray(list(samples), dtype=float)
    if arr.size == 0:
        raise TooFewSamples("need >= 1 sample")
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return float(arr.min()), float(q1), float(med), float(q3), float(arr.max())


def pareto_front(points) -> ParetoFront:
    """Non-dominated (latency, accuracy) subset, sorted by latency.

    A point dominates another when it is no worse in both coordinates and
    strictly better in at least one; duplicates collapse to one point.
    """
    unique = sorted(set((float(l), float(a)) for l, a in points),
                    key=lambda p: (p[0], -p[1]))
    front = []
    best_acc = -math.inf
    for lat, acc in unique:
        if acc > best_acc:
            front.append((lat, acc))
            best_acc = acc
    return ParetoFront(front)


def heatmap_grid(space: SearchSpaceDef, acc_fn, lat_model, kernel: int | None = None,
                 resolution: int | None = None):
    """Accuracy/latency matrices over (uniform depth x uniform width).

    Every grid point sets all blocks to the same (depth, width) with a
    fixed kernel; coupling-illegal combinations are still evaluated, using
    plain slicing semantics.
    """
    if kernel is None:
        kernel = space.max_kernel
    if resolution is None:
        resolution = max(space.resolutions)
    depths, widths = space.levels.depths, space.levels.widths
    acc = np.zeros((len(depths), len(widths)))
    lat = np.zeros((len(depths), len(widths)))
    for i, d in enumerate(depths):
        for j, w in enumerate(widths):
            block = BlockConfig(d, (w,) * d, (kernel,) * d)
            arch = ArchSpec((block,) * space.m, resolution)
            acc[i, j] = acc_fn(arch)
            lat[i, j] = lat_model(arch)
    return acc, lat


# Rates back-solved from the published cost table (hourly cloud price of one
# V100-class accelerator and energy-based CO2 estimate).
DEFAULT_PRICE_PER_HOUR = 2.45
DEFAULT_CO2_LBS_PER_HOUR = 0.282


def cost_report(gpu_hours: float,
                price_per_hour: float = DEFAULT_PRICE_PER_HOUR,
                co2_per_hour: float = DEFAULT_CO2_LBS_PER_HOUR) -> CostReport:
    if gpu_hours < 0 or price_per_hour < 0 or co2_per_hour < 0:
        raise ValueError("cost inputs must be non-negative")
    return CostReport(
        gpu_hours=gpu_hours,
        price_per_hour=price_per_hour,
        co2_per_hour=co2_per_hour,
        dollars=gpu_hours * price_per_hour,
        co2_lbs=gpu_hours * co2_per_hour,
    )


# -- CSV emitters --------------------------------------------------------------

def write_cdf_csv(bucket_curves, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket_lo", "bucket_hi", "error", "fraction"])
        for bucket, curve in bucket_curves:
            for err, frac in zip(curve.errors, curve.fractions):
                writer.writerow([bucket.lower_ms, bucket.upper_ms,
                                 repr(err), repr(frac)])


def write_pareto_csv(front: ParetoFront, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["latency_ms", "accuracy"])
        for lat, acc in front.points:
            writer.writerow([repr(lat), repr(acc)])


def write_heatmap_csv(space: SearchSpaceDef, acc, lat, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["depth", "width", "accuracy", "latency_ms"])
        for i, d in enumerate(space.levels.depths):
            for j, w in enumerate(space.levels.widths):
                writer.writerow([d, w, repr(float(acc[i, j])), repr(float(lat[i, j]))])
