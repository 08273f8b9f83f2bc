"""FLOP counting, lookup-table and synthetic latency models, and memoization.

Latencies are 64-bit float milliseconds. The synthetic model stands in for
on-device measurement: a fixed overhead plus a slope per MFLOP, with
optional Gaussian noise that is a deterministic function of (seed, arch)
so that every backend remains a pure function of the architecture.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field

from .errors import (
    InvalidArch,
    LutParseError,
    MissingEntry,
    NonPositiveEntry,
)
from .space import ArchSpec, SearchSpaceDef, block_configs, encode
from .supernet import BaseArchConfig

STEM_BLOCK = -1
HEAD_BLOCK = -2


def conv_macs(c_in: int, c_out: int, kernel: int, out_h: int, out_w: int,
              groups: int = 1) -> int:
    """Multiply-accumulates of one convolution at the given output size."""
    return kernel * kernel * (c_in // groups) * c_out * out_h * out_w


def _conv_out(side: int, kernel: int, stride: int, padding: int) -> int:
    return (side + 2 * padding - kernel) // stride + 1


def flops_breakdown(base: BaseArchConfig, arch: ArchSpec):
    """MAC counts per component: (stem, [per-block], head)."""
    if len(arch.blocks) != len(base.block_channels):
        raise InvalidArch(
            f"arch has {len(arch.blocks)} blocks, base has {len(base.block_channels)}"
        )
    side = _conv_out(arch.resolution, 3, 2, 1)
    stem_ch = base.scaled(base.stem_channels)
    stem = conv_macs(base.input_channels, stem_ch, 3, side, side)
    per_block = []
    c_in = stem_ch
    for block, (c_out_raw, stride0) in zip(
        arch.blocks, zip(base.block_channels, base.strides)
    ):
        c_out = base.scaled(c_out_raw)
        macs = 0
        for layer in range(block.depth):
            lin = c_in if layer == 0 else c_out
            stride = stride0 if layer == 0 else 1
            w, k = block.widths[layer], block.kernels[layer]
            if block.depth != len(block.widths) or block.depth != len(block.kernels):
                raise InvalidArch("per-layer lists must match depth")
            e = math.ceil(lin * w)
            macs += conv_macs(lin, e, 1, side, side)
            out_side = _conv_out(side, k, stride, k // 2)
            macs += conv_macs(e, e, k, out_side, out_side, groups=e)
            macs += conv_macs(e, c_out, 1, out_side, out_side)
            side = out_side
        per_block.append(macs)
        c_in = c_out
    head = base.scaled(base.block_channels[-1]) * base.class_count
    return stem, per_block, head


def count_flops(base: BaseArchConfig, arch: ArchSpec) -> int:
    """Exact MAC count of one inference at ``arch.resolution``."""
    stem, blocks, head = flops_breakdown(base, arch)
    return stem + sum(blocks) + head


# -- lookup table --------------------------------------------------------------

def _fmt_levels(values) -> str:
    vals = [int(v) if float(v).is_integer() else float(v) for v in values]
    if len(set(vals)) == 1:
        return str(vals[0])
    return "|".join(str(v) for v in vals)


def _parse_levels(text: str, depth: int, numeric=float):
    parts = text.split("|")
    vals = tuple(numeric(p) for p in parts)
    if len(vals) == 1:
        vals = vals * depth
    return vals


@dataclass
class LatencyTable:
    """Per-block-config millisecond entries; estimate = stem + blocks + head.

    Keys are (block index, depth, widths tuple, kernels tuple, resolution);
    stem/head entries use block index -1 / -2 and are keyed by resolution.
    """

    device: str
    entries: dict = field(default_factory=dict)
    stem: dict = field(default_factory=dict)
    head: dict = field(default_factory=dict)

    def block_key(self, index, block, resolution):
        return (index, block.depth, block.widths, block.kernels, resolution)


def estimate_latency(table: LatencyTable, arch: ArchSpec) -> float:
    if arch.resolution not in table.stem:
        raise MissingEntry(f"stem entry for resolution {arch.resolution}")
    if arch.resolution not in table.head:
        raise MissingEntry(f"head entry for resolution {arch.resolution}")
    total = table.stem[arch.resolution] + table.head[arch.resolution]
    for i, block in enumerate(arch.blocks):
        key = table.block_key(i, block, arch.resolution)
        if key not in table.entries:
            raise MissingEntry(f"no table entry for {key}")
        total += table.entries[key]
    return total


def save_table(table: LatencyTable, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device", "block", "depth", "width", "kernel",
                         "resolution", "ms"])
        for res, ms in sorted(table.stem.items()):
            writer.writerow([table.device, STEM_BLOCK, 0, 0, 0, res, repr(ms)])
        for res, ms in sorted(table.head.items()):
            writer.writerow([table.device, HEAD_BLOCK, 0, 0, 0, res, repr(ms)])
        for (idx, depth, widths, kernels, res), ms in sorted(table.entries.items()):
            writer.writerow([table.device, idx, depth, _fmt_levels(widths),
                             _fmt_levels(kernels), res, repr(ms)])


def load_table(path) -> LatencyTable:
    table = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if row[:7] != ["device", "block", "depth", "width", "kernel",
                               "resolution", "ms"]:
                    raise LutParseError(f"bad header {row}", line=lineno)
                continue
            if not row:
                continue
            try:
                device, block, depth, width, kernel, res, ms = row
                block, depth, res, ms = int(block), int(depth), int(res), float(ms)
            except (ValueError, IndexError) as exc:
                raise LutParseError(str(exc), line=lineno) from exc
            if ms <= 0:
                raise NonPositiveEntry(f"line {lineno}: latency {ms} <= 0")
            if table is None:
                table = LatencyTable(device=device)
            if block == STEM_BLOCK:
                table.stem[res] = ms
            elif block == HEAD_BLOCK:
                table.head[res] = ms
            else:
                try:
                    widths = _parse_levels(width, depth, float)
                    kernels = _parse_levels(kernel, depth, int)
                except ValueError as exc:
                    raise LutParseError(str(exc), line=lineno) from exc
                table.entries[(block, depth, widths, kernels, res)] = ms
    if table is None:
        raise LutParseError("empty table")
    return table


# -- latency models ------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticCoeffs:
    """ms = overhead + slope * MFLOPs + N(0, sigma).

    Defaults are tuned once against the toy space's 0.63-4.22 MFLOP range
    so latencies span roughly 15-40 ms (at least five 5 ms buckets).
    """

    slope_ms_per_mflop: float = 7.0
    overhead_ms: float = 10.6
    sigma_ms: float = 0.0

    def __post_init__(self):
        if self.slope_ms_per_mflop <= 0 or self.overhead_ms < 0 or self.sigma_ms < 0:
            raise ValueError("need slope > 0, overhead >= 0, sigma >= 0")


class SyntheticLatencyModel:
    """Deterministic FLOP-proportional stand-in for hardware measurement.

    Noise, when enabled, is a pure function of (seed, arch) so repeated
    queries for the same arch agree and memoization stays sound.
    """

    def __init__(self, base: BaseArchConfig, coeffs: SyntheticCoeffs = SyntheticCoeffs(),
                 seed: int = 0):
        self.base = base
        self.coeffs = coeffs
        self.seed = seed

    def __call__(self, arch: ArchSpec) -> float:
        mflops = count_flops(self.base, arch) / 1e6
        ms = self.coeffs.overhead_ms + self.coeffs.slope_ms_per_mflop * mflops
        if self.coeffs.sigma_ms > 0:
            rng = random.Random(f"{self.seed}:{arch.to_json()}")
            ms += rng.gauss(0.0, self.coeffs.sigma_ms)
        return ms


class LutLatencyModel:
    def __init__(self, table: LatencyTable):
        self.table = table

    def __call__(self, arch: ArchSpec) -> float:
        return estimate_latency(self.table, arch)


class MeasuredLatencyAdapter:
    """Hook for real on-device measurement; ships as a stub."""

    def __init__(self, measure=None):
        self._measure = measure

    def __call__(self, arch: ArchSpec) -> float:
        if self._measure is None:
            raise NotImplementedError("no measurement backend attached")
        return float(self._measure(arch))


def synthetic_latency(base: BaseArchConfig, arch: ArchSpec,
                      coeffs: SyntheticCoeffs = SyntheticCoeffs(),
                      seed: int = 0) -> float:
    return SyntheticLatencyModel(base, coeffs, seed)(arch)


def gen_synthetic_table(base: BaseArchConfig, space: SearchSpaceDef,
                        coeffs: SyntheticCoeffs = SyntheticCoeffs(),
                        device: str = "synthetic") -> LatencyTable:
    """LUT whose estimates reproduce the noise-free synthetic model exactly."""
    table = LatencyTable(device=device)
    configs = block_configs(space)
    for res in space.resolutions:
        probe = ArchSpec((configs[0],) * space.m, res)
        stem, _, head = flops_breakdown(base, probe)
        half = coeffs.overhead_ms / 2
        table.stem[res] = half + coeffs.slope_ms_per_mflop * stem / 1e6
        table.head[res] = half + coeffs.slope_ms_per_mflop * head / 1e6
        for i in range(space.m):
            for cfg in configs:
                blocks = list(probe.blocks)
                blocks[i] = cfg
                _, per_block, _ = flops_breakdown(base, ArchSpec(tuple(blocks), res))
                table.entries[table.block_key(i, cfg, res)] = (
                    coeffs.slope_ms_per_mflop * per_block[i] / 1e6
                )
    return table


# -- memoization ---------------------------------------------------------------

class LatencyCache:
    """Write-once memo of architecture latencies, keyed by binary encoding."""

    def __init__(self, space: SearchSpaceDef):
        self.space = space
        self._map: dict[str, float] = {}
        self.hits = 0
        self.misses = 0

    def key(self, arch: ArchSpec) -> str:
        return "".join(str(b) for b in encode(self.space, arch))

    def __len__(self):
        return len(self._map)

    def clear(self):
        self._map.clear()
        self.hits = 0
        self.misses = 0

    def to_dict(self) -> dict:
        return dict(self._map)

    @classmethod
    def from_dict(cls, space: SearchSpaceDef, data: dict) -> "LatencyCache":
        cache = cls(space)
        cache._map.update({k: float(v) for k, v in data.items()})
        return cache

    def lookup(self, arch: ArchSpec):
        return self._map.get(self.key(arch))

    def store(self, arch: ArchSpec, ms: float):
        self._map.setdefault(self.key(arch), ms)


def cached_estimate(cache: LatencyCache | None, model, arch: ArchSpec) -> float:
    """Memoized latency query; on miss the model is invoked exactly once."""
    if cache is None:
        return model(arch)
    key = cache.key(arch)
    if key in cache._map:
        cache.hits += 1
        return cache._map[key]
    ms = model(arch)
    cache._map[key] = ms
    cache.misses += 1
    return ms
