"""Elastic architecture search spaces.

A space is a set of block-structured architectures whose per-block depth,
per-layer width (channel expansion ratio) and kernel size are drawn from
small ordered level sets. Two couplings are supported:

- ``independent``: every layer's width and kernel vary freely, the classic
  cartesian-product family.
- ``compound``: within a block, picking the i-th largest depth forces the
  i-th largest width for all layers of that block, collapsing the family
  to one choice per block (plus kernels when elastic).

Input resolution is elastic but never multiplies the number of unique
trainable architectures, so enumeration and cardinality canonicalize it.
"""

from __future__ import annotations

import functools
import itertools
import json
import random
from dataclasses import dataclass, replace

from .errors import (
    InvalidArch,
    InvalidSpace,
    MalformedEncoding,
    SpaceTooLarge,
    UnknownLevel,
)

INDEPENDENT = "independent"
COMPOUND = "compound"


@dataclass(frozen=True)
class DimensionLevels:
    """Ordered level sets for depth, width (expansion ratio) and kernel."""

    depths: tuple[int, ...]
    widths: tuple[float, ...]
    kernels: tuple[int, ...]

    def __post_init__(self):
        for name in ("depths", "widths", "kernels"):
            vals = getattr(self, name)
            object.__setattr__(self, name, tuple(vals))
            vals = getattr(self, name)
            if not vals:
                raise InvalidSpace(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise InvalidSpace(f"{name} must be strictly ascending: {vals}")
        if any(v <= 0 for v in self.depths + self.widths + self.kernels):
            raise InvalidSpace("all levels must be positive")
        if any(k % 2 == 0 for k in self.kernels):
            raise InvalidSpace(f"kernels must be odd: {self.kernels}")


@dataclass(frozen=True)
class SearchSpaceDef:
    """A concrete search space: block count, levels, coupling and kernel mode.

    ``fixed_kernel=None`` means the kernel dimension is elastic; otherwise
    every layer uses the given kernel size, which must be a listed level.
    """

    m: int
    levels: DimensionLevels
    coupling: str = COMPOUND
    fixed_kernel: int | None = None
    resolutions: tuple[int, ...] = (224,)

    def __post_init__(self):
        object.__setattr__(self, "resolutions", tuple(self.resolutions))
        if self.m < 1:
            raise InvalidSpace(f"m must be >= 1, got {self.m}")
        if self.coupling not in (INDEPENDENT, COMPOUND):
            raise InvalidSpace(f"unknown coupling {self.coupling!r}")
        if self.coupling == COMPOUND and len(self.levels.depths) != len(self.levels.widths):
            raise InvalidSpace("compound coupling needs |depths| == |widths|")
        if self.fixed_kernel is not None and self.fixed_kernel not in self.levels.kernels:
            raise InvalidSpace(
                f"fixed kernel {self.fixed_kernel} not in levels {self.levels.kernels}"
            )
        if not self.resolutions:
            raise InvalidSpace("resolutions must be non-empty")

    @property
    def max_depth(self) -> int:
        return max(self.levels.depths)

    @property
    def max_width(self) -> float:
        return max(self.levels.widths)

    @property
    def max_kernel(self) -> int:
        return self.fixed_kernel if self.fixed_kernel is not None else max(self.levels.kernels)


@dataclass(frozen=True)
class BlockConfig:
    """One block's realized configuration: depth plus per-layer levels."""

    depth: int
    widths: tuple[float, ...]
    kernels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "kernels", tuple(self.kernels))


@dataclass(frozen=True)
class ArchSpec:
    """A concrete subnetwork: per-block configs plus evaluation resolution."""

    blocks: tuple[BlockConfig, ...]
    resolution: int

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def to_json(self) -> str:
        return json.dumps(
            {
                "blocks": [
                    {"d": b.depth, "w": list(b.widths), "k": list(b.kernels)}
                    for b in self.blocks
                ],
                "r": self.resolution,
            },
            separators=(",", ":"),
        )

    @staticmethod
    def from_json(text: str) -> "ArchSpec":
        obj = json.loads(text)
        blocks = tuple(
            BlockConfig(b["d"], tuple(b["w"]), tuple(b["k"])) for b in obj["blocks"]
        )
        return ArchSpec(blocks, obj["r"])


def couple_level(levels: DimensionLevels, depth: int) -> float:
    """Width paired with ``depth`` under compound coupling."""
    if len(levels.depths) != len(levels.widths):
        raise InvalidSpace("coupling needs |depths| == |widths|")
    if depth not in levels.depths:
        raise UnknownLevel(f"depth {depth} not in {levels.depths}")
    return levels.widths[levels.depths.index(depth)]


def _kernel_choices(space: SearchSpaceDef) -> tuple[int, ...]:
    if space.fixed_kernel is not None:
        return (space.fixed_kernel,)
    return space.levels.kernels


@functools.lru_cache(maxsize=64)
def block_configs(space: SearchSpaceDef) -> tuple[BlockConfig, ...]:
    """All legal configurations of a single block, in lexicographic level order.

    Order: depth level index ascending, then width tuples, then kernel
    tuples (each by level index). This order is the enumeration contract.
    """
    ks = _kernel_choices(space)
    out = []
    for i, d in enumerate(space.levels.depths):
        if space.coupling == COMPOUND:
            w = space.levels.widths[i]
            width_tuples = [(w,) * d]
        else:
            width_tuples = itertools.product(space.levels.widths, repeat=d)
        for widths in width_tuples:
            for kernels in itertools.product(ks, repeat=d):
                out.append(BlockConfig(d, widths, kernels))
    return tuple(out)


def cardinality(space: SearchSpaceDef) -> int:
    """Exact number of distinct architectures, ignoring resolution."""
    n_k = 1 if space.fixed_kernel is not None else len(space.levels.kernels)
    if space.coupling == COMPOUND:
        per_block = sum(n_k**d for d in space.levels.depths)
    else:
        n_w = len(space.levels.widths)
        per_block = sum((n_w * n_k) ** d for d in space.levels.depths)
    return per_block**space.m


def validate(space: SearchSpaceDef, arch: ArchSpec) -> bool:
    """True iff ``arch`` satisfies every invariant of ``space``."""
    if len(arch.blocks) != space.m or arch.resolution not in space.resolutions:
        return False
    ks = set(_kernel_choices(space))
    for block in arch.blocks:
        if block.depth not in space.levels.depths:
            return False
        if len(block.widths) != block.depth or len(block.kernels) != block.depth:
            return False
        if not all(w in space.levels.widths for w in block.widths):
            return False
        if not all(k in ks for k in block.kernels):
            return False
        if space.coupling == COMPOUND:
            coupled = couple_level(space.levels, block.depth)
            if any(w != coupled for w in block.widths):
                return False
    return True


def _rng(seed) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


def sample_uniform(
    space: SearchSpaceDef, seed, stratify_depth: bool = False
) -> ArchSpec:
    """Sample one architecture.

    Default weighting is uniform over each block's legal configurations.
    ``stratify_depth=True`` instead picks the depth level first and then
    widths/kernels per layer, matching samplers that treat dimensions
    independently.
    """
    rng = _rng(seed)
    blocks = []
    if stratify_depth:
        ks = _kernel_choices(space)
        for _ in range(space.m):
            d = rng.choice(space.levels.depths)
            if space.coupling == COMPOUND:
                widths = (couple_level(space.levels, d),) * d
            else:
                widths = tuple(rng.choice(space.levels.widths) for _ in range(d))
            kernels = tuple(rng.choice(ks) for _ in range(d))
            blocks.append(BlockConfig(d, widths, kernels))
    else:
        configs = block_configs(space)
        blocks = [configs[rng.randrange(len(configs))] for _ in range(space.m)]
    resolution = space.resolutions[rng.randrange(len(space.resolutions))]
    return ArchSpec(tuple(blocks), resolution)


def enumerate_space(space: SearchSpaceDef, limit: int):
    """Yield every distinct architecture once, at the canonical (max) resolution.

    Block 0 varies slowest; within a block, configurations follow
    :func:`block_configs` order.
    """
    n = cardinality(space)
    if n > limit:
        raise SpaceTooLarge(f"cardinality {n} exceeds limit {limit}")
    resolution = max(space.resolutions)
    configs = block_configs(space)
    for combo in itertools.product(configs, repeat=space.m):
        yield ArchSpec(combo, resolution)


def max_arch(space: SearchSpaceDef) -> ArchSpec:
    """The per-block maximal architecture at the largest resolution."""
    d = max(space.levels.depths)
    w = couple_level(space.levels, d) if space.coupling == COMPOUND else max(space.levels.widths)
    k = max(_kernel_choices(space))
    block = BlockConfig(d, (w,) * d, (k,) * d)
    return ArchSpec((block,) * space.m, max(space.resolutions))


def min_arch(space: SearchSpaceDef) -> ArchSpec:
    """The per-block minimal architecture at the smallest resolution."""
    d = min(space.levels.depths)
    w = couple_level(space.levels, d) if space.coupling == COMPOUND else min(space.levels.widths)
    k = min(_kernel_choices(space))
    block = BlockConfig(d, (w,) * d, (k,) * d)
    return ArchSpec((block,) * space.m, min(space.resolutions))


# --- binary encoding ---------------------------------------------------------

def _segment_layout(space: SearchSpaceDef):
    """Per-block segment spec: (kind, n_levels) entries, then resolution."""
    segs = [("depth", len(space.levels.depths))]
    if space.coupling == INDEPENDENT:
        segs += [("width", len(space.levels.widths))] * space.max_depth
    if space.fixed_kernel is None:
        segs += [("kernel", len(space.levels.kernels))] * space.max_depth
    return segs


def encoding_length(space: SearchSpaceDef) -> int:
    per_block = sum(n for _, n in _segment_layout(space))
    return space.m * per_block + len(space.resolutions)


def encode(space: SearchSpaceDef, arch: ArchSpec) -> tuple[int, ...]:
    """Fixed-length one-hot encoding of ``arch``.

    Width segments are elided under compound coupling and kernel segments
    under a fixed kernel, since coupling implies them. Layer slots beyond a
    block's depth carry a placeholder one-hot at index 0 so that every
    segment sums to exactly 1.
    """
    if not validate(space, arch):
        raise InvalidArch(f"arch does not validate: {arch.to_json()}")

    def one_hot(n, i):
        bits = [0] * n
        bits[i] = 1
        return bits

    out = []
    for block in arch.blocks:
        out += one_hot(len(space.levels.depths), space.levels.depths.index(block.depth))
        if space.coupling == INDEPENDENT:
            for layer in range(space.max_depth):
                idx = (
                    space.levels.widths.index(block.widths[layer])
                    if layer < block.depth
                    else 0
                )
                out += one_hot(len(space.levels.widths), idx)
        if space.fixed_kernel is None:
            for layer in range(space.max_depth):
                idx = (
                    space.levels.kernels.index(block.kernels[layer])
                    if layer < block.depth
                    else 0
                )
                out += one_hot(len(space.levels.kernels), idx)
    out += one_hot(len(space.resolutions), space.resolutions.index(arch.resolution))
    return tuple(out)


def decode(space: SearchSpaceDef, bits) -> ArchSpec:
    """Inverse of :func:`encode`; raises MalformedEncoding on bad segments."""
    bits = tuple(bits)
    if len(bits) != encoding_length(space):
        raise MalformedEncoding(
            f"expected {encoding_length(space)} bits, got {len(bits)}"
        )
    pos = 0

    def take(n):
        nonlocal pos
        seg = bits[pos : pos + n]
        pos += n
        if sum(seg) != 1 or any(b not in (0, 1) for b in seg):
            raise MalformedEncoding(f"segment at bit {pos - n} is not one-hot: {seg}")
        return seg.index(1)

    blocks = []
    for _ in range(space.m):
        d = space.levels.depths[take(len(space.levels.depths))]
        if space.coupling == INDEPENDENT:
            w_idx = [take(len(space.levels.widths)) for _ in range(space.max_depth)]
            widths = tuple(space.levels.widths[i] for i in w_idx[:d])
        else:
            widths = (couple_level(space.levels, d),) * d
        if space.fixed_kernel is None:
            k_idx = [take(len(space.levels.kernels)) for _ in range(space.max_depth)]
            kernels = tuple(space.levels.kernels[i] for i in k_idx[:d])
        else:
            kernels = (space.fixed_kernel,) * d
        blocks.append(BlockConfig(d, widths, kernels))
    resolution = space.resolutions[take(len(space.resolutions))]
    return ArchSpec(tuple(blocks), resolution)


# --- genetic operators -------------------------------------------------------

def mutate(space: SearchSpaceDef, arch: ArchSpec, p_mut: float, seed) -> ArchSpec:
    """Resample whole block configurations (and resolution) with prob ``p_mut``.

    Resampling full per-block tuples keeps compound validity by construction.
    """
    rng = _rng(seed)
    configs = block_configs(space)
    blocks = tuple(
        configs[rng.randrange(len(configs))] if rng.random() < p_mut else b
        for b in arch.blocks
    )
    resolution = arch.resolution
    if rng.random() < p_mut:
        resolution = space.resolutions[rng.randrange(len(space.resolutions))]
    return ArchSpec(blocks, resolution)


def crossover(space: SearchSpaceDef, a: ArchSpec, b: ArchSpec, seed) -> ArchSpec:
    """Pick each block (and the resolution) from ``a`` or ``b`` with equal odds."""
    rng = _rng(seed)
    blocks = tuple(
        ba if rng.random() < 0.5 else bb for ba, bb in zip(a.blocks, b.blocks)
    )
    resolution = a.resolution if rng.random() < 0.5 else b.resolution
    return ArchSpec(blocks, resolution)


# --- named spaces ------------------------------------------------------------

_LEVELS = DimensionLevels(depths=(2, 3, 4), widths=(3, 4, 6), kernels=(3, 5, 7))

SPACE_PRESETS: dict[str, SearchSpaceDef] = {
    # Full-scale spaces (MobileNetV3-style levels, ImageNet resolutions).
    "compofa-fixed": SearchSpaceDef(
        m=5, levels=_LEVELS, coupling=COMPOUND, fixed_kernel=5,
        resolutions=(128, 160, 192, 224),
    ),
    "compofa-elastic": SearchSpaceDef(
        m=5, levels=_LEVELS, coupling=COMPOUND, fixed_kernel=None,
        resolutions=(128, 160, 192, 224),
    ),
    "ofa": SearchSpaceDef(
        m=5, levels=_LEVELS, coupling=INDEPENDENT, fixed_kernel=None,
        resolutions=(128, 160, 192, 224),
    ),
    # Desk-scale spaces trained against the toy base config.
    "toy-compound": SearchSpaceDef(
        m=5, levels=_LEVELS, coupling=COMPOUND, fixed_kernel=5,
        resolutions=(24, 28, 32),
    ),
    "toy-independent": SearchSpaceDef(
        m=5, levels=_LEVELS, coupling=INDEPENDENT, fixed_kernel=5,
        resolutions=(24, 28, 32),
    ),
}


def get_space(name: str) -> SearchSpaceDef:
    try:
        return SPACE_PRESETS[name]
    except KeyError:
        raise InvalidSpace(
            f"unknown space preset {name!r}; known: {sorted(SPACE_PRESETS)}"
        ) from None


def space_to_dict(space: SearchSpaceDef) -> dict:
    return {
        "m": space.m,
        "depths": list(space.levels.depths),
        "widths": list(space.levels.widths),
        "kernels": list(space.levels.kernels),
        "coupling": space.coupling,
        "fixed_kernel": space.fixed_kernel,
        "resolutions": list(space.resolutions),
    }


def space_from_dict(obj: dict) -> SearchSpaceDef:
    return SearchSpaceDef(
        m=obj["m"],
        levels=DimensionLevels(
            tuple(obj["depths"]), tuple(obj["widths"]), tuple(obj["kernels"])
        ),
        coupling=obj["coupling"],
        fixed_kernel=obj["fixed_kernel"],
        resolutions=tuple(obj["resolutions"]),
    )


def restrict(
    space: SearchSpaceDef,
    depths=None,
    widths=None,
    kernels=None,
) -> SearchSpaceDef:
    """Sub-space keeping only the given level values (None keeps all).

    Under compound coupling, depth/width levels are restricted pairwise so
    the index pairing stays total.
    """
    d = tuple(v for v in space.levels.depths if depths is None or v in depths)
    k = tuple(v for v in space.levels.kernels if kernels is None or v in kernels)
    if space.coupling == COMPOUND:
        pairs = [
            (dv, wv)
            for dv, wv in zip(space.levels.depths, space.levels.widths)
            if (depths is None or dv in depths) and (widths is None or wv in widths)
        ]
        d = tuple(p[0] for p in pairs)
        w = tuple(p[1] for p in pairs)
    else:
        w = tuple(v for v in space.levels.widths if widths is None or v in widths)
    fixed = space.fixed_kernel
    if fixed is not None and fixed not in k:
        k = k + (fixed,) if fixed not in k else k
        k = tuple(sorted(k))
    return replace(space, levels=DimensionLevels(d, w, k))
