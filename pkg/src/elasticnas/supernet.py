"""A minimal trainable convolutional supernet with elastic dimensions.

Every subnetwork is an exact slice of one shared parameter store:
first ``d`` layers of each block, the first ``ceil(in_ch * w)`` expanded
channels, and the centered ``k x k`` sub-kernel of the depthwise weights.
Blocks are inverted residuals (expand 1x1 -> depthwise kxk -> project 1x1)
with per-channel learnable scale/bias instead of batch norm, so subnets
are evaluable without any statistics recalibration.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .errors import IncompatibleSpace, InvalidArch, NonFiniteLoss, ShapeMismatch
from .space import ArchSpec, SearchSpaceDef, space_from_dict, space_to_dict

CHECKPOINT_MAGIC = "elasticnas-checkpoint-v1"


@dataclass(frozen=True)
class BaseArchConfig:
    """Static (non-elastic) skeleton of the supernet."""

    input_channels: int = 3
    input_side: int = 32
    stem_channels: int = 8
    block_channels: tuple[int, ...] = (8, 12, 16, 24, 32)
    strides: tuple[int, ...] = (1, 2, 2, 1, 2)
    class_count: int = 10
    width_multiplier: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(self.block_channels))
        object.__setattr__(self, "strides", tuple(self.strides))
        if len(self.block_channels) != len(self.strides):
            raise IncompatibleSpace("block_channels and strides lengths differ")
        if any(c <= 0 for c in (self.stem_channels,) + self.block_channels):
            raise IncompatibleSpace("channel counts must be positive")
        if any(s not in (1, 2) for s in self.strides):
            raise IncompatibleSpace(f"strides must be 1 or 2: {self.strides}")

    def scaled(self, channels: int) -> int:
        return max(1, int(round(channels * self.width_multiplier)))


def toy_base() -> BaseArchConfig:
    """Desk-scale default: trains in minutes, exercises every elastic dim."""
    return BaseArchConfig()


def mobilenet_reference_base() -> BaseArchConfig:
    """Approximate full-scale base used only for FLOP-range sanity checks."""
    return BaseArchConfig(
        input_channels=3,
        input_side=224,
        stem_channels=16,
        block_channels=(24, 40, 80, 112, 160),
        strides=(2, 2, 2, 1, 2),
        class_count=1000,
        width_multiplier=1.0,
    )


@dataclass(frozen=True)
class LayerMeta:
    in_channels: int
    out_channels: int
    max_expanded: int
    stride: int


def layer_plan(base: BaseArchConfig, max_depth: int, max_width: float):
    """Static shape plan: per block, per layer-slot channel extents."""
    plan = []
    c_in = base.scaled(base.stem_channels)
    for c_out_raw, stride in zip(base.block_channels, base.strides):
        c_out = base.scaled(c_out_raw)
        layers = []
        for layer in range(max_depth):
            lin = c_in if layer == 0 else c_out
            layers.append(
                LayerMeta(
                    in_channels=lin,
                    out_channels=c_out,
                    max_expanded=math.ceil(lin * max_width),
                    stride=stride if layer == 0 else 1,
                )
            )
        plan.append(layers)
        c_in = c_out
    return plan


class SupernetParams:
    """The single shared parameter store all subnetworks slice from.

    Parameters live in ``self.params`` (name -> tensor) in a fixed
    declaration order, which is also the checkpoint serialization order.
    Momentum buffers for the masked SGD updates are kept alongside but are
    not part of the checkpoint.
    """

    def __init__(self, base: BaseArchConfig, space: SearchSpaceDef, seed: int,
                 dtype=torch.float32):
        if len(base.block_channels) != space.m:
            raise IncompatibleSpace(
                f"base has {len(base.block_channels)} blocks, space has m={space.m}"
            )
        self.base = base
        self.space = space
        self.seed = seed
        self.dtype = dtype
        self.max_depth = space.max_depth
        self.max_kernel = space.max_kernel
        self.plan = layer_plan(base, self.max_depth, space.max_width)
        self.params: dict[str, torch.Tensor] = {}
        self.momentum: dict[str, torch.Tensor] = {}
        self.extra: dict = {}
        self._init_params(seed)

    # -- construction ---------------------------------------------------

    def _add(self, name, shape, gen, fan_in=None, fill=None):
        if fill is not None:
            t = torch.full(shape, float(fill), dtype=self.dtype)
        else:
            # uniform He init: without batch norm the deep stack needs a
            # variance-preserving gain, or activations vanish layer by layer
            bound = math.sqrt(6.0 / fan_in)
            t = (torch.rand(shape, generator=gen, dtype=self.dtype) * 2 - 1) * bound
        t.requires_grad_(True)
        self.params[name] = t

    def _init_params(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        base, kmax = self.base, self.max_kernel
        stem = base.scaled(base.stem_channels)
        self._add("stem.w", (stem, base.input_channels, 3, 3), gen,
                  fan_in=base.input_channels * 9)
        self._add("stem.scale", (stem,), gen, fill=1.0)
        self._add("stem.bias", (stem,), gen, fill=0.0)
        for b, layers in enumerate(self.plan):
            for l, meta in enumerate(layers):
                p = f"b{b}.l{l}"
                e = meta.max_expanded
                self._add(f"{p}.expand.w", (e, meta.in_channels, 1, 1), gen,
                          fan_in=meta.in_channels)
                self._add(f"{p}.expand.scale", (e,), gen, fill=1.0)
                self._add(f"{p}.expand.bias", (e,), gen, fill=0.0)
                self._add(f"{p}.dw.w", (e, 1, kmax, kmax), gen, fan_in=kmax * kmax)
                self._add(f"{p}.dw.scale", (e,), gen, fill=1.0)
                self._add(f"{p}.dw.bias", (e,), gen, fill=0.0)
                self._add(f"{p}.proj.w", (meta.out_channels, e, 1, 1), gen, fan_in=e)
                # residual branches start damped so depth does not inflate
                # activation variance at init
                has_skip = meta.stride == 1 and meta.in_channels == meta.out_channels
                self._add(f"{p}.proj.scale", (meta.out_channels,), gen,
                          fill=0.25 if has_skip else 1.0)
                self._add(f"{p}.proj.bias", (meta.out_channels,), gen, fill=0.0)
        c_last = base.scaled(base.block_channels[-1])
        self._add("head.w", (base.class_count, c_last), gen,
                  fan_in=3 * c_last)
        self._add("head.bias", (base.class_count,), gen, fill=0.0)

    # -- bookkeeping ----------------------------------------------------

    def zero_grad(self):
        for t in self.params.values():
            if t.grad is not None:
                t.grad.detach_()
                t.grad.zero_()

    def clone_tensors(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.params.items()}

    def frozen_copy(self) -> "SupernetParams":
        """Detached snapshot of the store (teacher for distillation)."""
        copy = SupernetParams.__new__(SupernetParams)
        copy.base, copy.space, copy.seed = self.base, self.space, self.seed
        copy.dtype, copy.max_depth = self.dtype, self.max_depth
        copy.max_kernel, copy.plan = self.max_kernel, self.plan
        copy.params = {k: v.detach().clone() for k, v in self.params.items()}
        copy.momentum = {}
        copy.extra = dict(self.extra)
        return copy


def build_supernet(base: BaseArchConfig, space: SearchSpaceDef, seed: int,
                   dtype=torch.float32) -> SupernetParams:
    """Deterministically initialize the shared store for ``space``."""
    return SupernetParams(base, space, seed, dtype=dtype)


@dataclass(frozen=True)
class SubnetView:
    """A subnetwork defined as a slice of the shared store. No copies."""

    params: SupernetParams
    arch: ArchSpec


def _expanded(meta: LayerMeta, width: float) -> int:
    return math.ceil(meta.in_channels * width)


def slice_subnet(params: SupernetParams, arch: ArchSpec) -> SubnetView:
    """Bind an arch to the store after checking slice bounds.

    Bounds only: coupling legality is the search space's concern, and
    analysis deliberately evaluates coupling-illegal grid points.
    """
    if len(arch.blocks) != len(params.plan):
        raise InvalidArch(f"expected {len(params.plan)} blocks")
    for b, block in enumerate(arch.blocks):
        if block.depth < 1 or block.depth > params.max_depth:
            raise InvalidArch(f"block {b}: depth {block.depth} out of range")
        for l in range(block.depth):
            meta = params.plan[b][l]
            k = block.kernels[l]
            if k % 2 == 0 or k > params.max_kernel:
                raise InvalidArch(f"block {b} layer {l}: kernel {k} invalid")
            if _expanded(meta, block.widths[l]) > meta.max_expanded:
                raise InvalidArch(
                    f"block {b} layer {l}: width {block.widths[l]} exceeds store"
                )
    return SubnetView(params, arch)


def _affine(x, scale, bias):
    return x * scale.view(1, -1, 1, 1) + bias.view(1, -1, 1, 1)


def forward(view: SubnetView, batch: torch.Tensor) -> torch.Tensor:
    """Class scores for ``batch``; batch side must equal arch.resolution."""
    params, arch = view.params, view.arch
    p = params.params
    if batch.dim() != 4 or batch.shape[2] != arch.resolution or \
            batch.shape[3] != arch.resolution:
        raise ShapeMismatch(
            f"batch {tuple(batch.shape)} vs resolution {arch.resolution}"
        )
    x = batch.to(params.dtype)
    x = F.conv2d(x, p["stem.w"], stride=2, padding=1)
    x = F.relu(_affine(x, p["stem.scale"], p["stem.bias"]))
    kmax = params.max_kernel
    for b, block in enumerate(arch.blocks):
        for l in range(block.depth):
            meta = params.plan[b][l]
            e = _expanded(meta, block.widths[l])
            k = block.kernels[l]
            lo = (kmax - k) // 2
            pref = f"b{b}.l{l}"
            h = F.conv2d(x, p[f"{pref}.expand.w"][:e])
            h = F.relu(_affine(h, p[f"{pref}.expand.scale"][:e],
                               p[f"{pref}.expand.bias"][:e]))
            w_dw = p[f"{pref}.dw.w"][:e, :, lo:lo + k, lo:lo + k]
            h = F.conv2d(h, w_dw, stride=meta.stride, padding=k // 2, groups=e)
            h = F.relu(_affine(h, p[f"{pref}.dw.scale"][:e],
                               p[f"{pref}.dw.bias"][:e]))
            y = F.conv2d(h, p[f"{pref}.proj.w"][:, :e])
            y = _affine(y, p[f"{pref}.proj.scale"], p[f"{pref}.proj.bias"])
            if meta.stride == 1 and meta.in_channels == meta.out_channels:
                y = y + x
            x = y
    x = x.mean(dim=(2, 3))
    return F.linear(x, p["head.w"], p["head.bias"])


def resize_batch(batch: torch.Tensor, resolution: int) -> torch.Tensor:
    if batch.shape[2] == resolution and batch.shape[3] == resolution:
        return batch
    return F.interpolate(batch, size=(resolution, resolution), mode="bilinear",
                         align_corners=False)


# -- slice masks and masked SGD ----------------------------------------------

def param_masks(params: SupernetParams, arch: ArchSpec) -> dict[str, torch.Tensor]:
    """Boolean mask per parameter tensor marking the entries ``arch`` touches."""
    masks = {name: torch.zeros(t.shape, dtype=torch.bool)
             for name, t in params.params.items()}
    for name in ("stem.w", "stem.scale", "stem.bias", "head.w", "head.bias"):
        masks[name].fill_(True)
    kmax = params.max_kernel
    for b, block in enumerate(arch.blocks):
        for l in range(block.depth):
            meta = params.plan[b][l]
            e = _expanded(meta, block.widths[l])
            k = block.kernels[l]
            lo = (kmax - k) // 2
            pref = f"b{b}.l{l}"
            masks[f"{pref}.expand.w"][:e] = True
            masks[f"{pref}.expand.scale"][:e] = True
            masks[f"{pref}.expand.bias"][:e] = True
            masks[f"{pref}.dw.w"][:e, :, lo:lo + k, lo:lo + k] = True
            masks[f"{pref}.dw.scale"][:e] = True
            masks[f"{pref}.dw.bias"][:e] = True
            masks[f"{pref}.proj.w"][:, :e] = True
            masks[f"{pref}.proj.scale"][:] = True
            masks[f"{pref}.proj.bias"][:] = True
    return masks


def union_masks(params: SupernetParams, archs) -> dict[str, torch.Tensor]:
    out = None
    for arch in archs:
        m = param_masks(params, arch)
        if out is None:
            out = m
        else:
            for name in out:
                out[name] |= m[name]
    return out


@dataclass(frozen=True)
class KdConfig:
    """Knowledge-distillation weight and softmax temperature."""

    weight: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.weight < 0 or self.temperature <= 0:
            raise ValueError("need weight >= 0 and temperature > 0")


def _subnet_loss(view, batch, labels, teacher_logits, kd: KdConfig):
    logits = forward(view, resize_batch(batch, view.arch.resolution))
    loss = F.cross_entropy(logits, labels)
    if teacher_logits is not None and kd.weight > 0:
        soft = F.softmax(teacher_logits / kd.temperature, dim=1)
        log_student = F.log_softmax(logits / kd.temperature, dim=1)
        loss = loss + kd.weight * (-(soft * log_student).sum(dim=1).mean())
    return loss


def train_step(params: SupernetParams, archs, batch, labels,
               teacher: SubnetView | None = None, lr: float = 0.05,
               kd: KdConfig = KdConfig(), momentum: float = 0.9,
               clip_norm: float | None = 5.0) -> float:
    """One aggregated SGD-with-momentum update over the sampled subnets.

    Gradients of the per-arch losses are averaged (fixed summation order),
    clipped to a global norm, then applied only inside the union of the
    sampled slices, so every parameter outside remains bit-identical,
    momentum buffers included.
    """
    params.zero_grad()
    teacher_logits = None
    if teacher is not None:
        with torch.no_grad():
            teacher_logits = forward(
                teacher, resize_batch(batch, teacher.arch.resolution)
            )
    total = 0.0
    n = len(archs)
    for arch in archs:
        view = slice_subnet(params, arch)
        loss = _subnet_loss(view, batch, labels, teacher_logits, kd)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"loss={loss.item()} for arch {arch.to_json()}")
        (loss / n).backward()
        total += loss.item()
    masks = union_masks(params, archs)
    with torch.no_grad():
        if clip_norm is not None:
            sq = sum(
                float(t.grad.pow(2).sum()) for t in params.params.values()
                if t.grad is not None
            )
            norm = math.sqrt(sq)
            if norm > clip_norm:
                scale = clip_norm / norm
                for t in params.params.values():
                    if t.grad is not None:
                        t.grad.mul_(scale)
        for name, t in params.params.items():
            if t.grad is None:
                continue
            mask = masks[name]
            if not mask.any():
                continue
            buf = params.momentum.get(name)
            if buf is None:
                buf = torch.zeros_like(t)
                params.momentum[name] = buf
            buf[mask] = momentum * buf[mask] + t.grad[mask]
            t[mask] -= lr * buf[mask]
    return total / n


# -- evaluation ---------------------------------------------------------------

def evaluate_accuracy(params: SupernetParams, arch: ArchSpec,
                      images: torch.Tensor, labels: torch.Tensor,
                      batch_size: int = 256) -> float:
    """Top-1 accuracy of one subnet on a labelled tensor dataset."""
    view = slice_subnet(params, arch)
    correct = 0
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            x = resize_batch(images[i:i + batch_size], arch.resolution)
            logits = forward(view, x)
            correct += (logits.argmax(dim=1) == labels[i:i + batch_size]).sum().item()
    return correct / len(images)


# -- checkpoint io ------------------------------------------------------------

def save_checkpoint(params: SupernetParams, path, extra: dict | None = None):
    header = {
        "magic": CHECKPOINT_MAGIC,
        "names": list(params.params.keys()),
        "shapes": {k: list(v.shape) for k, v in params.params.items()},
        "seed": params.seed,
        "space": space_to_dict(params.space),
        "base": asdict(params.base),
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in header["names"]:
            t = params.params[name].detach().to(torch.float32).contiguous()
            data = t.numpy().astype("<f4").tobytes()
            fh.write(data)


def load_checkpoint(path, dtype=torch.float32) -> SupernetParams:
    import numpy as np

    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ShapeMismatch("not an elasticnas checkpoint")
        base = BaseArchConfig(**{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in header["base"].items()
        })
        space = space_from_dict(header["space"])
        params = SupernetParams(base, space, header["seed"], dtype=dtype)
        for name in header["names"]:
            shape = tuple(header["shapes"][name])
            if name not in params.params or tuple(params.params[name].shape) != shape:
                raise ShapeMismatch(f"checkpoint shape mismatch for {name}")
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            with torch.no_grad():
                params.params[name].copy_(torch.from_numpy(arr.copy()).to(dtype))
        reserved = {"magic", "names", "shapes", "seed", "space", "base"}
        params.extra = {k: v for k, v in header.items() if k not in reserved}
    return params
