"""Accuracy predictor: a 3-layer MLP over architecture encodings.

For enumerable spaces (a few hundred archs) search should prefer a direct
exhaustive accuracy table; the predictor exists for spaces too large to
measure every member.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import torch

from .errors import InsufficientData, ShapeMismatch

MIN_PAIRS = 20
PREDICTOR_MAGIC = "elasticnas-predictor-v1"


@dataclass
class PredictorNet:
    """Weights of the input -> hidden -> hidden -> scalar regressor."""

    weights: list[torch.Tensor]  # [w1, b1, w2, b2, w3, b3]

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[1]

    def raw(self, x: torch.Tensor) -> torch.Tensor:
        w1, b1, w2, b2, w3, b3 = self.weights
        h = torch.relu(x @ w1.T + b1)
        h = torch.relu(h @ w2.T + b2)
        return (h @ w3.T + b3).squeeze(-1)


def _init_net(input_size: int, hidden: int, gen) -> PredictorNet:
    def layer(n_in, n_out):
        bound = 1.0 / n_in**0.5
        w = (torch.rand(n_out, n_in, generator=gen) * 2 - 1) * bound
        b = torch.zeros(n_out)
        return w.requires_grad_(True), b.requires_grad_(True)

    w1, b1 = layer(input_size, hidden)
    w2, b2 = layer(hidden, hidden)
    w3, b3 = layer(hidden, 1)
    return PredictorNet([w1, b1, w2, b2, w3, b3])


def train_predictor(pairs, hidden_width: int = 64, epochs: int = 400,
                    lr: float = 0.05, seed: int = 0, momentum: float = 0.9,
                    batch_size: int = 32):
    """Fit the regressor on (encoding, accuracy) pairs; returns (net, rmse).

    80/20 train/validation split and shuffling are seed-controlled, so the
    result does not depend on the order pairs arrive in.
    """
    pairs = sorted((tuple(enc), float(acc)) for enc, acc in pairs)
    if len(pairs) < MIN_PAIRS:
        raise InsufficientData(f"need >= {MIN_PAIRS} pairs, got {len(pairs)}")
    for _, acc in pairs:
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
    gen = torch.Generator().manual_seed(seed)
    x = torch.tensor([list(enc) for enc, _ in pairs], dtype=torch.float32)
    y = torch.tensor([acc for _, acc in pairs], dtype=torch.float32)
    perm = torch.randperm(len(pairs), generator=gen)
    n_val = max(1, len(pairs) // 5)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_train, y_train = x[train_idx], y[train_idx]

    net = _init_net(x.shape[1], hidden_width, gen)
    bufs = [torch.zeros_like(w) for w in net.weights]
    for _ in range(epochs):
        order = torch.randperm(len(x_train), generator=gen)
        for s in range(0, len(x_train), batch_size):
            idx = order[s:s + batch_size]
            loss = torch.mean((net.raw(x_train[idx]) - y_train[idx]) ** 2)
            grads = torch.autograd.grad(loss, net.weights)
            with torch.no_grad():
                for w, buf, g in zip(net.weights, bufs, grads):
                    buf.mul_(momentum).add_(g)
                    w -= lr * buf
    with torch.no_grad():
        pred = net.raw(x[val_idx]).clamp(0.0, 1.0)
        rmse = torch.sqrt(torch.mean((pred - y[val_idx]) ** 2)).item()
    return net, rmse


def predict(net: PredictorNet, encoding) -> float:
    """Predicted accuracy for one encoding, clamped to [0, 1]."""
    x = torch.tensor([list(encoding)], dtype=torch.float32)
    if x.shape[1] != net.input_size:
        raise ShapeMismatch(
            f"encoding length {x.shape[1]} != net input {net.input_size}"
        )
    with torch.no_grad():
        return float(net.raw(x).clamp(0.0, 1.0).item())


def save_predictor(net: PredictorNet, path):
    header = {
        "magic": PREDICTOR_MAGIC,
        "shapes": [list(w.shape) for w in net.weights],
    }
    blob = json.dumps(header).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w in net.weights:
            fh.write(w.detach().contiguous().numpy().astype("<f4").tobytes())


def load_predictor(path) -> PredictorNet:
    import numpy as np

    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("magic") != PREDICTOR_MAGIC:
            raise ShapeMismatch("not a predictor checkpoint")
        weights = []
        for shape in header["shapes"]:
            count = 1
            for s in shape:
                count *= s
            arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            weights.append(torch.from_numpy(arr.copy()))
    return PredictorNet(weights)
