"""Seeded synthetic image datasets; no downloads needed for CI."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class Dataset:
    train_images: torch.Tensor
    train_labels: torch.Tensor
    val_images: torch.Tensor
    val_labels: torch.Tensor


def synthetic_dataset(seed: int, n_train: int = 1024, n_val: int = 512,
                      classes: int = 10, side: int = 32, channels: int = 3,
                      noise: float = 0.35, flip: bool = True) -> Dataset:
    """Gaussian class clusters rendered as per-class channel patterns.

    Each class owns a fixed random template image; samples are the template
    plus isotropic Gaussian noise (optionally horizontally flipped), which
    keeps the task linearly separable at low noise but non-trivial for a
    small convnet at the default level.
    """
    gen = torch.Generator().manual_seed(seed)
    templates = torch.randn(classes, channels, side, side, generator=gen)

    def make(n):
        labels = torch.randint(0, classes, (n,), generator=gen)
        images = templates[labels] + noise * torch.randn(
            n, channels, side, side, generator=gen
        )
        if flip:
            flips = torch.rand(n, generator=gen) < 0.5
            images[flips] = torch.flip(images[flips], dims=(3,))
        return images, labels

    train_images, train_labels = make(n_train)
    val_images, val_labels = make(n_val)
    return Dataset(train_images, train_labels, val_images, val_labels)
