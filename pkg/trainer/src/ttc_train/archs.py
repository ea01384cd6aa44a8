"""Named architectures for the tabular and small-image configurations."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ArchSpec:
    name: str
    input_shape: tuple[int, int, int]  # tabular: (1, features, 1)
    kernel: tuple[int, int]
    stride: tuple[int, int]
    out_channels: int
    classes: int
    groups: int = 1
    expansion: int = 8


ARCHS = {
    # kernel 5, stride 4 over 18 binary attributes
    "adult": ArchSpec("adult", (1, 18, 1), (5, 1), (4, 1), 96, 2),
    # kernel 5, stride 4 over 81 one-hot features
    "cancer": ArchSpec("cancer", (1, 81, 1), (5, 1), (4, 1), 32, 2),
    # kernel 6, stride 5 over 296 features, 3 readmission classes
    "diabetes": ArchSpec("diabetes", (1, 296, 1), (6, 1), (5, 1), 24, 3),
    # fully private MNIST: 20x20 binarized input, 6-bit tables, 1600 features
    "mnist_full_pr": ArchSpec("mnist_full_pr", (1, 20, 20), (6, 1), (2, 2), 20, 10),
}


def get_arch(name: str) -> ArchSpec:
    if name not in ARCHS:
        raise KeyError(f"unknown architecture {name!r}; available: {sorted(ARCHS)}")
    return ARCHS[name]
