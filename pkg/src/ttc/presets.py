"""Named model architectures with reproducible randomly initialized weights.

These mirror the deployed configurations: tabular models are a single 1-D
truth-table block with an 8x internal expansion, image models add the
multi-head variants. Weights are placeholders drawn from a seeded generator;
trained weights arrive through the model file format.
"""

from __future__ import annotations

import numpy as np

from .ttir import (
    BatchNormSpec,
    ConvLayerSpec,
    FrontEnd,
    HeadSpec,
    LinearLayerSpec,
    LTTBlockSpec,
    ModelSpec,
    precomputed_front_end,
)

EXPANSION = 8


def _rand_conv(rng: np.random.Generator, in_ch: int, out_ch: int,
               kernel: tuple[int, int], stride: tuple[int, int],
               groups: int = 1, padding: int = 0, dims: int = 2) -> ConvLayerSpec:
    fan_in = (in_ch // groups) * kernel[0] * kernel[1]
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(out_ch, in_ch // groups, *kernel))
    return ConvLayerSpec(in_channels=in_ch, out_channels=out_ch, kernel=kernel,
                         stride=stride, groups=groups, padding=padding,
                         weights=w, dims=dims)


def _rand_bn(rng: np.random.Generator, channels: int) -> BatchNormSpec:
    return BatchNormSpec(
        gamma=rng.uniform(0.5, 1.5, channels),
        beta=rng.normal(0.0, 0.5, channels),
        running_mean=rng.normal(0.0, 0.5, channels),
        running_var=rng.uniform(0.5, 1.5, channels),
        epsilon=1e-5,
    )


def random_block(rng: np.random.Generator, in_channels: int, kernel: tuple[int, int],
                 stride: tuple[int, int], out_channels: int, groups: int = 1,
                 padding: int = 0, dims: int = 2,
                 expansion: int = EXPANSION) -> LTTBlockSpec:
    # in_channels is divisible by groups, so the expanded width is too
    hidden = in_channels * expansion
    return LTTBlockSpec(
        layer1=_rand_conv(rng, in_channels, hidden, kernel, stride,
                          groups=groups, padding=padding, dims=dims),
        bn1=_rand_bn(rng, hidden),
        layer2=_rand_conv(rng, hidden, out_channels, (1, 1), (1, 1),
                          groups=groups, dims=dims),
        bn2=_rand_bn(rng, out_channels),
    )


def tabular_model(name: str, n_features: int, kernel: int, stride: int,
                  out_channels: int, classes: int, seed: int,
                  dataset: str = "") -> ModelSpec:
    """Single 1-D truth-table block over a flat binary feature vector."""
    rng = np.random.default_rng(seed)
    block = random_block(rng, 1, (kernel, 1), (stride, 1), out_channels, dims=1)
    patches = (n_features - kernel) // stride + 1
    feats = patches * out_channels
    model = ModelSpec(
        input_shape=n_features,
        front_end=precomputed_front_end(),
        heads=(HeadSpec(kind="ltt", block=block),),
        linear=LinearLayerSpec(weights=rng.normal(0.0, 1.0, (classes, feats))),
        name=name,
        dataset=dataset or name,
        setting="full_pr",
    )
    model.validate()
    return model


def adult_model(seed: int = 7) -> ModelSpec:
    """Kernel 5, stride 4, no padding over 18 binary attributes (n = 5)."""
    return tabular_model("adult", n_features=18, kernel=5, stride=4,
                         out_channels=96, classes=2, seed=seed)


def cancer_model(seed: int = 11) -> ModelSpec:
    """Kernel 5, stride 4, no padding over 81 binary features (n = 5)."""
    return tabular_model("cancer", n_features=81, kernel=5, stride=4,
                         out_channels=32, classes=2, seed=seed)


def diabetes_model(seed: int = 13) -> ModelSpec:
    """Kernel 6, stride 5, no padding over 296 binary features (n = 6)."""
    return tabular_model("diabetes", n_features=296, kernel=6, stride=5,
                         out_channels=16, classes=3, seed=seed)


def mnist_full_pr_model(seed: int = 17) -> ModelSpec:
    """Fully private MNIST: 20x20 binarized input, kernel 6, stride 2.

    1600 features feed the linear layer, one 6-bit table call each.
    """
    rng = np.random.default_rng(seed)
    block = random_block(rng, 1, (6, 1), (2, 2), 20, dims=2)
    model = ModelSpec(
        input_shape=(1, 20, 20),
        front_end=FrontEnd(kind="binarize", thresholds=np.zeros(400)),
        heads=(HeadSpec(kind="ltt", block=block),),
        linear=LinearLayerSpec(weights=rng.normal(0.0, 1.0, (10, 1600))),
        name="mnist_full_pr",
        dataset="mnist",
        setting="full_pr",
    )
    model.validate()
    return model


def mnist_vgg1b_tt_model(seed: int = 19) -> ModelSpec:
    """Split setting: client sends a binarized 16x7x7 feature map.

    Kernel (2, 2) with 16 groups keeps each table at n = 4; 576 features
    feed the 10-class linear layer.
    """
    rng = np.random.default_rng(seed)
    block = random_block(rng, 16, (2, 2), (1, 1), 16, groups=16, dims=2)
    model = ModelSpec(
        input_shape=(16, 7, 7),
        front_end=precomputed_front_end(),
        heads=(HeadSpec(kind="ltt", block=block),),
        linear=LinearLayerSpec(weights=rng.normal(0.0, 1.0, (10, 576))),
        name="mnist_vgg1b_tt",
        dataset="mnist",
        setting="split",
    )
    model.validate()
    return model


def and_gate_block() -> LTTBlockSpec:
    """A hand-built block computing AND of its two input bits.

    conv1 sums the inputs, batch norms are identities, and the final shift
    puts the binarization threshold between selu(1) and selu(2).
    """
    ident = lambda ch: BatchNormSpec(gamma=np.ones(ch), beta=np.zeros(ch),
                                     running_mean=np.zeros(ch), running_var=np.ones(ch),
                                     epsilon=0.0)
    shift = BatchNormSpec(gamma=np.ones(1), beta=np.full(1, -1.6),
                          running_mean=np.zeros(1), running_var=np.ones(1), epsilon=0.0)
    return LTTBlockSpec(
        layer1=ConvLayerSpec(in_channels=1, out_channels=1, kernel=(2, 1), stride=(1, 1),
                             weights=np.ones((1, 1, 2, 1)), dims=1),
        bn1=ident(1),
        layer2=ConvLayerSpec(in_channels=1, out_channels=1, kernel=(1, 1), stride=(1, 1),
                             weights=np.ones((1, 1, 1, 1)), dims=1),
        bn2=shift,
    )


def and_gate_model(weight: float = 1.0) -> ModelSpec:
    """Two inputs, one AND feature, one class scoring weight * AND(x0, x1)."""
    model = ModelSpec(
        input_shape=2,
        front_end=precomputed_front_end(),
        heads=(HeadSpec(kind="ltt", block=and_gate_block()),),
        linear=LinearLayerSpec(weights=np.array([[weight]])),
        name="and_gate",
    )
    model.validate()
    return model


PRESETS = {
    "adult": adult_model,
    "cancer": cancer_model,
    "diabetes": diabetes_model,
    "mnist_full_pr": mnist_full_pr_model,
    "mnist_vgg1b_tt": mnist_vgg1b_tt_model,
}


def build_preset(name: str, seed: int | None = None) -> ModelSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]() if seed is None else PRESETS[name](seed)
