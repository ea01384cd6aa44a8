"""Model intermediate representation and its portable serialization.

A model file is JSON with top-level keys ``input_shape``, ``front_end``,
``heads``, ``linear`` and ``metadata``; weight tensors are nested arrays in
row-major ``[out][in][kh][kw]`` order (see docs/model_format.md). The same
schema is emitted by the trainer, so parsing is strict: structural problems
raise :class:`SchemaError`, semantic ones raise :class:`InvariantError`
naming the offending field.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np

from .errors import InvariantError, SchemaError

MODEL_FORMAT = "ttc-model"
MODEL_VERSION = 1

# Lookup-table backends cap the table input bitwidth; calls above the soft
# limit still compile but are prohibitively slow, so we warn.
MAX_TABLE_BITS = 16
SLOW_TABLE_BITS = 8


def _as_f64(values: Any, name: str) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{name}: expected a numeric array") from exc
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{name}: values must be finite")
    arr.setflags(write=False)
    return arr


def _pair(value: Any, name: str) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    try:
        a, b = value
        return (int(a), int(b))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{name}: expected an int or a pair of ints") from exc


@dataclass(frozen=True, eq=False)
class ConvLayerSpec:
    """A grouped convolution layer with real weights and no bias."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int]
    groups: int = 1
    padding: int = 0
    weights: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0, 0)))
    dims: int = 2

    def validate(self, name: str = "conv") -> None:
        if self.dims not in (1, 2):
            raise InvariantError(f"{name}.dims: must be 1 or 2, got {self.dims}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvariantError(f"{name}: channel counts must be positive")
        if self.groups < 1:
            raise InvariantError(f"{name}.groups: must be positive")
        if self.in_channels % self.groups != 0:
            raise InvariantError(
                f"{name}.in_channels: {self.in_channels} not divisible by groups {self.groups}"
            )
        if self.out_channels % self.groups != 0:
            raise InvariantError(
                f"{name}.out_channels: {self.out_channels} not divisible by groups {self.groups}"
            )
        kh, kw = self.kernel
        sh, sw = self.stride
        if kh < 1 or kw < 1 or sh < 1 or sw < 1:
            raise InvariantError(f"{name}: kernel and stride entries must be positive")
        if self.dims == 1 and kw != 1:
            raise InvariantError(f"{name}.kernel: 1-D layer requires kw == 1, got {kw}")
        if self.padding < 0:
            raise InvariantError(f"{name}.padding: must be >= 0")
        expect = (self.out_channels, self.in_channels // self.groups, kh, kw)
        if self.weights.shape != expect:
            raise InvariantError(
                f"{name}.weights: shape {self.weights.shape} does not match declared "
                f"geometry {expect}"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConvLayerSpec):
            return NotImplemented
        return (
            self.in_channels == other.in_channels
            and self.out_channels == other.out_channels
            and self.kernel == other.kernel
            and self.stride == other.stride
            and self.groups == other.groups
            and self.padding == other.padding
            and self.dims == other.dims
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True, eq=False)
class BatchNormSpec:
    """Inference-mode batch normalization: gamma*(x-mean)/sqrt(var+eps)+beta."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    @property
    def channels(self) -> int:
        return int(self.gamma.shape[0])

    def validate(self, name: str = "bn") -> None:
        n = self.gamma.shape
        for fld in ("beta", "running_mean", "running_var"):
            if getattr(self, fld).shape != n:
                raise InvariantError(f"{name}.{fld}: length differs from gamma")
        if len(n) != 1:
            raise InvariantError(f"{name}.gamma: expected a vector")
        if np.any(self.running_var + self.epsilon <= 0):
            raise InvariantError(f"{name}.running_var: var + epsilon must be positive")

    def apply(self, x: np.ndarray, channel_axis: int = 0) -> np.ndarray:
        shape = [1] * x.ndim
        shape[channel_axis] = -1
        scale = (self.gamma / np.sqrt(self.running_var + self.epsilon)).reshape(shape)
        shift = (self.beta - self.running_mean * self.gamma
                 / np.sqrt(self.running_var + self.epsilon)).reshape(shape)
        return x * scale + shift

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BatchNormSpec):
            return NotImplemented
        return (
            np.array_equal(self.gamma, other.gamma)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.running_mean, other.running_mean)
            and np.array_equal(self.running_var, other.running_var)
            and self.epsilon == other.epsilon
        )


@dataclass(frozen=True, eq=False)
class LTTBlockSpec:
    """Two grouped conv layers with an internal expansion, binarized output.

    Pipeline: conv1 -> bn1 -> selu -> conv2 (1x1) -> bn2 -> bin_act. Inputs
    and outputs are bits, weights and intermediate values are reals, so each
    output channel is exactly representable as a truth table over its
    receptive field.
    """

    layer1: ConvLayerSpec
    bn1: BatchNormSpec
    layer2: ConvLayerSpec
    bn2: BatchNormSpec
    activation: str = "selu"
    binarize: str = "bin_act"

    @property
    def groups(self) -> int:
        return self.layer1.groups

    @property
    def out_channels(self) -> int:
        return self.layer2.out_channels

    def composed_kernel(self) -> tuple[int, int]:
        k1h, k1w = self.layer1.kernel
        k2h, k2w = self.layer2.kernel
        s1h, s1w = self.layer1.stride
        return ((k2h - 1) * s1h + k1h, (k2w - 1) * s1w + k1w)

    def composed_stride(self) -> tuple[int, int]:
        s1h, s1w = self.layer1.stride
        s2h, s2w = self.layer2.stride
        return (s1h * s2h, s1w * s2w)

    def composed_padding(self) -> int:
        return self.layer1.padding

    def input_bits(self) -> int:
        """Receptive field size in bits of one output channel."""
        kh, kw = self.composed_kernel()
        return (self.layer1.in_channels // self.layer1.groups) * kh * kw

    def validate(self, name: str = "block") -> None:
        self.layer1.validate(f"{name}.layer1")
        self.layer2.validate(f"{name}.layer2")
        self.bn1.validate(f"{name}.bn1")
        self.bn2.validate(f"{name}.bn2")
        if self.activation != "selu":
            raise InvariantError(f"{name}.activation: only 'selu' is supported")
        if self.binarize != "bin_act":
            raise InvariantError(f"{name}.binarize: only 'bin_act' is supported")
        if self.layer2.kernel != (1, 1):
            raise InvariantError(
                f"{name}.layer2.kernel: expansion collapse layer must have kernel (1, 1), "
                f"got {self.layer2.kernel}"
            )
        if self.layer2.padding != 0:
            raise InvariantError(f"{name}.layer2.padding: must be 0 for a 1x1 layer")
        if self.layer1.out_channels != self.layer2.in_channels:
            raise InvariantError(
                f"{name}.layer2.in_channels: {self.layer2.in_channels} does not match "
                f"layer1.out_channels {self.layer1.out_channels}"
            )
        if self.layer1.groups != self.layer2.groups:
            raise InvariantError(
                f"{name}.layer2.groups: {self.layer2.groups} differs from layer1.groups "
                f"{self.layer1.groups}; group wiring must be preserved across the block"
            )
        if self.bn1.channels != self.layer1.out_channels:
            raise InvariantError(f"{name}.bn1: channel count differs from layer1.out_channels")
        if self.bn2.channels != self.layer2.out_channels:
            raise InvariantError(f"{name}.bn2: channel count differs from layer2.out_channels")
        n = self.input_bits()
        if n > MAX_TABLE_BITS:
            raise InvariantError(
                f"{name}: receptive field is {n} bits, above the {MAX_TABLE_BITS}-bit "
                f"lookup-table limit"
            )
        if n > SLOW_TABLE_BITS:
            warnings.warn(
                f"{name}: receptive field is {n} bits; table calls above "
                f"{SLOW_TABLE_BITS} bits are disproportionately slow",
                stacklevel=2,
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LTTBlockSpec):
            return NotImplemented
        return (
            self.layer1 == other.layer1
            and self.bn1 == other.bn1
            and self.layer2 == other.layer2
            and self.bn2 == other.bn2
            and self.activation == other.activation
            and self.binarize == other.binarize
        )


@dataclass(frozen=True, eq=False)
class HeadSpec:
    """One parallel head: a truth-table block or an identity passthrough."""

    kind: str  # "ltt" | "identity"
    block: Optional[LTTBlockSpec] = None
    shuffle: Optional[tuple[int, ...]] = None

    def validate(self, name: str, in_channels: int) -> None:
        if self.kind not in ("ltt", "identity"):
            raise InvariantError(f"{name}.kind: expected 'ltt' or 'identity', got {self.kind!r}")
        if self.kind == "ltt":
            if self.block is None:
                raise InvariantError(f"{name}.block: required for an ltt head")
            self.block.validate(f"{name}.block")
        elif self.block is not None:
            raise InvariantError(f"{name}.block: identity head must not carry a block")
        if self.shuffle is not None:
            if sorted(self.shuffle) != list(range(in_channels)):
                raise InvariantError(
                    f"{name}.shuffle: not a permutation of 0..{in_channels - 1}"
                )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HeadSpec):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.block == other.block
            and self.shuffle == other.shuffle
        )


@dataclass(frozen=True, eq=False)
class LinearLayerSpec:
    """Final classification layer with real weights, no bias."""

    weights: np.ndarray  # [classes, features]

    @property
    def classes(self) -> int:
        return int(self.weights.shape[0])

    @property
    def features(self) -> int:
        return int(self.weights.shape[1])

    def validate(self, name: str = "linear") -> None:
        if self.weights.ndim != 2:
            raise InvariantError(f"{name}.weights: expected a [classes x features] matrix")
        if not np.all(np.isfinite(self.weights)):
            raise InvariantError(f"{name}.weights: values must be finite")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LinearLayerSpec):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)


@dataclass(frozen=True, eq=False)
class FrontEnd:
    """Input pre-processing: threshold binarization or client-supplied bits."""

    kind: str  # "binarize" | "precomputed_binary"
    thresholds: Optional[np.ndarray] = None

    def validate(self, name: str, input_size: int) -> None:
        if self.kind == "binarize":
            if self.thresholds is None:
                raise InvariantError(f"{name}.thresholds: required for binarize")
            if self.thresholds.shape != (input_size,):
                raise InvariantError(
                    f"{name}.thresholds: length {self.thresholds.shape} does not match "
                    f"input size {input_size}"
                )
        elif self.kind == "precomputed_binary":
            if self.thresholds is not None:
                raise InvariantError(f"{name}.thresholds: not allowed for precomputed_binary")
        else:
            raise InvariantError(
                f"{name}.kind: expected 'binarize' or 'precomputed_binary', got {self.kind!r}"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrontEnd):
            return NotImplemented
        if self.kind != other.kind:
            return False
        if self.thresholds is None or other.thresholds is None:
            return self.thresholds is None and other.thresholds is None
        return np.array_equal(self.thresholds, other.thresholds)


def binarize_front_end(thresholds: Sequence[float]) -> FrontEnd:
    return FrontEnd(kind="binarize", thresholds=_as_f64(thresholds, "front_end.thresholds"))


def precomputed_front_end() -> FrontEnd:
    return FrontEnd(kind="precomputed_binary")


InputShape = Union[int, tuple[int, int, int]]


def normalize_input_shape(shape: InputShape) -> tuple[int, int, int]:
    """Normalize a flat feature count or (c, h, w) triple to (c, h, w)."""
    if isinstance(shape, int):
        return (1, shape, 1)
    if len(shape) == 3:
        return (int(shape[0]), int(shape[1]), int(shape[2]))
    raise SchemaError(f"input_shape: expected an int or (channels, h, w), got {shape!r}")


def conv_output_hw(h: int, w: int, kernel: tuple[int, int], stride: tuple[int, int],
                   padding: int) -> tuple[int, int]:
    oh = (h + 2 * padding - kernel[0]) // stride[0] + 1
    ow = (w + 2 * padding - kernel[1]) // stride[1] + 1
    return oh, ow


def head_output_hw(head: HeadSpec, input_shape: tuple[int, int, int]) -> tuple[int, int]:
    c, h, w = input_shape
    if head.kind == "identity":
        return h, w
    block = head.block
    assert block is not None
    return conv_output_hw(h, w, block.composed_kernel(), block.composed_stride(),
                          block.composed_padding())


def head_feature_count(head: HeadSpec, input_shape: tuple[int, int, int]) -> int:
    """Number of binary features this head contributes to the linear layer."""
    c, h, w = input_shape
    if head.kind == "identity":
        return c * h * w
    oh, ow = head_output_hw(head, input_shape)
    assert head.block is not None
    return head.block.out_channels * oh * ow


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A full network: front end, parallel heads, final linear layer."""

    input_shape: InputShape
    front_end: FrontEnd
    heads: tuple[HeadSpec, ...]
    linear: LinearLayerSpec
    name: str = "model"
    dataset: str = ""
    setting: str = "full_pr"  # "full_pr" | "split"

    @property
    def input_chw(self) -> tuple[int, int, int]:
        return normalize_input_shape(self.input_shape)

    @property
    def input_size(self) -> int:
        c, h, w = self.input_chw
        return c * h * w

    def feature_count(self) -> int:
        return sum(head_feature_count(h, self.input_chw) for h in self.heads)

    def validate(self) -> None:
        c, h, w = self.input_chw
        if c < 1 or h < 1 or w < 1:
            raise InvariantError("input_shape: all dimensions must be positive")
        if self.setting not in ("full_pr", "split"):
            raise InvariantError(f"metadata.setting: expected 'full_pr' or 'split', got {self.setting!r}")
        self.front_end.validate("front_end", self.input_size)
        if not self.heads:
            raise InvariantError("heads: at least one head is required")
        for i, head in enumerate(self.heads):
            name = f"heads[{i}]"
            head.validate(name, c)
            if head.kind == "ltt":
                block = head.block
                assert block is not None
                if block.layer1.in_channels != c:
                    raise InvariantError(
                        f"{name}.block.layer1.in_channels: {block.layer1.in_channels} does "
                        f"not match input channels {c}"
                    )
                oh, ow = head_output_hw(head, self.input_chw)
                if oh < 1 or ow < 1:
                    raise InvariantError(
                        f"{name}: receptive field does not fit the {h}x{w} input"
                    )
        self.linear.validate("linear")
        expect = self.feature_count()
        if self.linear.features != expect:
            raise InvariantError(
                f"linear.features: {self.linear.features} does not match the "
                f"{expect} bit features produced by the heads"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            normalize_input_shape(self.input_shape) == normalize_input_shape(other.input_shape)
            and self.front_end == other.front_end
            and self.heads == other.heads
            and self.linear == other.linear
            and self.name == other.name
            and self.dataset == other.dataset
            and self.setting == other.setting
        )


# ---------------------------------------------------------------------------
# JSON encoding


def _conv_to_json(layer: ConvLayerSpec) -> dict:
    return {
        "in_channels": layer.in_channels,
        "out_channels": layer.out_channels,
        "kernel": list(layer.kernel),
        "stride": list(layer.stride),
        "groups": layer.groups,
        "padding": layer.padding,
        "dims": layer.dims,
        "weights": layer.weights.tolist(),
    }


def _conv_from_json(obj: Any, name: str) -> ConvLayerSpec:
    if not isinstance(obj, dict):
        raise SchemaError(f"{name}: expected an object")
    try:
        layer = ConvLayerSpec(
            in_channels=int(obj["in_channels"]),
            out_channels=int(obj["out_channels"]),
            kernel=_pair(obj["kernel"], f"{name}.kernel"),
            stride=_pair(obj["stride"], f"{name}.stride"),
            groups=int(obj.get("groups", 1)),
            padding=int(obj.get("padding", 0)),
            dims=int(obj.get("dims", 2)),
            weights=_as_f64(obj["weights"], f"{name}.weights"),
        )
    except KeyError as exc:
        raise SchemaError(f"{name}: missing key {exc.args[0]!r}") from exc
    return layer


def _bn_to_json(bn: BatchNormSpec) -> dict:
    return {
        "gamma": bn.gamma.tolist(),
        "beta": bn.beta.tolist(),
        "running_mean": bn.running_mean.tolist(),
        "running_var": bn.running_var.tolist(),
        "epsilon": bn.epsilon,
    }


def _bn_from_json(obj: Any, name: str) -> BatchNormSpec:
    if not isinstance(obj, dict):
        raise SchemaError(f"{name}: expected an object")
    try:
        return BatchNormSpec(
            gamma=_as_f64(obj["gamma"], f"{name}.gamma"),
            beta=_as_f64(obj["beta"], f"{name}.beta"),
            running_mean=_as_f64(obj["running_mean"], f"{name}.running_mean"),
            running_var=_as_f64(obj["running_var"], f"{name}.running_var"),
            epsilon=float(obj.get("epsilon", 1e-5)),
        )
    except KeyError as exc:
        raise SchemaError(f"{name}: missing key {exc.args[0]!r}") from exc


def _head_to_json(head: HeadSpec) -> dict:
    out: dict[str, Any] = {"kind": head.kind}
    out["shuffle"] = list(head.shuffle) if head.shuffle is not None else None
    if head.block is not None:
        out["block"] = {
            "layer1": _conv_to_json(head.block.layer1),
            "bn1": _bn_to_json(head.block.bn1),
            "activation": head.block.activation,
            "layer2": _conv_to_json(head.block.layer2),
            "bn2": _bn_to_json(head.block.bn2),
            "binarize": head.block.binarize,
        }
    return out


def _head_from_json(obj: Any, name: str) -> HeadSpec:
    if not isinstance(obj, dict):
        raise SchemaError(f"{name}: expected an object")
    kind = obj.get("kind")
    if kind not in ("ltt", "identity"):
        raise SchemaError(f"{name}.kind: expected 'ltt' or 'identity', got {kind!r}")
    shuffle = obj.get("shuffle")
    shuffle_t = tuple(int(x) for x in shuffle) if shuffle is not None else None
    block = None
    if kind == "ltt":
        raw = obj.get("block")
        if not isinstance(raw, dict):
            raise SchemaError(f"{name}.block: expected an object")
        block = LTTBlockSpec(
            layer1=_conv_from_json(raw.get("layer1"), f"{name}.block.layer1"),
            bn1=_bn_from_json(raw.get("bn1"), f"{name}.block.bn1"),
            layer2=_conv_from_json(raw.get("layer2"), f"{name}.block.layer2"),
            bn2=_bn_from_json(raw.get("bn2"), f"{name}.block.bn2"),
            activation=str(raw.get("activation", "selu")),
            binarize=str(raw.get("binarize", "bin_act")),
        )
    return HeadSpec(kind=kind, block=block, shuffle=shuffle_t)


def model_to_json(m: ModelSpec) -> dict:
    front: dict[str, Any] = {"kind": m.front_end.kind}
    if m.front_end.thresholds is not None:
        front["thresholds"] = m.front_end.thresholds.tolist()
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_shape": (m.input_shape if isinstance(m.input_shape, int)
                        else list(m.input_shape)),
        "front_end": front,
        "heads": [_head_to_json(h) for h in m.heads],
        "linear": {
            "classes": m.linear.classes,
            "features": m.linear.features,
            "weights": m.linear.weights.tolist(),
        },
        "metadata": {"name": m.name, "dataset": m.dataset, "setting": m.setting},
    }


def model_from_json(obj: Any) -> ModelSpec:
    if not isinstance(obj, dict):
        raise SchemaError("model: expected a JSON object")
    if obj.get("format") != MODEL_FORMAT:
        raise SchemaError(f"format: expected {MODEL_FORMAT!r}, got {obj.get('format')!r}")
    if int(obj.get("version", -1)) != MODEL_VERSION:
        raise SchemaError(f"version: unsupported model version {obj.get('version')!r}")
    raw_shape = obj.get("input_shape")
    if isinstance(raw_shape, int):
        input_shape: InputShape = raw_shape
    elif isinstance(raw_shape, (list, tuple)) and len(raw_shape) == 3:
        input_shape = (int(raw_shape[0]), int(raw_shape[1]), int(raw_shape[2]))
    else:
        raise SchemaError(f"input_shape: expected an int or [c, h, w], got {raw_shape!r}")

    raw_front = obj.get("front_end")
    if not isinstance(raw_front, dict) or "kind" not in raw_front:
        raise SchemaError("front_end: expected an object with a 'kind'")
    if raw_front["kind"] == "binarize":
        front = binarize_front_end(raw_front.get("thresholds", []))
    elif raw_front["kind"] == "precomputed_binary":
        front = precomputed_front_end()
    else:
        raise SchemaError(f"front_end.kind: unknown kind {raw_front['kind']!r}")

    raw_heads = obj.get("heads")
    if not isinstance(raw_heads, list) or not raw_heads:
        raise SchemaError("heads: expected a non-empty list")
    heads = tuple(_head_from_json(h, f"heads[{i}]") for i, h in enumerate(raw_heads))

    raw_linear = obj.get("linear")
    if not isinstance(raw_linear, dict):
        raise SchemaError("linear: expected an object")
    weights = _as_f64(raw_linear.get("weights"), "linear.weights")
    if weights.ndim != 2:
        raise SchemaError("linear.weights: expected a 2-D matrix")
    linear = LinearLayerSpec(weights=weights)
    for key, got in (("classes", linear.classes), ("features", linear.features)):
        if key in raw_linear and int(raw_linear[key]) != got:
            raise InvariantError(
                f"linear.{key}: declared {raw_linear[key]} but weights imply {got}"
            )

    meta = obj.get("metadata") or {}
    model = ModelSpec(
        input_shape=input_shape,
        front_end=front,
        heads=heads,
        linear=linear,
        name=str(meta.get("name", "model")),
        dataset=str(meta.get("dataset", "")),
        setting=str(meta.get("setting", "full_pr")),
    )
    model.validate()
    return model


def parse_model(data: Union[bytes, str]) -> ModelSpec:
    """Parse and fully validate a serialized model."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model: invalid JSON ({exc})") from exc
    return model_from_json(obj)


def serialize_model(m: ModelSpec) -> bytes:
    """Serialize a validated model; parse_model inverts this exactly."""
    m.validate()
    return json.dumps(model_to_json(m), indent=1).encode("utf-8")


def load_model(path: str) -> ModelSpec:
    with open(path, "rb") as fh:
        return parse_model(fh.read())


def save_model(m: ModelSpec, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(m))
