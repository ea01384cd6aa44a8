"""Export trained networks to the portable model format and cross-check.

The truth-table dump is produced in-framework: every 2^n patch input is
pushed through the torch block in double precision and thresholded with the
same sgn(0) = +1 rule the runtime uses. ``export_check`` then re-extracts
the tables from the exported model file through the runtime package and
compares bit for bit, which catches any drift between the two stacks.
"""

from __future__ import annotations

from pathlib import Path

import torch

from ttc import ltt as rt_ltt
from ttc import ttir
from ttc.errors import TTCError

from .model import TruthTableNet


class MismatchError(TTCError):
    """Trainer-side and runtime-side truth tables disagree."""


def _conv_spec(conv: torch.nn.Conv2d, dims: int) -> ttir.ConvLayerSpec:
    return ttir.ConvLayerSpec(
        in_channels=conv.in_channels,
        out_channels=conv.out_channels,
        kernel=tuple(conv.kernel_size),
        stride=tuple(conv.stride),
        groups=conv.groups,
        padding=conv.padding[0],
        weights=conv.weight.detach().double().numpy(),
        dims=dims,
    )


def _bn_spec(bn: torch.nn.BatchNorm2d) -> ttir.BatchNormSpec:
    return ttir.BatchNormSpec(
        gamma=bn.weight.detach().double().numpy(),
        beta=bn.bias.detach().double().numpy(),
        running_mean=bn.running_mean.detach().double().numpy(),
        running_var=bn.running_var.detach().double().numpy(),
        epsilon=float(bn.eps),
    )


def to_model_spec(net: TruthTableNet, name: str, dataset: str = "") -> ttir.ModelSpec:
    """Build the portable model description from a trained network."""
    c, h, w = net.input_shape
    dims = 1 if w == 1 else 2
    block = ttir.LTTBlockSpec(
        layer1=_conv_spec(net.block.conv1, dims),
        bn1=_bn_spec(net.block.bn1),
        layer2=_conv_spec(net.block.conv2, dims),
        bn2=_bn_spec(net.block.bn2),
    )
    input_shape = h if (c == 1 and w == 1) else (c, h, w)
    model = ttir.ModelSpec(
        input_shape=input_shape,
        front_end=ttir.precomputed_front_end(),
        heads=(ttir.HeadSpec(kind="ltt", block=block),),
        linear=ttir.LinearLayerSpec(
            weights=net.linear.weight.detach().double().numpy()),
        name=name,
        dataset=dataset or name,
    )
    model.validate()
    return model


def dump_truth_tables(net: TruthTableNet) -> list[str]:
    """Enumerate every filter's table through the torch block, as bit strings.

    Lines follow ``head <i> channel <c> n <n> <bits>``, matching the runtime
    CLI dump, with bit k of the string being the output for the input whose
    wire i carries bit i of k.
    """
    block = net.block.double().eval()
    groups = block.conv1.groups
    in_pg = block.conv1.in_channels // groups
    kh, kw = block.conv1.kernel_size
    n = in_pg * kh * kw
    o2 = block.conv2.out_channels
    o2_pg = o2 // groups

    idx = torch.arange(1 << n)
    bits = ((idx[:, None] >> torch.arange(n)[None, :]) & 1).double()
    patches = bits.reshape(-1, in_pg, kh, kw)

    lines = []
    with torch.no_grad():
        for g in range(groups):
            # tile the patch into the group's channel slot; other groups see
            # zeros and do not influence this group's outputs
            x = torch.zeros(patches.shape[0], block.conv1.in_channels, kh, kw,
                            dtype=torch.double)
            x[:, g * in_pg:(g + 1) * in_pg] = patches
            h = torch.selu(block.bn1(block.conv1(x)))
            pre = block.bn2(block.conv2(h))[:, :, 0, 0]
            out = (pre >= 0).to(torch.uint8)
            for j in range(o2_pg):
                ch = g * o2_pg + j
                table = "".join(str(int(b)) for b in out[:, ch])
                lines.append(f"head 0 channel {ch} n {n} {table}")
    return lines


def export(net: TruthTableNet, out_dir: str | Path, name: str,
           dataset: str = "") -> tuple[Path, Path]:
    """Write model.json and tables.txt for one trained network."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = to_model_spec(net, name, dataset)
    model_path = out / "model.json"
    ttir.save_model(model, str(model_path))
    dump_path = out / "tables.txt"
    dump_path.write_text("\n".join(dump_truth_tables(net)) + "\n", encoding="utf-8")
    return model_path, dump_path


def _parse_dump(path: str | Path) -> dict[tuple[int, int], tuple[int, str]]:
    tables = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 7 or parts[0] != "head" or parts[2] != "channel":
            raise MismatchError(f"malformed dump line: {line!r}")
        tables[(int(parts[1]), int(parts[3]))] = (int(parts[5]), parts[6])
    return tables


def export_check(model_path: str | Path, dump_path: str | Path) -> int:
    """Re-extract tables from the exported model and compare to the dump.

    Returns the number of tables compared; raises MismatchError at the first
    difference, naming the table and the first differing index.
    """
    model = ttir.load_model(str(model_path))
    dumped = _parse_dump(dump_path)
    compared = 0
    for i, head in enumerate(model.heads):
        if head.kind != "ltt":
            continue
        assert head.block is not None
        tables = rt_ltt.extract_all_tables(head.block)
        for ch, table in enumerate(tables):
            key = (i, ch)
            if key not in dumped:
                raise MismatchError(f"dump is missing head {i} channel {ch}")
            n, bits = dumped[key]
            if n != table.n:
                raise MismatchError(
                    f"head {i} channel {ch}: dump says n = {n}, model gives {table.n}")
            ours = table.to_bitstring()
            if bits != ours:
                first = next(k for k, (a, b) in enumerate(zip(bits, ours)) if a != b)
                raise MismatchError(
                    f"head {i} channel {ch}: tables differ first at index {first}")
            compared += 1
    if compared != len(dumped):
        raise MismatchError(
            f"dump has {len(dumped)} tables, model yields {compared}")
    return compared
