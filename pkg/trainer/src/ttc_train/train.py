"""Gradient training of truth-table networks on tabular bit features.

Adam over cross-entropy with the straight-through binary activation; the
optimizer, learning rate, and batch size defaults were chosen empirically
and are echoed into the metrics report so runs stay reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset

from ttc import circuit as rt_circuit
from ttc import data as rt_data
from ttc.errors import TTCError

from .archs import ArchSpec, get_arch
from .export import export, export_check
from .model import TruthTableNet


class DivergenceError(TTCError):
    """Training loss became non-finite; the message echoes seed and config."""


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 2e-3
    batch_size: int = 256
    seed: int = 0
    grad_bits: Optional[int] = None
    cosine_lr: bool = True
    arch: str = "adult"

    def describe(self) -> dict:
        return asdict(self)


def build_net(arch: ArchSpec, config: TrainConfig) -> TruthTableNet:
    torch.manual_seed(config.seed)
    return TruthTableNet(
        input_shape=arch.input_shape,
        out_channels=arch.out_channels,
        kernel=arch.kernel,
        stride=arch.stride,
        classes=arch.classes,
        groups=arch.groups,
        expansion=arch.expansion,
        grad_bits=config.grad_bits,
    )


def train_net(features: np.ndarray, labels: np.ndarray, arch: ArchSpec,
              config: TrainConfig, quiet: bool = True) -> TruthTableNet:
    """Train one network on bit features; aborts if the loss diverges."""
    net = build_net(arch, config)
    xs = torch.from_numpy(np.ascontiguousarray(features)).float()
    ys = torch.from_numpy(np.ascontiguousarray(labels)).long()
    loader = DataLoader(TensorDataset(xs, ys), batch_size=config.batch_size,
                        shuffle=True, generator=torch.Generator().manual_seed(config.seed))
    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr)
    scheduler = (torch.optim.lr_scheduler.CosineAnnealingLR(optimizer,
                                                            T_max=config.epochs)
                 if config.cosine_lr else None)
    loss_fn = torch.nn.CrossEntropyLoss()
    net.train()
    for epoch in range(config.epochs):
        total = 0.0
        for bx, by in loader:
            optimizer.zero_grad()
            loss = loss_fn(net(bx), by)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"loss is {loss.item()} at epoch {epoch}; "
                    f"config = {config.describe()}")
            loss.backward()
            optimizer.step()
            total += loss.detach().item()
        if scheduler is not None:
            scheduler.step()
        if not quiet and epoch % max(1, config.epochs // 10) == 0:
            print(f"  epoch {epoch}: loss {total / max(1, len(loader)):.4f}")
    net.eval()
    return net


def net_accuracy(net: TruthTableNet, features: np.ndarray, labels: np.ndarray) -> float:
    net.eval()
    with torch.no_grad():
        dtype = next(net.parameters()).dtype
        scores = net(torch.from_numpy(np.ascontiguousarray(features)).to(dtype))
        pred = scores.argmax(dim=1).numpy()
    return float(np.mean(pred == labels))


def run_folds(csv_path: str, schema_name: str, arch_name: str,
              config: TrainConfig, out_dir: str | Path,
              quiet: bool = True) -> dict:
    """Train one network per fold, export it, and score the compiled circuit.

    Quantile-derived feature bits are refit on each training fold, so the
    exported model and its evaluation never see test-fold statistics.
    """
    schema = rt_data.load_builtin_schema(schema_name)
    arch = get_arch(arch_name)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(csv_path, "r", encoding="utf-8") as fh:
        n_rows = sum(1 for _ in fh) - 1
    splits = rt_data.make_splits(n_rows, rt_data.SplitPlan(seed=config.seed))

    folds = []
    for fold, (train_idx, test_idx) in enumerate(splits):
        features, labels = rt_data.load_tabular(csv_path, schema, fit_rows=train_idx)
        net = train_net(features[train_idx], labels[train_idx], arch, config,
                        quiet=quiet)
        float_acc = net_accuracy(net, features[test_idx], labels[test_idx])

        fold_dir = out / f"fold{fold}"
        model_path, dump_path = export(net, fold_dir, name=f"{arch.name}-fold{fold}",
                                       dataset=schema_name)
        export_check(model_path, dump_path)

        from ttc import ttir
        circuit = rt_circuit.compile_model(ttir.load_model(str(model_path)))
        circuit_acc = rt_data.accuracy(circuit, features, labels, rows=test_idx)
        folds.append({"fold": fold, "float_accuracy": float_acc,
                      "circuit_accuracy": circuit_acc,
                      "model": str(model_path), "tables": str(dump_path)})
        if not quiet:
            print(f"fold {fold}: float {float_acc:.4f}, circuit {circuit_acc:.4f}")

    circuit_accs = [f["circuit_accuracy"] for f in folds]
    metrics = {
        "dataset": schema_name,
        "arch": arch_name,
        "config": config.describe(),
        "folds": folds,
        "mean_circuit_accuracy": float(np.mean(circuit_accs)),
        "std_circuit_accuracy": float(np.std(circuit_accs)),
        "mean_float_accuracy": float(np.mean([f["float_accuracy"] for f in folds])),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1), encoding="utf-8")
    return metrics
