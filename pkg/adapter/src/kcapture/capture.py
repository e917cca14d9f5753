"""Forward-hook capture of hidden activations and per-example losses.

Selected modules are hooked during a plain forward pass over the batch
iterator; their outputs are pooled to one fixed-width vector per example
at capture time, so the dump never stores token-resolution tensors.
After pooling, exact vector equality is what defines a collision
downstream; producers pooling over quotient-style representations should
be aware the distinction is lost here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import torch

from .dumpio import MetricDecl, write_kcd1

POOLINGS = ("last_token", "mean_tokens", "flatten")


@dataclass(frozen=True)
class LayerCapture:
    """One layer to record: module selector, pooling rule, metric."""

    selector: str
    pooling: str = "flatten"
    metric: MetricDecl = field(default_factory=MetricDecl)

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")


@dataclass(frozen=True)
class CaptureSpec:
    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise ValueError("capture spec selects no layers")
        names = [layer.selector for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer selectors: {names}")


def _pool(output: torch.Tensor, pooling: str, selector: str) -> torch.Tensor:
    if not isinstance(output, torch.Tensor):
        raise ValueError(f"layer {selector!r} produced {type(output).__name__}, not a tensor")
    if pooling == "last_token":
        if output.dim() != 3:
            raise ValueError(
                f"layer {selector!r}: last_token pooling needs (batch, tokens, dim), "
                f"got shape {tuple(output.shape)}"
            )
        return output[:, -1, :]
    if pooling == "mean_tokens":
        if output.dim() < 3:
            raise ValueError(
                f"layer {selector!r}: mean_tokens pooling needs (batch, tokens, ...), "
                f"got shape {tuple(output.shape)}"
            )
        return output.mean(dim=1).reshape(output.shape[0], -1)
    return output.reshape(output.shape[0], -1)


def _resolve(model: torch.nn.Module, selector: str) -> torch.nn.Module:
    modules = dict(model.named_modules())
    if selector not in modules:
        available = sorted(name for name in modules if name)
        raise ValueError(
            f"no module named {selector!r}; available layers: {available}"
        )
    return modules[selector]


def capture(
    model: torch.nn.Module,
    batches: Iterable,
    spec: CaptureSpec,
    loss_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    path: Union[str, Path],
    model_id: str = "captured",
    family: str = "other",
    notes: str = "",
    manifest: Optional[Mapping[str, str]] = None,
    store_labels: bool = True,
) -> Path:
    """Run the model over ``batches`` and write a KCD1 dump to ``path``.

    ``loss_fn(outputs, targets)`` must return one nonnegative loss per
    example (reduction "none" style).  Targets are stored as labels when
    they are integer class indices and ``store_labels`` is set.
    """
    modules = [_resolve(model, layer.selector) for layer in spec.layers]

    pooled: list[list[np.ndarray]] = [[] for _ in spec.layers]
    losses: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    current: dict[int, torch.Tensor] = {}

    def hook(slot: int, layer: LayerCapture):
        def run(_module, _inputs, output):
            current[slot] = _pool(output, layer.pooling, layer.selector)

        return run

    handles = [
        module.register_forward_hook(hook(slot, layer))
        for slot, (module, layer) in enumerate(zip(modules, spec.layers))
    ]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for batch_index, (inputs, targets) in enumerate(batches):
                current.clear()
                outputs = model(inputs)
                missing = [
                    spec.layers[slot].selector
                    for slot in range(len(spec.layers))
                    if slot not in current
                ]
                if missing:
                    raise ValueError(
                        f"batch {batch_index}: selected layers {missing} did not fire; "
                        "are they part of the forward graph?"
                    )
                batch_losses = loss_fn(outputs, targets)
                if batch_losses.dim() != 1 or batch_losses.shape[0] != outputs.shape[0]:
                    raise ValueError("loss_fn must return one loss per example")
                losses.append(batch_losses.detach().cpu().numpy().astype(np.float32))
                for slot in range(len(spec.layers)):
                    vec = current[slot].detach().cpu().numpy().astype(np.float32)
                    if pooled[slot] and vec.shape[1] != pooled[slot][0].shape[1]:
                        raise ValueError(
                            f"layer {spec.layers[slot].selector!r}: ragged pooled widths "
                            f"{pooled[slot][0].shape[1]} vs {vec.shape[1]}"
                        )
                    pooled[slot].append(vec)
                if store_labels and not torch.is_floating_point(targets):
                    labels.append(targets.detach().cpu().numpy().astype(np.int64))
    finally:
        for handle in handles:
            handle.remove()
        if was_training:
            model.train()

    if not losses:
        raise ValueError("batch iterator produced no batches")
    label_arr = np.concatenate(labels) if labels and len(labels) == len(losses) else None
    write_kcd1(
        path,
        layer_vectors=[np.concatenate(chunks) for chunks in pooled],
        metrics=[layer.metric for layer in spec.layers],
        losses=np.concatenate(losses),
        labels=label_arr,
        model_id=model_id,
        family=family,
        param_count=max(1, sum(p.numel() for p in model.parameters())),
        notes=notes,
        manifest=manifest,
    )
    return Path(path)
