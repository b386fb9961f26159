"""Completion networks: one encoder-decoder per (modality, erased position).

An incomplete event's ``D - 1`` patches are stacked along the channel axis in temporal
order; the network outputs the erased patch (3 channels) or its optical flow (2).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, Dataset, TensorDataset

from .events import EventArchive, IncompleteEvent

log = logging.getLogger(__name__)

KINDS = ("appearance", "motion")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CompletionModelSpec:
    kind: str
    ie_type: int
    depth: int = 5
    height: int = 32
    width: int = 32
    widths: tuple[int, ...] = (64, 128, 256, 512)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 1 <= self.ie_type <= self.depth:
            raise ValueError(f"ie_type {self.ie_type} outside 1..{self.depth}")
        factor = 2 ** (len(self.widths) - 1)
        if self.height % factor or self.width % factor:
            raise ValueError(f"patch size must be divisible by {factor} for {len(self.widths)} levels")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def in_channels(self) -> int:
        return 3 * (self.depth - 1)

    @property
    def out_channels(self) -> int:
        return 3 if self.kind == "appearance" else 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompletionModelSpec":
        return cls(**{**d, "widths": tuple(d["widths"])})


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    learning_rate: float = 1e-3
    p_norm: float = 2.0
    seed: int = 0
    max_steps: int | None = None
    reduction: str = "mean"
    device: str = "cpu"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
    )


class CompletionNet(nn.Module):
    """U-shaped encoder-decoder with skip connections.

    ``len(widths)`` resolution levels, each halving the spatial size; the decoder mirrors
    the encoder with transposed-convolution upsampling and concatenated skips.
    """

    def __init__(self, spec: CompletionModelSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        self.down = nn.ModuleList()
        cin = spec.in_channels
        for cout in w:
            self.down.append(_double_conv(cin, cout))
            cin = cout
        self.pool = nn.MaxPool2d(2)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for k in range(len(w) - 1, 0, -1):
            self.up.append(nn.ConvTranspose2d(w[k], w[k - 1], 2, stride=2))
            self.dec.append(_double_conv(2 * w[k - 1], w[k - 1]))
        self.head = nn.Conv2d(w[0], spec.out_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for k, block in enumerate(self.down):
            if k:
                x = self.pool(x)
            x = block(x)
            skips.append(x)
        skips.pop()
        for up, dec in zip(self.up, self.dec):
            x = dec(torch.cat([up(x), skips.pop()], dim=1))
        x = self.head(x)
        return torch.sigmoid(x) if self.spec.kind == "appearance" else x


def build_model(spec: CompletionModelSpec, seed: int = 0) -> CompletionNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return CompletionNet(spec)


def pack_context(context: np.ndarray) -> np.ndarray:
    """(..., D-1, H, W, 3) patches -> (..., 3(D-1), H, W) network input."""
    context = np.asarray(context, dtype=np.float32)
    *lead, n, h, w, c = context.shape
    moved = np.moveaxis(context, -1, -3)  # (..., D-1, 3, H, W)
    return np.ascontiguousarray(moved.reshape(*lead, n * c, h, w))


def pack_target(target: np.ndarray) -> np.ndarray:
    """(..., H, W, C) -> (..., C, H, W)."""
    return np.ascontiguousarray(np.moveaxis(np.asarray(target, dtype=np.float32), -1, -3))


def unpack_output(out: torch.Tensor) -> np.ndarray:
    return np.moveaxis(out.detach().cpu().numpy(), -3, -1)


def forward(model: CompletionNet, ie: IncompleteEvent) -> np.ndarray:
    """Generated H x W x C patch for one incomplete event."""
    if ie.erased_index != model.spec.ie_type:
        raise ValueError(
            f"model completes type-{model.spec.ie_type} events, got type {ie.erased_index}"
        )
    return predict(model, ie.context[None])[0]


@torch.no_grad()
def predict(model: CompletionNet, contexts: np.ndarray, batch_size: int = 256,
            device: str = "cpu") -> np.ndarray:
    """Batched forward pass over (N, D-1, H, W, 3) contexts -> (N, H, W, C)."""
    model.eval()
    model.to(device)
    outs = []
    for start in range(0, len(contexts), batch_size):
        x = torch.from_numpy(pack_context(contexts[start:start + batch_size])).to(device)
        outs.append(unpack_output(model(x)))
    if not outs:
        h, w = model.spec.height, model.spec.width
        return np.zeros((0, h, w, model.spec.out_channels), dtype=np.float32)
    return np.concatenate(outs)


def completion_loss(output: torch.Tensor, target: torch.Tensor, p: float = 2.0,
                    reduction: str = "mean") -> torch.Tensor:
    """Batch mean of the per-event ``||output - target||_p^p``.

    ``reduction="mean"`` divides each event's term by its element count, which puts the
    loss on the same scale as the MSE anomaly score; ``"sum"`` keeps the raw norm.
    """
    diff = (output - target).abs()
    per_elem = (diff * diff if p == 2 else diff ** p).flatten(1)
    per_event = per_elem.mean(dim=1) if reduction == "mean" else per_elem.sum(dim=1)
    return per_event.mean()


def patch_score(generated: np.ndarray, target: np.ndarray) -> float:
    generated, target = np.asarray(generated), np.asarray(target)
    if generated.shape != target.shape:
        raise ValueError(f"shape mismatch: {generated.shape} vs {target.shape}")
    return float(np.mean((generated.astype(np.float64) - target) ** 2))


def patch_scores(generated: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-event MSE over the leading axis."""
    generated, target = np.asarray(generated), np.asarray(target)
    if generated.shape != target.shape:
        raise ValueError(f"shape mismatch: {generated.shape} vs {target.shape}")
    d = generated.astype(np.float64) - target
    return (d * d).reshape(len(d), -1).mean(axis=1)


class ArchiveCompletionDataset(Dataset):
    """Lazily reads (input, target) tensors of one IE type from an event archive."""

    def __init__(self, archive: EventArchive, kind: str, ie_type: int):
        if kind == "motion" and archive.flows is None:
            raise ValueError("motion completion needs an archive with flow cubes")
        self.archive, self.kind, self.ie_type = archive, kind, ie_type
        self._keep = [k for k in range(archive.cfg.depth) if k != ie_type - 1]

    def __len__(self) -> int:
        return len(self.archive)

    def __getitem__(self, k: int):
        cube = np.asarray(self.archive.cubes[k])
        x = pack_context(cube[self._keep])
        src = cube if self.kind == "appearance" else self.archive.flows[k]
        y = pack_target(src[self.ie_type - 1])
        return torch.from_numpy(x), torch.from_numpy(y)


def samples_to_dataset(samples: Iterable[tuple[IncompleteEvent, np.ndarray]],
                       spec: CompletionModelSpec) -> TensorDataset:
    xs, ys = [], []
    for ie, target in samples:
        if ie.erased_index != spec.ie_type:
            raise ValueError(f"type-{ie.erased_index} sample for a type-{spec.ie_type} model")
        if target.shape[-1] != spec.out_channels:
            raise ValueError(f"{spec.kind} model needs {spec.out_channels}-channel targets")
        xs.append(pack_context(ie.context))
        ys.append(pack_target(target))
    if not xs:
        raise TrainingError("empty training stream")
    return TensorDataset(torch.from_numpy(np.stack(xs)), torch.from_numpy(np.stack(ys)))


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def train(model: CompletionNet, samples, cfg: TrainConfig) -> TrainResult:
    """Fit ``model`` with Adam on ``samples``.

    ``samples`` is a torch ``Dataset`` of (input, target) tensors or an iterable of
    ``(IncompleteEvent, target)`` pairs.
    """
    dataset = samples if isinstance(samples, Dataset) else samples_to_dataset(samples, model.spec)
    if len(dataset) == 0:
        raise TrainingError("empty training stream")

    device = torch.device(cfg.device)
    model.to(device).train()
    gen = torch.Generator().manual_seed(cfg.seed)
    loader = DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True, generator=gen)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    result = TrainResult()
    step = 0
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for x, y in loader:
            x, y = x.to(device), y.to(device)
            loss = completion_loss(model(x), y, cfg.p_norm, cfg.reduction)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss.item()} at epoch {epoch + 1}, step {step + 1} "
                    f"({model.spec.kind} type {model.spec.ie_type}); lower the learning rate"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            value = loss.item()
            result.step_losses.append(value)
            total += value * len(x)
            count += len(x)
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        result.epoch_losses.append(total / count)
        log.info("%s type %d epoch %d loss %.6g", model.spec.kind, model.spec.ie_type,
                 epoch + 1, result.epoch_losses[-1])
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    model.eval()
    return result


def save_checkpoint(path: str | Path, model: CompletionNet, result: TrainResult | None = None,
                    train_cfg: TrainConfig | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "spec": model.spec.to_dict(),
        "state_dict": model.state_dict(),
        "epoch_losses": result.epoch_losses if result else [],
        "train_config": asdict(train_cfg) if train_cfg else None,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[CompletionNet, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    spec = CompletionModelSpec.from_dict(payload["spec"])
    model = CompletionNet(spec)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def checkpoint_name(dataset: str, kind: str, ie_type: int) -> str:
    return f"{dataset}_{kind}_type{ie_type}.pt"


def write_run_metadata(path: str | Path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, default=str) + "\n")
