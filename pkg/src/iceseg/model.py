"""Compact encoder-decoder CNN for per-pixel ice-type logits.

The encoder is the front of ResNet18 (7x7 stem, max-pool, first three
residual stages; output stride 16, 256 channels). The decoder is an atrous
spatial pyramid pooling head: parallel dilated convolutions plus a
global-pool branch, projected and classified at stride 16, then upsampled
bilinearly back to input resolution. At the default head width the network
carries about 4 M trainable parameters.

Checkpoints are a framework-neutral .npz tensor archive (name -> float32
data, batch-norm statistics included) with a JSON sidecar describing the
configuration and training provenance. ImageNet encoder initialization is
read from the same archive format.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "ModelConfig",
    "IceTypeNet",
    "CheckpointError",
    "IncompatibleWeightsError",
    "build_model",
    "count_parameters",
    "load_encoder_archive",
    "export_encoder_archive",
    "save_checkpoint",
    "load_checkpoint",
]

_STAGE_WIDTHS = (64, 128, 256, 512)


class CheckpointError(RuntimeError):
    pass


class IncompatibleWeightsError(CheckpointError):
    """Weight archive does not fit the model (missing name or wrong shape)."""


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    num_classes: int = 5
    encoder_stages: int = 3
    # 160-channel head keeps the encoder+decoder total near 4 M parameters;
    # the common 256-wide head would push it past 5 M.
    aspp_channels: int = 160
    aspp_rates: tuple[int, ...] = (1, 6, 12, 18)
    pretrained_encoder: str | None = None
    auto_pad: bool = True

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["aspp_rates"] = list(self.aspp_rates)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["aspp_rates"] = tuple(doc.get("aspp_rates", (1, 6, 12, 18)))
        return cls(**doc)


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResNetTrunk(nn.Module):
    """ResNet18 stem plus the first ``stages`` residual stages.

    Submodule names match the torchvision ResNet layout so ImageNet archives
    map one-to-one onto this trunk.
    """

    def __init__(self, in_channels: int = 3, stages: int = 3):
        super().__init__()
        if not 1 <= stages <= 4:
            raise ValueError(f"encoder_stages must be 1..4, got {stages}")
        self.conv1 = nn.Conv2d(in_channels, 64, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(64)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        in_ch = 64
        for index in range(stages):
            out_ch = _STAGE_WIDTHS[index]
            stride = 1 if index == 0 else 2
            layer = nn.Sequential(BasicBlock(in_ch, out_ch, stride), BasicBlock(out_ch, out_ch))
            self.add_module(f"layer{index + 1}", layer)
            in_ch = out_ch
        self.stages = stages
        self.out_channels = in_ch
        self.stride = 4 * 2 ** (stages - 1)

    def forward(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        for index in range(self.stages):
            x = getattr(self, f"layer{index + 1}")(x)
        return x


def _conv_bn_relu(in_ch: int, out_ch: int, kernel: int, dilation: int = 1) -> nn.Sequential:
    padding = 0 if kernel == 1 else dilation
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, padding=padding, dilation=dilation, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class ASPPHead(nn.Module):
    """Parallel dilated convolutions + global pooling, projected to one map.

    Rate 1 is a plain 1x1 convolution; other rates are 3x3 convolutions with
    the matching dilation.
    """

    def __init__(self, in_channels: int, channels: int, rates: tuple[int, ...]):
        super().__init__()
        self.branches = nn.ModuleList(
            _conv_bn_relu(in_channels, channels, 1 if rate == 1 else 3, dilation=rate)
            for rate in rates
        )
        # No norm on the pooled branch: its 1x1 statistics are batch-size and
        # image-scale dependent, which skews patch-trained models at
        # full-scene inference.
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_channels, channels, 1, bias=False),
            nn.ReLU(inplace=True),
        )
        self.project = _conv_bn_relu(channels * (len(rates) + 1), channels, 1)

    def forward(self, x):
        size = x.shape[-2:]
        feats = [branch(x) for branch in self.branches]
        pooled = F.interpolate(self.pool(x), size=size, mode="bilinear", align_corners=False)
        return self.project(torch.cat(feats + [pooled], dim=1))


class IceTypeNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = ResNetTrunk(config.in_channels, config.encoder_stages)
        self.head = ASPPHead(self.encoder.out_channels, config.aspp_channels, config.aspp_rates)
        self.classifier = nn.Conv2d(config.aspp_channels, config.num_classes, 1)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected input (B, {self.config.in_channels}, H, W), got {tuple(x.shape)}")
        height, width = x.shape[-2:]
        stride = self.encoder.stride
        pad_h, pad_w = -height % stride, -width % stride
        if pad_h or pad_w:
            if not self.config.auto_pad:
                raise ValueError(
                    f"spatial dims {height}x{width} not divisible by {stride} and auto_pad is off")
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
        logits = self.classifier(self.head(self.encoder(x)))
        logits = F.interpolate(logits, size=(height + pad_h, width + pad_w),
                               mode="bilinear", align_corners=False)
        return logits[..., :height, :width]


def build_model(config: ModelConfig | None = None, seed: int | None = None) -> IceTypeNet:
    """Build the network; optionally seed initialization and load encoder weights."""
    config = config or ModelConfig()
    if seed is not None:
        torch.manual_seed(seed)
    model = IceTypeNet(config)
    if config.pretrained_encoder:
        load_encoder_archive(model.encoder, config.pretrained_encoder)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def load_encoder_archive(encoder: ResNetTrunk, path) -> None:
    """Initialize the trunk from a name->array archive (e.g. ImageNet weights).

    Every parameter and batch-norm statistic of the trunk must be present
    under its own name with the exact shape; anything else is an error
    rather than a silent partial load.
    """
    path = Path(path)
    try:
        archive = np.load(path)
    except (OSError, ValueError) as exc:
        raise IncompatibleWeightsError(f"{path}: cannot read weight archive: {exc}") from exc
    state = {}
    for name, tensor in encoder.state_dict().items():
        if name.endswith("num_batches_tracked"):
            state[name] = tensor
            continue
        if name not in archive:
            raise IncompatibleWeightsError(f"{path}: archive is missing tensor {name!r}")
        array = archive[name]
        if tuple(array.shape) != tuple(tensor.shape):
            raise IncompatibleWeightsError(
                f"{path}: {name} has shape {tuple(array.shape)}, model needs {tuple(tensor.shape)}")
        state[name] = torch.as_tensor(np.asarray(array, dtype=np.float32))
    encoder.load_state_dict(state)


def export_encoder_archive(state_dict, path, stages: int = 3, in_channels: int = 3) -> None:
    """Write a trunk weight archive from a full ResNet18 state dict.

    Accepts our own trunk state dict or a torchvision ``resnet18`` one (the
    names coincide); stages beyond the trunk are dropped.
    """
    wanted = ResNetTrunk(in_channels, stages).state_dict()
    arrays = {}
    for name, tensor in wanted.items():
        if name.endswith("num_batches_tracked"):
            continue
        if name not in state_dict:
            raise IncompatibleWeightsError(f"source state dict is missing tensor {name!r}")
        source = state_dict[name]
        source = source.detach().cpu().numpy() if isinstance(source, torch.Tensor) else np.asarray(source)
        if tuple(source.shape) != tuple(tensor.shape):
            raise IncompatibleWeightsError(
                f"{name} has shape {tuple(source.shape)}, trunk needs {tuple(tensor.shape)}")
        arrays[name] = source.astype(np.float32)
    np.savez(path, **arrays)


def save_checkpoint(model: IceTypeNet, path, training_config: dict | None = None,
                    epoch: int | None = None, val_loss: float | None = None,
                    history: list | None = None, extra: dict | None = None) -> Path:
    """Write ``<path>.npz`` weights and a ``<path>.json`` sidecar; returns the npz path."""
    path = Path(path)
    if path.suffix == ".npz":
        path = path.with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, tensor in model.state_dict().items():
        array = tensor.detach().cpu().numpy()
        arrays[name] = array.astype(np.float32) if array.dtype == np.float64 else array
    np.savez(path.with_suffix(".npz"), **arrays)
    sidecar = {
        "model_config": model.config.to_dict(),
        "training_config": training_config,
        "epoch": epoch,
        "val_loss": val_loss,
        "metric_history": history,
        # Encoder batch-norm statistics follow the training data rather than
        # staying frozen at their pretraining values.
        "bn_statistics": "updated",
    }
    if extra:
        sidecar.update(extra)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path.with_suffix(".npz")


def load_checkpoint(path, device: str = "cpu") -> tuple[IceTypeNet, dict]:
    """Rebuild the model from a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    if path.suffix == ".npz":
        path = path.with_suffix("")
    npz_path, json_path = path.with_suffix(".npz"), path.with_suffix(".json")
    if not npz_path.exists() or not json_path.exists():
        raise CheckpointError(f"checkpoint {path} needs both {npz_path.name} and {json_path.name}")
    sidecar = json.loads(json_path.read_text())
    config = ModelConfig.from_dict({**sidecar["model_config"], "pretrained_encoder": None})
    model = IceTypeNet(config)
    archive = np.load(npz_path)
    state = {}
    for name, tensor in model.state_dict().items():
        if name not in archive:
            raise CheckpointError(f"{npz_path}: missing tensor {name!r}")
        array = archive[name]
        if tuple(array.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{npz_path}: {name} has shape {tuple(array.shape)}, model needs {tuple(tensor.shape)}")
        state[name] = torch.as_tensor(array).to(tensor.dtype)
    model.load_state_dict(state)
    model.to(device)
    model.eval()
    return model, sidecar
