"""Multi-task encoder-decoder with gesture, handedness and keypoint heads.

Shared trunk: four conv/BN/ReLU/max-pool stages (100 -> 50 -> 25 -> 12 -> 6),
then two stride-2 up-convolutions back to 12 and 25 with skip concatenation
of the matching encoder feature maps. The gesture and handedness heads share
two convolutions; the keypoint head emits a 6-channel 50x50 sigmoid map.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Tuple

import torch
from torch import nn

from .domain import GestureVocabulary

CHECKPOINT_SCHEMA = 1


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 1
    input_size: int = 100
    down_widths: Tuple[int, int, int, int] = (64, 128, 256, 512)
    up_widths: Tuple[int, int] = (256, 128)
    shared_widths: Tuple[int, int] = (128, 128)
    gesture_hidden: int = 256
    keypoint_widths: Tuple[int, ...] = (256, 256, 128, 64)
    keypoint_up_width: int = 64
    keypoint_tail_widths: Tuple[int, int] = (32, 6)
    n_gestures: int = 10
    # initial scale of the default conv weights; BN makes the convs scale
    # invariant, so a smaller start norm means a larger effective step size
    trunk_init_scale: float = 0.1
    keypoint_init_scale: float = 0.01
    # heatmap logits start near sigmoid(-4), close to the mostly-zero targets
    heatmap_bias_init: float = -4.0
    parameter_budget: Optional[Tuple[float, float]] = (5.0e6, 7.5e6)

    def __post_init__(self):
        for name in ("down_widths", "up_widths", "shared_widths", "keypoint_widths",
                     "keypoint_tail_widths"):
            value = tuple(int(v) for v in getattr(self, name))
            if any(v <= 0 for v in value):
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, value)
        if len(self.down_widths) != 4 or len(self.up_widths) != 2 or len(self.shared_widths) != 2:
            raise ValueError("trunk needs 4 down widths, 2 up widths and 2 shared widths")
        if len(self.keypoint_widths) != 4 or len(self.keypoint_tail_widths) != 2:
            raise ValueError("keypoint head needs 4 conv widths and 2 tail widths")
        if self.keypoint_tail_widths[-1] != 6:
            raise ValueError("keypoint head must end with 6 channels")
        if self.trunk_init_scale <= 0 or self.keypoint_init_scale <= 0:
            raise ValueError("init scales must be positive")
        if self.input_size != 100:
            raise ValueError("the network expects 100x100 inputs")
        if self.parameter_budget is not None:
            object.__setattr__(self, "parameter_budget", tuple(float(v) for v in self.parameter_budget))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def conv_bn_relu(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


def upconv_bn_relu(cin: int, cout: int, padding: int, output_padding: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 3, stride=2, padding=padding, output_padding=output_padding),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ModelOutputs(NamedTuple):
    gesture_logits: torch.Tensor
    handedness_logit: torch.Tensor
    heatmap_logits: torch.Tensor

    @property
    def gesture_probs(self) -> torch.Tensor:
        return torch.softmax(self.gesture_logits, dim=1)

    @property
    def handedness_prob(self) -> torch.Tensor:
        return torch.sigmoid(self.handedness_logit)

    @property
    def heatmaps(self) -> torch.Tensor:
        return torch.sigmoid(self.heatmap_logits)


class MultiTaskHandNet(nn.Module):
    """Inputs are ``(N, 1, 100, 100)``; channel-last ``(N, 100, 100, 1)`` is also accepted.

    ``forward`` returns pre-activation logits; the probability views live on
    :class:`ModelOutputs`.
    """

    def __init__(self, cfg: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.cfg = cfg
        d1, d2, d3, d4 = cfg.down_widths
        u1, u2 = cfg.up_widths
        self.enc1 = conv_bn_relu(cfg.in_channels, d1)
        self.enc2 = conv_bn_relu(d1, d2)
        self.enc3 = conv_bn_relu(d2, d3)
        self.enc4 = conv_bn_relu(d3, d4)
        self.pool = nn.MaxPool2d(2)
        # 6 -> 12 and 12 -> 25 with kernel 3, stride 2
        self.up1 = upconv_bn_relu(d4, u1, padding=1, output_padding=1)
        self.up2 = upconv_bn_relu(u1 + d4, u2, padding=0, output_padding=0)
        trunk_out = u2 + d3

        s1, s2 = cfg.shared_widths
        self.shared = nn.Sequential(conv_bn_relu(trunk_out, s1), conv_bn_relu(s1, s2))
        # global average pool, normalized once and read by both classifier heads
        self.pooled = nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.BatchNorm1d(s2))
        self.gesture_head = nn.Sequential(
            nn.Linear(s2, cfg.gesture_hidden), nn.ReLU(inplace=True),
            nn.Linear(cfg.gesture_hidden, cfg.n_gestures),
        )
        self.handedness_head = nn.Linear(s2, 1)

        k = cfg.keypoint_widths
        t1, t2 = cfg.keypoint_tail_widths
        self.keypoint_convs = nn.Sequential(
            conv_bn_relu(trunk_out, k[0]), conv_bn_relu(k[0], k[1]),
            conv_bn_relu(k[1], k[2]), conv_bn_relu(k[2], k[3]),
        )
        self.keypoint_up = upconv_bn_relu(k[3], cfg.keypoint_up_width, padding=1, output_padding=1)
        self.keypoint_tail = nn.Sequential(
            conv_bn_relu(cfg.keypoint_up_width, t1),
            nn.Conv2d(t1, t2, 3, padding=1),
            nn.BatchNorm2d(t2),
        )
        self._init_weights()

    def _init_weights(self) -> None:
        keypoint = {id(m) for part in (self.keypoint_convs, self.keypoint_up, self.keypoint_tail)
                    for m in part.modules()}
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                scale = self.cfg.keypoint_init_scale if id(m) in keypoint else self.cfg.trunk_init_scale
                with torch.no_grad():
                    m.weight.mul_(scale)
        nn.init.constant_(self.keypoint_tail[-1].bias, self.cfg.heatmap_bias_init)

    def forward(self, x: torch.Tensor) -> ModelOutputs:
        if x.ndim == 4 and x.shape[1] != self.cfg.in_channels and x.shape[-1] == self.cfg.in_channels:
            x = x.permute(0, 3, 1, 2)
        size = self.cfg.input_size
        if x.ndim != 4 or tuple(x.shape[1:]) != (self.cfg.in_channels, size, size):
            raise ValueError(f"expected input of shape (N, {self.cfg.in_channels}, {size}, {size}), "
                             f"got {tuple(x.shape)}")
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))            # 25x25
        e4 = self.enc4(self.pool(e3))            # 12x12
        bottom = self.pool(e4)                   # 6x6
        t = torch.cat([self.up1(bottom), e4], dim=1)
        t = torch.cat([self.up2(t), e3], dim=1)  # 25x25

        pooled = self.pooled(self.shared(t))
        kp = self.keypoint_tail(self.keypoint_up(self.keypoint_convs(t)))
        return ModelOutputs(self.gesture_head(pooled), self.handedness_head(pooled), kp)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build(cfg: NetworkConfig = NetworkConfig()) -> MultiTaskHandNet:
    model = MultiTaskHandNet(cfg)
    if cfg.parameter_budget is not None:
        lo, hi = cfg.parameter_budget
        n = parameter_count(model)
        if not lo <= n <= hi:
            raise ValueError(f"parameter count {n:,} outside budget [{lo:,.0f}, {hi:,.0f}]")
    return model


@torch.no_grad()
def forward(model: MultiTaskHandNet, batch) -> Dict[str, torch.Tensor]:
    """Inference-mode forward pass returning probabilities."""
    model.eval()
    x = torch.as_tensor(batch, dtype=next(model.parameters()).dtype)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("inputs must lie in [0, 1]")
    out = model(x)
    return {"gesture_probs": out.gesture_probs, "handedness_prob": out.handedness_prob,
            "heatmaps": out.heatmaps}


def save_checkpoint(model: MultiTaskHandNet, path, vocab: GestureVocabulary, extra: Optional[dict] = None) -> Path:
    """Write ``path`` (torch state dict) and ``path.json`` (config sidecar)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    sidecar = {
        "schema_version": CHECKPOINT_SCHEMA,
        "network": model.cfg.to_dict(),
        "vocabulary": vocab.to_dict(),
        **(extra or {}),
    }
    Path(f"{path}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> Tuple[MultiTaskHandNet, GestureVocabulary, dict]:
    path = Path(path)
    sidecar_path = Path(f"{path}.json")
    if not path.is_file() or not sidecar_path.is_file():
        raise CheckpointError(f"checkpoint {path} or its sidecar is missing")
    sidecar = json.loads(sidecar_path.read_text())
    version = sidecar.get("schema_version")
    if version != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"checkpoint schema version {version} is not supported "
                              f"(expected {CHECKPOINT_SCHEMA})")
    cfg = NetworkConfig.from_dict(sidecar["network"])
    model = MultiTaskHandNet(cfg)
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.eval()
    return model, GestureVocabulary.from_dict(sidecar["vocabulary"]), sidecar
