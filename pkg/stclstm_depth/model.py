"""
Red generadora completa: backbone por frame + cabeza temporal.

La cabeza es la ST-CLSTM (`use_clstm=True`) o la base 2D de tres
convoluciones (`use_clstm=False`, el "2DCNN" de la ablación).
"""

from __future__ import annotations

from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import INPUT_MULTIPLE, Backbone, BackboneConfig, initialize_weights
from .clstm import D_MIN, BaselineHead, ClstmParams
from .errors import PreconditionError


class DepthNet(nn.Module):
    """frames (B, n, 3, H, W) -> profundidades (B, n, 1, H, W)."""

    def __init__(self, backbone: Backbone, head: nn.Module) -> None:
        super().__init__()
        self.backbone = backbone
        self.head = head

    @property
    def head_kind(self) -> str:
        return self.head.kind

    @property
    def config(self) -> BackboneConfig:
        return self.backbone.config

    def features(self, frames: torch.Tensor) -> torch.Tensor:
        """Características por frame, (B, n, c, h, w); el backbone ve B·n frames juntos."""
        if frames.dim() != 5:
            raise PreconditionError("frames", f"se espera (B, n, 3, H, W), recibido {tuple(frames.shape)}")
        b, n = frames.shape[:2]
        return self.backbone(frames.flatten(0, 1)).unflatten(0, (b, n))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        size: Tuple[int, int] = tuple(frames.shape[-2:])
        return self.head(self.features(frames), size)


def build_head(config: BackboneConfig, use_clstm: bool, d_min: float = D_MIN) -> nn.Module:
    if use_clstm:
        return ClstmParams(config.feature_channels, d_min=d_min)
    return BaselineHead(config.feature_channels, d_min=d_min)


def build_depth_net(config: BackboneConfig, use_clstm: bool, seed: int, d_min: float = D_MIN) -> DepthNet:
    """Generador con inicialización determinista (misma semilla -> mismos pesos)."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = DepthNet(Backbone(config), build_head(config, use_clstm, d_min))
        initialize_weights(net)
    return net


def pad_to_multiple(frames: torch.Tensor, multiple: int = INPUT_MULTIPLE) -> torch.Tensor:
    """Rellena alto y ancho (replicando el borde) hasta múltiplos de `multiple`."""
    h, w = frames.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return frames
    lead = frames.shape[:-3]
    flat = frames.reshape((-1,) + tuple(frames.shape[-3:]))
    padded = F.pad(flat, (0, pw, 0, ph), mode="replicate")
    return padded.reshape(tuple(lead) + tuple(padded.shape[-3:]))


@torch.no_grad()
def predict_depths(net: DepthNet, frames: torch.Tensor) -> torch.Tensor:
    """Inferencia sobre (B, n, 3, H, W) de cualquier tamaño: rellena, predice y recorta."""
    net.eval()
    h, w = frames.shape[-2:]
    depth = net(pad_to_multiple(frames))
    return depth[..., :h, :w]
