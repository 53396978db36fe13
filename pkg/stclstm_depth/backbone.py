"""
================================================================================
Archivo: backbone.py
--------------------------------------------------------------------------------
Extracción de características espaciales por frame: encoder, decoder con
módulos de up-projection y fusión de características multiescala (MFF).
Produce los mapas f^t que consume la CLSTM.
================================================================================

Estructura:
    frames (N, 3, H, W)
      -> 4 etapas del encoder (cada una divide la resolución a la mitad)
      -> puente 1x1 + 4 up-projections (las primeras duplican la resolución,
         las últimas solo reducen canales, hasta llegar a H / output_stride)
      -> MFF: cada etapa del encoder se proyecta a 16 canales, se lleva a la
         resolución del decoder, se concatena y una convolución fusiona a c
    features (N, c, H / output_stride, W / output_stride)

Ejemplo de uso:
    cfg = BackboneConfig.from_preset("tiny")
    net = init_backbone(cfg, seed=0)
    feats = net(torch.rand(2, 3, 64, 64))      # (2, 64, 16, 16)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import PreconditionError

MFF_CHANNELS = 16
INPUT_MULTIPLE = 16

PRESETS: Dict[str, Tuple[Tuple[int, int, int, int], int, int]] = {
    "tiny": ((16, 32, 64, 128), 64, 4),
    "small": ((32, 64, 128, 256), 128, 4),
}


@dataclass(frozen=True)
class BackboneConfig:
    """
    Configuración del extractor espacial.

    encoder_channels: canales de salida de las 4 etapas (no decrecientes)
    feature_channels: c, canales de f^t (>= 16)
    output_stride: reducción espacial de f^t respecto de la entrada (2 o 4)
    """
    preset: str = "tiny"
    encoder_channels: Tuple[int, int, int, int] = (16, 32, 64, 128)
    feature_channels: int = 64
    output_stride: int = 4

    def __post_init__(self) -> None:
        self.validate()

    @classmethod
    def from_preset(cls, name: str) -> "BackboneConfig":
        if name not in PRESETS:
            raise PreconditionError("preset", f"preset desconocido '{name}' (opciones: {sorted(PRESETS)})")
        enc, c, stride = PRESETS[name]
        return cls(preset=name, encoder_channels=enc, feature_channels=c, output_stride=stride)

    def validate(self) -> None:
        enc = tuple(self.encoder_channels)
        if len(enc) != 4:
            raise PreconditionError("encoder_channels", f"se esperan 4 etapas, hay {len(enc)}")
        if any(b < a for a, b in zip(enc, enc[1:])) or enc[0] < 1:
            raise PreconditionError("encoder_channels", f"deben ser no decrecientes y positivos: {enc}")
        if enc[-1] % 16:
            raise PreconditionError("encoder_channels", f"la última etapa debe ser múltiplo de 16: {enc[-1]}")
        if self.feature_channels < 16:
            raise PreconditionError("feature_channels", f"c debe ser >= 16, recibido {self.feature_channels}")
        if self.output_stride not in (2, 4):
            raise PreconditionError("output_stride", f"debe ser 2 o 4, recibido {self.output_stride}")

    @property
    def upsampling_steps(self) -> int:
        # Desde 1/16 hasta 1/output_stride
        return int(math.log2(INPUT_MULTIPLE // self.output_stride))

    @property
    def decoder_channels(self) -> List[int]:
        top = self.encoder_channels[-1]
        return [top // 2, top // 4, top // 8, top // 16]


@dataclass
class FeatureMap:
    """Activaciones de un frame: values (c, h, w) y el índice del frame de origen."""
    values: torch.Tensor
    source_frame: int


def conv_bn_relu(cin: int, cout: int, kernel: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class EncoderStage(nn.Sequential):
    """Conv 3x3 con stride 2 + conv 3x3, ambas con BN y ReLU."""

    def __init__(self, cin: int, cout: int) -> None:
        super().__init__(conv_bn_relu(cin, cout, 3, stride=2), conv_bn_relu(cout, cout, 3))


class UpProjection(nn.Module):
    """Upsample por vecino más cercano (factor `scale`) seguido de conv 5x5, BN y ReLU."""

    def __init__(self, cin: int, cout: int, scale: int) -> None:
        super().__init__()
        self.scale = scale
        self.body = conv_bn_relu(cin, cout, 5)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.scale > 1:
            x = F.interpolate(x, scale_factor=self.scale, mode="nearest")
        return self.body(x)


class MultiScaleFusion(nn.Module):
    """Proyecta cada escala del encoder a 16 canales, la reescala y fusiona con el decoder."""

    def __init__(self, encoder_channels: Tuple[int, ...], decoder_out: int, feature_channels: int) -> None:
        super().__init__()
        self.projections = nn.ModuleList(conv_bn_relu(ch, MFF_CHANNELS, 1) for ch in encoder_channels)
        self.fuse = nn.Conv2d(decoder_out + MFF_CHANNELS * len(encoder_channels), feature_channels, 3, padding=1)

    def forward(self, skips: List[torch.Tensor], decoded: torch.Tensor) -> torch.Tensor:
        size = decoded.shape[-2:]
        parts = [decoded]
        for proj, skip in zip(self.projections, skips):
            y = proj(skip)
            if y.shape[-2:] != size:
                y = F.interpolate(y, size=size, mode="bilinear", align_corners=False)
            parts.append(y)
        return F.relu(self.fuse(torch.cat(parts, dim=1)))


class Backbone(nn.Module):
    """Encoder + decoder + MFF; forward: (N, 3, H, W) -> (N, c, H/s, W/s)."""

    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        self.config = config
        enc = config.encoder_channels
        self.encoder = nn.ModuleList()
        cin = 3
        for ch in enc:
            self.encoder.append(EncoderStage(cin, ch))
            cin = ch
        self.bridge = conv_bn_relu(enc[-1], enc[-1], 1)
        dec = config.decoder_channels
        self.decoder = nn.ModuleList()
        cin = enc[-1]
        for i, ch in enumerate(dec):
            scale = 2 if i < config.upsampling_steps else 1
            self.decoder.append(UpProjection(cin, ch, scale))
            cin = ch
        self.mff = MultiScaleFusion(enc, dec[-1], config.feature_channels)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.dim() != 4 or frames.shape[1] != 3:
            raise PreconditionError("frames", f"se espera (N, 3, H, W), recibido {tuple(frames.shape)}")
        h, w = frames.shape[-2:]
        if h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
            raise PreconditionError("frames", f"alto y ancho deben ser divisibles por {INPUT_MULTIPLE}: {(h, w)}")
        skips = []
        x = frames
        for stage in self.encoder:
            x = stage(x)
            skips.append(x)
        x = self.bridge(x)
        for up in self.decoder:
            x = up(x)
        return self.mff(skips, x)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def initialize_weights(module: nn.Module) -> None:
    """Kaiming (fan_in, ReLU) para convoluciones y capas lineales, sesgos en cero."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm3d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def init_backbone(config: BackboneConfig, seed: int) -> Backbone:
    """Backbone con inicialización determinista dada la semilla."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = Backbone(config)
        initialize_weights(net)
    return net


def extract_features(frames: torch.Tensor, backbone: Backbone, first_frame: int = 0) -> List[FeatureMap]:
    """Aplica el backbone a un lote de frames y devuelve un FeatureMap por frame."""
    values = backbone(frames)
    return [FeatureMap(values[i], first_frame + i) for i in range(values.shape[0])]
