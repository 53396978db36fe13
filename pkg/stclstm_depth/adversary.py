"""
================================================================================
Archivo: adversary.py
--------------------------------------------------------------------------------
Discriminador 3D (convoluciones espacio-temporales) sobre clips RGB-D, mezcla
aleatoria de frames de ground truth y las pérdidas adversarias.
================================================================================

Convención de etiquetas: D(clip) es la probabilidad de que la profundidad del
clip sea REAL (ground truth).

    discriminator_loss = -log D(real) - log(1 - D(fake))
    generator_temporal_loss = -log D(fake)          (forma no saturante)

Estructura del discriminador:
    4 bloques [Conv3d -> BatchNorm3d -> ReLU -> MaxPool3d]
    la primera conv y todos los max-pool tienen stride 2 (en el tiempo solo
    mientras la longitud temporal sea >= 2)
    -> promedio global -> capa lineal -> logit
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import initialize_weights
from .errors import PreconditionError

MIN_SPATIAL = 32
REAL = "real"
FAKE = "fake"


@dataclass(frozen=True)
class DiscriminatorConfig:
    """
    block_channels: canales de los 4 bloques
    temporal_kernel: tamaño temporal del kernel 3D (impar)
    mix_prob: probabilidad p de sustituir un frame generado por el real
    max_depth: normalización del canal de profundidad a [0, 1]
    """
    block_channels: Tuple[int, int, int, int] = (16, 32, 64, 128)
    temporal_kernel: int = 3
    mix_prob: float = 0.25
    max_depth: float = 10.0

    def __post_init__(self) -> None:
        if len(self.block_channels) != 4:
            raise PreconditionError("block_channels", f"se requieren exactamente 4 bloques, hay {len(self.block_channels)}")
        if any(c < 1 for c in self.block_channels):
            raise PreconditionError("block_channels", f"canales inválidos {self.block_channels}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise PreconditionError("temporal_kernel", f"debe ser impar y >= 1, recibido {self.temporal_kernel}")
        if not 0.0 <= self.mix_prob <= 1.0:
            raise PreconditionError("mix_prob", f"debe estar en [0, 1], recibido {self.mix_prob}")
        if self.max_depth <= 0:
            raise PreconditionError("max_depth", f"debe ser positivo, recibido {self.max_depth}")


@dataclass
class RgbdClip:
    """values (B, n, 4, H, W): RGB en [0, 1] y profundidad normalizada; label 'real' o 'fake'."""
    values: torch.Tensor
    label: str = FAKE

    def __post_init__(self) -> None:
        if self.values.dim() != 5 or self.values.shape[2] != 4:
            raise PreconditionError("values", f"se espera (B, n, 4, H, W), recibido {tuple(self.values.shape)}")
        if self.values.shape[1] < 2:
            raise PreconditionError("values", "un clip necesita al menos 2 frames")
        if self.label not in (REAL, FAKE):
            raise PreconditionError("label", f"etiqueta desconocida '{self.label}'")

    def volume(self) -> torch.Tensor:
        """Formato de Conv3d: (B, 4, n, H, W)."""
        return self.values.permute(0, 2, 1, 3, 4)


def make_rgbd_clip(
    rgb: torch.Tensor,
    depth: torch.Tensor,
    max_depth: float = 10.0,
    label: str = FAKE,
    mask: Optional[torch.Tensor] = None,
) -> RgbdClip:
    """
    Concatena RGB (B, n, 3, H, W) y profundidad (B, n, 1, H, W) normalizada por
    max_depth. Con `mask` la profundidad vale 0 en los píxeles no válidos, de
    modo que clips reales y generados comparten el mismo patrón de ceros.
    """
    if rgb.shape[:2] != depth.shape[:2] or rgb.shape[-2:] != depth.shape[-2:]:
        raise PreconditionError("depth", f"forma {tuple(depth.shape)} incompatible con rgb {tuple(rgb.shape)}")
    if mask is not None:
        if mask.shape != depth.shape:
            raise PreconditionError("mask", f"forma {tuple(mask.shape)} distinta de depth {tuple(depth.shape)}")
        depth = torch.where(mask, depth, torch.zeros_like(depth))
    depth_n = (depth / max_depth).clamp(0.0, 1.0)
    return RgbdClip(torch.cat([rgb, depth_n], dim=2), label)


class Block3d(nn.Module):
    """Conv3d -> BN -> ReLU -> MaxPool; los strides temporales se ajustan a la longitud de entrada."""

    def __init__(self, cin: int, cout: int, temporal_kernel: int, conv_stride: int) -> None:
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, (temporal_kernel, 3, 3), padding=(temporal_kernel // 2, 1, 1), bias=False)
        self.bn = nn.BatchNorm3d(cout)
        self.conv_stride = conv_stride

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.conv_stride
        st = s if x.shape[2] >= 2 else 1
        x = F.conv3d(x, self.conv.weight, None, stride=(st, s, s), padding=self.conv.padding)
        x = F.relu(self.bn(x))
        kt = 2 if x.shape[2] >= 2 else 1
        return F.max_pool3d(x, kernel_size=(kt, 2, 2), stride=(kt, 2, 2))


class Discriminator3D(nn.Module):
    """volume (B, 4, n, H, W) -> logits (B,)."""

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()) -> None:
        super().__init__()
        self.config = config
        blocks = []
        cin = 4
        for i, ch in enumerate(config.block_channels):
            blocks.append(Block3d(cin, ch, config.temporal_kernel, conv_stride=2 if i == 0 else 1))
            cin = ch
        self.blocks = nn.ModuleList(blocks)
        self.fc = nn.Linear(cin, 1)

    def forward(self, volume: torch.Tensor) -> torch.Tensor:
        if volume.dim() != 5 or volume.shape[1] != 4:
            raise PreconditionError("volume", f"se espera (B, 4, n, H, W), recibido {tuple(volume.shape)}")
        h, w = volume.shape[-2:]
        if h < MIN_SPATIAL or w < MIN_SPATIAL:
            raise PreconditionError(
                "clip", f"{(h, w)} no sobrevive a 5 reducciones de stride 2; mínimo {MIN_SPATIAL}x{MIN_SPATIAL}"
            )
        x = volume
        for block in self.blocks:
            x = block(x)
        x = x.mean(dim=(2, 3, 4))
        return self.fc(x).squeeze(-1)


def build_discriminator(config: DiscriminatorConfig, seed: int) -> Discriminator3D:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = Discriminator3D(config)
        initialize_weights(net)
    return net


def discriminate(clip: RgbdClip, params: Discriminator3D) -> torch.Tensor:
    """Probabilidad (B,) de que el clip sea real."""
    return torch.sigmoid(params(clip.volume()))


def mix_ground_truth(
    fake_depths: torch.Tensor,
    real_depths: torch.Tensor,
    p: float,
    seed: int,
    frame_dims: Optional[int] = None,
    return_mask: bool = False,
):
    """
    Sustituye cada frame generado por el real con probabilidad p, de forma
    independiente por frame y determinista dada la semilla.

    frame_dims: número de dimensiones iniciales que indexan frames; por
    defecto 2 para (B, n, 1, H, W) y 1 para (n, H, W).
    """
    if fake_depths.shape != real_depths.shape:
        raise PreconditionError("real_depths", f"forma {tuple(real_depths.shape)} distinta de {tuple(fake_depths.shape)}")
    if not 0.0 <= p <= 1.0:
        raise PreconditionError("p", f"debe estar en [0, 1], recibido {p}")
    if frame_dims is None:
        frame_dims = 2 if fake_depths.dim() == 5 else 1
    generator = torch.Generator().manual_seed(seed)
    draws = torch.rand(tuple(fake_depths.shape[:frame_dims]), generator=generator) < p
    mask = draws.to(fake_depths.device).reshape(draws.shape + (1,) * (fake_depths.dim() - frame_dims))
    mixed = torch.where(mask, real_depths, fake_depths)
    return (mixed, draws) if return_mask else mixed


def discriminator_loss(d_real, d_fake) -> torch.Tensor:
    """-log D(real) - log(1 - D(fake)), promediado sobre el lote."""
    d_real = torch.as_tensor(d_real)
    d_fake = torch.as_tensor(d_fake)
    return (-torch.log(d_real) - torch.log1p(-d_fake)).mean()


def generator_temporal_loss(d_fake) -> torch.Tensor:
    """-log D(fake): la pérdida temporal L_temporal."""
    return (-torch.log(torch.as_tensor(d_fake))).mean()


def discriminator_loss_logits(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    # Igual a discriminator_loss(σ(real), σ(fake)) sin saturar en float32
    return (-F.logsigmoid(real_logits) - F.logsigmoid(-fake_logits)).mean()


def generator_temporal_loss_logits(fake_logits: torch.Tensor) -> torch.Tensor:
    return (-F.logsigmoid(fake_logits)).mean()
