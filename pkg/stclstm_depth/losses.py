"""
MÓDULO DE PÉRDIDAS ESPACIALES


PROPÓSITO:
Pérdida espacial de tres términos y objetivo combinado con la pérdida temporal:

    L_spatial = l_depth + λ·l_grad + μ·l_normal
    L         = L_spatial + α·L_temporal

TÉRMINOS:
- l_depth: media de ln(|d - g| + 1) sobre los píxeles válidos
- l_grad: la misma función aplicada a las derivadas en x e y
- l_normal: 1 - coseno entre las normales [-∇x, -∇y, 1] de d y g

Las derivadas son diferencias hacia adelante con borde replicado (la última
fila/columna tiene derivada cero). Un píxel cuenta para l_grad y l_normal
solo si él y sus vecinos hacia adelante son válidos.

Todas las funciones trabajan sobre tensores (..., H, W) y admiten autograd.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
import torch

from .errors import DegenerateInputError, PreconditionError


@dataclass(frozen=True)
class SpatialLossConfig:
    """λ (lambda_grad), μ (mu_normal), α (alpha) y ε de las normales."""
    lambda_grad: float = 1.0
    mu_normal: float = 1.0
    alpha: float = 0.1
    eps_normal: float = 1e-8

    def __post_init__(self) -> None:
        for name in ("lambda_grad", "mu_normal", "alpha", "eps_normal"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise PreconditionError(name, f"debe ser finito y >= 0, recibido {value}")


class SpatialLossTerms(NamedTuple):
    depth: torch.Tensor
    grad: torch.Tensor
    normal: torch.Tensor
    total: torch.Tensor


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x)


def _check_pair(d: torch.Tensor, g: torch.Tensor, mask: torch.Tensor, min_hw: int = 1) -> None:
    if d.shape != g.shape:
        raise PreconditionError("g", f"forma {tuple(g.shape)} distinta de d {tuple(d.shape)}")
    if mask.shape != d.shape:
        raise PreconditionError("mask", f"forma {tuple(mask.shape)} distinta de d {tuple(d.shape)}")
    if d.dim() < 2 or d.shape[-1] < min_hw or d.shape[-2] < min_hw:
        raise PreconditionError("d", f"se requiere al menos {min_hw}x{min_hw}, recibido {tuple(d.shape)}")


def masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    count = mask.sum()
    if int(count) == 0:
        raise DegenerateInputError("la máscara no tiene píxeles válidos")
    return torch.where(mask, values, torch.zeros_like(values)).sum() / count


def log_l1(x, y) -> torch.Tensor:
    """ln(|x - y| + 1), elemento a elemento."""
    x, y = _as_tensor(x), _as_tensor(y)
    return torch.log(torch.abs(x - y) + 1.0)


def forward_gradients(d: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Diferencias hacia adelante (∇x, ∇y) con borde replicado."""
    gx = torch.zeros_like(d)
    gy = torch.zeros_like(d)
    gx[..., :, :-1] = d[..., :, 1:] - d[..., :, :-1]
    gy[..., :-1, :] = d[..., 1:, :] - d[..., :-1, :]
    return gx, gy


def gradient_mask(mask: torch.Tensor) -> torch.Tensor:
    """Válido si el píxel y sus vecinos hacia adelante (o él mismo en el borde) lo son."""
    right = torch.cat([mask[..., :, 1:], mask[..., :, -1:]], dim=-1)
    down = torch.cat([mask[..., 1:, :], mask[..., -1:, :]], dim=-2)
    return mask & right & down


def per_pixel_depth_terms(d, g) -> torch.Tensor:
    return log_l1(d, g)


def depth_loss(d, g, mask) -> torch.Tensor:
    d, g, mask = _as_tensor(d), _as_tensor(g), _as_tensor(mask).bool()
    _check_pair(d, g, mask)
    return masked_mean(log_l1(d, g), mask)


def grad_loss(d, g, mask) -> torch.Tensor:
    d, g, mask = _as_tensor(d), _as_tensor(g), _as_tensor(mask).bool()
    _check_pair(d, g, mask, min_hw=2)
    dx, dy = forward_gradients(d)
    gx, gy = forward_gradients(g)
    per_pixel = log_l1(dx, gx) + log_l1(dy, gy)
    return masked_mean(per_pixel, gradient_mask(mask))


def normal_loss(d, g, mask, eps: float = 1e-8) -> torch.Tensor:
    d, g, mask = _as_tensor(d), _as_tensor(g), _as_tensor(mask).bool()
    _check_pair(d, g, mask, min_hw=2)
    dx, dy = forward_gradients(d)
    gx, gy = forward_gradients(g)
    # η = [-∇x, -∇y, 1]; los signos se cancelan en el producto punto
    dot = dx * gx + dy * gy + 1.0
    norm_d = torch.sqrt(dx * dx + dy * dy + 1.0 + eps)
    norm_g = torch.sqrt(gx * gx + gy * gy + 1.0 + eps)
    per_pixel = (1.0 - dot / (norm_d * norm_g)).clamp_min(0.0)
    # Normales idénticas: coseno exactamente 1
    same = (dx == gx) & (dy == gy)
    per_pixel = torch.where(same, torch.zeros_like(per_pixel), per_pixel)
    return masked_mean(per_pixel, gradient_mask(mask))


def spatial_loss_terms(d, g, mask, config: SpatialLossConfig = SpatialLossConfig()) -> SpatialLossTerms:
    l_depth = depth_loss(d, g, mask)
    l_grad = grad_loss(d, g, mask)
    l_normal = normal_loss(d, g, mask, config.eps_normal)
    total = l_depth + config.lambda_grad * l_grad + config.mu_normal * l_normal
    return SpatialLossTerms(l_depth, l_grad, l_normal, total)


def spatial_loss(d, g, mask, config: SpatialLossConfig = SpatialLossConfig()) -> torch.Tensor:
    return spatial_loss_terms(d, g, mask, config).total


def total_loss(spatial, temporal, config: SpatialLossConfig = SpatialLossConfig()):
    """L = L_spatial + α·L_temporal."""
    return spatial + config.alpha * temporal
