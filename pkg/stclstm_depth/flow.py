"""
FLUJO ÓPTICO TV-L1


PROPÓSITO:
Flujo óptico denso para la métrica TMC. Implementa la iteración dual de
TV-L1 (umbralización del término de datos + proyección del dual de la
variación total) con pirámide gruesa-a-fina y warping.

ESQUEMA POR NIVEL:
    para cada warp:
        I1w = I1(x + u0), gradientes de I1 deformados, rho_c
        repetir hasta `inner_iterations` o cambio medio < ε²:
            v = umbral(u)                       paso del término L1
            u = v + θ·div(p)                    paso primal
            p = (p + τ/θ·∇u) / (1 + τ/θ·|∇u|)   paso dual
        filtro de mediana sobre u (opcional)

Las intensidades de entrada están en [0, 1]; internamente se escalan a
[0, 255], la convención con la que λ = 0.15 tiene sentido.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Tuple

import cv2
import numpy as np

from .errors import PreconditionError

logger = logging.getLogger(__name__)

INTENSITY_SCALE = 255.0
MIN_LEVEL_SIZE = 8


@dataclass(frozen=True)
class FlowParams:
    levels: int = 3
    scale: float = 0.5
    warps: int = 5
    inner_iterations: int = 50
    lam: float = 0.15
    theta: float = 0.3
    tau: float = 0.25
    epsilon: float = 0.01
    median_filter: bool = True

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise PreconditionError("levels", f"debe ser >= 1, recibido {self.levels}")
        if not 0.0 < self.scale < 1.0:
            raise PreconditionError("scale", f"debe estar en (0, 1), recibido {self.scale}")
        if self.warps < 1 or self.inner_iterations < 1:
            raise PreconditionError("warps", "warps e inner_iterations deben ser >= 1")
        if self.lam <= 0 or self.theta <= 0 or self.tau <= 0 or self.epsilon <= 0:
            raise PreconditionError("lam", "lam, theta, tau y epsilon deben ser positivos")


@dataclass
class FlowField:
    """Desplazamiento (píxeles/frame) u horizontal y v vertical, más la bandera de convergencia."""
    u: np.ndarray
    v: np.ndarray
    converged: bool = True

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def max_abs(self) -> float:
        return float(max(np.abs(self.u).max(initial=0.0), np.abs(self.v).max(initial=0.0)))


def forward_gradient(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    dx = np.zeros_like(m)
    dy = np.zeros_like(m)
    dx[:, :-1] = m[:, 1:] - m[:, :-1]
    dy[:-1, :] = m[1:, :] - m[:-1, :]
    return dx, dy


def divergence(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Adjunto negativo de forward_gradient."""
    div = np.empty_like(p1)
    div[:, 0] = p1[:, 0]
    div[:, 1:] = p1[:, 1:] - p1[:, :-1]
    div[0, :] += p2[0, :]
    div[1:, :] += p2[1:, :] - p2[:-1, :]
    return div


def _threshold(u: np.ndarray, rho: np.ndarray, grad_sq: np.ndarray, i1w_d: np.ndarray, lt: np.ndarray, lam_theta: float):
    safe = np.where(grad_sq > 1e-10, grad_sq, 1.0)
    return np.select(
        [rho < -lt, rho > lt, grad_sq > 1e-10],
        [u + lam_theta * i1w_d, u - lam_theta * i1w_d, u - rho * i1w_d / safe],
        default=u,
    )


def _warp(image: np.ndarray, map_x: np.ndarray, map_y: np.ndarray) -> np.ndarray:
    return cv2.remap(image, map_x, map_y, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)


def _pyramid(image: np.ndarray, params: FlowParams) -> List[np.ndarray]:
    levels = [image]
    for _ in range(1, params.levels):
        h, w = levels[-1].shape
        nh, nw = int(round(h * params.scale)), int(round(w * params.scale))
        if min(nh, nw) < MIN_LEVEL_SIZE:
            break
        levels.append(cv2.resize(levels[-1], (nw, nh), interpolation=cv2.INTER_AREA))
    return levels


def _solve_level(
    i0: np.ndarray, i1: np.ndarray, u1: np.ndarray, u2: np.ndarray, params: FlowParams
) -> Tuple[np.ndarray, np.ndarray, bool]:
    h, w = i0.shape
    ys, xs = np.indices((h, w), dtype=np.float32)
    i1y, i1x = np.gradient(i1)
    i1x = i1x.astype(np.float32)
    i1y = i1y.astype(np.float32)
    p11 = np.zeros_like(i0)
    p12 = np.zeros_like(i0)
    p21 = np.zeros_like(i0)
    p22 = np.zeros_like(i0)
    lam_theta = params.lam * params.theta
    tau_theta = params.tau / params.theta
    tolerance = params.epsilon * params.epsilon
    converged = False

    for _ in range(params.warps):
        map_x = xs + u1
        map_y = ys + u2
        i1w = _warp(i1, map_x, map_y)
        i1wx = _warp(i1x, map_x, map_y)
        i1wy = _warp(i1y, map_x, map_y)
        grad_sq = i1wx * i1wx + i1wy * i1wy
        rho_c = i1w - i1wx * u1 - i1wy * u2 - i0
        lt = lam_theta * grad_sq

        converged = False
        for _ in range(params.inner_iterations):
            rho = rho_c + i1wx * u1 + i1wy * u2
            v1 = _threshold(u1, rho, grad_sq, i1wx, lt, lam_theta)
            v2 = _threshold(u2, rho, grad_sq, i1wy, lt, lam_theta)
            new_u1 = (v1 + params.theta * divergence(p11, p12)).astype(np.float32)
            new_u2 = (v2 + params.theta * divergence(p21, p22)).astype(np.float32)
            error = float(np.mean((new_u1 - u1) ** 2 + (new_u2 - u2) ** 2))
            u1, u2 = new_u1, new_u2

            u1x, u1y = forward_gradient(u1)
            u2x, u2y = forward_gradient(u2)
            ng1 = 1.0 + tau_theta * np.sqrt(u1x * u1x + u1y * u1y)
            ng2 = 1.0 + tau_theta * np.sqrt(u2x * u2x + u2y * u2y)
            p11 = (p11 + tau_theta * u1x) / ng1
            p12 = (p12 + tau_theta * u1y) / ng1
            p21 = (p21 + tau_theta * u2x) / ng2
            p22 = (p22 + tau_theta * u2y) / ng2
            if error < tolerance:
                converged = True
                break

        if params.median_filter:
            u1 = cv2.medianBlur(u1, 5)
            u2 = cv2.medianBlur(u2, 5)
    return u1, u2, converged


def optical_flow(a: np.ndarray, b: np.ndarray, params: FlowParams = FlowParams()) -> FlowField:
    """Flujo denso de `a` a `b`: b(x + u, y + v) ≈ a(x, y)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise PreconditionError("b", f"forma {b.shape} distinta de a {a.shape}")
    if a.ndim != 2:
        raise PreconditionError("a", f"se espera una imagen de un canal (H, W), recibido {a.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise PreconditionError("a", "las imágenes contienen valores no finitos")

    pyr0 = _pyramid((a * INTENSITY_SCALE).astype(np.float32), params)
    pyr1 = _pyramid((b * INTENSITY_SCALE).astype(np.float32), params)

    coarse_h, coarse_w = pyr0[-1].shape
    u1 = np.zeros((coarse_h, coarse_w), np.float32)
    u2 = np.zeros((coarse_h, coarse_w), np.float32)
    converged = False
    for level in range(len(pyr0) - 1, -1, -1):
        i0, i1 = pyr0[level], pyr1[level]
        h, w = i0.shape
        if u1.shape != (h, w):
            sx = w / u1.shape[1]
            sy = h / u1.shape[0]
            u1 = cv2.resize(u1, (w, h), interpolation=cv2.INTER_LINEAR) * np.float32(sx)
            u2 = cv2.resize(u2, (w, h), interpolation=cv2.INTER_LINEAR) * np.float32(sy)
        u1, u2, converged = _solve_level(i0, i1, u1, u2, params)

    if not converged:
        logger.debug("TV-L1 alcanzó el límite de iteraciones sin converger (%dx%d)", a.shape[0], a.shape[1])
    return FlowField(u1.astype(np.float64), u2.astype(np.float64), converged)
