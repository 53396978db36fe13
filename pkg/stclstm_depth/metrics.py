"""
================================================================================
Archivo: metrics.py
--------------------------------------------------------------------------------
Métricas de evaluación: precisión espacial (Rel, RMS, log10, δ1..δ3) y
consistencia temporal (TCC sobre mapas de cambio, TMC sobre flujo óptico),
con SSIM como medida de similitud.
================================================================================

Definiciones (sobre los píxeles válidos, acumulados en todo el conjunto):
    Rel   = media |d - g| / g
    RMS   = sqrt(media (d - g)^2)
    log10 = media |log10 d - log10 g|
    δi    = fracción con max(d/g, g/d) < 1.25^i

    TCC = media_i SSIM(|d^i - d^{i+1}|, |g^i - g^{i+1}|)
    TMC = media_i SSIM(flujo(d^i, d^{i+1}), flujo(g^i, g^{i+1}))

El SSIM de un campo de flujo es el promedio del SSIM de sus componentes u y v.

Ejemplo de uso:
    report = evaluate_predictions([pred], [gt], [mask])
    report.to_json("metrics.json")
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateInputError, PreconditionError
from .flow import FlowParams, optical_flow

REPORT_KEYS = ("rel", "rms", "log10", "delta1", "delta2", "delta3", "tcc", "tmc")
DELTA_BASE = 1.25
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricConfig:
    """max_depth: rango dinámico L del SSIM de TCC; temporal_window: frames por ventana temporal."""
    max_depth: float = 10.0
    temporal_window: int = 16
    flow: FlowParams = field(default_factory=FlowParams)

    def __post_init__(self) -> None:
        if self.max_depth <= 0:
            raise PreconditionError("max_depth", f"debe ser positivo, recibido {self.max_depth}")
        if self.temporal_window < 2:
            raise PreconditionError("temporal_window", f"debe ser >= 2, recibido {self.temporal_window}")


@dataclass
class MetricReport:
    rel: float
    rms: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    tcc: float
    tmc: float
    n_pixels: int = 0
    n_sequences: int = 0

    def __post_init__(self) -> None:
        for key in REPORT_KEYS:
            if not math.isfinite(getattr(self, key)):
                raise PreconditionError(key, f"valor no finito {getattr(self, key)}")
        if not self.delta1 <= self.delta2 <= self.delta3 <= 1.0:
            raise PreconditionError("delta1", f"δ no monótonas: {self.delta1}, {self.delta2}, {self.delta3}")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "MetricReport":
        values = {k: float(data[k]) for k in REPORT_KEYS}
        return cls(**values, n_pixels=int(data.get("n_pixels", 0)), n_sequences=int(data.get("n_sequences", 0)))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def to_text(self, path=None) -> str:
        """Archivo plano `clave valor`, una métrica por línea."""
        text = "".join(f"{key} {getattr(self, key):.6f}\n" for key in REPORT_KEYS)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def read_report(path) -> MetricReport:
    return MetricReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


class SpatialAccumulator:
    """Sumas de las métricas espaciales para agregar píxeles de muchas secuencias."""

    def __init__(self) -> None:
        self.n = 0
        self.abs_rel = 0.0
        self.sq = 0.0
        self.log10 = 0.0
        self.hits = [0, 0, 0]

    def add(self, d, g, mask) -> None:
        d, g = _as_numpy(d), _as_numpy(g)
        mask = np.asarray(mask.detach().cpu().numpy() if isinstance(mask, torch.Tensor) else mask, dtype=bool)
        if d.shape != g.shape or mask.shape != d.shape:
            raise PreconditionError("g", f"formas incompatibles: d {d.shape}, g {g.shape}, mask {mask.shape}")
        dv, gv = d[mask], g[mask]
        if dv.size == 0:
            return
        if (dv <= 0).any() or (gv <= 0).any():
            raise PreconditionError("d", "las profundidades válidas deben ser positivas")
        ratio = np.maximum(dv / gv, gv / dv)
        self.n += dv.size
        self.abs_rel += float(np.sum(np.abs(dv - gv) / gv))
        self.sq += float(np.sum((dv - gv) ** 2))
        self.log10 += float(np.sum(np.abs(np.log10(dv) - np.log10(gv))))
        for i in range(3):
            self.hits[i] += int(np.count_nonzero(ratio < DELTA_BASE ** (i + 1)))

    def result(self) -> Tuple[float, float, float, float, float, float]:
        if self.n == 0:
            raise DegenerateInputError("no hay píxeles válidos para las métricas espaciales")
        n = self.n
        return (
            self.abs_rel / n,
            math.sqrt(self.sq / n),
            self.log10 / n,
            self.hits[0] / n,
            self.hits[1] / n,
            self.hits[2] / n,
        )


def spatial_metrics(d, g, masks) -> Tuple[float, float, float, float, float, float]:
    """(rel, rms, log10, δ1, δ2, δ3) sobre todos los píxeles válidos."""
    acc = SpatialAccumulator()
    acc.add(d, g, masks)
    return acc.result()


def _gaussian_window(size: int) -> torch.Tensor:
    k = cv2.getGaussianKernel(size, SSIM_SIGMA, ktype=cv2.CV_64F)
    return torch.from_numpy(k @ k.T).view(1, 1, size, size)


def ssim_batch(a, b, dynamic_range: float, masks=None) -> np.ndarray:
    """
    SSIM medio por imagen para pilas (N, H, W); ventana gaussiana sobre la
    región válida de la convolución. Con `masks` (N, H, W) solo cuentan las
    ventanas centradas en píxeles válidos; una imagen sin ninguna da nan.
    """
    a = torch.as_tensor(_as_numpy(a))
    b = torch.as_tensor(_as_numpy(b))
    if a.shape != b.shape:
        raise PreconditionError("b", f"forma {tuple(b.shape)} distinta de a {tuple(a.shape)}")
    if dynamic_range <= 0:
        raise PreconditionError("dynamic_range", f"debe ser positivo, recibido {dynamic_range}")
    if a.dim() == 2:
        a, b = a[None], b[None]
    size = min(SSIM_WINDOW, a.shape[-2], a.shape[-1])
    size -= 1 - size % 2
    window = _gaussian_window(size)
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    x = a.unsqueeze(1)
    y = b.unsqueeze(1)
    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    sxx = F.conv2d(x * x, window) - mu_x * mu_x
    syy = F.conv2d(y * y, window) - mu_y * mu_y
    sxy = F.conv2d(x * y, window) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    ssim_map = (num / den)[:, 0]
    if masks is None:
        return ssim_map.mean(dim=(1, 2)).numpy()

    m = torch.as_tensor(np.asarray(masks, dtype=bool).reshape(a.shape))
    half = size // 2
    ho, wo = ssim_map.shape[-2:]
    weight = m[:, half : half + ho, half : half + wo].to(ssim_map.dtype)
    total = weight.sum(dim=(1, 2))
    score = (ssim_map * weight).sum(dim=(1, 2)) / total.clamp(min=1.0)
    return torch.where(total > 0, score, torch.full_like(score, math.nan)).numpy()


def ssim(a, b, dynamic_range: float, mask=None) -> float:
    masks = None if mask is None else np.asarray(mask, dtype=bool)[None]
    return float(ssim_batch(_as_numpy(a)[None], _as_numpy(b)[None], dynamic_range, masks)[0])


def _check_sequences(d: np.ndarray, g: np.ndarray) -> None:
    if d.shape != g.shape:
        raise PreconditionError("G", f"forma {g.shape} distinta de D {d.shape}")
    if d.ndim != 3 or d.shape[0] < 2:
        raise PreconditionError("D", f"se espera una secuencia (n >= 2, H, W), recibido {d.shape}")


def _check_masks(masks, shape) -> np.ndarray:
    m = np.asarray(masks, dtype=bool)
    if m.shape != shape:
        raise PreconditionError("masks", f"forma {m.shape} distinta de {shape}")
    return m


def _mean_over_pairs(scores, metric: str) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        raise DegenerateInputError(f"{metric}: ningún par de frames tiene píxeles válidos")
    return float(finite.mean())


def tcc(D, G, dynamic_range: float = 10.0, masks=None) -> float:
    """
    Consistencia de cambio temporal. Con `masks` (n, H, W) un píxel cuenta en
    el par (i, i+1) solo si es válido en ambos frames; fuera de esa máscara el
    mapa de cambio del ground truth toma el de la predicción.
    """
    d, g = _as_numpy(D), _as_numpy(G)
    _check_sequences(d, g)
    diff_d = np.abs(d[1:] - d[:-1])
    diff_g = np.abs(g[1:] - g[:-1])
    if masks is None:
        return float(np.mean(ssim_batch(diff_d, diff_g, dynamic_range)))
    m = _check_masks(masks, d.shape)
    pair = m[1:] & m[:-1]
    diff_g = np.where(pair, diff_g, diff_d)
    return _mean_over_pairs(ssim_batch(diff_d, diff_g, dynamic_range, pair), "TCC")


def normalize_sequence(seq: np.ndarray, mask=None) -> np.ndarray:
    """
    Min-max de la secuencia completa a [0, 1]; una secuencia constante queda
    en cero. Con `mask` el rango se toma solo de los píxeles válidos.
    """
    values = seq if mask is None else seq[np.asarray(mask, dtype=bool)]
    if values.size == 0:
        return np.zeros_like(seq)
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 0:
        return np.zeros_like(seq)
    return (seq - lo) / (hi - lo)


def flow_ssim(fd, fg, mask=None) -> float:
    L = 2.0 * max(1.0, fd.max_abs(), fg.max_abs())
    return 0.5 * (ssim(fd.u, fg.u, L, mask) + ssim(fd.v, fg.v, L, mask))


def tmc(D, G, params: FlowParams = FlowParams(), masks=None) -> float:
    """
    Consistencia de movimiento temporal con flujo TV-L1 sobre profundidades
    normalizadas. Con `masks` los píxeles no válidos del ground truth toman el
    valor de la predicción antes del flujo, la normalización usa solo píxeles
    válidos y el SSIM del flujo solo cuenta píxeles válidos en ambos frames.
    """
    d, g = _as_numpy(D), _as_numpy(G)
    _check_sequences(d, g)
    if masks is None:
        m = None
    else:
        m = _check_masks(masks, d.shape)
        g = np.where(m, g, d)
    dn, gn = normalize_sequence(d, m), normalize_sequence(g, m)
    scores = []
    for i in range(d.shape[0] - 1):
        fd = optical_flow(dn[i], dn[i + 1], params)
        fg = optical_flow(gn[i], gn[i + 1], params)
        scores.append(flow_ssim(fd, fg, None if m is None else m[i] & m[i + 1]))
    return _mean_over_pairs(scores, "TMC")


def temporal_windows(n_frames: int, window: int) -> List[Tuple[int, int]]:
    """Ventanas consecutivas sin solape de `window` frames; la cola se usa si tiene >= 2 frames."""
    spans = []
    for start in range(0, n_frames, window):
        stop = min(start + window, n_frames)
        if stop - start >= 2:
            spans.append((start, stop))
    return spans


def _squeeze_frames(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    x = np.asarray(x)
    if x.ndim == 4 and x.shape[1] == 1:
        x = x[:, 0]
    return x


def evaluate_predictions(
    preds: Sequence,
    gts: Sequence,
    masks: Optional[Sequence] = None,
    config: MetricConfig = MetricConfig(),
) -> MetricReport:
    """
    Agrega un MetricReport a partir de secuencias en memoria: cada elemento
    es (n, H, W) o (n, 1, H, W). Las métricas espaciales acumulan todos los
    píxeles válidos; TCC y TMC promedian sobre ventanas de `temporal_window`.
    """
    if len(preds) != len(gts) or (masks is not None and len(masks) != len(preds)):
        raise PreconditionError("gts", "preds, gts y masks deben tener el mismo número de secuencias")
    if len(preds) == 0:
        raise DegenerateInputError("no hay secuencias que evaluar")

    acc = SpatialAccumulator()
    tcc_scores: List[float] = []
    tmc_scores: List[float] = []
    for i, (pred, gt) in enumerate(zip(preds, gts)):
        d = _squeeze_frames(pred).astype(np.float64)
        g = _squeeze_frames(gt).astype(np.float64)
        m = np.asarray(_squeeze_frames(masks[i]), dtype=bool) if masks is not None else g > 0
        acc.add(d, g, m)
        for start, stop in temporal_windows(d.shape[0], config.temporal_window):
            window = (d[start:stop], g[start:stop])
            try:
                tcc_value = tcc(*window, config.max_depth, m[start:stop])
                tmc_value = tmc(*window, config.flow, m[start:stop])
            except DegenerateInputError:
                # ventana sin pares de frames con píxeles válidos
                continue
            tcc_scores.append(tcc_value)
            tmc_scores.append(tmc_value)

    if not tcc_scores:
        raise DegenerateInputError("ninguna ventana tiene 2 frames con píxeles válidos para las métricas temporales")
    rel, rms, log10, d1, d2, d3 = acc.result()
    return MetricReport(
        rel=rel,
        rms=rms,
        log10=log10,
        delta1=d1,
        delta2=d2,
        delta3=d3,
        tcc=float(np.mean(tcc_scores)),
        tmc=float(np.mean(tmc_scores)),
        n_pixels=acc.n,
        n_sequences=len(preds),
    )
