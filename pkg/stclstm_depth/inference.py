"""
INFERENCIA: PREDICCIÓN A DISCO Y BENCHMARK DE THROUGHPUT


MODOS DE EJECUCIÓN:
- s_mode: cada frame pasa por el backbone y enseguida por el stepper CLSTM.
- ps_mode: bloques de `chunk` frames pasan por el backbone y por las
  convoluciones de la cabeza (D, puertas, refine) como lotes repartidos entre
  varios hilos; la memoria de la celda se actualiza frame a frame.

Ambos modos ejecutan las mismas operaciones por frame, por lo que sus
profundidades son idénticas bit a bit (el benchmark desactiva oneDNN y NNPACK
y fija un hilo intra-op, así cada convolución usa el mismo kernel con lote 1 y
con cualquier sub-lote).

TIEMPOS:
Los `warmup_frames` iniciales se ejecutan aparte; luego se cronometra la
pasada sobre el resto. ms_per_frame es el tiempo total de esa pasada dividido
por sus frames; first_frame_latency_ms es lo que tarda en salir su primer
frame.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager, nullcontext
from dataclasses import asdict, dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import cv2
import matplotlib
import numpy as np
import torch

from .checkpoint import CheckpointBundle, restore_generator
from .clstm import BatchApply, ClstmStepper
from .errors import DatasetIOError, PreconditionError
from .model import DepthNet, pad_to_multiple
from .synthdata import (
    DEFAULT_DEPTH_SCALE,
    FRAME_PATTERN,
    META_FILE,
    DepthSequenceSample,
    encode_rgb,
    frame_ids_in,
    read_meta,
    read_rgb_frame,
    write_sequence,
)

logger = logging.getLogger(__name__)

MODES = ("s_mode", "ps_mode")
MIN_TIMED_FRAMES = 100
MAX_WORKERS = 4
COLORMAP = "viridis"


@dataclass
class BenchReport:
    mode: str
    ms_per_frame: float
    fps: float
    n_frames_timed: int
    warmup_frames: int
    first_frame_latency_ms: float = 0.0
    head: str = "clstm"
    repeats: int = 1
    workers: int = 1

    @classmethod
    def from_timing(cls, mode: str, ms_per_frame: float, n_frames_timed: int, warmup_frames: int, **extra) -> "BenchReport":
        return cls(mode, ms_per_frame, 1000.0 / ms_per_frame, n_frames_timed, warmup_frames, **extra)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def summary(self) -> str:
        return (
            f"{self.mode}: {self.ms_per_frame:.2f} ms/frame ({self.fps:.2f} fps), "
            f"latencia del primer frame {self.first_frame_latency_ms:.2f} ms, "
            f"{self.n_frames_timed} frames medidos x {self.repeats}"
        )


@contextmanager
def pinned_kernels(threads: Optional[int] = 1) -> Iterator[None]:
    """Desactiva oneDNN y NNPACK y fija el número de hilos durante el bloque."""
    previous = torch.get_num_threads()
    if threads is not None:
        torch.set_num_threads(threads)
    try:
        with torch.backends.mkldnn.flags(enabled=False), torch.backends.nnpack.flags(enabled=False):
            yield
    finally:
        torch.set_num_threads(previous)


def default_workers() -> int:
    return max(1, min(MAX_WORKERS, os.cpu_count() or 1))


def _no_grad_call(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    # el modo sin gradiente es local a cada hilo
    with torch.no_grad():
        return fn(x)


def pooled_apply(pool: Optional[ThreadPoolExecutor], workers: int) -> BatchApply:
    """
    Reparte las filas de un lote entre `workers` hilos y concatena las salidas.
    Cada hilo evalúa un sub-lote con los mismos kernels que el lote completo.
    """

    def apply(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor) -> torch.Tensor:
        if pool is None or workers < 2 or x.shape[0] < 2:
            return fn(x)
        parts = x.tensor_split(min(workers, x.shape[0]))
        return torch.cat(list(pool.map(partial(_no_grad_call, fn), parts)), dim=0)

    return apply


@torch.no_grad()
def run_mode(
    model: DepthNet,
    frames: torch.Tensor,
    mode: str,
    chunk: int = 120,
    workers: Optional[int] = None,
) -> Tuple[torch.Tensor, List[float]]:
    """
    Ejecuta el modelo en línea sobre frames (n, 3, H, W).

    En ps_mode cada bloque de `chunk` frames pasa por el backbone y por las
    convoluciones de la cabeza por lotes, repartidos entre `workers` hilos
    (por defecto uno por núcleo, hasta MAX_WORKERS); solo la actualización de
    la memoria de la celda recorre los frames en serie.

    Devuelve las profundidades (n, 1, H, W) y, por frame, el instante
    (segundos desde el inicio) en que estuvo lista su profundidad.
    """
    if mode not in MODES:
        raise PreconditionError("mode", f"modo desconocido '{mode}' (opciones: {MODES})")
    if chunk < 1:
        raise PreconditionError("chunk", f"debe ser >= 1, recibido {chunk}")
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise PreconditionError("workers", f"debe ser >= 1, recibido {workers}")
    model.eval()
    h, w = frames.shape[-2:]
    stepper = ClstmStepper(model.head, output_size=(h, w))
    depths: List[torch.Tensor] = []
    stamps: List[float] = []
    n = frames.shape[0]
    start = time.perf_counter()
    if mode == "s_mode":
        for i in range(n):
            depths.append(stepper.step(model.backbone(frames[i:i + 1])))
            stamps.append(time.perf_counter() - start)
    else:
        with ThreadPoolExecutor(max_workers=workers) if workers > 1 else nullcontext() as pool:
            apply = pooled_apply(pool, workers)
            for s in range(0, n, chunk):
                features = apply(model.backbone, frames[s : s + chunk])
                for depth in stepper.step_chunk(features, apply):
                    depths.append(depth)
                    stamps.append(time.perf_counter() - start)
    return torch.cat(depths, dim=0), stamps


def benchmark(
    model: DepthNet,
    frames: torch.Tensor,
    mode: str,
    chunk: int = 120,
    warmup_frames: int = 20,
    repeats: int = 1,
    threads: Optional[int] = 1,
    workers: Optional[int] = None,
) -> BenchReport:
    """Throughput de un modo; los frames ya están en memoria (sin E/S de disco)."""
    n = frames.shape[0]
    if warmup_frames < 0 or repeats < 1:
        raise PreconditionError("warmup_frames", "warmup_frames >= 0 y repeats >= 1")
    if n < warmup_frames + MIN_TIMED_FRAMES:
        raise PreconditionError(
            "n_frames", f"se necesitan al menos {warmup_frames + MIN_TIMED_FRAMES} frames, hay {n}"
        )
    frames = pad_to_multiple(frames)
    per_frame = []
    first = []
    with pinned_kernels(threads):
        for _ in range(repeats):
            if warmup_frames > 0:
                run_mode(model, frames[:warmup_frames], mode, chunk, workers)
            _, stamps = run_mode(model, frames[warmup_frames:], mode, chunk, workers)
            per_frame.append(stamps[-1] / (n - warmup_frames))
            first.append(stamps[0])
    ms = 1000.0 * float(np.mean(per_frame))
    report = BenchReport.from_timing(
        mode,
        ms,
        n - warmup_frames,
        warmup_frames,
        first_frame_latency_ms=1000.0 * float(np.mean(first)),
        head=model.head_kind,
        repeats=repeats,
        workers=1 if mode == "s_mode" else (default_workers() if workers is None else workers),
    )
    logger.info("%s", report.summary())
    return report


def colorize_depth(depth: np.ndarray, vmin: Optional[float] = None, vmax: Optional[float] = None) -> np.ndarray:
    """Profundidad (H, W) -> RGB uint8 con viridis; vmin (cerca) es el extremo oscuro."""
    vmin = float(depth.min()) if vmin is None else vmin
    vmax = float(depth.max()) if vmax is None else vmax
    span = vmax - vmin
    norm = np.zeros_like(depth, dtype=np.float64) if span <= 0 else np.clip((depth - vmin) / span, 0.0, 1.0)
    rgba = matplotlib.colormaps[COLORMAP](norm)
    return encode_rgb(rgba[..., :3])


def _sequence_dirs(input_dir: Path) -> List[Tuple[str, Path]]:
    if (input_dir / "rgb").is_dir():
        return [("", input_dir)]
    if not input_dir.is_dir():
        raise DatasetIOError(input_dir, "directorio de entrada no encontrado")
    found = sorted((p.name, p) for p in input_dir.iterdir() if (p / "rgb").is_dir())
    if not found:
        raise DatasetIOError(input_dir, "no hay secuencias (directorios con rgb/)")
    return found


def _read_rgb_sequence(seq_dir: Path) -> Tuple[np.ndarray, List[int], float]:
    ids = frame_ids_in(seq_dir)
    if not ids:
        raise DatasetIOError(seq_dir / "rgb", "no hay frames")
    fps = float(read_meta(seq_dir)["fps"]) if (seq_dir / META_FILE).is_file() else 10.0
    rgb = np.stack([read_rgb_frame(seq_dir / "rgb" / (FRAME_PATTERN % fid)) for fid in ids])
    return rgb, ids, fps


def predict(
    checkpoint: CheckpointBundle,
    input_dir: str | Path,
    output_dir: str | Path,
    emit_colormap: bool = False,
    chunk: int = 120,
    depth_scale: float = DEFAULT_DEPTH_SCALE,
) -> int:
    """
    Predice la profundidad de cada secuencia de `input_dir` (una secuencia o
    una raíz con varias) y la escribe con el layout del dataset en
    `output_dir`. Devuelve el número total de frames escritos.
    """
    model = restore_generator(checkpoint)
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    total = 0
    for seq_id, seq_dir in _sequence_dirs(input_dir):
        rgb, ids, fps = _read_rgb_sequence(seq_dir)
        h, w = rgb.shape[1:3]
        frames = torch.from_numpy(np.ascontiguousarray(rgb.transpose(0, 3, 1, 2)))
        # sin benchmark: los kernels usan todos los hilos intra-op
        depth, _ = run_mode(model, pad_to_multiple(frames), "ps_mode", chunk, workers=1)
        depth = depth[:, 0, :h, :w].numpy()

        sample = DepthSequenceSample(
            rgb=rgb,
            depth=depth,
            valid_mask=np.ones(depth.shape, dtype=bool),
            frame_ids=list(ids),
            fps=fps,
            depth_scale=depth_scale,
        )
        root, name = (output_dir.parent, output_dir.name) if seq_id == "" else (output_dir, seq_id)
        out_seq = write_sequence(sample, root, name)
        if emit_colormap:
            cmap_dir = out_seq / "colormap"
            cmap_dir.mkdir(parents=True, exist_ok=True)
            vmin, vmax = float(depth.min()), float(depth.max())
            for i, fid in enumerate(ids):
                path = cmap_dir / (FRAME_PATTERN % fid)
                image = cv2.cvtColor(colorize_depth(depth[i], vmin, vmax), cv2.COLOR_RGB2BGR)
                if not cv2.imwrite(str(path), image):
                    raise DatasetIOError(path, "no se pudo escribir")
        logger.info("Predichos %d frames de %s en %s", len(ids), seq_dir, out_seq)
        total += len(ids)
    return total
