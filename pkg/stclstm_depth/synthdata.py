"""
================================================================================
Archivo: synthdata.py
--------------------------------------------------------------------------------
Secuencias RGB-D sintéticas con profundidad exacta, lectura/escritura del
formato en disco y las aumentaciones de entrenamiento.

Las escenas son rectángulos y círculos alineados a los ejes, cada uno con una
profundidad constante, que se mueven con velocidad constante más un pequeño
jitter. El color de cada objeto depende de su profundidad, de modo que la
profundidad se puede aprender a partir de la apariencia.
================================================================================

Formato en disco:
    <root>/<sequence_id>/rgb/%06d.png     (8 bits, 3 canales)
    <root>/<sequence_id>/depth/%06d.png   (16 bits, 1 canal, raw / depth_scale = metros)
    <root>/<sequence_id>/meta.json        ({fps, depth_scale, n_frames, height, width})

Un valor raw de 0 marca un píxel inválido.

Ejemplo de uso:
    spec = SceneSpec(n_objects=3, resolution=(64, 64))
    sample = generate_synthetic_sequence(spec, n_frames=5, seed=7)
    write_sequence(sample, "data/train", "seq_0000")
    again = load_sequence("data/train", "seq_0000", start=0, n_frames=5)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .errors import DatasetFormatError, DatasetIOError, PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_DEPTH_SCALE = 1000.0
FRAME_PATTERN = "%06d.png"
META_FILE = "meta.json"

# Pesos de luminancia (ITU-R BT.601) para el gris de las aumentaciones de color
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class SceneSpec:
    """
    Parámetros de una escena sintética.

    Atributos:
        n_objects: número de objetos (>= 0)
        depth_range: (min_m, max_m) profundidad de los objetos en metros
        motion_amplitude: velocidad máxima de los objetos en píxeles/frame
        resolution: (alto, ancho) en píxeles, pares y >= 16
        camera_pan: (dy, dx) desplazamiento global por frame en píxeles
        background_depth: profundidad del fondo en metros
        fps: frames por segundo declarados en la muestra
    """
    n_objects: int = 4
    depth_range: Tuple[float, float] = (1.0, 6.0)
    motion_amplitude: float = 1.5
    resolution: Tuple[int, int] = (64, 64)
    camera_pan: Tuple[float, float] = (0.0, 0.5)
    background_depth: float = 8.0
    fps: float = 10.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        lo, hi = self.depth_range
        if not (0 < lo < hi):
            raise PreconditionError("depth_range", f"se requiere 0 < min_m < max_m, recibido {self.depth_range}")
        if len(self.resolution) != 2 or any(d < 16 or d % 2 for d in self.resolution):
            raise PreconditionError("resolution", f"cada dimensión debe ser par y >= 16, recibido {self.resolution}")
        if self.n_objects < 0:
            raise PreconditionError("n_objects", f"debe ser >= 0, recibido {self.n_objects}")
        if not (self.background_depth > 0 and np.isfinite(self.background_depth)):
            raise PreconditionError("background_depth", f"debe ser positiva y finita, recibido {self.background_depth}")
        if self.motion_amplitude < 0:
            raise PreconditionError("motion_amplitude", f"debe ser >= 0, recibido {self.motion_amplitude}")
        if len(self.camera_pan) != 2:
            raise PreconditionError("camera_pan", "se esperan dos componentes (dy, dx)")
        if self.fps <= 0:
            raise PreconditionError("fps", f"debe ser positivo, recibido {self.fps}")


@dataclass(frozen=True)
class SceneObject:
    """
    Objeto de la escena con profundidad constante.

    shape: 'rect' (half_size = semiejes (hy, hx)) o 'circle' (half_size[0] = radio)
    center y velocity en píxeles, (y, x).
    """
    shape: str
    center: Tuple[float, float]
    half_size: Tuple[float, float]
    depth: float
    velocity: Tuple[float, float] = (0.0, 0.0)
    color: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def covers(self, yy: np.ndarray, xx: np.ndarray, offset: Tuple[float, float]) -> np.ndarray:
        cy = self.center[0] + offset[0]
        cx = self.center[1] + offset[1]
        if self.shape == "circle":
            r = self.half_size[0]
            return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        if self.shape == "rect":
            return (np.abs(yy - cy) <= self.half_size[0]) & (np.abs(xx - cx) <= self.half_size[1])
        raise PreconditionError("shape", f"forma desconocida '{self.shape}'")


@dataclass
class DepthSequenceSample:
    """
    Secuencia alineada de n frames RGB, profundidades y máscaras de validez.

    rgb: (n, H, W, 3) float32 en [0, 1]
    depth: (n, H, W) float32 en metros
    valid_mask: (n, H, W) bool
    """
    rgb: np.ndarray
    depth: np.ndarray
    valid_mask: np.ndarray
    frame_ids: List[int]
    fps: float = 10.0
    depth_scale: float = DEFAULT_DEPTH_SCALE

    def __post_init__(self) -> None:
        self.validate()

    @property
    def n_frames(self) -> int:
        return int(self.depth.shape[0])

    @property
    def height(self) -> int:
        return int(self.depth.shape[1])

    @property
    def width(self) -> int:
        return int(self.depth.shape[2])

    def validate(self) -> None:
        if self.rgb.ndim != 4 or self.rgb.shape[-1] != 3:
            raise PreconditionError("rgb", f"se espera forma (n, H, W, 3), recibido {self.rgb.shape}")
        if self.depth.ndim != 3:
            raise PreconditionError("depth", f"se espera forma (n, H, W), recibido {self.depth.shape}")
        n = self.depth.shape[0]
        if n < 1:
            raise PreconditionError("depth", "la secuencia debe tener al menos un frame")
        if self.rgb.shape[:3] != self.depth.shape or self.valid_mask.shape != self.depth.shape:
            raise PreconditionError(
                "valid_mask",
                f"formas inconsistentes rgb={self.rgb.shape} depth={self.depth.shape} mask={self.valid_mask.shape}",
            )
        if len(self.frame_ids) != n:
            raise PreconditionError("frame_ids", f"se esperaban {n} ids, hay {len(self.frame_ids)}")
        valid = self.depth[self.valid_mask]
        if valid.size and not (np.all(np.isfinite(valid)) and np.all(valid > 0)):
            raise PreconditionError("depth", "la profundidad en píxeles válidos debe ser positiva y finita")


# ---------------------------------------------------------------------------
# Codificación de frames (compartida por el generador y el formato en disco)
# ---------------------------------------------------------------------------

def encode_rgb(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def decode_rgb(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(255.0)


def encode_depth(depth: np.ndarray, depth_scale: float, mask: Optional[np.ndarray] = None) -> np.ndarray:
    raw = np.clip(np.round(depth.astype(np.float64) * depth_scale), 0, 65535)
    if mask is not None:
        raw = np.where(mask, raw, 0)
    return raw.astype(np.uint16)


def decode_depth(raw: np.ndarray, depth_scale: float) -> Tuple[np.ndarray, np.ndarray]:
    """raw uint16 -> (profundidad en metros, máscara de validez raw > 0)."""
    depth = raw.astype(np.float32) / np.float32(depth_scale)
    return depth, raw > 0


# ---------------------------------------------------------------------------
# Generación procedural
# ---------------------------------------------------------------------------

def depth_color(depth: float, depth_range: Tuple[float, float]) -> np.ndarray:
    """Rampa de color: objetos cercanos cálidos y claros, lejanos fríos y oscuros."""
    lo, hi = depth_range
    t = float(np.clip((depth - lo) / (hi - lo), 0.0, 1.0))
    near = np.array([0.95, 0.75, 0.25])
    far = np.array([0.20, 0.35, 0.85])
    return (1.0 - t) * near + t * far


def sample_scene_objects(spec: SceneSpec, rng: np.random.Generator) -> List[SceneObject]:
    """Muestrea los objetos de una escena a partir de `rng`."""
    h, w = spec.resolution
    side = min(h, w)
    objects: List[SceneObject] = []
    for _ in range(spec.n_objects):
        shape = "rect" if rng.random() < 0.5 else "circle"
        depth = float(rng.uniform(*spec.depth_range))
        if shape == "rect":
            half = (float(rng.uniform(0.08, 0.22) * side), float(rng.uniform(0.08, 0.22) * side))
        else:
            r = float(rng.uniform(0.08, 0.2) * side)
            half = (r, r)
        center = (float(rng.uniform(0, h)), float(rng.uniform(0, w)))
        angle = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(0.3, 1.0) * spec.motion_amplitude
        velocity = (float(speed * np.sin(angle)), float(speed * np.cos(angle)))
        tint = rng.uniform(-0.08, 0.08, size=3)
        color = np.clip(depth_color(depth, spec.depth_range) + tint, 0.0, 1.0)
        objects.append(SceneObject(shape, center, half, depth, velocity, tuple(float(c) for c in color)))
    return objects


def render_frame(
    objects: Sequence[SceneObject],
    spec: SceneSpec,
    t: int,
    jitter: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rasteriza el frame t con el algoritmo del pintor (de lejos a cerca).

    Retorna (rgb (H, W, 3) float32, depth (H, W) float32), sin cuantizar.
    jitter: desplazamientos adicionales por objeto, forma (n_objects, 2).
    """
    h, w = spec.resolution
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    pan_y, pan_x = spec.camera_pan[0] * t, spec.camera_pan[1] * t

    # Fondo: tono azulado con franjas suaves que se mueven con la cámara
    stripes = 0.5 + 0.5 * np.sin((xx - pan_x) / 3.0) * np.cos((yy - pan_y) / 5.0)
    rgb = np.empty((h, w, 3), dtype=np.float64)
    rgb[..., 0] = 0.10 + 0.05 * stripes
    rgb[..., 1] = 0.12 + 0.06 * stripes
    rgb[..., 2] = 0.22 + 0.08 * stripes
    depth = np.full((h, w), spec.background_depth, dtype=np.float64)

    # Orden estable de lejos a cerca: el más cercano queda encima
    order = sorted(range(len(objects)), key=lambda k: -objects[k].depth)
    for k in order:
        obj = objects[k]
        dy = obj.velocity[0] * t + pan_y
        dx = obj.velocity[1] * t + pan_x
        if jitter is not None:
            dy += float(jitter[k, 0])
            dx += float(jitter[k, 1])
        mask = obj.covers(yy, xx, (dy, dx))
        if not mask.any():
            continue
        # Textura de tablero ligada al objeto
        checker = ((np.floor((yy - obj.center[0] - dy) / 4) + np.floor((xx - obj.center[1] - dx) / 4)) % 2)
        shade = 0.9 + 0.1 * checker
        depth[mask] = obj.depth
        for ch in range(3):
            rgb[..., ch][mask] = obj.color[ch] * shade[mask]
    return rgb.astype(np.float32), depth.astype(np.float32)


def generate_synthetic_sequence(
    spec: SceneSpec,
    n_frames: int,
    seed: int,
    depth_scale: float = DEFAULT_DEPTH_SCALE,
) -> DepthSequenceSample:
    """
    Genera una secuencia sintética; función determinista de (spec, n_frames, seed).

    Los valores se cuantizan con los mismos codificadores del formato en
    disco, así escribir y volver a leer la muestra es exacto bit a bit.
    """
    spec.validate()
    if n_frames < 1:
        raise PreconditionError("n_frames", f"debe ser >= 1, recibido {n_frames}")
    rng = np.random.default_rng(seed)
    objects = sample_scene_objects(spec, rng)
    jitter_sigma = 0.1 * spec.motion_amplitude

    rgb_frames, depth_frames, mask_frames = [], [], []
    for t in range(n_frames):
        jitter = rng.normal(0.0, jitter_sigma, size=(len(objects), 2)) if objects and jitter_sigma > 0 else None
        rgb, depth = render_frame(objects, spec, t, jitter)
        rgb_frames.append(decode_rgb(encode_rgb(rgb)))
        decoded, mask = decode_depth(encode_depth(depth, depth_scale), depth_scale)
        depth_frames.append(decoded)
        mask_frames.append(mask)

    return DepthSequenceSample(
        rgb=np.stack(rgb_frames),
        depth=np.stack(depth_frames),
        valid_mask=np.stack(mask_frames),
        frame_ids=list(range(n_frames)),
        fps=spec.fps,
        depth_scale=depth_scale,
    )


# ---------------------------------------------------------------------------
# Formato en disco
# ---------------------------------------------------------------------------

def write_sequence(
    sample: DepthSequenceSample,
    root: str | Path,
    sequence_id: str,
    depth_scale: Optional[float] = None,
) -> Path:
    """Escribe la muestra con el layout <root>/<sequence_id>/{rgb,depth,meta.json}."""
    scale = depth_scale if depth_scale is not None else sample.depth_scale
    seq_dir = Path(root) / sequence_id
    (seq_dir / "rgb").mkdir(parents=True, exist_ok=True)
    (seq_dir / "depth").mkdir(parents=True, exist_ok=True)
    for i, fid in enumerate(sample.frame_ids):
        name = FRAME_PATTERN % fid
        bgr = cv2.cvtColor(encode_rgb(sample.rgb[i]), cv2.COLOR_RGB2BGR)
        raw = encode_depth(sample.depth[i], scale, sample.valid_mask[i])
        for path, image in ((seq_dir / "rgb" / name, bgr), (seq_dir / "depth" / name, raw)):
            if not cv2.imwrite(str(path), image):
                raise DatasetIOError(path, "no se pudo escribir")
    meta = {
        "fps": sample.fps,
        "depth_scale": scale,
        "n_frames": sample.n_frames,
        "height": sample.height,
        "width": sample.width,
    }
    (seq_dir / META_FILE).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return seq_dir


def read_meta(seq_dir: Path) -> dict:
    path = seq_dir / META_FILE
    if not path.is_file():
        raise DatasetIOError(path)
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"meta.json ilegible en {path}: {exc}") from exc
    if "fps" not in meta or "depth_scale" not in meta:
        raise DatasetFormatError(f"meta.json sin 'fps' o 'depth_scale': {path}")
    return meta


def frame_ids_in(seq_dir: Path) -> List[int]:
    """Ids de frame presentes en rgb/, ordenados."""
    rgb_dir = seq_dir / "rgb"
    if not rgb_dir.is_dir():
        raise DatasetIOError(rgb_dir, "directorio no encontrado")
    ids = []
    for p in rgb_dir.glob("*.png"):
        if p.stem.isdigit():
            ids.append(int(p.stem))
    return sorted(ids)


def read_rgb_frame(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DatasetIOError(path)
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DatasetIOError(path, "no se pudo decodificar")
    return decode_rgb(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))


def read_depth_frame(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DatasetIOError(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetIOError(path, "no se pudo decodificar")
    if raw.dtype != np.uint16 or raw.ndim != 2:
        raise DatasetFormatError(f"se esperaba PNG de 16 bits y un canal: {path} ({raw.dtype}, {raw.shape})")
    return raw


def load_sequence(root: str | Path, sequence_id: str, start: int, n_frames: int) -> DepthSequenceSample:
    """
    Lee n_frames consecutivos desde la posición `start` de una secuencia.

    La profundidad se decodifica como raw / depth_scale; raw == 0 es inválido.
    """
    seq_dir = Path(root) / sequence_id
    meta = read_meta(seq_dir)
    ids = frame_ids_in(seq_dir)
    if start < 0 or n_frames < 1 or start + n_frames > len(ids):
        raise PreconditionError(
            "n_frames", f"ventana [{start}, {start + n_frames}) fuera de la secuencia de {len(ids)} frames"
        )
    scale = float(meta["depth_scale"])
    rgbs, depths, masks = [], [], []
    window = ids[start:start + n_frames]
    for fid in window:
        name = FRAME_PATTERN % fid
        rgb = read_rgb_frame(seq_dir / "rgb" / name)
        raw = read_depth_frame(seq_dir / "depth" / name)
        if raw.shape != rgb.shape[:2]:
            raise DatasetFormatError(
                f"dimensiones RGB {rgb.shape[:2]} y profundidad {raw.shape} distintas en el frame {name} de {seq_dir}"
            )
        if rgbs and rgb.shape != rgbs[0].shape:
            raise DatasetFormatError(f"el frame {name} de {seq_dir} cambia de resolución")
        depth, mask = decode_depth(raw, scale)
        rgbs.append(rgb)
        depths.append(depth)
        masks.append(mask)
    return DepthSequenceSample(
        rgb=np.stack(rgbs),
        depth=np.stack(depths),
        valid_mask=np.stack(masks),
        frame_ids=list(window),
        fps=float(meta["fps"]),
        depth_scale=scale,
    )


def sequence_length(root: str | Path, sequence_id: str) -> int:
    return len(frame_ids_in(Path(root) / sequence_id))


def list_sequences(root: str | Path) -> List[str]:
    """Secuencias (directorios con meta.json) bajo root, ordenadas."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetIOError(root, "directorio de dataset no encontrado")
    return sorted(p.name for p in root.iterdir() if (p / META_FILE).is_file())


def split_sequences(ids: Sequence[str], val_fraction: float = 0.1, seed: int = 0) -> Tuple[List[str], List[str]]:
    """
    Partición determinista entrenamiento/validación.

    Con al menos dos secuencias siempre queda una en validación.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise PreconditionError("val_fraction", f"debe estar en [0, 1), recibido {val_fraction}")
    ordered = sorted(ids)
    if len(ordered) < 2 or val_fraction == 0.0:
        return ordered, []
    perm = np.random.default_rng(seed).permutation(len(ordered))
    n_val = max(1, int(round(val_fraction * len(ordered))))
    val_idx = set(int(i) for i in perm[:n_val])
    train = [s for i, s in enumerate(ordered) if i not in val_idx]
    val = [s for i, s in enumerate(ordered) if i in val_idx]
    return train, val


def generate_dataset(
    root: str | Path,
    n_sequences: int,
    n_frames: int,
    spec: SceneSpec,
    seed: int,
    depth_scale: float = DEFAULT_DEPTH_SCALE,
) -> List[str]:
    """Genera y escribe `n_sequences` secuencias; las semillas derivan de `seed`."""
    if n_sequences < 1:
        raise PreconditionError("n_sequences", f"debe ser >= 1, recibido {n_sequences}")
    seeds = np.random.SeedSequence(seed).generate_state(n_sequences)
    ids = []
    for i, s in enumerate(seeds):
        seq_id = f"seq_{i:04d}"
        sample = generate_synthetic_sequence(spec, n_frames, int(s), depth_scale)
        write_sequence(sample, root, seq_id)
        ids.append(seq_id)
    logger.info("generadas %d secuencias de %d frames en %s", n_sequences, n_frames, root)
    return ids


# ---------------------------------------------------------------------------
# Aumentaciones (una decisión por secuencia)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    angle_deg: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0


def draw_augment_params(seed: int) -> AugmentParams:
    """Sorteo único por secuencia: flip 50 %, ángulo en [-5, 5], razones en [0.6, 1.4]."""
    rng = np.random.default_rng(seed)
    flip = bool(rng.random() < 0.5)
    angle = float(rng.uniform(-5.0, 5.0))
    b, c, s = (float(v) for v in rng.uniform(0.6, 1.4, size=3))
    return AugmentParams(flip, angle, b, c, s)


def _gray(rgb: np.ndarray) -> np.ndarray:
    return rgb @ GRAY_WEIGHTS


def _rotate(sample: DepthSequenceSample, angle_deg: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, w = sample.height, sample.width
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle_deg, 1.0)
    size = (w, h)
    coverage = cv2.warpAffine(np.ones((h, w), np.uint8), m, size, flags=cv2.INTER_NEAREST,
                              borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    rgbs, depths, masks = [], [], []
    for i in range(sample.n_frames):
        rgbs.append(cv2.warpAffine(sample.rgb[i], m, size, flags=cv2.INTER_LINEAR,
                                   borderMode=cv2.BORDER_CONSTANT, borderValue=0))
        depths.append(cv2.warpAffine(sample.depth[i], m, size, flags=cv2.INTER_NEAREST,
                                     borderMode=cv2.BORDER_CONSTANT, borderValue=0))
        mask = cv2.warpAffine(sample.valid_mask[i].astype(np.uint8), m, size, flags=cv2.INTER_NEAREST,
                              borderMode=cv2.BORDER_CONSTANT, borderValue=0)
        masks.append((mask > 0) & (coverage > 0))
    return np.stack(rgbs), np.stack(depths), np.stack(masks)


def apply_augmentation(sample: DepthSequenceSample, params: AugmentParams) -> DepthSequenceSample:
    """
    Aplica las mismas transformaciones a todos los frames de la secuencia.

    La geometría (flip, rotación) se aplica igual a RGB, profundidad y
    máscara; la rotación marca como inválidos los píxeles expuestos. El
    color solo toca RGB; la profundidad nunca se escala.
    """
    rgb, depth, mask = sample.rgb, sample.depth, sample.valid_mask
    if params.flip:
        rgb = np.ascontiguousarray(rgb[:, :, ::-1])
        depth = np.ascontiguousarray(depth[:, :, ::-1])
        mask = np.ascontiguousarray(mask[:, :, ::-1])
    if params.angle_deg != 0.0:
        rotated = replace(sample, rgb=rgb, depth=depth, valid_mask=mask)
        rgb, depth, mask = _rotate(rotated, params.angle_deg)

    if params.brightness != 1.0:
        rgb = rgb * np.float32(params.brightness)
    if params.contrast != 1.0:
        mean = _gray(rgb).mean(axis=(1, 2), keepdims=True)[..., None]
        rgb = (rgb - mean) * np.float32(params.contrast) + mean
    if params.saturation != 1.0:
        gray = _gray(rgb)[..., None]
        rgb = gray + (rgb - gray) * np.float32(params.saturation)
    if (params.brightness, params.contrast, params.saturation) != (1.0, 1.0, 1.0):
        rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)

    return replace(sample, rgb=rgb, depth=depth, valid_mask=mask, frame_ids=list(sample.frame_ids))


def augment(sample: DepthSequenceSample, rng_seed: int) -> DepthSequenceSample:
    """Aumentación de entrenamiento determinista dada la semilla."""
    return apply_augmentation(sample, draw_augment_params(rng_seed))


# ---------------------------------------------------------------------------
# Redimensionado y recorte
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CropPolicy:
    """
    resize_to: (alto, ancho) tras el redimensionado, o None para conservar
    crop_to: (alto, ancho) del recorte
    mode: 'random' (entrenamiento) o 'center' (evaluación)
    """
    crop_to: Tuple[int, int]
    resize_to: Optional[Tuple[int, int]] = None
    mode: str = "center"
    seed: int = 0


def crop_resize(sample: DepthSequenceSample, policy: CropPolicy) -> DepthSequenceSample:
    """
    Redimensiona (bilineal para RGB, vecino más cercano para profundidad y
    máscara) y luego recorta la misma ventana en todos los frames.
    """
    h, w = sample.height, sample.width
    rh, rw = policy.resize_to if policy.resize_to is not None else (h, w)
    ch, cw = policy.crop_to
    if rh > h or rw > w:
        raise PreconditionError("resize_to", f"{(rh, rw)} excede la resolución original {(h, w)}")
    if ch > rh or cw > rw:
        raise PreconditionError("crop_to", f"{(ch, cw)} excede el frame redimensionado {(rh, rw)}")
    if ch < 1 or cw < 1:
        raise PreconditionError("crop_to", f"dimensiones inválidas {(ch, cw)}")

    rgb, depth, mask = sample.rgb, sample.depth, sample.valid_mask
    if (rh, rw) != (h, w):
        size = (rw, rh)
        rgb = np.stack([cv2.resize(f, size, interpolation=cv2.INTER_LINEAR) for f in rgb])
        depth = np.stack([cv2.resize(f, size, interpolation=cv2.INTER_NEAREST) for f in depth])
        mask = np.stack([cv2.resize(f.astype(np.uint8), size, interpolation=cv2.INTER_NEAREST) > 0 for f in mask])

    if policy.mode == "center":
        top, left = (rh - ch) // 2, (rw - cw) // 2
    elif policy.mode == "random":
        rng = np.random.default_rng(policy.seed)
        top = int(rng.integers(0, rh - ch + 1))
        left = int(rng.integers(0, rw - cw + 1))
    else:
        raise PreconditionError("mode", f"modo de recorte desconocido '{policy.mode}'")

    window = (slice(None), slice(top, top + ch), slice(left, left + cw))
    return replace(
        sample,
        rgb=np.ascontiguousarray(rgb[window]),
        depth=np.ascontiguousarray(depth[window]),
        valid_mask=np.ascontiguousarray(mask[window]),
        frame_ids=list(sample.frame_ids),
    )
