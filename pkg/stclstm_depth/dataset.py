"""
Ventanas de n frames consecutivos como Dataset de PyTorch.

Cada secuencia en disco se corta en ventanas no solapadas de `n_frames`.
La aumentación y el recorte de cada ítem dependen solo de (seed, epoch,
índice), así que el orden y el contenido de los lotes son reproducibles con
cualquier número de workers.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .errors import PreconditionError
from .synthdata import CropPolicy, DepthSequenceSample, augment, crop_resize, load_sequence, sequence_length


def derive_seed(*parts: int) -> int:
    """Semilla de 32 bits derivada de forma estable de varios enteros."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def sample_to_tensors(sample: DepthSequenceSample) -> Dict[str, torch.Tensor]:
    """(n, H, W, 3) numpy -> tensores (n, 3, H, W), (n, 1, H, W), (n, 1, H, W)."""
    rgb = torch.from_numpy(np.ascontiguousarray(sample.rgb.transpose(0, 3, 1, 2)))
    depth = torch.from_numpy(np.ascontiguousarray(sample.depth))[:, None]
    mask = torch.from_numpy(np.ascontiguousarray(sample.valid_mask))[:, None]
    return {"rgb": rgb.float(), "depth": depth.float(), "mask": mask}


class SequenceClipDataset(Dataset):
    """
    Dataset de ventanas de `n_frames` frames.

    Parámetros:
        root: raíz del dataset
        sequence_ids: secuencias a usar
        n_frames: longitud de cada ventana
        crop: política de recorte (modo 'random' en entrenamiento, 'center' en evaluación)
        augment: aplica flip/rotación/color por secuencia
        seed: semilla base
    """

    def __init__(
        self,
        root: str | Path,
        sequence_ids: Sequence[str],
        n_frames: int,
        crop: Optional[CropPolicy] = None,
        augment: bool = False,
        seed: int = 0,
    ) -> None:
        if n_frames < 1:
            raise PreconditionError("n_frames", f"debe ser >= 1, recibido {n_frames}")
        self.root = Path(root)
        self.n_frames = n_frames
        self.crop = crop
        self.augment = augment
        self.seed = seed
        self.epoch = 0
        self.windows: List[Tuple[str, int]] = []
        for sid in sequence_ids:
            length = sequence_length(self.root, sid)
            for start in range(0, length - n_frames + 1, n_frames):
                self.windows.append((sid, start))
        if not self.windows:
            raise PreconditionError("n_frames", f"ninguna secuencia tiene {n_frames} frames en {self.root}")

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.windows)

    def load_sample(self, index: int) -> DepthSequenceSample:
        sid, start = self.windows[index]
        sample = load_sequence(self.root, sid, start, self.n_frames)
        item_seed = derive_seed(self.seed, self.epoch, index)
        if self.augment:
            sample = augment(sample, item_seed)
        if self.crop is not None:
            sample = crop_resize(sample, replace(self.crop, seed=item_seed + 1))
        return sample

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        return sample_to_tensors(self.load_sample(index))


def _seed_worker(worker_id: int) -> None:
    # Cada worker hereda una semilla distinta pero reproducible
    worker_seed = torch.initial_seed() % 2**32
    np.random.seed(worker_seed)


def make_loader(
    dataset: Dataset,
    batch_size: int,
    shuffle: bool,
    seed: int,
    num_workers: int = 0,
) -> DataLoader:
    """DataLoader con barajado ligado a un torch.Generator sembrado."""
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        num_workers=num_workers,
        generator=generator,
        worker_init_fn=_seed_worker if num_workers > 0 else None,
        drop_last=False,
    )
