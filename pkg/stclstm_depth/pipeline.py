"""
================================================================================
Archivo: pipeline.py
--------------------------------------------------------------------------------
Orquestación del entrenamiento (actualizaciones alternadas de generador y
discriminador con warmup), evaluación sobre un dataset y el experimento de
ablación (2DCNN / ST-CLSTM / ST-CLSTM + GAN).
================================================================================

Paso de entrenamiento (un lote de secuencias de n_frames):
    1. backbone por frame + cabeza temporal -> profundidades
    2. L_spatial = l_depth + λ·l_grad + μ·l_normal
    3. si use_gan y terminó el warmup:
           L_temporal = -log D(clip generado);  L = L_spatial + α·L_temporal
       si no: L = L_spatial
    4. actualización del generador
    5. si use_gan y terminó el warmup: clips real y generado (con frames de
       ground truth mezclados con probabilidad p) -> actualización de D

Log de entrenamiento (TSV, una línea por paso, solo se agrega):
    epoch step l_depth l_grad l_normal l_spatial l_temporal l_total d_loss
Los valores ausentes (warmup, sin GAN) se escriben como `nan`.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.optim.lr_scheduler import StepLR
from tqdm import tqdm

from .adversary import (
    FAKE,
    REAL,
    DiscriminatorConfig,
    RgbdClip,
    build_discriminator,
    discriminator_loss_logits,
    generator_temporal_loss_logits,
    make_rgbd_clip,
    mix_ground_truth,
)
from .backbone import PRESETS, BackboneConfig
from .checkpoint import CheckpointBundle, bundle_from_state, restore_generator, save_checkpoint
from .dataset import SequenceClipDataset, derive_seed, make_loader, sample_to_tensors
from .errors import DegenerateInputError, DivergenceError, PreconditionError
from .losses import SpatialLossConfig, spatial_loss_terms, total_loss
from .metrics import MetricConfig, MetricReport, evaluate_predictions
from .model import DepthNet, build_depth_net, predict_depths
from .synthdata import CropPolicy, crop_resize, list_sequences, load_sequence, sequence_length, split_sequences

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "l_depth", "l_grad", "l_normal", "l_spatial", "l_temporal", "l_total", "d_loss")
LOG_FILE = "train_log.tsv"
CHECKPOINT_FILE = "checkpoint.stckpt"

VARIANTS: Dict[str, Tuple[bool, bool]] = {
    "2dcnn": (False, False),
    "st-clstm": (True, False),
    "st-clstm+gan": (True, True),
}


@dataclass(frozen=True)
class TrainConfig:
    """
    Hiperparámetros del entrenamiento.

    La tasa del generador decae por lr_decay_factor cada lr_decay_every
    épocas (lo mismo para el discriminador). disc_lr: 0.1 para escenas
    interiores, 0.01 para exteriores.
    """
    epochs: int = 20
    gen_lr: float = 1e-4
    disc_lr: float = 0.1
    lr_decay_every: int = 5
    lr_decay_factor: float = 0.1
    warmup_epochs: int = 1
    n_frames: int = 5
    batch_sequences: int = 4
    seed: int = 0
    use_clstm: bool = True
    use_gan: bool = True
    preset: str = "tiny"
    crop: Optional[Tuple[int, int]] = None
    resize: Optional[Tuple[int, int]] = None
    gen_weight_decay: float = 1e-4
    disc_momentum: float = 0.9
    alpha: float = 0.1
    lambda_grad: float = 1.0
    mu_normal: float = 1.0
    mix_prob: float = 0.25
    max_depth: float = 10.0
    d_min: float = 0.01
    val_fraction: float = 0.1
    num_workers: int = 0
    augment: bool = True
    max_steps_per_epoch: Optional[int] = None
    progress: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise PreconditionError("epochs", f"debe ser >= 1, recibido {self.epochs}")
        if self.n_frames < 1:
            raise PreconditionError("n_frames", f"debe ser >= 1, recibido {self.n_frames}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise PreconditionError(
                "warmup_epochs", f"debe cumplir 0 <= warmup_epochs < epochs ({self.warmup_epochs}, {self.epochs})"
            )
        if self.batch_sequences < 1:
            raise PreconditionError("batch_sequences", f"debe ser >= 1, recibido {self.batch_sequences}")
        if self.gen_lr <= 0 or self.disc_lr <= 0:
            raise PreconditionError("gen_lr", "las tasas de aprendizaje deben ser positivas")
        if self.lr_decay_every < 1 or not 0 < self.lr_decay_factor <= 1:
            raise PreconditionError("lr_decay_every", "lr_decay_every >= 1 y lr_decay_factor en (0, 1]")
        if self.preset not in PRESETS:
            raise PreconditionError("preset", f"preset desconocido '{self.preset}'")
        if self.use_gan and self.n_frames < 2:
            raise PreconditionError("n_frames", "el discriminador necesita clips de al menos 2 frames")
        if self.num_workers < 0:
            raise PreconditionError("num_workers", f"debe ser >= 0, recibido {self.num_workers}")
        if self.max_steps_per_epoch is not None and self.max_steps_per_epoch < 1:
            raise PreconditionError("max_steps_per_epoch", "debe ser >= 1 o none")

    @property
    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig.from_preset(self.preset)

    @property
    def loss_config(self) -> SpatialLossConfig:
        return SpatialLossConfig(lambda_grad=self.lambda_grad, mu_normal=self.mu_normal, alpha=self.alpha)

    @property
    def disc_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(mix_prob=self.mix_prob, max_depth=self.max_depth)

    def crop_policy(self, mode: str) -> Optional[CropPolicy]:
        if self.crop is None:
            return None
        return CropPolicy(crop_to=tuple(self.crop), resize_to=self.resize, mode=mode, seed=self.seed)


class TrainLogEntry(NamedTuple):
    epoch: int
    step: int
    l_depth: float
    l_grad: float
    l_normal: float
    l_spatial: float
    l_temporal: float
    l_total: float
    d_loss: float

    def to_line(self) -> str:
        values = [str(self.epoch), str(self.step)] + [f"{v:.9g}" for v in self[2:]]
        return "\t".join(values) + "\n"

    @property
    def adversarial(self) -> bool:
        return not math.isnan(self.d_loss)


@dataclass
class EpochSummary:
    epoch: int
    steps: int
    mean_spatial: float
    mean_temporal: float
    mean_d_loss: float
    gen_lr: float
    validation: Optional[MetricReport] = None


@dataclass
class TrainResult:
    bundle: CheckpointBundle
    log: List[TrainLogEntry] = field(default_factory=list)
    history: List[EpochSummary] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None


def read_training_log(path: str | Path) -> List[TrainLogEntry]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != len(LOG_COLUMNS):
            raise PreconditionError("log", f"línea con {len(parts)} columnas, se esperaban {len(LOG_COLUMNS)}")
        entries.append(TrainLogEntry(int(parts[0]), int(parts[1]), *(float(p) for p in parts[2:])))
    return entries


def _nanmean(values: Sequence[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


@torch.no_grad()
def predict_sequences(
    net: DepthNet,
    root: str | Path,
    sequence_ids: Sequence[str],
    n_frames_eval: int,
    crop: Optional[CropPolicy] = None,
) -> Tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray]]:
    """
    Infiere profundidades de secuencias completas en ventanas consecutivas de
    `n_frames_eval` frames (el estado temporal se reinicia en cada ventana).
    Devuelve (predicciones, ground truth, máscaras), cada una (n, H, W).
    """
    preds, gts, masks = [], [], []
    for sid in sequence_ids:
        length = sequence_length(root, sid)
        sample = load_sequence(root, sid, 0, length)
        if crop is not None:
            sample = crop_resize(sample, crop)
        rgb = sample_to_tensors(sample)["rgb"]
        chunks = [
            predict_depths(net, rgb[start:start + n_frames_eval][None])[0]
            for start in range(0, length, n_frames_eval)
        ]
        preds.append(torch.cat(chunks, dim=0)[:, 0].numpy().astype(np.float64))
        gts.append(sample.depth.astype(np.float64))
        masks.append(sample.valid_mask)
    return preds, gts, masks


class Trainer:
    """
    Dueño único del generador, el discriminador, sus optimizadores y
    schedulers. Adam para el generador, SGD con momentum para el
    discriminador.
    """

    def __init__(
        self,
        config: TrainConfig,
        dataset_root: str | Path,
        out_dir: Optional[str | Path] = None,
        metric_config: Optional[MetricConfig] = None,
    ) -> None:
        self.config = config
        self.root = Path(dataset_root)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.metric_config = metric_config or MetricConfig(max_depth=config.max_depth)
        self.loss_config = config.loss_config

        ids = list_sequences(self.root)
        if not ids:
            raise DegenerateInputError(f"no hay secuencias en {self.root}")
        self.train_ids, self.val_ids = split_sequences(ids, config.val_fraction, config.seed)
        self.train_set = SequenceClipDataset(
            self.root, self.train_ids, config.n_frames, config.crop_policy("random"), config.augment, config.seed
        )
        if config.use_gan:
            h, w = self.train_set.load_sample(0).depth.shape[-2:]
            if min(h, w) < 32:
                raise PreconditionError("crop", f"el discriminador necesita frames de al menos 32x32, hay {(h, w)}")

        self.generator = build_depth_net(config.backbone_config, config.use_clstm, config.seed, config.d_min)
        self.gen_opt = torch.optim.Adam(
            self.generator.parameters(), lr=config.gen_lr, betas=(0.9, 0.999), weight_decay=config.gen_weight_decay
        )
        self.gen_sched = StepLR(self.gen_opt, step_size=config.lr_decay_every, gamma=config.lr_decay_factor)
        self.discriminator = None
        self.disc_opt = None
        self.disc_sched = None
        if config.use_gan:
            self.discriminator = build_discriminator(config.disc_config, derive_seed(config.seed, 1))
            self.disc_opt = torch.optim.SGD(
                self.discriminator.parameters(), lr=config.disc_lr, momentum=config.disc_momentum
            )
            self.disc_sched = StepLR(self.disc_opt, step_size=config.lr_decay_every, gamma=config.lr_decay_factor)

        self.epoch = 0
        self.log: List[TrainLogEntry] = []
        self.history: List[EpochSummary] = []
        self.log_path = self.out_dir / LOG_FILE if self.out_dir is not None else None

    def snapshot(self, epoch: Optional[int] = None) -> CheckpointBundle:
        schedulers = {"generator": self.gen_sched}
        if self.disc_sched is not None:
            schedulers["discriminator"] = self.disc_sched
        return bundle_from_state(
            self.generator,
            self.discriminator,
            self.gen_opt,
            self.disc_opt,
            schedulers,
            self.config,
            self.epoch if epoch is None else epoch,
        )

    def is_adversarial(self, epoch: int) -> bool:
        return self.config.use_gan and epoch >= self.config.warmup_epochs

    def discriminator_clips(
        self, rgb: torch.Tensor, pred: torch.Tensor, depth: torch.Tensor, mask: torch.Tensor, epoch: int, step: int
    ) -> Tuple[RgbdClip, RgbdClip]:
        """Clip real (ground truth) y clip generado con frames reales mezclados, ambos enmascarados igual."""
        mixed = mix_ground_truth(pred, depth, self.config.mix_prob, derive_seed(self.config.seed, epoch, step, 7))
        real_clip = make_rgbd_clip(rgb, depth, self.config.max_depth, REAL, mask)
        fake_clip = make_rgbd_clip(rgb, mixed, self.config.max_depth, FAKE, mask)
        return real_clip, fake_clip

    def train_step(self, batch: Dict[str, torch.Tensor], epoch: int = 0, step: int = 0) -> TrainLogEntry:
        """Una actualización del generador y, pasado el warmup, una del discriminador."""
        rgb, depth, mask = batch["rgb"], batch["depth"], batch["mask"]
        adversarial = self.is_adversarial(epoch)
        self.generator.train()

        pred = self.generator(rgb)
        terms = spatial_loss_terms(pred, depth, mask, self.loss_config)
        temporal = None
        if adversarial:
            self.discriminator.train()
            fake_clip = make_rgbd_clip(rgb, pred, self.config.max_depth, FAKE, mask)
            temporal = generator_temporal_loss_logits(self.discriminator(fake_clip.volume()))
            loss = total_loss(terms.total, temporal, self.loss_config)
        else:
            loss = terms.total
        if not torch.isfinite(loss):
            raise DivergenceError(f"pérdida del generador = {loss.item()}", None, epoch, step)

        self.gen_opt.zero_grad()
        loss.backward()
        self.gen_opt.step()

        d_loss = math.nan
        if adversarial:
            real_clip, fake_clip = self.discriminator_clips(rgb, pred.detach(), depth, mask, epoch, step)
            b = rgb.shape[0]
            # Reales y generados en un solo lote: BatchNorm ve ambas distribuciones
            logits = self.discriminator(torch.cat([real_clip.volume(), fake_clip.volume()], dim=0))
            d_loss_t = discriminator_loss_logits(logits[:b], logits[b:])
            if not torch.isfinite(d_loss_t):
                raise DivergenceError(f"pérdida del discriminador = {d_loss_t.item()}", None, epoch, step)
            self.disc_opt.zero_grad()
            d_loss_t.backward()
            self.disc_opt.step()
            d_loss = d_loss_t.item()

        l_temporal = temporal.item() if temporal is not None else math.nan
        return TrainLogEntry(
            epoch,
            step,
            terms.depth.item(),
            terms.grad.item(),
            terms.normal.item(),
            terms.total.item(),
            l_temporal,
            loss.item(),
            d_loss,
        )

    def validate(self) -> Optional[MetricReport]:
        if not self.val_ids:
            return None
        length = min(sequence_length(self.root, sid) for sid in self.val_ids)
        window = max(2, min(self.metric_config.temporal_window, length))
        preds, gts, masks = predict_sequences(
            self.generator, self.root, self.val_ids, window, self.config.crop_policy("center")
        )
        return evaluate_predictions(preds, gts, masks, replace(self.metric_config, temporal_window=window))

    def _open_log(self):
        if self.log_path is None:
            return None
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        new_file = not self.log_path.exists() or self.log_path.stat().st_size == 0
        fh = open(self.log_path, "a", encoding="utf-8")
        if new_file:
            fh.write("# " + "\t".join(LOG_COLUMNS) + "\n")
        return fh

    def train(self) -> TrainResult:
        cfg = self.config
        logger.info(
            "Entrenando %s (gan=%s) con %d secuencias de entrenamiento y %d de validación",
            "ST-CLSTM" if cfg.use_clstm else "2DCNN",
            cfg.use_gan,
            len(self.train_ids),
            len(self.val_ids),
        )
        log_fh = self._open_log()
        try:
            for epoch in range(self.epoch, cfg.epochs):
                self.epoch = epoch
                last_finite = self.snapshot(epoch)
                self.train_set.set_epoch(epoch)
                loader = make_loader(
                    self.train_set, cfg.batch_sequences, True, derive_seed(cfg.seed, epoch), cfg.num_workers
                )
                entries: List[TrainLogEntry] = []
                iterator = tqdm(loader, desc=f"epoch {epoch + 1}/{cfg.epochs}", ncols=70, disable=not cfg.progress)
                for step, batch in enumerate(iterator):
                    if cfg.max_steps_per_epoch is not None and step >= cfg.max_steps_per_epoch:
                        break
                    try:
                        entry = self.train_step(batch, epoch, step)
                    except DivergenceError as exc:
                        logger.error("%s", exc)
                        exc.bundle = last_finite
                        raise
                    entries.append(entry)
                    if log_fh is not None:
                        log_fh.write(entry.to_line())
                    if cfg.progress:
                        iterator.set_postfix(loss=f"{entry.l_total:.4f}")
                self.log.extend(entries)

                gen_lr = self.gen_opt.param_groups[0]["lr"]
                self.gen_sched.step()
                if self.disc_sched is not None:
                    self.disc_sched.step()
                summary = EpochSummary(
                    epoch=epoch,
                    steps=len(entries),
                    mean_spatial=_nanmean([e.l_spatial for e in entries]),
                    mean_temporal=_nanmean([e.l_temporal for e in entries]),
                    mean_d_loss=_nanmean([e.d_loss for e in entries]),
                    gen_lr=gen_lr,
                    validation=self.validate(),
                )
                self.history.append(summary)
                logger.info(
                    "epoch %d: l_spatial=%.4f l_temporal=%.4f d_loss=%.4f lr=%.2e",
                    epoch + 1,
                    summary.mean_spatial,
                    summary.mean_temporal,
                    summary.mean_d_loss,
                    gen_lr,
                )
                if summary.validation is not None:
                    v = summary.validation
                    logger.info(
                        "validación epoch %d: rel=%.4f rms=%.4f δ1=%.4f tcc=%.4f tmc=%.4f",
                        epoch + 1, v.rel, v.rms, v.delta1, v.tcc, v.tmc,
                    )
        finally:
            if log_fh is not None:
                log_fh.close()

        self.epoch = cfg.epochs
        bundle = self.snapshot(cfg.epochs)
        checkpoint_path = None
        if self.out_dir is not None:
            checkpoint_path = self.out_dir / CHECKPOINT_FILE
            save_checkpoint(bundle, checkpoint_path)
        return TrainResult(bundle, list(self.log), list(self.history), checkpoint_path, self.log_path)


def train(
    config: TrainConfig,
    dataset_root: str | Path,
    out_dir: Optional[str | Path] = None,
) -> TrainResult:
    return Trainer(config, dataset_root, out_dir).train()


def evaluate(
    checkpoint: CheckpointBundle,
    dataset_root: str | Path,
    n_frames_eval: int = 16,
    sequence_ids: Optional[Sequence[str]] = None,
    metric_config: Optional[MetricConfig] = None,
) -> MetricReport:
    """Inferencia con el generador del checkpoint y agregación de todas las métricas."""
    if n_frames_eval < 2:
        raise PreconditionError("n_frames_eval", f"debe ser >= 2, recibido {n_frames_eval}")
    net = restore_generator(checkpoint)
    ids = list(sequence_ids) if sequence_ids is not None else list_sequences(dataset_root)
    if not ids:
        raise DegenerateInputError(f"no hay secuencias en {dataset_root}")
    if metric_config is None:
        max_depth = checkpoint.metadata.get("train_config", {}).get("max_depth", 10.0)
        metric_config = MetricConfig(max_depth=float(max_depth), temporal_window=n_frames_eval)
    else:
        metric_config = replace(metric_config, temporal_window=n_frames_eval)
    preds, gts, masks = predict_sequences(net, dataset_root, ids, n_frames_eval)
    report = evaluate_predictions(preds, gts, masks, metric_config)
    logger.info("Evaluadas %d secuencias (%d píxeles)", report.n_sequences, report.n_pixels)
    return report


@dataclass
class AblationRow:
    variant: str
    n_frames: int
    seed: int
    report: MetricReport


@dataclass
class AblationResult:
    rows: List[AblationRow] = field(default_factory=list)

    def select(self, variant: str, n_frames: Optional[int] = None) -> List[AblationRow]:
        return [r for r in self.rows if r.variant == variant and (n_frames is None or r.n_frames == n_frames)]

    def median(self, variant: str, metric: str, n_frames: Optional[int] = None) -> float:
        values = [getattr(r.report, metric) for r in self.select(variant, n_frames)]
        if not values:
            raise PreconditionError("variant", f"no hay resultados para '{variant}'")
        return float(statistics.median(values))

    def to_text(self) -> str:
        lines = ["variant\tn_frames\tseed\trel\trms\tdelta1\ttcc\ttmc"]
        for r in self.rows:
            m = r.report
            lines.append(
                f"{r.variant}\t{r.n_frames}\t{r.seed}\t{m.rel:.4f}\t{m.rms:.4f}\t{m.delta1:.4f}\t{m.tcc:.4f}\t{m.tmc:.4f}"
            )
        return "\n".join(lines) + "\n"


def run_ablation(
    config: TrainConfig,
    train_root: str | Path,
    eval_root: str | Path,
    seeds: Sequence[int] = (0, 1, 2),
    variants: Sequence[str] = tuple(VARIANTS),
    frame_counts: Optional[Sequence[int]] = None,
    n_frames_eval: int = 16,
    out_dir: Optional[str | Path] = None,
) -> AblationResult:
    """
    Entrena cada variante con el mismo presupuesto de pasos y evalúa sobre el
    conjunto reservado. `frame_counts` repite las variantes con CLSTM para
    varias longitudes de clip.
    """
    result = AblationResult()
    for variant in variants:
        if variant not in VARIANTS:
            raise PreconditionError("variants", f"variante desconocida '{variant}' (opciones: {sorted(VARIANTS)})")
        use_clstm, use_gan = VARIANTS[variant]
        counts = frame_counts if (frame_counts and use_clstm) else (config.n_frames,)
        for n_frames in counts:
            for seed in seeds:
                cfg = replace(config, use_clstm=use_clstm, use_gan=use_gan, n_frames=n_frames, seed=seed)
                run_dir = Path(out_dir) / f"{variant}_n{n_frames}_s{seed}" if out_dir is not None else None
                logger.info("Ablación: %s, n_frames=%d, seed=%d", variant, n_frames, seed)
                trained = Trainer(cfg, train_root, run_dir).train()
                report = evaluate(trained.bundle, eval_root, n_frames_eval)
                result.rows.append(AblationRow(variant, n_frames, seed, report))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.tsv").write_text(result.to_text(), encoding="utf-8")
    return result
