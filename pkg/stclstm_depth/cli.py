"""
================================================================================
Archivo: cli.py
--------------------------------------------------------------------------------
Interfaz de línea de comandos `stdepth`.
================================================================================

Comandos:
    gen-data   genera un dataset sintético en --out
    train      entrena sobre --data y guarda checkpoint y log en --out
    eval       evalúa un checkpoint sobre --data (MetricReport en texto y JSON)
    predict    escribe profundidades (y opcionalmente colormaps) en --out
    bench      mide S-mode / PS-mode
    ablate     experimento de ablación 2DCNN / ST-CLSTM / ST-CLSTM + GAN

Opciones comunes: --config <archivo key = value>, --seed, --out, -v.

Códigos de salida:
    0  éxito
    2  argumentos, configuración o precondición inválidos
    3  error de E/S (dataset, checkpoint)
    4  divergencia numérica durante el entrenamiento

Ejemplo:
    stdepth gen-data --out data/train --sequences 40 --frames 10 --seed 1
    stdepth train --data data/train --out runs/a --config train.cfg
    stdepth eval --checkpoint runs/a/checkpoint.stckpt --data data/test
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import torch

from .checkpoint import load_checkpoint, restore_generator, save_checkpoint
from .config import ConfigFile, build_dataclass, check_unknown_keys, dataclass_keys, load_config
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetFormatError,
    DatasetIOError,
    DegenerateInputError,
    DivergenceError,
    PreconditionError,
)
from .inference import MODES, benchmark, predict
from .model import build_depth_net
from .pipeline import TrainConfig, Trainer, evaluate, run_ablation
from .synthdata import DEFAULT_DEPTH_SCALE, SceneSpec, generate_dataset, generate_synthetic_sequence

logger = logging.getLogger("stclstm_depth")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

SCENE_PREFIX = "scene."


@dataclass(frozen=True)
class GenDataConfig:
    """Tamaño del dataset generado; `scene.seed` separa su semilla de la del entrenamiento."""
    n_sequences: int = 20
    sequence_length: int = 20
    seed: int = 0
    depth_scale: float = DEFAULT_DEPTH_SCALE


def known_config_keys() -> set[str]:
    keys = dataclass_keys(TrainConfig) | dataclass_keys(SceneSpec) | dataclass_keys(SceneSpec, SCENE_PREFIX)
    return keys | dataclass_keys(GenDataConfig) | dataclass_keys(GenDataConfig, SCENE_PREFIX)


def read_config(path: Optional[str]) -> Optional[ConfigFile]:
    if path is None:
        return None
    config = load_config(path)
    check_unknown_keys(config, known_config_keys())
    return config


def setup_logging(verbose: bool, out_dir: Optional[Path] = None) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(out_dir / "log.txt", encoding="utf-8"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stdepth", description="Estimación de profundidad en video con ST-CLSTM")
    parser.add_argument("-v", "--verbose", action="store_true", help="Mensajes de depuración")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
        p.add_argument("--config", help="Archivo de configuración key = value")
        p.add_argument("--seed", type=int, help="Semilla (sobrescribe la del archivo)")
        p.add_argument("--out", required=out_required, help="Directorio de salida")

    p = sub.add_parser("gen-data", help="Generar un dataset sintético")
    common(p, out_required=True)
    p.add_argument("--sequences", type=int, help="Número de secuencias")
    p.add_argument("--frames", type=int, help="Frames por secuencia")

    p = sub.add_parser("train", help="Entrenar el modelo")
    common(p)
    p.add_argument("--data", required=True, help="Raíz del dataset de entrenamiento")
    p.add_argument("--epochs", type=int, help="Número de épocas")
    p.add_argument("--frames", type=int, help="Frames por clip de entrenamiento")
    p.add_argument("--no-gan", action="store_true", help="Sin discriminador (solo L_spatial)")
    p.add_argument("--no-clstm", action="store_true", help="Cabeza 2D base en lugar de la CLSTM")
    p.add_argument("--no-progress", action="store_true", help="Sin barras de progreso")

    p = sub.add_parser("eval", help="Evaluar un checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--frames", type=int, default=16, help="Longitud de las ventanas temporales")

    p = sub.add_parser("predict", help="Predecir profundidades")
    common(p, out_required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="Secuencia (con rgb/) o raíz con secuencias")
    p.add_argument("--colormap", action="store_true", help="Escribir también frames con colormap")
    p.add_argument("--chunk", type=int, default=120)

    p = sub.add_parser("bench", help="Throughput S-mode / PS-mode")
    common(p)
    p.add_argument("--checkpoint", help="Checkpoint; si se omite se usa un modelo inicializado con --seed")
    p.add_argument("--preset", default="tiny")
    p.add_argument("--mode", choices=list(MODES) + ["both"], default="both")
    p.add_argument("--frames", type=int, default=220)
    p.add_argument("--chunk", type=int, default=120)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--workers", type=int, help="Hilos de ps_mode (por defecto uno por núcleo, hasta 4)")

    p = sub.add_parser("ablate", help="Ablación de variantes")
    common(p, out_required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--frame-counts", type=int, nargs="*", help="Longitudes de clip para las variantes con CLSTM")
    p.add_argument("--eval-frames", type=int, default=16)
    return parser


def cmd_gen_data(args: argparse.Namespace, config: Optional[ConfigFile]) -> int:
    spec = build_dataclass(SceneSpec, config, prefix=SCENE_PREFIX)
    gen = build_dataclass(
        GenDataConfig,
        config,
        prefix=SCENE_PREFIX,
        overrides={"seed": args.seed, "n_sequences": args.sequences, "sequence_length": args.frames},
    )
    ids = generate_dataset(args.out, gen.n_sequences, gen.sequence_length, spec, gen.seed, gen.depth_scale)
    print(f"{len(ids)} secuencias escritas en {args.out}")
    return EXIT_OK


def train_config_from_args(args: argparse.Namespace, config: Optional[ConfigFile]) -> TrainConfig:
    overrides = {"seed": args.seed, "epochs": args.epochs, "n_frames": args.frames}
    if args.no_gan:
        overrides["use_gan"] = False
    if args.no_clstm:
        overrides["use_clstm"] = False
    if args.no_progress:
        overrides["progress"] = False
    return build_dataclass(TrainConfig, config, overrides=overrides)


def cmd_train(args: argparse.Namespace, config: Optional[ConfigFile]) -> int:
    cfg = train_config_from_args(args, config)
    out = Path(args.out) if args.out else None
    trainer = Trainer(cfg, args.data, out)
    try:
        result = trainer.train()
    except DivergenceError as exc:
        if out is not None and exc.bundle is not None:
            path = out / "last_finite.stckpt"
            save_checkpoint(exc.bundle, path)
            print(f"Último checkpoint finito guardado en {path}", file=sys.stderr)
        raise
    if result.checkpoint_path is not None:
        print(f"Checkpoint: {result.checkpoint_path}")
    last = result.history[-1] if result.history else None
    if last is not None and last.validation is not None:
        print(last.validation.to_text(), end="")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: Optional[ConfigFile]) -> int:
    bundle = load_checkpoint(args.checkpoint)
    report = evaluate(bundle, args.data, args.frames)
    print(report.to_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.to_json(out / "metrics.json")
        report.to_text(out / "metrics.txt")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, config: Optional[ConfigFile]) -> int:
    bundle = load_checkpoint(args.checkpoint)
    n = predict(bundle, args.input, args.out, emit_colormap=args.colormap, chunk=args.chunk)
    print(f"{n} frames escritos en {args.out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: Optional[ConfigFile]) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.checkpoint:
        model = restore_generator(load_checkpoint(args.checkpoint))
    else:
        cfg = build_dataclass(TrainConfig, config, overrides={"preset": args.preset})
        model = build_depth_net(cfg.backbone_config, cfg.use_clstm, seed, cfg.d_min)
    spec = build_dataclass(SceneSpec, config, prefix=SCENE_PREFIX)
    sample = generate_synthetic_sequence(spec, args.frames, seed)
    frames = torch.from_numpy(sample.rgb.transpose(0, 3, 1, 2).copy())
    modes = list(MODES) if args.mode == "both" else [args.mode]
    reports = []
    for mode in modes:
        report = benchmark(model, frames, mode, args.chunk, args.warmup, args.repeats, workers=args.workers)
        reports.append(report)
        print(report.summary())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, config: Optional[ConfigFile]) -> int:
    cfg = build_dataclass(TrainConfig, config, overrides={"progress": False})
    result = run_ablation(
        cfg,
        args.train_data,
        args.eval_data,
        seeds=args.seeds,
        frame_counts=args.frame_counts or None,
        n_frames_eval=args.eval_frames,
        out_dir=args.out,
    )
    print(result.to_text(), end="")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Ejecuta un comando y devuelve el código de salida."""
    args = build_parser().parse_args(argv)
    log_dir = Path(args.out) if args.out and args.command in ("train", "ablate") else None
    setup_logging(args.verbose, log_dir)
    try:
        config = read_config(args.config)
        if args.seed is not None:
            torch.manual_seed(args.seed)
        return COMMANDS[args.command](args, config)
    except DivergenceError as e:
        print(f"Divergencia: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, PreconditionError, DegenerateInputError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetIOError, DatasetFormatError, CheckpointError, OSError) as e:
        print(f"Error de E/S: {e}", file=sys.stderr)
        return EXIT_IO


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
