"""
================================================================================
Archivo: checkpoint.py
--------------------------------------------------------------------------------
Contenedor de checkpoints en un solo archivo: cabecera con el manifiesto de
arreglos y metadatos, seguida de los payloads crudos.
================================================================================

Formato (todo little-endian):
    magic            8 bytes   b"STCKPT\\0\\0"
    format_version   u32
    header_length    u64
    header           JSON UTF-8:
                       {format_version,
                        arrays: [{name, shape, dtype, offset, nbytes}, ...],
                        metadata: {...},
                        payload_sha256}
    payloads         concatenados en el orden del manifiesto

Tipos de payload: float32 ("<f4") para reales, int64 ("<i8") para enteros.

Prefijos de nombres:
    generator.              parámetros y buffers de DepthNet
    discriminator.          parámetros y buffers de Discriminator3D
    optim.generator.        estado del optimizador del generador
    optim.discriminator.    estado del optimizador del discriminador
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch
import torch.nn as nn

from .adversary import DiscriminatorConfig, Discriminator3D, build_discriminator
from .backbone import BackboneConfig
from .errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError
from .model import DepthNet, build_depth_net

logger = logging.getLogger(__name__)

MAGIC = b"STCKPT\0\0"
FORMAT_VERSION = 1
PREFIX = struct.Struct("<8sIQ")

GENERATOR = "generator."
DISCRIMINATOR = "discriminator."
OPTIM_GENERATOR = "optim.generator."
OPTIM_DISCRIMINATOR = "optim.discriminator."

FLOAT_DTYPE = np.dtype("<f4")
INT_DTYPE = np.dtype("<i8")


def _normalize_array(values: Any) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "biu":
        return np.ascontiguousarray(arr, dtype=INT_DTYPE)
    return np.ascontiguousarray(arr, dtype=FLOAT_DTYPE)


@dataclass
class CheckpointBundle:
    """
    arrays: nombre -> arreglo (float32 o int64), en orden de escritura
    metadata: configuración del entrenamiento, del modelo, época y estado
              no tensorial de optimizadores y schedulers (JSON)
    """
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        self.arrays = {name: _normalize_array(arr) for name, arr in self.arrays.items()}

    @property
    def epoch(self) -> int:
        return int(self.metadata.get("epoch", 0))

    def group(self, prefix: str) -> Dict[str, np.ndarray]:
        """Arreglos con el prefijo dado, con el prefijo removido del nombre."""
        return {name[len(prefix):]: arr for name, arr in self.arrays.items() if name.startswith(prefix)}

    def has_discriminator(self) -> bool:
        return any(name.startswith(DISCRIMINATOR) for name in self.arrays)

    def equals(self, other: "CheckpointBundle") -> bool:
        """Igualdad bit a bit de arreglos y metadatos."""
        if self.format_version != other.format_version or self.metadata != other.metadata:
            return False
        if list(self.arrays) != list(other.arrays):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays.values(), other.arrays.values())
        )


def _module_arrays(module: nn.Module, prefix: str) -> Dict[str, np.ndarray]:
    return {prefix + name: t.detach().cpu().numpy() for name, t in module.state_dict().items()}


def _optimizer_arrays(optimizer: torch.optim.Optimizer, prefix: str) -> Dict[str, np.ndarray]:
    arrays = {}
    for index, state in optimizer.state_dict()["state"].items():
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                arrays[f"{prefix}{index}.{key}"] = value.detach().cpu().numpy()
            elif value is not None:
                arrays[f"{prefix}{index}.{key}"] = np.asarray(value)
    return arrays


def bundle_from_state(
    generator: DepthNet,
    discriminator: Optional[Discriminator3D] = None,
    gen_optimizer: Optional[torch.optim.Optimizer] = None,
    disc_optimizer: Optional[torch.optim.Optimizer] = None,
    schedulers: Optional[Dict[str, Any]] = None,
    train_config: Any = None,
    epoch: int = 0,
    extra: Optional[Dict[str, Any]] = None,
) -> CheckpointBundle:
    """Captura el estado completo (parámetros, optimizadores, configuración) en un bundle."""
    arrays: Dict[str, np.ndarray] = {}
    arrays.update(_module_arrays(generator, GENERATOR))
    metadata: Dict[str, Any] = {
        "epoch": int(epoch),
        "backbone": asdict(generator.config),
        "head_kind": generator.head_kind,
        "d_min": float(generator.head.d_min),
        "optimizers": {},
        "schedulers": {},
    }
    if train_config is not None:
        metadata["train_config"] = asdict(train_config)
    if discriminator is not None:
        arrays.update(_module_arrays(discriminator, DISCRIMINATOR))
        metadata["discriminator"] = asdict(discriminator.config)
    if gen_optimizer is not None:
        arrays.update(_optimizer_arrays(gen_optimizer, OPTIM_GENERATOR))
        metadata["optimizers"]["generator"] = gen_optimizer.state_dict()["param_groups"]
    if disc_optimizer is not None:
        arrays.update(_optimizer_arrays(disc_optimizer, OPTIM_DISCRIMINATOR))
        metadata["optimizers"]["discriminator"] = disc_optimizer.state_dict()["param_groups"]
    for name, scheduler in (schedulers or {}).items():
        metadata["schedulers"][name] = scheduler.state_dict()
    if extra:
        metadata.update(extra)
    # Normaliza tuplas a listas para que save -> load sea la identidad
    metadata = json.loads(json.dumps(metadata))
    return CheckpointBundle(arrays, metadata)


def _to_tensors(group: Dict[str, np.ndarray]) -> Dict[str, torch.Tensor]:
    return {name: torch.from_numpy(arr.copy()) for name, arr in group.items()}


def restore_generator(bundle: CheckpointBundle) -> DepthNet:
    meta = bundle.metadata
    try:
        cfg = dict(meta["backbone"])
        cfg["encoder_channels"] = tuple(cfg["encoder_channels"])
        config = BackboneConfig(**cfg)
        net = build_depth_net(config, use_clstm=meta["head_kind"] == "clstm", seed=0, d_min=meta["d_min"])
        net.load_state_dict(_to_tensors(bundle.group(GENERATOR)))
    except (KeyError, TypeError, RuntimeError) as exc:
        raise CheckpointError(f"el checkpoint no describe un generador válido: {exc}") from exc
    net.eval()
    return net


def restore_discriminator(bundle: CheckpointBundle) -> Optional[Discriminator3D]:
    if not bundle.has_discriminator():
        return None
    try:
        cfg = dict(bundle.metadata["discriminator"])
        cfg["block_channels"] = tuple(cfg["block_channels"])
        net = build_discriminator(DiscriminatorConfig(**cfg), seed=0)
        net.load_state_dict(_to_tensors(bundle.group(DISCRIMINATOR)))
    except (KeyError, TypeError, RuntimeError) as exc:
        raise CheckpointError(f"el checkpoint no describe un discriminador válido: {exc}") from exc
    return net


def restore_optimizer(optimizer: torch.optim.Optimizer, bundle: CheckpointBundle, which: str) -> None:
    """which: 'generator' o 'discriminator'."""
    prefix = OPTIM_GENERATOR if which == "generator" else OPTIM_DISCRIMINATOR
    groups = bundle.metadata.get("optimizers", {}).get(which)
    if groups is None:
        raise CheckpointError(f"el checkpoint no tiene estado de optimizador para '{which}'")
    state: Dict[int, Dict[str, torch.Tensor]] = {}
    for name, arr in bundle.group(prefix).items():
        index, key = name.split(".", 1)
        state.setdefault(int(index), {})[key] = torch.from_numpy(arr.copy())
    optimizer.load_state_dict({"state": state, "param_groups": groups})


def save_checkpoint(bundle: CheckpointBundle, path: str | Path) -> None:
    path = Path(path)
    manifest = []
    chunks = []
    offset = 0
    digest = hashlib.sha256()
    for name, arr in bundle.arrays.items():
        data = arr.tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(data)}
        )
        chunks.append(data)
        digest.update(data)
        offset += len(data)
    header = {
        "format_version": bundle.format_version,
        "arrays": manifest,
        "metadata": bundle.metadata,
        "payload_sha256": digest.hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(PREFIX.pack(MAGIC, bundle.format_version, len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)
    os.replace(tmp, path)
    logger.info("Checkpoint guardado en %s (%d arreglos, %d bytes)", path, len(manifest), offset)


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"no se encontró el checkpoint: {path}") from exc
    except OSError as exc:
        raise CheckpointError(f"no se pudo leer el checkpoint {path}: {exc}") from exc

    if len(blob) < PREFIX.size:
        raise CheckpointCorruptError(f"archivo truncado ({len(blob)} bytes): {path}")
    magic, version, header_length = PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointCorruptError(f"firma inválida {magic!r}: {path}")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(FORMAT_VERSION, version)
    header_end = PREFIX.size + header_length
    if header_end > len(blob):
        raise CheckpointCorruptError(f"cabecera truncada: {path}")
    try:
        header = json.loads(blob[PREFIX.size:header_end].decode("utf-8"))
        manifest = header["arrays"]
        metadata = header["metadata"]
        expected_digest = header["payload_sha256"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointCorruptError(f"cabecera ilegible: {exc}") from exc
    if header.get("format_version") != version:
        raise CheckpointVersionError(FORMAT_VERSION, header.get("format_version"))

    payload = memoryview(blob)[header_end:]
    total = sum(int(entry["nbytes"]) for entry in manifest)
    if len(payload) != total:
        raise CheckpointCorruptError(f"payload de {len(payload)} bytes, se esperaban {total}: {path}")
    if hashlib.sha256(payload).hexdigest() != expected_digest:
        raise CheckpointCorruptError(f"hash de payload distinto: {path}")

    arrays: Dict[str, np.ndarray] = {}
    for entry in manifest:
        try:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(s) for s in entry["shape"])
            start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointCorruptError(f"entrada de manifiesto inválida {entry!r}") from exc
        if dtype not in (FLOAT_DTYPE, INT_DTYPE) or int(np.prod(shape)) * dtype.itemsize != nbytes:
            raise CheckpointCorruptError(f"arreglo '{entry['name']}' con forma o tipo inconsistente")
        if start < 0 or start + nbytes > len(payload):
            raise CheckpointCorruptError(f"arreglo '{entry['name']}' fuera del payload")
        arrays[entry["name"]] = np.frombuffer(payload[start:start + nbytes], dtype=dtype).reshape(shape).copy()

    logger.debug("Checkpoint leído de %s (%d arreglos)", path, len(arrays))
    return CheckpointBundle(arrays, metadata, version)
