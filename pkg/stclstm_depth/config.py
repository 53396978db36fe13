"""
MÓDULO DE CONFIGURACIÓN (archivos key = value)


PROPÓSITO:
Lee archivos de configuración con una entrada `clave = valor` por línea y
construye con ellos las dataclasses de configuración del paquete
(TrainConfig, SceneSpec, ...).

FORMATO:
    # comentario de línea completa
    epochs = 20            # comentario al final de la línea
    crop = 64, 64          # tuplas separadas por comas (o entre paréntesis)
    use_gan = true         # booleanos: true/false, yes/no, 1/0
    scene.seed = 3         # prefijo para desambiguar claves compartidas

ALGORITMO:
Escaneo línea por línea con seguimiento de línea y columna, igual que un
analizador léxico: cada error reporta la posición exacta con un indicador (^).

EJEMPLO DE USO:
    cfg = load_config("train.cfg")
    train = build_dataclass(TrainConfig, cfg)
    scene = build_dataclass(SceneSpec, cfg, prefix="scene.")
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Type, TypeVar

from .errors import ConfigError

T = TypeVar("T")

TRUE_WORDS = {"true", "yes", "on", "1"}
FALSE_WORDS = {"false", "no", "off", "0"}
NONE_WORDS = {"none", "null", ""}


@dataclass(frozen=True)
class ConfigEntry:
    """Una entrada del archivo con su posición (para mensajes de error)."""
    key: str
    raw: str
    line: int
    column: int


@dataclass
class ConfigFile:
    """Entradas leídas más el texto fuente original."""
    entries: Dict[str, ConfigEntry] = field(default_factory=dict)
    source: Optional[str] = None
    path: Optional[str] = None

    def get(self, key: str) -> Optional[ConfigEntry]:
        return self.entries.get(key)

    def keys(self) -> Iterable[str]:
        return self.entries.keys()


class ConfigReader:
    """
    Escáner de archivos key = value.

    Mantiene la línea actual para reportar errores con contexto, igual que
    el lexer de un compilador mantiene línea y columna.
    """

    def __init__(self, source: str) -> None:
        self.source = source
        self.line = 0

    def _error(self, message: str, column: int) -> ConfigError:
        return ConfigError(message, self.source, self.line, column)

    def read(self) -> Dict[str, ConfigEntry]:
        entries: Dict[str, ConfigEntry] = {}
        for self.line, text in enumerate(self.source.splitlines(), start=1):
            # Quitar comentarios; '#' no aparece en valores válidos
            content = text.split("#", 1)[0]
            if not content.strip():
                continue
            if "=" not in content:
                col = len(content) - len(content.lstrip()) + 1
                raise self._error("se esperaba 'clave = valor'", col)
            key_part, value_part = content.split("=", 1)
            key = key_part.strip()
            key_col = len(key_part) - len(key_part.lstrip()) + 1
            if not key:
                raise self._error("clave vacía", key_col)
            if not all(ch.isalnum() or ch in "._-" for ch in key):
                raise self._error(f"clave inválida '{key}'", key_col)
            key = key.replace("-", "_")
            if key in entries:
                raise self._error(f"clave duplicada '{key}'", key_col)
            value_col = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
            entries[key] = ConfigEntry(key, value_part.strip(), self.line, value_col)
        return entries


def parse_config_text(text: str, path: Optional[str] = None) -> ConfigFile:
    """Lee el texto de un archivo de configuración."""
    return ConfigFile(ConfigReader(text).read(), source=text, path=path)


def load_config(path: str | Path) -> ConfigFile:
    """Lee un archivo de configuración desde disco."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text, path=str(path))


def _strip_optional(tp: Any) -> Tuple[Any, bool]:
    """Devuelve (tipo interno, es_opcional) para Optional[X]."""
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def coerce_value(raw: str, tp: Any) -> Any:
    """
    Convierte el texto de un valor al tipo del campo.

    Soporta int, float, bool, str, Optional[X] y tuplas (homogéneas o fijas).
    Lanza ValueError si la conversión no es posible.
    """
    inner, optional = _strip_optional(tp)
    text = raw.strip()
    if optional and text.lower() in NONE_WORDS:
        return None
    origin = typing.get_origin(inner)
    if origin in (tuple, list):
        body = text
        if body.startswith(("(", "[")) and body.endswith((")", "]")):
            body = body[1:-1]
        parts = [p.strip() for p in body.split(",") if p.strip()]
        args = typing.get_args(inner)
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(parts) != len(args):
                raise ValueError(f"se esperaban {len(args)} valores, hay {len(parts)}")
            values = [coerce_value(p, a) for p, a in zip(parts, args)]
        else:
            elem = args[0] if args else str
            values = [coerce_value(p, elem) for p in parts]
        return tuple(values) if origin is tuple else values
    if inner is bool:
        word = text.lower()
        if word in TRUE_WORDS:
            return True
        if word in FALSE_WORDS:
            return False
        raise ValueError(f"booleano inválido '{text}'")
    if inner is int:
        return int(text)
    if inner is float:
        return float(text)
    if inner is str:
        return text.strip("\"'")
    raise ValueError(f"tipo de campo no soportado: {inner}")


def dataclass_keys(cls: type, prefix: str = "") -> set[str]:
    """Claves que acepta una dataclass (con prefijo opcional)."""
    return {prefix + f.name for f in dataclasses.fields(cls)}


def build_dataclass(
    cls: Type[T],
    config: Optional[ConfigFile] = None,
    prefix: str = "",
    overrides: Optional[Mapping[str, Any]] = None,
    base: Optional[T] = None,
) -> T:
    """
    Construye una instancia de `cls` a partir del archivo y de overrides.

    Precedencia (de menor a mayor): valores por defecto / `base`, claves sin
    prefijo del archivo, claves con `prefix`, `overrides` (flags de CLI).
    Las claves que no pertenecen a `cls` se ignoran aquí; use
    `check_unknown_keys` para rechazarlas.
    """
    hints = typing.get_type_hints(cls)
    values: Dict[str, Any] = dataclasses.asdict(base) if base is not None else {}
    for f in dataclasses.fields(cls):
        if not f.init:
            continue
        for key in (f.name, prefix + f.name) if prefix else (f.name,):
            entry = config.get(key) if config is not None else None
            if entry is None:
                continue
            try:
                values[f.name] = coerce_value(entry.raw, hints[f.name])
            except ValueError as exc:
                raise ConfigError(
                    f"valor inválido para '{entry.key}': {exc}",
                    config.source if config else None,
                    entry.line,
                    entry.column,
                ) from exc
    for name, value in (overrides or {}).items():
        if value is not None and name in hints:
            values[name] = value
    init_names = {f.name for f in dataclasses.fields(cls) if f.init}
    return cls(**{k: v for k, v in values.items() if k in init_names})


def check_unknown_keys(config: ConfigFile, known: Iterable[str]) -> None:
    """Lanza ConfigError en la primera clave que ningún consumidor reconoce."""
    allowed = set(known)
    for key, entry in config.entries.items():
        if key not in allowed:
            raise ConfigError(f"clave desconocida '{key}'", config.source, entry.line, 1)
