"""
MÓDULO DE ERRORES


PROPÓSITO:
Define la jerarquía de excepciones del paquete y la utilidad para formatear
mensajes con contexto del archivo fuente (archivos de configuración).

JERARQUÍA:
    DepthError
    ├── PreconditionError       (precondición violada; nombra el campo)
    ├── DegenerateInputError    (máscaras vacías)
    ├── DatasetIOError          (archivo de frame ausente)
    ├── DatasetFormatError      (dimensiones RGB/profundidad incompatibles)
    ├── ConfigError             (archivo key = value mal formado)
    ├── CheckpointError
    │   ├── CheckpointCorruptError
    │   └── CheckpointVersionError
    └── DivergenceError         (pérdida no finita durante el entrenamiento)

EJEMPLO DE SALIDA (ConfigError):
    valor inválido para 'epochs': ...
    Línea 3, columna 10 (valor de 'epochs'):
    epochs = veinte
             ^~~~~~
"""

from __future__ import annotations

from typing import Any, Optional


def _token_width(content: str, column: int) -> int:
    rest = content[column - 1 :]
    if column <= content.find("=") + 1:
        rest = rest.split("=", 1)[0]
    return max(1, len(rest.rstrip()))


def _entry_role(content: str, column: int) -> str:
    if "=" not in content:
        return ""
    key = content.split("=", 1)[0].strip()
    if not key:
        return ""
    return f" (clave '{key}')" if column <= content.find("=") else f" (valor de '{key}')"


def format_error(source: Optional[str], line: int, column: int) -> str:
    """
    Formatea la posición de un error en un archivo `clave = valor`: la línea
    de origen y, debajo, el token señalado (la clave o el valor completo que
    empieza en `column`) subrayado con ^~~~.

    Parámetros:
        source: Texto completo del archivo (puede ser None)
        line: Línea del error (indexada desde 1)
        column: Columna del error (indexada desde 1)

    Si no hay fuente o la línea está fuera de rango, solo devuelve la posición.
    """
    lines = source.splitlines() if source is not None else []
    if not 1 <= line <= len(lines):
        return f"Error en {line}:{column}"

    text = lines[line - 1]
    content = text.split("#", 1)[0]
    col = max(1, column)
    underline = "^" + "~" * (_token_width(content, col) - 1) if col <= len(content) else "^"
    return f"Línea {line}, columna {column}{_entry_role(content, col)}:\n{text}\n{' ' * (col - 1)}{underline}"


class DepthError(Exception):
    """Clase base de todos los errores del paquete."""


class PreconditionError(DepthError, ValueError):
    """Se viola una precondición; el mensaje nombra el campo o argumento."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateInputError(DepthError, ValueError):
    """La máscara (o la máscara efectiva) no tiene píxeles válidos."""


class DatasetIOError(DepthError, OSError):
    """No se pudo leer un archivo del dataset."""

    def __init__(self, path: Any, message: str = "archivo no encontrado") -> None:
        self.path = str(path)
        super().__init__(f"{message}: {self.path}")


class DatasetFormatError(DepthError):
    """Contenido del dataset inconsistente (dimensiones, meta.json)."""


class ConfigError(DepthError):
    """Error de sintaxis o de tipo en un archivo de configuración."""

    def __init__(self, message: str, source: Optional[str] = None, line: int = 0, column: int = 0) -> None:
        self.line = line
        self.column = column
        if line > 0:
            message = f"{message}\n{format_error(source, line, column)}"
        super().__init__(message)


class CheckpointError(DepthError):
    """Error genérico al leer o escribir un checkpoint."""


class CheckpointCorruptError(CheckpointError):
    """Archivo truncado, cabecera ilegible o hash de payload distinto."""


class CheckpointVersionError(CheckpointError):
    """La versión del formato no coincide con la soportada."""

    def __init__(self, expected: int, found: int) -> None:
        self.expected = expected
        self.found = found
        super().__init__(f"versión de checkpoint incompatible: se esperaba {expected}, se encontró {found}")


class DivergenceError(DepthError):
    """
    Pérdida no finita durante el entrenamiento.

    Atributos:
        bundle: último CheckpointBundle con parámetros finitos
        epoch, step: posición donde se detectó la divergencia
    """

    def __init__(self, message: str, bundle: Any = None, epoch: int = -1, step: int = -1) -> None:
        self.bundle = bundle
        self.epoch = epoch
        self.step = step
        super().__init__(f"divergencia numérica en epoch {epoch}, step {step}: {message}")
