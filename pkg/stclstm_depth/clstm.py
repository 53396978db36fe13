"""
================================================================================
Archivo: clstm.py
--------------------------------------------------------------------------------
Núcleo temporal: celda CLSTM con compresión de las características del frame
anterior, ejecución de secuencias (por lotes y en línea) y la cabeza base 2D
sin información temporal, usada en la ablación.
================================================================================

Paso de la celda para el frame t (f^t con c canales):
    x_t  = concat(f^t, D(f^{t-1}))                 c + 8 canales
    f̂_t = σ(W_f * x_t + b_f)                        puerta de olvido
    i_t  = σ(W_i * x_t + b_i)                        puerta de entrada
    C̃_t = tanh(W_C * x_t + b_C)
    C_t  = f̂_t ⊙ C_{t-1} + i_t ⊙ C̃_t
    o_t  = σ(W_o * x_t + b_o)
    R_t  = refine(concat(o_t, tanh(C_t)))            mapa de 1 canal (logits)
    d^t  = upsample(softplus(R_t) + d_min)

En el primer frame la entrada "anterior" es D(f^1) (se duplica el primer
frame) y C_0 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import PreconditionError

COMPRESSED_CHANNELS = 8
REFINE_CHANNELS = 128
BASELINE_CHANNELS = (128, 128, 1)
GATE_ORDER = ("forget", "input", "candidate", "output")
D_MIN = 0.01

BatchApply = Callable[[Callable[[torch.Tensor], torch.Tensor], torch.Tensor], torch.Tensor]


def apply_batch(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    return fn(x)


@dataclass
class ClstmState:
    """Memoria de la celda C (B, hidden, h, w) y D(f^{t-1}) (B, 8, h, w)."""
    cell: torch.Tensor
    prev_features_compressed: torch.Tensor


class ClstmGates(NamedTuple):
    forget: torch.Tensor
    input: torch.Tensor
    candidate: torch.Tensor
    output: torch.Tensor


def to_depth(logits: torch.Tensor, output_size: Optional[Tuple[int, int]], d_min: float = D_MIN) -> torch.Tensor:
    """softplus(logits) + d_min y upsample bilineal a `output_size` (si se da)."""
    depth = F.softplus(logits) + d_min
    if output_size is not None and tuple(depth.shape[-2:]) != tuple(output_size):
        depth = F.interpolate(depth, size=tuple(output_size), mode="bilinear", align_corners=False)
    return depth


def _check_sequence(features: torch.Tensor) -> None:
    if features.dim() != 5:
        raise PreconditionError("features", f"se espera (B, n, c, h, w), recibido {tuple(features.shape)}")
    if features.shape[1] < 1:
        raise PreconditionError("features", "la secuencia está vacía")


class ClstmParams(nn.Module):
    """
    Parámetros de la ST-CLSTM.

    gate_conv: W_f, W_i, W_C, W_o y sus sesgos apilados en una sola conv 3x3
    sobre c + 8 canales, con salida 4 * hidden en el orden de GATE_ORDER.
    compress_prev: D, conv 1x1 de c a 8 canales.
    refine: conv 3x3 -> 128 canales, ReLU, conv 3x3 -> 1 canal.
    """

    kind = "clstm"

    def __init__(self, feature_channels: int, hidden_channels: Optional[int] = None, d_min: float = D_MIN) -> None:
        super().__init__()
        if feature_channels < 1:
            raise PreconditionError("feature_channels", f"debe ser positivo, recibido {feature_channels}")
        self.feature_channels = feature_channels
        self.hidden_channels = hidden_channels or feature_channels
        self.d_min = d_min
        cin = feature_channels + COMPRESSED_CHANNELS
        hidden = self.hidden_channels
        self.gate_conv = nn.Conv2d(cin, len(GATE_ORDER) * hidden, 3, padding=1)
        self.compress_prev = nn.Conv2d(feature_channels, COMPRESSED_CHANNELS, 1)
        self.refine = nn.Sequential(
            nn.Conv2d(2 * hidden, REFINE_CHANNELS, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(REFINE_CHANNELS, 1, 3, padding=1),
        )

    def initial_state(self, first_features: torch.Tensor) -> ClstmState:
        b, _, h, w = first_features.shape
        cell = first_features.new_zeros((b, self.hidden_channels, h, w))
        return ClstmState(cell, self.compress_prev(first_features))

    def _check_step(self, f_t: torch.Tensor, state: ClstmState) -> None:
        if f_t.dim() != 4 or f_t.shape[1] != self.feature_channels:
            raise PreconditionError(
                "f_t", f"se espera (B, {self.feature_channels}, h, w), recibido {tuple(f_t.shape)}"
            )
        if state.cell.shape[0] != f_t.shape[0] or state.cell.shape[-2:] != f_t.shape[-2:]:
            raise PreconditionError(
                "state", f"estado {tuple(state.cell.shape)} incompatible con f_t {tuple(f_t.shape)}"
            )
        if state.prev_features_compressed.shape[-2:] != f_t.shape[-2:]:
            raise PreconditionError("state", "D(f^{t-1}) no coincide con la grilla de f_t")

    def gate_params(self, name: str) -> Tuple[torch.Tensor, torch.Tensor]:
        """Vistas (peso, sesgo) de una puerta dentro de gate_conv."""
        k = GATE_ORDER.index(name)
        rows = slice(k * self.hidden_channels, (k + 1) * self.hidden_channels)
        return self.gate_conv.weight[rows], self.gate_conv.bias[rows]

    def _activate(self, pre: torch.Tensor) -> ClstmGates:
        forget, input_, candidate, output = pre.split(self.hidden_channels, dim=1)
        return ClstmGates(torch.sigmoid(forget), torch.sigmoid(input_), torch.tanh(candidate), torch.sigmoid(output))

    def gates(self, f_t: torch.Tensor, state: ClstmState) -> ClstmGates:
        x = torch.cat([f_t, state.prev_features_compressed], dim=1)
        return self._activate(self.gate_conv(x))

    def cell_step(self, f_t: torch.Tensor, state: ClstmState) -> Tuple[torch.Tensor, ClstmState]:
        """Un paso de la celda: devuelve (logits (B, 1, h, w), nuevo estado)."""
        self._check_step(f_t, state)
        g = self.gates(f_t, state)
        cell = g.forget * state.cell + g.input * g.candidate
        logits = self.refine(torch.cat([g.output, torch.tanh(cell)], dim=1))
        # El siguiente paso ve las características comprimidas del frame ACTUAL
        return logits, ClstmState(cell, self.compress_prev(f_t))

    def chunk_step(
        self, features: torch.Tensor, state: ClstmState, apply: BatchApply = apply_batch
    ) -> Tuple[torch.Tensor, ClstmState]:
        """
        Avanza la celda sobre n frames consecutivos de una misma secuencia,
        features (n, c, h, w) con estado de lote 1. D, las puertas y refine no
        dependen de C, así que se evalúan para todo el bloque; solo la
        actualización de C recorre los frames en orden. Da los mismos valores
        que n llamadas a cell_step.

        `apply(fn, x)` evalúa esas partes por lotes (por ejemplo repartidas en
        hilos); debe devolver lo mismo que fn(x).
        """
        if state.cell.shape[0] != 1:
            raise PreconditionError("state", f"chunk_step avanza una sola secuencia, lote {state.cell.shape[0]}")
        if features.dim() != 4 or features.shape[0] < 1:
            raise PreconditionError("features", f"se espera (n, c, h, w) con n >= 1, recibido {tuple(features.shape)}")
        self._check_step(features[:1], state)
        compressed = apply(self.compress_prev, features)
        prev = torch.cat([state.prev_features_compressed, compressed[:-1]], dim=0)
        pre = apply(self.gate_conv, torch.cat([features, prev], dim=1))
        cell = state.cell
        refine_in = []
        for j in range(features.shape[0]):
            g = self._activate(pre[j : j + 1])
            cell = g.forget * cell + g.input * g.candidate
            refine_in.append(torch.cat([g.output, torch.tanh(cell)], dim=1))
        logits = apply(self.refine, torch.cat(refine_in, dim=0))
        return logits, ClstmState(cell, compressed[-1:])

    def forward(self, features: torch.Tensor, output_size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
        """(B, n, c, h, w) -> profundidades (B, n, 1, H, W), estrictamente de izquierda a derecha."""
        _check_sequence(features)
        state = self.initial_state(features[:, 0])
        depths = []
        for t in range(features.shape[1]):
            logits, state = self.cell_step(features[:, t], state)
            depths.append(to_depth(logits, output_size, self.d_min))
        return torch.stack(depths, dim=1)


class BaselineHead(nn.Module):
    """
    Cabeza 2D sin acoplamiento temporal: tres convoluciones de 128, 128 y 1
    canales aplicadas a cada frame por separado.
    """

    kind = "baseline"

    def __init__(self, feature_channels: int, d_min: float = D_MIN) -> None:
        super().__init__()
        self.feature_channels = feature_channels
        self.d_min = d_min
        c1, c2, c3 = BASELINE_CHANNELS
        self.layers = nn.Sequential(
            nn.Conv2d(feature_channels, c1, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c2, c3, 3, padding=1),
        )

    def frame_logits(self, f_t: torch.Tensor) -> torch.Tensor:
        if f_t.dim() != 4 or f_t.shape[1] != self.feature_channels:
            raise PreconditionError(
                "f_t", f"se espera (B, {self.feature_channels}, h, w), recibido {tuple(f_t.shape)}"
            )
        return self.layers(f_t)

    def forward(self, features: torch.Tensor, output_size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
        _check_sequence(features)
        b, n = features.shape[:2]
        logits = self.frame_logits(features.flatten(0, 1))
        depth = to_depth(logits, output_size, self.d_min)
        return depth.unflatten(0, (b, n))


def clstm_cell_step(f_t: torch.Tensor, state: ClstmState, params: ClstmParams) -> Tuple[torch.Tensor, ClstmState]:
    return params.cell_step(f_t, state)


def run_sequence(
    features: torch.Tensor,
    params: ClstmParams,
    output_size: Optional[Tuple[int, int]] = None,
) -> torch.Tensor:
    return params(features, output_size)


def baseline_head(
    features: torch.Tensor,
    params: BaselineHead,
    output_size: Optional[Tuple[int, int]] = None,
) -> torch.Tensor:
    return params(features, output_size)


class ClstmStepper:
    """
    Ejecución en línea: procesa el frame t cuando llega.

    Acepta la cabeza CLSTM o la base 2D. Una instancia pertenece a un solo
    dueño; no debe avanzarse desde varios hilos a la vez.
    """

    def __init__(self, head: nn.Module, output_size: Optional[Tuple[int, int]] = None) -> None:
        self.head = head
        self.output_size = output_size
        self.state: Optional[ClstmState] = None
        self.frames_seen = 0

    def reset(self) -> None:
        self.state = None
        self.frames_seen = 0

    def step(self, f_t: torch.Tensor) -> torch.Tensor:
        """f_t (B, c, h, w) -> profundidad (B, 1, H, W)."""
        if isinstance(self.head, ClstmParams):
            if self.state is None:
                self.state = self.head.initial_state(f_t)
            logits, self.state = self.head.cell_step(f_t, self.state)
        else:
            logits = self.head.frame_logits(f_t)
        self.frames_seen += 1
        return to_depth(logits, self.output_size, self.head.d_min)

    def step_chunk(self, features: torch.Tensor, apply: BatchApply = apply_batch) -> List[torch.Tensor]:
        """
        features (n, c, h, w) de frames consecutivos de una secuencia de lote 1
        -> lista de n profundidades (1, 1, H, W), iguales a las de n llamadas a step.
        """
        if isinstance(self.head, ClstmParams):
            if self.state is None:
                self.state = self.head.initial_state(features[:1])
            logits, self.state = self.head.chunk_step(features, self.state, apply)
        else:
            logits = apply(self.head.frame_logits, features)
        self.frames_seen += features.shape[0]
        return [to_depth(logits[j : j + 1], self.output_size, self.head.d_min) for j in range(logits.shape[0])]
