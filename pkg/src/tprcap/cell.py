"""Tag-factorized SCN-LSTM cell with optional embedding/hidden/TPR decomposition.

A decomposed input replaces ``z`` with ``(A S) * (B z)`` where ``S`` is the
tag vector; the per-gate projection that follows then acts on the ``m``-wide
factor space instead of on ``z`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

GATES = ("i", "f", "o", "g")


class NumericError(FloatingPointError):
    """Non-finite value in the recurrent state."""


@dataclass(frozen=True)
class VariantConfig:
    decompose_embedding: bool
    decompose_hidden: bool
    decompose_tpr: bool

    @property
    def name(self) -> str:
        for key, cfg in VARIANTS.items():
            if cfg == self:
                return key
        return "custom"

    def flags(self) -> int:
        return int(self.decompose_embedding) | int(self.decompose_hidden) << 1 | int(self.decompose_tpr) << 2

    @classmethod
    def from_flags(cls, bits: int) -> "VariantConfig":
        return cls(bool(bits & 1), bool(bits & 2), bool(bits & 4))


VARIANTS: dict[str, VariantConfig] = {
    "e+t": VariantConfig(True, False, False),
    "h+t": VariantConfig(False, True, False),
    "h+e+t": VariantConfig(True, True, False),
    "e+dt": VariantConfig(True, False, True),
    "h+dt": VariantConfig(False, True, True),
    "h+e+dt": VariantConfig(True, True, True),
}

# spellings accepted on the command line
_ALIASES = {"e+tpr": "e+t", "h+tpr": "h+t", "h+e+tpr": "h+e+t",
            "e+dtpr": "e+dt", "h+dtpr": "h+dt", "h+e+dtpr": "h+e+dt"}


def variant(name: str) -> VariantConfig:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    return VARIANTS[key]


def plain_counterpart(cfg: VariantConfig) -> VariantConfig:
    """The same variant with the TPR input undecomposed."""
    return VariantConfig(cfg.decompose_embedding, cfg.decompose_hidden, False)


def cell_shapes(cfg: VariantConfig, m: int, d: int, d_emb: int, k_S: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for g in GATES:
        shapes[f"cell.W_x{g}"] = (m, m if cfg.decompose_embedding else d_emb)
        shapes[f"cell.W_h{g}"] = (m, m)
        shapes[f"cell.W_T{g}"] = (m, m if cfg.decompose_tpr else d)
        shapes[f"cell.b_{g}"] = (m,)
        if cfg.decompose_embedding:
            shapes[f"cell.Wx_{g}m"] = (m, k_S)
            shapes[f"cell.Wx_{g}n"] = (m, d_emb)
        if cfg.decompose_hidden:
            shapes[f"cell.Wh_{g}m"] = (m, k_S)
            shapes[f"cell.Wh_{g}n"] = (m, m)
        if cfg.decompose_tpr:
            shapes[f"cell.P_{g}m"] = (m, k_S)
            shapes[f"cell.P_{g}n"] = (m, d)
    return shapes


@dataclass
class CellState:
    h: Tensor
    c: Tensor


def tag_gates(tags: Tensor, params, cfg: VariantConfig) -> dict[str, Tensor]:
    """Tag projections ``A S`` for every decomposed input; constant over a sequence."""
    out = {}
    for g in GATES:
        if cfg.decompose_embedding:
            out[f"x{g}"] = T.linear(tags, params[f"cell.Wx_{g}m"])
        if cfg.decompose_hidden:
            out[f"h{g}"] = T.linear(tags, params[f"cell.Wh_{g}m"])
        if cfg.decompose_tpr:
            out[f"T{g}"] = T.linear(tags, params[f"cell.P_{g}m"])
    return out


def decompose_embedding(x_prev: Tensor, tags: Tensor, params, gate: str, tag_gate: Tensor | None = None) -> Tensor:
    tg = T.linear(tags, params[f"cell.Wx_{gate}m"]) if tag_gate is None else tag_gate
    return T.mul(tg, T.linear(x_prev, params[f"cell.Wx_{gate}n"]))


def decompose_hidden(h_prev: Tensor, tags: Tensor, params, gate: str, tag_gate: Tensor | None = None) -> Tensor:
    tg = T.linear(tags, params[f"cell.Wh_{gate}m"]) if tag_gate is None else tag_gate
    return T.mul(tg, T.linear(h_prev, params[f"cell.Wh_{gate}n"]))


def decompose_tpr(filler: Tensor, tags: Tensor, params, gate: str, tag_gate: Tensor | None = None) -> Tensor:
    tg = T.linear(tags, params[f"cell.P_{gate}m"]) if tag_gate is None else tag_gate
    return T.mul(tg, T.linear(filler, params[f"cell.P_{gate}n"]))


def gate_preactivation(gate: str, x_prev: Tensor, state: CellState, filler: Tensor, tags: Tensor,
                       cfg: VariantConfig, params, cache: dict[str, Tensor]) -> Tensor:
    x_in = (decompose_embedding(x_prev, tags, params, gate, cache.get(f"x{gate}"))
            if cfg.decompose_embedding else x_prev)
    h_in = (decompose_hidden(state.h, tags, params, gate, cache.get(f"h{gate}"))
            if cfg.decompose_hidden else state.h)
    t_in = (decompose_tpr(filler, tags, params, gate, cache.get(f"T{gate}"))
            if cfg.decompose_tpr else filler)
    pre = T.add_n([T.linear(x_in, params[f"cell.W_x{gate}"]),
                   T.linear(h_in, params[f"cell.W_h{gate}"]),
                   T.linear(t_in, params[f"cell.W_T{gate}"])])
    return T.add_bias(pre, params[f"cell.b_{gate}"])


def combine(i: Tensor, f: Tensor, o: Tensor, g: Tensor, c_prev: Tensor) -> CellState:
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    return CellState(T.mul(o, T.tanh(c)), c)


def cell_step(x_prev: Tensor, state: CellState, filler: Tensor, tags: Tensor, cfg: VariantConfig,
              params, cache: dict[str, Tensor] | None = None, g_activation: str = "sigmoid") -> CellState:
    """One recurrence step; ``cache`` holds :func:`tag_gates` output when reused."""
    cache = tag_gates(tags, params, cfg) if cache is None else cache
    acts = {}
    for gate in GATES:
        pre = gate_preactivation(gate, x_prev, state, filler, tags, cfg, params, cache)
        acts[gate] = T.tanh(pre) if gate == "g" and g_activation == "tanh" else T.sigmoid(pre)
    new = combine(acts["i"], acts["f"], acts["o"], acts["g"], state.c)
    if not (np.isfinite(new.c.data).all() and np.isfinite(new.h.data).all()):
        raise NumericError("non-finite cell state")
    return new
