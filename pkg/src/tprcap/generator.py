"""Filler generator: attention over the running TPR, gated image feature,
third-order TPR construction and Hadamard unbinding.

All functions work on row batches: ``h_prev (B, m)``, ``v (B, k_v)``,
``S_tilde (B, d_emb, d)``. Parameter names match :data:`GENERATOR_SHAPES`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tpr import CapacityError, RoleBasis


def generator_shapes(d: int, m: int, k_v: int, d_emb: int) -> dict[str, tuple[int, ...]]:
    return {
        "gen.W_a_u": (d, m),
        "gen.W_s_u": (d, d_emb * d),
        "gen.b_a_u": (d,),
        "gen.W_a_v": (k_v, m),
        "gen.W_s_v": (k_v, d_emb * d),
        "gen.b_a_v": (k_v,),
        "gen.C_s": (d, d, k_v),
        "gen.B_s": (d, d),
    }


@dataclass
class GeneratorState:
    """Running TPR of already emitted words and the next role index."""

    S_tilde: Tensor
    t: int = 0

    @classmethod
    def start(cls, batch: int, d_emb: int, d: int) -> "GeneratorState":
        return cls(Tensor(np.zeros((batch, d_emb, d))), 0)

    def accumulate(self, x_t: Tensor, basis: RoleBasis) -> "GeneratorState":
        """Bind the emitted embeddings ``x_t (B, d_emb)`` to role ``t``."""
        if self.t >= basis.d:
            raise CapacityError(f"step {self.t} exceeds role capacity {basis.d}")
        role = Tensor(basis.U[:, self.t])
        return GeneratorState(T.add(self.S_tilde, T.outer(x_t, role)), self.t + 1)


def _attention(h_prev: Tensor, state: GeneratorState, params, tag: str) -> Tensor:
    pre = T.add(T.linear(h_prev, params[f"gen.W_a_{tag}"]),
                T.linear(T.vec(state.S_tilde), params[f"gen.W_s_{tag}"]))
    return T.sigmoid(T.add_bias(pre, params[f"gen.b_a_{tag}"]))


def attention_u(h_prev: Tensor, state: GeneratorState, params) -> Tensor:
    return _attention(h_prev, state, params, "u")


def attention_v(h_prev: Tensor, state: GeneratorState, params) -> Tensor:
    # same functional form as attention_u, sized to the image feature
    return _attention(h_prev, state, params, "v")


def gate_features(v: Tensor, a_v: Tensor) -> Tensor:
    return T.mul(v, a_v)


def make_tpr(q: Tensor, params) -> Tensor:
    return T.tanh(T.add_bias(T.contract3(params["gen.C_s"], q), params["gen.B_s"]))


def unbinding_vector(a_u: Tensor, basis: RoleBasis) -> Tensor:
    return T.linear(a_u, Tensor(basis.U))


def filler(S_t: Tensor, u_t: Tensor) -> Tensor:
    return T.matvec(S_t, u_t)


def generator_step(h_prev: Tensor, v: Tensor, state: GeneratorState, params,
                   basis: RoleBasis) -> Tensor:
    """Filler vector ``(B, d)`` for the current step.

    The state is not advanced here: the caller binds the emitted word via
    :meth:`GeneratorState.accumulate` once it is known.
    """
    if state.t >= basis.d:
        raise CapacityError(f"step {state.t} exceeds role capacity {basis.d}")
    a_u = attention_u(h_prev, state, params)
    a_v = attention_v(h_prev, state, params)
    S_t = make_tpr(gate_features(v, a_v), params)
    return filler(S_t, unbinding_vector(a_u, basis))
