"""End-to-end captioning model: state init, generator + cell unrolling, decoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .cell import CellState, VariantConfig, cell_shapes, cell_step, tag_gates
from .generator import GeneratorState, generator_shapes, generator_step
from .tensor import Tensor, no_grad
from .tpr import CapacityError, RoleBasis, hadamard_basis
from .vocab import BOS_ID, EOS_ID, PAD_ID, random_init, zero_mean


@dataclass(frozen=True)
class Dims:
    d: int = 32
    m: int = 64
    k_v: int = 64
    k_S: int = 16
    V: int = 64
    d_emb: int = 32

    def as_tuple(self) -> tuple[int, ...]:
        return (self.d, self.m, self.k_v, self.k_S, self.V, self.d_emb)


def model_shapes(dims: Dims, cfg: VariantConfig) -> dict[str, tuple[int, ...]]:
    d, m = dims.d, dims.m
    shapes = {"embedding.W_e": (dims.d_emb, dims.V), "out.W_x": (dims.V, m)}
    shapes.update(generator_shapes(d, m, dims.k_v, dims.d_emb))
    shapes.update(cell_shapes(cfg, m, d, dims.d_emb, dims.k_S))
    for which in ("init_c", "init_h"):
        shapes.update({f"{which}.W1": (m, dims.k_v), f"{which}.b1": (m,),
                       f"{which}.W2": (m, m), f"{which}.b2": (m,)})
    return dict(sorted(shapes.items()))


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform in ±sqrt(6 / (fan_in + fan_out)); fan_in is the last axis."""
    fan_in = shape[-1]
    fan_out = int(np.prod(shape[:-1]))
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Model:
    dims: Dims
    config: VariantConfig
    params: dict[str, Tensor]
    g_activation: str = "sigmoid"
    freeze_embedding: bool = False
    xe_steps: int = 0
    basis: RoleBasis = field(init=False)

    def __post_init__(self):
        if self.dims.d_emb * self.dims.d != self.params["gen.W_s_u"].shape[1]:
            raise ValueError("W_s_u column count must equal d_emb * d")
        self.basis = hadamard_basis(self.dims.d)
        self.audit()

    @classmethod
    def build(cls, dims: Dims, config: VariantConfig, seed: int = 0, embedding: np.ndarray | None = None,
              g_activation: str = "sigmoid", freeze_embedding: bool = False) -> "Model":
        rng = np.random.Generator(np.random.PCG64(seed))
        params = {}
        for name, shape in model_shapes(dims, config).items():
            if name == "embedding.W_e":
                data = random_init(dims.V, dims.d_emb, seed) if embedding is None else zero_mean(embedding)
            elif len(shape) == 1 or name == "gen.B_s":
                data = np.zeros(shape)
            else:
                data = glorot(rng, shape)
            params[name] = T.parameter(data, name)
        return cls(dims, config, params, g_activation, freeze_embedding)

    def audit(self) -> None:
        expected = model_shapes(self.dims, self.config)
        for name, shape in expected.items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
        extra = set(self.params) - set(expected)
        if extra:
            raise ValueError(f"unexpected parameters {sorted(extra)}")

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if not (self.freeze_embedding and k == "embedding.W_e")}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "Model":
        params = {k: T.parameter(p.data.copy(), k) for k, p in self.params.items()}
        return Model(self.dims, self.config, params, self.g_activation, self.freeze_embedding, self.xe_steps)

    @property
    def max_len(self) -> int:
        return min(self.dims.d, 20)


# ---------------------------------------------------------------------------


def _mlp(v: Tensor, params, which: str) -> Tensor:
    hidden = T.tanh(T.add_bias(T.linear(v, params[f"{which}.W1"]), params[f"{which}.b1"]))
    return T.tanh(T.add_bias(T.linear(hidden, params[f"{which}.W2"]), params[f"{which}.b2"]))


def init_state(v: Tensor, model: Model) -> CellState:
    """``c_0 = f_c(v)``, ``h_0 = f_h(v)``, two separate two-layer tanh MLPs."""
    if v.shape[-1] != model.dims.k_v:
        raise T.DimensionError(f"image feature width {v.shape[-1]} != k_v={model.dims.k_v}")
    return CellState(h=_mlp(v, model.params, "init_h"), c=_mlp(v, model.params, "init_c"))


def logits(h: Tensor, model: Model) -> Tensor:
    return T.linear(h, model.params["out.W_x"])


def decode_step(h: Tensor, model: Model) -> Tensor:
    """Word distribution ``softmax(W_x h)`` per row."""
    return T.softmax(logits(h, model))


def embed_ids(ids: Sequence[int], model: Model) -> Tensor:
    return T.take_columns(model.params["embedding.W_e"], ids)


class Decoder:
    """Stateful unroller over a row batch; one instance per forward pass."""

    def __init__(self, model: Model, v: np.ndarray, tags: np.ndarray):
        self.model = model
        self.v = Tensor(np.atleast_2d(v))
        self.tags = Tensor(np.atleast_2d(tags))
        if self.tags.shape[1] != model.dims.k_S:
            raise T.DimensionError(f"tag width {self.tags.shape[1]} != k_S={model.dims.k_S}")
        B = self.v.shape[0]
        self.cell = init_state(self.v, model)
        self.gen = GeneratorState.start(B, model.dims.d_emb, model.dims.d)
        self.cache = tag_gates(self.tags, model.params, model.config)

    def step(self, x_prev: Tensor) -> Tensor:
        """Advance one step from input embeddings; returns log-probabilities ``(B, V)``."""
        m = self.model
        f_t = generator_step(self.cell.h, self.v, self.gen, m.params, m.basis)
        self.cell = cell_step(x_prev, self.cell, f_t, self.tags, m.config, m.params, self.cache, m.g_activation)
        return T.log_softmax(logits(self.cell.h, m))

    def emit(self, x_t: Tensor) -> None:
        """Bind the embeddings of the tokens just emitted into the running TPR."""
        self.gen = self.gen.accumulate(x_t, self.model.basis)

    def select(self, rows: np.ndarray) -> None:
        """Reindex the batch (beam search bookkeeping)."""
        idx = np.asarray(rows)
        self.cell = CellState(Tensor(self.cell.h.data[idx]), Tensor(self.cell.c.data[idx]))
        self.gen = GeneratorState(Tensor(self.gen.S_tilde.data[idx]), self.gen.t)
        self.v = Tensor(self.v.data[idx])
        self.tags = Tensor(self.tags.data[idx])
        self.cache = {k: Tensor(t.data[idx]) for k, t in self.cache.items()}


@dataclass
class TeacherResult:
    nll: Tensor            # summed over all predicted tokens in the batch
    n_tokens: int
    log_probs: list[np.ndarray]  # per step, (B, V)
    token_nll: np.ndarray  # per row, summed over that row's tokens


def teacher_forward(model: Model, v: np.ndarray, tags: np.ndarray, captions: Sequence[Sequence[int]],
                    weights: np.ndarray | None = None) -> TeacherResult:
    """Teacher-forced negative log-likelihood of ``<s> ... </s>`` id captions.

    Row ``b`` of the loss is scaled by ``weights[b]`` (default 1) before
    summing; ``token_nll`` always reports the unweighted per-row values.
    """
    B = len(captions)
    lens = np.array([len(c) for c in captions])
    if lens.min() < 2:
        raise ValueError("captions need at least <s> and </s>")
    if lens.max() > model.dims.d:
        raise CapacityError(f"caption of length {lens.max()} exceeds role capacity {model.dims.d}")
    V = model.dims.V
    ids = np.full((B, lens.max()), PAD_ID, dtype=np.int64)
    for b, cap in enumerate(captions):
        if min(cap) < 0 or max(cap) >= V:
            raise ValueError(f"caption {b} has a token id outside 0..{V - 1}")
        ids[b, : len(cap)] = cap
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)

    dec = Decoder(model, v, tags)
    x = embed_ids(ids[:, 0], model)
    terms, log_probs = [], []
    token_nll = np.zeros(B)
    steps = lens.max() - 1
    for t in range(steps):
        lp = dec.step(x)
        log_probs.append(lp.data)
        mask = (t + 1 < lens).astype(np.float64)
        picked = T.pick(lp, ids[:, t + 1])
        token_nll -= picked.data * mask
        terms.append(T.weighted_sum(picked, -mask * w))
        if t + 1 < steps:
            x = embed_ids(ids[:, t + 1], model)
            dec.emit(x)
    nll = T.add_n(terms)
    return TeacherResult(nll, int((lens - 1).sum()), log_probs, token_nll)


def forward_teacher(sample, caption: Sequence[int], model: Model) -> tuple[list[np.ndarray], Tensor]:
    """Single-caption form: per-step distributions and the scalar NLL."""
    res = teacher_forward(model, np.asarray(sample.v)[None], np.asarray(sample.tags)[None], [caption])
    return [np.exp(lp[0]) for lp in res.log_probs], res.nll


# ---------------------------------------------------------------------------
# generation


@dataclass
class Generated:
    tokens: list[int]      # emitted ids, without <s> and </s>
    logprob: float         # includes the </s> emission when finished
    finished: bool         # False when cut off at max_len

    @property
    def length(self) -> int:
        return len(self.tokens) + int(self.finished)

    @property
    def score(self) -> float:
        return self.logprob / max(self.length, 1)


def _pick_tokens(lp: np.ndarray, mode: str, rng: np.random.Generator | None) -> np.ndarray:
    lp = lp.copy()
    lp[:, PAD_ID] = -np.inf
    lp[:, BOS_ID] = -np.inf
    if mode == "greedy":
        return np.argmax(lp, axis=1)  # first maximum -> lowest id on ties
    p = np.exp(lp - lp.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    cum = np.cumsum(p, axis=1)
    u = rng.random(len(lp))[:, None]
    return np.minimum((cum < u).sum(axis=1), lp.shape[1] - 1)


def rollout(model: Model, v: np.ndarray, tags: np.ndarray, mode: str = "greedy",
            rng: np.random.Generator | None = None, max_len: int | None = None) -> list[Generated]:
    """Greedy or multinomial (temperature 1) decoding for a row batch.

    ``<pad>`` and ``<s>`` are never emitted. ``max_len`` bounds the caption
    length including ``<s>`` and ``</s>``.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampling needs an rng")
    max_len = model.max_len if max_len is None else max_len
    if not 2 <= max_len <= model.dims.d:
        raise ValueError(f"max_len must lie in 2..{model.dims.d}")
    v = np.atleast_2d(v)
    B = v.shape[0]
    out = [Generated([], 0.0, False) for _ in range(B)]
    alive = np.ones(B, dtype=bool)
    with no_grad():
        dec = Decoder(model, v, tags)
        x = embed_ids([BOS_ID] * B, model)
        for t in range(max_len - 1):
            lp = dec.step(x).data
            tok = _pick_tokens(lp, mode, rng)
            for b in np.flatnonzero(alive):
                out[b].logprob += float(lp[b, tok[b]])
                if tok[b] == EOS_ID:
                    out[b].finished = True
                    alive[b] = False
                else:
                    out[b].tokens.append(int(tok[b]))
            if not alive.any() or t + 1 == max_len - 1:
                break
            x = embed_ids(np.where(alive, tok, PAD_ID), model)
            dec.emit(x)
    return out


def beam_search(model: Model, v: np.ndarray, tags: np.ndarray, width: int,
                max_len: int | None = None) -> Generated:
    """Length-normalized beam search for a single image.

    Partial hypotheses compete on summed log-probability; the answer is the
    best mean log-probability among finished beams, beams alive at the
    cut-off, and the greedy caption.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    max_len = model.max_len if max_len is None else max_len
    greedy = rollout(model, v, tags, "greedy", max_len=max_len)[0]
    if width == 1:
        return greedy
    v = np.atleast_2d(v)
    tags = np.atleast_2d(tags)
    finals: list[Generated] = []
    with no_grad():
        dec = Decoder(model, v, tags)
        beams = [Generated([], 0.0, False)]
        x = embed_ids([BOS_ID], model)
        for t in range(max_len - 1):
            lp = dec.step(x).data.copy()
            lp[:, PAD_ID] = -np.inf
            lp[:, BOS_ID] = -np.inf
            cand = np.array([b.logprob for b in beams])[:, None] + lp
            order = np.argsort(-cand, axis=None, kind="stable")
            keep_rows, keep_tok, nxt = [], [], []
            for flat in order[:width]:
                r, tok = divmod(int(flat), lp.shape[1])
                if not np.isfinite(cand[r, tok]):
                    continue
                hyp = Generated(beams[r].tokens.copy(), float(cand[r, tok]), False)
                if tok == EOS_ID:
                    hyp.finished = True
                    finals.append(hyp)
                    continue
                hyp.tokens.append(tok)
                nxt.append(hyp)
                keep_rows.append(r)
                keep_tok.append(tok)
            if t + 1 == max_len - 1:
                finals.extend(nxt)
                break
            if not nxt or len(finals) >= width:
                break
            beams = nxt
            dec.select(np.array(keep_rows))
            x = embed_ids(keep_tok, model)
            dec.emit(x)
    pool = finals + [greedy]
    # stable max: earlier entries win ties, the greedy caption is last
    return max(pool, key=lambda g: g.score)


def generate(v: np.ndarray, tags: np.ndarray, model: Model, mode: str = "greedy", beam_width: int = 1,
             max_len: int | None = None) -> Generated:
    if mode == "greedy":
        return rollout(model, v, tags, "greedy", max_len=max_len)[0]
    if mode == "beam":
        return beam_search(model, v, tags, beam_width, max_len)
    raise ValueError(f"unknown decode mode {mode!r}")
