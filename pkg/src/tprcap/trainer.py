"""Teacher-forced and self-critical training, optimizers and the gradient check."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .captioner import Generated, Model, rollout, teacher_forward
from .data import CaptionSample
from .metrics import CorpusStats, cider_d
from .vocab import BOS_ID, EOS_ID, Vocabulary

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    optimizer: str = "adam"
    scst_weight: float = 0.7
    xe_weight: float = 0.3
    patience: int = 5
    clip_norm: float | None = 5.0
    scst_epochs: int = 0
    require_pretrained: bool = True
    normalize_advantages: bool = True
    max_steps: int | None = None
    eval_every: int = 1

    def __post_init__(self):
        if abs(self.scst_weight + self.xe_weight - 1.0) > 1e-12:
            raise ValueError("scst_weight + xe_weight must equal 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, T.Tensor], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            params[name].data -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, T.Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[name].data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig):
    return Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)


def collect_grads(model: Model, clip_norm: float | None) -> tuple[dict[str, np.ndarray], float]:
    """Trainable gradients (zeros where unreached), clipped to a global norm."""
    grads = {}
    for name, p in model.trainable().items():
        grads[name] = np.zeros_like(p.data) if p.grad is None else p.grad
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if clip_norm is not None and norm > clip_norm:
        k = clip_norm / norm
        grads = {n: g * k for n, g in grads.items()}
    return grads, norm


# ---------------------------------------------------------------------------
# batches


@dataclass
class Item:
    """One (image, caption) training pair with id-encoded caption."""

    id: str
    v: np.ndarray
    tags: np.ndarray
    caption: list[int]
    references: list[list[int]] = field(default_factory=list)


def encode_samples(samples: Sequence[CaptionSample], vocab: Vocabulary, all_captions: bool = True) -> list[Item]:
    items = []
    for s in samples:
        refs = [vocab.encode(r) for r in s.references]
        caps = s.captions if all_captions else s.captions[:1]
        for cap in caps:
            items.append(Item(s.id, s.v, s.tags, vocab.encode(cap), refs))
    return items


def per_image(samples: Sequence[CaptionSample], vocab: Vocabulary) -> list[Item]:
    """One item per image (first caption), used for decoding and rewards."""
    return encode_samples(samples, vocab, all_captions=False)


def _stack(batch: Sequence[Item]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([b.v for b in batch]), np.stack([b.tags for b in batch])


def batch_xe(model: Model, batch: Sequence[Item]) -> tuple[T.Tensor, int]:
    """Mean per-token NLL over the batch, as a graph node."""
    v, tags = _stack(batch)
    res = teacher_forward(model, v, tags, [b.caption for b in batch])
    bad = ~np.isfinite(res.token_nll)
    if bad.any():
        raise TrainingError(f"non-finite loss for sample {batch[int(np.flatnonzero(bad)[0])].id}")
    return T.scale(res.nll, 1.0 / res.n_tokens), res.n_tokens


def xe_step(batch: Sequence[Item], model: Model, optimizer, config: TrainConfig) -> float:
    """One teacher-forced update; returns the pre-update mean token NLL."""
    if not batch:
        raise ValueError("empty batch")
    model.zero_grad()
    loss, _ = batch_xe(model, batch)
    T.backward(loss)
    grads, _ = collect_grads(model, config.clip_norm)
    optimizer.step(model.params, grads)
    model.xe_steps += 1
    return float(loss.data)


# ---------------------------------------------------------------------------
# self-critical training


@dataclass
class RewardRecord:
    id: str
    sampled: list[int]
    greedy: list[int]
    reward_sampled: float
    reward_greedy: float

    @property
    def advantage(self) -> float:
        return self.reward_sampled - self.reward_greedy


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Mean-subtract and divide by the batch std, floored at 1e-8."""
    adv = np.asarray(adv, dtype=np.float64)
    centered = adv - adv.mean()
    return centered / max(centered.std(), 1e-8)


def rollout_ids(g: Generated) -> list[int]:
    return [BOS_ID, *g.tokens] + ([EOS_ID] if g.finished else [])


Reward = Callable[[list[int], list[list[int]]], float]


def cider_reward(stats: CorpusStats) -> Reward:
    return lambda cand, refs: cider_d(cand, refs, stats)


def scst_step(batch: Sequence[Item], model: Model, optimizer, config: TrainConfig, reward: Reward,
              rng: np.random.Generator) -> tuple[float, list[RewardRecord]]:
    """Mixed self-critical update.

    Each image gets one multinomial rollout scored against its greedy
    rollout; the loss is ``scst_weight * policy + xe_weight * XE``.
    """
    if not batch:
        raise ValueError("empty batch")
    if config.require_pretrained and model.xe_steps == 0:
        raise TrainingError("self-critical training needs an XE-pretrained model")
    v, tags = _stack(batch)
    sampled = rollout(model, v, tags, "sample", rng=rng)
    greedy = rollout(model, v, tags, "greedy")
    records = [RewardRecord(item.id, s.tokens, g.tokens, reward(s.tokens, item.references),
                            reward(g.tokens, item.references))
               for item, s, g in zip(batch, sampled, greedy)]
    adv = np.array([r.advantage for r in records])
    if config.normalize_advantages and len(batch) > 1:
        adv = normalize_advantages(adv)

    model.zero_grad()
    terms = []
    if np.any(adv != 0) and config.scst_weight > 0:
        # weights -adv/b turn the summed NLL into  -(1/b) sum_b adv_b log p(y_b)
        res = teacher_forward(model, v, tags, [rollout_ids(s) for s in sampled], weights=adv / len(batch))
        terms.append(T.scale(res.nll, config.scst_weight))
    else:
        logger.info("all advantages zero; policy term skipped")
    if config.xe_weight > 0:
        xe, _ = batch_xe(model, batch)
        terms.append(T.scale(xe, config.xe_weight))
    if not terms:
        return 0.0, records
    loss = T.add_n(terms) if len(terms) > 1 else terms[0]
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite SCST loss in batch starting with {batch[0].id}")
    T.backward(loss)
    grads, _ = collect_grads(model, config.clip_norm)
    optimizer.step(model.params, grads)
    return float(loss.data), records


# ---------------------------------------------------------------------------
# evaluation and the epoch loop


def greedy_captions(model: Model, items: Sequence[Item], batch_size: int = 64) -> list[list[int]]:
    out = []
    for i in range(0, len(items), batch_size):
        chunk = items[i:i + batch_size]
        v, tags = _stack(chunk)
        out.extend(g.tokens for g in rollout(model, v, tags, "greedy"))
    return out


def mean_cider(model: Model, items: Sequence[Item], stats: CorpusStats) -> float:
    caps = greedy_captions(model, items)
    return float(np.mean([cider_d(c, it.references, stats) for c, it in zip(caps, items)]))


def batches(items: Sequence[Item], size: int, rng: np.random.Generator) -> list[list[Item]]:
    order = rng.permutation(len(items))
    return [[items[j] for j in order[i:i + size]] for i in range(0, len(items), size)]


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_score: float = -np.inf
    best_params: dict[str, np.ndarray] | None = None


def train(train_samples: Sequence[CaptionSample], val_samples: Sequence[CaptionSample], model: Model,
          vocab: Vocabulary, config: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[Model, History]:
    """XE epochs then optional SCST epochs, with early stopping on validation CIDEr-D.

    The returned model carries the best-validation parameters.
    """
    if not train_samples or not val_samples:
        raise ValueError("train and validation splits must be non-empty")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    items = encode_samples(train_samples, vocab)
    train_images = per_image(train_samples, vocab)
    val_items = per_image(val_samples, vocab)
    train_stats = CorpusStats.build([it.references for it in train_images])
    val_stats = CorpusStats.build([it.references for it in val_items])
    optimizer = make_optimizer(config)
    hist = History()
    since_best = 0
    steps = 0
    phases = ["xe"] * config.epochs + ["scst"] * config.scst_epochs
    for epoch, phase in enumerate(phases, 1):
        losses = []
        if phase == "xe":
            for batch in batches(items, config.batch_size, rng):
                losses.append(xe_step(batch, model, optimizer, config))
                steps += 1
                if config.max_steps is not None and steps >= config.max_steps:
                    break
        else:
            reward = cider_reward(train_stats)
            for batch in batches(train_images, config.batch_size, rng):
                loss, _ = scst_step(batch, model, optimizer, config, reward, rng)
                losses.append(loss)
                steps += 1
        out_of_steps = config.max_steps is not None and steps >= config.max_steps
        last = epoch == len(phases) or out_of_steps
        if epoch % config.eval_every and not last:
            continue
        score = mean_cider(model, val_items, val_stats)
        row = {"epoch": epoch, "phase": phase, "xe_loss": float(np.mean(losses)), "val_cider": score,
               "lr": config.lr}
        hist.rows.append(row)
        if on_epoch:
            on_epoch(row)
        if score > hist.best_score:
            hist.best_score = score
            hist.best_params = {k: p.data.copy() for k, p in model.params.items()}
            since_best = 0
        else:
            since_best += 1
        if since_best >= config.patience or out_of_steps:
            break
    if hist.best_params is not None:
        for k, p in model.params.items():
            p.data[...] = hist.best_params[k]
    return model, hist


# ---------------------------------------------------------------------------
# gradient check


def grad_check(model: Model, item: Item, n_coords: int = 32, eps: float = 1e-5,
               seed: int = 0) -> dict[str, float]:
    """Worst relative error of backward() against central differences per trainable tensor.

    Uses the summed teacher-forced NLL of ``item.caption`` and a random
    subsample of ``n_coords`` flat coordinates per tensor.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    v, tags = item.v[None], item.tags[None]

    def loss() -> float:
        with T.no_grad():
            return float(teacher_forward(model, v, tags, [item.caption]).nll.data)

    model.zero_grad()
    T.backward(teacher_forward(model, v, tags, [item.caption]).nll)
    params = model.trainable()
    coords = {p: rng.choice(p.data.size, size=min(n_coords, p.data.size), replace=False)
              for p in params.values()}
    numeric = T.finite_diff(loss, list(params.values()), eps, coords)
    report = {}
    for name, p in params.items():
        analytic = (np.zeros(p.data.size) if p.grad is None else p.grad.reshape(-1))[coords[p]]
        report[name] = float(T.relative_error(analytic, numeric[p]).max())
    model.zero_grad()
    return report
