"""Caption samples, the JSONL dataset format and the synthetic attribute corpus."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .vocab import BOS, EOS


class DatasetError(ValueError):
    """Invalid dataset line."""


@dataclass
class CaptionSample:
    id: str
    v: np.ndarray
    tags: np.ndarray
    captions: list[list[str]]  # wrapped in <s> ... </s>

    @property
    def references(self) -> list[list[str]]:
        return [c[1:-1] for c in self.captions]

    def to_json(self) -> str:
        obj = {
            "id": self.id,
            "v": [float(x) for x in self.v],
            "tags": [float(x) for x in self.tags],
            "captions": self.references,
        }
        return json.dumps(obj, separators=(",", ":"))


def wrap(tokens: Sequence[str]) -> list[str]:
    return [BOS, *tokens, EOS]


def parse_sample(obj, lineno: int = 0, k_v: int | None = None, k_S: int | None = None,
                 capacity: int | None = None) -> CaptionSample:
    where = f"line {lineno}: " if lineno else ""
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}expected a JSON object")
    for key in ("id", "v", "tags", "captions"):
        if key not in obj:
            raise DatasetError(f"{where}missing field {key!r}")
    try:
        v = np.asarray(obj["v"], dtype=np.float64)
        tags = np.asarray(obj["tags"], dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetError(f"{where}v and tags must be numeric lists") from None
    if v.ndim != 1 or tags.ndim != 1:
        raise DatasetError(f"{where}v and tags must be flat lists")
    if k_v is not None and len(v) != k_v:
        raise DatasetError(f"{where}v has length {len(v)}, expected {k_v}")
    if k_S is not None and len(tags) != k_S:
        raise DatasetError(f"{where}tags has length {len(tags)}, expected {k_S}")
    if not (np.isfinite(v).all() and np.isfinite(tags).all()):
        raise DatasetError(f"{where}non-finite feature value")
    if tags.size and (tags.min() < 0 or tags.max() > 1):
        raise DatasetError(f"{where}tag values must lie in [0, 1]")
    caps = obj["captions"]
    if not isinstance(caps, list) or not caps:
        raise DatasetError(f"{where}at least one caption required")
    wrapped = []
    for cap in caps:
        if not isinstance(cap, list) or not cap or not all(isinstance(t, str) and t for t in cap):
            raise DatasetError(f"{where}captions must be non-empty lists of tokens")
        w = wrap(cap)
        if capacity is not None and len(w) > capacity:
            raise DatasetError(f"{where}caption length {len(w)} exceeds capacity {capacity}")
        wrapped.append(w)
    return CaptionSample(str(obj["id"]), v, tags, wrapped)


def load_dataset(path: str | Path, k_v: int | None = None, k_S: int | None = None,
                 capacity: int | None = None) -> list[CaptionSample]:
    """Read JSONL samples; widths default to those of the first line."""
    out: list[CaptionSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            s = parse_sample(obj, lineno, k_v, k_S, capacity)
            if k_v is None:
                k_v, k_S = len(s.v), len(s.tags)
            out.append(s)
    return out


def save_dataset(samples: Iterable[CaptionSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class Grammar:
    objects: list[str] = field(default_factory=lambda: ["dog", "cat", "bird", "horse", "car", "boat", "man", "woman"])
    colors: list[str] = field(default_factory=lambda: ["red", "blue", "green", "black", "white", "brown"])
    actions: list[str] = field(default_factory=lambda: ["running", "sitting", "jumping", "sleeping", "eating", "standing"])
    templates: list[str] = field(default_factory=lambda: [
        "a {color} {object} is {action}",
        "the {color} {object} is {action}",
        "there is a {color} {object} {action}",
    ])

    @property
    def attributes(self) -> list[str]:
        return [*self.objects, *self.colors, *self.actions]

    @property
    def k_S(self) -> int:
        return len(self.attributes)


def synth_generate(seed: int, n_samples: int, grammar: Grammar | None = None, k_v: int = 64,
                   noise: float = 0.05, tag_noise: float = 0.1,
                   captions_per_sample: tuple[int, int] = (1, 3)) -> list[CaptionSample]:
    """Attribute-grammar corpus: one object, color and action per image.

    ``tags`` is the attribute indicator plus uniform noise in ``[0, tag_noise]``
    (clipped to 1); ``v`` sums fixed per-attribute Gaussian basis vectors and
    adds ``N(0, noise^2)``. Captions are distinct template realizations.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    g = grammar or Grammar()
    lo, hi = captions_per_sample
    if not 1 <= lo <= hi <= len(g.templates):
        raise ValueError("captions_per_sample must satisfy 1 <= lo <= hi <= number of templates")
    rng = np.random.Generator(np.random.PCG64(seed))
    basis = rng.normal(size=(g.k_S, k_v)) / math.sqrt(k_v)
    n_obj, n_col = len(g.objects), len(g.colors)
    out = []
    for i in range(n_samples):
        o = int(rng.integers(len(g.objects)))
        c = int(rng.integers(len(g.colors)))
        a = int(rng.integers(len(g.actions)))
        chosen = [o, n_obj + c, n_obj + n_col + a]
        tags = rng.uniform(0.0, tag_noise, size=g.k_S)
        tags[chosen] = 1.0
        tags = np.minimum(tags, 1.0)
        v = basis[chosen].sum(axis=0) + noise * rng.normal(size=k_v)
        k = int(rng.integers(lo, hi + 1))
        picks = rng.permutation(len(g.templates))[:k]
        caps = [wrap(g.templates[p].format(color=g.colors[c], object=g.objects[o], action=g.actions[a]).split())
                for p in sorted(picks)]
        out.append(CaptionSample(f"synth-{seed}-{i:05d}", v, tags, caps))
    return out


def chosen_attributes(sample: CaptionSample, grammar: Grammar | None = None) -> list[int]:
    """Indices of the three attributes, read off the tag vector's maxima per group."""
    g = grammar or Grammar()
    n_obj, n_col = len(g.objects), len(g.colors)
    t = sample.tags
    return [int(np.argmax(t[:n_obj])), n_obj + int(np.argmax(t[n_obj:n_obj + n_col])),
            n_obj + n_col + int(np.argmax(t[n_obj + n_col:]))]
