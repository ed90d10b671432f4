"""Vocabulary and word-embedding table."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)


class FormatError(ValueError):
    """Malformed embedding or vocabulary file."""


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = list(RESERVED)
        self._stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self._stoi:
            self._stoi[token] = len(self._itos)
            self._itos.append(token)
        return self._stoi[token]

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def lookup(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self._itos[i] for i in ids]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos[len(RESERVED):])

    def save(self, path: str | Path) -> None:
        # line number (0-based) == id - 4
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        vocab = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line or line in vocab:
                raise FormatError(f"{path}:{lineno}: empty or duplicate token {line!r}")
            vocab.add(line)
        return vocab

    @classmethod
    def from_captions(cls, captions: Iterable[Sequence[str]]) -> "Vocabulary":
        """Tokens in first-seen order; reserved tokens are skipped."""
        vocab = cls()
        for cap in captions:
            for tok in cap:
                if tok not in RESERVED:
                    vocab.add(tok)
        return vocab


def zero_mean(W: np.ndarray) -> np.ndarray:
    """Center each embedding dimension (row) across the vocabulary."""
    return W - W.mean(axis=1, keepdims=True)


def random_init(V: int, d_emb: int, seed: int) -> np.ndarray:
    """Uniform entries in ``±0.5/d_emb`` from PCG64, zero-meaned per row."""
    if V < 1 or d_emb < 1:
        raise ValueError("V and d_emb must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    half = 0.5 / d_emb
    return zero_mean(rng.uniform(-half, half, size=(d_emb, V)))


def embed(ids: Sequence[int], table: np.ndarray) -> np.ndarray:
    """Column gather; row ``k`` of the result is ``table @ one_hot(ids[k])``."""
    idx = np.asarray(ids, dtype=np.int64)
    V = table.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise IndexError(f"token id out of range for vocabulary of {V}")
    return table[:, idx].T


def load_glove_text(path: str | Path, center: bool = True) -> tuple[Vocabulary, np.ndarray]:
    """Read ``token v1 .. vd`` lines into a ``d x V`` table.

    Reserved tokens get zero columns unless the file lists them. With
    ``center`` the table is zero-meaned per dimension afterwards.
    """
    vocab = Vocabulary()
    vectors: dict[int, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if parts == [""]:
                continue
            tok, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
                if dim == 0:
                    raise FormatError(f"{path}:{lineno}: no vector values")
            if len(vals) != dim:
                raise FormatError(f"{path}:{lineno}: expected {dim} values, found {len(vals)}")
            idx = vocab.lookup(tok) if tok in vocab else None
            if idx is not None and (idx >= len(RESERVED) or idx in vectors):
                raise FormatError(f"{path}:{lineno}: duplicate token {tok!r}")
            try:
                vals_arr = np.array([float(x) for x in vals])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            vectors[vocab.add(tok)] = vals_arr
    if dim is None:
        raise FormatError(f"{path}: no entries")
    W = np.zeros((dim, len(vocab)))
    for idx, col in vectors.items():
        W[:, idx] = col
    return vocab, (zero_mean(W) if center else W)


def save_glove_text(path: str | Path, vocab: Vocabulary, W: np.ndarray) -> None:
    """Write every column, reserved tokens included; ``repr`` floats round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(vocab)):
            fh.write(vocab.token(i) + " " + " ".join(repr(float(x)) for x in W[:, i]) + "\n")
