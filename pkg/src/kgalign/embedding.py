"""Unit-norm entity embeddings in a shared space, plus a hashed n-gram fallback."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, MissingEntity, ParseError, ZeroVector
from .kg import KnowledgeGraph, normalize_name

NORM_TOL = 1e-6


@dataclass(eq=False)
class EmbeddingStore:
    vectors: np.ndarray  # (n_entities, dim) float64, rows unit-norm

    @classmethod
    def from_array(cls, vectors) -> "EmbeddingStore":
        v = np.array(vectors, dtype=np.float64, ndmin=2)
        if v.ndim != 2 or v.shape[1] == 0:
            raise DimensionMismatch(f"expected a 2-d array with positive width, got shape {v.shape}")
        norms = np.linalg.norm(v, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if len(zero):
            raise ZeroVector(f"row {int(zero[0])} is a zero vector and cannot be normalized")
        return cls(v / norms[:, None])

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    def __getitem__(self, e):
        return self.vectors[e]


def load_embeddings(path: str | Path, kg: KnowledgeGraph) -> EmbeddingStore:
    """Read an embedding TSV (``dim<TAB>D`` header, then ``raw_id<TAB>v1..vD``).

    ``.npz`` files holding ``raw_ids`` and ``vectors`` arrays are accepted too.
    Rows for ids unknown to ``kg`` are ignored; every KG entity must be covered.
    """
    path = Path(path)
    index = kg.entity_index()
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            raw_ids = [str(r) for r in data["raw_ids"]]
            mat = np.asarray(data["vectors"], dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != len(raw_ids):
            raise DimensionMismatch(f"{path}: vectors shape {mat.shape} does not match {len(raw_ids)} ids")
        dim = mat.shape[1]
        rows = dict(zip(raw_ids, mat))
    else:
        rows = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\r\n").split("\t")
            if len(header) != 2 or header[0] != "dim":
                raise ParseError(path, 1, "expected header 'dim<TAB>D'")
            try:
                dim = int(header[1])
            except ValueError:
                raise ParseError(path, 1, f"bad dimension {header[1]!r}") from None
            if dim <= 0:
                raise ParseError(path, 1, "dimension must be positive")
            for line_no, line in enumerate(fh, start=2):
                line = line.rstrip("\r\n")
                if not line:
                    continue
                cols = line.split("\t")
                if len(cols) != dim + 1:
                    raise DimensionMismatch(f"{path}:{line_no}: expected {dim} values, got {len(cols) - 1}")
                if cols[0] in rows:
                    raise ParseError(path, line_no, f"duplicate id {cols[0]!r}")
                try:
                    rows[cols[0]] = np.array([float(c) for c in cols[1:]])
                except ValueError as exc:
                    raise ParseError(path, line_no, str(exc)) from None

    missing = [raw for raw in kg.entity_raw_ids if raw not in rows]
    if missing:
        raise MissingEntity(f"{path}: {len(missing)} entities have no vector (first: {missing[0]!r})")
    mat = np.stack([rows[raw] for raw in kg.entity_raw_ids]) if kg.n_entities else np.empty((0, dim))
    return EmbeddingStore.from_array(mat)


def save_embeddings(path: str | Path, raw_ids: Sequence[str], vectors: np.ndarray) -> None:
    path = Path(path)
    vectors = np.asarray(vectors, dtype=np.float64)
    if path.suffix == ".npz":
        np.savez(path, raw_ids=np.asarray(raw_ids, dtype=str), vectors=vectors)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim\t{vectors.shape[1]}\n")
        for raw, row in zip(raw_ids, vectors):
            fh.write(raw + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def _ngram_hash(gram: str, seed: int) -> int:
    key = int(seed).to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def char_trigrams(name: str) -> list[str]:
    padded = "^" + name + "$"
    return sorted(padded[i:i + 3] for i in range(len(padded) - 2))


def fallback_embed(name: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector from hashed character 3-grams of a name.

    Each 3-gram of ``^name$`` lands in bucket ``h % dim`` with sign taken from
    the top hash bit. Accumulation runs over the sorted 3-gram multiset, so
    the result does not depend on platform or process.
    """
    if dim < 8:
        raise ValueError("fallback_embed needs dim >= 8")
    grams = char_trigrams(normalize_name(name))
    vec = np.zeros(dim)
    for g in grams:
        h = _ngram_hash(g, seed)
        vec[h % dim] += -1.0 if h >> 63 else 1.0
    salt = 0
    while not vec.any():
        # every bucket cancelled; add salted whole-name features until nonzero
        h = _ngram_hash(f"{name}#{salt}", seed)
        vec[h % dim] += -1.0 if h >> 63 else 1.0
        salt += 1
    return vec / np.linalg.norm(vec)


def fallback_store(names: Sequence[str], dim: int, seed: int = 0) -> EmbeddingStore:
    return EmbeddingStore(np.stack([fallback_embed(n, dim, seed) for n in names]) if names else np.empty((0, dim)))
