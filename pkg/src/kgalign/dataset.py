"""On-disk dataset layout shared by the CLI commands.

    <dir>/kg_x/triples.tsv   head<TAB>relation<TAB>tail
    <dir>/kg_x/names.tsv     raw_id<TAB>raw_name
    <dir>/kg_x/emb.tsv       dim<TAB>D, then raw_id<TAB>v1..vD   (optional, see fallback)
    <dir>/kg_y/...           same for the second KG
    <dir>/links_train.tsv    raw_id_x<TAB>raw_id_y
    <dir>/links_test.tsv
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import EmbeddingStore, fallback_store, load_embeddings, save_embeddings
from .kg import AlignmentLinkSet, KnowledgeGraph, load_kg, load_link_set


@dataclass(eq=False)
class Dataset:
    gx: KnowledgeGraph
    gy: KnowledgeGraph
    store_x: EmbeddingStore
    store_y: EmbeddingStore
    links: AlignmentLinkSet


def _load_side(root: Path, fallback_dim: int | None, seed: int):
    rel_names = root / "relations.tsv"
    kg = load_kg(root / "triples.tsv", root / "names.tsv", rel_names if rel_names.exists() else None)
    emb = root / "emb.tsv"
    if not emb.exists() and (root / "emb.npz").exists():
        emb = root / "emb.npz"
    if emb.exists():
        store = load_embeddings(emb, kg)
    elif fallback_dim is not None:
        store = fallback_store(kg.entity_names, fallback_dim, seed)
    else:
        raise FileNotFoundError(f"{root} has no emb.tsv/emb.npz and no fallback dimension was given")
    return kg, store


def load_dataset(root: str | Path, dev_seed: int = 42, fallback_dim: int | None = None, embed_seed: int = 0) -> Dataset:
    root = Path(root)
    gx, sx = _load_side(root / "kg_x", fallback_dim, embed_seed)
    gy, sy = _load_side(root / "kg_y", fallback_dim, embed_seed)
    if sx.dim != sy.dim:
        raise ValueError(f"embedding dims differ between KGs: {sx.dim} vs {sy.dim}")
    links = load_link_set(root / "links_train.tsv", root / "links_test.tsv", gx, gy, seed=dev_seed)
    return Dataset(gx, gy, sx, sy, links)


def _write_tsv(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write("\t".join(row) + "\n")


def write_side(root: Path, kg: KnowledgeGraph, raw_names, vectors: np.ndarray | None) -> None:
    root.mkdir(parents=True, exist_ok=True)
    _write_tsv(root / "names.tsv", zip(kg.entity_raw_ids, raw_names))
    _write_tsv(
        root / "triples.tsv",
        ((kg.entity_raw_ids[h], kg.relation_raw_ids[r], kg.entity_raw_ids[t]) for h, r, t in kg.triples.tolist()),
    )
    _write_tsv(root / "relations.tsv", zip(kg.relation_raw_ids, kg.relation_names))
    if vectors is not None:
        save_embeddings(root / "emb.tsv", kg.entity_raw_ids, vectors)


def write_links(path: Path, pairs: np.ndarray, gx: KnowledgeGraph, gy: KnowledgeGraph) -> None:
    _write_tsv(path, ((gx.entity_raw_ids[a], gy.entity_raw_ids[b]) for a, b in np.asarray(pairs).tolist()))
