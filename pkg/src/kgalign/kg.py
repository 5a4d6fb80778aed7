"""Knowledge-graph ingestion: name normalization, TSV loading, 1-hop neighborhoods."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DanglingReference, EmptyName, ParseError

DEFAULT_URL_PREFIXES = (
    "http://dbpedia.org/resource/",
    "http://dbpedia.org/property/",
    "http://dbpedia.org/ontology/",
    "http://zh.dbpedia.org/resource/",
    "http://zh.dbpedia.org/property/",
    "http://ja.dbpedia.org/resource/",
    "http://ja.dbpedia.org/property/",
    "http://fr.dbpedia.org/resource/",
    "http://fr.dbpedia.org/property/",
    "http://www.wikidata.org/entity/",
    "http://yago-knowledge.org/resource/",
)

_UNDERSCORES = re.compile(r"_+")

SPLITS = ("train", "dev", "test")


def _normalize_once(raw: str, prefixes: Sequence[str]) -> str:
    s = raw.strip()
    best = ""
    for p in prefixes:
        if s.startswith(p) and len(p) > len(best):
            best = p
    s = s[len(best):]
    s = _UNDERSCORES.sub(" ", s)
    return s.strip()


def normalize_name(raw: str, prefixes: Sequence[str] = DEFAULT_URL_PREFIXES) -> str:
    """Strip a known URL prefix and turn underscores into spaces.

    Runs of underscores collapse to a single space. The transform is applied
    until it reaches a fixed point, which makes the function idempotent.
    """
    s = raw
    while True:
        t = _normalize_once(s, prefixes)
        if t == s:
            break
        s = t
    if not s:
        raise EmptyName(f"name {raw!r} is empty after normalization")
    return s


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass(eq=False)
class KnowledgeGraph:
    """Immutable KG with dense entity/relation ids and CSR neighbor lists.

    ``nbr_ptr[e]:nbr_ptr[e+1]`` slices ``nbr_ent``/``nbr_rel`` for entity ``e``,
    sorted by (neighbor id, relation id).
    """

    entity_raw_ids: list[str]
    entity_names: list[str]
    relation_raw_ids: list[str]
    relation_names: list[str]
    triples: np.ndarray  # (T, 3) int64: head, relation, tail
    nbr_ptr: np.ndarray = field(repr=False)
    nbr_ent: np.ndarray = field(repr=False)
    nbr_rel: np.ndarray = field(repr=False)

    @classmethod
    def build(
        cls,
        entity_names: Sequence[str],
        relation_names: Sequence[str],
        triples: Iterable[tuple[int, int, int]],
        entity_raw_ids: Sequence[str] | None = None,
        relation_raw_ids: Sequence[str] | None = None,
    ) -> "KnowledgeGraph":
        n_ent = len(entity_names)
        n_rel = len(relation_names)
        arr = np.asarray(list(triples), dtype=np.int64).reshape(-1, 3)
        for h, r, t in arr:
            if not (0 <= h < n_ent and 0 <= t < n_ent):
                raise DanglingReference(f"triple ({h}, {r}, {t}) names an unknown entity")
            if not 0 <= r < n_rel:
                raise DanglingReference(f"triple ({h}, {r}, {t}) names an unknown relation")

        # undirected closure, self-loops dropped, parallel edges deduplicated
        edges = set()
        for h, r, t in arr.tolist():
            if h == t:
                continue
            edges.add((h, t, r))
            edges.add((t, h, r))
        ordered = sorted(edges)
        counts = np.zeros(n_ent + 1, dtype=np.int64)
        for e, _, _ in ordered:
            counts[e + 1] += 1
        ptr = np.cumsum(counts)
        nbr_ent = np.fromiter((n for _, n, _ in ordered), dtype=np.int64, count=len(ordered))
        nbr_rel = np.fromiter((r for _, _, r in ordered), dtype=np.int64, count=len(ordered))

        ent_raw = list(entity_raw_ids) if entity_raw_ids is not None else [str(i) for i in range(n_ent)]
        rel_raw = list(relation_raw_ids) if relation_raw_ids is not None else [str(i) for i in range(n_rel)]
        return cls(ent_raw, list(entity_names), rel_raw, list(relation_names), arr, ptr, nbr_ent, nbr_rel)

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def neighbors(self, e: int) -> list[tuple[int, int]]:
        lo, hi = self.nbr_ptr[e], self.nbr_ptr[e + 1]
        return list(zip(self.nbr_ent[lo:hi].tolist(), self.nbr_rel[lo:hi].tolist()))

    def neighbor_entities(self, e: int) -> set[int]:
        lo, hi = self.nbr_ptr[e], self.nbr_ptr[e + 1]
        return set(self.nbr_ent[lo:hi].tolist())

    def degree(self, e: int) -> int:
        return int(self.nbr_ptr[e + 1] - self.nbr_ptr[e])

    def entity_index(self) -> dict[str, int]:
        return {raw: i for i, raw in enumerate(self.entity_raw_ids)}


def _read_tsv(path: Path, n_cols: int) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != n_cols:
                raise ParseError(path, line_no, f"expected {n_cols} tab-separated fields, got {len(cols)}")
            rows.append((line_no, cols))
    return rows


def load_kg(
    triples_path: str | Path,
    names_path: str | Path,
    relation_names_path: str | Path | None = None,
    prefixes: Sequence[str] = DEFAULT_URL_PREFIXES,
) -> KnowledgeGraph:
    """Load a KG from a triples TSV and an entity-names TSV.

    Entity ids follow the order of the names file. Relation ids follow first
    appearance in the triples file unless a relation-names file is given.
    """
    triples_path, names_path = Path(triples_path), Path(names_path)
    ent_raw, ent_names, ent_index = [], [], {}
    for line_no, (raw, name) in _read_tsv(names_path, 2):
        if raw in ent_index:
            raise ParseError(names_path, line_no, f"duplicate entity id {raw!r}")
        try:
            norm = normalize_name(name, prefixes)
        except EmptyName as exc:
            raise ParseError(names_path, line_no, str(exc)) from exc
        ent_index[raw] = len(ent_raw)
        ent_raw.append(raw)
        ent_names.append(norm)

    rel_raw, rel_names, rel_index = [], [], {}
    if relation_names_path is not None:
        relation_names_path = Path(relation_names_path)
        for line_no, (raw, name) in _read_tsv(relation_names_path, 2):
            if raw in rel_index:
                raise ParseError(relation_names_path, line_no, f"duplicate relation id {raw!r}")
            rel_index[raw] = len(rel_raw)
            rel_raw.append(raw)
            rel_names.append(normalize_name(name, prefixes))

    triples = []
    for line_no, (h, r, t) in _read_tsv(triples_path, 3):
        for raw in (h, t):
            if raw not in ent_index:
                raise DanglingReference(f"{triples_path}:{line_no}: unknown entity {raw!r}")
        if r not in rel_index:
            if relation_names_path is not None:
                raise DanglingReference(f"{triples_path}:{line_no}: unknown relation {r!r}")
            rel_index[r] = len(rel_raw)
            rel_raw.append(r)
            try:
                rel_names.append(normalize_name(r, prefixes))
            except EmptyName:
                rel_names.append(r)
        triples.append((ent_index[h], rel_index[r], ent_index[t]))

    return KnowledgeGraph.build(ent_names, rel_names, triples, ent_raw, rel_raw)


@dataclass
class AlignmentLinkSet:
    """Aligned (x, y) entity pairs, each tagged with a split."""

    pairs: np.ndarray  # (P, 2) int64
    split: np.ndarray  # (P,) object/str tags

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.split = np.asarray(self.split, dtype=object).reshape(-1)
        if len(self.split) != len(self.pairs):
            raise ValueError("pairs and split tags differ in length")
        if len({tuple(p) for p in self.pairs.tolist()}) != len(self.pairs):
            raise ValueError("alignment pairs are not unique")
        bad = set(self.split.tolist()) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags: {sorted(bad)}")

    def __len__(self):
        return len(self.pairs)

    def subset(self, split: str) -> np.ndarray:
        return self.pairs[self.split == split]

    @classmethod
    def from_splits(cls, **splits: np.ndarray) -> "AlignmentLinkSet":
        pairs, tags = [], []
        for name in SPLITS:
            p = np.asarray(splits.get(name, np.empty((0, 2))), dtype=np.int64).reshape(-1, 2)
            pairs.append(p)
            tags.extend([name] * len(p))
        return cls(np.concatenate(pairs), np.array(tags, dtype=object))


def load_links(path: str | Path, gx: KnowledgeGraph, gy: KnowledgeGraph) -> np.ndarray:
    path = Path(path)
    ix, iy = gx.entity_index(), gy.entity_index()
    out = []
    for line_no, (a, b) in _read_tsv(path, 2):
        if a not in ix:
            raise DanglingReference(f"{path}:{line_no}: unknown x-side entity {a!r}")
        if b not in iy:
            raise DanglingReference(f"{path}:{line_no}: unknown y-side entity {b!r}")
        out.append((ix[a], iy[b]))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def dev_size(n_train: int, fraction: float = 0.05) -> int:
    # round half up; Python's round() is half-to-even
    return int(np.floor(fraction * n_train + 0.5))


def split_dev(train_pairs: np.ndarray, fraction: float = 0.05, seed: int = 42) -> tuple[np.ndarray, np.ndarray]:
    """Hold out a seeded random ``fraction`` of the train pairs as a dev set."""
    train_pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    n_dev = dev_size(len(train_pairs), fraction)
    order = np.random.default_rng(seed).permutation(len(train_pairs))
    dev_idx = np.sort(order[:n_dev])
    keep = np.ones(len(train_pairs), dtype=bool)
    keep[dev_idx] = False
    return train_pairs[keep], train_pairs[dev_idx]


def load_link_set(
    train_path: str | Path,
    test_path: str | Path,
    gx: KnowledgeGraph,
    gy: KnowledgeGraph,
    dev_fraction: float = 0.05,
    seed: int = 42,
) -> AlignmentLinkSet:
    train = load_links(train_path, gx, gy)
    test = load_links(test_path, gx, gy)
    rest, dev = split_dev(train, dev_fraction, seed)
    return AlignmentLinkSet.from_splits(train=rest, dev=dev, test=test)


def neighbor_similarity(gx: KnowledgeGraph, gy: KnowledgeGraph, links: AlignmentLinkSet | np.ndarray) -> float:
    """Mean fraction of an aligned pair's x-side neighbors that align into N(y)."""
    pairs = links.pairs if isinstance(links, AlignmentLinkSet) else np.asarray(links).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("neighbor_similarity needs at least one aligned pair")
    mapped: dict[int, set[int]] = {}
    for a, b in pairs.tolist():
        mapped.setdefault(a, set()).add(b)
    total = 0.0
    for x, y in pairs.tolist():
        nx = gx.neighbor_entities(x)
        ny = gy.neighbor_entities(y)
        hit = sum(1 for n in nx if mapped.get(n, set()) & ny)
        total += hit / max(1, len(nx))
    return total / len(pairs)
