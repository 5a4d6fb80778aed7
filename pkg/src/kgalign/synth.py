"""Seeded desk-scale benchmark: two isomorphic KGs with noisy copied embeddings.

G_y is G_x with entity ids permuted, names perturbed character by character,
and embeddings perturbed by Gaussian noise before renormalization. Entities
come in groups of near-duplicates (shared name stem, nearby embeddings) so
that name embeddings alone cannot tell group members apart and neighborhood
structure carries real signal.
"""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, write_links, write_side
from .embedding import EmbeddingStore
from .kg import AlignmentLinkSet, KnowledgeGraph, normalize_name, split_dev

SUFFIXES = ("River", "Lake", "Station", "University", "FC", "Airport", "Castle", "Museum", "Bridge", "Park")
_SYLLABLES = ("ka", "lo", "ri", "ven", "mar", "tos", "el", "dun", "sa", "qui", "bor", "ne", "zu", "ath", "im", "po")


@dataclass
class SyntheticBenchmarkSpec:
    n_entities: int = 2000
    dim: int = 32
    edge_density: float = 5.0  # triples per entity
    name_noise: float = 0.1  # per-character substitution probability on G_y names
    sigma: float = 0.25  # per-coordinate std of the G_y embedding noise
    seed: int = 0
    n_relations: int = 8
    dup_group: int = 4  # entities per near-duplicate group
    dup_spread: float = 0.05  # per-coordinate std of members around their group centre
    train_fraction: float = 0.3

    def validate(self):
        if self.n_entities < 2 or self.dim < 1 or self.n_relations < 1 or self.dup_group < 1:
            raise ValueError(f"invalid synthetic spec {self}")
        if not 0 <= self.name_noise <= 1 or self.sigma < 0 or self.dup_spread < 0 or self.edge_density < 0:
            raise ValueError(f"invalid synthetic spec {self}")


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _stem(rng: np.random.Generator) -> str:
    parts = rng.choice(len(_SYLLABLES), size=int(rng.integers(2, 4)))
    word = "".join(_SYLLABLES[i] for i in parts)
    return word.capitalize()


def _perturb(name: str, rate: float, rng: np.random.Generator) -> str:
    out = []
    for ch in name:
        if ch != "_" and rng.random() < rate:
            out.append(string.ascii_lowercase[int(rng.integers(26))])
        else:
            out.append(ch)
    s = "".join(out)
    try:
        normalize_name(s)
    except ValueError:
        return name
    return s


@dataclass(eq=False)
class SyntheticBenchmark:
    dataset: Dataset
    raw_names_x: list[str]
    raw_names_y: list[str]
    train_pairs: np.ndarray  # full original train split, before the dev hold-out
    spec: SyntheticBenchmarkSpec


def synthesize(spec: SyntheticBenchmarkSpec) -> SyntheticBenchmark:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_entities, spec.dim

    group = np.arange(n) // spec.dup_group
    n_groups = int(group[-1]) + 1
    centres = _unit_rows(rng.standard_normal((n_groups, d)))
    vec_x = _unit_rows(centres[group] + spec.dup_spread * rng.standard_normal((n, d)))

    stems = [_stem(rng) for _ in range(n_groups)]
    names_x = [f"{stems[g]}_{SUFFIXES[i % len(SUFFIXES)]}_{g}" for i, g in enumerate(group)]
    raw_names_x = ["http://dbpedia.org/resource/" + s for s in names_x]

    n_triples = int(round(spec.edge_density * n))
    heads = rng.integers(n, size=n_triples)
    tails = (heads + rng.integers(1, n, size=n_triples)) % n  # never a self-loop
    rels = rng.integers(spec.n_relations, size=n_triples)
    triples_x = np.stack([heads, rels, tails], axis=1)

    perm = rng.permutation(n)  # x id i  ->  y id perm[i]
    inv = np.argsort(perm)
    vec_y = np.empty_like(vec_x)
    vec_y[perm] = _unit_rows(vec_x + spec.sigma * rng.standard_normal((n, d)))
    raw_names_y = [_perturb(names_x[inv[j]], spec.name_noise, rng) for j in range(n)]
    triples_y = np.stack([perm[heads], rels, perm[tails]], axis=1)

    rel_names = [f"relation_{r}" for r in range(spec.n_relations)]
    gx = KnowledgeGraph.build(
        [normalize_name(s) for s in raw_names_x], rel_names, triples_x.tolist(),
        [f"x{i}" for i in range(n)], [f"rx{r}" for r in range(spec.n_relations)],
    )
    gy = KnowledgeGraph.build(
        [normalize_name(s) for s in raw_names_y], rel_names, triples_y.tolist(),
        [f"y{j}" for j in range(n)], [f"ry{r}" for r in range(spec.n_relations)],
    )

    pairs = np.stack([np.arange(n), perm], axis=1)[rng.permutation(n)]
    n_train = int(round(spec.train_fraction * n))
    train, test = pairs[:n_train], pairs[n_train:]
    rest, dev = split_dev(train, 0.05, 42)
    links = AlignmentLinkSet.from_splits(train=rest, dev=dev, test=test)
    ds = Dataset(gx, gy, EmbeddingStore(vec_x), EmbeddingStore(vec_y), links)
    return SyntheticBenchmark(ds, raw_names_x, raw_names_y, train, spec)


def write_benchmark(bench: SyntheticBenchmark, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ds = bench.dataset
    write_side(out / "kg_x", ds.gx, bench.raw_names_x, ds.store_x.vectors)
    write_side(out / "kg_y", ds.gy, bench.raw_names_y, ds.store_y.vectors)
    write_links(out / "links_train.tsv", bench.train_pairs, ds.gx, ds.gy)
    write_links(out / "links_test.tsv", ds.links.subset("test"), ds.gx, ds.gy)
    (out / "synth.json").write_text(json.dumps(asdict(bench.spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
