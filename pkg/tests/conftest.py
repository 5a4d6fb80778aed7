import numpy as np
import pytest

from kgalign.embedding import EmbeddingStore
from kgalign.encoder import GraphInputs
from kgalign.kg import KnowledgeGraph


def unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_kg(rng, n, n_triples, n_rel=3):
    heads = rng.integers(n, size=n_triples)
    tails = rng.integers(n, size=n_triples)
    rels = rng.integers(n_rel, size=n_triples)
    return KnowledgeGraph.build(
        [f"entity {i}" for i in range(n)], [f"rel {r}" for r in range(n_rel)],
        np.stack([heads, rels, tails], axis=1).tolist(),
    )


def random_inputs(rng, n=12, d=4, n_triples=24, relation_mode=False):
    kg = random_kg(rng, n, n_triples)
    store = EmbeddingStore(unit_rows(rng, n, d))
    rel = unit_rows(rng, kg.n_relations, d) if relation_mode else None
    return GraphInputs(kg, store, relation_mode, rel)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
