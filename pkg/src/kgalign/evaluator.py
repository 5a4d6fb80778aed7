"""Exact L2 nearest-neighbor search and Hit@k."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderParams, GraphInputs, encode_all
from .errors import DimensionMismatch, MissingQuery

DIRECTIONS = ("x2y", "y2x")
CANDIDATE_SETS = ("test", "full")


def _sqdist_direct(q: np.ndarray, targets: np.ndarray) -> np.ndarray:
    diff = targets - q
    return np.einsum("ij,ij->i", diff, diff)


def knn_l2(queries, targets, k: int, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """k nearest targets per query by L2 distance, ascending, ties to the smaller index.

    Distances are screened with the Gram-matrix expansion, then every target
    within rounding slack of the k-th screened distance is re-measured
    directly so ordering and ties are exact. Returns (indices, distances),
    both of shape (n_queries, k).
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if queries.shape[1] != targets.shape[1]:
        raise DimensionMismatch(f"query dim {queries.shape[1]} != target dim {targets.shape[1]}")
    n_t = len(targets)
    if not 1 <= k <= n_t:
        raise ValueError(f"k={k} must lie in [1, {n_t}]")
    t_sq = np.einsum("ij,ij->i", targets, targets)
    out_idx = np.empty((len(queries), k), dtype=np.int64)
    out_dist = np.empty((len(queries), k))
    for lo in range(0, len(queries), chunk):
        q = queries[lo:lo + chunk]
        q_sq = np.einsum("ij,ij->i", q, q)
        approx = q_sq[:, None] + t_sq[None, :] - 2.0 * (q @ targets.T)
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        slack = 1e-9 * (1.0 + q_sq + t_sq.max())
        for r in range(len(q)):
            cand = np.flatnonzero(approx[r] <= kth[r] + slack[r])
            exact = _sqdist_direct(q[r], targets[cand])
            order = np.lexsort((cand, exact))[:k]
            out_idx[lo + r] = cand[order]
            out_dist[lo + r] = np.sqrt(exact[order])
    return out_idx, out_dist


@dataclass
class EvalReport:
    hits: dict[int, float]
    ranks: list  # per query: 1-based rank within the returned list, None if beyond it
    split: str = "test"
    n_queries: int = 0
    query_ids: list = field(default_factory=list)
    true_ids: list = field(default_factory=list)

    @property
    def hit1(self) -> float:
        return self.hits.get(1, float("nan"))

    @property
    def hit10(self) -> float:
        return self.hits.get(10, float("nan"))

    def rows(self) -> list[tuple[str, int, float, int]]:
        return [(self.split, k, v, self.n_queries) for k, v in sorted(self.hits.items())]


def hit_at_k(test_links, query_ids, ranked, split: str = "test", ks: Sequence[int] = (1, 10)) -> EvalReport:
    """Fraction of (source, target) links whose target is among the first k ranked ids.

    ``ranked[i]`` is the ordered candidate id list for ``query_ids[i]``.
    """
    pairs = np.asarray(test_links, dtype=np.int64).reshape(-1, 2)
    row_of = {int(q): i for i, q in enumerate(np.asarray(query_ids).reshape(-1))}
    ranked = np.asarray(ranked)
    ranks = []
    for src, tgt in pairs.tolist():
        if src not in row_of:
            raise MissingQuery(f"source entity {src} was not queried")
        found = np.flatnonzero(ranked[row_of[src]] == tgt)
        ranks.append(int(found[0]) + 1 if len(found) else None)
    n = len(pairs)
    width = ranked.shape[1] if ranked.ndim == 2 else 0
    hits = {}
    for k in ks:
        if k > width:
            continue
        hits[k] = sum(1 for r in ranks if r is not None and r <= k) / n if n else 0.0
    return EvalReport(hits, ranks, split, n, pairs[:, 0].tolist(), pairs[:, 1].tolist())


def evaluate_vectors(
    vec_x: np.ndarray,
    vec_y: np.ndarray,
    pairs,
    split: str = "test",
    direction: str = "x2y",
    candidates: str = "test",
    ks: Sequence[int] = (1, 10),
) -> EvalReport:
    """Hit@k for encoded entity matrices of both KGs.

    ``direction`` x2y queries G_x sources against G_y; y2x swaps the roles.
    ``candidates`` is ``test`` (the split's target-side entities) or ``full``.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if candidates not in CANDIDATE_SETS:
        raise ValueError(f"candidates must be one of {CANDIDATE_SETS}")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if direction == "y2x":
        pairs = pairs[:, ::-1]
        vec_x, vec_y = vec_y, vec_x
    sources = np.unique(pairs[:, 0])
    pool = np.unique(pairs[:, 1]) if candidates == "test" else np.arange(len(vec_y))
    k = min(max(ks), len(pool))
    idx, _ = knn_l2(vec_x[sources], vec_y[pool], k)
    report = hit_at_k(pairs, sources, pool[idx], split, [kk for kk in ks if kk <= k])
    return report


def evaluate(
    params: EncoderParams,
    inputs_x: GraphInputs,
    inputs_y: GraphInputs,
    pairs,
    split: str = "test",
    direction: str = "x2y",
    candidates: str = "test",
    ks: Sequence[int] = (1, 10),
) -> EvalReport:
    return evaluate_vectors(
        encode_all(params, inputs_x), encode_all(params, inputs_y), pairs, split, direction, candidates, ks
    )


def write_report(path: str | Path, reports: Sequence[EvalReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("split\tk\tvalue\tn_queries\n")
        for rep in reports:
            for split, k, value, n in rep.rows():
                fh.write(f"{split}\t{k}\t{value!r}\t{n}\n")


def write_ranks(path: str | Path, report: EvalReport, raw_x: Sequence[str], raw_y: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query\ttarget\trank\n")
        for q, t, r in zip(report.query_ids, report.true_ids, report.ranks):
            fh.write(f"{raw_x[q]}\t{raw_y[t]}\t{'' if r is None else r}\n")
