"""One-layer, single-head attention aggregator over 1-hop neighbors.

For entity ``e`` with input vector ``v_e`` and neighbor inputs ``n_j``::

    h_c = W_c v_e,  h_j = W_n n_j
    s_j = leaky_relu(attn . [h_c ; h_j])
    alpha = softmax(s),  a = sum_j alpha_j h_j   (a = 0 without neighbors)
    f(e) = (h_c + a) / ||h_c + a||

The online and target copies are synchronized by a momentum average.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import EmbeddingStore, fallback_embed
from .errors import CheckpointError, DegenerateNorm, ShapeMismatch
from .kg import KnowledgeGraph

DEGENERATE_NORM = 1e-12
TENSOR_NAMES = ("w_center", "w_neighbor", "attn")

_MAGIC = b"KGALENC\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIId")


@dataclass(eq=False)
class EncoderParams:
    w_center: np.ndarray  # (dim, dim)
    w_neighbor: np.ndarray  # (dim, dim)
    attn: np.ndarray  # (2 * dim,)
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.w_center = np.asarray(self.w_center, dtype=np.float64)
        self.w_neighbor = np.asarray(self.w_neighbor, dtype=np.float64)
        self.attn = np.asarray(self.attn, dtype=np.float64)
        d = self.w_center.shape[0]
        if self.w_center.shape != (d, d) or self.w_neighbor.shape != (d, d) or self.attn.shape != (2 * d,):
            raise ShapeMismatch(
                f"inconsistent shapes {self.w_center.shape}, {self.w_neighbor.shape}, {self.attn.shape}"
            )

    @property
    def dim(self) -> int:
        return self.w_center.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.w_center.copy(), self.w_neighbor.copy(), self.attn.copy(), self.leaky_slope)

    def replace(self, tensors: dict[str, np.ndarray]) -> "EncoderParams":
        merged = {**self.tensors(), **tensors}
        return EncoderParams(leaky_slope=self.leaky_slope, **merged)

    def allclose(self, other: "EncoderParams", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.tensors().values(), other.tensors().values()))

    def equal(self, other: "EncoderParams") -> bool:
        return self.leaky_slope == other.leaky_slope and all(
            np.array_equal(a, b) for a, b in zip(self.tensors().values(), other.tensors().values())
        )

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator | int = 0, leaky_slope: float = 0.2) -> "EncoderParams":
        """Near-identity start: the untrained encoder stays close to the input embeddings."""
        rng = np.random.default_rng(rng)
        eye = np.eye(dim)
        w_center = eye + rng.uniform(-1e-3, 1e-3, size=(dim, dim))
        w_neighbor = 0.1 * (eye + rng.uniform(-1e-3, 1e-3, size=(dim, dim)))
        bound = 1.0 / np.sqrt(2 * dim)
        attn = rng.uniform(-bound, bound, size=2 * dim)
        return cls(w_center, w_neighbor, attn, leaky_slope)


@dataclass(eq=False)
class EncoderPair:
    online: EncoderParams
    target: EncoderParams
    momentum: float = 0.9999

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        for a, b in zip(self.online.tensors().values(), self.target.tensors().values()):
            if a.shape != b.shape:
                raise ShapeMismatch("online and target encoders differ in shape")

    @classmethod
    def from_online(cls, online: EncoderParams, momentum: float = 0.9999) -> "EncoderPair":
        return cls(online, online.copy(), momentum)


def momentum_update(pair: EncoderPair) -> EncoderPair:
    """target <- m * target + (1 - m) * online, elementwise; online is untouched."""
    m = pair.momentum
    new_target = {
        name: m * t + (1.0 - m) * o
        for (name, t), o in zip(pair.target.tensors().items(), pair.online.tensors().values())
    }
    return EncoderPair(pair.online, pair.target.replace(new_target), m)


class GraphInputs:
    """Frozen encoder inputs for one KG: center vectors and per-edge neighbor vectors.

    With ``relation_mode`` on, each neighbor input is
    ``normalize(v_neighbor + v_relation)``; relation vectors default to the
    hashed n-gram fallback of the relation names.
    """

    def __init__(
        self,
        kg: KnowledgeGraph,
        store: EmbeddingStore,
        relation_mode: bool = False,
        relation_vectors: np.ndarray | None = None,
        seed: int = 0,
    ):
        if len(store) != kg.n_entities:
            raise ShapeMismatch(f"store holds {len(store)} vectors for {kg.n_entities} entities")
        self.kg = kg
        self.relation_mode = relation_mode
        self.center = store.vectors
        self.ptr = kg.nbr_ptr
        edge = store.vectors[kg.nbr_ent]
        if relation_mode:
            if relation_vectors is None:
                relation_vectors = relation_fallback(kg, store.dim, seed)
            rel = np.asarray(relation_vectors, dtype=np.float64)
            if rel.shape != (kg.n_relations, store.dim):
                raise ShapeMismatch(f"relation vectors shape {rel.shape} != ({kg.n_relations}, {store.dim})")
            edge = edge + rel[kg.nbr_rel]
            norms = np.linalg.norm(edge, axis=1)
            if len(norms) and norms.min() < DEGENERATE_NORM:
                raise DegenerateNorm("neighbor plus relation vector has zero norm")
            edge = edge / norms[:, None]
        self.edge = edge

    @property
    def dim(self) -> int:
        return self.center.shape[1]

    @property
    def n_entities(self) -> int:
        return self.center.shape[0]

    def gather(self, batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (center (B, d), neighbors (B, D, d), mask (B, D)) with D = max degree in batch."""
        batch = np.asarray(batch, dtype=np.int64).reshape(-1)
        start = self.ptr[batch]
        deg = self.ptr[batch + 1] - start
        width = int(deg.max()) if len(batch) else 0
        slots = np.arange(width)
        mask = slots[None, :] < deg[:, None]
        idx = np.where(mask, start[:, None] + slots[None, :], 0)
        nbr = self.edge[idx] if len(self.edge) else np.zeros((len(batch), width, self.dim))
        nbr = np.where(mask[..., None], nbr, 0.0)
        return self.center[batch], nbr, mask


def relation_fallback(kg: KnowledgeGraph, dim: int, seed: int = 0) -> np.ndarray:
    if kg.n_relations == 0:
        return np.empty((0, dim))
    return np.stack([fallback_embed(name, dim, seed) for name in kg.relation_names])


@dataclass
class ForwardCache:
    center: np.ndarray
    nbr: np.ndarray
    mask: np.ndarray
    hc: np.ndarray
    hn: np.ndarray
    logits: np.ndarray
    alpha: np.ndarray
    norm: np.ndarray
    out: np.ndarray


def forward(params: EncoderParams, center, nbr, mask) -> ForwardCache:
    d = params.dim
    hc = center @ params.w_center.T
    hn = nbr @ params.w_neighbor.T
    logits = (hc @ params.attn[:d])[:, None] + hn @ params.attn[d:]
    act = np.where(logits > 0, logits, params.leaky_slope * logits)
    act = np.where(mask, act, -np.inf)
    alpha = np.zeros_like(logits)
    has = mask.any(axis=1)
    if has.any():
        a = act[has]
        e = np.exp(a - a.max(axis=1, keepdims=True))
        alpha[has] = e / e.sum(axis=1, keepdims=True)
    z = hc + np.einsum("bj,bjd->bd", alpha, hn)
    norm = np.linalg.norm(z, axis=1)
    if len(norm) and norm.min() < DEGENERATE_NORM:
        raise DegenerateNorm(f"aggregated vector norm {norm.min():.3e} is below {DEGENERATE_NORM}")
    out = z / norm[:, None]
    return ForwardCache(center, nbr, mask, hc, hn, logits, alpha, norm, out)


def backward(params: EncoderParams, cache: ForwardCache, upstream) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/df for every row of a forward pass."""
    d = params.dim
    g = np.asarray(upstream, dtype=np.float64).reshape(cache.out.shape)
    f = cache.out
    dz = (g - f * np.sum(f * g, axis=1, keepdims=True)) / cache.norm[:, None]

    alpha, hn = cache.alpha, cache.hn
    d_alpha = np.einsum("bd,bjd->bj", dz, hn)
    d_act = alpha * (d_alpha - np.sum(alpha * d_alpha, axis=1, keepdims=True))
    d_logit = d_act * np.where(cache.logits > 0, 1.0, params.leaky_slope)
    d_logit = np.where(cache.mask, d_logit, 0.0)

    row = d_logit.sum(axis=1)
    d_hc = dz + row[:, None] * params.attn[:d]
    d_hn = alpha[..., None] * dz[:, None, :] + d_logit[..., None] * params.attn[d:]

    return {
        "w_center": d_hc.T @ cache.center,
        "w_neighbor": np.einsum("bjd,bje->de", d_hn, cache.nbr),
        "attn": np.concatenate([cache.hc.T @ row, np.einsum("bj,bjd->d", d_logit, hn)]),
    }


def encode_batch(
    params: EncoderParams,
    store: EmbeddingStore | GraphInputs,
    kg: KnowledgeGraph | None = None,
    batch=(),
    relation_mode: bool = False,
) -> np.ndarray:
    inputs = store if isinstance(store, GraphInputs) else GraphInputs(kg, store, relation_mode)
    return forward(params, *inputs.gather(batch)).out


def encode(
    params: EncoderParams,
    store: EmbeddingStore | GraphInputs,
    kg: KnowledgeGraph | None = None,
    e: int = 0,
    relation_mode: bool = False,
) -> np.ndarray:
    return encode_batch(params, store, kg, [e], relation_mode)[0]


def encode_all(params: EncoderParams, inputs: GraphInputs, chunk: int = 1024) -> np.ndarray:
    out = np.empty((inputs.n_entities, inputs.dim))
    for lo in range(0, inputs.n_entities, chunk):
        ids = np.arange(lo, min(lo + chunk, inputs.n_entities))
        out[ids] = forward(params, *inputs.gather(ids)).out
    return out


def grad_encode(
    params: EncoderParams,
    store: EmbeddingStore | GraphInputs,
    kg: KnowledgeGraph | None,
    e: int,
    upstream,
    relation_mode: bool = False,
) -> dict[str, np.ndarray]:
    inputs = store if isinstance(store, GraphInputs) else GraphInputs(kg, store, relation_mode)
    cache = forward(params, *inputs.gather([e]))
    return backward(params, cache, np.asarray(upstream, dtype=np.float64)[None, :])


def params_to_bytes(params: EncoderParams) -> bytes:
    parts = [_HEADER.pack(_MAGIC, _VERSION, params.dim, float(params.leaky_slope))]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in params.tensors().values()]
    return b"".join(parts)


def params_from_bytes(blob: bytes) -> EncoderParams:
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, dim, slope = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise CheckpointError("not an encoder checkpoint")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    sizes = (dim * dim, dim * dim, 2 * dim)
    if len(blob) != _HEADER.size + 8 * sum(sizes):
        raise CheckpointError(f"checkpoint body has {len(blob) - _HEADER.size} bytes, expected {8 * sum(sizes)}")
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    wc, wn, at = np.split(flat, np.cumsum(sizes)[:-1])
    return EncoderParams(wc.reshape(dim, dim), wn.reshape(dim, dim), at, slope)


def save_params(path: str | Path, params: EncoderParams) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path: str | Path) -> EncoderParams:
    return params_from_bytes(Path(path).read_bytes())
