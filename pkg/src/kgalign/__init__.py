"""Label-free entity alignment across two knowledge graphs.

Entities are encoded by a one-layer neighborhood-attention network over fixed
name embeddings and trained with a relative similarity objective against
per-graph negative queues and a momentum target encoder.
"""

from .dataset import Dataset, load_dataset
from .embedding import EmbeddingStore, fallback_embed, load_embeddings
from .encoder import EncoderPair, EncoderParams, GraphInputs, encode, encode_all, forward, momentum_update
from .errors import (
    KGAlignError, EmptyName, ParseError, DanglingReference, MissingEntity, DimensionMismatch, ZeroVector,
    DegenerateNorm, NormViolation, ShapeMismatch, QueueNotWarm, EmptyNegatives, CapacityViolation,
    MissingQuery, CheckpointError, ConfigError,
)
from .evaluator import EvalReport, evaluate, hit_at_k, knn_l2
from .kg import AlignmentLinkSet, KnowledgeGraph, load_kg, load_links, neighbor_similarity, normalize_name
from .loss import LossConfig, asm_loss, grad_joint_loss, joint_loss, rsm_loss
from .queue import NegativeQueue, validate_capacity
from .synth import SyntheticBenchmarkSpec, synthesize, write_benchmark
from .trainer import TrainConfig, Trainer, TrainState, adam_step, load_state, save_state, train

__version__ = "0.1.0"
