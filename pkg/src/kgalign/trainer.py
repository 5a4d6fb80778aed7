"""Self-supervised training loop: dual queues, joint RSM loss, Adam, momentum target."""

from __future__ import annotations

import io
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .embedding import EmbeddingStore
from .encoder import EncoderPair, EncoderParams, GraphInputs, forward, momentum_update, params_from_bytes, params_to_bytes
from .errors import CapacityViolation, CheckpointError, ConfigError
from .evaluator import CANDIDATE_SETS, DIRECTIONS, EvalReport, evaluate
from .kg import KnowledgeGraph
from .loss import LossConfig, grad_joint_loss
from .queue import NegativeQueue, validate_capacity

LOG_COLUMNS = ("epoch", "step", "loss", "dev_hit1", "dev_hit10", "wall_ms")


@dataclass
class TrainConfig:
    batch_size: int = 64
    queue_k: int = 64
    tau: float = 0.08
    momentum: float = 0.9999
    lr: float = 1e-6
    max_epochs: int = 100
    patience: int = 5
    seed: int = 42
    relation_mode: bool = False
    self_negatives: bool = True
    lam: int = 1
    leaky_slope: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    direction: str = "x2y"
    candidates: str = "test"
    dev_candidates: str = "full"

    def problems(self, ex_count: int | None = None, ey_count: int | None = None) -> list[str]:
        out = []
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.queue_k < 0:
            out.append(f"queue_k must be >= 0 (got {self.queue_k})")
        if not self.tau > 0:
            out.append(f"tau must be > 0 (got {self.tau})")
        if not 0 <= self.momentum < 1:
            out.append(f"momentum must lie in [0, 1) (got {self.momentum})")
        if self.lr < 0:
            out.append(f"lr must be >= 0 (got {self.lr})")
        if self.max_epochs < 0:
            out.append(f"max_epochs must be >= 0 (got {self.max_epochs})")
        if self.patience < 1:
            out.append(f"patience must be >= 1 (got {self.patience})")
        if int(self.lam) != self.lam or self.lam < 1:
            out.append(f"lam must be an integer >= 1 (got {self.lam})")
        if self.direction not in DIRECTIONS:
            out.append(f"direction must be one of {DIRECTIONS} (got {self.direction!r})")
        for name in ("candidates", "dev_candidates"):
            if getattr(self, name) not in CANDIDATE_SETS:
                out.append(f"{name} must be one of {CANDIDATE_SETS} (got {getattr(self, name)!r})")
        if ex_count is not None and ey_count is not None and self.batch_size >= 1 and self.queue_k >= 0:
            try:
                validate_capacity(self.queue_k, self.batch_size, ex_count, ey_count)
            except CapacityViolation as exc:
                out.append(f"CapacityViolation: {exc}")
        return out

    def loss_config(self) -> LossConfig:
        return LossConfig(self.tau, int(self.lam))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def adam_step(params, grads, m, v, t: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update (t is the 1-based step count).

    Works on dicts of arrays (or scalars); returns new (params, m, v).
    """
    new_p, new_m, new_v = {}, {}, {}
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        mk = beta1 * m[name] + (1.0 - beta1) * g
        vk = beta2 * v[name] + (1.0 - beta2) * g * g
        new_p[name] = p - lr * (mk / bc1) / (np.sqrt(vk / bc2) + eps)
        new_m[name] = mk
        new_v[name] = vk
    return new_p, new_m, new_v


@dataclass(eq=False)
class TrainState:
    pair: EncoderPair
    adam_m: dict
    adam_v: dict
    adam_t: int
    queue_x: NegativeQueue
    queue_y: NegativeQueue
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    opt_steps: int = 0
    cursor: int = 0
    perm_x: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    perm_y: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    best_dev_hit1: float = -1.0
    best_params: EncoderParams | None = None

    @classmethod
    def fresh(cls, dim: int, cfg: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(cfg.seed)
        online = EncoderParams.init(dim, rng, cfg.leaky_slope)
        zeros = {k: np.zeros_like(t) for k, t in online.tensors().items()}
        return cls(
            pair=EncoderPair.from_online(online, cfg.momentum),
            adam_m=zeros,
            adam_v={k: z.copy() for k, z in zeros.items()},
            adam_t=0,
            queue_x=NegativeQueue(cfg.queue_k, cfg.batch_size, dim, "x"),
            queue_y=NegativeQueue(cfg.queue_k, cfg.batch_size, dim, "y"),
            rng=rng,
        )


class Trainer:
    """Owns the mutable training state for one KG pair.

    The trainer sees entities and their embeddings only; alignment labels
    never reach it.
    """

    def __init__(self, inputs_x: GraphInputs, inputs_y: GraphInputs, cfg: TrainConfig, state: TrainState | None = None):
        problems = cfg.problems(inputs_x.n_entities, inputs_y.n_entities)
        if problems:
            capacity = [p for p in problems if p.startswith("CapacityViolation")]
            if capacity:
                raise CapacityViolation("; ".join(problems))
            raise ConfigError(problems)
        if inputs_x.dim != inputs_y.dim:
            raise ConfigError([f"embedding dims differ: {inputs_x.dim} vs {inputs_y.dim}"])
        self.inputs_x = inputs_x
        self.inputs_y = inputs_y
        self.cfg = cfg
        self.loss_cfg = cfg.loss_config()
        self.state = state if state is not None else TrainState.fresh(inputs_x.dim, cfg)

    @property
    def steps_per_epoch(self) -> int:
        n = self.cfg.batch_size
        return min(self.inputs_x.n_entities // n, self.inputs_y.n_entities // n)

    def _begin_epoch(self):
        s = self.state
        s.perm_x = s.rng.permutation(self.inputs_x.n_entities)
        s.perm_y = s.rng.permutation(self.inputs_y.n_entities)
        s.cursor = 0

    def train_step(self) -> float | None:
        """Advance one paired batch. Returns the loss, or None while the queues warm up."""
        s, cfg = self.state, self.cfg
        if s.cursor == 0 and len(s.perm_x) == 0:
            self._begin_epoch()
        n = cfg.batch_size
        ids_x = s.perm_x[s.cursor * n:(s.cursor + 1) * n]
        ids_y = s.perm_y[s.cursor * n:(s.cursor + 1) * n]
        target = s.pair.target
        tx = forward(target, *self.inputs_x.gather(ids_x)).out
        ty = forward(target, *self.inputs_y.gather(ids_y)).out

        loss = None
        if s.queue_x.warm and s.queue_y.warm:
            loss, grads = grad_joint_loss(
                s.pair.online, self.inputs_x, self.inputs_y, ids_x, ids_y,
                s.queue_x, s.queue_y, self.loss_cfg, tx, ty, cfg.self_negatives,
            )
            s.adam_t += 1
            new_p, s.adam_m, s.adam_v = adam_step(
                s.pair.online.tensors(), grads, s.adam_m, s.adam_v, s.adam_t,
                cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
            )
            online = s.pair.online.replace(new_p)
            s.pair = momentum_update(EncoderPair(online, s.pair.target, s.pair.momentum))
            s.opt_steps += 1
        s.queue_x.push(tx, ids_x)
        s.queue_y.push(ty, ids_y)

        s.step += 1
        s.cursor += 1
        if s.cursor >= self.steps_per_epoch:
            s.epoch += 1
            s.cursor = 0
            s.perm_x = np.empty(0, dtype=np.int64)
            s.perm_y = np.empty(0, dtype=np.int64)
        return loss

    def run_epoch(self) -> float:
        """Run the remaining steps of the current epoch; mean loss over optimizer steps (nan if none)."""
        start_epoch = self.state.epoch
        losses = []
        while self.state.epoch == start_epoch:
            loss = self.train_step()
            if loss is not None:
                losses.append(loss)
        return float(np.mean(losses)) if losses else float("nan")


@dataclass
class TrainResult:
    state: TrainState
    best_params: EncoderParams
    log: list[dict]
    stopped_early: bool


def train(
    gx: KnowledgeGraph,
    gy: KnowledgeGraph,
    store_x: EmbeddingStore,
    store_y: EmbeddingStore,
    cfg: TrainConfig,
    dev_links=None,
    log_path: str | Path | None = None,
    relation_vectors=(None, None),
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train until ``max_epochs`` or ``patience`` dev evaluations without a Hit@1 gain.

    Dev links, if given, are used only inside the evaluation closure; the
    returned ``best_params`` are those with the best dev Hit@1 (including the
    untrained start, evaluated as epoch 0).
    """
    inputs_x = GraphInputs(gx, store_x, cfg.relation_mode, relation_vectors[0], cfg.seed)
    inputs_y = GraphInputs(gy, store_y, cfg.relation_mode, relation_vectors[1], cfg.seed)
    trainer = Trainer(inputs_x, inputs_y, cfg)

    dev_eval: Callable[[EncoderParams], EvalReport] | None = None
    if dev_links is not None and len(dev_links):
        dev_pairs = np.asarray(dev_links, dtype=np.int64).reshape(-1, 2)

        def dev_eval(params):
            return evaluate(params, inputs_x, inputs_y, dev_pairs, "dev", cfg.direction, cfg.dev_candidates)

    log: list[dict] = []
    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "w", encoding="utf-8", newline="\n")
        log_fh.write("\t".join(LOG_COLUMNS) + "\n")

    def record(epoch, loss, report, wall_ms):
        row = {
            "epoch": epoch,
            "step": trainer.state.step,
            "loss": loss,
            "dev_hit1": report.hit1 if report else float("nan"),
            "dev_hit10": report.hit10 if report else float("nan"),
            "wall_ms": wall_ms,
        }
        log.append(row)
        if log_fh:
            log_fh.write("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in LOG_COLUMNS) + "\n")
            log_fh.flush()
        if on_epoch:
            on_epoch(row)

    state = trainer.state
    stale = 0
    stopped_early = False
    try:
        t0 = time.perf_counter()
        report = dev_eval(state.pair.online) if dev_eval else None
        state.best_params = state.pair.online.copy()
        state.best_dev_hit1 = report.hit1 if report else -1.0
        record(0, float("nan"), report, int((time.perf_counter() - t0) * 1000))
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            loss = trainer.run_epoch()
            report = dev_eval(state.pair.online) if dev_eval else None
            if report is None or report.hit1 > state.best_dev_hit1:
                state.best_dev_hit1 = report.hit1 if report else -1.0
                state.best_params = state.pair.online.copy()
                stale = 0
            else:
                stale += 1
            record(epoch, loss, report, int((time.perf_counter() - t0) * 1000))
            if stale >= cfg.patience:
                stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(state, state.best_params, log, stopped_early)


def save_state(path: str | Path, state: TrainState) -> None:
    """Write a TrainState to one ``.npz`` archive; restoring it is bit-exact."""
    arrays = {
        "online": np.frombuffer(params_to_bytes(state.pair.online), dtype=np.uint8),
        "target": np.frombuffer(params_to_bytes(state.pair.target), dtype=np.uint8),
        "perm_x": state.perm_x,
        "perm_y": state.perm_y,
    }
    if state.best_params is not None:
        arrays["best"] = np.frombuffer(params_to_bytes(state.best_params), dtype=np.uint8)
    for name in state.adam_m:
        arrays[f"adam_m.{name}"] = state.adam_m[name]
        arrays[f"adam_v.{name}"] = state.adam_v[name]
    meta = {
        "momentum": state.pair.momentum,
        "adam_t": state.adam_t,
        "epoch": state.epoch,
        "step": state.step,
        "opt_steps": state.opt_steps,
        "cursor": state.cursor,
        "best_dev_hit1": state.best_dev_hit1,
        "rng": state.rng.bit_generator.state,
        "queues": {},
    }
    for tag, q in (("x", state.queue_x), ("y", state.queue_y)):
        qs = q.state()
        meta["queues"][tag] = {k: qs[k] for k in ("capacity", "batch_size", "dim", "kg_tag")}
        meta["queues"][tag]["length"] = len(qs["ids"])
        for i, (ids, vecs) in enumerate(zip(qs["ids"], qs["vecs"])):
            arrays[f"queue_{tag}.ids.{i}"] = ids
            arrays[f"queue_{tag}.vecs.{i}"] = vecs
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_state(path: str | Path) -> TrainState:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read training state {path}: {exc}") from exc
    with data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        online = params_from_bytes(bytes(data["online"]))
        target = params_from_bytes(bytes(data["target"]))
        best = params_from_bytes(bytes(data["best"])) if "best" in data.files else None
        names = list(online.tensors())
        adam_m = {n: np.array(data[f"adam_m.{n}"]) for n in names}
        adam_v = {n: np.array(data[f"adam_v.{n}"]) for n in names}
        queues = {}
        for tag in ("x", "y"):
            qm = meta["queues"][tag]
            qs = dict(qm)
            qs["ids"] = [np.array(data[f"queue_{tag}.ids.{i}"]) for i in range(qm["length"])]
            qs["vecs"] = [np.array(data[f"queue_{tag}.vecs.{i}"]) for i in range(qm["length"])]
            queues[tag] = NegativeQueue.from_state(qs)
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        return TrainState(
            pair=EncoderPair(online, target, meta["momentum"]),
            adam_m=adam_m,
            adam_v=adam_v,
            adam_t=meta["adam_t"],
            queue_x=queues["x"],
            queue_y=queues["y"],
            rng=rng,
            epoch=meta["epoch"],
            step=meta["step"],
            opt_steps=meta["opt_steps"],
            cursor=meta["cursor"],
            perm_x=np.array(data["perm_x"], dtype=np.int64),
            perm_y=np.array(data["perm_y"], dtype=np.int64),
            best_dev_hit1=meta["best_dev_hit1"],
            best_params=best,
        )


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
