"""kgalign command line: synth, train, eval, stats, theory.

Settings resolve as defaults < ``--config`` file (flat key=value) < flags.
Every command writes the fully resolved settings to ``<out>/config.txt``.
Exit codes: 0 success, 1 failed check or runtime error, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import theory
from .dataset import load_dataset
from .encoder import EncoderParams, GraphInputs, load_params, save_params
from .errors import ConfigError, KGAlignError
from .evaluator import evaluate, evaluate_vectors, write_ranks, write_report
from .kg import neighbor_similarity
from .synth import SyntheticBenchmarkSpec, synthesize, write_benchmark
from .trainer import TrainConfig, load_state, save_state, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

_BOOL_WORDS = {"on": True, "true": True, "1": True, "yes": True, "off": False, "false": False, "0": False, "no": False}


def parse_config_text(text: str, source: str = "<config>") -> tuple[dict[str, str], list[str]]:
    """Flat ``key = value`` lines; ``#`` starts a comment. Returns (values, problems)."""
    values, problems = {}, []
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{no}: expected key=value, got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            problems.append(f"{source}:{no}: empty key")
            continue
        values[key.replace("-", "_")] = value
    return values, problems


def _coerce(raw, kind, name: str, problems: list[str]):
    if not isinstance(raw, str):
        return raw
    try:
        if kind in (bool, "bool"):
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError
            return _BOOL_WORDS[raw.lower()]
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in ("tuple", "ints"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        problems.append(f"{name}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}")
        return None


def resolve(schema: dict[str, tuple], config_path: str | None, overrides: dict) -> tuple[dict, list[str]]:
    """Merge defaults, the config file and flag overrides, collecting every problem."""
    problems: list[str] = []
    merged: dict = {}
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            problems.append(f"cannot read config {config_path}: {exc}")
            text = ""
        merged, found = parse_config_text(text, config_path)
        problems += found
    merged.update({k: v for k, v in overrides.items() if v is not None})
    out = {}
    for key in merged:
        if key not in schema:
            problems.append(f"unknown setting {key!r}")
    for key, (kind, default) in schema.items():
        value = _coerce(merged[key], kind, key, problems) if key in merged else default
        out[key] = default if value is None else value  # keep going so later checks still run
    return out, problems


def _schema_of(cls) -> dict[str, tuple]:
    inst = cls()
    kinds = {"int": int, "float": float, "bool": bool, "str": str}
    out = {}
    for f in fields(cls):
        kind = kinds.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
        out[f.name] = (kind, getattr(inst, f.name))
    return out


TRAIN_SCHEMA = _schema_of(TrainConfig) | {"k": ("ints", (1, 10)), "embed_dim": (int, 0), "embed_seed": (int, 0)}
SYNTH_SCHEMA = _schema_of(SyntheticBenchmarkSpec)
THEORY_SCHEMA = {
    "dim": (int, 16),
    "tau": (float, 1.0),
    "lams": ("ints", (1, 2)),
    "sample_counts": ("ints", (16, 64, 256, 1024)),
    "trials": (int, 2000),
    "seed": (int, 0),
    "m_ref": (int, 10**6),
    "n_pointwise": (int, 10**5),
    "sandwich_taus": ("floats", (0.08, 0.5, 1.0)),
    "sandwich_dims": ("ints", (4, 16)),
    "sandwich_counts": ("ints", (1, 16, 256)),
    "sandwich_trials": (int, 10000),
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_resolved(out: Path, settings: dict, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {_fmt(v)}" for k, v in sorted((settings | (extra or {})).items())]
    (out / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _on_off(value: str) -> bool:
    if value.lower() not in _BOOL_WORDS:
        raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")
    return _BOOL_WORDS[value.lower()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kgalign", description="Self-supervised entity alignment at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat key=value settings file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")

    s = sub.add_parser("synth", help="generate a seeded synthetic KG pair")
    common(s, data=False)
    s.add_argument("--n-entities", type=int, dest="n_entities")
    s.add_argument("--dim", type=int)
    s.add_argument("--edge-density", type=float, dest="edge_density")
    s.add_argument("--name-noise", type=float, dest="name_noise")
    s.add_argument("--sigma", type=float)

    def model_flags(sp):
        sp.add_argument("--relation-mode", type=_on_off, dest="relation_mode", metavar="{on,off}")
        sp.add_argument("--direction", choices=("x2y", "y2x"))
        sp.add_argument("--candidates", choices=("test", "full"))
        sp.add_argument("--k", type=str, help="comma-separated Hit@k cutoffs, default 1,10")

    t = sub.add_parser("train", help="train the encoder with dual negative queues")
    common(t)
    model_flags(t)
    t.add_argument("--self-negatives", type=_on_off, dest="self_negatives", metavar="{on,off}")
    t.add_argument("--queue-k", type=int, dest="queue_k")
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--tau", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--max-epochs", type=int, dest="max_epochs")
    t.add_argument("--patience", type=int)

    e = sub.add_parser("eval", help="Hit@k of an encoder checkpoint on the test split")
    common(e)
    model_flags(e)
    e.add_argument("--checkpoint", help="encoder file or training state; omitted means untrained init from --seed")
    e.add_argument("--raw", action="store_true", help="score the input embeddings without the encoder")
    e.add_argument("--split", default="test", choices=("train", "dev", "test"))

    st = sub.add_parser("stats", help="neighbor similarity of the aligned pairs")
    common(st)

    th = sub.add_parser("theory", help="Monte Carlo checks of the contrastive-loss theory")
    common(th, data=False)
    th.add_argument("--dim", type=int)
    th.add_argument("--tau", type=float)
    th.add_argument("--trials", type=int)
    return p


_NON_SETTING = {"command", "config", "out", "data", "checkpoint", "raw", "split"}


def _overrides(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in _NON_SETTING}


def _fail_config(problems: list[str]) -> int:
    err = ConfigError(problems)
    print(f"error: {len(problems)} configuration problem(s):", file=sys.stderr)
    for line in err.problems:
        print(f"  - {line}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_synth(args) -> int:
    settings, problems = resolve(SYNTH_SCHEMA, args.config, _overrides(args))
    if not problems:
        try:
            SyntheticBenchmarkSpec(**settings).validate()
        except ValueError as exc:
            problems.append(str(exc))
    if problems:
        return _fail_config(problems)
    out = Path(args.out)
    write_benchmark(synthesize(SyntheticBenchmarkSpec(**settings)), out)
    print(f"wrote synthetic benchmark to {out}")
    return EXIT_OK


def _train_config(settings: dict) -> TrainConfig:
    return TrainConfig(**{k: settings[k] for k in TRAIN_SCHEMA if k in {f.name for f in fields(TrainConfig)}})


def _load(args, settings):
    fallback = settings["embed_dim"] or None
    return load_dataset(args.data, fallback_dim=fallback, embed_seed=settings["embed_seed"])


def _resolve_train(args):
    settings, problems = resolve(TRAIN_SCHEMA, args.config, _overrides(args))
    if settings.get("k") is not None and (not settings["k"] or min(settings["k"]) < 1):
        problems.append(f"k: cutoffs must be positive integers, got {settings['k']}")
    return settings, problems


def cmd_train(args) -> int:
    settings, problems = _resolve_train(args)
    cfg = _train_config(settings)
    ds = _load(args, settings)
    problems += cfg.problems(ds.gx.n_entities, ds.gy.n_entities)
    if problems:
        return _fail_config(problems)
    out = Path(args.out)
    write_resolved(out, settings)
    result = train(
        ds.gx, ds.gy, ds.store_x, ds.store_y, cfg,
        dev_links=ds.links.subset("dev"), log_path=out / "metrics.tsv",
        on_epoch=lambda row: print(
            f"epoch {row['epoch']}: loss {row['loss']:.6f} dev_hit1 {row['dev_hit1']:.4f} dev_hit10 {row['dev_hit10']:.4f}"
        ),
    )
    save_state(out / "state.npz", result.state)
    save_params(out / "best.enc", result.best_params)
    save_params(out / "final.enc", result.state.pair.online)
    print(f"best dev Hit@1 {result.state.best_dev_hit1:.4f}; checkpoints in {out}")
    return EXIT_OK


def _load_checkpoint(path: str) -> EncoderParams:
    if path.endswith(".npz"):
        state = load_state(path)
        return state.best_params if state.best_params is not None else state.pair.online
    return load_params(path)


def cmd_eval(args) -> int:
    settings, problems = _resolve_train(args)
    cfg = _train_config(settings)
    problems += [p for p in cfg.problems() if "candidates" in p or "direction" in p]
    if problems:
        return _fail_config(problems)
    ds = _load(args, settings)
    pairs = ds.links.subset(args.split)
    ks = tuple(settings["k"])
    if args.raw:
        report = evaluate_vectors(ds.store_x.vectors, ds.store_y.vectors, pairs, args.split, cfg.direction, cfg.candidates, ks)
    else:
        params = _load_checkpoint(args.checkpoint) if args.checkpoint else EncoderParams.init(
            ds.store_x.dim, np.random.default_rng(cfg.seed), cfg.leaky_slope
        )
        ix = GraphInputs(ds.gx, ds.store_x, cfg.relation_mode, None, cfg.seed)
        iy = GraphInputs(ds.gy, ds.store_y, cfg.relation_mode, None, cfg.seed)
        report = evaluate(params, ix, iy, pairs, args.split, cfg.direction, cfg.candidates, ks)
    out = Path(args.out)
    write_resolved(out, settings, {"checkpoint": args.checkpoint or "none", "raw": bool(args.raw), "split": args.split})
    write_report(out / "eval.tsv", [report])
    src, dst = (ds.gx, ds.gy) if cfg.direction == "x2y" else (ds.gy, ds.gx)
    write_ranks(out / "ranks.tsv", report, src.entity_raw_ids, dst.entity_raw_ids)
    print("\t".join(f"hit@{k} {v:.4f}" for k, v in sorted(report.hits.items())))
    return EXIT_OK


def cmd_stats(args) -> int:
    settings, problems = resolve({"seed": (int, 42)}, args.config, _overrides(args))
    if problems:
        return _fail_config(problems)
    ds = load_dataset(args.data, dev_seed=settings["seed"], fallback_dim=8)
    out = Path(args.out)
    write_resolved(out, settings)
    rows = [(split, ds.links.subset(split)) for split in ("train", "dev", "test")]
    rows.append(("all", ds.links.pairs))
    with open(out / "stats.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("split\tn_pairs\tneighbor_similarity\n")
        for split, pairs in rows:
            sim = neighbor_similarity(ds.gx, ds.gy, pairs) if len(pairs) else float("nan")
            fh.write(f"{split}\t{len(pairs)}\t{sim!r}\n")
            print(f"{split}: {len(pairs)} pairs, neighbor similarity {sim:.4f}")
    with open(out / "graphs.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("kg\tentities\trelations\ttriples\tmean_degree\n")
        for tag, g in (("x", ds.gx), ("y", ds.gy)):
            deg = float(np.diff(g.nbr_ptr).mean()) if g.n_entities else 0.0
            fh.write(f"{tag}\t{g.n_entities}\t{g.n_relations}\t{len(g.triples)}\t{deg!r}\n")
    return EXIT_OK


def cmd_theory(args) -> int:
    settings, problems = resolve(THEORY_SCHEMA, args.config, _overrides(args))
    base = None
    if not problems:
        base = theory.OracleConfig(
            dim=settings["dim"], tau=settings["tau"], sample_counts=settings["sample_counts"],
            trials=settings["trials"], seed=settings["seed"], m_ref=settings["m_ref"],
            n_pointwise=settings["n_pointwise"],
        )
        problems += base.problems()
        for lam in settings["lams"]:
            if lam < 1:
                problems.append(f"lams: each lambda must be >= 1, got {lam}")
        for tau in settings["sandwich_taus"]:
            if not tau > 0:
                problems.append(f"sandwich_taus: tau must be positive, got {tau}")
        for d in settings["sandwich_dims"]:
            if d < 2:
                problems.append(f"sandwich_dims: dim must be >= 2, got {d}")
    if problems:
        return _fail_config(problems)
    out = Path(args.out)
    write_resolved(out, settings)
    reports = []
    for tau in settings["sandwich_taus"]:
        for d in settings["sandwich_dims"]:
            cfg = theory.OracleConfig(dim=d, tau=tau, sample_counts=settings["sandwich_counts"],
                                      trials=settings["sandwich_trials"], seed=settings["seed"])
            reports.append((f"sandwich_tau{tau:g}_dim{d}", theory.check_sandwich(cfg)))
    for lam in settings["lams"]:
        cfg = theory.OracleConfig(**(asdict(base) | {"lam": lam}))
        reports.append((f"asm_concentration_lam{lam}", theory.check_asm_concentration(cfg)))
    reports.append(("negative_source_gap", theory.check_negative_source_gap(base)))
    ok = True
    for name, rep in reports:
        theory.write_report(out / f"{name}.tsv", rep)
        ok &= rep.passed
        print(f"{'PASS' if rep.passed else 'FAIL'}  {name}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "stats": cmd_stats, "theory": cmd_theory}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail_config(exc.problems)
    except (KGAlignError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
