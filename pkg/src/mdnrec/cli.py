"""Command-line pipeline: preprocess, embed, train, evaluate, recommend,
baseline, and synth subcommands driven by a JSON experiment config.

Config keys can be overridden by flags (``--seed``, ``--out``, ``--model``,
``--k``). Every subcommand exits 0 only after its artifact is fully written;
bad input or missing upstream artifacts exit nonzero with a message on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .baselines import build_table, item_cf_rank, rvi_rank
from .data import (DataError, SyntheticConfig, generate_synthetic, load_bundle,
                   preprocess_movielens, preprocess_recsys, save_bundle)
from .embeddings import CbowConfig, EmbeddingMatrix, normalize, train_cbow
from .evaluation import (MetricReport, component_trend_rows, evaluate_ranker,
                         rank_items)
from .models import ModelConfig, Recommender
from .rng import substream
from .training import TrainConfig, train

DEFAULT_CUTOFFS = [10, 20]

CONFIG_SCHEMA = {
    "seed": None,
    "out_dir": None,
    "dataset": {"kind", "path", "delimiter", "columns", "synthetic"},
    "embedding": {f.name for f in dataclass_fields(CbowConfig)},
    "model": {"name", "hidden_dim", "emb_dim", "variance_floor",
              "attention_scorer", "init_scale", "dtype"},
    "training": {f.name for f in dataclass_fields(TrainConfig)},
    "evaluation": {"cutoffs", "exclude_history"},
}

SYNTHETIC_KEYS = {f.name for f in dataclass_fields(SyntheticConfig)}


class CliError(Exception):
    """User-facing failure; message printed to stderr, exit nonzero."""


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(config, dict):
        raise CliError(f"{path}: config must be a JSON object")
    validate_config(config, str(path))
    return config


def validate_config(config: dict, source: str = "config") -> None:
    unknown = set(config) - set(CONFIG_SCHEMA)
    if unknown:
        raise CliError(f"{source}: unknown keys {sorted(unknown)}; "
                       f"allowed: {sorted(CONFIG_SCHEMA)}")
    for section, allowed in CONFIG_SCHEMA.items():
        if allowed is None or section not in config:
            continue
        if not isinstance(config[section], dict):
            raise CliError(f"{source}: section {section!r} must be an object")
        extra = set(config[section]) - allowed
        if extra:
            raise CliError(f"{source}: unknown keys {sorted(extra)} in section "
                           f"{section!r}; allowed: {sorted(allowed)}")
    synthetic = config.get("dataset", {}).get("synthetic", {})
    extra = set(synthetic) - SYNTHETIC_KEYS
    if extra:
        raise CliError(f"{source}: unknown synthetic keys {sorted(extra)}")


def _merged(args, config: dict) -> dict:
    merged = dict(config)
    if getattr(args, "seed", None) is not None:
        merged["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        merged["out_dir"] = args.out
    if getattr(args, "model", None) is not None:
        merged.setdefault("model", {})
        merged["model"] = dict(merged["model"], name=args.model)
    if getattr(args, "k", None) is not None:
        merged.setdefault("evaluation", {})
        merged["evaluation"] = dict(merged["evaluation"], cutoffs=args.k)
    merged.setdefault("seed", 0)
    if "out_dir" not in merged:
        raise CliError("no output directory: pass --out or set out_dir in the config")
    return merged


def _out_dir(merged) -> Path:
    out = Path(merged["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_embeddings(out: Path) -> EmbeddingMatrix:
    path = out / "embeddings.ckpt"
    if not path.exists():
        raise CliError(f"no embeddings at {path}; run the embed or synth command first")
    return EmbeddingMatrix.load(path)


def _load_dataset(out: Path):
    try:
        return load_bundle(out / "dataset")
    except FileNotFoundError:
        raise CliError(f"no dataset under {out / 'dataset'}; run preprocess or synth first") from None


def _model_config(merged, emb_dim: int) -> ModelConfig:
    section = dict(merged.get("model", {}))
    name = section.pop("name", "RNN-RNN-1")
    section.setdefault("emb_dim", emb_dim)
    try:
        return ModelConfig.from_name(name, **section)
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad model config: {exc}") from None


def cmd_preprocess(args) -> int:
    merged = _merged(args, load_config(args.config) if args.config else {})
    out = _out_dir(merged)
    dataset = merged.get("dataset", {})
    kind = args.kind or dataset.get("kind")
    path = args.input or dataset.get("path")
    if path is None:
        raise CliError("no input file: pass a path or set dataset.path in the config")
    seed = merged["seed"]
    delimiter = dataset.get("delimiter", ",")
    columns = dataset.get("columns")
    if kind == "movielens":
        bundle = preprocess_movielens(path, seed=seed, delimiter=delimiter, columns=columns)
    elif kind == "recsys":
        bundle = preprocess_recsys(path, seed=seed, delimiter=delimiter, columns=columns)
    else:
        raise CliError(f"unknown dataset kind {kind!r}: expected movielens or recsys")
    save_bundle(out / "dataset", bundle)
    print(f"sequences: train={len(bundle.train)} valid={len(bundle.valid)} "
          f"test={len(bundle.test)}")
    print(f"vocabulary: {len(bundle.vocabulary)} items")
    print(f"oov dropped: {bundle.provenance['oov_items_dropped']} items, "
          f"{bundle.provenance['oov_sequences_dropped']} sequences")
    return 0


def cmd_synth(args) -> int:
    merged = _merged(args, load_config(args.config) if args.config else {})
    out = _out_dir(merged)
    params = merged.get("dataset", {}).get("synthetic", {})
    config = SyntheticConfig(**params)
    bundle, emb = generate_synthetic(config, seed=merged["seed"])
    save_bundle(out / "dataset", bundle)
    emb.save(out / "embeddings.ckpt")
    emb.save_text(out / "embeddings.txt")
    print(f"sequences: train={len(bundle.train)} valid={len(bundle.valid)} "
          f"test={len(bundle.test)}")
    print(f"vocabulary: {len(bundle.vocabulary)} items in {config.n_clusters} clusters")
    return 0


def cmd_embed(args) -> int:
    merged = _merged(args, load_config(args.config) if args.config else {})
    out = _out_dir(merged)
    bundle = _load_dataset(out)
    config = CbowConfig(**merged.get("embedding", {}))
    matrix = train_cbow(bundle.train, len(bundle.vocabulary), config, seed=merged["seed"])
    matrix = normalize(matrix)
    matrix.tokens = bundle.vocabulary.tokens
    matrix.save(out / "embeddings.ckpt")
    matrix.save_text(out / "embeddings.txt")
    print(f"embeddings: {matrix.vocab_size} x {matrix.dim}, unit-norm rows")
    return 0


def cmd_train(args) -> int:
    merged = _merged(args, load_config(args.config) if args.config else {})
    out = _out_dir(merged)
    bundle = _load_dataset(out)
    emb = _load_embeddings(out)
    model_config = _model_config(merged, emb.dim)
    train_config = TrainConfig(**dict(merged.get("training", {}), seed=merged["seed"]))
    model = Recommender(model_config, emb, rng=substream(merged["seed"], "init"))
    log_path = out / f"{model_config.name}.log"
    result = train(model, bundle, train_config, log_path=log_path)
    ckpt = out / f"{model_config.name}.ckpt"
    model.save(ckpt)
    print(f"trained {model_config.name}: best valid f1@{train_config.f1_cutoff} = "
          f"{result.best_f1:.4f} at epoch {result.best_epoch} "
          f"({result.epochs_run} epochs run)")
    print(f"checkpoint: {ckpt}")
    return 0


def _mixture_ranker(model: Recommender):
    def recommend(history, k, exclude):
        return rank_items(model.predict(history), model.embeddings, k, exclude)
    return recommend


def cmd_evaluate(args) -> int:
    merged = _merged(args, load_config(args.config) if args.config else {})
    out = _out_dir(merged)
    bundle = _load_dataset(out)
    emb = _load_embeddings(out)
    evaluation = merged.get("evaluation", {})
    cutoffs = [int(k) for k in evaluation.get("cutoffs", DEFAULT_CUTOFFS)]
    exclude_history = bool(evaluation.get("exclude_history", False))

    names = args.models or ([merged["model"]["name"]] if merged.get("model", {}).get("name")
                            else None)
    if not names:
        names = sorted(p.stem for p in out.glob("*.ckpt") if p.stem != "embeddings")
    if not names:
        raise CliError(f"no model checkpoints in {out}; run train first")

    reports: dict[str, MetricReport] = {}
    trend: dict[tuple[str, int], MetricReport] = {}
    for name in names:
        path = out / f"{name}.ckpt"
        if not path.exists():
            raise CliError(f"missing checkpoint {path}")
        model = Recommender.load(path, emb)
        report = evaluate_ranker(_mixture_ranker(model), bundle.test, cutoffs,
                                 exclude_history=exclude_history)
        reports[model.config.name] = report
        family = model.config.name.rsplit("-", 1)[0]
        trend[(family, model.config.n_components)] = report

    lines = ["model,cutoff,precision,recall,ndcg,f1"]
    for name, report in reports.items():
        print(report.table(name))
        lines.extend(report.rows(name))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")

    trend_lines = ["model,components,metric,value"]
    for cutoff in cutoffs:
        trend_lines.extend(component_trend_rows(trend, cutoff))
    (out / "component_trend.csv").write_text("\n".join(trend_lines) + "\n")
    print(f"wrote {out / 'metrics.csv'} and {out / 'component_trend.csv'}")
    return 0


def cmd_recommend(args) -> int:
    merged = _merged(args, load_config(args.config) if args.config else {})
    out = _out_dir(merged)
    emb = _load_embeddings(out)
    name = merged.get("model", {}).get("name")
    if not name:
        raise CliError("no model name: pass --model")
    path = out / f"{name}.ckpt"
    if not path.exists():
        raise CliError(f"missing checkpoint {path}")
    model = Recommender.load(path, emb)

    tokens = emb.tokens or [str(i) for i in range(emb.vocab_size)]
    index = {t: i for i, t in enumerate(tokens)}
    history = []
    for token in args.items.split(","):
        token = token.strip()
        if token not in index:
            raise CliError(f"unknown item {token!r}")
        history.append(index[token])
    k = args.k[0] if args.k else 10
    ranked = rank_items(model.predict(history), emb, k)
    for position, (item, score) in enumerate(zip(ranked.items, ranked.scores), start=1):
        print(f"{position}\t{tokens[item]}\t{score:.6f}")
    return 0


def cmd_baseline(args) -> int:
    merged = _merged(args, load_config(args.config) if args.config else {})
    out = _out_dir(merged)
    bundle = _load_dataset(out)
    evaluation = merged.get("evaluation", {})
    cutoffs = [int(k) for k in evaluation.get("cutoffs", DEFAULT_CUTOFFS)]
    exclude_history = bool(evaluation.get("exclude_history", False))
    vocab_size = len(bundle.vocabulary)

    table = build_table(bundle.train)
    table.save(out / "cooccurrence.tsv")

    def itemcf(history, k, exclude):
        return item_cf_rank(history, table, vocab_size, k, exclude)

    def rvi(history, k, exclude):
        ranked = rvi_rank(history)
        if exclude:
            kept = [(i, s) for i, s in zip(ranked.items, ranked.scores) if i not in exclude]
            ranked.items = [i for i, _ in kept]
            ranked.scores = [s for _, s in kept]
        return ranked

    lines = ["model,cutoff,precision,recall,ndcg,f1"]
    for name, ranker in (("Item-CF", itemcf), ("RVI", rvi)):
        report = evaluate_ranker(ranker, bundle.test, cutoffs,
                                 exclude_history=exclude_history)
        print(report.table(name))
        lines.extend(report.rows(name))
    (out / "baseline_metrics.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'baseline_metrics.csv'}")
    return 0


def _parse_k_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad cutoff list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdnrec",
        description="History-based recommendation via mixture density estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--model", help="model name, e.g. RNN-ATT-RNN-4")
        p.add_argument("--k", type=_parse_k_list, help="comma-separated cutoffs")

    p = sub.add_parser("preprocess", help="turn a raw log into a dataset bundle")
    p.add_argument("kind", nargs="?", choices=None, help="movielens or recsys")
    p.add_argument("input", nargs="?", help="raw delimited file")
    common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("synth", help="generate a synthetic multimodal dataset")
    common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("embed", help="pretrain item embeddings on the training split")
    common(p)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("train", help="train a recommender to a checkpoint")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on the test split")
    p.add_argument("models", nargs="*", help="model names (default: every checkpoint)")
    common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-k items for an ad-hoc history")
    p.add_argument("--items", required=True, help="comma-separated history tokens")
    common(p)
    p.set_defaults(fn=cmd_recommend)

    p = sub.add_parser("baseline", help="evaluate RVI and Item-CF")
    common(p)
    p.set_defaults(fn=cmd_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
