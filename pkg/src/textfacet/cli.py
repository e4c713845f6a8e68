"""Command-line pipeline: preprocess through training, reports and saliency.

Each subcommand reads the INI config, consumes artifacts produced by earlier
stages from the output directory, writes its own artifacts (delimited tables
plus rendered figures) there, and records a JSON manifest with the config
snapshot, seed, package versions and input hashes. Every failure exits
nonzero with a single machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import model as md
from . import plots as pl
from . import topics as tp
from .config import AppConfig, parse_config, serialize_config
from .corpus import (ClassScheme, Corpus, DatasetFormat, Post, Vocabulary,
                     build_vocab, class_distribution, dedup_retweets,
                     encode_corpus, load_dataset, make_folds,
                     normalize_and_tokenize)
from .embeddings import (EmbeddingTable, SENTIMENT_CLASSES, default_lexicon,
                         default_stopwords, label_corpus_sentiment,
                         load_lexicon, load_pretrained, load_sentiment_labels,
                         random_table, train_sentiment_embedding)

GRADCHECK_THRESHOLD = 1e-4


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(
            f"missing {path.name}; run `textfacet {producer}` first")
    return path


def _write_manifest(out_dir: Path, command: str, args, config: AppConfig,
                    inputs, outputs) -> Path:
    manifest = {
        "command": command,
        "seed": args.seed,
        "config_file": str(args.config),
        "config": serialize_config(config),
        "versions": {"textfacet": __version__,
                     "python": platform.python_version(),
                     "numpy": np.__version__},
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(Path(p).name) for p in outputs),
        "wall_clock": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = out_dir / f"{command.replace('-', '_')}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _dataset_format(config: AppConfig) -> DatasetFormat:
    return DatasetFormat(class_names=config.class_names,
                         id_column=config.id_column,
                         label_column=config.label_column,
                         text_column=config.text_column)


def _corpus_path(out_dir: Path) -> Path:
    return out_dir / "corpus.tsv"


def _write_processed(path: Path, corpus: Corpus) -> None:
    lines = ["id\tlabel\ttokens"]
    for post in corpus.posts:
        label = corpus.scheme.names[post.label_index]
        lines.append(f"{post.id}\t{label}\t{' '.join(post.tokens)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_processed(out_dir: Path, config: AppConfig) -> Corpus:
    path = _require(_corpus_path(out_dir), "preprocess")
    scheme = ClassScheme(config.class_names)
    posts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if lineno == 1 or not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path.name}: malformed row at line {lineno}")
            post_id, label, text = parts
            posts.append(Post(id=post_id, tokens=text.split(" ") if text else [],
                              label_index=scheme.index_of(label)))
    return Corpus(posts=posts, scheme=scheme)


def _load_vocab(out_dir: Path) -> Vocabulary:
    path = _require(out_dir / "vocab.txt", "preprocess")
    tokens = path.read_text(encoding="utf-8").splitlines()
    return Vocabulary(index_to_token=tuple(tokens),
                      token_to_index={t: i for i, t in enumerate(tokens)})


def _lexicon(config: AppConfig):
    return load_lexicon(config.lexicon) if config.lexicon else default_lexicon()


def _stopwords(config: AppConfig):
    if config.stopwords:
        with open(config.stopwords, encoding="utf-8") as fh:
            return frozenset(w.strip() for w in fh if w.strip())
    return default_stopwords()


def _semantic_tables(config: AppConfig, vocab: Vocabulary, seed: int) -> dict:
    specs = (("glove", config.glove, "glove"),
             ("word2vec", config.word2vec_wiki, "word2vec-wiki"),
             ("paragram", config.paragram, "paragram"))
    tables = {}
    for key, path, source in specs:
        if path:
            tables[key] = load_pretrained(path, vocab, seed=seed,
                                          dim=config.dim, source_name=source)
        else:
            tables[key] = random_table(vocab, seed, config.dim,
                                       source_name=source)
    return tables


def _load_sentiment_table(out_dir: Path) -> EmbeddingTable:
    path = _require(out_dir / "sentiment_table.ckpt", "train-sentiment-embed")
    arrays, meta = md.load_checkpoint(path)
    if meta.get("kind") != "sentiment_table":
        raise ValueError(f"{path.name}: not a sentiment table checkpoint")
    return EmbeddingTable(matrix=arrays["table"], frozen=True,
                          source_name="sentiment",
                          coverage=meta.get("coverage", 0.0))


def _load_topics(out_dir: Path):
    return md.load_topic_model(_require(out_dir / "topics.ckpt", "fit-topics"))


def _topic_matrix(posts, tmodel, threshold: float) -> np.ndarray:
    rows = []
    for post in posts:
        dist = tp.infer_topics(post, tmodel)
        if threshold > 0.0:
            dist = tp.sparsify(dist, threshold)
        rows.append(dist)
    return np.stack(rows)


def _write_rows(out_dir: Path, stem: str, fmt: str, header, rows) -> Path:
    """Write a table as TSV or JSON depending on --format."""
    if fmt == "json":
        path = out_dir / f"{stem}.json"
        payload = [dict(zip(header, row)) for row in rows]
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        return path
    path = out_dir / f"{stem}.tsv"
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _metric_rows(config_name: str, fold, metrics: dict):
    return [(config_name, fold, name, f"{metrics[name]:.6f}")
            for name in ev.METRIC_NAMES]


def _history_rows(history):
    return [(row["epoch"], f"{row['loss']:.6f}", f"{row['accuracy']:.6f}")
            for row in history]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_preprocess(args, config: AppConfig, out_dir: Path):
    corpus = dedup_retweets(load_dataset(config.train_file,
                                         _dataset_format(config)))
    vocab = build_vocab(corpus)
    _write_processed(_corpus_path(out_dir), corpus)
    (out_dir / "vocab.txt").write_text(
        "\n".join(vocab.index_to_token) + "\n", encoding="utf-8")
    fig = pl.plot_class_distribution(class_distribution(corpus),
                                     corpus.scheme.names,
                                     out_dir / "class_distribution.png")
    outputs = [_corpus_path(out_dir), out_dir / "vocab.txt", fig]
    _write_manifest(out_dir, "preprocess", args, config,
                    [args.config, config.train_file], outputs)
    print(f"preprocessed {len(corpus)} posts, vocabulary {vocab.size}")


def cmd_sentiment_label(args, config: AppConfig, out_dir: Path):
    corpus = _load_processed(out_dir, config)
    external = (load_sentiment_labels(config.sentiment_labels)
                if config.sentiment_labels else None)
    label_corpus_sentiment(corpus, _lexicon(config), external=external)
    path = out_dir / "sentiment.tsv"
    lines = ["id\tlabel"]
    for post in corpus.posts:
        lines.append(f"{post.id}\t{SENTIMENT_CLASSES[post.sentiment]}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    fig = pl.plot_sentiment_distribution(ev.sentiment_distribution(corpus),
                                         out_dir / "sentiment_distribution.png")
    inputs = [args.config, _corpus_path(out_dir)]
    if config.sentiment_labels:
        inputs.append(config.sentiment_labels)
    _write_manifest(out_dir, "sentiment-label", args, config, inputs,
                    [path, fig])
    print(f"labeled {len(corpus)} posts")


def cmd_train_sentiment_embed(args, config: AppConfig, out_dir: Path):
    corpus = _load_processed(out_dir, config)
    labels_path = _require(out_dir / "sentiment.tsv", "sentiment-label")
    label_corpus_sentiment(corpus, _lexicon(config),
                           external=load_sentiment_labels(labels_path))
    vocab = _load_vocab(out_dir)
    table, history = train_sentiment_embedding(
        corpus, vocab, config.encoder_config(), seed=args.seed,
        epochs=config.sentiment_epochs, max_len=config.max_len)
    ckpt = out_dir / "sentiment_table.ckpt"
    md.save_checkpoint(ckpt, {"table": table.matrix},
                       {"kind": "sentiment_table", "coverage": table.coverage})
    rows = _write_rows(out_dir, "sentiment_history", args.format,
                       ("epoch", "loss", "accuracy"), _history_rows(history))
    fig = pl.plot_history(history, out_dir / "sentiment_history.png")
    _write_manifest(out_dir, "train-sentiment-embed", args, config,
                    [args.config, _corpus_path(out_dir), labels_path],
                    [ckpt, rows, fig])
    print(f"sentiment table trained: final accuracy "
          f"{history[-1]['accuracy']:.3f} after {len(history)} epochs")


def _parse_sweep(text: str) -> range:
    try:
        lo, hi = (int(part) for part in text.split(":"))
    except ValueError:
        raise ValueError(f"sweep range must look like 5:20, got {text!r}")
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid sweep range {text!r}")
    return range(lo, hi + 1)


def cmd_fit_topics(args, config: AppConfig, out_dir: Path):
    corpus = _load_processed(out_dir, config)
    docs, dropped = tp.filter_corpus_for_lda(corpus, _stopwords(config))
    inputs = [args.config, _corpus_path(out_dir)]
    if args.sweep is not None:
        rows = tp.sweep_topic_count(docs, config.lda_config(args.seed),
                                    base_seed=args.seed,
                                    k_range=_parse_sweep(args.sweep),
                                    threads=args.threads)
        table = _write_rows(out_dir, "topic_sweep", args.format,
                            ("topic_count", "log_likelihood"),
                            [(k, f"{ll:.6f}") for k, ll in rows])
        fig = pl.plot_topic_sweep(rows, out_dir / "topic_sweep.png")
        _write_manifest(out_dir, "fit-topics", args, config, inputs,
                        [table, fig])
        best = max(rows, key=lambda kv: kv[1])
        print(f"swept {len(rows)} topic counts; best {best[0]} "
              f"(log likelihood {best[1]:.2f})")
        return
    tmodel = tp.fit_lda(docs, config.lda_config(args.seed))
    ckpt = out_dir / "topics.ckpt"
    md.save_topic_model(ckpt, tmodel)
    order = np.argsort(-tmodel.phi, axis=1)[:, :10]
    term_rows = []
    for k in range(tmodel.topic_count):
        for rank, col in enumerate(order[k]):
            term_rows.append((k, rank + 1, tmodel.lda_vocab[col],
                              f"{tmodel.phi[k, col]:.6f}"))
    terms = _write_rows(out_dir, "topic_terms", args.format,
                        ("topic", "rank", "token", "probability"), term_rows)
    fig = pl.plot_likelihood_trace(tmodel.likelihood_trace,
                                   out_dir / "topic_likelihood.png")
    _write_manifest(out_dir, "fit-topics", args, config, inputs,
                    [ckpt, terms, fig])
    print(f"fitted {tmodel.topic_count} topics on {len(docs)} posts "
          f"({len(dropped)} filtered out)")


def _assemble_tables(args, config: AppConfig, out_dir: Path,
                     vocab: Vocabulary, model_config) -> tuple:
    tables = _semantic_tables(config, vocab, args.seed)
    inputs = []
    if model_config.use_sentiment:
        tables["sentiment"] = _load_sentiment_table(out_dir)
        inputs.append(out_dir / "sentiment_table.ckpt")
    for path in (config.glove, config.word2vec_wiki, config.paragram):
        if path:
            inputs.append(path)
    return tables, inputs


def cmd_train(args, config: AppConfig, out_dir: Path):
    corpus = _load_processed(out_dir, config)
    vocab = _load_vocab(out_dir)
    model_config = config.model_config()
    tables, extra_inputs = _assemble_tables(args, config, out_dir, vocab,
                                            model_config)
    inputs = [args.config, _corpus_path(out_dir), out_dir / "vocab.txt"]
    inputs.extend(extra_inputs)
    dists = None
    if model_config.use_topic:
        tmodel = _load_topics(out_dir)
        inputs.append(out_dir / "topics.ckpt")
        dists = _topic_matrix(corpus.posts, tmodel,
                              config.sparsify_threshold)
    encoded = encode_corpus(corpus, vocab, config.max_len)
    labels = np.array([p.label_index for p in corpus.posts], dtype=np.int64)
    model = md.build_model(args.seed, model_config, tables)
    history = md.train(model, encoded, labels, dists,
                       config.train_config(args.seed))
    ckpt = out_dir / "model.ckpt"
    md.save_model(ckpt, model)
    rows = _write_rows(out_dir, "train_history", args.format,
                       ("epoch", "loss", "accuracy"), _history_rows(history))
    fig = pl.plot_history(history, out_dir / "train_history.png")
    _write_manifest(out_dir, "train", args, config, inputs,
                    [ckpt, rows, fig])
    print(f"trained {len(history)} epochs: final loss "
          f"{history[-1]['loss']:.4f}, train accuracy "
          f"{history[-1]['accuracy']:.3f}")


def cmd_eval(args, config: AppConfig, out_dir: Path):
    corpus = _load_processed(out_dir, config)
    vocab = _load_vocab(out_dir)
    model = md.load_model(_require(out_dir / "model.ckpt", "train"))
    inputs = [args.config, _corpus_path(out_dir), out_dir / "model.ckpt"]
    dists = None
    if model.config.use_topic:
        tmodel = _load_topics(out_dir)
        inputs.append(out_dir / "topics.ckpt")
        dists = _topic_matrix(corpus.posts, tmodel, config.sparsify_threshold)
    encoded = encode_corpus(corpus, vocab, config.max_len)
    labels = np.array([p.label_index for p in corpus.posts], dtype=np.int64)
    result = ev.evaluate(model, encoded, labels, dists)
    table = _write_rows(out_dir, "metrics", args.format,
                        ("config", "fold", "metric", "value"),
                        _metric_rows("Full", "all", result.metrics))
    fig = pl.plot_confusion(result.confusion, corpus.scheme.names,
                            out_dir / "confusion.png")
    _write_manifest(out_dir, "eval", args, config, inputs, [table, fig])
    print(f"accuracy {result.metrics['accuracy']:.4f}, weighted F1 "
          f"{result.metrics['weighted_f1']:.4f} on {len(corpus)} posts")


def cmd_cross_validate(args, config: AppConfig, out_dir: Path):
    corpus = _load_processed(out_dir, config)
    vocab = _load_vocab(out_dir)
    tables = _semantic_tables(config, vocab, args.seed)
    external = (load_sentiment_labels(config.sentiment_labels)
                if config.sentiment_labels else None)
    results = ev.cross_validate(
        corpus, vocab, tables, config.model_config(),
        config.train_config(args.seed),
        lda_config=config.lda_config(args.seed) if config.use_topic else None,
        stopwords=_stopwords(config), lexicon=_lexicon(config),
        fold_count=config.folds, seed=args.seed,
        sentiment_epochs=config.sentiment_epochs,
        sparsify_threshold=config.sparsify_threshold,
        external_sentiment=external)
    rows = []
    for result in results:
        rows.extend(_metric_rows("Full", result["fold"], result["metrics"]))
    means = {name: float(np.mean([r["metrics"][name] for r in results]))
             for name in ev.METRIC_NAMES}
    rows.extend(_metric_rows("Full", "mean", means))
    table = _write_rows(out_dir, "cv_metrics", args.format,
                        ("config", "fold", "metric", "value"), rows)
    pooled = np.sum([r["confusion"] for r in results], axis=0)
    fig = pl.plot_confusion(pooled, corpus.scheme.names,
                            out_dir / "cv_confusion.png")
    _write_manifest(out_dir, "cross-validate", args, config,
                    [args.config, _corpus_path(out_dir), out_dir / "vocab.txt"],
                    [table, fig])
    print(f"{config.folds}-fold accuracy {means['accuracy']:.4f}, "
          f"weighted F1 {means['weighted_f1']:.4f}")


def cmd_ablate(args, config: AppConfig, out_dir: Path):
    corpus = _load_processed(out_dir, config)
    vocab = _load_vocab(out_dir)
    model_config = config.model_config()
    if not (model_config.use_sentiment and model_config.use_topic):
        raise ValueError("ablation needs use_sentiment and use_topic enabled")
    tables, extra_inputs = _assemble_tables(args, config, out_dir, vocab,
                                            model_config)
    tmodel = _load_topics(out_dir)
    dists = _topic_matrix(corpus.posts, tmodel, config.sparsify_threshold)
    encoded = encode_corpus(corpus, vocab, config.max_len)
    labels = np.array([p.label_index for p in corpus.posts], dtype=np.int64)
    held = make_folds(corpus, config.folds, args.seed).assignments == 0
    train_data = (encoded[~held], labels[~held], dists[~held])
    eval_data = (encoded[held], labels[held], dists[held])
    results = ev.run_ablation(train_data, eval_data, tables, model_config,
                              config.train_config(args.seed))
    rows = []
    for result in results:
        rows.extend(_metric_rows(result["config"], 0, result["metrics"]))
    table = _write_rows(out_dir, "ablation", args.format,
                        ("config", "fold", "metric", "value"), rows)
    fig = pl.plot_ablation(results, "weighted_f1", out_dir / "ablation.png")
    inputs = [args.config, _corpus_path(out_dir), out_dir / "topics.ckpt"]
    inputs.extend(extra_inputs)
    _write_manifest(out_dir, "ablate", args, config, inputs, [table, fig])
    for result in results:
        print(f"{result['config']}: weighted F1 "
              f"{result['metrics']['weighted_f1']:.4f}")


def cmd_explain(args, config: AppConfig, out_dir: Path):
    tokens = normalize_and_tokenize(args.text)
    if not tokens:
        raise ValueError("no tokens survive normalization; nothing to explain")
    model = md.load_model(_require(out_dir / "model.ckpt", "train"))
    vocab = _load_vocab(out_dir)
    dist = None
    inputs = [args.config, out_dir / "model.ckpt"]
    if model.config.use_topic:
        tmodel = _load_topics(out_dir)
        inputs.append(out_dir / "topics.ckpt")
        dist = tp.infer_topics(Post(id="", tokens=tokens, label_index=0),
                               tmodel)
        if config.sparsify_threshold > 0.0:
            dist = tp.sparsify(dist, config.sparsify_threshold)
    pred, entries = ev.saliency(model, vocab, tokens,
                                max_len=config.max_len, topic_dist=dist)
    json_path = out_dir / "saliency.json"
    json_path.write_text(ev.saliency_json(entries), encoding="utf-8")
    html_path = out_dir / "saliency.html"
    html_path.write_text(ev.render_saliency(entries, mode="html"),
                         encoding="utf-8")
    _write_manifest(out_dir, "explain", args, config, inputs,
                    [json_path, html_path])
    print(f"predicted class: {config.class_names[pred]}")
    print(ev.render_saliency(entries, mode="ansi"))


def cmd_gradcheck(args, config: AppConfig, out_dir: Path):
    # Always verify on the canonical conditioned fixture: re-seeding it can
    # push an individual true gradient toward the finite-difference noise
    # floor and fail the check with the wiring perfectly healthy.
    error = md.wiring_gradient_check()
    table = _write_rows(out_dir, "gradcheck", args.format,
                        ("check", "max_relative_error", "threshold"),
                        [("full-model", f"{error:.3e}",
                          f"{GRADCHECK_THRESHOLD:.0e}")])
    _write_manifest(out_dir, "gradcheck", args, config, [args.config], [table])
    if error >= GRADCHECK_THRESHOLD:
        raise RuntimeError(
            f"gradient check failed: max relative error {error:.3e} "
            f">= {GRADCHECK_THRESHOLD:.0e}")
    print(f"gradient check passed: max relative error {error:.3e}")


def cmd_stats(args, config: AppConfig, out_dir: Path):
    corpus = _load_processed(out_dir, config)
    counts = class_distribution(corpus)
    lengths = [len(p.tokens) for p in corpus.posts]
    rows = [("posts", len(corpus)),
            ("classes", len(corpus.scheme.names)),
            ("mean_tokens_per_post", f"{float(np.mean(lengths)):.4f}"),
            ("max_tokens_per_post", int(np.max(lengths)))]
    for name, count in zip(corpus.scheme.names, counts):
        rows.append((f"class.{name}", int(count)))
    outputs = []
    sentiment_path = out_dir / "sentiment.tsv"
    if sentiment_path.exists():
        external = load_sentiment_labels(sentiment_path)
        for post in corpus.posts:
            label = external.get(post.id)
            if label is None:
                raise ValueError(
                    f"sentiment.tsv has no label for post {post.id!r}; "
                    f"rerun `textfacet sentiment-label`")
            post.sentiment = SENTIMENT_CLASSES.index(label)
        fractions = ev.sentiment_distribution(corpus)
        for name, value in zip(SENTIMENT_CLASSES, fractions):
            rows.append((f"sentiment.{name}", f"{float(value):.4f}"))
        outputs.append(pl.plot_sentiment_distribution(
            fractions, out_dir / "sentiment_distribution.png"))
    table = _write_rows(out_dir, "stats", args.format, ("stat", "value"), rows)
    fig = pl.plot_class_distribution(counts, corpus.scheme.names,
                                     out_dir / "class_distribution.png")
    _write_manifest(out_dir, "stats", args, config,
                    [args.config, _corpus_path(out_dir)],
                    outputs + [table, fig])
    print(f"{len(corpus)} posts across {len(corpus.scheme.names)} classes")


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "sentiment-label": cmd_sentiment_label,
    "train-sentiment-embed": cmd_train_sentiment_embed,
    "fit-topics": cmd_fit_topics,
    "train": cmd_train,
    "eval": cmd_eval,
    "cross-validate": cmd_cross_validate,
    "ablate": cmd_ablate,
    "explain": cmd_explain,
    "gradcheck": cmd_gradcheck,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textfacet",
        description="multi-faceted text classification pipeline")
    parser.add_argument("--config", required=True, help="INI config file")
    parser.add_argument("--seed", type=int, default=0,
                        help="base seed for all randomized stages")
    parser.add_argument("--out", default="out",
                        help="artifact directory (created if absent)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for the topic sweep")
    parser.add_argument("--format", choices=("tsv", "json"), default="tsv",
                        help="table output format")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        if name == "fit-topics":
            sp.add_argument("--sweep", nargs="?", const="5:20", default=None,
                            metavar="MIN:MAX",
                            help="sweep topic counts instead of fitting one")
        if name == "explain":
            sp.add_argument("--text", required=True,
                            help="post text to explain")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](args, config, out_dir)
        return 0
    except Exception as exc:  # noqa: BLE001 - single-line CLI error contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
