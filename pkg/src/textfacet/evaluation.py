"""Metrics, cross-validation, modality ablation and gradient saliency."""

from __future__ import annotations

import html as html_lib
import json
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from . import model as md
from . import topics as tp
from .autograd import Tape
from .corpus import (Corpus, PAD_INDEX, Post, Vocabulary, encode_corpus,
                     encode_post, make_folds)
from .embeddings import (default_lexicon, default_stopwords,
                         label_corpus_sentiment, train_sentiment_embedding)

ABLATION_ORDER = ("Semantic", "Topic+Semantic", "Sentiment+Semantic", "Full")
_ABLATION_FLAGS = {"Semantic": (False, False), "Topic+Semantic": (False, True),
                   "Sentiment+Semantic": (True, False), "Full": (True, True)}

METRIC_NAMES = ("accuracy", "micro_precision", "micro_recall", "micro_f1",
                "weighted_precision", "weighted_recall", "weighted_f1")


@dataclass
class EvalResult:
    confusion: np.ndarray  # (C, C), rows = true class, cols = predicted
    metrics: dict


def confusion_matrix(y_true, y_pred, class_count: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays differ in length")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= class_count
                        or y_pred.min() < 0 or y_pred.max() >= class_count):
        raise ValueError(f"labels outside [0, {class_count})")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> dict:
    """Accuracy plus micro- and support-weighted precision/recall/F1.

    Per-class scores substitute 0 where a denominator vanishes. For
    single-label data the micro scores all collapse to accuracy, and weighted
    recall does too; both identities are useful cross-checks downstream.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1e-300), 0.0)
        recall = np.where(support > 0, tp / np.maximum(support, 1e-300), 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.maximum(pr, 1e-300), 0.0)
    accuracy = float(tp.sum() / total)
    micro_tp = tp.sum()
    micro_fp = (predicted - tp).sum()
    micro_fn = (support - tp).sum()
    micro_p = float(micro_tp / (micro_tp + micro_fp))
    micro_r = float(micro_tp / (micro_tp + micro_fn))
    micro_f1 = 2.0 * micro_p * micro_r / (micro_p + micro_r) if micro_p + micro_r else 0.0
    weights = support / total
    per_class = [{"precision": float(p), "recall": float(r), "f1": float(f),
                  "support": int(s)}
                 for p, r, f, s in zip(precision, recall, f1, support)]
    return {"accuracy": accuracy,
            "micro_precision": micro_p, "micro_recall": micro_r,
            "micro_f1": float(micro_f1),
            "weighted_precision": float((weights * precision).sum()),
            "weighted_recall": float((weights * recall).sum()),
            "weighted_f1": float((weights * f1).sum()),
            "per_class": per_class}


def evaluate(model: md.DeepModel, encoded: np.ndarray, labels,
             topic_dists=None, zero_sentiment: bool = False,
             zero_topic: bool = False) -> EvalResult:
    labels = np.asarray(labels, dtype=np.int64)
    preds = md.predict(model, encoded, topic_dists,
                       zero_sentiment=zero_sentiment, zero_topic=zero_topic)
    cm = confusion_matrix(labels, preds, model.config.class_count)
    return EvalResult(confusion=cm, metrics=metrics_from_confusion(cm))


# ---------------------------------------------------------------------------
# fold pipeline
# ---------------------------------------------------------------------------


def fit_topic_features(train_posts, all_posts, scheme, lda_config,
                       stopwords=None, sparsify_threshold: float = 0.0):
    """Fit LDA on the training posts only, then infer one mixture per post.

    Posts outside the fitted corpus (evaluation posts, filtered posts) get
    the uniform fallback. Returns ({post_id: dist}, topic model).
    """
    stopwords = stopwords if stopwords is not None else default_stopwords()
    docs, _ = tp.filter_corpus_for_lda(Corpus(posts=list(train_posts),
                                              scheme=scheme), stopwords)
    tmodel = tp.fit_lda(docs, lda_config)
    dists = {}
    for post in all_posts:
        dist = tp.infer_topics(post, tmodel)
        if sparsify_threshold > 0.0:
            dist = tp.sparsify(dist, sparsify_threshold)
        dists[post.id] = dist
    return dists, tmodel


def fit_sentiment_table(train_posts, scheme, vocab, encoder_config,
                        seed: int, lexicon=None, epochs: int = 50,
                        max_len: int = 50, external_labels=None):
    """Lexicon-label the training posts, then fit the frozen task table."""
    sub = Corpus(posts=list(train_posts), scheme=scheme)
    label_corpus_sentiment(sub, lexicon or default_lexicon(),
                           external=external_labels)
    table, history = train_sentiment_embedding(sub, vocab, encoder_config,
                                               seed=seed, epochs=epochs,
                                               max_len=max_len)
    return table, history


def _dist_matrix(posts, dists) -> np.ndarray:
    return np.stack([dists[p.id] for p in posts])


def cross_validate(corpus: Corpus, vocab: Vocabulary, tables: dict,
                   model_config: md.ModelConfig, train_config: md.TrainConfig,
                   lda_config=None, stopwords=None, lexicon=None,
                   fold_count: int = 5, seed: int = 0,
                   sentiment_epochs: int = 50,
                   sparsify_threshold: float = 0.0,
                   external_sentiment=None) -> list:
    """Stratified k-fold evaluation with per-fold refits.

    Topic and sentiment features are refit on each fold's training split
    only, so no evaluation post leaks into LDA or the sentiment task.
    """
    if model_config.use_topic and lda_config is None:
        raise ValueError("topic branch is on but no LDA settings given")
    plan = make_folds(corpus, fold_count, seed)
    results = []
    for fold in range(fold_count):
        mask = plan.assignments == fold
        train_posts = [p for p, held in zip(corpus.posts, mask) if not held]
        eval_posts = [p for p, held in zip(corpus.posts, mask) if held]
        fold_seed = ag.derive_seed(seed, "fold", fold)
        fold_tables = dict(tables)
        if model_config.use_sentiment:
            fold_tables["sentiment"], _ = fit_sentiment_table(
                train_posts, corpus.scheme, vocab, model_config.encoder,
                seed=fold_seed, lexicon=lexicon, epochs=sentiment_epochs,
                max_len=train_config.max_len,
                external_labels=external_sentiment)
        topic_train = topic_eval = None
        if model_config.use_topic:
            dists, _ = fit_topic_features(
                train_posts, corpus.posts, corpus.scheme,
                replace(lda_config, seed=ag.derive_seed(fold_seed, "lda")),
                stopwords, sparsify_threshold)
            topic_train = _dist_matrix(train_posts, dists)
            topic_eval = _dist_matrix(eval_posts, dists)
        model = md.build_model(fold_seed, model_config, fold_tables)
        enc_train = encode_corpus(Corpus(posts=train_posts, scheme=corpus.scheme),
                                  vocab, train_config.max_len)
        enc_eval = encode_corpus(Corpus(posts=eval_posts, scheme=corpus.scheme),
                                 vocab, train_config.max_len)
        y_train = np.array([p.label_index for p in train_posts], dtype=np.int64)
        y_eval = np.array([p.label_index for p in eval_posts], dtype=np.int64)
        history = md.train(model, enc_train, y_train, topic_train,
                           replace(train_config, seed=fold_seed))
        result = evaluate(model, enc_eval, y_eval, topic_eval)
        results.append({"fold": fold, "confusion": result.confusion,
                        "metrics": result.metrics, "history": history})
    return results


def run_ablation(train_data, eval_data, tables: dict,
                 model_config: md.ModelConfig,
                 train_config: md.TrainConfig) -> list:
    """Train and score the four modality variants under one seed.

    train_data / eval_data are (encoded, labels, topic_dists) triples;
    topic_dists may be None only if the topic branch never participates.
    Rows come back in the fixed order Semantic, Topic+Semantic,
    Sentiment+Semantic, Full. Because parameter init and dropout streams are
    keyed by name, the variants share bitwise-identical trajectories for the
    parameters they have in common.
    """
    enc_train, y_train, topics_train = train_data
    enc_eval, y_eval, topics_eval = eval_data
    rows = []
    for name in ABLATION_ORDER:
        use_sentiment, use_topic = _ABLATION_FLAGS[name]
        if use_topic and topics_train is None:
            raise ValueError(f"variant {name} needs topic distributions")
        cfg = replace(model_config, use_sentiment=use_sentiment,
                      use_topic=use_topic)
        model = md.build_model(train_config.seed, cfg, tables)
        history = md.train(model, enc_train, y_train,
                           topics_train if use_topic else None, train_config)
        result = evaluate(model, enc_eval, y_eval,
                          topics_eval if use_topic else None)
        rows.append({"config": name, "confusion": result.confusion,
                     "metrics": result.metrics, "history": history})
    return rows


# ---------------------------------------------------------------------------
# saliency
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SaliencyEntry:
    token: str
    position: int
    score: float
    branch_scores: tuple


def saliency_from_indices(model: md.DeepModel, idx, topic_dist=None):
    """Influence of each input position on the predicted class logit.

    For every semantic branch the embedded post E_b receives the gradient of
    the winning logit; a position's branch score is the mean absolute
    gradient over embedding dimensions, and its total is the sum across the
    three branches. Returns (predicted class, totals (L,), per-branch (3, L)).
    """
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ValueError("saliency works on a single encoded post")
    tape = Tape()
    probs, logits, parts = md.forward(tape, model, idx, topic_dist,
                                      train=False, return_parts=True)
    pred = int(np.argmax(probs.data))
    target = ag.select(tape, logits, axis=-1, index=pred)
    tape.backward(target)
    branch = np.stack([np.abs(parts[key][1].grad).mean(axis=-1)
                       for key in md.SEMANTIC_BRANCHES])
    return pred, branch.sum(axis=0), branch


def saliency(model: md.DeepModel, vocab: Vocabulary, tokens,
             max_len: int = 50, topic_dist=None):
    """Token-level saliency for one post; PAD positions are dropped, so
    padding a post further cannot change the surviving scores."""
    post = Post(id="", tokens=list(tokens), label_index=0)
    idx = encode_post(post, vocab, max_len)
    pred, totals, branch = saliency_from_indices(model, idx, topic_dist)
    entries = []
    for pos, token in enumerate(list(tokens)[:max_len]):
        if idx[pos] == PAD_INDEX:
            continue
        entries.append(SaliencyEntry(
            token=token, position=pos, score=float(totals[pos]),
            branch_scores=tuple(float(b[pos]) for b in branch)))
    return pred, entries


_ANSI_RAMP = (252, 224, 217, 210, 203, 196)


def _normalize_scores(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = scores.min(), scores.max()
    if hi - lo <= 0:
        return np.ones_like(scores)
    return (scores - lo) / (hi - lo)


def render_saliency(entries, mode: str = "ansi") -> str:
    """Colorize tokens by min-max-normalized score (flat scores show full
    intensity). ansi uses 256-color backgrounds; html is self-contained."""
    if not entries:
        raise ValueError("nothing to render")
    intensity = _normalize_scores([e.score for e in entries])
    if mode == "ansi":
        chunks = []
        for e, level in zip(entries, intensity):
            code = _ANSI_RAMP[min(int(level * len(_ANSI_RAMP)),
                                  len(_ANSI_RAMP) - 1)]
            chunks.append(f"\x1b[30;48;5;{code}m{e.token}\x1b[0m")
        return " ".join(chunks)
    if mode == "html":
        spans = []
        for e, level in zip(entries, intensity):
            spans.append(
                f'<span class="tok" style="background:rgba(220,38,38,'
                f'{0.15 + 0.75 * float(level):.3f})" '
                f'title="{e.score:.6g}">{html_lib.escape(e.token)}</span>')
        body = "\n".join(spans)
        return ("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
                "<style>.tok{padding:2px 4px;margin:1px;border-radius:3px;"
                "display:inline-block;font-family:monospace}</style>"
                "</head><body>\n" + body + "\n</body></html>\n")
    raise ValueError(f"unknown render mode {mode!r}")


# ---------------------------------------------------------------------------
# summaries and serialization
# ---------------------------------------------------------------------------


def sentiment_distribution(corpus: Corpus) -> np.ndarray:
    """Fractions of (negative, neutral, positive) posts."""
    if not corpus.posts:
        raise ValueError("corpus is empty")
    counts = np.zeros(3, dtype=np.int64)
    for post in corpus.posts:
        if post.sentiment is None:
            raise ValueError(f"post {post.id!r} has no sentiment label")
        counts[post.sentiment] += 1
    return counts / counts.sum()


def metrics_rows(config_name: str, fold, metrics: dict) -> list:
    return [{"config": config_name, "fold": fold, "metric": name,
             "value": metrics[name]} for name in METRIC_NAMES]


def metrics_tsv(rows) -> str:
    lines = ["config\tfold\tmetric\tvalue"]
    for row in rows:
        lines.append(f"{row['config']}\t{row['fold']}\t{row['metric']}\t"
                     f"{row['value']:.6f}")
    return "\n".join(lines) + "\n"


def saliency_json(entries) -> str:
    payload = [{"token": e.token, "score": e.score,
                "branch_scores": list(e.branch_scores)} for e in entries]
    return json.dumps(payload, indent=2) + "\n"
