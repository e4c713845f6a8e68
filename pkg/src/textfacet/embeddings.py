"""Embedding tables and lexicon-based sentiment labeling.

Three kinds of word table flow into the classifier: pretrained tables read
from text-format embedding files, random tables used when no file is
available, and a task-trained sentiment table produced here by fitting a
small sentiment classifier and freezing its embedding layer.

The built-in sentiment scorer is a reduced lexicon-and-rules analyzer:
per-token valences, a negation window that flips and damps, and booster
words that push a valence away from zero. Callers wanting labels from a
different tool can supply them as a TSV instead.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import encoder as enc
from .autograd import Tensor, Tape
from .corpus import Corpus, PAD_INDEX, Vocabulary, encode_corpus

EMBED_DIM = 300
OOV_SCALE = 0.05
SOURCE_NAMES = ("glove", "word2vec-wiki", "paragram", "sentiment", "random")

SENTIMENT_CLASSES = ("negative", "neutral", "positive")

# Flip factor applied when a negation appears shortly before a valenced token.
NEGATION_DAMP = -0.74
NEGATION_WINDOW = 3
BOOSTER_WINDOW = 2

NEGATIONS = frozenset("""
aint ain't arent aren't cannot cant can't couldnt couldn't didnt didn't
doesnt doesn't dont don't hardly isnt isn't neither never no none nor not
rarely shouldnt shouldn't wasnt wasn't without wont won't wouldnt wouldn't
""".split())

_BOOST = 0.293
_DAMP = -0.293
BOOSTERS = {
    "absolutely": _BOOST, "completely": _BOOST, "extremely": _BOOST,
    "incredibly": _BOOST, "really": _BOOST, "so": _BOOST, "totally": _BOOST,
    "utterly": _BOOST, "very": _BOOST,
    "barely": _DAMP, "kinda": _DAMP, "marginally": _DAMP, "slightly": _DAMP,
    "somewhat": _DAMP,
}


@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (|V|, d), row 0 (PAD) all zeros
    frozen: bool
    source_name: str
    coverage: float = 0.0

    def __post_init__(self):
        if self.source_name not in SOURCE_NAMES:
            raise ValueError(f"unknown embedding source {self.source_name!r}")


@dataclass(frozen=True)
class SentimentScores:
    neg: float
    neu: float
    pos: float


@dataclass(frozen=True)
class SentimentLexicon:
    valence: dict
    negations: frozenset = NEGATIONS
    boosters: dict = None

    def __post_init__(self):
        if self.boosters is None:
            object.__setattr__(self, "boosters", BOOSTERS)


def load_lexicon(path) -> SentimentLexicon:
    """Read a token<TAB>valence TSV into a lexicon."""
    valence = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"malformed lexicon row at line {lineno}")
            try:
                v = float(parts[1])
            except ValueError:
                raise ValueError(
                    f"non-numeric valence at line {lineno}: {parts[1]!r}") from None
            if not np.isfinite(v):
                raise ValueError(f"non-finite valence at line {lineno}")
            valence[parts[0]] = v
    return SentimentLexicon(valence=valence)


def default_lexicon() -> SentimentLexicon:
    ref = importlib.resources.files("textfacet").joinpath("data/lexicon.tsv")
    with importlib.resources.as_file(ref) as path:
        return load_lexicon(path)


def default_stopwords() -> frozenset:
    ref = importlib.resources.files("textfacet").joinpath("data/stopwords.txt")
    text = ref.read_text(encoding="utf-8")
    return frozenset(w for w in text.split() if w)


def random_table(vocab: Vocabulary, seed: int, dim: int = EMBED_DIM,
                 source_name: str = "random") -> EmbeddingTable:
    """Uniform [-0.05, 0.05] table with a zero PAD row, seeded per source."""
    rng = ag.param_rng(seed, f"embed.{source_name}")
    matrix = rng.uniform(-OOV_SCALE, OOV_SCALE,
                         size=(vocab.size, dim)).astype(np.float32)
    matrix[PAD_INDEX] = 0.0
    return EmbeddingTable(matrix=matrix, frozen=True, source_name=source_name,
                          coverage=0.0)


def load_pretrained(path, vocab: Vocabulary, seed: int = 0, dim: int = EMBED_DIM,
                    source_name: str = "glove") -> EmbeddingTable:
    """Load a text-format embedding file for the given vocabulary.

    The file may start with a "count dim" header line; every other line is
    "token v1 ... v_dim". In-vocabulary rows are copied, everything else is
    initialized uniform [-0.05, 0.05] from the seeded generator, and the PAD
    row is zeroed, so the result is deterministic given (file, vocab, seed).
    """
    table = random_table(vocab, seed, dim, source_name)
    matrix = table.matrix
    found = 0
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        lines = []
        parts = first.split(" ")
        if len(parts) == 2:
            try:
                declared = int(parts[1])
            except ValueError:
                raise ValueError(f"unreadable header line 1: {first!r}") from None
            if declared != dim:
                raise ValueError(
                    f"dimension mismatch: file declares {declared}, expected {dim}")
        elif first:
            lines.append((1, first))
        lines.extend((i, ln.rstrip("\n")) for i, ln in enumerate(fh, start=2))
    for lineno, line in lines:
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise ValueError(
                f"unreadable embedding row at line {lineno}: expected "
                f"{dim + 1} fields, got {len(parts)}")
        token = parts[0]
        idx = vocab.token_to_index.get(token)
        if idx is None or idx == PAD_INDEX:
            continue
        try:
            matrix[idx] = np.asarray(parts[1:], dtype=np.float32)
        except ValueError:
            raise ValueError(f"unreadable embedding row at line {lineno}") from None
        found += 1
    matrix[PAD_INDEX] = 0.0
    table.coverage = found / max(1, vocab.size - 2)
    return table


def score_sentiment(tokens, lexicon: SentimentLexicon) -> SentimentScores:
    """Aggregate per-token valences into (negative, neutral, positive)
    fractions on the simplex.

    Boosters within the 2 preceding tokens push a hit's valence away from
    zero (or toward it, for dampeners) before any negation; a negation within
    the 3 preceding tokens then flips the valence, damped by 0.74. Tokens
    without a valence count as neutral hits.
    """
    pos_sum = neg_sum = 0.0
    neutral = 0
    for i, tok in enumerate(tokens):
        v = lexicon.valence.get(tok, 0.0)
        if v == 0.0:
            neutral += 1
            continue
        for j in range(max(0, i - BOOSTER_WINDOW), i):
            inc = lexicon.boosters.get(tokens[j])
            if inc is not None:
                v += inc if v > 0 else -inc
        if any(tokens[j] in lexicon.negations
               for j in range(max(0, i - NEGATION_WINDOW), i)):
            v *= NEGATION_DAMP
        pos_sum += max(v, 0.0)
        neg_sum += max(-v, 0.0)
    total = pos_sum + neg_sum + neutral
    if total == 0.0:
        return SentimentScores(neg=0.0, neu=1.0, pos=0.0)
    return SentimentScores(neg=neg_sum / total, neu=neutral / total,
                           pos=pos_sum / total)


def label_sentiment(scores: SentimentScores) -> str:
    """The polarity with the highest score; ties resolve
    neutral > positive > negative."""
    best = max(scores.neg, scores.neu, scores.pos)
    for name, value in (("neutral", scores.neu), ("positive", scores.pos),
                        ("negative", scores.neg)):
        if value == best:
            return name
    raise AssertionError("unreachable")


def label_corpus_sentiment(corpus: Corpus, lexicon: SentimentLexicon,
                           external: dict | None = None) -> None:
    """Set every post's sentiment index, preferring external labels."""
    external = external or {}
    for post in corpus.posts:
        label = external.get(post.id)
        if label is None:
            label = label_sentiment(score_sentiment(post.tokens, lexicon))
        post.sentiment = SENTIMENT_CLASSES.index(label)


def load_sentiment_labels(path) -> dict:
    """Read an id<TAB>label TSV (optional "id\\tlabel" header) into a map."""
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or (lineno == 1 and line == "id\tlabel"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"malformed sentiment row at line {lineno}")
            if parts[1] not in SENTIMENT_CLASSES:
                raise ValueError(
                    f"unknown sentiment label {parts[1]!r} at line {lineno}")
            labels[parts[0]] = parts[1]
    return labels


def train_sentiment_embedding(corpus: Corpus, vocab: Vocabulary,
                              encoder_config: enc.EncoderConfig,
                              seed: int = 0, learning_rate: float = 0.001,
                              batch_size: int = 16, epochs: int = 100,
                              max_len: int = 50,
                              target_accuracy: float | None = 1.0):
    """Fit a word table on the 3-way sentiment task and freeze it.

    A fresh random table feeds one conv-LSTM-attention encoder and a softmax
    head; the whole stack trains with Adam on the posts' sentiment indices.
    Only the table is returned (frozen, PAD row zero) along with the
    per-epoch (loss, accuracy) history.
    """
    if any(p.sentiment is None for p in corpus.posts):
        raise ValueError("every post needs a sentiment label; label the corpus first")
    labels = np.asarray([p.sentiment for p in corpus.posts], dtype=np.int64)
    if np.unique(labels).size < 2:
        raise ValueError("sentiment task is degenerate: single-class labels")

    d = encoder_config.embed_dim
    # The conv needs at least one full window; never encode shorter than that.
    max_len = max(max_len, max(encoder_config.filter_widths))
    encoded = encode_corpus(corpus, vocab, max_len)

    rng = ag.param_rng(seed, "sentiment_embed.table")
    table = Tensor(rng.uniform(-OOV_SCALE, OOV_SCALE,
                               size=(vocab.size, d)).astype(np.float32),
                   name="sentiment_embed.table", trainable=True)
    table.data[PAD_INDEX] = 0.0
    params = {"sentiment_embed.table": table}
    enc_params = enc.init_encoder(seed, "sentiment_embed.encoder", encoder_config)
    params.update(enc_params.tensors())
    n_cls = len(SENTIMENT_CLASSES)
    head_w = ag.glorot(seed, "sentiment_embed.head.weight",
                       (n_cls, encoder_config.output_dim),
                       encoder_config.output_dim, n_cls)
    head_b = ag.zeros_param("sentiment_embed.head.bias", (n_cls,))
    params["sentiment_embed.head.weight"] = head_w
    params["sentiment_embed.head.bias"] = head_b

    def forward(tape, idx):
        E = ag.embed(tape, table, idx)
        out = enc.encode(tape, E, enc_params)
        logits = ag.add(tape, ag.matmul(tape, out.x, ag.transpose(tape, head_w)),
                        head_b)
        return ag.softmax(tape, logits, axis=-1)

    state = ag.AdamState(learning_rate=learning_rate)
    n = len(corpus.posts)
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng(
            ag.derive_seed(seed, "sentiment_embed.shuffle", epoch)).permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            tape = Tape()
            tape.watch(*params.values())
            probs = forward(tape, encoded[batch])
            loss = ag.cross_entropy(tape, probs, labels[batch])
            tape.backward(loss)
            grads = {name: t.grad for name, t in params.items()}
            grads["sentiment_embed.table"][PAD_INDEX] = 0.0
            ag.adam_step(params, grads, state)
            losses.append(float(loss.data))
        preds = forward(None, encoded).data.argmax(axis=-1)
        acc = float((preds == labels).mean())
        history.append({"epoch": epoch, "loss": float(np.mean(losses)),
                        "accuracy": acc})
        if target_accuracy is not None and acc >= target_accuracy:
            break

    matrix = table.data.copy()
    matrix[PAD_INDEX] = 0.0
    return EmbeddingTable(matrix=matrix, frozen=True, source_name="sentiment",
                          coverage=1.0), history
