"""Dataset ingestion, normalization, vocabulary and fold planning.

Datasets are TSV files with a header row ``id<TAB>label<TAB>text`` (column
names remappable per dataset). All values here are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

URL_TOKEN = "<url>"
USER_TOKEN = "<user>"

_URL_RE = re.compile(r"https?://\S+|www\.\S+")
_MENTION_RE = re.compile(r"@\w+")
_HASHTAG_RE = re.compile(r"(?<!\w)#(?=\w)")
# Placeholders first so their angle brackets are not eaten as punctuation.
_TOKEN_RE = re.compile(r"<url>|<user>|[\w']+|[^\w\s]+")


@dataclass(frozen=True)
class RawRecord:
    id: str
    text: str
    label: str


@dataclass(frozen=True)
class ClassScheme:
    names: tuple

    @property
    def size(self) -> int:
        return len(self.names)

    def index_of(self, label: str) -> int:
        return self.names.index(label)


@dataclass
class Post:
    id: str
    tokens: list
    label_index: int
    sentiment: int | None = None
    topic_dist: np.ndarray | None = None


@dataclass
class Corpus:
    posts: list
    scheme: ClassScheme
    vocab: "Vocabulary | None" = None

    def __len__(self) -> int:
        return len(self.posts)


@dataclass(frozen=True)
class Vocabulary:
    index_to_token: tuple
    token_to_index: dict = field(hash=False)

    @property
    def size(self) -> int:
        return len(self.index_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)


@dataclass(frozen=True)
class SplitPlan:
    fold_count: int
    assignments: np.ndarray
    seed: int


@dataclass(frozen=True)
class DatasetFormat:
    """Shape of one dataset file: its class names and its column names."""

    class_names: tuple
    id_column: str = "id"
    label_column: str = "label"
    text_column: str = "text"


def normalize_and_tokenize(text: str) -> list:
    """Lowercase, replace URLs and @mentions with placeholder tokens, strip
    hashtag marks, and split into word tokens and punctuation-run tokens."""
    text = text.lower()
    text = _URL_RE.sub(f" {URL_TOKEN} ", text)
    text = _MENTION_RE.sub(f" {USER_TOKEN} ", text)
    text = _HASHTAG_RE.sub("", text)
    return _TOKEN_RE.findall(text)


def load_dataset(path, fmt: DatasetFormat) -> Corpus:
    """Read one TSV dataset file into a Corpus, preserving row order.

    Raises ValueError naming the offending line for malformed rows, empty
    text, unknown labels and duplicate ids.
    """
    scheme = ClassScheme(tuple(fmt.class_names))
    posts = []
    seen_ids = set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        try:
            id_col = header.index(fmt.id_column)
            label_col = header.index(fmt.label_column)
            text_col = header.index(fmt.text_column)
        except ValueError:
            raise ValueError(
                f"missing required column in header {header!r}: need "
                f"{fmt.id_column!r}, {fmt.label_column!r}, {fmt.text_column!r}"
            ) from None
        width = len(header)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != width:
                raise ValueError(
                    f"malformed row at line {lineno}: expected {width} fields, "
                    f"got {len(fields)}"
                )
            rid = fields[id_col]
            label = fields[label_col]
            text = fields[text_col]
            if not rid:
                raise ValueError(f"empty id at line {lineno}")
            if rid in seen_ids:
                raise ValueError(f"duplicate id {rid!r} at line {lineno}")
            seen_ids.add(rid)
            if not text.strip():
                raise ValueError(f"empty text at line {lineno}")
            if label not in scheme.names:
                raise ValueError(f"unknown label {label!r} at line {lineno}")
            posts.append(Post(id=rid, tokens=normalize_and_tokenize(text),
                              label_index=scheme.index_of(label)))
    return Corpus(posts=posts, scheme=scheme)


def build_vocab(corpus: Corpus, min_freq: int = 1) -> Vocabulary:
    """Frequency-thresholded vocabulary, ordered by (-frequency, token) so the
    index assignment is deterministic; PAD and UNK occupy indices 0 and 1."""
    freq = {}
    for post in corpus.posts:
        for tok in post.tokens:
            freq[tok] = freq.get(tok, 0) + 1
    kept = sorted((t for t, c in freq.items() if c >= min_freq),
                  key=lambda t: (-freq[t], t))
    index_to_token = (PAD_TOKEN, UNK_TOKEN) + tuple(kept)
    token_to_index = {t: i for i, t in enumerate(index_to_token)}
    return Vocabulary(index_to_token=index_to_token, token_to_index=token_to_index)


def encode_post(post: Post, vocab: Vocabulary, max_len: int = 50) -> np.ndarray:
    """Fixed-length index sequence: truncate at the tail, right-pad with PAD."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    idx = [vocab.lookup(t) for t in post.tokens[:max_len]]
    idx.extend([PAD_INDEX] * (max_len - len(idx)))
    return np.asarray(idx, dtype=np.int64)


def encode_corpus(corpus: Corpus, vocab: Vocabulary, max_len: int = 50) -> np.ndarray:
    """All posts encoded as one (N, max_len) matrix."""
    if not corpus.posts:
        return np.zeros((0, max_len), dtype=np.int64)
    return np.stack([encode_post(p, vocab, max_len) for p in corpus.posts])


def make_folds(corpus: Corpus, fold_count: int, seed: int) -> SplitPlan:
    """Stratified fold assignment.

    Within each class the posts are shuffled with the given seed and dealt
    round-robin. The round-robin counter carries over from class to class so
    that overall fold sizes also differ by at most one.
    """
    if fold_count < 2:
        raise ValueError(f"fold_count must be >= 2, got {fold_count}")
    if not corpus.posts:
        raise ValueError("cannot plan folds for an empty corpus")
    labels = np.asarray([p.label_index for p in corpus.posts])
    assignments = np.empty(len(labels), dtype=np.int64)
    rng = np.random.default_rng(seed)
    cursor = 0
    for cls in range(corpus.scheme.size):
        members = np.flatnonzero(labels == cls)
        if 0 < len(members) < fold_count:
            warnings.warn(
                f"class {corpus.scheme.names[cls]!r} has {len(members)} posts, "
                f"fewer than {fold_count} folds", stacklevel=2)
        order = rng.permutation(len(members))
        for pos in order:
            assignments[members[pos]] = cursor % fold_count
            cursor += 1
    return SplitPlan(fold_count=fold_count, assignments=assignments, seed=seed)


COMBINED_SCHEME = ClassScheme(("normal", "inappropriate"))


def build_combined(corpora: list, mapping: dict) -> Corpus:
    """Merge corpora into one binary corpus via a label -> {normal,
    inappropriate, drop} mapping; dropped posts are excluded, order kept."""
    for target in mapping.values():
        if target not in ("normal", "inappropriate", "drop"):
            raise ValueError(f"invalid mapping target {target!r}")
    posts = []
    for src_i, corpus in enumerate(corpora):
        for post in corpus.posts:
            label = corpus.scheme.names[post.label_index]
            if label not in mapping:
                raise ValueError(f"unmapped label {label!r} in corpus {src_i}")
            target = mapping[label]
            if target == "drop":
                continue
            posts.append(Post(id=f"{src_i}:{post.id}", tokens=post.tokens,
                              label_index=COMBINED_SCHEME.index_of(target)))
    present = {p.label_index for p in posts}
    if len(present) < 2:
        warnings.warn("combined corpus has a single effective class", stacklevel=2)
    return Corpus(posts=posts, scheme=COMBINED_SCHEME)


def dedup_retweets(corpus: Corpus) -> Corpus:
    """Drop retweets (normalized text starting "rt <user>") and exact
    normalized duplicates of earlier posts; first occurrences are kept."""
    seen = set()
    kept = []
    for post in corpus.posts:
        if post.tokens[:2] == ["rt", USER_TOKEN]:
            continue
        key = " ".join(post.tokens)
        if key in seen:
            continue
        seen.add(key)
        kept.append(post)
    return Corpus(posts=kept, scheme=corpus.scheme, vocab=corpus.vocab)


def class_distribution(corpus: Corpus) -> np.ndarray:
    """Per-class post counts in scheme order; sums to len(corpus)."""
    counts = np.zeros(corpus.scheme.size, dtype=np.int64)
    for post in corpus.posts:
        counts[post.label_index] += 1
    return counts
