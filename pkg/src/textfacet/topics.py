"""Topic mixtures via collapsed-Gibbs LDA.

The corpus is first shrunk to its topical core: stopwords and non-ASCII-
alphabetic tokens go first, then words in too few posts and posts with too
few words are dropped until both constraints hold at once. Posts that fall
out (or arrive later, unseen) get the uniform mixture. Skewed mixtures come
from a small document-topic prior plus an explicit sparsification step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autograd import derive_seed
from .corpus import Corpus, Post


@dataclass(frozen=True)
class LdaConfig:
    topic_count: int
    alpha: float = 0.1
    beta: float = 0.01
    iterations: int = 500
    burn_in: int = 200
    sample_lag: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.topic_count < 1:
            raise ValueError(f"topic_count must be >= 1, got {self.topic_count}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if not self.iterations > self.burn_in >= 0:
            raise ValueError(
                f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}")
        if self.sample_lag < 1:
            raise ValueError("sample_lag must be >= 1")


@dataclass
class TopicModel:
    phi: np.ndarray  # (K, V') topic-word distributions
    theta: np.ndarray  # (D_kept, K) per-kept-post mixtures
    kept_post_ids: tuple
    lda_vocab: tuple
    config: LdaConfig
    likelihood_trace: list = field(default_factory=list)

    def __post_init__(self):
        self._row_of = {pid: i for i, pid in enumerate(self.kept_post_ids)}
        self._col_of = {w: j for j, w in enumerate(self.lda_vocab)}

    @property
    def topic_count(self) -> int:
        return self.phi.shape[0]


def _topical_tokens(tokens, stopwords) -> list:
    return [t for t in tokens
            if t not in stopwords and t.isascii() and t.isalpha()]


def filter_corpus_for_lda(corpus: Corpus, stopwords,
                          min_word_posts: int = 5,
                          min_post_words: int = 3):
    """Reduce the corpus to (post id, tokens) pairs obeying both thresholds.

    After removing stopwords and non-ASCII-alphabetic tokens, repeatedly drop
    words appearing in fewer than min_word_posts remaining posts and posts
    with fewer than min_post_words remaining tokens, until stable. The
    fixpoint is unique, so iteration order does not matter. Returns the kept
    pairs (corpus order) and the dropped post ids.
    """
    docs = [(p.id, _topical_tokens(p.tokens, stopwords)) for p in corpus.posts]
    docs = [(pid, toks) for pid, toks in docs if len(toks) >= min_post_words]
    while True:
        post_count = {}
        for _, toks in docs:
            for w in set(toks):
                post_count[w] = post_count.get(w, 0) + 1
        kept_words = {w for w, c in post_count.items() if c >= min_word_posts}
        new_docs = []
        changed = False
        for pid, toks in docs:
            filtered = [t for t in toks if t in kept_words]
            if len(filtered) < min_post_words:
                changed = True
                continue
            if len(filtered) != len(toks):
                changed = True
            new_docs.append((pid, filtered))
        docs = new_docs
        if not changed:
            break
    if not docs:
        raise ValueError("empty LDA corpus: filtering removed every post")
    kept_ids = {pid for pid, _ in docs}
    dropped = [p.id for p in corpus.posts if p.id not in kept_ids]
    return docs, dropped


def fit_lda(docs, config: LdaConfig) -> TopicModel:
    """Collapsed Gibbs sampling over (post id, tokens) pairs.

    Each sweep resamples every token's topic from the standard collapsed
    conditional p(k) ~ (n_dk + alpha) * (n_kw + beta) / (n_k + V*beta).
    phi and theta are averaged over post-burn-in count snapshots taken every
    sample_lag sweeps (at least one snapshot is always taken).
    """
    if not docs:
        raise ValueError("cannot fit topics on an empty corpus")
    K = config.topic_count
    vocab = tuple(sorted({w for _, toks in docs for w in toks}))
    if K > len(vocab):
        warnings.warn(f"topic count {K} exceeds distinct word count {len(vocab)}",
                      stacklevel=2)
    col = {w: j for j, w in enumerate(vocab)}
    V = len(vocab)
    D = len(docs)
    word_ids = [np.asarray([col[w] for w in toks], dtype=np.int64)
                for _, toks in docs]

    rng = np.random.default_rng(config.seed)
    n_dk = np.zeros((D, K), dtype=np.int64)
    n_kw = np.zeros((K, V), dtype=np.int64)
    n_k = np.zeros(K, dtype=np.int64)
    assign = []
    for d, ws in enumerate(word_ids):
        z = rng.integers(0, K, size=ws.size)
        assign.append(z)
        np.add.at(n_dk[d], z, 1)
        np.add.at(n_kw, (z, ws), 1)
        np.add.at(n_k, z, 1)
    n_d = np.asarray([ws.size for ws in word_ids], dtype=np.int64)

    alpha, beta = config.alpha, config.beta
    vbeta = V * beta

    def snapshot_phi():
        return (n_kw + beta) / (n_k + vbeta)[:, None]

    def snapshot_theta():
        return (n_dk + alpha) / (n_d + K * alpha)[:, None]

    def current_ll():
        phi = snapshot_phi()
        theta = snapshot_theta()
        total = 0.0
        for d, ws in enumerate(word_ids):
            total += np.log(theta[d] @ phi[:, ws]).sum()
        return float(total)

    phi_acc = np.zeros((K, V))
    theta_acc = np.zeros((D, K))
    samples = 0
    trace = []
    for sweep in range(1, config.iterations + 1):
        for d, ws in enumerate(word_ids):
            z = assign[d]
            row = n_dk[d]
            for i in range(ws.size):
                w = ws[i]
                k_old = z[i]
                row[k_old] -= 1
                n_kw[k_old, w] -= 1
                n_k[k_old] -= 1
                p = (row + alpha) * (n_kw[:, w] + beta) / (n_k + vbeta)
                cum = np.cumsum(p)
                k_new = int(np.searchsorted(cum, rng.random() * cum[-1],
                                            side="right"))
                if k_new == K:  # guard against roundoff at the top edge
                    k_new = K - 1
                z[i] = k_new
                row[k_new] += 1
                n_kw[k_new, w] += 1
                n_k[k_new] += 1
        trace.append(current_ll())
        if sweep > config.burn_in and (sweep - config.burn_in) % config.sample_lag == 0:
            phi_acc += snapshot_phi()
            theta_acc += snapshot_theta()
            samples += 1
    if samples == 0:
        phi_acc += snapshot_phi()
        theta_acc += snapshot_theta()
        samples = 1

    return TopicModel(phi=phi_acc / samples, theta=theta_acc / samples,
                      kept_post_ids=tuple(pid for pid, _ in docs),
                      lda_vocab=vocab, config=config,
                      likelihood_trace=trace)


def log_likelihood(model: TopicModel, docs) -> float:
    """Sum over tokens of log sum_k theta_dk * phi_kw for the fitted posts."""
    total = 0.0
    for pid, toks in docs:
        d = model._row_of.get(pid)
        if d is None:
            raise ValueError(f"post {pid!r} was not part of the fitted corpus")
        for w in toks:
            j = model._col_of.get(w)
            if j is None:
                raise ValueError(f"token {w!r} outside the topic vocabulary")
            total += float(np.log(model.theta[d] @ model.phi[:, j]))
    return total


def sweep_topic_count(docs, config_template: LdaConfig, base_seed: int,
                      k_range=range(5, 21), threads: int = 1):
    """Fit one model per topic count; chains are independently seeded from
    (base_seed, K) so runs are reproducible and parallelizable."""
    ks = list(k_range)
    if not ks:
        raise ValueError("empty topic-count range")

    def one(k):
        cfg = LdaConfig(topic_count=k, alpha=config_template.alpha,
                        beta=config_template.beta,
                        iterations=config_template.iterations,
                        burn_in=config_template.burn_in,
                        sample_lag=config_template.sample_lag,
                        seed=derive_seed(base_seed, "lda-sweep", k))
        model = fit_lda(docs, cfg)
        return k, log_likelihood(model, docs)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, ks))
    else:
        results = [one(k) for k in ks]
    return sorted(results, key=lambda kv: kv[0])


def infer_topics(post: Post, model: TopicModel) -> np.ndarray:
    """Stored mixture for fitted posts; uniform 1/K for everything else."""
    row = model._row_of.get(post.id)
    if row is None:
        return np.full(model.topic_count, 1.0 / model.topic_count)
    return model.theta[row].copy()


def sparsify(dist: np.ndarray, threshold: float) -> np.ndarray:
    """Zero entries below threshold*max and renormalize; the argmax always
    survives, so the result stays on the simplex."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must be in [0, 1), got {threshold}")
    dist = np.asarray(dist, dtype=np.float64)
    cut = threshold * dist.max()
    out = np.where(dist < cut, 0.0, dist)
    return out / out.sum()
