"""Acceptance gate: eleven end-to-end checks, one pass/fail line each.

Run with -v to get one line per criterion. Each test states its claim and
pins its tolerance; reference numbers are derived by hand in place from the
closed-form definitions, never read back from the implementation.
"""

import hashlib
import math
import time

import numpy as np
import pytest

import textfacet.autograd as ag
import textfacet.config as cf
import textfacet.encoder as enc
import textfacet.evaluation as ev
import textfacet.model as md
import textfacet.topics as tp
from textfacet.autograd import Tape, Tensor
from textfacet.embeddings import (EmbeddingTable, SentimentLexicon,
                                  score_sentiment)

# shared miniature geometry: embed 8, widths (2, 3), 4 filters, hidden 6,
# attention 5, 4 topics, 3 classes, length 7, vocabulary 20
TINY_ENCODER = enc.EncoderConfig(embed_dim=8, filter_widths=(2, 3),
                                 filters_per_width=4, hidden_size=6,
                                 attention_dim=5)


def tiny_model_config(**kw):
    base = dict(encoder=TINY_ENCODER, class_count=3, topic_count=4)
    base.update(kw)
    return md.ModelConfig(**base)


def tiny_tables(vocab_size=20, d=8, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)

    def mk(source):
        m = rng.normal(0.0, scale, size=(vocab_size, d)).astype(np.float32)
        m[0] = 0.0
        return EmbeddingTable(matrix=m, frozen=True, source_name=source)

    return {"glove": mk("glove"), "word2vec": mk("word2vec-wiki"),
            "paragram": mk("paragram"), "sentiment": mk("sentiment")}


def separable_data(rng, n_per_class, classes=3, length=7, vocab_size=20):
    rows, labels = [], []
    span = (vocab_size - 2) // classes
    for c in range(classes):
        lo = 2 + c * span
        for _ in range(n_per_class):
            rows.append(rng.integers(lo, lo + span, size=length))
            labels.append(c)
    order = rng.permutation(len(rows))
    return (np.asarray(rows, dtype=np.int64)[order],
            np.asarray(labels, dtype=np.int64)[order])


def random_simplex(rng, n, k):
    raw = rng.random((n, k)) + 1e-3
    return raw / raw.sum(axis=1, keepdims=True)


def test_criterion_01_full_model_gradients_match_finite_differences():
    """Every parameter gradient of the miniature full model agrees with
    central differences to better than 1e-4 relative error, within 60s."""
    start = time.time()
    error = md.wiring_gradient_check(seed=0)
    elapsed = time.time() - start
    assert error < 1e-4, f"max relative error {error:.3e} >= 1e-4"
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s >= 60s"


def test_criterion_02_hand_derived_forward_oracles():
    """Scalar LSTM step, two-column attention and the fusion gate reproduce
    closed-form hand calculations to 1e-4."""
    # unit-weight scalar LSTM, one step on x=1 from zero state:
    # every gate is sigmoid(1), candidate tanh(1), so
    # h1 = sigmoid(1) * tanh(sigmoid(1) * tanh(1)) = 0.3696...
    sig1 = 1.0 / (1.0 + math.exp(-1.0))
    h1_oracle = sig1 * math.tanh(sig1 * math.tanh(1.0))
    ones = Tensor(np.ones((1, 2)))
    zero = Tensor(np.zeros(1))
    lstm = enc.LstmParams(W_i=ones, W_f=Tensor(np.ones((1, 2))),
                          W_o=Tensor(np.ones((1, 2))),
                          W_c=Tensor(np.ones((1, 2))),
                          b_i=zero, b_f=Tensor(np.zeros(1)),
                          b_o=Tensor(np.zeros(1)), b_c=Tensor(np.zeros(1)))
    H = enc.lstm_forward(None, Tensor(np.array([[1.0]])), lstm)
    h1 = float(H.data[0, 0])
    assert abs(h1 - h1_oracle) < 1e-12
    assert abs(h1 - 0.3696) < 1e-4, f"h1 = {h1:.6f}"

    # identity attention over H = [1, 2]: scores tanh(1), tanh(2),
    # x = alpha1 + 2*alpha2 = 1.5504...
    e1, e2 = math.exp(math.tanh(1.0)), math.exp(math.tanh(2.0))
    x_oracle = (e1 + 2.0 * e2) / (e1 + e2)
    attn = enc.AttentionParams(W_H=Tensor(np.array([[1.0]])),
                               W_h=Tensor(np.zeros((1, 1))),
                               b_h=Tensor(np.zeros(1)),
                               w=Tensor(np.ones(1)))
    x, alphas = enc.attend(None, Tensor(np.array([[1.0, 2.0]])), attn)
    assert abs(float(x.data[0]) - x_oracle) < 1e-12
    assert abs(float(x.data[0]) - 1.5504) < 1e-4

    # scalar fusion: 1 + sigmoid(2)*1 + sigmoid(1.5)*0.5 = 2.2896...
    fuse_oracle = (1.0 + 1.0 / (1.0 + math.exp(-2.0))
                   + 0.5 / (1.0 + math.exp(-1.5)))
    out = md.fuse(None, Tensor(np.array([1.0])), Tensor(np.array([1.0])),
                  Tensor(np.array([0.5])), Tensor(np.array([[1.0]])),
                  Tensor(np.array([[1.0]])))
    assert abs(float(out.data[0]) - fuse_oracle) < 1e-12
    assert abs(float(out.data[0]) - 2.2896) < 1e-4


def test_criterion_03_structural_identities():
    """Degenerate settings collapse to exact identities: zero LSTM weights
    give zero states, length-1 attention passes through, a one-hot blend
    selects one branch, zero auxiliaries leave fusion at identity, and valid
    convolution obeys l = L - k + 1 across a grid."""
    rng = np.random.default_rng(0)
    # zero LSTM weights: gates 0.5, candidate 0, so c and h stay 0
    zeros = lambda shape: Tensor(np.zeros(shape))  # noqa: E731
    lstm = enc.LstmParams(W_i=zeros((3, 5)), W_f=zeros((3, 5)),
                          W_o=zeros((3, 5)), W_c=zeros((3, 5)),
                          b_i=zeros(3), b_f=zeros(3), b_o=zeros(3),
                          b_c=zeros(3))
    H = enc.lstm_forward(None, Tensor(rng.normal(size=(4, 2))), lstm)
    assert np.all(H.data == 0.0)

    # single-column attention is forced to alpha = [1], x = h_1
    attn = enc.AttentionParams(W_H=Tensor(rng.normal(size=(4, 3))),
                               W_h=Tensor(rng.normal(size=(4, 3))),
                               b_h=Tensor(rng.normal(size=4)),
                               w=Tensor(rng.normal(size=4)))
    column = rng.normal(size=(3, 1))
    x, alphas = enc.attend(None, Tensor(column), attn)
    assert np.array_equal(alphas.data, np.ones(1))
    np.testing.assert_allclose(x.data, column[:, 0], atol=1e-12)

    # a (1, 0, 0) blend returns the first branch exactly
    xs = [Tensor(rng.normal(size=(2, 5))) for _ in range(3)]
    weights = [Tensor(np.asarray(v, dtype=np.float64)) for v in (1.0, 0.0, 0.0)]
    blended = md.combine_semantic(None, xs, weights)
    assert np.array_equal(blended.data, xs[0].data)

    # zero auxiliary vectors leave fusion bitwise at the semantic vector
    x_w = Tensor(rng.normal(size=(3, 4)))
    z4 = Tensor(np.zeros((3, 4)))
    W = Tensor(rng.normal(size=(4, 4)))
    assert np.array_equal(md.fuse(None, x_w, z4, z4, W, W).data, x_w.data)

    # valid convolution length law over a grid
    for L in (3, 5, 9, 12):
        for k in (1, 2, 3):
            seq = Tensor(rng.normal(size=(L, 4)))
            w = Tensor(rng.normal(size=(k, 4, 2)))
            out = ag.conv1d_valid(None, seq, w, Tensor(np.zeros(2)))
            assert out.data.shape == (L - k + 1, 2), (L, k)


def test_criterion_04_normalization_invariants_hold():
    """Softmax rows, attention weights, topic mixtures and sentiment scores
    each sum to one (within 1e-6) across 1000 randomized inputs."""
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(400):
        rows = int(rng.integers(1, 6))
        cols = int(rng.integers(2, 8))
        logits = Tensor(rng.normal(scale=5.0, size=(rows, cols)))
        probs = ag.softmax(None, logits, axis=-1)
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-6)
        checked += 1
    for _ in range(200):
        z, l, a = (int(rng.integers(1, 5)) for _ in range(3))
        attn = enc.AttentionParams(W_H=Tensor(rng.normal(size=(a, z))),
                                   W_h=Tensor(rng.normal(size=(a, z))),
                                   b_h=Tensor(rng.normal(size=a)),
                                   w=Tensor(rng.normal(size=a)))
        _, alphas = enc.attend(None, Tensor(rng.normal(size=(z, l))), attn)
        np.testing.assert_allclose(alphas.data.sum(), 1.0, atol=1e-6)
        checked += 1
    for _ in range(200):
        k = int(rng.integers(2, 9))
        dist = random_simplex(rng, 1, k)[0]
        out = tp.sparsify(dist, float(rng.uniform(0.0, 0.9)))
        np.testing.assert_allclose(out.sum(), 1.0, atol=1e-6)
        checked += 1
    lexicon = SentimentLexicon(valence={"up": 2.0, "down": -1.5, "flat": 0.0})
    words = ["up", "down", "flat", "not", "very", "unknown"]
    for _ in range(200):
        tokens = [words[i] for i in rng.integers(0, len(words),
                                                 int(rng.integers(0, 7)))]
        s = score_sentiment(tokens, lexicon)
        assert abs(s.neg + s.neu + s.pos - 1.0) < 1e-6
        checked += 1
    assert checked == 1000


@pytest.mark.filterwarnings("ignore:topic count .* exceeds")
def test_criterion_05_topic_model_recovers_structure():
    """Collapsed Gibbs separates two disjoint vocabularies (cosine >= 0.9),
    K=1 is exact, the document filter reaches its documented fixpoint, and
    filtered posts fall back to the exact uniform mixture."""
    rng = np.random.default_rng(0)
    vocab_a = ["alpha", "bravo", "charlie", "delta"]
    vocab_b = ["xray", "yankee", "zulu", "whiskey"]
    docs = []
    for i in range(200):
        pool = vocab_a if i % 2 == 0 else vocab_b
        docs.append((f"d{i}", [pool[j] for j in rng.integers(0, 4, 8)]))
    model = tp.fit_lda(docs, tp.LdaConfig(topic_count=2, iterations=80,
                                          burn_in=30, sample_lag=5, seed=1))

    # each topic's phi should concentrate on one pool: compare against the
    # ideal indicator distributions by cosine similarity
    ideal_a = np.array([0.25 if w in vocab_a else 0.0 for w in model.lda_vocab])
    ideal_b = np.array([0.25 if w in vocab_b else 0.0 for w in model.lda_vocab])

    def cosine(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

    best = max(min(cosine(model.phi[0], ideal_a), cosine(model.phi[1], ideal_b)),
               min(cosine(model.phi[0], ideal_b), cosine(model.phi[1], ideal_a)))
    assert best >= 0.9, f"topic/pool cosine {best:.3f} < 0.9"

    # K=1: every document mixture is exactly [1.0]
    one = tp.fit_lda([("a", ["cat", "dog"]), ("b", ["dog", "emu", "cat"])],
                     tp.LdaConfig(topic_count=1, iterations=4, burn_in=1,
                                  sample_lag=1, seed=0))
    assert np.array_equal(one.theta, np.ones((2, 1)))

    # filter cascade: a rare word kills its post, which starves another
    # word below the threshold, and the survivors stabilize
    from textfacet.corpus import ClassScheme, Corpus, Post
    posts = [Post(id=f"p{i}", tokens=list(toks), label_index=0)
             for i, toks in enumerate([
                 ["aa", "bb", "cc", "ee"], ["aa", "bb", "cc", "ee"],
                 ["aa", "bb", "cc", "ee"], ["aa", "bb", "cc"],
                 ["aa", "bb", "cc", "ee"], ["rr", "ee", "ee"]])]
    corpus = Corpus(posts=posts, scheme=ClassScheme(("x", "y")))
    docs2, dropped = tp.filter_corpus_for_lda(corpus, frozenset())
    assert dropped == ["p5"]
    assert [toks for _, toks in docs2] == [["aa", "bb", "cc"]] * 5

    # posts outside the fitted corpus get the exact uniform fallback
    outsider = Post(id="new", tokens=["aa"], label_index=0)
    np.testing.assert_array_equal(tp.infer_topics(outsider, model),
                                  np.full(2, 0.5))


def test_criterion_06_metric_identities_and_reference_values():
    """Micro precision/recall/F1 all equal accuracy on 100 random label
    sets, and the four-post reference case yields accuracy 0.75, weighted
    precision 0.875, weighted recall 0.75 and weighted F1 0.75."""
    rng = np.random.default_rng(3)
    for _ in range(100):
        c = int(rng.integers(2, 7))
        n = int(rng.integers(1, 60))
        cm = ev.confusion_matrix(rng.integers(0, c, n), rng.integers(0, c, n),
                                 c)
        m = ev.metrics_from_confusion(cm)
        for name in ("micro_precision", "micro_recall", "micro_f1"):
            assert abs(m[name] - m["accuracy"]) < 1e-12
    m = ev.metrics_from_confusion(
        ev.confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2], 3))
    assert abs(m["accuracy"] - 0.75) < 1e-12
    assert abs(m["weighted_precision"] - 0.875) < 1e-12
    assert abs(m["weighted_recall"] - 0.75) < 1e-12
    assert abs(m["weighted_f1"] - 0.75) < 1e-12


def test_criterion_07_model_fits_separable_corpus():
    """The full model reaches 100% training accuracy on a 64-post
    token-separable corpus within 200 epochs at learning rate 0.001, in
    under five minutes."""
    start = time.time()
    rng = np.random.default_rng(0)
    encoded, labels = separable_data(rng, n_per_class=22)
    encoded, labels = encoded[:64], labels[:64]
    dists = random_simplex(rng, 64, 4)
    model = md.build_model(0, tiny_model_config(), tiny_tables())
    history = md.train(model, encoded, labels, dists,
                       md.TrainConfig(learning_rate=0.001, batch_size=8,
                                      epochs=200, dropout_embed=0.0,
                                      dropout_fc=0.0, seed=0,
                                      stop_at_accuracy=1.0))
    elapsed = time.time() - start
    best = max(row["accuracy"] for row in history)
    assert best == 1.0, (f"best accuracy {best:.3f} after "
                         f"{len(history)} epochs")
    assert elapsed < 300.0, f"training took {elapsed:.0f}s >= 300s"


def test_criterion_08_ablation_rows_and_zero_forced_equivalence():
    """The ablation runs exactly Semantic, Topic+Semantic,
    Sentiment+Semantic, Full in that order, and the Semantic row's confusion
    matrix is bitwise identical to a full model trained with both auxiliary
    vectors forced to zero under the same seed."""
    rng = np.random.default_rng(2)
    encoded, labels = separable_data(rng, n_per_class=8)
    dists = random_simplex(rng, len(labels), 4)
    cfg = md.TrainConfig(batch_size=8, epochs=2, seed=9)
    rows = ev.run_ablation((encoded, labels, dists), (encoded, labels, dists),
                           tiny_tables(), tiny_model_config(), cfg)
    assert [r["config"] for r in rows] == ["Semantic", "Topic+Semantic",
                                           "Sentiment+Semantic", "Full"]
    forced = md.build_model(9, tiny_model_config(), tiny_tables())
    md.train(forced, encoded, labels, None, cfg, zero_sentiment=True,
             zero_topic=True)
    result = ev.evaluate(forced, encoded, labels, zero_sentiment=True,
                         zero_topic=True)
    assert np.array_equal(rows[0]["confusion"], result.confusion)


def test_criterion_09_bitwise_reproducibility(tmp_path):
    """Frozen tables hash identically before and after training; identical
    configuration, seed and inputs give byte-identical checkpoints and
    reports; a checkpoint survives a save/load round trip bitwise."""
    rng = np.random.default_rng(5)
    encoded, labels = separable_data(rng, n_per_class=6)
    dists = random_simplex(rng, len(labels), 4)
    cfg = md.TrainConfig(batch_size=8, epochs=2, seed=11)
    payloads = []
    reports = []
    for run in range(2):
        model = md.build_model(11, tiny_model_config(), tiny_tables())
        before = {k: hashlib.sha256(t.matrix.tobytes()).hexdigest()
                  for k, t in model.tables.items()}
        md.train(model, encoded, labels, dists, cfg)
        after = {k: hashlib.sha256(t.matrix.tobytes()).hexdigest()
                 for k, t in model.tables.items()}
        assert before == after, "training touched a frozen table"
        path = tmp_path / f"run{run}.ckpt"
        md.save_model(path, model)
        payloads.append(path.read_bytes())
        result = ev.evaluate(model, encoded, labels, dists)
        reports.append(ev.metrics_tsv(ev.metrics_rows("Full", 0,
                                                      result.metrics)))
    assert payloads[0] == payloads[1], "checkpoints differ across runs"
    assert reports[0] == reports[1], "reports differ across runs"
    loaded = md.load_model(tmp_path / "run0.ckpt")
    reload_path = tmp_path / "reload.ckpt"
    md.save_model(reload_path, loaded)
    assert reload_path.read_bytes() == payloads[0], "round trip not bitwise"


def test_criterion_10_saliency_matches_probe_and_ignores_padding():
    """Token saliency agrees with a finite-difference probe of the winning
    logit within 1e-3, every score is nonnegative, and appending PAD tokens
    changes no surviving score by more than 1e-6."""
    from textfacet.corpus import Vocabulary

    tokens = tuple(f"tok{chr(97 + i)}" for i in range(18))
    vocab = Vocabulary(index_to_token=("<pad>", "<unk>") + tokens,
                       token_to_index={t: i for i, t in enumerate(
                           ("<pad>", "<unk>") + tokens)})
    model = md.build_model(1, tiny_model_config(use_topic=False),
                           tiny_tables())
    post = ["toka", "tokb", "tokc", "tokd", "toke"]
    idx = np.array([vocab.lookup(t) for t in post], dtype=np.int64)
    pred, totals, branch = ev.saliency_from_indices(model, idx)
    assert np.all(totals >= 0.0)

    def logit():
        _, logits, _ = md.forward(None, model, idx, None, return_parts=True)
        return float(logits.data[pred])

    eps = 1e-3
    for b, key in enumerate(md.SEMANTIC_BRANCHES):
        matrix = model.tables[key].matrix
        for pos in range(len(post)):
            row = idx[pos]
            diffs = []
            for dim in range(matrix.shape[1]):
                keep = matrix[row, dim]
                matrix[row, dim] = keep + eps
                up = logit()
                matrix[row, dim] = keep - eps
                down = logit()
                matrix[row, dim] = keep
                diffs.append((up - down) / (2.0 * eps))
            fd = float(np.mean(np.abs(diffs)))
            assert abs(fd - branch[b, pos]) < 1e-3, (key, pos)

    _, entries = ev.saliency(model, vocab, post, max_len=9)
    _, padded = ev.saliency(model, vocab, post + ["<pad>"] * 4, max_len=9)
    assert [e.token for e in entries] == [e.token for e in padded]
    for a, b in zip(entries, padded):
        assert abs(a.score - b.score) < 1e-6


@pytest.mark.filterwarnings("ignore:topic count .* exceeds")
def test_criterion_11_topic_sweep_and_dataset_defaults(tmp_path):
    """Sweeping topic counts 5 through 20 yields exactly 16 rows in order,
    and the per-dataset topic-count defaults resolve to 15, 10 and 15."""
    rng = np.random.default_rng(0)
    words = ["alpha", "bravo", "charlie", "delta", "echo"]
    docs = [(f"d{i}", [words[j] for j in rng.integers(0, 5, 6)])
            for i in range(15)]
    rows = tp.sweep_topic_count(
        docs, tp.LdaConfig(topic_count=2, iterations=6, burn_in=2,
                           sample_lag=2), base_seed=0, k_range=range(5, 21))
    assert len(rows) == 16
    assert [k for k, _ in rows] == list(range(5, 21))
    assert all(math.isfinite(ll) for _, ll in rows)

    for dataset, expected in (("wz-ls", 15), ("dt", 10), ("founta", 15)):
        path = tmp_path / f"{dataset}.ini"
        path.write_text("[data]\n"
                        f"dataset = {dataset}\n"
                        "train_file = posts.tsv\n"
                        "class_names = a,b,c\n", encoding="utf-8")
        assert cf.parse_config(path).topic_count == expected, dataset
