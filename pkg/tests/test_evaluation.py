"""Metrics identities, fold pipeline, ablation order, saliency and rendering."""

import json
import math

import numpy as np
import pytest

import textfacet.encoder as enc
import textfacet.evaluation as ev
import textfacet.model as md
import textfacet.topics as tp
from textfacet.corpus import ClassScheme, Corpus, Post, build_vocab
from textfacet.embeddings import EmbeddingTable


def tiny_config(use_sentiment=True, use_topic=True, topic_count=2,
                class_count=2):
    return md.ModelConfig(
        encoder=enc.EncoderConfig(embed_dim=8, filter_widths=(2, 3),
                                  filters_per_width=4, hidden_size=6,
                                  attention_dim=5),
        class_count=class_count, topic_count=topic_count,
        use_sentiment=use_sentiment, use_topic=use_topic)


def tiny_tables(vocab_size, d=8, seed=0, with_sentiment=True):
    rng = np.random.default_rng(seed)

    def mk(source):
        m = rng.normal(0.0, 0.5, size=(vocab_size, d)).astype(np.float32)
        m[0] = 0.0
        return EmbeddingTable(matrix=m, frozen=True, source_name=source)

    tables = {"glove": mk("glove"), "word2vec": mk("word2vec-wiki"),
              "paragram": mk("paragram")}
    if with_sentiment:
        tables["sentiment"] = mk("sentiment")
    return tables


def two_class_corpus(seed=0, n_per_class=12):
    # each post carries its whole class pool (shuffled), so every word
    # appears in enough posts to survive LDA filtering in any fold split;
    # three strong lexicon words per pool outweigh the neutral mass and
    # give the sentiment task two distinct labels
    rng = np.random.default_rng(seed)
    pools = [["apple", "banana", "love", "great", "good"],
             ["dog", "wolf", "hate", "awful", "bad"]]
    posts = []
    for c, pool in enumerate(pools):
        for i in range(n_per_class):
            tokens = [str(t) for t in rng.permutation(pool)]
            posts.append(Post(id=f"{c}-{i}", tokens=tokens, label_index=c))
    return Corpus(posts=posts, scheme=ClassScheme(("benign", "harsh")))


class TestConfusion:
    def test_counts(self):
        cm = ev.confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2], 3)
        assert np.array_equal(cm, [[1, 1, 0], [0, 1, 0], [0, 0, 1]])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="differ in length"):
            ev.confusion_matrix([0, 1], [0], 2)

    def test_range_check(self):
        with pytest.raises(ValueError, match="outside"):
            ev.confusion_matrix([0, 3], [0, 1], 3)


class TestMetrics:
    def test_reference_fixture(self):
        # y_true=[0,0,1,2], y_pred=[0,1,1,2]: per-class P=(1,0.5,1),
        # R=(0.5,1,1), supports (2,1,1) give weighted P 0.875 and the
        # micro family all at 3/4
        cm = ev.confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2], 3)
        m = ev.metrics_from_confusion(cm)
        assert abs(m["accuracy"] - 0.75) < 1e-12
        for name in ("micro_precision", "micro_recall", "micro_f1"):
            assert abs(m[name] - 0.75) < 1e-12, name
        assert abs(m["weighted_precision"] - 0.875) < 1e-12
        assert abs(m["weighted_recall"] - 0.75) < 1e-12
        assert abs(m["weighted_f1"] - 0.75) < 1e-12
        assert m["per_class"][0] == {"precision": 1.0, "recall": 0.5,
                                     "f1": pytest.approx(2 / 3),
                                     "support": 2}

    def test_micro_equals_accuracy_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            c = int(rng.integers(2, 6))
            n = int(rng.integers(1, 40))
            cm = ev.confusion_matrix(rng.integers(0, c, n),
                                     rng.integers(0, c, n), c)
            m = ev.metrics_from_confusion(cm)
            for name in ("micro_precision", "micro_recall", "micro_f1"):
                assert abs(m[name] - m["accuracy"]) < 1e-12

    def test_weighted_recall_equals_accuracy(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            c = int(rng.integers(2, 6))
            n = int(rng.integers(1, 40))
            cm = ev.confusion_matrix(rng.integers(0, c, n),
                                     rng.integers(0, c, n), c)
            m = ev.metrics_from_confusion(cm)
            assert abs(m["weighted_recall"] - m["accuracy"]) < 1e-12

    def test_zero_substitution(self):
        # class 0 never predicted and never hit: P, R and F1 all 0
        m = ev.metrics_from_confusion(np.array([[0, 1], [0, 1]]))
        assert m["per_class"][0] == {"precision": 0.0, "recall": 0.0,
                                     "f1": 0.0, "support": 1}
        assert abs(m["weighted_f1"] - (2 / 3) / 2) < 1e-12

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError, match="empty confusion matrix"):
            ev.metrics_from_confusion(np.zeros((3, 3)))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError, match="square"):
            ev.metrics_from_confusion(np.ones((2, 3)))


class TestEvaluate:
    def test_counts_match_posts(self):
        rng = np.random.default_rng(0)
        model = md.build_model(0, tiny_config(use_topic=False),
                               tiny_tables(vocab_size=15))
        encoded = rng.integers(0, 15, size=(9, 6))
        labels = rng.integers(0, 2, size=9)
        result = ev.evaluate(model, encoded, labels)
        assert result.confusion.sum() == 9
        assert 0.0 <= result.metrics["accuracy"] <= 1.0


class TestCrossValidate:
    LDA = tp.LdaConfig(topic_count=2, iterations=15, burn_in=5, sample_lag=5)

    def run(self, seed=0):
        corpus = two_class_corpus()
        vocab = build_vocab(corpus)
        tables = tiny_tables(vocab.size, with_sentiment=False)
        return ev.cross_validate(
            corpus, vocab, tables, tiny_config(),
            md.TrainConfig(batch_size=8, epochs=2, seed=seed, max_len=6),
            lda_config=self.LDA, fold_count=2, seed=seed, sentiment_epochs=2)

    def test_two_folds_cover_corpus(self):
        results = self.run()
        assert [r["fold"] for r in results] == [0, 1]
        assert sum(int(r["confusion"].sum()) for r in results) == 24
        for r in results:
            assert set(ev.METRIC_NAMES) <= set(r["metrics"])
            assert len(r["history"]) == 2

    def test_deterministic(self):
        a, b = self.run(seed=3), self.run(seed=3)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra["confusion"], rb["confusion"])
            assert ra["metrics"] == rb["metrics"]

    def test_topic_branch_requires_lda_config(self):
        corpus = two_class_corpus()
        vocab = build_vocab(corpus)
        with pytest.raises(ValueError, match="no LDA settings"):
            ev.cross_validate(corpus, vocab, tiny_tables(vocab.size),
                              tiny_config(), md.TrainConfig(), fold_count=2)


def separable_arrays(rng, n_per_class=8, classes=2, length=6, vocab_size=15):
    rows, labels = [], []
    span = (vocab_size - 2) // classes
    for c in range(classes):
        lo = 2 + c * span
        for _ in range(n_per_class):
            rows.append(rng.integers(lo, lo + span, size=length))
            labels.append(c)
    dists = rng.random((len(rows), 2)) + 1e-3
    dists /= dists.sum(axis=1, keepdims=True)
    return np.asarray(rows, dtype=np.int64), np.asarray(labels,
                                                        dtype=np.int64), dists


class TestAblation:
    def test_row_order_and_shape(self):
        rng = np.random.default_rng(0)
        encoded, labels, dists = separable_arrays(rng)
        rows = ev.run_ablation((encoded, labels, dists),
                               (encoded, labels, dists),
                               tiny_tables(vocab_size=15), tiny_config(),
                               md.TrainConfig(batch_size=8, epochs=2, seed=0))
        assert [r["config"] for r in rows] == list(ev.ABLATION_ORDER)
        for r in rows:
            assert r["confusion"].shape == (2, 2)
            assert r["confusion"].sum() == len(labels)

    def test_semantic_row_matches_zero_forced_full(self):
        rng = np.random.default_rng(1)
        encoded, labels, dists = separable_arrays(rng)
        cfg = md.TrainConfig(batch_size=8, epochs=2, seed=4)
        rows = ev.run_ablation((encoded, labels, dists),
                               (encoded, labels, dists),
                               tiny_tables(vocab_size=15), tiny_config(), cfg)
        semantic = rows[0]
        full = md.build_model(4, tiny_config(), tiny_tables(vocab_size=15))
        md.train(full, encoded, labels, None, cfg,
                 zero_sentiment=True, zero_topic=True)
        forced = ev.evaluate(full, encoded, labels,
                             zero_sentiment=True, zero_topic=True)
        assert np.array_equal(semantic["confusion"], forced.confusion)

    def test_topicless_data_rejected(self):
        rng = np.random.default_rng(2)
        encoded, labels, _ = separable_arrays(rng)
        with pytest.raises(ValueError, match="needs topic distributions"):
            ev.run_ablation((encoded, labels, None), (encoded, labels, None),
                            tiny_tables(vocab_size=15), tiny_config(),
                            md.TrainConfig(batch_size=8, epochs=1, seed=0))


class TestSaliency:
    def build(self):
        corpus = two_class_corpus()
        self.vocab = build_vocab(corpus)
        return md.build_model(0, tiny_config(use_topic=False),
                              tiny_tables(self.vocab.size))

    def test_scores_nonnegative_and_cover_tokens(self):
        model = self.build()
        tokens = ["apple", "dog", "good", "wolf"]
        pred, entries = ev.saliency(model, self.vocab, tokens, max_len=6)
        assert pred in (0, 1)
        assert [e.token for e in entries] == tokens
        for e in entries:
            assert e.score >= 0.0
            assert len(e.branch_scores) == 3
            # float32 activations: sum order differs at the 1e-10 level
            assert abs(e.score - sum(e.branch_scores)) < 1e-6

    def test_pad_extension_invariance(self):
        model = self.build()
        tokens = ["apple", "dog", "good"]
        _, before = ev.saliency(model, self.vocab, tokens, max_len=8)
        _, after = ev.saliency(model, self.vocab, tokens + ["<pad>"] * 3,
                               max_len=8)
        assert [e.token for e in before] == [e.token for e in after]
        for a, b in zip(before, after):
            assert a.score == b.score
            assert a.branch_scores == b.branch_scores

    def test_matches_finite_differences(self):
        # distinct tokens, so each embedding row feeds exactly one position
        model = self.build()
        tokens = ["apple", "dog", "good", "wolf", "lion"]
        idx = np.array([self.vocab.lookup(t) for t in tokens], dtype=np.int64)
        pred, _, branch = ev.saliency_from_indices(model, idx)

        def logit():
            _, logits, _ = md.forward(None, model, idx, None,
                                      return_parts=True)
            return float(logits.data[pred])

        eps = 1e-3
        for b, key in enumerate(md.SEMANTIC_BRANCHES):
            matrix = model.tables[key].matrix
            for pos in range(len(tokens)):
                row = idx[pos]
                grads = []
                for dim in range(matrix.shape[1]):
                    keep = matrix[row, dim]
                    matrix[row, dim] = keep + eps
                    up = logit()
                    matrix[row, dim] = keep - eps
                    down = logit()
                    matrix[row, dim] = keep
                    grads.append((up - down) / (2 * eps))
                fd = float(np.mean(np.abs(grads)))
                assert abs(fd - branch[b, pos]) < 1e-3, (key, pos)

    def test_batched_input_rejected(self):
        model = self.build()
        with pytest.raises(ValueError, match="single encoded post"):
            ev.saliency_from_indices(model, np.zeros((2, 5), dtype=np.int64))


class TestRender:
    ENTRIES = [ev.SaliencyEntry("low", 0, 0.1, (0.1, 0.0, 0.0)),
               ev.SaliencyEntry("<b>", 1, 0.9, (0.3, 0.3, 0.3))]

    def test_ansi_contains_tokens_and_colors(self):
        out = ev.render_saliency(self.ENTRIES, mode="ansi")
        assert "low" in out and "<b>" in out
        assert "\x1b[30;48;5;" in out and out.count("\x1b[0m") == 2

    def test_html_escapes_and_is_self_contained(self):
        out = ev.render_saliency(self.ENTRIES, mode="html")
        assert out.startswith("<!DOCTYPE html>")
        assert "&lt;b&gt;" in out and "<b>" not in out.split("<style>")[1]
        assert out.count('<span class="tok"') == 2

    def test_flat_scores_render_at_full_intensity(self):
        entries = [ev.SaliencyEntry("a", 0, 0.5, (0.5, 0.0, 0.0)),
                   ev.SaliencyEntry("b", 1, 0.5, (0.5, 0.0, 0.0))]
        out = ev.render_saliency(entries, mode="html")
        assert out.count("rgba(220,38,38,0.900)") == 2

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown render mode"):
            ev.render_saliency(self.ENTRIES, mode="latex")

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="nothing to render"):
            ev.render_saliency([], mode="ansi")


class TestSummaries:
    def test_sentiment_distribution(self):
        corpus = Corpus(posts=[Post("a", ["x"], 0, sentiment=2),
                               Post("b", ["y"], 0, sentiment=2),
                               Post("c", ["z"], 1, sentiment=0),
                               Post("d", ["w"], 1, sentiment=1)],
                        scheme=ClassScheme(("p", "q")))
        np.testing.assert_allclose(ev.sentiment_distribution(corpus),
                                   [0.25, 0.25, 0.5])

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="corpus is empty"):
            ev.sentiment_distribution(Corpus(posts=[],
                                             scheme=ClassScheme(("p", "q"))))

    def test_unlabeled_post_rejected(self):
        corpus = Corpus(posts=[Post("a", ["x"], 0)],
                        scheme=ClassScheme(("p", "q")))
        with pytest.raises(ValueError, match="no sentiment label"):
            ev.sentiment_distribution(corpus)

    def test_metrics_tsv_layout(self):
        metrics = ev.metrics_from_confusion(np.array([[3, 1], [0, 4]]))
        rows = ev.metrics_rows("Full", 0, metrics)
        text = ev.metrics_tsv(rows)
        lines = text.strip().split("\n")
        assert lines[0] == "config\tfold\tmetric\tvalue"
        assert len(lines) == 1 + len(ev.METRIC_NAMES)
        assert lines[1].startswith("Full\t0\taccuracy\t0.875000")

    def test_saliency_json_shape(self):
        payload = json.loads(ev.saliency_json(self.entries()))
        assert payload == [{"token": "low", "score": 0.1,
                            "branch_scores": [0.1, 0.0, 0.0]}]

    @staticmethod
    def entries():
        return [ev.SaliencyEntry("low", 0, 0.1, (0.1, 0.0, 0.0))]
