"""Synthetic corpus generation and dataset IO tests."""

import numpy as np
import pytest

from chunkcoder.datagen import (
    CorpusSpec,
    DataGenError,
    DatasetFormatError,
    corpus_stats,
    generate_corpus,
    label_space,
    load_dataset,
    save_dataset,
    signal_word,
)
from chunkcoder.metrics import EvalBatch, macro_auc
from chunkcoder.textprep import build_vocabulary, preprocess_text


def small_spec(**kwargs):
    base = dict(n_train=40, n_val=12, n_test=12, label_count=10,
                mean_labels_per_doc=3.0, seed=7)
    base.update(kwargs)
    return CorpusSpec(**base)


def test_generation_is_deterministic():
    a = generate_corpus(small_spec())
    b = generate_corpus(small_spec())
    assert [d.id for d in a.documents] == [d.id for d in b.documents]
    assert all(x.raw_text == y.raw_text for x, y in zip(a.documents, b.documents))
    assert all(x.labels == y.labels for x, y in zip(a.documents, b.documents))


def test_front_signals_live_in_front_region():
    corpus = generate_corpus(small_spec(signal_position="front"))
    for doc in corpus.documents:
        words = doc.raw_text.split()
        cutoff = max(1, int(0.15 * len(words)))
        for k, w in enumerate(words):
            if w.startswith("sig"):
                assert k < cutoff, f"signal at {k} of {len(words)}"


def test_back_signals_live_in_back_region():
    corpus = generate_corpus(small_spec(signal_position="back"))
    for doc in corpus.documents:
        words = doc.raw_text.split()
        cutoff = len(words) - max(1, int(0.15 * len(words)))
        for k, w in enumerate(words):
            if w.startswith("sig"):
                assert k >= cutoff


def test_split_signals_follow_label_halves():
    spec = small_spec(signal_position="split", label_count=10)
    corpus = generate_corpus(spec)
    for doc in corpus.documents:
        words = doc.raw_text.split()
        width = max(1, int(0.15 * len(words)))
        for k, w in enumerate(words):
            if not w.startswith("sig"):
                continue
            lid = [i for i in range(10) if signal_word(i) == w][0]
            if lid < 5:
                assert k < width
            else:
                assert k >= len(words) - width


def test_oracle_classifier_reaches_auc_one():
    corpus = generate_corpus(small_spec())
    labels = corpus.label_names
    scores = np.zeros((len(corpus.documents), len(labels)))
    targets = np.zeros_like(scores, dtype=int)
    for i, doc in enumerate(corpus.documents):
        words = set(doc.raw_text.split())
        for j, lab in enumerate(labels):
            scores[i, j] = 1.0 if corpus.signal_map[lab] in words else 0.0
            targets[i, j] = 1 if lab in doc.labels else 0
    assert macro_auc(EvalBatch(scores, targets, labels)) == 1.0


def test_splits_disjoint_and_sized():
    spec = small_spec()
    corpus = generate_corpus(spec)
    by_split = {}
    for doc in corpus.documents:
        by_split.setdefault(doc.split, set()).add(doc.id)
    assert len(by_split["train"]) == spec.n_train
    assert len(by_split["validation"]) == spec.n_val
    assert len(by_split["test"]) == spec.n_test
    assert not (by_split["train"] & by_split["validation"] & by_split["test"])


def test_default_spec_statistics():
    spec = CorpusSpec(seed=42)
    corpus = generate_corpus(spec)
    pre = [preprocess_text(d.raw_text) for d in corpus.documents[:300]]
    # large enough that common filler words stay whole tokens
    vocab = build_vocabulary(pre, target_size=3000)
    stats = corpus_stats(corpus.documents[:300], vocab)
    assert abs(stats["token_length"]["mean"] - spec.mean_len) / spec.mean_len < 0.10
    assert abs(stats["labels_per_doc_mean"] - 13.15) / 13.15 < 0.15
    assert stats["reference_full_scale"]["token_length"]["mean"] == 2740


def test_documents_are_colon_headed_paragraphs():
    corpus = generate_corpus(small_spec())
    doc = corpus.documents[0]
    lines = doc.raw_text.split("\n")
    assert lines[0].endswith(":")
    assert any(line and not line.endswith(":") for line in lines)


def test_infeasible_spec_errors():
    with pytest.raises(DataGenError, match="infeasible"):
        generate_corpus(small_spec(min_len=10, base_mean_len=120.0,
                                   base_median_len=110.0, signal_strength=5))
    with pytest.raises(DataGenError, match="signal_position"):
        generate_corpus(small_spec(signal_position="middle"))


def test_dataset_round_trip(tmp_path):
    corpus = generate_corpus(small_spec())
    path = tmp_path / "data.jsonl"
    save_dataset(corpus.documents, path)
    loaded = load_dataset(path)
    assert len(loaded) == len(corpus.documents)
    for a, b in zip(corpus.documents, loaded):
        assert (a.id, a.raw_text, a.labels, a.split) == (b.id, b.raw_text, b.labels, b.split)
    # byte-stable rewrite
    path2 = tmp_path / "again.jsonl"
    save_dataset(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_errors_name_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "text": "x", "labels": [], "split": "train"}\n'
                    '{"id": "b", "text": "y", "split": "train"}\n')
    with pytest.raises(DatasetFormatError, match="2.*labels"):
        load_dataset(path)

    path.write_text('{"id": "a", "text": "x", "labels": [], "split": "dev"}\n')
    with pytest.raises(DatasetFormatError, match="split"):
        load_dataset(path)

    path.write_text('not json\n')
    with pytest.raises(DatasetFormatError, match="invalid JSON"):
        load_dataset(path)


def test_load_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "dup.jsonl"
    line = '{"id": "a", "text": "x", "labels": [], "split": "train"}\n'
    path.write_text(line + line)
    with pytest.raises(DatasetFormatError, match="duplicate"):
        load_dataset(path)


def test_label_space_sorted_union(tmp_path):
    corpus = generate_corpus(small_spec())
    space = label_space(corpus.documents)
    assert space == sorted(space)
    assert set(space) <= set(corpus.label_names)


def test_paper_scale_split_sizes_accepted():
    spec = CorpusSpec(n_train=8067, n_val=1574, n_test=1730)
    spec.validate()
