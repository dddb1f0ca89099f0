"""Synthetic corpus generation and dataset file IO.

Documents are sequences of colon-headed paragraphs filled with Zipf-sampled
filler words.  Each label owns one distinctive signal word; a document
carries a label exactly when that word was planted in it, so an oracle that
greps for signal words scores a perfect AUC and the learning task is
solvable by construction.  Where the signals land (front / back / split /
uniform) is the experimental knob the chunking studies turn.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .textprep import Document, preprocess_text, tokenize

SPLITS = ("train", "validation", "test")

SIGNAL_REGION_FRACTION = 0.15

DEFAULT_HEADERS = (
    "chief complaint",
    "history of present illness",
    "past medical history",
    "medications on admission",
    "allergies",
    "physical exam",
    "laboratory data",
    "hospital course",
    "discharge diagnosis",
    "discharge medications",
    "discharge condition",
    "followup instructions",
    "social history",
    "family history",
)


class DataGenError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class CorpusSpec:
    """Knobs for the synthetic corpus.

    Length targets are the real-data statistics (mean 2740 / median 2500 /
    max 18429 tokens) multiplied by ``scale``; ``min_len`` stays at the
    real-data floor of 78 so even the shortest documents can hold a few
    signal words.  Split sizes default to one tenth of the reference
    8067/1574/1730 split.
    """

    n_train: int = 807
    n_val: int = 157
    n_test: int = 173
    label_count: int = 50
    scale: float = 0.1
    base_mean_len: float = 2740.0
    base_median_len: float = 2500.0
    base_max_len: float = 18429.0
    min_len: int = 78
    mean_labels_per_doc: float = 13.15
    signal_position: str = "front"  # front | back | split | uniform
    signal_strength: int = 2        # planted copies per (label, document)
    filler_vocab_size: int = 800
    zipf_exponent: float = 1.1
    headers: tuple = DEFAULT_HEADERS
    words_per_paragraph: int = 60
    seed: int = 0

    @property
    def mean_len(self):
        return self.base_mean_len * self.scale

    @property
    def median_len(self):
        return self.base_median_len * self.scale

    @property
    def max_len(self):
        return self.base_max_len * self.scale

    def validate(self):
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise DataGenError("split sizes must be positive")
        if self.signal_position not in ("front", "back", "split", "uniform"):
            raise DataGenError(f"unknown signal_position {self.signal_position!r}")
        if not self.min_len <= self.mean_len <= self.max_len:
            raise DataGenError(
                f"need min_len <= mean_len <= max_len, got "
                f"{self.min_len} / {self.mean_len:.0f} / {self.max_len:.0f}"
            )
        if self.signal_strength < 1:
            raise DataGenError("signal_strength must be >= 1")
        region = int(SIGNAL_REGION_FRACTION * self.min_len)
        if region < self.signal_strength:
            raise DataGenError(
                f"infeasible spec: the {SIGNAL_REGION_FRACTION:.0%} signal region of a "
                f"min_len={self.min_len} document holds {region} tokens, fewer than "
                f"signal_strength={self.signal_strength}"
            )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        unknown = set(obj) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise DataGenError(f"unknown corpus spec fields: {sorted(unknown)}")
        if "headers" in obj:
            obj["headers"] = tuple(obj["headers"])
        return cls(**obj)


@dataclass
class GeneratedCorpus:
    documents: list
    signal_map: dict = field(default_factory=dict)  # label -> signal word
    label_names: list = field(default_factory=list)


def label_name(i):
    return f"c{i:02d}"


def signal_word(i):
    """Deterministic letters-only word for label i (digits would be stripped)."""
    letters = string.ascii_lowercase
    return "sig" + letters[i // 26] + letters[i % 26]


def _filler_words(count, rng):
    """Pseudo-words from consonant-vowel syllables; none collide with signals."""
    consonants = "bcdfghjklmnpqrstvwz"
    vowels = "aeiou"
    words = set()
    out = []
    while len(out) < count:
        n_syl = int(rng.integers(2, 5))
        w = "".join(
            consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))]
            for _ in range(n_syl)
        )
        if w.startswith("sig") or w in words:
            continue
        words.add(w)
        out.append(w)
    return out


def _draw_length(spec, rng):
    sigma2 = max(2.0 * np.log(spec.mean_len / spec.median_len), 1e-4)
    length = rng.lognormal(mean=np.log(spec.median_len), sigma=np.sqrt(sigma2))
    return int(np.clip(round(length), spec.min_len, spec.max_len))


def _paragraph_sizes(total, parts, rng):
    weights = rng.random(parts) + 0.2
    sizes = np.maximum(1, np.floor(total * weights / weights.sum()).astype(int))
    sizes[-1] += total - sizes.sum()
    if sizes[-1] < 1:  # rebalance if rounding starved the last paragraph
        sizes = np.maximum(1, sizes)
        sizes[np.argmax(sizes)] -= sizes.sum() - total
    return sizes.tolist()


def _free_slots(stream, lo, hi):
    """Region positions holding filler words (headers are untouchable)."""
    return [k for k in range(lo, hi) if stream[k] is not None]


def generate_corpus(spec):
    """Deterministically generate documents, labels and planted signals."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    filler = _filler_words(spec.filler_vocab_size, rng)
    filler_p = 1.0 / np.arange(1, len(filler) + 1) ** spec.zipf_exponent
    filler_p /= filler_p.sum()
    header_weights = 1.0 / np.arange(1, len(spec.headers) + 1) ** 0.6
    header_weights /= header_weights.sum()

    labels_all = [label_name(i) for i in range(spec.label_count)]
    signal_map = {label_name(i): signal_word(i) for i in range(spec.label_count)}

    documents = []
    plan = [("train", spec.n_train), ("validation", spec.n_val), ("test", spec.n_test)]
    for split_name, count in plan:
        for i in range(count):
            doc_id = f"{split_name}_{i:05d}"
            documents.append(_generate_document(doc_id, split_name, spec, rng,
                                                filler, filler_p, header_weights))
    return GeneratedCorpus(documents, signal_map, labels_all)


def _generate_document(doc_id, split_name, spec, rng, filler, filler_p, header_weights):
    length = _draw_length(spec, rng)
    n_paras = max(1, min(round(length / spec.words_per_paragraph), len(spec.headers)))
    headers = [
        spec.headers[j]
        for j in rng.choice(len(spec.headers), size=n_paras, replace=False, p=header_weights)
    ]
    header_word_count = sum(len(h.split()) for h in headers)
    body_total = max(n_paras, length - header_word_count)
    sizes = _paragraph_sizes(body_total, n_paras, rng)

    # flat word stream with None placeholders at header positions
    stream = []
    para_starts = []
    for header, size in zip(headers, sizes):
        para_starts.append(len(stream))
        stream.extend([None] * len(header.split()))
        body = rng.choice(len(filler), size=size, p=filler_p)
        stream.extend(filler[w] for w in body)
    total_words = len(stream)

    # pick signal regions, then cap the label draw by region capacity
    width = max(1, int(SIGNAL_REGION_FRACTION * total_words))
    if spec.signal_position == "front":
        regions = [(0, width)]
    elif spec.signal_position == "back":
        regions = [(total_words - width, total_words)]
    elif spec.signal_position == "uniform":
        start = int(rng.integers(0, max(total_words - width, 0) + 1))
        regions = [(start, start + width)]
    else:  # split: lower label half signals front, upper half signals back
        regions = [(0, width), (total_words - width, total_words)]

    slot_pools = [_free_slots(stream, lo, hi) for lo, hi in regions]
    capacities = [len(slots) // spec.signal_strength for slots in slot_pools]
    if max(capacities) < 1:
        raise DataGenError(
            f"infeasible spec: document {doc_id} has no room for even one label's "
            f"{spec.signal_strength} signal tokens in its region"
        )

    wanted = int(np.clip(rng.poisson(spec.mean_labels_per_doc), 1, spec.label_count))
    if spec.signal_position == "split":
        half = spec.label_count // 2
        n_front = min(wanted - wanted // 2, capacities[0], half)
        n_back = min(wanted // 2, capacities[1], spec.label_count - half)
        n_back = max(n_back, 1 - n_front)  # keep at least one label overall
        front_ids = rng.choice(half, size=n_front, replace=False)
        back_ids = half + rng.choice(spec.label_count - half, size=n_back, replace=False)
        placement = [(int(i), 0) for i in front_ids] + [(int(i), 1) for i in back_ids]
    else:
        n_labels = min(wanted, capacities[0])
        ids = rng.choice(spec.label_count, size=n_labels, replace=False)
        placement = [(int(i), 0) for i in ids]

    label_ids = sorted(i for i, _ in placement)
    for lid, region_idx in placement:
        slots = slot_pools[region_idx]
        picks = rng.choice(len(slots), size=spec.signal_strength, replace=False)
        for k in sorted(picks, reverse=True):
            stream[slots[k]] = signal_word(lid)
            slots.pop(k)

    # rebuild paragraph text around the untouched header placeholders
    lines = []
    for p, (header, size) in enumerate(zip(headers, sizes)):
        start = para_starts[p] + len(header.split())
        body_words = stream[start:start + size]
        lines.append(f"{header}:")
        lines.append(" ".join(body_words))
    text = "\n".join(lines)
    return Document(
        id=doc_id,
        raw_text=text,
        labels={label_name(lid) for lid in label_ids},
        split=split_name,
    )


# ---------------------------------------------------------------------------
# dataset files (JSONL: one object per line, fields id/text/labels/split)
# ---------------------------------------------------------------------------

def save_dataset(documents, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc in documents:
            f.write(json.dumps(
                {"id": doc.id, "text": doc.raw_text,
                 "labels": sorted(doc.labels), "split": doc.split},
                ensure_ascii=False,
            ))
            f.write("\n")


def load_dataset(path):
    documents = []
    seen_ids = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for key in ("id", "text", "labels", "split"):
                if key not in obj:
                    raise DatasetFormatError(f"{path}:{lineno}: missing field {key!r}")
            if obj["split"] not in SPLITS:
                raise DatasetFormatError(
                    f"{path}:{lineno}: unknown split {obj['split']!r}, expected one of {SPLITS}"
                )
            if not isinstance(obj["labels"], list):
                raise DatasetFormatError(f"{path}:{lineno}: labels must be a list")
            if not obj["text"]:
                raise DatasetFormatError(f"{path}:{lineno}: empty text")
            if obj["id"] in seen_ids:
                raise DatasetFormatError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
            seen_ids.add(obj["id"])
            documents.append(Document(
                id=obj["id"], raw_text=obj["text"],
                labels=set(obj["labels"]), split=obj["split"],
            ))
    if not documents:
        raise DatasetFormatError(f"{path}: no documents")
    return documents


def label_space(documents):
    """Sorted list of every label present; the model-facing label order."""
    names = set()
    for doc in documents:
        names.update(doc.labels)
    return sorted(names)


def corpus_stats(documents, vocab):
    """Token-length and label statistics, with the reference values alongside."""
    lengths = []
    label_freq = Counter()
    for doc in documents:
        seq = tokenize(vocab, preprocess_text(doc.raw_text), doc_id=doc.id)
        lengths.append(len(seq))
        label_freq.update(doc.labels)
    lengths = np.asarray(lengths)
    return {
        "documents": len(documents),
        "token_length": {
            "min": int(lengths.min()),
            "max": int(lengths.max()),
            "mean": float(lengths.mean()),
            "median": float(np.median(lengths)),
        },
        "labels_per_doc_mean": float(np.mean([len(d.labels) for d in documents])),
        "label_frequency": dict(sorted(label_freq.items())),
        "reference_full_scale": {
            "token_length": {"min": 78, "max": 18429, "mean": 2740, "median": 2500},
            "labels_per_doc_mean": 13.15,
            "split_sizes": {"train": 8067, "validation": 1574, "test": 1730},
        },
    }
