"""Text normalization, subword tokenization and chunk splitting.

The pipeline is: ``preprocess_text`` -> ``tokenize`` (with a corpus-trained
subword vocabulary) -> ``split`` into fixed-length chunks under one of five
strategies (front, back, mixed, all, paragraph).

Everything here is a pure function of its inputs; ``Vocabulary`` and
``ParagraphIndex`` are immutable once built.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

STRATEGIES = ("front", "back", "mixed", "all", "paragraph")

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
CLS_ID, SEP_ID, PAD_ID, UNK_ID = 0, 1, 2, 3
_SPECIALS = (CLS, SEP, PAD, UNK)

CONTINUATION = "##"


class TextPrepError(ValueError):
    pass


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def preprocess_text(raw):
    """Lower-case, strip decimal digits, collapse whitespace runs, trim.

    Whitespace runs that contain a line break collapse to a single newline
    (paragraph headers are detected per line downstream); all other runs
    collapse to a single space.  Infrequent words are deliberately kept.
    Idempotent.
    """
    if not raw:
        raise TextPrepError("empty document")
    text = re.sub(r"\d", "", raw.lower())
    text = re.sub(r"\s+", lambda m: "\n" if "\n" in m.group(0) else " ", text)
    text = text.strip()
    if not text:
        raise TextPrepError("empty document")
    return text


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    """Ordered subword pieces; specials sit at fixed indices 0-3.

    Word-internal pieces carry the ``##`` continuation prefix and are
    distinct vocabulary entries from their word-initial forms.
    """

    pieces: tuple

    def __post_init__(self):
        if self.pieces[:4] != _SPECIALS:
            raise TextPrepError(f"special tokens must occupy indices 0-3, got {self.pieces[:4]}")
        if len(set(self.pieces)) != len(self.pieces):
            raise TextPrepError("vocabulary pieces must be unique")
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(self.pieces)})

    def __len__(self):
        return len(self.pieces)

    def id_of(self, piece):
        return self._index.get(piece)

    def piece_of(self, idx):
        return self.pieces[idx]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for piece in self.pieces:
                f.write(piece + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            pieces = tuple(line.rstrip("\n") for line in f)
        return cls(pieces)


def _word_to_units(word):
    """Initial character plain, the rest with the continuation prefix."""
    return [word[0]] + [CONTINUATION + c for c in word[1:]]


def _merge_units(a, b):
    return a + b[len(CONTINUATION):]


def build_vocabulary(corpus, target_size):
    """Train a subword vocabulary by greedy highest-frequency pair merging.

    Starts from the specials plus every single character seen (word-initial
    and continuation forms counted separately) and merges the most frequent
    adjacent pair until ``target_size`` pieces exist or no pairs remain.
    Ties break toward the lexicographically smaller pair, so the result is
    fully determined by the corpus.
    """
    if not corpus:
        raise TextPrepError("empty corpus")
    word_freq = Counter()
    for text in corpus:
        word_freq.update(text.split())
    if not word_freq:
        raise TextPrepError("empty corpus")

    unit_freq = Counter()
    for word, freq in word_freq.items():
        for unit in _word_to_units(word):
            unit_freq[unit] += freq
    base = sorted(unit_freq, key=lambda u: (-unit_freq[u], u))
    if target_size < len(_SPECIALS) + len(base):
        raise TextPrepError(
            f"target_size {target_size} below character inventory "
            f"{len(base)} + {len(_SPECIALS)} specials"
        )

    pieces = list(_SPECIALS) + base
    known = set(pieces)
    splits = {word: _word_to_units(word) for word in word_freq}

    while len(pieces) < target_size:
        pair_freq = Counter()
        for word, units in splits.items():
            freq = word_freq[word]
            for a, b in zip(units, units[1:]):
                pair_freq[(a, b)] += freq
        if not pair_freq:
            break
        best = min(pair_freq, key=lambda pair: (-pair_freq[pair], pair))
        merged = _merge_units(*best)
        if merged not in known:
            pieces.append(merged)
            known.add(merged)
        for word, units in splits.items():
            out = []
            i = 0
            while i < len(units):
                if i + 1 < len(units) and (units[i], units[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(units[i])
                    i += 1
            splits[word] = out
    return Vocabulary(tuple(pieces))


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

@dataclass
class TokenSequence:
    doc_id: str
    token_ids: np.ndarray

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int32)

    def __len__(self):
        return len(self.token_ids)


def _match_word(vocab, word):
    """Greedy longest-match-first segmentation of one whitespace word."""
    ids = []
    pos = 0
    while pos < len(word):
        prefix = CONTINUATION if pos > 0 else ""
        end = len(word)
        piece_id = None
        while end > pos:
            piece_id = vocab.id_of(prefix + word[pos:end])
            if piece_id is not None:
                break
            end -= 1
        if piece_id is None:
            ids.append(UNK_ID)
            pos += 1
        else:
            ids.append(piece_id)
            pos = end
    return ids


def tokenize(vocab, doc_text, doc_id=""):
    """Segment preprocessed text into subword token ids (no CLS/SEP yet)."""
    ids = []
    for word in doc_text.split():
        ids.extend(_match_word(vocab, word))
    if not ids:
        raise TextPrepError("document tokenized to nothing")
    return TokenSequence(doc_id, ids)


def detokenize(vocab, token_ids):
    """Rebuild text from token ids; continuation pieces join without a space.

    Inverse of ``tokenize`` up to whitespace kind and UNK substitutions.
    """
    words = []
    for idx in token_ids:
        piece = vocab.piece_of(int(idx))
        if piece in (CLS, SEP, PAD):
            continue
        if piece.startswith(CONTINUATION) and words:
            words[-1] += piece[len(CONTINUATION):]
        else:
            words.append(piece)
    return " ".join(words)


# ---------------------------------------------------------------------------
# paragraphs
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(r"^([^:\s]+(?: [^:\s]+){0,5}):")


def detect_paragraphs(doc_text):
    """Find colon-terminated section headers of 1-6 words at line starts.

    Returns [(name, (char_start, char_end))] where the span covers the
    header itself up to the next header (or end of text).  Text before the
    first header belongs to no paragraph.
    """
    headers = []
    offset = 0
    for line in doc_text.split("\n"):
        m = _HEADER_RE.match(line)
        if m:
            headers.append((m.group(1), offset))
        offset += len(line) + 1
    spans = []
    for i, (name, start) in enumerate(headers):
        end = headers[i + 1][1] - 1 if i + 1 < len(headers) else len(doc_text)
        spans.append((name, (start, end)))
    return spans


@dataclass(frozen=True)
class ParagraphIndex:
    """The K most frequent paragraph names with their document frequencies."""

    names: tuple  # ((name, doc_frequency), ...) sorted by -freq then name

    def __post_init__(self):
        object.__setattr__(self, "_set", frozenset(n for n, _ in self.names))

    def __contains__(self, name):
        return name in self._set

    def __len__(self):
        return len(self.names)


def build_paragraph_index(train_docs, top_k=200):
    """Rank paragraph names by how many training documents contain them."""
    if top_k < 1:
        raise TextPrepError("top_k must be >= 1")
    doc_freq = Counter()
    for doc in train_docs:
        names = {name for name, _ in detect_paragraphs(preprocess_text(doc.raw_text))}
        doc_freq.update(names)
    if not doc_freq:
        raise TextPrepError("no paragraphs found in training corpus")
    ranked = sorted(doc_freq.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return ParagraphIndex(tuple(ranked))


def paragraph_token_spans(vocab, doc_text):
    """Token-index spans [(name, tok_start, tok_end)] for each paragraph.

    Tokenization is word-local and paragraph boundaries fall on word
    boundaries, so per-segment token counts add up to the whole-document
    tokenization.
    """
    char_spans = detect_paragraphs(doc_text)
    spans = []
    cursor = 0
    tok_offset = 0

    def count_tokens(segment):
        total = 0
        for word in segment.split():
            total += len(_match_word(vocab, word))
        return total

    for name, (start, end) in char_spans:
        if start > cursor:
            tok_offset += count_tokens(doc_text[cursor:start])
        n = count_tokens(doc_text[start:end])
        spans.append((name, tok_offset, tok_offset + n))
        tok_offset += n
        cursor = end
    return spans


# ---------------------------------------------------------------------------
# chunking
# ---------------------------------------------------------------------------

@dataclass
class Chunk:
    """One model-ready slice: [CLS] content [SEP] [PAD]... plus its mask."""

    token_ids: np.ndarray
    attention_mask: np.ndarray
    position_key: str
    true_len: int

    @property
    def content_ids(self):
        return self.token_ids[1:self.true_len - 1]


@dataclass
class ChunkSet:
    doc_id: str
    strategy: str
    chunks: list


@dataclass
class Document:
    id: str
    raw_text: str
    labels: set
    split: str


def _make_chunk(content_ids, max_len, position_key):
    content_ids = np.asarray(content_ids, dtype=np.int32)
    true_len = len(content_ids) + 2
    ids = np.full(max_len, PAD_ID, dtype=np.int32)
    ids[0] = CLS_ID
    ids[1:true_len - 1] = content_ids
    ids[true_len - 1] = SEP_ID
    mask = np.zeros(max_len, dtype=np.int32)
    mask[:true_len] = 1
    return Chunk(ids, mask, position_key, true_len)


def split(seq, strategy, max_len, paragraph_index=None, paragraph_spans=None):
    """Slice a token sequence into chunks under one of the five strategies.

    ``max_len`` counts the CLS and SEP slots, leaving max_len - 2 content
    positions per chunk.  The paragraph strategy needs the corpus
    ``paragraph_index`` plus this document's ``paragraph_spans``; only the
    first occurrence of an indexed name yields a chunk.
    """
    if strategy not in STRATEGIES:
        raise TextPrepError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if max_len < 8:
        raise TextPrepError(f"max_len must be >= 8, got {max_len}")
    ids = seq.token_ids
    length = len(ids)
    content = max_len - 2

    if strategy == "front":
        chunks = [_make_chunk(ids[:content], max_len, "0")]
    elif strategy == "back":
        chunks = [_make_chunk(ids[-content:], max_len, "0")]
    elif strategy == "mixed":
        if length <= content:
            body = ids
        else:
            front_half = content - content // 2
            body = np.concatenate([ids[:front_half], ids[length - content // 2:]])
        chunks = [_make_chunk(body, max_len, "0")]
    elif strategy == "all":
        chunks = [
            _make_chunk(ids[i:i + content], max_len, str(k))
            for k, i in enumerate(range(0, length, content))
        ]
    else:  # paragraph
        if paragraph_index is None or paragraph_spans is None:
            raise TextPrepError("paragraph strategy requires paragraph_index and paragraph_spans")
        chunks = []
        seen = set()
        for name, tok_start, tok_end in paragraph_spans:
            if name in paragraph_index and name not in seen:
                seen.add(name)
                chunks.append(_make_chunk(ids[tok_start:tok_start + min(tok_end - tok_start, content)],
                                          max_len, name))
    return ChunkSet(seq.doc_id, strategy, chunks)
