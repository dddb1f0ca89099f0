"""Chunk encoder: maps token chunks to fixed-size vectors.

A small trainable transformer stands in for a full-scale pretrained
biomedical encoder (12 layers, 768 wide); the desk default is 2 layers and
64 wide, with the full-scale shape one config away.  The ENC1 file format
decouples the encoder from the decoder, so externally produced encodings
(e.g. from a real pretrained model) can drive the same decoder stack.

Pooling is the hidden state at the CLS position.  Fine-tuning attaches a
linear classification head on that vector, trains chunk -> document-labels,
and the head is discarded afterwards: only the body produces encodings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .nncore import (
    AdamState,
    Dense,
    Embedding,
    Module,
    ModuleList,
    TransformerLayer,
    adam_step,
    bce_with_logits,
    no_grad,
)
from .textprep import STRATEGIES

STRATEGY_CODES = {name: i for i, name in enumerate(STRATEGIES)}
STRATEGY_NAMES = {i: name for name, i in STRATEGY_CODES.items()}


@dataclass
class EncoderConfig:
    vocab_size: int
    max_len: int = 512
    layers: int = 2        # full-scale reference: 12
    hidden: int = 64       # full-scale reference: 768
    heads: int = 4
    label_count: int = 50

    def validate(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.max_len < 8:
            raise ValueError("max_len must be >= 8")


class ChunkEncoder(Module):
    """Token+position embeddings, N pre-norm transformer layers, CLS pooling."""

    def __init__(self, config, rng):
        super().__init__()
        config.validate()
        self.config = config
        self.tok_emb = Embedding(config.vocab_size, config.hidden, rng)
        self.pos_emb = Embedding(config.max_len, config.hidden, rng)
        self.blocks = ModuleList(
            [TransformerLayer(config.hidden, config.heads, rng) for _ in range(config.layers)]
        )
        self.head = Dense(config.hidden, config.label_count, rng)

    def hidden_states(self, ids, mask, training=False, rng=None):
        b, t = ids.shape
        positions = np.broadcast_to(np.arange(t, dtype=np.int64), (b, t))
        x = self.tok_emb(ids) + self.pos_emb(positions)
        for block in self.blocks:
            x = block(x, mask, training, rng)
        return x

    def cls_vector(self, ids, mask, training=False, rng=None):
        return self.hidden_states(ids, mask, training, rng)[:, 0, :]

    def logits(self, ids, mask, training=False, rng=None):
        return self.head(self.cls_vector(ids, mask, training, rng))


# ---------------------------------------------------------------------------
# encodings
# ---------------------------------------------------------------------------

@dataclass
class Encoding:
    doc_id: str
    strategy: str
    position_key: str
    vector: np.ndarray  # float32, matching the on-disk width

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)


class Enc1Error(ValueError):
    pass


class BadMagicError(Enc1Error):
    pass


class UnsupportedVersionError(Enc1Error):
    pass


class TruncatedPayloadError(Enc1Error):
    pass


class DuplicateEntryError(Enc1Error):
    pass


class DimensionMismatchError(Enc1Error):
    pass


class EncodingSet:
    """Encodings with a uniform dimension, unique per (doc, strategy, slot)."""

    def __init__(self, dim, source="toy"):
        self.dim = int(dim)
        self.source = source
        self.entries = []
        self._keys = set()

    def add(self, encoding):
        if len(encoding.vector) != self.dim:
            raise DimensionMismatchError(
                f"vector of length {len(encoding.vector)} in a dim={self.dim} set"
            )
        key = (encoding.doc_id, encoding.strategy, encoding.position_key)
        if key in self._keys:
            raise DuplicateEntryError(f"duplicate encoding key {key}")
        self._keys.add(key)
        self.entries.append(encoding)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_document(self):
        """doc_id -> encodings in insertion order."""
        grouped = {}
        for enc in self.entries:
            grouped.setdefault(enc.doc_id, []).append(enc)
        return grouped

    def doc_ids(self):
        return list(dict.fromkeys(enc.doc_id for enc in self.entries))


ENC1_MAGIC = b"ENC1"
ENC1_VERSION = 1


def export_encodings(encoding_set, path):
    """Write an EncodingSet in ENC1 format (little-endian throughout)."""
    if len(encoding_set) == 0:
        raise Enc1Error("refusing to export an empty encoding set")
    with open(path, "wb") as f:
        f.write(ENC1_MAGIC)
        f.write(struct.pack("<IIQ", ENC1_VERSION, encoding_set.dim, len(encoding_set)))
        for enc in encoding_set:
            doc_raw = enc.doc_id.encode("utf-8")
            key_raw = enc.position_key.encode("utf-8")
            f.write(struct.pack("<H", len(doc_raw)))
            f.write(doc_raw)
            f.write(struct.pack("<B", STRATEGY_CODES[enc.strategy]))
            f.write(struct.pack("<H", len(key_raw)))
            f.write(key_raw)
            f.write(enc.vector.astype("<f4", copy=False).tobytes())


def import_encodings(path, expect_dim=None, source="toy"):
    """Read and validate an ENC1 file; every defect raises a distinct error."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != ENC1_MAGIC:
        raise BadMagicError(f"bad magic in {path}: {blob[:4]!r}")
    if len(blob) < 20:
        raise TruncatedPayloadError(f"truncated header in {path}")
    version, dim, count = struct.unpack_from("<IIQ", blob, 4)
    if version != ENC1_VERSION:
        raise UnsupportedVersionError(f"unsupported ENC1 version {version} in {path}")
    if expect_dim is not None and dim != expect_dim:
        raise DimensionMismatchError(f"{path} declares dim {dim}, expected {expect_dim}")
    out = EncodingSet(dim, source=source)
    off = 20  # magic 4 + version 4 + dim 4 + count 8
    vec_bytes = 4 * dim
    for _ in range(count):
        try:
            (doc_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            doc_id = blob[off:off + doc_len].decode("utf-8")
            off += doc_len
            (strategy_code,) = struct.unpack_from("<B", blob, off)
            off += 1
            (key_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            position_key = blob[off:off + key_len].decode("utf-8")
            off += key_len
        except struct.error as exc:
            raise TruncatedPayloadError(f"truncated entry header in {path}") from exc
        if strategy_code not in STRATEGY_NAMES:
            raise Enc1Error(f"unknown strategy code {strategy_code} in {path}")
        if off + vec_bytes > len(blob):
            raise TruncatedPayloadError(f"truncated payload mid-vector in {path}")
        vector = np.frombuffer(blob[off:off + vec_bytes], dtype="<f4")
        off += vec_bytes
        out.add(Encoding(doc_id, STRATEGY_NAMES[strategy_code], position_key, vector))
    if off != len(blob):
        raise Enc1Error(f"{len(blob) - off} trailing bytes in {path}")
    return out


# ---------------------------------------------------------------------------
# encoding + fine-tuning
# ---------------------------------------------------------------------------

def _trim(ids, mask, true_lens):
    """Drop all-pad tail columns; masked softmax makes this bit-neutral."""
    t = max(int(max(true_lens)), 2)
    return ids[:, :t], mask[:, :t]


def encode_chunk(model, chunk, strategy, doc_id=""):
    """Encode one chunk to a fixed-size vector (eval mode, one at a time)."""
    ids = chunk.token_ids[None, :].astype(np.int64)
    mask = chunk.attention_mask[None, :].astype(np.float64)
    ids, mask = _trim(ids, mask, [chunk.true_len])
    with no_grad():
        vec = model.cls_vector(ids, mask).data[0]
    return Encoding(doc_id=doc_id, strategy=strategy, position_key=chunk.position_key,
                    vector=vec.astype(np.float32))


def encode_chunksets(model, chunksets, source="toy"):
    """Encode every chunk of every document into one EncodingSet."""
    out = EncodingSet(model.config.hidden, source=source)
    for cs in chunksets:
        for chunk in cs.chunks:
            out.add(encode_chunk(model, chunk, cs.strategy, doc_id=cs.doc_id))
    return out


@dataclass
class FineTuneConfig:
    batch_size: int = 1
    learning_rate: float = 5e-4
    epochs: int = 6
    seed: int = 0

    def validate(self):
        if self.batch_size <= 0 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("fine-tune config values must be positive")


def _chunk_examples(chunksets, labels_by_doc):
    """Flatten chunksets: every chunk is an example with its document's labels."""
    examples = []
    for cs in chunksets:
        if cs.doc_id not in labels_by_doc:
            raise ValueError(f"no label vector for document {cs.doc_id!r}")
        target = labels_by_doc[cs.doc_id]
        for chunk in cs.chunks:
            examples.append((chunk.token_ids, chunk.attention_mask, chunk.true_len, target))
    return examples


def _batch_loss(model, batch, training, rng):
    ids = np.stack([ex[0] for ex in batch]).astype(np.int64)
    mask = np.stack([ex[1] for ex in batch]).astype(np.float64)
    ids, mask = _trim(ids, mask, [ex[2] for ex in batch])
    targets = np.stack([ex[3] for ex in batch]).astype(np.float64)
    logits = model.logits(ids, mask, training=training, rng=rng)
    return bce_with_logits(logits, targets)


def validation_loss(model, chunksets, labels_by_doc, batch_size=32):
    examples = _chunk_examples(chunksets, labels_by_doc)
    if not examples:
        raise ValueError("empty validation set")
    total = 0.0
    with no_grad():
        for start in range(0, len(examples), batch_size):
            batch = examples[start:start + batch_size]
            total += _batch_loss(model, batch, training=False, rng=None).item() * len(batch)
    return total / len(examples)


def finetune_encoder(model, train_chunksets, labels_by_doc, config,
                     val_chunksets, val_labels_by_doc):
    """Train the encoder on chunk -> document-labels; returns the loss curve.

    The curve has epochs+1 points: validation loss before training, then
    after each epoch.  Example order reshuffles every epoch from the run
    seed.  The classification head trains along with the body and is simply
    not used at encoding time.
    """
    config.validate()
    examples = _chunk_examples(train_chunksets, labels_by_doc)
    if not examples:
        raise ValueError("empty training set")
    label_dim = model.config.label_count
    for _, _, _, target in examples:
        if len(target) != label_dim:
            raise ValueError(f"label vector length {len(target)} != label_count {label_dim}")

    rng = np.random.default_rng(config.seed)
    state = AdamState(model.named_parameters(), lr=config.learning_rate)
    curve = [validation_loss(model, val_chunksets, val_labels_by_doc)]
    for _ in range(config.epochs):
        order = rng.permutation(len(examples))
        for start in range(0, len(examples), config.batch_size):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            model.zero_grad()
            loss = _batch_loss(model, batch, training=True, rng=rng)
            loss.backward()
            adam_step(state)
        curve.append(validation_loss(model, val_chunksets, val_labels_by_doc))
    return curve


def multi_hot(labels, label_names):
    """Set of label names -> 0/1 vector in label_names order."""
    index = {name: i for i, name in enumerate(label_names)}
    vec = np.zeros(len(label_names))
    for name in labels:
        if name not in index:
            raise ValueError(f"label {name!r} not in label space")
        vec[index[name]] = 1.0
    return vec
