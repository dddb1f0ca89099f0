"""Decoders: map one or more chunk encodings to multi-label logits.

Four families, trained separately from the encoder on precomputed vectors:

* linear        - one affine layer on the concatenated encodings
* flat_mlp      - concat, then a stack of non-linear layers (768/512 wide at
                  base size), then a final affine to the labels
* parallel_mlp  - one affine branch per input slot producing width/n each,
                  concatenated, then the same non-linear stack as flat
* transformer   - treats each encoding as a token; fixed slot counts
                  concatenate the output tokens, variable inputs (all /
                  paragraph) pool by masked mean before the flat-style head

A non-linear layer is dense + layer norm + PReLU + dropout(p).  Sizes scale
the stack: large/xlarge widen the MLP hiddens 1.5x/2x and add one/two
layers; the transformer decoder grows from 1 to 2 to 3 layers with doubled
feed-forward width at xlarge.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from .nncore import (
    AdamState,
    Dense,
    Dropout,
    LayerNorm,
    Module,
    ModuleList,
    PReLU,
    Tensor,
    TransformerLayer,
    adam_step,
    bce_with_logits,
    concat,
    load_checkpoint,
    lr_schedule,
    no_grad,
    save_checkpoint,
    sigmoid_array,
)

ARCHITECTURES = ("linear", "flat_mlp", "parallel_mlp", "transformer")
SIZES = ("base", "large", "xlarge")
VARIABLE = "variable"

MLP_HIDDENS = {
    "base": (768, 512),
    "large": (1152, 768, 768),
    "xlarge": (1536, 1024, 1024, 1024),
}
TRANSFORMER_LAYERS = {"base": 1, "large": 2, "xlarge": 3}
TRANSFORMER_FFN_MULT = {"base": 4, "large": 4, "xlarge": 8}
TRANSFORMER_HEADS = 8


class DecoderError(ValueError):
    pass


@dataclass
class DecoderConfig:
    architecture: str
    size: str = "base"
    input_slots: object = VARIABLE  # list of slot names, or "variable"
    input_dim: int = 64
    label_count: int = 50
    dropout: float = 0.1

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise DecoderError(f"unknown architecture {self.architecture!r}")
        if self.size not in SIZES:
            raise DecoderError(f"unknown size {self.size!r}")
        if self.is_variable and self.architecture != "transformer":
            raise DecoderError(
                f"{self.architecture} needs a fixed slot list; only the transformer "
                f"decoder accepts variable input"
            )
        if not self.is_variable and len(self.input_slots) < 1:
            raise DecoderError("fixed-slot decoders need at least one slot")

    @property
    def is_variable(self):
        return self.input_slots == VARIABLE

    @property
    def n_slots(self):
        return None if self.is_variable else len(self.input_slots)

    def to_json(self):
        return json.dumps({
            "architecture": self.architecture,
            "size": self.size,
            "input_slots": self.input_slots if self.is_variable else list(self.input_slots),
            "input_dim": self.input_dim,
            "label_count": self.label_count,
            "dropout": self.dropout,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        if obj["input_slots"] != VARIABLE:
            obj["input_slots"] = list(obj["input_slots"])
        return cls(**obj)


@dataclass
class DecoderInput:
    """Per-document decoder input: one vector per slot plus a presence mask."""

    doc_id: str
    vectors: np.ndarray   # [k, d] float64
    presence: np.ndarray  # [k] 1.0 where the slot is filled

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.presence = np.asarray(self.presence, dtype=np.float64)


def assemble_fixed(encoding_sets, slot_names, doc_ids):
    """Align several EncodingSets into fixed-slot DecoderInputs.

    ``slot_names`` are "strategy:position_key" strings in slot order; a
    document missing a slot gets a zero vector with presence 0.
    """
    dim = encoding_sets[0].dim
    table = {}
    for enc_set in encoding_sets:
        if enc_set.dim != dim:
            raise DecoderError(f"encoding dims disagree: {enc_set.dim} vs {dim}")
        for enc in enc_set:
            table[(enc.doc_id, f"{enc.strategy}:{enc.position_key}")] = enc.vector
    inputs = []
    for doc_id in doc_ids:
        vectors = np.zeros((len(slot_names), dim))
        presence = np.zeros(len(slot_names))
        for i, slot in enumerate(slot_names):
            vec = table.get((doc_id, slot))
            if vec is not None:
                vectors[i] = vec
                presence[i] = 1.0
        if presence.sum() == 0:
            raise DecoderError(f"document {doc_id!r} has no encodings for slots {slot_names}")
        inputs.append(DecoderInput(doc_id, vectors, presence))
    return inputs


def assemble_variable(encoding_set, doc_ids):
    """Variable-count DecoderInputs (one vector per chunk, document order)."""
    grouped = encoding_set.by_document()
    inputs = []
    for doc_id in doc_ids:
        encs = grouped.get(doc_id)
        if encs:
            vectors = np.stack([e.vector.astype(np.float64) for e in encs])
            presence = np.ones(len(encs))
        else:
            # a document with no recognized chunks still gets a prediction
            vectors = np.zeros((1, encoding_set.dim))
            presence = np.zeros(1)
        inputs.append(DecoderInput(doc_id, vectors, presence))
    return inputs


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------

class NonLinearLayer(Module):
    def __init__(self, in_dim, out_dim, p_drop, rng):
        super().__init__()
        self.dense = Dense(in_dim, out_dim, rng)
        self.norm = LayerNorm(out_dim)
        self.act = PReLU(out_dim)
        self.drop = Dropout(p_drop)

    def __call__(self, x, training=False, rng=None):
        return self.drop(self.act(self.norm(self.dense(x))), training, rng)


class LinearDecoder(Module):
    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        self.out = Dense(config.n_slots * config.input_dim, config.label_count, rng)

    def __call__(self, x, presence, training=False, rng=None):
        b = x.shape[0]
        return self.out(x.reshape(b, -1))


class FlatMLPDecoder(Module):
    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        hiddens = MLP_HIDDENS[config.size]
        dims = [config.n_slots * config.input_dim, *hiddens]
        self.stack = ModuleList([
            NonLinearLayer(a, b, config.dropout, rng) for a, b in zip(dims, dims[1:])
        ])
        self.out = Dense(hiddens[-1], config.label_count, rng)

    def __call__(self, x, presence, training=False, rng=None):
        h = x.reshape(x.shape[0], -1)
        for layer in self.stack:
            h = layer(h, training, rng)
        return self.out(h)


class ParallelMLPDecoder(Module):
    """One affine branch per slot, concatenated, then the flat-style stack."""

    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        hiddens = MLP_HIDDENS[config.size]
        n = config.n_slots
        widths = [hiddens[0] // n] * n
        widths[-1] += hiddens[0] - sum(widths)  # remainder goes to the last branch
        self.branch_widths = widths
        self.branches = ModuleList([Dense(config.input_dim, w, rng) for w in widths])
        dims = [hiddens[0], *hiddens]
        self.stack = ModuleList([
            NonLinearLayer(a, b, config.dropout, rng) for a, b in zip(dims, dims[1:])
        ])
        self.out = Dense(hiddens[-1], config.label_count, rng)

    def __call__(self, x, presence, training=False, rng=None):
        parts = [branch(x[:, i, :]) for i, branch in enumerate(self.branches)]
        h = concat(parts, axis=1)
        for layer in self.stack:
            h = layer(h, training, rng)
        return self.out(h)


class TransformerDecoder(Module):
    """Encodings as tokens; no token position encoding (slot identity lives
    in the content, and variable inputs have no stable positions)."""

    def __init__(self, config, rng):
        super().__init__()
        self.config = config
        if config.input_dim % TRANSFORMER_HEADS != 0:
            raise DecoderError(
                f"input_dim {config.input_dim} not divisible by {TRANSFORMER_HEADS} heads"
            )
        self.layers = ModuleList([
            TransformerLayer(config.input_dim, TRANSFORMER_HEADS, rng,
                             p_drop=config.dropout,
                             ffn_mult=TRANSFORMER_FFN_MULT[config.size])
            for _ in range(TRANSFORMER_LAYERS[config.size])
        ])
        hiddens = MLP_HIDDENS[config.size]
        head_in = (config.input_dim if config.is_variable
                   else config.n_slots * config.input_dim)
        dims = [head_in, *hiddens]
        self.stack = ModuleList([
            NonLinearLayer(a, b, config.dropout, rng) for a, b in zip(dims, dims[1:])
        ])
        self.out = Dense(hiddens[-1], config.label_count, rng)

    def pooled(self, x, presence, training=False, rng=None):
        """Token mixing plus aggregation: concat (fixed) or masked mean."""
        h = x
        for layer in self.layers:
            h = layer(h, presence, training, rng)
        if self.config.is_variable:
            mask = presence[:, :, None]
            counts = np.maximum(presence.sum(axis=1, keepdims=True), 1.0)
            return (h * mask).sum(axis=1) * (1.0 / counts)
        return h.reshape(h.shape[0], -1)

    def __call__(self, x, presence, training=False, rng=None):
        h = self.pooled(x, presence, training, rng)
        for layer in self.stack:
            h = layer(h, training, rng)
        return self.out(h)


_ARCH_CLASSES = {
    "linear": LinearDecoder,
    "flat_mlp": FlatMLPDecoder,
    "parallel_mlp": ParallelMLPDecoder,
    "transformer": TransformerDecoder,
}


def build_decoder(config, rng):
    config.validate()
    return _ARCH_CLASSES[config.architecture](config, rng)


# ---------------------------------------------------------------------------
# forward / predict
# ---------------------------------------------------------------------------

def _batch_arrays(inputs, config):
    """Stack DecoderInputs; variable inputs pad to the widest in the batch."""
    if config.is_variable:
        kmax = max(inp.vectors.shape[0] for inp in inputs)
        x = np.zeros((len(inputs), kmax, config.input_dim))
        p = np.zeros((len(inputs), kmax))
        for i, inp in enumerate(inputs):
            k = inp.vectors.shape[0]
            x[i, :k] = inp.vectors
            p[i, :k] = inp.presence
        return x, p
    n = config.n_slots
    for inp in inputs:
        if inp.vectors.shape[0] != n:
            raise DecoderError(
                f"document {inp.doc_id!r} supplies {inp.vectors.shape[0]} slots, "
                f"decoder expects {n}"
            )
    x = np.stack([inp.vectors for inp in inputs])
    p = np.stack([inp.presence for inp in inputs])
    return x, p


def decoder_forward(model, inputs, training=False, rng=None):
    """Raw logits [n_docs, label_count] for a list of DecoderInputs."""
    x, p = _batch_arrays(inputs, model.config)
    return model(Tensor(x), p, training=training, rng=rng)


def predict(model, inputs):
    """Sigmoid probabilities, dropout off."""
    with no_grad():
        logits = decoder_forward(model, inputs, training=False)
    return sigmoid_array(logits.data)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 32
    base_lr: float = 1e-4
    decay_epochs: int = 30
    floor_fraction: float = 0.1
    weight_decay: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 1e-5
    seed: int = 0

    def validate(self):
        if min(self.batch_size, self.decay_epochs, self.max_epochs, self.patience) <= 0:
            raise DecoderError("train config counts must be positive")
        if self.base_lr <= 0:
            raise DecoderError("base_lr must be positive")


def _epoch_loss(model, inputs, labels, config, batch_size):
    total = 0.0
    with no_grad():
        for start in range(0, len(inputs), batch_size):
            batch = inputs[start:start + batch_size]
            logits = decoder_forward(model, batch, training=False)
            total += bce_with_logits(logits, labels[start:start + batch_size]).item() * len(batch)
    return total / len(inputs)


def train_decoder(model, train_inputs, train_labels, val_inputs, val_labels, config):
    """Adam + linear lr decay + early stopping on validation loss.

    Stops once the validation loss has failed to improve by more than
    ``min_delta`` for ``patience`` consecutive epochs, then restores the
    best-validation checkpoint.  Returns the training history.
    """
    config.validate()
    train_labels = np.asarray(train_labels, dtype=np.float64)
    val_labels = np.asarray(val_labels, dtype=np.float64)
    if len(train_inputs) == 0 or len(val_inputs) == 0:
        raise DecoderError("empty training or validation split")
    if train_labels.shape != (len(train_inputs), model.config.label_count):
        raise DecoderError(
            f"train labels shape {train_labels.shape} != "
            f"({len(train_inputs)}, {model.config.label_count})"
        )

    rng = np.random.default_rng(config.seed)
    state = AdamState(model.named_parameters(), lr=config.base_lr,
                      weight_decay=config.weight_decay)
    history = []
    best_val = None
    best_state = None
    bad_epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        lr_now = lr_schedule(config.base_lr, epoch - 1, config.decay_epochs,
                             config.floor_fraction)
        order = rng.permutation(len(train_inputs))
        train_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [train_inputs[i] for i in idx]
            model.zero_grad()
            loss = bce_with_logits(
                decoder_forward(model, batch, training=True, rng=rng),
                train_labels[idx],
            )
            loss.backward()
            adam_step(state, lr_now)
            train_loss += loss.item() * len(batch)
        train_loss /= len(train_inputs)
        val_loss = _epoch_loss(model, val_inputs, val_labels, config, config.batch_size)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": lr_now})
        if best_val is None or val_loss < best_val - config.min_delta:
            best_val = val_loss
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    model.load_state_dict(best_state)
    return history


# ---------------------------------------------------------------------------
# checkpoints (NNC1 weights + JSON config sidecar)
# ---------------------------------------------------------------------------

def save_decoder(model, path):
    save_checkpoint(path, model.state_dict())
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        f.write(model.config.to_json())
        f.write("\n")


def load_decoder(path):
    with open(str(path) + ".json", encoding="utf-8") as f:
        config = DecoderConfig.from_json(f.read())
    model = build_decoder(config, np.random.default_rng(0))
    model.load_state_dict(load_checkpoint(path))
    return model
