"""Command-line pipeline: generate, prepare, train, encode, decode, evaluate.

Stages communicate only through files (JSONL datasets, vocab text files,
chunk JSONL, ENC1 encodings, NNC1 checkpoints, metrics JSON), so any stage
can be rerun or swapped out.  ``matrix`` drives the whole experiment sweep
from a plan file with content-hash caching and a run manifest.

Exit codes: 0 success, 1 usage, 2 data error, 3 training failure.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import sys
from dataclasses import asdict

import click
import numpy as np

from . import datagen, decoder, encoder, metrics, textprep
from .nncore import load_checkpoint, save_checkpoint

click.UsageError.exit_code = 1

EXIT_DATA = 2
EXIT_TRAIN = 3

DATA_ERRORS = (
    datagen.DataGenError,
    datagen.DatasetFormatError,
    textprep.TextPrepError,
    encoder.Enc1Error,
    decoder.DecoderError,
    metrics.MetricsError,
    FileNotFoundError,
)


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------

def _load_dataset(path):
    docs = datagen.load_dataset(path)
    by_split = {s: [d.id for d in docs if d.split == s] for s in datagen.SPLITS}
    return docs, by_split, datagen.label_space(docs)


def _labels_for(docs, doc_ids, label_names):
    """Multi-hot label vectors for the given documents only (split hygiene)."""
    wanted = set(doc_ids)
    return {d.id: encoder.multi_hot(d.labels, label_names)
            for d in docs if d.id in wanted}


def _write_chunks(path, meta, chunksets):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for cs in chunksets:
            for chunk in cs.chunks:
                f.write(json.dumps({
                    "doc_id": cs.doc_id,
                    "position_key": chunk.position_key,
                    "true_len": int(chunk.true_len),
                    "token_ids": chunk.token_ids[:chunk.true_len].tolist(),
                }, sort_keys=True) + "\n")


def _read_chunks(path):
    """Returns (meta, {doc_id: ChunkSet}) rebuilding pads from true_len."""
    chunksets = {}
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        meta = header["meta"]
        max_len = meta["max_len"]
        strategy = meta["strategy"]
        for line in f:
            obj = json.loads(line)
            ids = np.full(max_len, textprep.PAD_ID, dtype=np.int32)
            ids[:obj["true_len"]] = obj["token_ids"]
            mask = np.zeros(max_len, dtype=np.int32)
            mask[:obj["true_len"]] = 1
            chunk = textprep.Chunk(ids, mask, obj["position_key"], obj["true_len"])
            cs = chunksets.setdefault(
                obj["doc_id"], textprep.ChunkSet(obj["doc_id"], strategy, []))
            cs.chunks.append(chunk)
    return meta, chunksets


def _chunk_documents(docs, vocab, strategy, max_len, paragraph_index=None):
    chunksets = []
    for doc in docs:
        text = textprep.preprocess_text(doc.raw_text)
        seq = textprep.tokenize(vocab, text, doc_id=doc.id)
        spans = (textprep.paragraph_token_spans(vocab, text)
                 if strategy == "paragraph" else None)
        chunksets.append(textprep.split(seq, strategy, max_len,
                                        paragraph_index=paragraph_index,
                                        paragraph_spans=spans))
    return chunksets


def _encoder_config_from_sidecar(path):
    with open(str(path) + ".json", encoding="utf-8") as f:
        return encoder.EncoderConfig(**json.load(f))


def _save_encoder(model, path):
    save_checkpoint(path, model.state_dict())
    _write_json(str(path) + ".json", asdict(model.config))


def _load_encoder(path):
    config = _encoder_config_from_sidecar(path)
    model = encoder.ChunkEncoder(config, np.random.default_rng(0))
    model.load_state_dict(load_checkpoint(path))
    return model


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group()
def main():
    """Long-document multi-label coding pipeline."""


@main.command("generate")
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
              help="Corpus spec JSON; defaults when omitted.")
@click.option("--seed", type=int, default=None, help="Overrides the spec seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_generate(spec_path, seed, out_dir):
    """Generate a synthetic corpus: dataset.jsonl, stats.json, signal_map.json."""
    try:
        if spec_path:
            with open(spec_path, encoding="utf-8") as f:
                spec = datagen.CorpusSpec.from_json(f.read())
        else:
            spec = datagen.CorpusSpec()
        if seed is not None:
            spec.seed = seed
        os.makedirs(out_dir, exist_ok=True)
        corpus = datagen.generate_corpus(spec)
        dataset_path = os.path.join(out_dir, "dataset.jsonl")
        datagen.save_dataset(corpus.documents, dataset_path)
        _write_json(os.path.join(out_dir, "signal_map.json"), corpus.signal_map)
        texts = [textprep.preprocess_text(d.raw_text) for d in corpus.documents[:200]]
        vocab = textprep.build_vocabulary(texts, target_size=3000)
        _write_json(os.path.join(out_dir, "stats.json"),
                    datagen.corpus_stats(corpus.documents, vocab))
        click.echo(f"wrote {dataset_path} ({len(corpus.documents)} documents)")
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, exc)


@main.command("prepare")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--strategy", type=click.Choice(textprep.STRATEGIES), required=True)
@click.option("--max-len", type=int, default=512, show_default=True)
@click.option("--vocab-size", type=int, default=2000, show_default=True)
@click.option("--top-k", type=int, default=200, show_default=True,
              help="Paragraph index size (paragraph strategy).")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_prepare(dataset_path, strategy, max_len, vocab_size, top_k, out_dir):
    """Build/reuse the vocabulary and write chunk files for one strategy."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        docs, by_split, _ = _load_dataset(dataset_path)
        vocab_path = os.path.join(out_dir, "vocab.txt")
        if os.path.exists(vocab_path):
            vocab = textprep.Vocabulary.load(vocab_path)
            click.echo(f"reusing cached vocabulary {vocab_path}")
        else:
            train_texts = [textprep.preprocess_text(d.raw_text)
                           for d in docs if d.split == "train"]
            vocab = textprep.build_vocabulary(train_texts, target_size=vocab_size)
            vocab.save(vocab_path)

        paragraph_index = None
        if strategy == "paragraph":
            train_docs = [d for d in docs if d.split == "train"]
            paragraph_index = textprep.build_paragraph_index(train_docs, top_k=top_k)
            _write_json(os.path.join(out_dir, "paragraphs.json"),
                        {"names": [list(kv) for kv in paragraph_index.names]})

        chunksets = _chunk_documents(docs, vocab, strategy, max_len, paragraph_index)
        chunks_path = os.path.join(out_dir, f"chunks_{strategy}.jsonl")
        meta = {"strategy": strategy, "max_len": max_len, "vocab_size": len(vocab),
                "dataset": os.path.basename(dataset_path)}
        _write_chunks(chunks_path, meta, chunksets)
        n_chunks = sum(len(cs.chunks) for cs in chunksets)
        click.echo(f"wrote {chunks_path} ({n_chunks} chunks)")
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, exc)


@main.command("train-encoder")
@click.option("--chunks", "chunks_path", type=click.Path(exists=True), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--epochs", type=int, default=6, show_default=True)
@click.option("--lr", type=float, default=5e-4, show_default=True)
@click.option("--batch-size", type=int, default=1, show_default=True)
@click.option("--layers", type=int, default=2, show_default=True)
@click.option("--hidden", type=int, default=64, show_default=True)
@click.option("--heads", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def cmd_train_encoder(chunks_path, dataset_path, epochs, lr, batch_size,
                      layers, hidden, heads, seed, out_path):
    """Fine-tune an encoder on chunk -> document-labels; writes a loss curve."""
    try:
        meta, chunksets = _read_chunks(chunks_path)
        docs, by_split, label_names = _load_dataset(dataset_path)
        train_ids = [i for i in by_split["train"] if i in chunksets]
        val_ids = [i for i in by_split["validation"] if i in chunksets]
        labels = _labels_for(docs, train_ids + val_ids, label_names)
        config = encoder.EncoderConfig(
            vocab_size=meta["vocab_size"], max_len=meta["max_len"],
            layers=layers, hidden=hidden, heads=heads, label_count=len(label_names))
        model = encoder.ChunkEncoder(config, np.random.default_rng(seed))
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, exc)
    try:
        curve = encoder.finetune_encoder(
            model,
            [chunksets[i] for i in train_ids], labels,
            encoder.FineTuneConfig(batch_size=batch_size, learning_rate=lr,
                                   epochs=epochs, seed=seed),
            [chunksets[i] for i in val_ids], labels)
    except (ValueError, FloatingPointError) as exc:
        _fail(EXIT_TRAIN, exc)
    _save_encoder(model, out_path)
    curve_path = str(out_path) + ".curve.csv"
    with open(curve_path, "w", encoding="utf-8") as f:
        f.write("epoch,val_loss\n")
        for i, v in enumerate(curve):
            f.write(f"{i},{v!r}\n")
    click.echo(f"wrote {out_path} and {curve_path} "
               f"(val loss {curve[0]:.4f} -> {curve[-1]:.4f})")


@main.command("encode")
@click.option("--encoder", "encoder_path", type=click.Path(exists=True), required=True)
@click.option("--chunks", "chunks_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def cmd_encode(encoder_path, chunks_path, out_path):
    """Encode chunks with a trained encoder into an ENC1 file."""
    try:
        model = _load_encoder(encoder_path)
        _, chunksets = _read_chunks(chunks_path)
        enc_set = encoder.encode_chunksets(model, chunksets.values())
        encoder.export_encodings(enc_set, out_path)
        click.echo(f"wrote {out_path} ({len(enc_set)} encodings, dim {enc_set.dim})")
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, exc)


def _assemble_from_enc1(enc_paths, doc_ids, arch):
    """Decide fixed vs variable input from the ENC1 strategies and assemble."""
    enc_sets = [encoder.import_encodings(p) for p in enc_paths]
    strategies = [es.entries[0].strategy if es.entries else None for es in enc_sets]
    variable = any(s in ("all", "paragraph") for s in strategies)
    if variable:
        if len(enc_sets) != 1:
            raise decoder.DecoderError(
                "variable-input decoding (all/paragraph) takes exactly one ENC1 file")
        if arch != "transformer":
            raise decoder.DecoderError(
                f"{arch} cannot consume variable-count encodings; use the transformer")
        inputs = decoder.assemble_variable(enc_sets[0], doc_ids)
        return inputs, "variable", enc_sets[0].dim
    slots = [f"{s}:0" for s in strategies]
    if len(set(slots)) != len(slots):
        raise decoder.DecoderError(f"duplicate slot strategies in inputs: {slots}")
    for es, slot in zip(enc_sets, slots):
        have = set(es.doc_ids())
        missing = [i for i in doc_ids if i not in have]
        if missing:
            raise decoder.DecoderError(
                f"ENC1 for slot {slot} is missing {len(missing)} documents "
                f"(first: {missing[0]!r})")
    return decoder.assemble_fixed(enc_sets, slots, doc_ids), slots, enc_sets[0].dim


ARCH_FLAGS = {"linear": "linear", "flat": "flat_mlp",
              "parallel": "parallel_mlp", "transformer": "transformer"}


@main.command("train-decoder")
@click.option("--enc", "enc_paths", type=click.Path(exists=True), multiple=True,
              required=True, help="ENC1 inputs; one per fixed slot, in slot order.")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--arch", type=click.Choice(sorted(ARCH_FLAGS)), required=True)
@click.option("--size", type=click.Choice(decoder.SIZES), default="base", show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--decay-epochs", type=int, default=30, show_default=True)
@click.option("--weight-decay", type=float, default=1e-3, show_default=True)
@click.option("--max-epochs", type=int, default=100, show_default=True)
@click.option("--patience", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def cmd_train_decoder(enc_paths, dataset_path, arch, size, batch_size, lr,
                      decay_epochs, weight_decay, max_epochs, patience, seed, out_path):
    """Train a decoder on precomputed encodings (never touches text)."""
    try:
        docs, by_split, label_names = _load_dataset(dataset_path)
        arch_name = ARCH_FLAGS[arch]
        train_inputs, slots, dim = _assemble_from_enc1(
            enc_paths, by_split["train"], arch_name)
        val_inputs, _, _ = _assemble_from_enc1(enc_paths, by_split["validation"], arch_name)
        labels = _labels_for(docs, by_split["train"] + by_split["validation"], label_names)
        config = decoder.DecoderConfig(arch_name, size=size, input_slots=slots,
                                       input_dim=dim, label_count=len(label_names))
        model = decoder.build_decoder(config, np.random.default_rng(seed))
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, exc)
    try:
        history = decoder.train_decoder(
            model,
            train_inputs, np.stack([labels[i] for i in by_split["train"]]),
            val_inputs, np.stack([labels[i] for i in by_split["validation"]]),
            decoder.TrainConfig(batch_size=batch_size, base_lr=lr,
                                decay_epochs=decay_epochs, weight_decay=weight_decay,
                                max_epochs=max_epochs, patience=patience, seed=seed))
    except decoder.DecoderError as exc:
        _fail(EXIT_TRAIN, exc)
    decoder.save_decoder(model, out_path)
    history_path = str(out_path) + ".history.csv"
    with open(history_path, "w", encoding="utf-8") as f:
        f.write("epoch,train_loss,val_loss,lr\n")
        for h in history:
            f.write(f"{h['epoch']},{h['train_loss']!r},{h['val_loss']!r},{h['lr']!r}\n")
    best = min(h["val_loss"] for h in history)
    click.echo(f"wrote {out_path} ({len(history)} epochs, best val loss {best:.4f})")


@main.command("evaluate")
@click.option("--decoder", "decoder_path", type=click.Path(exists=True), required=True)
@click.option("--enc", "enc_paths", type=click.Path(exists=True), multiple=True, required=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--split", type=click.Choice(datagen.SPLITS), default="test", show_default=True)
@click.option("--reference", default="external_baselines/BERT-ICD", show_default=True,
              help="reference_table entry shown beside the result.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def cmd_evaluate(decoder_path, enc_paths, dataset_path, split, reference, out_path):
    """Evaluate a decoder on one split; writes metrics JSON and a text table."""
    try:
        docs, by_split, label_names = _load_dataset(dataset_path)
        model = decoder.load_decoder(decoder_path)
        doc_ids = by_split[split]
        if not doc_ids:
            raise datagen.DatasetFormatError(f"split {split!r} is empty")
        inputs, _, _ = _assemble_from_enc1(enc_paths, doc_ids, model.config.architecture)
        labels = _labels_for(docs, doc_ids, label_names)
        probs = decoder.predict(model, inputs)
        batch = metrics.EvalBatch(probs, np.stack([labels[i] for i in doc_ids]),
                                  label_names)
        report = metrics.evaluate(batch)
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, exc)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
        f.write("\n")
    table = _render_report_table(report, split, reference)
    with open(str(out_path) + ".txt", "w", encoding="utf-8") as f:
        f.write(table)
    click.echo(table)


def _render_report_table(report, split, reference):
    group, _, key = reference.partition("/")
    ref = metrics.reference_table().get(group, {}).get(key)
    lines = [
        f"{'result (' + split + ' split)':<34}{'macro AUC':>12}{'micro AUC':>12}",
        f"{'this run (synthetic, desk scale)':<34}{report.macro_auc * 100:>12.2f}"
        f"{report.micro_auc * 100:>12.2f}",
    ]
    if ref is not None:
        macro = f"{ref[0]:.2f}" if ref[0] is not None else "-"
        micro = f"{ref[1]:.2f}" if ref[1] is not None else "-"
        lines.append(f"{'reference full-scale ' + reference:<34}{macro:>12}{micro:>12}")
    lines.append(f"labels evaluated: {sum(v is not None for v in report.per_label.values())}"
                 f" of {len(report.per_label)}; excluded: {len(report.excluded)}")
    lines.append("reference numbers are printed for context only, never as targets")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# matrix: the full experiment sweep
# ---------------------------------------------------------------------------

DEFAULT_PLAN = {
    "seed": 42,
    "max_len": 64,
    "vocab_size": 2000,
    "paragraph_top_k": 200,
    "strategies": ["front", "back", "mixed", "all", "paragraph"],
    "encoder": {"layers": 2, "hidden": 64, "heads": 4},
    "finetune": {"epochs_sweep": [0, 3, 6], "batch_size": 1, "learning_rate": 5e-4},
    "decoder_train": {"batch_size": 32, "base_lr": 1e-3, "decay_epochs": 30,
                      "weight_decay": 1e-3, "max_epochs": 100, "patience": 10},
    "decoder_grid": [
        {"arch": "flat_mlp", "size": size} for size in decoder.SIZES
    ] + [
        {"arch": "parallel_mlp", "size": size} for size in decoder.SIZES
    ] + [
        {"arch": "transformer", "size": size} for size in decoder.SIZES
    ],
}


def _load_plan(path):
    with open(path, encoding="utf-8") as f:
        plan = json.load(f)
    merged = json.loads(json.dumps(DEFAULT_PLAN))
    merged.update(plan)
    if "dataset" not in merged and "corpus_spec" not in merged:
        raise datagen.DataGenError("plan needs either 'dataset' or 'corpus_spec'")
    return merged


class Manifest:
    """Stage ledger: artifact paths and content hashes, for caching/resume."""

    def __init__(self, path, plan_hash):
        self.path = path
        self.data = {"plan_hash": plan_hash, "stages": {}}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                previous = json.load(f)
            if previous.get("plan_hash") == plan_hash:
                self.data = previous

    def fresh(self, stage, artifact):
        """True when the stage must run (no record or artifact changed)."""
        entry = self.data["stages"].get(stage)
        if entry is None or not os.path.exists(artifact):
            return True
        return _sha256(artifact) != entry["sha256"]

    def record(self, stage, artifact):
        self.data["stages"][stage] = {"path": artifact, "sha256": _sha256(artifact)}
        _write_json(self.path, self.data)


def _cell_seed(seed, cell_id):
    digest = hashlib.sha256(cell_id.encode("utf-8")).digest()
    return np.random.SeedSequence([seed, int.from_bytes(digest[:4], "little")])


def _worker_init():
    """Pin BLAS to one thread per worker; parallelism lives at the cell level."""
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=1)
    except ImportError:
        pass


def _run_decoder_cell(args):
    """One grid cell: train on cached encodings, evaluate, return metrics.

    Top-level function so process pools can pickle it; owns an RNG stream
    derived from (seed, cell id).
    """
    (cell_id, enc_paths, dataset_path, arch, size, train_kwargs, seed) = args
    docs, by_split, label_names = _load_dataset(dataset_path)
    train_inputs, slots, dim = _assemble_from_enc1(enc_paths, by_split["train"], arch)
    val_inputs, _, _ = _assemble_from_enc1(enc_paths, by_split["validation"], arch)
    test_inputs, _, _ = _assemble_from_enc1(enc_paths, by_split["test"], arch)
    labels = _labels_for(docs, [i for ids in by_split.values() for i in ids], label_names)
    rng = np.random.default_rng(_cell_seed(seed, cell_id))
    config = decoder.DecoderConfig(arch, size=size, input_slots=slots,
                                   input_dim=dim, label_count=len(label_names))
    model = decoder.build_decoder(config, rng)
    train_config = decoder.TrainConfig(seed=int(rng.integers(2 ** 31)), **train_kwargs)
    history = decoder.train_decoder(
        model,
        train_inputs, np.stack([labels[i] for i in by_split["train"]]),
        val_inputs, np.stack([labels[i] for i in by_split["validation"]]),
        train_config)
    probs = decoder.predict(model, test_inputs)
    batch = metrics.EvalBatch(probs, np.stack([labels[i] for i in by_split["test"]]),
                              label_names)
    report = metrics.evaluate(batch)
    return cell_id, report, len(history), model.parameter_count()


@main.command("matrix")
@click.option("--plan", "plan_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel processes for independent decoder cells.")
def cmd_matrix(plan_path, out_dir, jobs):
    """Run the full experiment sweep from a plan file, with stage caching."""
    try:
        plan = _load_plan(plan_path)
        os.makedirs(out_dir, exist_ok=True)
        run_matrix(plan, out_dir, jobs)
    except DATA_ERRORS as exc:
        _fail(EXIT_DATA, exc)
    except decoder.DecoderError as exc:
        _fail(EXIT_TRAIN, exc)


def run_matrix(plan, out_dir, jobs=1):
    seed = plan["seed"]
    plan_hash = hashlib.sha256(
        json.dumps(plan, sort_keys=True).encode("utf-8")).hexdigest()
    manifest = Manifest(os.path.join(out_dir, "manifest.json"), plan_hash)

    # stage 1: dataset
    dataset_path = plan.get("dataset")
    if dataset_path is None:
        dataset_path = os.path.join(out_dir, "dataset.jsonl")
        if manifest.fresh("dataset", dataset_path):
            spec = datagen.CorpusSpec.from_json(json.dumps(plan["corpus_spec"]))
            spec.seed = seed
            corpus = datagen.generate_corpus(spec)
            datagen.save_dataset(corpus.documents, dataset_path)
            _write_json(os.path.join(out_dir, "signal_map.json"), corpus.signal_map)
            manifest.record("dataset", dataset_path)
    docs, by_split, label_names = _load_dataset(dataset_path)

    # stage 2: vocabulary (cached, byte-stable)
    vocab_path = os.path.join(out_dir, "vocab.txt")
    if manifest.fresh("vocab", vocab_path):
        train_texts = [textprep.preprocess_text(d.raw_text)
                       for d in docs if d.split == "train"]
        vocab = textprep.build_vocabulary(train_texts, target_size=plan["vocab_size"])
        vocab.save(vocab_path)
        manifest.record("vocab", vocab_path)
    vocab = textprep.Vocabulary.load(vocab_path)

    # stage 3: chunks per strategy
    chunk_paths = {}
    for strategy in plan["strategies"]:
        path = os.path.join(out_dir, f"chunks_{strategy}.jsonl")
        chunk_paths[strategy] = path
        if not manifest.fresh(f"chunks/{strategy}", path):
            continue
        paragraph_index = None
        if strategy == "paragraph":
            train_docs = [d for d in docs if d.split == "train"]
            paragraph_index = textprep.build_paragraph_index(
                train_docs, top_k=plan["paragraph_top_k"])
        chunksets = _chunk_documents(docs, vocab, strategy, plan["max_len"],
                                     paragraph_index)
        _write_chunks(path, {"strategy": strategy, "max_len": plan["max_len"],
                             "vocab_size": len(vocab), "dataset": "dataset.jsonl"},
                      chunksets)
        manifest.record(f"chunks/{strategy}", path)

    # stage 4+5: fine-tune encoders and encode, per strategy x sweep epochs
    ft = plan["finetune"]
    enc1_paths = {}
    for strategy in plan["strategies"]:
        _, chunksets = _read_chunks(chunk_paths[strategy])
        train_ids = [i for i in by_split["train"] if i in chunksets]
        val_ids = [i for i in by_split["validation"] if i in chunksets]
        labels = _labels_for(docs, train_ids + val_ids, label_names)
        sweep = ft["epochs_sweep"] if strategy in ("front", "back", "mixed") else \
            [max(ft["epochs_sweep"])]
        for epochs in sweep:
            tag = f"{strategy}_ep{epochs}"
            ckpt = os.path.join(out_dir, f"encoder_{tag}.nnc1")
            enc1 = os.path.join(out_dir, f"enc_{tag}.enc1")
            enc1_paths[(strategy, epochs)] = enc1
            if not manifest.fresh(f"enc1/{tag}", enc1):
                continue
            enc_rng = np.random.default_rng(_cell_seed(seed, f"encoder/{strategy}"))
            config = encoder.EncoderConfig(
                vocab_size=len(vocab), max_len=plan["max_len"],
                label_count=len(label_names), **plan["encoder"])
            model = encoder.ChunkEncoder(config, enc_rng)
            curve = encoder.finetune_encoder(
                model, [chunksets[i] for i in train_ids], labels,
                encoder.FineTuneConfig(batch_size=ft["batch_size"],
                                       learning_rate=ft["learning_rate"],
                                       epochs=epochs,
                                       seed=int(np.random.default_rng(
                                           _cell_seed(seed, f"ft/{tag}")).integers(2 ** 31))),
                [chunksets[i] for i in val_ids], labels)
            _save_encoder(model, ckpt)
            with open(ckpt + ".curve.csv", "w", encoding="utf-8") as f:
                f.write("epoch,val_loss\n")
                for i, v in enumerate(curve):
                    f.write(f"{i},{v!r}\n")
            enc_set = encoder.encode_chunksets(model, chunksets.values())
            encoder.export_encodings(enc_set, enc1)
            manifest.record(f"enc1/{tag}", enc1)
            click.echo(f"encoded {tag}: val loss {curve[0]:.4f} -> {curve[-1]:.4f}")

    # stage 6: experiment cells
    best_ep = max(ft["epochs_sweep"])
    cells = []
    fbm = [s for s in ("front", "back", "mixed") if s in plan["strategies"]]
    fbm_paths = [enc1_paths[(s, best_ep)] for s in fbm] if len(fbm) == 3 else None

    if fbm_paths:
        for epochs in ft["epochs_sweep"]:
            cells.append((f"sweep/ep{epochs}",
                          [enc1_paths[(s, epochs)] for s in fbm], "linear", "base"))
        for strategy in fbm:
            for arch in ("linear", "flat_mlp"):
                cells.append((f"chunk/{strategy}/{arch}",
                              [enc1_paths[(strategy, best_ep)]], arch, "base"))
        cells.append(("combo/front_back",
                      [enc1_paths[("front", best_ep)], enc1_paths[("back", best_ep)]],
                      "flat_mlp", "base"))
        cells.append(("combo/front_back_mixed", fbm_paths, "flat_mlp", "base"))
        for cell in plan["decoder_grid"]:
            cells.append((f"grid/{cell['arch']}/{cell['size']}",
                          fbm_paths, cell["arch"], cell["size"]))
    for strategy in ("paragraph", "all"):
        if strategy in plan["strategies"]:
            for size in decoder.SIZES:
                cells.append((f"longinput/{strategy}/{size}",
                              [enc1_paths[(strategy, best_ep)]], "transformer", size))

    metrics_dir = os.path.join(out_dir, "metrics")
    os.makedirs(metrics_dir, exist_ok=True)
    pending = []
    for cell_id, enc_paths, arch, size in cells:
        out_json = os.path.join(metrics_dir, cell_id.replace("/", "__") + ".json")
        if manifest.fresh(f"cell/{cell_id}", out_json):
            pending.append((cell_id, tuple(enc_paths), dataset_path, arch, size,
                            plan["decoder_train"], seed))

    results = {}
    if pending:
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(
                    max_workers=jobs, initializer=_worker_init) as pool:
                for cell_id, report, n_epochs, n_params in pool.map(_run_decoder_cell, pending):
                    results[cell_id] = (report, n_epochs, n_params)
        else:
            for args in pending:
                cell_id, report, n_epochs, n_params = _run_decoder_cell(args)
                results[cell_id] = (report, n_epochs, n_params)
    # write in fixed cell order so reruns are byte-identical
    for cell_id, enc_paths, arch, size in cells:
        if cell_id not in results:
            continue
        report, n_epochs, n_params = results[cell_id]
        out_json = os.path.join(metrics_dir, cell_id.replace("/", "__") + ".json")
        with open(out_json, "w", encoding="utf-8") as f:
            f.write(report.to_json())
            f.write("\n")
        manifest.record(f"cell/{cell_id}", out_json)
        click.echo(f"cell {cell_id}: macro {report.macro_auc * 100:.2f} "
                   f"micro {report.micro_auc * 100:.2f} "
                   f"({n_epochs} epochs, {n_params:,} params)")

    _write_matrix_report(out_dir, cells, metrics_dir)
    click.echo(f"report: {os.path.join(out_dir, 'report.md')}")


def _experiment_reference(cell_id):
    ref = metrics.reference_table()
    mapping = {
        "sweep/ep0": ("finetune_epochs", "none"),
        "sweep/ep3": ("finetune_epochs", "3"),
        "sweep/ep6": ("finetune_epochs", "6"),
        "combo/front_back": ("chunk_combinations", "front_back"),
        "combo/front_back_mixed": ("chunk_combinations", "front_back_mixed"),
    }
    if cell_id in mapping:
        group, key = mapping[cell_id]
        return ref[group][key]
    parts = cell_id.split("/")
    if parts[0] == "chunk":
        table = "single_chunk_linear" if parts[2] == "linear" else "single_chunk_mlp"
        return ref[table].get(parts[1])
    if parts[0] == "grid":
        arch = {"flat_mlp": "flat", "parallel_mlp": "parallel",
                "transformer": "transformer"}[parts[1]]
        return ref["decoder_grid"].get(f"{arch}_{parts[2]}")
    if parts[0] == "longinput":
        table = "paragraph_runs" if parts[1] == "paragraph" else "all_chunk_runs"
        return ref[table].get(f"transformer_{parts[2]}")
    return None


def _write_matrix_report(out_dir, cells, metrics_dir):
    rows = []
    for cell_id, _, arch, size in cells:
        out_json = os.path.join(metrics_dir, cell_id.replace("/", "__") + ".json")
        if not os.path.exists(out_json):
            continue
        with open(out_json, encoding="utf-8") as f:
            report = metrics.MetricsReport.from_json(f.read())
        rows.append((cell_id, arch, size, report.macro_auc * 100, report.micro_auc * 100,
                     _experiment_reference(cell_id)))
    report_path = os.path.join(out_dir, "report.md")
    with open(report_path, "w", encoding="utf-8") as f:
        f.write("# Experiment matrix report\n\n")
        f.write("Synthetic desk-scale results; the reference columns are the\n")
        f.write("published full-scale numbers, shown for direction only.\n\n")
        f.write("| cell | arch | size | macro | micro | ref macro | ref micro |\n")
        f.write("|---|---|---|---|---|---|---|\n")
        for cell_id, arch, size, mac, mic, ref in rows:
            rm = f"{ref[0]:.2f}" if ref and ref[0] is not None else "-"
            rmi = f"{ref[1]:.2f}" if ref and ref[1] is not None else "-"
            f.write(f"| {cell_id} | {arch} | {size} | {mac:.2f} | {mic:.2f} "
                    f"| {rm} | {rmi} |\n")
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("cell,arch,size,macro_auc,micro_auc,ref_macro,ref_micro\n")
        for cell_id, arch, size, mac, mic, ref in rows:
            rm = f"{ref[0]}" if ref and ref[0] is not None else ""
            rmi = f"{ref[1]}" if ref and ref[1] is not None else ""
            f.write(f"{cell_id},{arch},{size},{mac!r},{mic!r},{rm},{rmi}\n")


if __name__ == "__main__":
    main()
