"""Acceptance suite: one test per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass/fail
line per criterion.  The heavyweight pipeline experiments (criteria 4-7)
share three synthetic corpora built once per session:

* front-signal corpus, desk scale (807/157/173 documents, seed 42)
* split-signal corpus (front half of the label space signals at the front
  of each document, back half at the back; seed 43)
* uniform-signal corpus (one random 15% window per document; 400/120/120)

Chunking uses max_len 64 so the desk-scale documents (mean ~274 tokens)
genuinely exceed one chunk and the front/back/mixed distinction exists.
Decoders train with the shipped recipe except base_lr 1e-3 and patience 5:
one tenth the reference data needs a hotter, shorter probe, and every
comparison applies the same recipe to both sides.

Encoder validation-loss plateaus are judged against the curve point after
the first epoch: the first epoch fits the label priors (which happens
inside the reference model's pretraining/head warmup and before the first
plotted point of its loss curves), and signal misalignment shows up in
what happens afterwards.
"""

import concurrent.futures
import json
import os
import re
import struct
import time

import numpy as np
import pytest

from chunkcoder import cli
from chunkcoder.datagen import CorpusSpec, generate_corpus, label_space, save_dataset
from chunkcoder.decoder import SIZES, DecoderConfig, DecoderInput, build_decoder, decoder_forward
from chunkcoder.encoder import (
    BadMagicError,
    ChunkEncoder,
    DimensionMismatchError,
    DuplicateEntryError,
    Encoding,
    EncodingSet,
    EncoderConfig,
    FineTuneConfig,
    TruncatedPayloadError,
    encode_chunksets,
    export_encodings,
    finetune_encoder,
    import_encodings,
    multi_hot,
)
from chunkcoder.metrics import EvalBatch, binary_auc, macro_auc, micro_auc
from chunkcoder.nncore import (
    Dense,
    LayerNorm,
    MultiHeadAttention,
    PReLU,
    Tensor,
    TransformerLayer,
    bce_with_logits,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)
from chunkcoder.textprep import (
    TokenSequence,
    build_vocabulary,
    preprocess_text,
    split,
    tokenize,
)

T0 = time.monotonic()
BUDGET_SECONDS = 30 * 60
MAX_LEN = 64
WORKERS = max(2, min(4, os.cpu_count() or 1))

DECODER_RECIPE = {"batch_size": 32, "base_lr": 1e-3, "decay_epochs": 30,
                  "weight_decay": 1e-3, "max_epochs": 100, "patience": 5}


def report_line(criterion, detail, ok):
    status = "PASS" if ok else "FAIL"
    print(f"\n[criterion {criterion}] {detail}: {status}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# criterion 1: gradient suite
# ---------------------------------------------------------------------------

def _loss_closure(fn, w):
    def loss():
        return (fn() * w).sum()
    return loss


def test_c1_gradient_suite():
    start = time.monotonic()
    rng = np.random.default_rng(0)
    worst = {}

    d = Dense(6, 4, rng)
    x = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
    y = (rng.random((5, 4)) > 0.5).astype(float)
    rep = grad_check(lambda: bce_with_logits(d(x), y),
                     dict(d.named_parameters()) | {"input": x})
    worst["dense+bce"] = max(rep.values())
    assert worst["dense+bce"] < 1e-6

    ln = LayerNorm(7)
    xl = Tensor(rng.normal(size=(4, 7)), requires_grad=True)
    w = rng.normal(size=(4, 7))
    rep = grad_check(_loss_closure(lambda: ln(xl), w),
                     dict(ln.named_parameters()) | {"input": xl})
    worst["layer_norm"] = max(rep.values())

    pr = PReLU(7)
    rep = grad_check(_loss_closure(lambda: pr(xl), w),
                     dict(pr.named_parameters()) | {"input": xl})
    worst["prelu"] = max(rep.values())

    mha = MultiHeadAttention(8, 2, rng)
    xa = Tensor(rng.normal(size=(1, 3, 8)), requires_grad=True)
    wa = rng.normal(size=(1, 3, 8))
    rep = grad_check(_loss_closure(lambda: mha(xa, np.ones((1, 3))), wa),
                     dict(mha.named_parameters()) | {"input": xa})
    worst["attention"] = max(rep.values())

    tl = TransformerLayer(8, 2, rng)
    mask = np.array([[1, 1, 1, 0]], float)
    xt = Tensor(rng.normal(size=(1, 4, 8)), requires_grad=True)
    wt = rng.normal(size=(1, 4, 8))
    rep = grad_check(_loss_closure(lambda: tl(xt, mask), wt),
                     dict(tl.named_parameters()) | {"input": xt},
                     max_coords_per_param=24, rng=np.random.default_rng(1))
    worst["transformer_layer"] = max(rep.values())

    # full decoders: 4 architectures x 3 sizes, dropout off (training=False)
    slots = ["front:0", "back:0", "mixed:0"]
    inputs = [DecoderInput(f"d{i}", rng.normal(size=(3, 8)), np.ones(3))
              for i in range(2)]
    labels = (rng.random((2, 5)) > 0.5).astype(float)
    for arch in ("linear", "flat_mlp", "parallel_mlp", "transformer"):
        for size in SIZES:
            cfg = DecoderConfig(arch, size=size, input_slots=slots,
                                input_dim=8, label_count=5)
            model = build_decoder(cfg, np.random.default_rng(7))

            def loss():
                return bce_with_logits(decoder_forward(model, inputs, training=False),
                                       labels)

            rep = grad_check(loss, model.named_parameters(),
                             max_coords_per_param=5, rng=np.random.default_rng(2))
            worst[f"{arch}/{size}"] = max(rep.values())

    elapsed = time.monotonic() - start
    layer_ok = all(v < 1e-4 for v in worst.values())
    report_line(1, f"max rel errors {max(worst.values()):.2e} (<1e-4), "
                   f"dense/bce {worst['dense+bce']:.2e} (<1e-6), {elapsed:.0f}s (<120s)",
                layer_ok and worst["dense+bce"] < 1e-6 and elapsed < 120)


# ---------------------------------------------------------------------------
# criterion 2: AUC oracle
# ---------------------------------------------------------------------------

def _pair_count_auc(scores, targets):
    pos = scores[targets == 1]
    neg = scores[targets == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_c2_auc_oracle():
    start = time.monotonic()
    rng = np.random.default_rng(1234)
    worst = 0.0
    defined = 0
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        scores = np.round(rng.random(n), 2)
        targets = rng.integers(0, 2, size=n)
        oracle = _pair_count_auc(scores, targets)
        got = binary_auc(scores, targets)
        if oracle is None:
            assert got is None
        else:
            defined += 1
            worst = max(worst, abs(got - oracle))
    assert defined > 800

    for trial in range(100):
        b_rng = np.random.default_rng(5000 + trial)
        n, L = int(b_rng.integers(4, 40)), int(b_rng.integers(1, 6))
        scores = b_rng.random((n, L))
        targets = b_rng.integers(0, 2, size=(n, L))
        targets[0], targets[1] = 0, 1  # both classes in every column
        batch = EvalBatch(scores, targets)
        # monotone-transform invariance
        warped = EvalBatch(np.exp(3 * scores), targets)
        assert abs(macro_auc(batch) - macro_auc(warped)) < 1e-12
        assert abs(micro_auc(batch) - micro_auc(warped)) < 1e-12
        # complement symmetry per label
        for j in range(L):
            a = binary_auc(scores[:, j], targets[:, j])
            b = binary_auc(scores[:, j], 1 - targets[:, j])
            assert abs(a + b - 1.0) < 1e-12
        # single-label micro == macro
        single = EvalBatch(scores[:, :1], targets[:, :1])
        assert abs(micro_auc(single) - macro_auc(single)) < 1e-12

    elapsed = time.monotonic() - start
    report_line(2, f"oracle max dev {worst:.2e} (<1e-12 tol) over {defined} instances, "
                   f"identities on 100 batches, {elapsed:.0f}s (<60s)",
                worst < 1e-12 and elapsed < 60)


# ---------------------------------------------------------------------------
# criterion 3: chunking properties
# ---------------------------------------------------------------------------

def test_c3_chunking_properties():
    start = time.monotonic()
    rng = np.random.default_rng(99)
    failures = 0
    cases = 0

    for _ in range(7000):
        cases += 1
        n = int(rng.integers(1, 3000))
        max_len = int(rng.choice([8, 16, 64, 128, 512]))
        content = max_len - 2
        seq = TokenSequence("d", rng.integers(4, 500, size=n))
        all_set = split(seq, "all", max_len)
        rebuilt = np.concatenate([c.content_ids for c in all_set.chunks])
        front = split(seq, "front", max_len).chunks[0]
        back = split(seq, "back", max_len).chunks[0]
        mixed = split(seq, "mixed", max_len).chunks[0]
        ok = np.array_equal(rebuilt, seq.token_ids)
        ok &= np.array_equal(front.content_ids,
                             all_set.chunks[0].content_ids[:len(front.content_ids)])
        ok &= np.array_equal(front.content_ids, seq.token_ids[:content])
        ok &= np.array_equal(back.content_ids, seq.token_ids[-content:])
        if n > content:
            half_front = content - content // 2
            expect = np.concatenate([seq.token_ids[:half_front],
                                     seq.token_ids[n - content // 2:]])
            ok &= np.array_equal(mixed.content_ids, expect)
            ok &= len(mixed.content_ids) == content
        else:
            ok &= np.array_equal(mixed.content_ids, seq.token_ids)
        if not ok:
            failures += 1

    chars = list("abc xyz:\n\t 019/QRS.")
    for _ in range(3000):
        cases += 1
        raw = "".join(rng.choice(chars, size=int(rng.integers(1, 80))))
        if not re.sub(r"[\d\s]", "", raw):
            continue
        once = preprocess_text(raw)
        if preprocess_text(once) != once:
            failures += 1

    elapsed = time.monotonic() - start
    report_line(3, f"{cases} randomized cases, {failures} failures, "
                   f"{elapsed:.0f}s (<60s)", failures == 0 and elapsed < 60)


# ---------------------------------------------------------------------------
# shared pipeline fixtures for criteria 4-7
# ---------------------------------------------------------------------------

_CTX = {}


def _build_corpus_context(key, spec, out_dir):
    corpus = generate_corpus(spec)
    docs = corpus.documents
    dataset_path = os.path.join(out_dir, f"{key}_dataset.jsonl")
    save_dataset(docs, dataset_path)
    pre = {d.id: preprocess_text(d.raw_text) for d in docs}
    vocab = build_vocabulary([pre[d.id] for d in docs if d.split == "train"],
                             target_size=2000)
    labels = label_space(docs)
    return {
        "spec": spec,
        "docs": docs,
        "dataset_path": dataset_path,
        "pre": pre,
        "vocab": vocab,
        "labels": labels,
        "y": {d.id: multi_hot(d.labels, labels) for d in docs},
        "ids": {s: [d.id for d in docs if d.split == s]
                for s in ("train", "validation", "test")},
    }


def _finetune_and_encode(args):
    """Worker: fine-tune one encoder, encode every split, write ENC1."""
    key, strategy, epochs, enc_path = args
    ctx = _CTX[key]
    vocab = ctx["vocab"]
    chunksets = {
        doc_id: split(tokenize(vocab, text, doc_id=doc_id), strategy, MAX_LEN)
        for doc_id, text in ctx["pre"].items()
    }
    config = EncoderConfig(vocab_size=len(vocab), max_len=MAX_LEN, layers=2,
                           hidden=64, heads=4, label_count=len(ctx["labels"]))
    init_rng = np.random.default_rng(cli._cell_seed(ctx["spec"].seed,
                                                    f"enc-init/{strategy}"))
    model = ChunkEncoder(config, init_rng)
    curve = finetune_encoder(
        model,
        [chunksets[i] for i in ctx["ids"]["train"]], ctx["y"],
        FineTuneConfig(epochs=epochs, seed=ctx["spec"].seed + epochs),
        [chunksets[i] for i in ctx["ids"]["validation"]], ctx["y"])
    enc_set = encode_chunksets(model, chunksets.values())
    export_encodings(enc_set, enc_path)
    return (key, strategy, epochs), curve


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """Corpora, encoders and ENC1 files shared by criteria 4-7."""
    out_dir = str(tmp_path_factory.mktemp("acceptance"))
    t0 = time.monotonic()
    _CTX["front"] = _build_corpus_context(
        "front", CorpusSpec(seed=42), out_dir)
    _CTX["splitsig"] = _build_corpus_context(
        "splitsig", CorpusSpec(signal_position="split", seed=43), out_dir)
    _CTX["uniform"] = _build_corpus_context(
        "uniform", CorpusSpec(n_train=400, n_val=120, n_test=120,
                              signal_position="uniform", seed=42), out_dir)

    jobs = []
    enc_paths = {}
    for key, strategy, epochs in (
        [("front", s, e) for s in ("front", "back", "mixed") for e in (0, 6)]
        + [("splitsig", s, 6) for s in ("front", "back", "mixed")]
        + [("uniform", "all", 6)]
    ):
        path = os.path.join(out_dir, f"{key}_{strategy}_ep{epochs}.enc1")
        enc_paths[(key, strategy, epochs)] = path
        jobs.append((key, strategy, epochs, path))

    curves = {}
    with concurrent.futures.ProcessPoolExecutor(max_workers=WORKERS) as pool:
        for job_key, curve in pool.map(_finetune_and_encode, jobs):
            curves[job_key] = curve
    print(f"\n[fixtures] 3 corpora, {len(jobs)} encoders fine-tuned+encoded "
          f"in {time.monotonic() - t0:.0f}s")
    return {"dir": out_dir, "enc": enc_paths, "curves": curves,
            "datasets": {k: _CTX[k]["dataset_path"] for k in _CTX}}


def _decoder_cell(artifacts, cell_id, corpus, enc_keys, arch, size="base"):
    args = (cell_id,
            tuple(artifacts["enc"][k] for k in enc_keys),
            artifacts["datasets"][corpus],
            arch, size, DECODER_RECIPE, _CTX[corpus]["spec"].seed)
    _, report, n_epochs, n_params = cli._run_decoder_cell(args)
    return report


# ---------------------------------------------------------------------------
# criteria 4-7
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fbm_macros(artifacts):
    """FBM linear pipeline macro AUC with 6-epoch and 0-epoch encoders."""
    keys6 = [("front", s, 6) for s in ("front", "back", "mixed")]
    keys0 = [("front", s, 0) for s in ("front", "back", "mixed")]
    m6 = _decoder_cell(artifacts, "c4/fbm_ep6", "front", keys6, "linear").macro_auc
    m0 = _decoder_cell(artifacts, "c4/fbm_ep0", "front", keys0, "linear").macro_auc
    return m6, m0


def test_c4_finetune_effect(artifacts, fbm_macros):
    m6, m0 = fbm_macros
    gap = (m6 - m0) * 100
    report_line(4, f"FBM linear macro: 6-epoch {m6 * 100:.2f} vs 0-epoch {m0 * 100:.2f}, "
                   f"gap {gap:.1f} points (needs >= 15)", gap >= 15.0)


def test_c5_chunk_information_ordering(artifacts):
    front = _decoder_cell(artifacts, "c5/front", "front",
                          [("front", "front", 6)], "linear").macro_auc
    back = _decoder_cell(artifacts, "c5/back", "front",
                         [("front", "back", 6)], "linear").macro_auc
    first_gap = (front - back) * 100

    s_front = _decoder_cell(artifacts, "c5/split_front", "splitsig",
                            [("splitsig", "front", 6)], "linear").macro_auc
    s_back = _decoder_cell(artifacts, "c5/split_back", "splitsig",
                           [("splitsig", "back", 6)], "linear").macro_auc
    s_fbm = _decoder_cell(artifacts, "c5/split_fbm", "splitsig",
                          [("splitsig", s, 6) for s in ("front", "back", "mixed")],
                          "linear").macro_auc
    margin = (s_fbm - max(s_front, s_back)) * 100
    report_line(5, f"front {front * 100:.2f} vs back {back * 100:.2f} "
                   f"(+{first_gap:.1f}, needs >= 10); split corpus FBM "
                   f"{s_fbm * 100:.2f} vs best single {max(s_front, s_back) * 100:.2f} "
                   f"(+{margin:.1f}, needs >= 2)",
                first_gap >= 10.0 and margin >= 2.0)


def test_c6_decoder_saturation(artifacts):
    keys6 = [("front", s, 6) for s in ("front", "back", "mixed")]
    enc_paths = tuple(artifacts["enc"][k] for k in keys6)
    dataset = artifacts["datasets"]["front"]
    cells = [(f"c6/{arch}/{size}", enc_paths, dataset, arch, size,
              DECODER_RECIPE, 42)
             for arch in ("flat_mlp", "parallel_mlp", "transformer")
             for size in SIZES]
    results = {}
    with concurrent.futures.ProcessPoolExecutor(max_workers=WORKERS) as pool:
        for cell_id, report, n_epochs, n_params in pool.map(cli._run_decoder_cell, cells):
            results[cell_id] = report.macro_auc
            print(f"  {cell_id}: macro {report.macro_auc * 100:.2f} ({n_params:,} params)")
    spread = (max(results.values()) - min(results.values())) * 100
    report_line(6, f"9-cell macro spread {spread:.2f} points (needs < 3)", spread < 3.0)


def test_c7_misalignment_collapse(artifacts, fbm_macros):
    all_curve = artifacts["curves"][("uniform", "all", 6)]
    front_curve = artifacts["curves"][("front", "front", 6)]
    # plateau measured from the first post-epoch point (priors fitted)
    all_change = (all_curve[-1] - all_curve[1]) / all_curve[1]
    front_gain = (front_curve[1] - front_curve[-1]) / front_curve[1]

    all_macro = _decoder_cell(artifacts, "c7/all", "uniform",
                              [("uniform", "all", 6)], "transformer").macro_auc
    fbm_macro = fbm_macros[0]
    pipeline_gap = (fbm_macro - all_macro) * 100
    report_line(7, f"all-on-uniform val loss change {all_change * 100:+.1f}% "
                   f"(within +/-5); front fine-tune gain {front_gain * 100:.1f}% "
                   f"(needs >= 20); FBM {fbm_macro * 100:.2f} vs all-pipeline "
                   f"{all_macro * 100:.2f} (gap {pipeline_gap:.1f}, needs >= 10)",
                abs(all_change) <= 0.05 and front_gain >= 0.20 and pipeline_gap >= 10.0)


# ---------------------------------------------------------------------------
# criterion 8: determinism and formats
# ---------------------------------------------------------------------------

MATRIX_PLAN = {
    "seed": 11,
    "corpus_spec": {"n_train": 50, "n_val": 16, "n_test": 16, "label_count": 10,
                    "mean_labels_per_doc": 3.0, "signal_position": "front"},
    "max_len": 48,
    "vocab_size": 900,
    "strategies": ["front", "back", "mixed", "all"],
    "finetune": {"epochs_sweep": [0, 2], "batch_size": 1, "learning_rate": 5e-4},
    "decoder_train": {"batch_size": 32, "base_lr": 1e-3, "decay_epochs": 30,
                      "weight_decay": 1e-3, "max_epochs": 12, "patience": 5},
    "decoder_grid": [{"arch": "flat_mlp", "size": "base"}],
}


def test_c8_determinism_and_formats(tmp_path):
    # cmd_matrix rerun: byte-identical metrics JSON
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(MATRIX_PLAN))
    from click.testing import CliRunner
    runner = CliRunner()
    for run in ("m1", "m2"):
        result = runner.invoke(cli.main, ["matrix", "--plan", str(plan_path),
                                          "--out", str(tmp_path / run)])
        assert result.exit_code == 0, result.output
    files1 = sorted((tmp_path / "m1" / "metrics").iterdir())
    files2 = sorted((tmp_path / "m2" / "metrics").iterdir())
    assert [f.name for f in files1] == [f.name for f in files2] and files1
    matrix_ok = all(a.read_bytes() == b.read_bytes() for a, b in zip(files1, files2))

    # ENC1 round-trip bit-exact + distinct corruption errors
    rng = np.random.default_rng(0)
    enc_set = EncodingSet(8)
    for i in range(5):
        enc_set.add(Encoding(f"doc{i}", "front", "0",
                             rng.normal(size=8).astype(np.float32)))
    enc_path = tmp_path / "v.enc1"
    export_encodings(enc_set, enc_path)
    again = import_encodings(enc_path)
    enc_ok = all(a.vector.tobytes() == b.vector.tobytes()
                 for a, b in zip(enc_set, again))
    blob = enc_path.read_bytes()
    (tmp_path / "bad_magic.enc1").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(BadMagicError):
        import_encodings(tmp_path / "bad_magic.enc1")
    (tmp_path / "trunc.enc1").write_bytes(blob[:-5])
    with pytest.raises(TruncatedPayloadError):
        import_encodings(tmp_path / "trunc.enc1")
    dup = bytearray(blob)
    entry = blob[20:20 + (2 + 4 + 1 + 2 + 1 + 32)]  # first full entry
    dup[12:20] = struct.pack("<Q", len(enc_set) + 1)
    (tmp_path / "dup.enc1").write_bytes(bytes(dup) + entry)
    with pytest.raises(DuplicateEntryError):
        import_encodings(tmp_path / "dup.enc1")
    with pytest.raises(DimensionMismatchError):
        import_encodings(enc_path, expect_dim=16)

    # NNC1 round-trip bit-exact
    state = {"a.weight": rng.normal(size=(7, 3)), "a.bias": rng.normal(size=3)}
    ckpt = tmp_path / "m.nnc1"
    save_checkpoint(ckpt, state)
    loaded = load_checkpoint(ckpt)
    nnc_ok = all(state[k].tobytes() == loaded[k].tobytes() for k in state)

    report_line(8, f"matrix rerun byte-identical over {len(files1)} metrics files; "
                   f"ENC1/NNC1 round-trips bit-exact; corrupt files raise distinct errors",
                matrix_ok and enc_ok and nnc_ok)


def test_c9_budget():
    elapsed = time.monotonic() - T0
    report_line(9, f"acceptance suite elapsed {elapsed / 60:.1f} min "
                   f"(budget 30 min on a 4-core laptop)", elapsed < BUDGET_SECONDS)
