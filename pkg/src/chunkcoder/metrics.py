"""ROC-AUC computation and macro/micro aggregation for multi-label evaluation.

AUC is computed from ranks (the Mann-Whitney statistic) rather than from a
trapezoidal ROC sweep: with average ranks on tied scores the result is exact
and matches pair counting with half credit for ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


def _average_ranks(scores):
    """1-based ranks with ties sharing the average rank of their run."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores, targets):
    """AUC = (R_pos - P(P+1)/2) / (P*N); None when only one class is present.

    R_pos is the rank sum of the positives with average ranks on ties,
    P and N the positive/negative counts.  O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 1:
        raise MetricsError(f"scores/targets shape mismatch: {scores.shape} vs {targets.shape}")
    if np.any(np.isnan(scores)):
        raise MetricsError("NaN score passed to binary_auc")
    pos = targets == 1
    p = int(pos.sum())
    n = len(scores) - p
    if p == 0 or n == 0:
        return None
    ranks = _average_ranks(scores)
    r_pos = ranks[pos].sum()
    return (r_pos - p * (p + 1) / 2.0) / (p * n)


@dataclass
class EvalBatch:
    """Score and binary target matrices of shape [samples, labels]."""

    scores: np.ndarray
    targets: np.ndarray
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.scores.shape != self.targets.shape:
            raise MetricsError(
                f"scores shape {self.scores.shape} != targets shape {self.targets.shape}"
            )
        if not np.all(np.isfinite(self.scores)):
            raise MetricsError("scores must be finite")
        if not self.label_names:
            self.label_names = [f"label_{i}" for i in range(self.scores.shape[1])]


@dataclass
class MetricsReport:
    macro_auc: float
    micro_auc: float
    per_label: dict
    excluded: dict

    def to_json(self):
        return json.dumps(
            {
                "macro_auc": self.macro_auc,
                "micro_auc": self.micro_auc,
                "per_label": self.per_label,
                "excluded": self.excluded,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(obj["macro_auc"], obj["micro_auc"], obj["per_label"], obj["excluded"])


def per_label_aucs(batch):
    """AUC per label column; None entries carry an exclusion reason."""
    aucs = {}
    excluded = {}
    for j, name in enumerate(batch.label_names):
        col = batch.targets[:, j]
        p = int((col == 1).sum())
        if p == 0:
            aucs[name] = None
            excluded[name] = "no positive samples in split"
        elif p == len(col):
            aucs[name] = None
            excluded[name] = "no negative samples in split"
        else:
            aucs[name] = binary_auc(batch.scores[:, j], col)
    return aucs, excluded


def macro_auc(batch):
    """Unweighted mean of the defined per-label AUCs."""
    aucs, _ = per_label_aucs(batch)
    defined = [v for v in aucs.values() if v is not None]
    if not defined:
        raise MetricsError("macro AUC undefined: every label is single-class")
    return float(np.mean(defined))


def micro_auc(batch):
    """One AUC over the flattened (sample, label) pairs."""
    flat_scores = batch.scores.reshape(-1)
    flat_targets = batch.targets.reshape(-1)
    auc = binary_auc(flat_scores, flat_targets)
    if auc is None:
        raise MetricsError("micro AUC undefined: flattened targets are single-class")
    return auc


def evaluate(batch):
    """Full MetricsReport for one evaluation batch."""
    aucs, excluded = per_label_aucs(batch)
    defined = [v for v in aucs.values() if v is not None]
    if not defined:
        raise MetricsError("macro AUC undefined: every label is single-class")
    return MetricsReport(
        macro_auc=float(np.mean(defined)),
        micro_auc=micro_auc(batch),
        per_label=aucs,
        excluded=excluded,
    )


def reference_table():
    """Published full-scale results, for side-by-side display only.

    Values are (macro AUC, micro AUC) percentages as printed in the original
    report; figure entries carry the precision of the printed bar labels.
    These are display context for synthetic runs, never pass/fail targets.
    """
    return {
        "finetune_epochs": {  # FBM chunks + linear decoder
            "none": (55.76, 69.55),
            "3": (81.47, 86.00),
            "6": (83.00, 86.98),
        },
        "single_chunk_linear": {
            "front": (76.66, 81.52),
            "mixed": (76.09, 81.18),
            "back": (74.23, 80.35),
        },
        "single_chunk_mlp": {
            "front": (82.35, 86.91),
            "mixed": (81.69, 86.25),
            "back": (78.04, 83.73),
        },
        "chunk_combinations": {  # flat MLP decoder
            "front_back": (83.70, 88.11),
            "front_back_mixed": (84.42, 88.58),
        },
        "decoder_grid": {
            "flat_base": (84.42, 88.58),
            "flat_large": (84.30, 88.45),
            "flat_xlarge": (84.30, 88.47),
            "parallel_base": (84.45, 88.65),
            "parallel_large": (84.23, 88.48),
            "parallel_xlarge": (84.51, 88.49),
            "transformer_base": (84.30, 88.49),
            "transformer_large": (84.27, 88.45),
            "transformer_xlarge": (84.29, 88.08),
        },
        "paragraph_runs": {
            "fbm_parallel": (84.7, 88.8),
            "transformer_base": (68.9, 76.8),
            "transformer_large": (68.7, 76.6),
            "transformer_xlarge": (68.8, 76.6),
        },
        "all_chunk_runs": {
            "fbm_parallel": (84.7, 88.8),
            "transformer_base": (45.3, 64.9),
            "transformer_large": (48.0, 68.1),
            "transformer_xlarge": (50.5, 68.7),
        },
        "external_baselines": {
            "C-MemNN": (83.3, None),
            "LEAM": (88.1, 91.2),
            "CAML": (87.5, 90.9),
            "DR-CAML": (88.0, 90.2),
            "MSATT-KG": (91.4, 93.6),
            "Label Attention": (92.1, 94.6),
            "BERT-ICD": (84.45, 88.65),
        },
    }
