"""Feature-sequence datasets, the QDVR embedding file format, classification
metrics, and the parameter-breakdown report.

A dataset stands in for frozen backbone output: `features[i]` is one
[seq_len, feat_dim] float sequence with an integer class label. Splits are a
pure function of the label sequence (stratified 70/15/15 with a fixed
internal shuffle seed), so a dataset written to disk and read back carries
identical splits.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .circuits import CandidateDescriptor, param_count
from .head import HeadConfig

QDVR_MAGIC = b"QDVR"
QDVR_VERSION = 1

_SPLIT_SEED = 0
_SPLIT_FRACTIONS = (0.70, 0.15)  # train, val; the remainder is test


class QdvrFormatError(ValueError):
    """Base class for malformed QDVR embedding files."""


class BadMagic(QdvrFormatError):
    pass


class TruncatedFile(QdvrFormatError):
    pass


class NonFiniteValue(QdvrFormatError):
    pass


class LabelOutOfRange(QdvrFormatError):
    pass


@dataclass
class FeatureDataset:
    """Labeled feature sequences plus disjoint, covering split index sets."""

    features: np.ndarray  # [n_samples, seq_len, feat_dim] float32
    labels: np.ndarray    # [n_samples] int64
    n_classes: int
    splits: dict[str, np.ndarray]

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    @property
    def seq_len(self) -> int:
        return self.features.shape[1]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[2]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[name]
        return self.features[idx], self.labels[idx]


def make_stratified_splits(labels: np.ndarray, seed: int = _SPLIT_SEED) -> dict[str, np.ndarray]:
    """Stratified 70/15/15 split with a seeded shuffle; per-class floor sizes
    for train and val, remainder to test."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x53504C54]))
    train, val, test = [], [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        rng.shuffle(idx)
        n_train = int(_SPLIT_FRACTIONS[0] * len(idx))
        n_val = int(_SPLIT_FRACTIONS[1] * len(idx))
        train.append(idx[:n_train])
        val.append(idx[n_train:n_train + n_val])
        test.append(idx[n_train + n_val:])
    return {
        "train": np.sort(np.concatenate(train)),
        "val": np.sort(np.concatenate(val)),
        "test": np.sort(np.concatenate(test)),
    }


def generate_synthetic(seed: int, n_per_class: int, seq_len: int, feat_dim: int,
                       n_classes: int, separation: float) -> FeatureDataset:
    """Class-conditional Gaussian sequences.

    Each class draws one mean matrix (scaled by `separation`) from the seeded
    generator; samples add unit-variance noise. separation = 0 produces
    class-indistinguishable data.
    """
    if n_per_class < 1 or seq_len < 1 or feat_dim < 1 or n_classes < 2:
        raise ValueError("degenerate synthetic dimensions")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x53594E54]))
    means = separation * rng.normal(size=(n_classes, seq_len, feat_dim))
    feats = []
    labels = []
    for k in range(n_classes):
        noise = rng.normal(size=(n_per_class, seq_len, feat_dim))
        feats.append(means[k] + noise)
        labels.append(np.full(n_per_class, k, dtype=np.int64))
    features = np.concatenate(feats).astype(np.float32)
    labels = np.concatenate(labels)
    return FeatureDataset(features, labels, n_classes, make_stratified_splits(labels))


# ---------------------------------------------------------------------------
# QDVR binary format (little-endian):
#   magic "QDVR" | u32 version | u32 n_samples | u32 seq_len | u32 feat_dim
#   | u32 n_classes | per sample: u32 label + seq_len*feat_dim float32,
#   row-major (timestep-major). No padding.
# ---------------------------------------------------------------------------

def save_embeddings(path, dataset: FeatureDataset) -> None:
    header = QDVR_MAGIC + struct.pack(
        "<IIIII", QDVR_VERSION, dataset.n_samples, dataset.seq_len,
        dataset.feat_dim, dataset.n_classes)
    with open(path, "wb") as fh:
        fh.write(header)
        for label, sample in zip(dataset.labels, dataset.features):
            fh.write(struct.pack("<I", int(label)))
            fh.write(sample.astype("<f4").tobytes())


def load_embeddings(path) -> FeatureDataset:
    """Parse a QDVR file, validating magic, completeness, finiteness, and labels."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != QDVR_MAGIC:
        raise BadMagic(f"{path}: not a QDVR file")
    if len(blob) < 24:
        raise TruncatedFile(f"{path}: header truncated ({len(blob)} bytes)")
    version, n_samples, seq_len, feat_dim, n_classes = struct.unpack("<IIIII", blob[4:24])
    if version != QDVR_VERSION:
        raise QdvrFormatError(f"{path}: unsupported QDVR version {version}")
    if seq_len < 1 or feat_dim < 1 or n_classes < 1:
        raise QdvrFormatError(f"{path}: degenerate dimensions in header")
    sample_bytes = 4 + 4 * seq_len * feat_dim
    expected = 24 + n_samples * sample_bytes
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(blob)}")
    if len(blob) > expected:
        raise TruncatedFile(f"{path}: {len(blob) - expected} unexpected trailing bytes")
    labels = np.empty(n_samples, dtype=np.int64)
    features = np.empty((n_samples, seq_len, feat_dim), dtype=np.float32)
    off = 24
    for i in range(n_samples):
        labels[i] = struct.unpack_from("<I", blob, off)[0]
        off += 4
        row = np.frombuffer(blob, dtype="<f4", count=seq_len * feat_dim, offset=off)
        features[i] = row.reshape(seq_len, feat_dim)
        off += 4 * seq_len * feat_dim
    if not np.isfinite(features).all():
        bad = int(np.flatnonzero(~np.isfinite(features.reshape(n_samples, -1)).all(axis=1))[0])
        raise NonFiniteValue(f"{path}: non-finite feature values in sample {bad}")
    if labels.size and labels.max() >= n_classes:
        bad = int(np.flatnonzero(labels >= n_classes)[0])
        raise LabelOutOfRange(
            f"{path}: sample {bad} has label {labels[bad]} >= n_classes {n_classes}")
    return FeatureDataset(features, labels, n_classes, make_stratified_splits(labels))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    accuracy: float
    f1_macro: float
    f1_weighted: float
    kappa: float
    precision_macro: float
    recall_macro: float
    confusion: np.ndarray  # [K, K] counts, rows = true class

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "f1_weighted": self.f1_weighted,
            "kappa": self.kappa,
            "precision": self.precision_macro,
            "recall": self.recall_macro,
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(predictions: np.ndarray, labels: np.ndarray, n_classes: int) -> MetricsReport:
    """Accuracy, macro/weighted F1, Cohen's kappa, macro precision/recall.

    Per-class scores use 0 where undefined; classes absent from `labels`
    contribute 0 to the macro averages (with a warning).
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, predictions), 1)

    total = conf.sum()
    row = conf.sum(axis=1).astype(np.float64)  # true-class support
    col = conf.sum(axis=0).astype(np.float64)  # predicted-class counts
    diag = np.diag(conf).astype(np.float64)

    absent = np.flatnonzero(row == 0)
    if absent.size:
        warnings.warn(f"classes {absent.tolist()} absent from labels; "
                      "their per-class scores count as 0", stacklevel=2)
    precision = np.divide(diag, col, out=np.zeros(n_classes), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros(n_classes), where=row > 0)
    pr_sum = precision + recall
    f1 = np.divide(2 * precision * recall, pr_sum, out=np.zeros(n_classes), where=pr_sum > 0)

    accuracy = float(diag.sum() / total)
    p_expected = float((row * col).sum() / total ** 2)
    if p_expected >= 1.0:
        kappa = 1.0 if accuracy == 1.0 else 0.0
    else:
        kappa = float((accuracy - p_expected) / (1.0 - p_expected))
    return MetricsReport(
        accuracy=accuracy,
        f1_macro=float(f1.mean()),
        f1_weighted=float((row / total * f1).sum()),
        kappa=kappa,
        precision_macro=float(precision.mean()),
        recall_macro=float(recall.mean()),
        confusion=conf,
    )


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------

@dataclass
class ParamReport:
    """Trainable-parameter breakdown mirroring the head's parameter groups."""

    projection: int
    lcu: int
    qsvt: int
    qff_per_candidate: dict[int, int]
    qff_total: int
    qff_selected: int | None
    classifier: int
    structural: int

    @property
    def total(self) -> int:
        return (self.projection + self.lcu + self.qsvt + self.qff_total
                + self.classifier + self.structural)

    def as_dict(self) -> dict:
        return {
            "projection": self.projection,
            "lcu": self.lcu,
            "qsvt": self.qsvt,
            "qff_per_candidate": {str(k): v for k, v in self.qff_per_candidate.items()},
            "qff_total": self.qff_total,
            "qff_selected": self.qff_selected,
            "classifier": self.classifier,
            "structural": self.structural,
            "total": self.total,
        }

    def format_table(self) -> str:
        rows = [
            ("Feature Projection", self.projection),
            ("LCU Attention (logits + phases)", self.lcu),
            ("Polynomial Coefficients", self.qsvt),
            ("Quantum Feed-Forward Angles", self.qff_total),
            ("Classifier", self.classifier),
            ("Structural Weights", self.structural),
            ("Total", self.total),
        ]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  {count:>10d}" for name, count in rows]
        if self.qff_selected is not None:
            lines.insert(4, f"{'  (selected candidate)':<{width}}  {self.qff_selected:>10d}")
        return "\n".join(lines)


def param_report(cfg: HeadConfig,
                 selected: tuple[CandidateDescriptor, CandidateDescriptor] | None = None
                 ) -> ParamReport:
    """Per-group trainable-parameter counts.

    Without a selected architecture the report describes search mode: all 24
    feed-forward candidates are trainable and the 24 + 24 structural weights
    count. With one, only the selected feed-forward candidate's angles count.
    """
    qff_descs = cfg.qff_candidates()
    per_candidate = {i: param_count(d, cfg.n_qubits) for i, d in enumerate(qff_descs)}
    if selected is None:
        qff_total = sum(per_candidate.values())
        qff_selected = None
        structural = 2 * len(qff_descs)
    else:
        qff_selected = param_count(selected[1], cfg.n_qubits)
        qff_total = qff_selected
        structural = 0
    return ParamReport(
        projection=cfg.n_angle_slots * cfg.feat_dim + cfg.n_angle_slots,
        lcu=2 * cfg.seq_len,
        qsvt=cfg.qsvt_degree + 1,
        qff_per_candidate=per_candidate,
        qff_total=qff_total,
        qff_selected=qff_selected,
        classifier=3 * cfg.n_qubits * cfg.n_classes + cfg.n_classes,
        structural=structural,
    )
