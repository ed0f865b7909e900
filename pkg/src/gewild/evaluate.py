"""Prediction sets, accuracy, confusion, and the prediction-agreement metric.

Prediction files are TSV (`id class p0 p1 p2`), floats written with repr so
that write -> read -> write is byte-identical. Agreement between two
prediction sets is the fraction of shared clip ids assigned the same class;
at full scale the published cross-version agreements are 88%, 53%, and 90%,
which desk-scale runs are not expected to reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ManifestRecord
from .errors import EvalError, ParseError
from .model import GroupEmotionModel
from .nn import Tensor, no_grad, softmax
from .train import _collate, TrainConfig

PREDICTION_COLUMNS = ("id", "class", "p0", "p1", "p2")


@dataclass
class PredictionSet:
    tag: str
    ids: list[str]
    classes: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        self.classes = np.asarray(self.classes, dtype=np.int64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise EvalError(f"{self.tag or 'prediction set'}: duplicate clip ids")
        if self.classes.shape != (n,) or self.probs.shape != (n, 3):
            raise EvalError(
                f"shape mismatch: {n} ids, classes {self.classes.shape}, "
                f"probs {self.probs.shape}"
            )
        if n and not ((self.classes >= 0) & (self.classes <= 2)).all():
            raise EvalError("classes outside 0..2")
        if n and np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-5:
            raise EvalError("probability rows do not sum to 1")

    def __len__(self) -> int:
        return len(self.ids)

    def by_id(self) -> dict[str, int]:
        return dict(zip(self.ids, self.classes.tolist()))


def predict(
    model: GroupEmotionModel,
    records: list[ManifestRecord],
    provider,
    batch_size: int = 4,
    tag: str = "",
) -> PredictionSet:
    """Argmax predictions per clip; probability ties go to the lower class."""
    cfg = TrainConfig(
        n_frames=model.cfg.n_frames,
        use_video=model.cfg.use_video,
        use_audio=model.cfg.use_audio,
        batch_size=batch_size,
    )
    ids: list[str] = []
    classes: list[int] = []
    probs: list[np.ndarray] = []
    with no_grad():
        for lo in range(0, len(records), batch_size):
            batch = records[lo : lo + batch_size]
            frames, mels, _ = _collate(batch, provider, cfg)
            logits = model.forward(
                Tensor(frames) if frames is not None else None,
                Tensor(mels) if mels is not None else None,
            )
            p = softmax(logits).data.astype(np.float64)
            # np.argmax takes the first maximum, which is the lower class
            pred = np.argmax(p, axis=1)
            for rec, c, row in zip(batch, pred, p):
                ids.append(rec.clip_id)
                classes.append(int(c))
                probs.append(row)
    return PredictionSet(tag, ids, np.asarray(classes), np.asarray(probs))


def save_predictions(path: str | Path, pred: PredictionSet) -> None:
    lines = ["\t".join(PREDICTION_COLUMNS)]
    for cid, c, row in zip(pred.ids, pred.classes, pred.probs):
        p0, p1, p2 = (float(v) for v in row)
        lines.append(f"{cid}\t{int(c)}\t{p0!r}\t{p1!r}\t{p2!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_predictions(path: str | Path, tag: str | None = None) -> PredictionSet:
    path = Path(path)
    ids, classes, probs = [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if tuple(header.split("\t")) != PREDICTION_COLUMNS:
            raise ParseError(f"{path}: bad header {header!r}")
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 columns")
            try:
                ids.append(cols[0])
                classes.append(int(cols[1]))
                probs.append([float(c) for c in cols[2:]])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return PredictionSet(
        tag if tag is not None else path.stem,
        ids,
        np.asarray(classes),
        np.asarray(probs, dtype=np.float64),
    )


def _truth_by_id(truth) -> dict[str, int]:
    if isinstance(truth, dict):
        return truth
    return {r.clip_id: r.label for r in truth}


def _aligned_labels(pred: PredictionSet, truth) -> np.ndarray:
    table = _truth_by_id(truth)
    if len(pred) == 0:
        raise EvalError("empty prediction set")
    missing = [cid for cid in pred.ids if cid not in table]
    if missing:
        raise EvalError(
            f"{len(missing)} predicted ids missing from ground truth, "
            f"first: {missing[:5]}"
        )
    return np.asarray([table[cid] for cid in pred.ids], dtype=np.int64)


def accuracy(pred: PredictionSet, truth) -> float:
    labels = _aligned_labels(pred, truth)
    return float((pred.classes == labels).mean())


def confusion(pred: PredictionSet, truth) -> np.ndarray:
    """3x3 counts, rows ground truth, columns predictions."""
    labels = _aligned_labels(pred, truth)
    matrix = np.zeros((3, 3), dtype=np.int64)
    np.add.at(matrix, (labels, pred.classes), 1)
    return matrix


def prediction_agreement(a: PredictionSet, b: PredictionSet) -> float:
    """Fraction of shared clips given the same class by both sets."""
    if len(a) == 0 or len(b) == 0:
        raise EvalError("empty prediction set")
    ids_a, ids_b = set(a.ids), set(b.ids)
    if ids_a != ids_b:
        only_a = sorted(ids_a - ids_b)[:5]
        only_b = sorted(ids_b - ids_a)[:5]
        raise EvalError(
            f"prediction id sets differ: only in {a.tag or 'a'}: {only_a}, "
            f"only in {b.tag or 'b'}: {only_b}"
        )
    bmap = b.by_id()
    same = sum(1 for cid, c in zip(a.ids, a.classes) if bmap[cid] == int(c))
    return same / len(a)


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    precision: np.ndarray = field(init=False)
    recall: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        m = self.confusion.astype(np.float64)
        col = m.sum(axis=0)
        row = m.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.precision = np.where(col > 0, np.diag(m) / col, 0.0)
            self.recall = np.where(row > 0, np.diag(m) / row, 0.0)

    @classmethod
    def from_predictions(cls, pred: PredictionSet, truth) -> "EvalReport":
        matrix = confusion(pred, truth)
        return cls(float(np.trace(matrix)) / float(matrix.sum()), matrix)
