"""Confusion-matrix accumulation, selective-prediction metrics, Dice.

A "case" is one (image, truth label) pair, so an image carrying several
CHD types contributes several cases.  A case is correct when its truth
label appears in the predicted label set; an Uncertain diagnosis parks
every one of the image's cases in the Uncertain column.  Coverage is the
fraction of cases not deferred; selective accuracy is accuracy over the
covered cases only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, FormatError, GridMismatchError
from .rules import CHDType, Diagnosis
from .volume import BinaryMask

CLASS_ORDER: tuple[CHDType, ...] = tuple(CHDType)
UNCERTAIN_COL = len(CLASS_ORDER)  # final column


@dataclass(frozen=True)
class ConfusionMatrix:
    """17x18 count grid: rows = truth classes, columns = classes + Uncertain."""

    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.counts, np.int64)
        if arr.shape != (len(CLASS_ORDER), len(CLASS_ORDER) + 1):
            raise FormatError(f"confusion matrix must be 17x18, got {arr.shape}")
        if (arr < 0).any():
            raise FormatError("confusion counts must be nonnegative")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_uncertain(self) -> int:
        return int(self.counts[:, UNCERTAIN_COL].sum())

    @property
    def n_correct(self) -> int:
        return int(np.trace(self.counts[:, : len(CLASS_ORDER)]))

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def row_sums(self) -> dict[str, int]:
        return {c.value: int(self.counts[i].sum()) for i, c in enumerate(CLASS_ORDER)}


def accumulate(preds: list[tuple[frozenset[CHDType], Diagnosis]]) -> ConfusionMatrix:
    """Tally (truth label set, diagnosis) pairs into a confusion matrix.

    Each truth label of an image contributes exactly one case.  Wrong
    non-Uncertain cases are charged to the first predicted label in class
    order (the choice never affects coverage or accuracy, which only read
    the diagonal and the Uncertain column).
    """
    counts = np.zeros((len(CLASS_ORDER), len(CLASS_ORDER) + 1), np.int64)
    index = {c: i for i, c in enumerate(CLASS_ORDER)}
    for truth, diag in preds:
        if not truth:
            raise FormatError("a case needs at least one truth label")
        for t in truth:
            row = index[t]
            if diag.uncertain:
                counts[row, UNCERTAIN_COL] += 1
            elif t in diag.labels:
                counts[row, row] += 1
            else:
                col = min(index[p] for p in diag.labels)
                counts[row, col] += 1
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """Coverage, selective accuracy, and full accuracy from a matrix."""
    total = cm.total
    if total == 0:
        raise EmptyInputError("empty confusion matrix")
    covered = total - cm.n_uncertain
    if covered == 0:
        raise EmptyInputError("selective accuracy undefined: every case is Uncertain")
    return {
        "coverage": covered / total,
        "selective_accuracy": cm.n_correct / covered,
        "full_accuracy": cm.n_correct / total,
    }


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """Overlap score 2|A∩B|/(|A|+|B|); two empty masks score 1."""
    if pred.dims != gt.dims or not np.allclose(pred.spacing, gt.spacing):
        raise GridMismatchError("dice requires identical grids")
    a = int(pred.bits.sum())
    b = int(gt.bits.sum())
    if a + b == 0:
        return 1.0
    inter = int((pred.bits & gt.bits).sum())
    return 2.0 * inter / (a + b)


# --- reports ------------------------------------------------------------------


def matrix_tsv(cm: ConfusionMatrix) -> str:
    """Matrix rendering with the Uncertain column first."""
    header = ["truth", "U"] + [c.value for c in CLASS_ORDER]
    lines = ["\t".join(header)]
    for i, c in enumerate(CLASS_ORDER):
        row = [c.value, str(int(cm.counts[i, UNCERTAIN_COL]))]
        row += [str(int(cm.counts[i, j])) for j in range(len(CLASS_ORDER))]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def parse_matrix_tsv(text: str) -> ConfusionMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split("\t")
    if header[:2] != ["truth", "U"]:
        raise FormatError("matrix TSV must start with 'truth<TAB>U<TAB>...'")
    cols = [CHDType.from_name(h) for h in header[2:]]
    counts = np.zeros((len(CLASS_ORDER), len(CLASS_ORDER) + 1), np.int64)
    rowidx = {c: i for i, c in enumerate(CLASS_ORDER)}
    for ln in lines[1:]:
        cells = ln.split("\t")
        r = rowidx[CHDType.from_name(cells[0])]
        counts[r, UNCERTAIN_COL] = int(cells[1])
        for c, val in zip(cols, cells[2:]):
            counts[r, rowidx[c]] = int(val)
    return ConfusionMatrix(counts)


def write_report(cm: ConfusionMatrix, directory: str | Path) -> dict[str, float]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "confusion_matrix.tsv").write_text(matrix_tsv(cm), encoding="utf-8")
    m = metrics(cm)
    payload = dict(m)
    payload.update(
        {"total_cases": cm.total, "uncertain_cases": cm.n_uncertain, "correct_cases": cm.n_correct}
    )
    (directory / "metrics.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return m


# --- bundled replay fixture -----------------------------------------------------


def bundled_replay_matrix() -> ConfusionMatrix:
    """Reference confusion tally bundled for arithmetic verification.

    Expected metrics on this fixture: coverage 88.8%, selective accuracy
    81.9%, full accuracy 72.7% (187 cases, 21 Uncertain, 136 correct).
    """
    text = resources.files("chdkit").joinpath("data/replay_counts.tsv").read_text("utf-8")
    return parse_matrix_tsv(text)


def replay_cases(cm: ConfusionMatrix) -> list[tuple[frozenset[CHDType], Diagnosis]]:
    """Expand a matrix back into synthetic single-label cases.

    Feeding the result to `accumulate` reproduces the matrix exactly,
    which is how end-to-end report plumbing is exercised without volumes.
    """
    out: list[tuple[frozenset[CHDType], Diagnosis]] = []
    for i, truth_cls in enumerate(CLASS_ORDER):
        for _ in range(int(cm.counts[i, UNCERTAIN_COL])):
            out.append(
                (
                    frozenset({truth_cls}),
                    Diagnosis(uncertain=True, labels=frozenset(), reasons=({"gate": "replay"},)),
                )
            )
        for j, pred_cls in enumerate(CLASS_ORDER):
            for _ in range(int(cm.counts[i, j])):
                out.append(
                    (
                        frozenset({truth_cls}),
                        Diagnosis(
                            uncertain=False,
                            labels=frozenset({pred_cls}),
                            reasons=({"rule": pred_cls.value, "replay": True},),
                        ),
                    )
                )
    return out
