"""Dataset ingestion, deterministic splitting, negative pairs, mask preselection.

The dataset CSV contract: UTF-8, comma-separated, header row exactly
``epitope,cdr3_alpha,cdr3_beta,v_alpha,j_alpha,v_beta,j_beta,full_alpha,full_beta``;
an empty cell means the optional field is absent. Pretraining corpora are
plain text, one sequence per line.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .vocab import AMINO_ACIDS, TokenSequence

DATASET_COLUMNS = [
    "epitope",
    "cdr3_alpha",
    "cdr3_beta",
    "v_alpha",
    "j_alpha",
    "v_beta",
    "j_beta",
    "full_alpha",
    "full_beta",
]

_CANONICAL = set(AMINO_ACIDS)

MASK_PRESELECT_RATIO = 0.15


def round_half_away(x: float) -> int:
    """Round half away from zero, for cross-platform determinism (not banker's)."""
    import math

    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


@dataclass
class PairedRecord:
    """One dataset row; optional fields are None when the CSV cell is empty."""

    epitope: str
    cdr3_alpha: str | None = None
    cdr3_beta: str | None = None
    v_alpha: str | None = None
    j_alpha: str | None = None
    v_beta: str | None = None
    j_beta: str | None = None
    full_alpha: str | None = None
    full_beta: str | None = None

    def validate(self, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        if not self.epitope:
            raise DataError(f"empty epitope{where}")
        for name in ("epitope", "cdr3_alpha", "cdr3_beta", "full_alpha", "full_beta"):
            seq = getattr(self, name)
            if seq is None:
                continue
            bad = next((ch for ch in seq if ch not in _CANONICAL), None)
            if bad is not None:
                raise DataError(f"invalid residue {bad!r} in {name}{where}")
        if self.full_alpha is not None and self.cdr3_alpha is not None:
            if self.cdr3_alpha not in self.full_alpha:
                raise DataError(f"cdr3_alpha not contained in full_alpha{where}")
        if self.full_beta is not None and self.cdr3_beta is not None:
            if self.cdr3_beta not in self.full_beta:
                raise DataError(f"cdr3_beta not contained in full_beta{where}")


def load_dataset(path: str | Path) -> list[PairedRecord]:
    """Parse the paired-record CSV; rejects bad headers, field counts and residues."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty dataset file: {path}") from None
        if header != DATASET_COLUMNS:
            raise DataError(
                f"bad header in {path}: expected {','.join(DATASET_COLUMNS)}, got {','.join(header)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(DATASET_COLUMNS):
                raise DataError(f"line {line_no}: expected {len(DATASET_COLUMNS)} fields, got {len(row)}")
            fields = {k: (v if v != "" else None) for k, v in zip(DATASET_COLUMNS, row)}
            rec = PairedRecord(epitope=fields["epitope"] or "", **{k: fields[k] for k in DATASET_COLUMNS[1:]})
            rec.validate(line_no)
            records.append(rec)
    return records


def load_corpus(path: str | Path) -> list[str]:
    """Plain-text corpus: one sequence per line, blank lines skipped."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            seq = line.strip()
            if not seq:
                continue
            bad = next((ch for ch in seq if ch not in _CANONICAL), None)
            if bad is not None:
                raise DataError(f"line {line_no}: invalid residue {bad!r}")
            seqs.append(seq)
    return seqs


def split(records: list, ratio: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle then exact partition with |train| = round(ratio * N)."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(records)
    if n < 2:
        raise DataError(f"need at least 2 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = round_half_away(ratio * n)
    train = [records[i] for i in order[:n_train]]
    evals = [records[i] for i in order[n_train:]]
    return train, evals


def make_negatives(pairs: list[tuple[str, str]], seed: int, max_attempts: int = 1000) -> list[tuple[str, str]]:
    """Permute the cdr3 column so no output pair appears among the input pairs.

    Resamples with an incremented seed until the permutation is a derangement
    against the positive set; both column marginals are preserved by construction.
    """
    if len({c for _, c in pairs}) < 2:
        raise DataError("need at least 2 distinct cdr3 values to build negatives")
    positives = set(pairs)
    epitopes = [e for e, _ in pairs]
    cdr3s = [c for _, c in pairs]
    for attempt in range(max_attempts):
        perm = np.random.default_rng(seed + attempt).permutation(len(pairs))
        candidate = [(epitopes[i], cdr3s[perm[i]]) for i in range(len(pairs))]
        if all(p not in positives for p in candidate):
            return candidate
    raise DataError(f"no derangement found in {max_attempts} attempts")


@dataclass
class MaskCandidates:
    """Preselected maskable positions for one tokenized sequence."""

    positions: list[int]

    @property
    def count(self) -> int:
        return len(self.positions)


def preselect_mask_candidates(tokens: TokenSequence, seed: int) -> MaskCandidates:
    """Sample M = max(1, round(0.15 * length)) distinct non-pad positions."""
    if tokens.length < 1:
        raise DataError("cannot preselect mask candidates for an empty sequence")
    m = max(1, round_half_away(MASK_PRESELECT_RATIO * tokens.length))
    rng = np.random.default_rng(seed)
    positions = rng.choice(tokens.length, size=m, replace=False)
    return MaskCandidates(positions=sorted(int(p) for p in positions))
