"""Token vocabularies for amino-acid sequences and gene labels.

Fixed layout: PAD=0, the 20 canonical amino acids in alphabetical one-letter
order at 1..20, then MASK=21, BOS=22, EOS=23, UNK=24. Checkpoints depend on
this layout, so it is frozen here rather than configurable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"

PAD_ID = 0
MASK_ID = 21
BOS_ID = 22
EOS_ID = 23
UNK_ID = 24

_SPECIAL_NAMES = ["<pad>", "<mask>", "<bos>", "<eos>", "<unk>"]


@dataclass(frozen=True)
class Vocabulary:
    """Integer codes for residues plus special tokens."""

    symbols: tuple[str, ...]
    pad_id: int = PAD_ID
    mask_id: int = MASK_ID
    bos_id: int = BOS_ID
    eos_id: int = EOS_ID
    unk_id: int = UNK_ID
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def residue_id(self, ch: str) -> int:
        i = self._index.get(ch)
        if i is None or not (1 <= i <= 20):
            raise DataError(f"non-canonical residue {ch!r}")
        return i

    def is_residue(self, tok_id: int) -> bool:
        return 1 <= tok_id <= 20


def default_vocabulary() -> Vocabulary:
    symbols = ["<pad>"] + list(AMINO_ACIDS) + ["<mask>", "<bos>", "<eos>", "<unk>"]
    return Vocabulary(symbols=tuple(symbols))


VOCAB = default_vocabulary()
VOCAB_SIZE = len(VOCAB)


@dataclass
class TokenSequence:
    """Integer-encoded sequence; ids may carry trailing pads, length counts non-pad tokens."""

    ids: list[int]
    length: int


def encode(seq: str, scheme: str = "plain") -> TokenSequence:
    """Encode a residue string, either bare ('plain') or BOS/EOS-wrapped ('bos_eos')."""
    if not seq:
        raise DataError("cannot encode an empty sequence")
    if scheme not in ("plain", "bos_eos"):
        raise DataError(f"unknown encoding scheme {scheme!r}")
    ids = []
    for pos, ch in enumerate(seq, start=1):
        idx = VOCAB._index.get(ch)
        if idx is None or not VOCAB.is_residue(idx):
            raise DataError(f"non-canonical character {ch!r} at position {pos}")
        ids.append(idx)
    if scheme == "bos_eos":
        ids = [VOCAB.bos_id] + ids + [VOCAB.eos_id]
    return TokenSequence(ids=ids, length=len(ids))


def decode(ids) -> str:
    """Inverse of encode: drops pads and special tokens, keeps residues."""
    return "".join(AMINO_ACIDS[i - 1] for i in ids if 1 <= i <= 20)


def pad_batch(sequences: list[TokenSequence], max_len: int | None = None) -> np.ndarray:
    """Right-pad token sequences with PAD to a common length; returns int64 [B, S]."""
    if not sequences:
        raise DataError("cannot pad an empty batch")
    width = max(s.length for s in sequences)
    if max_len is not None:
        if width > max_len:
            raise DataError(f"sequence length {width} exceeds maximum {max_len}")
        width = max_len
    out = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
    for r, s in enumerate(sequences):
        out[r, : s.length] = s.ids
    return out


def encode_batch(seqs: list[str], scheme: str = "plain", max_len: int | None = None) -> np.ndarray:
    return pad_batch([encode(s, scheme) for s in seqs], max_len=max_len)


@dataclass(frozen=True)
class GeneVocab:
    """Ordered unique V/J gene labels for one chain, built from the training split."""

    v_labels: tuple[str, ...]
    j_labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.v_labels)) != len(self.v_labels):
            raise DataError("duplicate V gene labels")
        if len(set(self.j_labels)) != len(self.j_labels):
            raise DataError("duplicate J gene labels")

    def v_index(self, label: str) -> int:
        try:
            return self.v_labels.index(label)
        except ValueError:
            raise DataError(f"unknown V gene label {label!r}") from None

    def j_index(self, label: str) -> int:
        try:
            return self.j_labels.index(label)
        except ValueError:
            raise DataError(f"unknown J gene label {label!r}") from None


def build_gene_vocab(records, chain: str) -> GeneVocab:
    """Collect V/J labels for a chain in first-appearance order over the records."""
    v_labels: list[str] = []
    j_labels: list[str] = []
    for rec in records:
        v = rec.v_alpha if chain == "alpha" else rec.v_beta
        j = rec.j_alpha if chain == "alpha" else rec.j_beta
        if v is not None and v not in v_labels:
            v_labels.append(v)
        if j is not None and j not in j_labels:
            j_labels.append(j)
    return GeneVocab(v_labels=tuple(v_labels), j_labels=tuple(j_labels))
