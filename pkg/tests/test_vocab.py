import numpy as np
import pytest

from lsmtcr.errors import DataError
from lsmtcr.vocab import (
    AMINO_ACIDS,
    BOS_ID,
    EOS_ID,
    PAD_ID,
    VOCAB_SIZE,
    build_gene_vocab,
    decode,
    encode,
    encode_batch,
    pad_batch,
)
from lsmtcr.data import PairedRecord


def test_layout_is_frozen():
    assert PAD_ID == 0
    assert VOCAB_SIZE == 25
    assert encode("A").ids == [1]
    assert encode("C").ids == [2]
    assert encode("Y").ids == [20]


def test_encode_plain():
    assert encode("AC", "plain").ids == [1, 2]


def test_encode_bos_eos():
    assert encode("AC", "bos_eos").ids == [BOS_ID, 1, 2, EOS_ID]


def test_encode_rejects_noncanonical_with_position():
    # positions are 1-based in user-facing messages: X is the 2nd character
    with pytest.raises(DataError, match="position 2"):
        encode("AXC")


def test_encode_rejects_empty():
    with pytest.raises(DataError):
        encode("")


def test_round_trip_random_strings():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        s = "".join(AMINO_ACIDS[i] for i in rng.integers(0, 20, size=n))
        assert decode(encode(s, "plain").ids) == s
        assert decode(encode(s, "bos_eos").ids) == s


def test_pad_batch_right_pads():
    batch = pad_batch([encode("AC"), encode("ACDE")])
    assert batch.shape == (2, 4)
    assert batch[0].tolist() == [1, 2, 0, 0]
    assert batch[1].tolist() == [1, 2, 3, 4]


def test_pad_batch_rejects_overflow():
    with pytest.raises(DataError):
        encode_batch(["ACDE"], max_len=3)


def test_gene_vocab_order_and_lookup():
    records = [
        PairedRecord(epitope="ACD", v_beta="TRBV2", j_beta="TRBJ1"),
        PairedRecord(epitope="ACD", v_beta="TRBV1", j_beta="TRBJ1"),
        PairedRecord(epitope="ACD", v_beta="TRBV2", j_beta="TRBJ2"),
    ]
    gv = build_gene_vocab(records, "beta")
    assert gv.v_labels == ("TRBV2", "TRBV1")
    assert gv.j_labels == ("TRBJ1", "TRBJ2")
    assert gv.v_index("TRBV1") == 1
    with pytest.raises(DataError):
        gv.v_index("TRBV9")
