import numpy as np
import pytest

from lsmtcr.data import (
    DATASET_COLUMNS,
    load_corpus,
    load_dataset,
    make_negatives,
    preselect_mask_candidates,
    round_half_away,
    split,
)
from lsmtcr.errors import DataError
from lsmtcr.vocab import encode

HEADER = ",".join(DATASET_COLUMNS)


def write_csv(tmp_path, rows, header=HEADER):
    p = tmp_path / "data.csv"
    p.write_text("\n".join([header] + rows) + "\n")
    return p


def test_load_dataset_valid(tmp_path):
    p = write_csv(tmp_path, [
        "GILGFVFTL,CAVS,CASSIRSSYEQYF,TRAV1,TRAJ2,TRBV19,TRBJ2,MKCAVSLL,MKCASSIRSSYEQYFLL",
        "NLVPMVATV,,CASSL,,,TRBV5,TRBJ1,,MKCASSLGG",
        "ELAGIGILTV,,,,,,,,",
    ])
    records = load_dataset(p)
    assert len(records) == 3
    assert records[0].epitope == "GILGFVFTL"
    assert records[1].cdr3_alpha is None
    assert records[1].v_beta == "TRBV5"
    assert records[2].cdr3_beta is None


def test_load_dataset_rejects_bad_header(tmp_path):
    p = write_csv(tmp_path, ["GILG,,,,,,,,"], header="epitope,foo")
    with pytest.raises(DataError, match="bad header"):
        load_dataset(p)


def test_load_dataset_rejects_wrong_field_count(tmp_path):
    p = write_csv(tmp_path, ["GILG,CAVS"])
    with pytest.raises(DataError, match="line 2"):
        load_dataset(p)


def test_load_dataset_rejects_bad_residue_with_line(tmp_path):
    p = write_csv(tmp_path, [
        "GILG,,,,,,,,",
        "NLXV,,,,,,,,",
    ])
    with pytest.raises(DataError, match="line 3"):
        load_dataset(p)


def test_load_dataset_rejects_cdr3_not_in_full(tmp_path):
    p = write_csv(tmp_path, ["GILG,,CASSL,,,TRBV1,TRBJ1,,MKCAGGG"])
    with pytest.raises(DataError, match="line 2"):
        load_dataset(p)


def test_load_dataset_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_dataset(tmp_path / "nope.csv")


def test_load_corpus(tmp_path):
    p = tmp_path / "corpus.txt"
    p.write_text("CASSL\n\nCAVR\n")
    assert load_corpus(p) == ["CASSL", "CAVR"]


def test_round_half_away():
    assert round_half_away(0.5) == 1
    assert round_half_away(1.5) == 2
    assert round_half_away(2.5) == 3
    assert round_half_away(1.05) == 1
    assert round_half_away(-0.5) == -1


def test_split_sizes():
    train, evals = split(list(range(10)), 0.8, seed=1)
    assert (len(train), len(evals)) == (8, 2)
    train, evals = split(list(range(5)), 0.8, seed=1)
    assert (len(train), len(evals)) == (4, 1)


def test_split_deterministic_and_exact():
    items = list(range(37))
    for seed in range(5):
        a_train, a_eval = split(items, 0.8, seed)
        b_train, b_eval = split(items, 0.8, seed)
        assert a_train == b_train and a_eval == b_eval
        assert sorted(a_train + a_eval) == items
        assert set(a_train).isdisjoint(a_eval)


def test_split_rejects_tiny():
    with pytest.raises(DataError):
        split([1], 0.8, seed=0)
    with pytest.raises(DataError):
        split([1, 2], 1.0, seed=0)


def test_make_negatives_two_pairs():
    out = make_negatives([("e1", "c1"), ("e2", "c2")], seed=0)
    assert out == [("e1", "c2"), ("e2", "c1")]


def test_make_negatives_preserves_marginals_and_avoids_positives():
    rng = np.random.default_rng(3)
    epitopes = [f"EPI{chr(65 + i % 20)}" for i in range(100)]
    cdr3s = ["".join("ACDEFGHIKLMNPQRSTVWY"[j] for j in rng.integers(0, 20, 8)) for _ in range(100)]
    pairs = list(zip(epitopes, cdr3s))
    negatives = make_negatives(pairs, seed=11)
    assert set(negatives).isdisjoint(set(pairs))
    assert sorted(e for e, _ in negatives) == sorted(epitopes)
    assert sorted(c for _, c in negatives) == sorted(cdr3s)


def test_make_negatives_rejects_identical_cdr3s():
    with pytest.raises(DataError):
        make_negatives([("e1", "c"), ("e2", "c")], seed=0)


def test_preselect_counts():
    assert preselect_mask_candidates(encode("A" * 20), seed=0).count == 3
    got = preselect_mask_candidates(encode("A"), seed=0)
    assert got.positions == [0]
    assert preselect_mask_candidates(encode("A" * 7), seed=0).count == 1


def test_preselect_positions_in_range_and_distinct():
    for length in range(1, 33):
        tokens = encode("A" * length)
        for seed in range(3):
            got = preselect_mask_candidates(tokens, seed)
            assert len(set(got.positions)) == got.count
            assert all(0 <= p < length for p in got.positions)
            expected = max(1, round_half_away(0.15 * length))
            assert got.count == expected
