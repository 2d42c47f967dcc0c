import numpy as np
import pytest

from lsmtcr.checkpoint import load_checkpoint, read_manifest, require_meta, save_checkpoint, vocab_hash
from lsmtcr.errors import CheckpointError, ManifestMismatch


def arrays():
    rng = np.random.default_rng(0)
    return {
        "tok_emb": rng.normal(size=(5, 4)).astype(np.float32),
        "layers.0.w": rng.normal(size=(4, 4)).astype(np.float32),
        "bias": rng.normal(size=4).astype(np.float32),
    }


def test_round_trip_bit_exact(tmp_path):
    arrs = arrays()
    save_checkpoint(tmp_path / "ck", arrs, {"kind": "test", "n": 1})
    loaded, meta = load_checkpoint(tmp_path / "ck")
    assert meta == {"kind": "test", "n": 1}
    for name, arr in arrs.items():
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], arr)


def test_rewrite_is_byte_identical(tmp_path):
    arrs = arrays()
    save_checkpoint(tmp_path / "a", arrs, {"k": 1})
    save_checkpoint(tmp_path / "b", arrs, {"k": 1})
    for fname in ("manifest.txt", "weights.bin", "config.json"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()


def test_manifest_format(tmp_path):
    save_checkpoint(tmp_path / "ck", arrays(), {})
    lines = (tmp_path / "ck" / "manifest.txt").read_text().splitlines()
    assert lines[0] == "tok_emb\tf32\t5,4\t0"
    assert lines[1] == "layers.0.w\tf32\t4,4\t80"
    assert lines[2] == "bias\tf32\t4\t144"


def test_weights_little_endian_row_major(tmp_path):
    arr = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    save_checkpoint(tmp_path / "ck", {"w": arr}, {})
    raw = (tmp_path / "ck" / "weights.bin").read_bytes()
    assert raw == arr.astype("<f4").tobytes(order="C")


def test_truncated_weights_rejected(tmp_path):
    save_checkpoint(tmp_path / "ck", arrays(), {})
    wf = tmp_path / "ck" / "weights.bin"
    wf.write_bytes(wf.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck")


def test_bad_manifest_rejected(tmp_path):
    save_checkpoint(tmp_path / "ck", arrays(), {})
    (tmp_path / "ck" / "manifest.txt").write_text("only two\tfields\n")
    with pytest.raises(CheckpointError):
        read_manifest(tmp_path / "ck")


def test_nonexistent_directory_is_missing_input(tmp_path):
    from lsmtcr.errors import DataError

    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "absent")


def test_missing_manifest_in_existing_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "empty")


def test_require_meta():
    require_meta({"d_model": 64}, "d_model", 64)
    with pytest.raises(ManifestMismatch):
        require_meta({"d_model": 64}, "d_model", 128)


def test_vocab_hash_stable():
    assert vocab_hash(["a", "b"]) == vocab_hash(["a", "b"])
    assert vocab_hash(["a", "b"]) != vocab_hash(["b", "a"])
