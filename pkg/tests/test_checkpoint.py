import numpy as np
import pytest

from turbomingru.checkpoint import (
    CheckpointError,
    CheckpointHeader,
    decode_checkpoint,
    encode_checkpoint,
    load_model,
    model_arrays,
    read_checkpoint,
    save_model,
)
from turbomingru.codec import DecoderModel, EncoderModel, Interleaver, decode, encode


@pytest.fixture
def models():
    pi = Interleaver.random(12, 4)
    r = np.random.default_rng(2)
    enc = EncoderModel.init(pi, features=3, sub_blocks=2, rng=r)
    dec = DecoderModel.init(pi, iterations=2, features=3, layers=2, hidden=7, kernel_size=3, rng=r)
    return enc, dec


def test_round_trip_bit_exact(models, tmp_path):
    enc, dec = models
    path = tmp_path / "m.ntmg"
    save_model(path, enc, dec)
    enc2, dec2 = load_model(path)
    for a, b in zip(model_arrays(enc, dec).values(), model_arrays(enc2, dec2).values()):
        assert a.tobytes() == b.tobytes()
    assert enc2.interleaver == enc.interleaver
    u = np.random.default_rng(0).integers(0, 2, (5, 12))
    assert decode(encode(u, enc2), dec2).data.tobytes() == decode(encode(u, enc), dec).data.tobytes()
    save_model(tmp_path / "again.ntmg", enc2, dec2)
    assert (tmp_path / "again.ntmg").read_bytes() == path.read_bytes()


def test_header_fields(models, tmp_path):
    enc, dec = models
    save_model(tmp_path / "m.ntmg", enc, dec)
    header, arrays = read_checkpoint(tmp_path / "m.ntmg")
    assert (header.k, header.enc_features, header.dec_features, header.dec_layers, header.iterations) == (12, 3, 3, 2, 2)
    assert header.seed == 4
    assert next(iter(arrays)) == "interleaver.perm"


def test_raw_layout():
    blob = encode_checkpoint(CheckpointHeader(9, 2, 1, 1, 1, 1), {"w": np.array([[1.5, -2.0]], np.float32)})
    assert blob[:4] == b"NTMG"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:16], "little") == 9
    assert blob[-8:] == np.array([1.5, -2.0], "<f4").tobytes()
    header, arrays = decode_checkpoint(blob)
    assert header.seed == 9
    np.testing.assert_array_equal(arrays["w"], [[1.5, -2.0]])


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + (7).to_bytes(4, "little") + b[8:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b[:20], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_corrupt_files_rejected(models, mutate, match):
    blob = encode_checkpoint(CheckpointHeader(0, 1, 1, 1, 1, 1), {"w": np.ones((2, 2), np.float32)})
    with pytest.raises(CheckpointError, match=match):
        decode_checkpoint(mutate(blob))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "nope.ntmg")


def test_architecture_mismatch(models, tmp_path):
    enc, dec = models
    arrays = model_arrays(enc, dec)
    arrays.popitem()
    (tmp_path / "bad.ntmg").write_bytes(encode_checkpoint(CheckpointHeader(4, 12, 3, 3, 2, 2), arrays))
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "bad.ntmg")


def test_atomic_write_leaves_no_temp_files(models, tmp_path):
    save_model(tmp_path / "m.ntmg", *models)
    assert [p.name for p in tmp_path.iterdir()] == ["m.ntmg"]
