import numpy as np
import pytest
from hypothesis import given
from hypothesis.extra.numpy import array_shapes, arrays

from multiflow.exceptions import FormatError
from multiflow.tensorfile import decode_tensor, encode_tensor, read_tensor, write_tensor

# [1.0, 2.0] as float32: magic, version 1, tag 0, rank 1, extent 2, payload
GOLDEN_F32 = bytes.fromhex("4d46544e" "0100" "00" "01" "02000000" "0000803f" "00000040")
GOLDEN_U8 = bytes.fromhex("4d46544e" "0100" "01" "02" "02000000" "01000000" "0001")


def test_golden_layouts():
    assert encode_tensor(np.array([1.0, 2.0], np.float32)) == GOLDEN_F32
    assert encode_tensor(np.array([[0], [1]], np.uint8)) == GOLDEN_U8
    np.testing.assert_array_equal(decode_tensor(GOLDEN_F32), [1.0, 2.0])
    assert decode_tensor(GOLDEN_U8).shape == (2, 1)


def test_random_file_round_trip_is_bit_identical(tmp_path, rng):
    x = rng.normal(size=(3, 4, 5)).astype(np.float32)
    path = tmp_path / "x.mftn"
    write_tensor(path, x)
    y = read_tensor(path)
    assert y.dtype == np.float32 and y.shape == x.shape
    assert y.tobytes() == x.tobytes()
    assert path.read_bytes() == encode_tensor(y)


@given(arrays(np.float32, array_shapes(min_dims=1, max_dims=4, max_side=5)))
def test_round_trip_preserves_every_bit(x):
    # NaN payloads and signed zeros included
    assert decode_tensor(encode_tensor(x)).tobytes() == x.tobytes()


def test_bool_is_stored_as_uint8():
    out = decode_tensor(encode_tensor(np.array([True, False])))
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, [1, 0])


@pytest.mark.parametrize("bad", [np.zeros((2, 0), np.float32), np.float32(1.0),
                                 np.zeros(3, np.float64), np.zeros(3, np.int32)])
def test_unencodable_arrays_rejected(bad):
    with pytest.raises(FormatError):
        encode_tensor(bad)


def test_truncation_reports_exact_offset():
    buf = encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert len(buf) == 16 + 24
    for cut in (3, 10, 16, 17, 39):
        with pytest.raises(FormatError) as info:
            decode_tensor(buf[:cut])
        assert info.value.offset == cut
        assert f"byte offset {cut}" in str(info.value)


@pytest.mark.parametrize("pos, value, offset, what", [
    (0, b"X", 0, "magic"), (4, b"\x02", 4, "version"), (6, b"\x07", 6, "dtype"),
    (7, b"\x00", 7, "rank"), (8, b"\x00\x00\x00\x00", 8, "empty extent"),
])
def test_corrupted_header_fields(pos, value, offset, what):
    buf = bytearray(GOLDEN_F32)
    buf[pos:pos + len(value)] = value
    with pytest.raises(FormatError, match=what) as info:
        decode_tensor(bytes(buf))
    assert info.value.offset == offset


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError, match="trailing") as info:
        decode_tensor(GOLDEN_F32 + b"\x00")
    assert info.value.offset == len(GOLDEN_F32)
