import struct

import numpy as np
import pytest

from scgnet import tsr
from scgnet.tsr import CorruptFileError


def test_header_layout():
    buf = tsr.dumps(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:4] == b"TSR1"
    assert buf[4] == 1 and buf[5] == 2
    assert struct.unpack("<2Q", buf[6:22]) == (2, 3)
    assert len(buf) == 22 + 6 * 4


@pytest.mark.parametrize("dtype,code", [(np.float32, 1), (np.float64, 2)])
def test_roundtrip(tmp_path, dtype, code):
    arr = np.random.default_rng(0).normal(size=(3, 1, 4)).astype(dtype)
    path = tmp_path / "x.tsr"
    tsr.save(path, arr)
    assert path.read_bytes()[4] == code
    back = tsr.load(path)
    assert back.dtype == dtype
    np.testing.assert_array_equal(back, arr)


def test_scalar_roundtrip():
    arr, end = tsr.loads(tsr.dumps(np.array(2.5)))
    assert arr.shape == () and arr == 2.5 and end == 6 + 8


def test_truncated_and_bad_magic(tmp_path):
    buf = tsr.dumps(np.ones((4, 4)))
    with pytest.raises(CorruptFileError):
        tsr.loads(buf[:-3])
    with pytest.raises(CorruptFileError):
        tsr.loads(b"XXXX" + buf[4:])
    path = tmp_path / "t.tsr"
    path.write_bytes(buf + b"\0")
    with pytest.raises(CorruptFileError):
        tsr.load(path)
