import struct

import numpy as np
import pytest

from scgnet import checkpoint as ck
from scgnet.gradcheck import micro_config
from scgnet.model import SCGNet
from scgnet.optim import Adam
from scgnet.tsr import CorruptFileError


def make():
    model = SCGNet(micro_config(0))
    opt = Adam(model.named_parameters(), lr=1e-3)
    for p in model.parameters():
        p.grad = np.ones_like(p.data)
    opt.step()
    return model, opt


def test_save_load_save_byte_identical(tmp_path):
    model, opt = make()
    first = ck.dumps(ck.capture("lr = 0.001\n", model, opt, epoch=3, step=17))
    path = tmp_path / "a.scgc"
    path.write_bytes(first)
    loaded = ck.load(str(path))
    assert loaded.meta("epoch") == 3 and loaded.meta("step") == 17
    assert loaded.config_text == "lr = 0.001\n"
    assert ck.dumps(loaded) == first

    model2, opt2 = make()
    for p in model2.parameters():
        p.data = p.data * 0
    ck.restore(loaded, model2, opt2)
    assert ck.dumps(ck.capture("lr = 0.001\n", model2, opt2, epoch=3, step=17)) == first


def test_header_layout():
    model, opt = make()
    buf = ck.dumps(ck.capture("x", model, opt))
    assert buf[:4] == b"SCGC"
    assert struct.unpack("<I", buf[4:8])[0] == 1
    assert struct.unpack("<I", buf[8:12])[0] == 1 and buf[12:13] == b"x"
    names = ck.loads(buf).entries
    assert all(k.split("/")[0] in ("param", "buffer", "optim", "meta") for k in names)


@pytest.mark.parametrize("cut", [3, 10, 40, -1])
def test_truncated_file_is_rejected(cut):
    model, opt = make()
    buf = ck.dumps(ck.capture("", model, opt))
    with pytest.raises(CorruptFileError):
        ck.loads(buf[:cut])


def test_trailing_bytes_rejected():
    model, _ = make()
    with pytest.raises(CorruptFileError):
        ck.loads(ck.dumps(ck.capture("", model)) + b"\0")


def test_version_mismatch():
    model, _ = make()
    buf = bytearray(ck.dumps(ck.capture("", model)))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(ck.VersionMismatchError):
        ck.loads(bytes(buf))


def test_bad_magic():
    with pytest.raises(CorruptFileError):
        ck.loads(b"NOPE" + b"\0" * 20)


def test_restore_checks_before_mutating():
    model, _ = make()
    ckpt = ck.capture("", model)
    other = SCGNet(micro_config(1))
    before = [p.data.copy() for p in other.parameters()]
    key = next(k for k in ckpt.entries if k.startswith("param/"))
    ckpt.entries[key] = np.zeros((1, 1))
    with pytest.raises(CorruptFileError):
        ck.restore(ckpt, other)
    for b, p in zip(before, other.parameters()):
        np.testing.assert_array_equal(b, p.data)
