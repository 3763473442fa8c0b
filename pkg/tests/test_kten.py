"""KTEN container: bit-exact round-trips, header validation, PGM export."""

import struct

import numpy as np
import pytest

from kronmri.errors import ShapeError
from kronmri.kten import read_kten, write_kten, write_pgm
from kronmri.rng import Rng


class TestRoundTrip:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("shape", [(), (1,), (5,), (3, 4), (2, 3, 4, 5)])
    def test_bit_exact(self, tmp_path, dtype, shape):
        arr = Rng(1).uniform(shape if shape else (1,), -10, 10, dtype=dtype)
        arr = arr.reshape(shape)
        path = tmp_path / "t.kten"
        write_kten(path, arr)
        back = read_kten(path)
        assert back.dtype == dtype
        assert back.shape == shape
        assert back.tobytes() == arr.tobytes()

    def test_special_values_survive(self, tmp_path):
        arr = np.array([0.0, -0.0, 1e-300, -1e300, np.pi], dtype=np.float64)
        path = tmp_path / "s.kten"
        write_kten(path, arr)
        back = read_kten(path)
        assert arr.tobytes() == back.tobytes()

    def test_header_layout(self, tmp_path):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        path = tmp_path / "h.kten"
        write_kten(path, arr)
        raw = path.read_bytes()
        assert raw[:4] == b"KTEN"
        assert raw[4] == 0x01  # version
        assert raw[5] == 0x01  # float32
        assert raw[6] == 2     # rank
        assert struct.unpack("<QQ", raw[7:23]) == (2, 3)
        assert len(raw) == 23 + 6 * 4

    def test_rejects_int_array(self, tmp_path):
        with pytest.raises(ShapeError):
            write_kten(tmp_path / "i.kten", np.arange(3))


class TestReadValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(OSError):
            read_kten(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v"
        path.write_bytes(b"KTEN" + bytes([9, 1, 0]))
        with pytest.raises(OSError):
            read_kten(path)

    def test_truncated_payload(self, tmp_path):
        good = tmp_path / "g.kten"
        write_kten(good, np.ones(10, dtype=np.float64))
        clipped = tmp_path / "c.kten"
        clipped.write_bytes(good.read_bytes()[:-4])
        with pytest.raises(OSError):
            read_kten(clipped)

    def test_trailing_garbage(self, tmp_path):
        good = tmp_path / "g.kten"
        write_kten(good, np.ones(4, dtype=np.float32))
        padded = tmp_path / "p.kten"
        padded.write_bytes(good.read_bytes() + b"\x00")
        with pytest.raises(OSError):
            read_kten(padded)


class TestPgm:
    def test_bilevel_mask(self, tmp_path):
        mask = np.array([[1.0, 0.0, 1.0, 1.0]])
        path = tmp_path / "m.pgm"
        write_pgm(path, mask, maxval=1)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n4 1\n1\n")
        assert raw[len(b"P5\n4 1\n1\n"):] == bytes([1, 0, 1, 1])

    def test_grayscale_range(self, tmp_path):
        img = np.linspace(0, 1, 16).reshape(4, 4)
        path = tmp_path / "g.pgm"
        write_pgm(path, img)
        raw = path.read_bytes()
        header = b"P5\n4 4\n255\n"
        assert raw.startswith(header)
        pix = np.frombuffer(raw[len(header):], dtype=np.uint8)
        assert pix[0] == 0 and pix[-1] == 255
        assert len(pix) == 16

    def test_rejects_3d(self, tmp_path):
        with pytest.raises(ShapeError):
            write_pgm(tmp_path / "x.pgm", np.zeros((2, 2, 2)))
