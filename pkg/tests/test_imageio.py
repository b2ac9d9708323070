import numpy as np
import pytest

from qisthresh import imageio
from qisthresh.forward import BitCube, ThresholdMap


def test_pgm_round_trip(tmp_path):
    img = np.arange(12).reshape(3, 4) / 11.0
    imageio.write_pgm(tmp_path / "a.pgm", img)
    back = imageio.read_pgm(tmp_path / "a.pgm")
    assert back.shape == (3, 4)
    assert np.allclose(back, np.round(img * 255) / 255)


def test_pgm_with_comment(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
    assert np.allclose(imageio.read_pgm(p), [[0.0, 1.0]])


def test_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "b.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(imageio.FormatError):
        imageio.read_pgm(p)
    p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(imageio.FormatError):
        imageio.read_pgm(p)


def test_csv_round_trip_exact(tmp_path):
    img = np.random.default_rng(0).uniform(size=(3, 5))
    imageio.write_csv_image(tmp_path / "x.csv", img)
    assert np.array_equal(imageio.read_csv_image(tmp_path / "x.csv"), img)


def test_qisb_layout(tmp_path):
    bits = np.zeros((2, 3, 3), dtype=np.uint8)
    bits[0, 0, 0] = 1
    bits[1, 2, 2] = 1
    imageio.write_qisb(tmp_path / "b.qisb", BitCube(bits))
    raw = (tmp_path / "b.qisb").read_bytes()
    assert raw[:4] == b"QISB"
    assert int.from_bytes(raw[4:8], "little") == 9
    assert int.from_bytes(raw[8:12], "little") == 2
    assert raw[12:] == bytes([0x80, 0x00, 0x00, 0x80])
    back = imageio.read_qisb(tmp_path / "b.qisb", (3, 3))
    assert np.array_equal(back.bits, bits)


def test_qisb_errors(tmp_path):
    p = tmp_path / "bad.qisb"
    p.write_bytes(b"NOPE")
    with pytest.raises(imageio.FormatError):
        imageio.read_qisb(p, (1, 1))
    imageio.write_qisb(p, BitCube(np.ones((1, 2, 2), dtype=np.uint8)))
    with pytest.raises(imageio.FormatError):
        imageio.read_qisb(p, (3, 3))


def test_threshold_map_round_trip(tmp_path):
    m = ThresholdMap(2, 3, np.array([[1, 5], [9, 16]]))
    imageio.write_threshold_map(tmp_path / "m.csv", m)
    text = (tmp_path / "m.csv").read_text()
    assert text.splitlines()[0] == "blockw,blockh"
    back = imageio.read_threshold_map(tmp_path / "m.csv")
    assert (back.block_w, back.block_h) == (2, 3)
    assert np.array_equal(back.q_values, m.q_values)


def test_table_format(tmp_path):
    imageio.write_table(tmp_path / "t.csv", ["a", "b", "c"], [(1, 0.5, True), (2, 1e-20, False)])
    assert (tmp_path / "t.csv").read_bytes() == b"a,b,c\n1,0.5,1\n2,1e-20,0\n"
