"""Binary model container: round trips, header validation, and precise
corruption diagnostics."""

from __future__ import annotations

import numpy as np
import pytest

from mtdlite.classifier import predict_batch
from mtdlite.errors import FormatError
from mtdlite.model_io import FORMAT_VERSION, MAGIC, load_model, save_model


@pytest.fixture(scope="module")
def probes():
    return np.abs(np.random.default_rng(77).normal(20, 8, size=(64, 80)))


@pytest.mark.parametrize("which", ["tree", "forest", "knn"])
def test_round_trip_prediction_equality(which, tiny_tree, tiny_forest,
                                        tiny_knn, probes, tmp_path):
    model = {"tree": tiny_tree, "forest": tiny_forest, "knn": tiny_knn}[which]
    path = tmp_path / f"{which}.bin"
    save_model(model, path)
    back = load_model(path)
    c0, p0 = predict_batch(model, probes)
    c1, p1 = predict_batch(back, probes)
    assert np.array_equal(c0, c1)
    assert np.array_equal(p0, p1)
    assert back.classes == model.classes


def test_file_starts_with_magic_and_version(tiny_tree, tmp_path):
    path = tmp_path / "m.bin"
    save_model(tiny_tree, path)
    blob = path.read_bytes()
    assert blob[:4] == MAGIC
    assert int.from_bytes(blob[4:6], "little") == FORMAT_VERSION


def test_bad_magic_reports_offset(tmp_path):
    path = tmp_path / "m.bin"
    path.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert "offset 0" in str(err.value)


def test_wrong_version_names_both(tiny_tree, tmp_path):
    path = tmp_path / "m.bin"
    save_model(tiny_tree, path)
    blob = bytearray(path.read_bytes())
    blob[4:6] = (9).to_bytes(2, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as err:
        load_model(path)
    msg = str(err.value)
    assert "9" in msg and "1" in msg


def test_truncation_reports_offset(tiny_forest, tmp_path):
    path = tmp_path / "m.bin"
    save_model(tiny_forest, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert "offset" in str(err.value)


def test_trailing_bytes_rejected(tiny_knn, tmp_path):
    path = tmp_path / "m.bin"
    save_model(tiny_knn, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        load_model(path)


def test_unknown_kind_rejected(tiny_tree, tmp_path):
    path = tmp_path / "m.bin"
    save_model(tiny_tree, path)
    blob = bytearray(path.read_bytes())
    blob[6] = 42  # kind byte
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert "kind" in str(err.value)
