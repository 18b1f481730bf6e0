"""Checkpoint binary format and netpbm raster round trips."""

import numpy as np
import pytest

from udhf2.checkpoint import (
    MAGIC,
    apply_state,
    load_checkpoint,
    save_checkpoint,
    state_of,
)
from udhf2.errors import CheckpointError, ParameterError
from udhf2.netpbm import (
    image_from_uint8,
    image_to_uint8,
    read_pgm,
    read_ppm,
    write_pgm,
    write_ppm,
)
from udhf2.nn import Conv2d, Module


class TinyModel(Module):
    def __init__(self, rng):
        super().__init__()
        self.first = Conv2d(3, 4, 3, rng)
        self.second = Conv2d(4, 2, 1, rng)


def sample_state(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "alpha.weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "alpha.bias": rng.standard_normal(4).astype(np.float32),
        "beta.scale": rng.standard_normal((7,)).astype(np.float64),
    }


class TestCheckpointFormat:
    def test_round_trip_is_bit_identical(self, tmp_path):
        path = tmp_path / "model.ckpt"
        again = tmp_path / "again.ckpt"
        state = sample_state()
        save_checkpoint(path, state)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(state)
        for name in state:
            assert loaded[name].dtype == state[name].dtype
            assert np.array_equal(loaded[name], state[name])
        save_checkpoint(again, loaded)
        assert path.read_bytes() == again.read_bytes()

    def test_magic_and_version_are_enforced(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, sample_state())
        blob = bytearray(path.read_bytes())
        bad_magic = tmp_path / "magic.ckpt"
        bad_magic.write_bytes(b"NOPE" + bytes(blob[4:]))
        with pytest.raises(CheckpointError, match="UDHF"):
            load_checkpoint(bad_magic)
        bad_version = tmp_path / "version.ckpt"
        blob[4] = 99
        bad_version.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(bad_version)

    def test_truncation_reports_byte_offset(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, sample_state())
        blob = path.read_bytes()
        for cut in (2, 8, 20, len(blob) - 3):
            short = tmp_path / f"cut{cut}.ckpt"
            short.write_bytes(blob[:cut])
            with pytest.raises(CheckpointError, match="byte"):
                load_checkpoint(short)

    def test_trailing_garbage_is_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, sample_state())
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_apply_reports_name_differences(self, tmp_path):
        rng = np.random.default_rng(1)
        model = TinyModel(rng)
        state = state_of(model)
        renamed = {("third.weight" if k == "second.weight" else k): v
                   for k, v in state.items()}
        with pytest.raises(CheckpointError, match="second.weight"):
            apply_state(model, renamed)
        with pytest.raises(CheckpointError, match="third.weight"):
            apply_state(model, renamed)

    def test_apply_round_trip_through_disk(self, tmp_path):
        rng = np.random.default_rng(2)
        model = TinyModel(rng)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, state_of(model))
        other = TinyModel(np.random.default_rng(3))
        apply_state(other, load_checkpoint(path))
        for (_, a), (_, b) in zip(model.named_parameters(),
                                  other.named_parameters()):
            assert np.array_equal(a.data, b.data)

    def test_unsupported_dtype_is_rejected(self, tmp_path):
        with pytest.raises(CheckpointError, match="dtype"):
            save_checkpoint(tmp_path / "bad.ckpt",
                            {"x": np.zeros(3, dtype=np.int32)})


class TestNetpbm:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        raster = rng.integers(0, 256, size=(9, 7), dtype=np.uint8)
        path = tmp_path / "labels.pgm"
        write_pgm(path, raster)
        assert np.array_equal(read_pgm(path), raster)

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        image = rng.integers(0, 256, size=(5, 8, 3), dtype=np.uint8)
        path = tmp_path / "frame.ppm"
        write_ppm(path, image)
        assert np.array_equal(read_ppm(path), image)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "frame.ppm"
        write_ppm(path, np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(ParameterError):
            read_pgm(path)

    def test_shape_validation(self, tmp_path):
        with pytest.raises(ParameterError):
            write_pgm(tmp_path / "x.pgm", np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(ParameterError):
            write_ppm(tmp_path / "x.ppm", np.zeros((4, 4), dtype=np.uint8))

    def test_float_conversion_round_trip(self):
        values = np.linspace(0.0, 1.0, 32, dtype=np.float32).reshape(4, 8)
        raw = image_to_uint8(values)
        back = image_from_uint8(raw)
        assert np.abs(back - values).max() <= 0.5 / 255.0 + 1e-6
