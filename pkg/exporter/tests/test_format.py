"""Unit checks on the model-document writer and the frame-stack reader."""

import hashlib
import json
import struct

import numpy as np
import pytest

from sdm_export import FormatError, QuantizedLayer, read_frame_stack, write_quantized_model


def tiny_layer(**overrides):
    rng = np.random.default_rng(5)
    fields = dict(
        weights=rng.integers(-127, 128, size=(4, 3, 3, 3)).astype(np.int8),
        weight_scale=0.01,
        bias=np.zeros(4, dtype=np.float32),
        stride=1,
        padding=1,
        activation="none",
        in_scale=0.004,
        in_zero_point=51,
        in_dtype="uint8",
        out_scale=0.02,
        out_zero_point=0,
        out_dtype="uint8",
    )
    fields.update(overrides)
    return QuantizedLayer(**fields)


def frame_stack_bytes(frames):
    buf = struct.pack("<4sI", b"SDT1", len(frames))
    for frame in frames:
        arr = np.asarray(frame, dtype="<f4")
        buf += struct.pack("<II", 0, arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    return buf


class TestModelDocument:
    def test_checksum_covers_the_sorted_body(self, tmp_path):
        """The stored checksum is the sha256 of the compact sorted document
        minus the checksum field itself."""
        path = str(tmp_path / "m.sdm")
        write_quantized_model([tiny_layer()], (3, 8, 8), path)
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        body = {k: v for k, v in doc.items() if k != "checksum"}
        digest = hashlib.sha256(
            json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()
        assert doc["checksum"] == digest

    def test_document_shape(self, tmp_path):
        path = str(tmp_path / "m.sdm")
        write_quantized_model([tiny_layer()], (3, 8, 8), path)
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        assert doc["format"] == "sdnn-model"
        assert doc["version"] == 1
        assert doc["kind"] == "quantized"
        assert doc["input_dims"] == [3, 8, 8]
        (layer,) = doc["layers"]
        assert layer["weight_qparams"] == {
            "scale": 0.01, "zero_point": 0, "dtype": "int8"}
        assert layer["in_qparams"]["zero_point"] == 51

    def test_writes_are_deterministic(self, tmp_path):
        path_a, path_b = str(tmp_path / "a.sdm"), str(tmp_path / "b.sdm")
        write_quantized_model([tiny_layer()], (3, 8, 8), path_a)
        write_quantized_model([tiny_layer()], (3, 8, 8), path_b)
        with open(path_a, "rb") as fa, open(path_b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_rejects_bad_weights(self, tmp_path):
        path = str(tmp_path / "m.sdm")
        bad = tiny_layer(weights=np.zeros((4, 3, 3, 3), dtype=np.float32))
        with pytest.raises(FormatError, match="int8"):
            write_quantized_model([bad], (3, 8, 8), path)
        with pytest.raises(FormatError, match="no layers"):
            write_quantized_model([], (3, 8, 8), path)


class TestFrameStack:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        frames = [rng.standard_normal((2, 4, 4)).astype(np.float32) for _ in range(3)]
        path = str(tmp_path / "f.sdt")
        with open(path, "wb") as fh:
            fh.write(frame_stack_bytes(frames))
        back = read_frame_stack(path)
        assert len(back) == 3
        for ours, theirs in zip(back, frames):
            assert ours.dtype == np.float32
            np.testing.assert_array_equal(ours, theirs)

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "f.sdt")
        with open(path, "wb") as fh:
            fh.write(b"XXXX" + b"\x00" * 8)
        with pytest.raises(FormatError, match="bad magic"):
            read_frame_stack(path)

    def test_truncated_data(self, tmp_path):
        frames = [np.ones((2, 4, 4), dtype=np.float32)]
        path = str(tmp_path / "f.sdt")
        with open(path, "wb") as fh:
            fh.write(frame_stack_bytes(frames)[:-8])
        with pytest.raises(FormatError, match="truncated"):
            read_frame_stack(path)

    def test_trailing_bytes(self, tmp_path):
        frames = [np.ones((2, 4, 4), dtype=np.float32)]
        path = str(tmp_path / "f.sdt")
        with open(path, "wb") as fh:
            fh.write(frame_stack_bytes(frames) + b"\x00\x00")
        with pytest.raises(FormatError, match="trailing"):
            read_frame_stack(path)

    def test_non_float_frames(self, tmp_path):
        path = str(tmp_path / "f.sdt")
        arr = np.ones((2, 2), dtype=np.int8)
        buf = struct.pack("<4sI", b"SDT1", 1)
        buf += struct.pack("<II", 1, 2) + struct.pack("<2I", 2, 2) + arr.tobytes()
        with open(path, "wb") as fh:
            fh.write(buf)
        with pytest.raises(FormatError, match="not float32"):
            read_frame_stack(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
