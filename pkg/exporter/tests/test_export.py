"""End-to-end checks: the exported file against the framework's own forward."""

import json

import numpy as np
import pytest
import torch
import torch.ao.nn.quantized as nnq
import torch.nn as nn
from torch.ao.quantization import DeQuantStub, QuantStub

from conftest import make_frames, ptq_quantize
from sdm_export import export, main
from sdnn import (
    convert as sdnn_convert,
    load_model,
    quantize_tensor,
    run_reference,
    save_frames,
    validate_conversion,
)


def framework_codes(model, frame):
    """The framework's integer activations just before its dequantize stage."""
    with torch.no_grad():
        out = nn.Sequential(*list(model.children())[:-1])(frame.unsqueeze(0))
    return out.int_repr().numpy()[0]


class TestExportedModel:
    def test_file_loads_and_validates(self, exported):
        """The written model passes the loader's structural validation."""
        model = load_model(exported["out"])
        model.validate()
        assert model.input_dims == (3, 12, 12)
        assert [lyr.stride for lyr in model.layers] == [2, 1, 1]
        assert [lyr.padding for lyr in model.layers] == [1, 1, 0]
        assert [lyr.activation for lyr in model.layers] == ["relu", "relu", "none"]

    def test_integer_fields_survive_round_trip(self, exported, chain_model):
        """Weights and zero points come back byte-identical from the file."""
        model = load_model(exported["out"])
        convs = [m for m in chain_model.children() if isinstance(m, nnq.Conv2d)]
        assert len(convs) == len(model.layers) == 3
        for mod, lyr in zip(convs, model.layers):
            weight = mod.weight()
            assert lyr.weights.data.tobytes() == weight.int_repr().numpy().tobytes()
            assert lyr.weights.qparams.zero_point == int(weight.q_zero_point()) == 0
            assert lyr.weights.qparams.scale == float(weight.q_scale())
            assert lyr.out_qparams.scale == float(mod.scale)
            assert lyr.out_qparams.zero_point == int(mod.zero_point)

    def test_float_mode_matches_framework_within_one_step(
        self, exported, chain_model, calib_frames
    ):
        """On every calibration frame, the float-scale reference lands within
        one integer step of the framework's quantized forward."""
        model = load_model(exported["out"])
        worst = 0
        for frame in calib_frames:
            theirs = framework_codes(chain_model, frame).astype(np.int32)
            frame_q = quantize_tensor(frame.numpy(), model.input_qparams)
            ours = run_reference(model, frame_q, mode="float_scale")
            diff = np.abs(ours.output.data.astype(np.int32) - theirs)
            worst = max(worst, int(diff.max()))
        assert worst <= 1

    def test_exported_model_converts_losslessly(self, exported, calib_frames):
        """The exported model enters the spiking pipeline with zero deviation
        at threshold zero."""
        model = load_model(exported["out"])
        graph = sdnn_convert(model)
        report = validate_conversion(graph, model, [f.numpy() for f in calib_frames])
        assert report.ok and report.max_abs_deviation == 0


class TestIdentityConv:
    def test_identity_kernel_round_trips(self, tmp_path):
        """A 1x1 identity conv exports with 127 on the kernel diagonal and
        replays within one step of the framework."""
        frames = make_frames(n=6, channels=2, side=5, first_seed=40)
        conv = nn.Conv2d(2, 2, 1, bias=False)
        with torch.no_grad():
            conv.weight.copy_(torch.eye(2).reshape(2, 2, 1, 1))
        model = ptq_quantize([QuantStub(), conv, DeQuantStub()], frames)

        model_path, frames_path = str(tmp_path / "id.pt"), str(tmp_path / "id.sdt")
        out_path = str(tmp_path / "id.sdm")
        torch.save(model, model_path)
        save_frames([f.numpy() for f in frames], frames_path)
        report = export(model_path, frames_path, out_path)
        assert len(report.layers) == 1
        assert any("no bias" in w for w in report.warnings)

        loaded = load_model(out_path)
        codes = loaded.layers[0].weights.data
        assert codes[0, 0, 0, 0] == codes[1, 1, 0, 0] == 127
        assert codes[0, 1, 0, 0] == codes[1, 0, 0, 0] == 0
        for frame in frames:
            theirs = framework_codes(model, frame).astype(np.int32)
            frame_q = quantize_tensor(frame.numpy(), loaded.input_qparams)
            ours = run_reference(loaded, frame_q, mode="float_scale")
            assert np.abs(ours.output.data.astype(np.int32) - theirs).max() <= 1


class TestExportReport:
    def test_rows_mirror_the_file(self, exported):
        """The report carries one row per written layer with its constants."""
        report = exported["report"]
        model = load_model(exported["out"])
        with open(exported["out"], "r", encoding="utf-8") as fh:
            assert len(json.load(fh)["layers"]) == len(report.layers)
        assert report.n_calib_frames == 10
        assert report.input_dims == (3, 12, 12)
        assert report.warnings == []
        assert [row.weight_dims for row in report.layers] == [
            (8, 3, 3, 3), (12, 8, 3, 3), (6, 12, 1, 1)]
        for row, lyr in zip(report.layers, model.layers):
            assert row.in_scale == lyr.in_qparams.scale
            assert row.weight_scale == lyr.weights.qparams.scale
            assert row.out_scale == lyr.out_qparams.scale
            assert row.in_zero_point == lyr.in_qparams.zero_point
            assert row.out_zero_point == lyr.out_qparams.zero_point

    def test_scales_chain_between_layers(self, exported):
        """Each row's input constants equal the previous row's output ones."""
        rows = exported["report"].layers
        for prev, row in zip(rows, rows[1:]):
            assert row.in_scale == prev.out_scale
            assert row.in_zero_point == prev.out_zero_point

    def test_text_rendering(self, exported):
        """The text form names the file, the geometry, and every layer."""
        text = str(exported["report"])
        assert "exported 3 conv layers" in text
        assert "calibration: 10 frames of 3x12x12" in text
        assert "8x3x3x3" in text and "12x8x3x3" in text and "6x12x1x1" in text

    def test_out_of_range_frames_warn(self, chain_model, calib_frames, tmp_path):
        """Frames outside the input quantizer's representable range are
        flagged, not rejected."""
        model_path = str(tmp_path / "m.pt")
        frames_path = str(tmp_path / "wide.sdt")
        torch.save(chain_model, model_path)
        save_frames([5.0 * f.numpy() for f in calib_frames], frames_path)
        report = export(model_path, frames_path, str(tmp_path / "m.sdm"))
        assert any("out-of-range values clip" in w for w in report.warnings)


class TestCommandLine:
    def test_export_writes_model_and_report(
        self, exported, tmp_path, capsys
    ):
        out = str(tmp_path / "cli.sdm")
        rc = main([exported["model"], exported["frames"], out])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "exported 3 conv layers" in stdout
        with open(out + ".report.txt", "r", encoding="utf-8") as fh:
            assert "exported 3 conv layers" in fh.read()
        load_model(out).validate()

    def test_report_path_override(self, exported, tmp_path):
        out = str(tmp_path / "cli.sdm")
        report_path = str(tmp_path / "notes.txt")
        assert main([exported["model"], exported["frames"], out,
                     "--report", report_path]) == 0
        with open(report_path, "r", encoding="utf-8") as fh:
            assert "calibration: 10 frames" in fh.read()

    def test_bad_model_exits_nonzero(self, exported, tmp_path, capsys):
        float_path = str(tmp_path / "float.pt")
        torch.save(nn.Sequential(nn.Conv2d(3, 4, 3)).eval(), float_path)
        rc = main([float_path, exported["frames"], str(tmp_path / "x.sdm")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_deterministic_output_bytes(self, exported, tmp_path):
        """Exporting the same model twice yields byte-identical files."""
        out_a, out_b = str(tmp_path / "a.sdm"), str(tmp_path / "b.sdm")
        assert main([exported["model"], exported["frames"], out_a]) == 0
        assert main([exported["model"], exported["frames"], out_b]) == 0
        blobs = []
        for path in (out_a, out_b, exported["out"]):
            with open(path, "rb") as fh:
                blobs.append(fh.read())
        assert blobs[0] == blobs[1] == blobs[2]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
