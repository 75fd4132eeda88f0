import numpy as np
import pytest

from sdnn.model import (
    ConvLayerSpec,
    FloatConvLayer,
    ModelIR,
    ShapeError,
    conv_output_hw,
    float_conv2d,
    float_forward,
    quantize_model,
)
from sdnn.quantization import CalibrationError, QuantParams, QuantTensor, quantize_weights

from oracles import naive_conv2d


def _float_layer(out_c=4, in_c=2, k=3, stride=1, padding=1, activation="relu", seed=0):
    rng = np.random.default_rng(seed)
    return FloatConvLayer(
        weights=rng.normal(0, 0.3, size=(out_c, in_c, k, k)).astype(np.float32),
        bias=rng.normal(0, 0.05, size=out_c).astype(np.float32),
        stride=stride,
        padding=padding,
        activation=activation,
    )


class TestGeometry:
    def test_conv_output_formula(self):
        """out = floor((in + 2p - k) / s) + 1 in both dimensions."""
        assert conv_output_hw((14, 14), 3, 1, 1) == (14, 14)
        assert conv_output_hw((14, 14), 3, 2, 1) == (7, 7)
        assert conv_output_hw((15, 11), 3, 2, 0) == (7, 5)
        assert conv_output_hw((5, 5), 1, 1, 0) == (5, 5)

    def test_collapsed_output_raises(self):
        with pytest.raises(ShapeError):
            conv_output_hw((2, 2), 3, 1, 0)

    def test_padding_must_be_less_than_kernel(self):
        with pytest.raises(ShapeError):
            _float_layer(k=3, padding=3)

    def test_bias_shape_must_match_filters(self):
        with pytest.raises(ShapeError):
            FloatConvLayer(np.zeros((4, 2, 3, 3)), np.zeros(3))


class TestFloatForward:
    def test_conv_matches_naive_loops(self):
        rng = np.random.default_rng(8)
        for stride, padding, k in [(1, 0, 3), (2, 1, 3), (1, 1, 3), (2, 0, 1)]:
            layer = _float_layer(out_c=3, in_c=2, k=k, stride=stride, padding=padding, seed=stride)
            x = rng.normal(size=(2, 7, 7)).astype(np.float32)
            want = naive_conv2d(x.astype(np.float64), layer.weights.astype(np.float64),
                                stride, padding) + layer.bias.astype(np.float64)[:, None, None]
            got = float_conv2d(x, layer)
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)

    def test_relu_applied_between_layers(self):
        layers = [_float_layer(seed=1), _float_layer(in_c=4, activation="none", seed=2)]
        outs = float_forward(layers, np.random.default_rng(0).normal(size=(2, 6, 6)))
        assert outs[0].min() >= 0.0
        assert outs[1].min() < 0.0  # linear last layer passes negatives


class TestModelIR:
    def _spec(self, in_c, out_c, in_qp, out_qp, activation="relu", k=3, stride=1, padding=1, seed=0):
        rng = np.random.default_rng(seed)
        return ConvLayerSpec(
            weights=quantize_weights(rng.normal(size=(out_c, in_c, k, k))),
            bias=np.zeros(out_c, dtype=np.float32),
            stride=stride,
            padding=padding,
            activation=activation,
            in_qparams=in_qp,
            out_qparams=out_qp,
        )

    def test_chain_qparams_must_match(self):
        qa = QuantParams(0.1, 0, "uint8")
        qb = QuantParams(0.2, 0, "uint8")
        qc = QuantParams(0.3, 0, "uint8")
        good = ModelIR(
            [self._spec(2, 4, qa, qb), self._spec(4, 3, qb, qc, activation="none")],
            (2, 8, 8),
        )
        assert len(good.layers) == 2
        with pytest.raises(ValueError, match="in_qparams"):
            ModelIR(
                [self._spec(2, 4, qa, qb), self._spec(4, 3, qc, qb, activation="none")],
                (2, 8, 8),
            )

    def test_channel_chain_must_match(self):
        qa = QuantParams(0.1, 0, "uint8")
        with pytest.raises(ShapeError, match="channels"):
            ModelIR([self._spec(3, 4, qa, qa)], (2, 8, 8))

    def test_hidden_layers_must_be_relu(self):
        qa = QuantParams(0.1, 0, "uint8")
        with pytest.raises(ValueError, match="relu"):
            ModelIR(
                [self._spec(2, 4, qa, qa, activation="none"), self._spec(4, 3, qa, qa)],
                (2, 8, 8),
            )

    def test_weights_must_be_symmetric_int8(self):
        with pytest.raises(ValueError, match="symmetric"):
            ConvLayerSpec(
                weights=QuantTensor(np.zeros((4, 2, 3, 3), np.uint8), QuantParams(1.0, 0, "uint8")),
                bias=np.zeros(4, np.float32),
                stride=1,
                padding=1,
                activation="relu",
                in_qparams=QuantParams(0.1, 0, "uint8"),
                out_qparams=QuantParams(0.1, 0, "uint8"),
            )

    def test_layer_dims(self):
        qa = QuantParams(0.1, 0, "uint8")
        m = ModelIR(
            [self._spec(2, 4, qa, qa, stride=2), self._spec(4, 3, qa, qa, activation="none", k=1, padding=0)],
            (2, 9, 9),
        )
        assert m.layer_dims() == [(4, 5, 5), (3, 5, 5)]


class TestQuantizeModel:
    def test_produces_valid_chain(self):
        layers = [_float_layer(seed=1), _float_layer(in_c=4, out_c=3, activation="none", seed=2)]
        frames = [np.random.default_rng(i).normal(0.3, 0.2, size=(2, 8, 8)) for i in range(4)]
        m = quantize_model(layers, frames)
        m.validate()
        assert m.layers[0].out_qparams == m.layers[1].in_qparams
        assert m.layers[0].out_qparams.dtype == "uint8"  # relu output
        assert m.layers[1].out_qparams.dtype == "int8"  # linear output

    def test_needs_frames(self):
        with pytest.raises(CalibrationError):
            quantize_model([_float_layer()], [])

    def test_frame_shape_checked(self):
        with pytest.raises(ShapeError):
            quantize_model([_float_layer()], [np.zeros((3, 8, 8))], (2, 8, 8))

    def test_zero_weight_layer_degenerates_gracefully(self):
        """An all-zero layer still quantizes (scale 1) and its output observes 0."""
        layer = FloatConvLayer(np.zeros((2, 1, 3, 3), np.float32), np.zeros(2, np.float32))
        m = quantize_model([layer], [np.ones((1, 5, 5))])
        assert m.layers[0].weights.qparams.scale == 1.0
        assert np.all(m.layers[0].weights.data == 0)
        assert m.layers[0].out_qparams.scale == 1.0

    def test_quantized_forward_tracks_float_forward(self):
        """End-to-end quantized outputs stay within a few steps of float ones."""
        from sdnn.engine import run_reference
        from sdnn.quantization import dequantize_tensor, quantize_tensor

        layers = [_float_layer(seed=3), _float_layer(in_c=4, out_c=3, activation="none", seed=4)]
        rng = np.random.default_rng(9)
        frames = [rng.uniform(0, 1, size=(2, 8, 8)) for _ in range(6)]
        m = quantize_model(layers, frames)
        float_out = float_forward(layers, frames[0])[-1]
        q_out = run_reference(m, quantize_tensor(frames[0], m.input_qparams), "float_scale")
        err = np.abs(dequantize_tensor(q_out.output) - float_out).max()
        assert err <= 6 * m.output_qparams.scale
