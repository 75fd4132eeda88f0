"""Seeded generators for test models and moving-blob videos.

Everything is driven by np.random.default_rng(seed), so the same seed always
reproduces the same model and frames bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FloatConvLayer, ModelIR, quantize_model


@dataclass(frozen=True)
class LayerShape:
    """Geometry of one generated conv layer."""

    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0


def parse_layer_shapes(text: str) -> list[LayerShape]:
    """Parse "out:kernel:stride:padding" items separated by commas.

    Example: "8:3:2:1,16:3:1:1,27:1:1:0".
    """
    shapes = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 4:
            raise ValueError(f"layer shape {item!r} is not out:kernel:stride:padding")
        shapes.append(LayerShape(*(int(p) for p in parts)))
    return shapes


def gen_float_model(
    shapes: list[LayerShape],
    input_dims: tuple[int, int, int],
    seed: int,
    final_activation: str = "none",
) -> list[FloatConvLayer]:
    """Random float conv stack with fan-in scaled weights and small biases.

    Hidden layers are ReLU; the last layer uses `final_activation` so the
    stack can end linear (signed outputs) or rectified.
    """
    rng = np.random.default_rng(seed)
    layers: list[FloatConvLayer] = []
    in_c = input_dims[0]
    for i, shape in enumerate(shapes):
        fan_in = in_c * shape.kernel * shape.kernel
        weights = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(shape.out_channels, in_c, shape.kernel, shape.kernel))
        bias = rng.uniform(-0.1, 0.1, size=shape.out_channels)
        activation = "relu" if i < len(shapes) - 1 else final_activation
        layers.append(
            FloatConvLayer(
                weights=weights.astype(np.float32),
                bias=bias.astype(np.float32),
                stride=shape.stride,
                padding=shape.padding,
                activation=activation,
            )
        )
        in_c = shape.out_channels
    return layers


@dataclass
class BlobTrack:
    """Ground-truth blob location per frame, in normalized image coordinates."""

    cx: np.ndarray  # (N,)
    cy: np.ndarray  # (N,)
    w: float
    h: float


def gen_video(
    input_dims: tuple[int, int, int],
    n_frames: int,
    seed: int,
    motion_rate: float = 1.0,
    blob_size: int = 3,
    background_noise: float = 0.1,
    background_offset: float = 0.0,
    blob_value: float = 1.0,
) -> tuple[np.ndarray, BlobTrack]:
    """A bright square blob drifting over a static noisy background.

    The background is frozen at frame 0 (only the blob moves), so successive
    frames differ in at most 2 * blob_size**2 pixels per channel — the sparse
    regime sigma-delta encoding exploits.  motion_rate is pixels per frame;
    background_offset shifts the whole video (negative values produce signed
    frames and hence a nonzero input zero-point after calibration).

    Returns (frames float32 (N, C, H, W), ground-truth track).
    """
    c, h, w = input_dims
    if blob_size >= min(h, w):
        raise ValueError(f"blob_size {blob_size} does not fit input {h}x{w}")
    rng = np.random.default_rng(seed)
    background = rng.uniform(0.0, background_noise, size=(c, h, w)).astype(np.float32)
    background += np.float32(background_offset)

    x_span = w - blob_size
    y_span = h - blob_size
    x0 = float(rng.integers(0, x_span + 1))
    y0 = float(rng.integers(0, y_span + 1))
    direction = rng.choice([-1.0, 1.0])

    frames = np.empty((n_frames, c, h, w), dtype=np.float32)
    cxs = np.empty(n_frames)
    cys = np.empty(n_frames)
    for t in range(n_frames):
        # bounce the blob between the borders instead of wrapping
        span = max(x_span, 1)
        pos = x0 + direction * motion_rate * t
        bounce = pos % (2 * span)
        bx = int(round(2 * span - bounce if bounce > span else bounce))
        by = int(round(y0 + 0.5 * motion_rate * t)) % max(y_span + 1, 1)
        frame = background.copy()
        frame[:, by : by + blob_size, bx : bx + blob_size] = np.float32(
            blob_value + background_offset
        )
        frames[t] = frame
        cxs[t] = (bx + blob_size / 2) / w
        cys[t] = (by + blob_size / 2) / h
    return frames, BlobTrack(cxs, cys, blob_size / w, blob_size / h)


def gen_synthetic(
    shapes: list[LayerShape],
    input_dims: tuple[int, int, int],
    n_frames: int,
    seed: int,
    motion_rate: float = 1.0,
    blob_size: int = 3,
    background_offset: float = 0.0,
    final_activation: str = "none",
) -> tuple[ModelIR, np.ndarray, BlobTrack]:
    """Generate a float model and a video, then calibrate on that video.

    One-stop constructor for tests and demos: the returned ModelIR is
    quantized against the very frames it will be run on.
    """
    float_layers = gen_float_model(shapes, input_dims, seed, final_activation)
    frames, track = gen_video(
        input_dims,
        n_frames,
        seed + 1,
        motion_rate=motion_rate,
        blob_size=blob_size,
        background_offset=background_offset,
    )
    model = quantize_model(float_layers, list(frames), input_dims)
    return model, frames, track
