"""Shared fixtures: small conv chains quantized with eager-mode PTQ.

The reference model is a three-layer chain (strided conv+relu, padded
conv+relu, a 1x1 head) calibrated on ten seeded frames, saved with
torch.save, and exported once per session.
"""

import pytest
import torch
import torch.nn as nn
from torch.ao.quantization import (
    DeQuantStub,
    MinMaxObserver,
    QConfig,
    QuantStub,
    convert,
    fuse_modules,
    prepare,
)

N_FRAMES = 10


def per_tensor_qconfig():
    return QConfig(
        activation=MinMaxObserver.with_args(dtype=torch.quint8),
        weight=MinMaxObserver.with_args(
            dtype=torch.qint8, qscheme=torch.per_tensor_symmetric
        ),
    )


def ptq_quantize(modules, frames, fuse_pairs=(), qconfig=None):
    """Fuse, calibrate on the frames, and convert an eval-mode Sequential."""
    torch.backends.quantized.engine = "fbgemm"
    model = nn.Sequential(*modules).eval()
    model.qconfig = qconfig or per_tensor_qconfig()
    if fuse_pairs:
        model = fuse_modules(model, [list(pair) for pair in fuse_pairs])
    prepared = prepare(model)
    with torch.no_grad():
        for frame in frames:
            prepared(frame.unsqueeze(0))
    return convert(prepared)


def make_frames(n=N_FRAMES, channels=3, side=12, first_seed=100):
    """Seeded float frames in [-0.2, 0.8), shaped (channels, side, side)."""
    return [
        torch.rand(
            channels, side, side,
            generator=torch.Generator().manual_seed(first_seed + i),
        ) - 0.2
        for i in range(n)
    ]


@pytest.fixture(scope="session")
def calib_frames():
    return make_frames()


@pytest.fixture(scope="session")
def chain_model(calib_frames):
    torch.manual_seed(0)
    modules = [
        QuantStub(),
        nn.Conv2d(3, 8, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(8, 12, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(12, 6, 1),
        DeQuantStub(),
    ]
    return ptq_quantize(modules, calib_frames, fuse_pairs=(("1", "2"), ("3", "4")))


@pytest.fixture(scope="session")
def exported(chain_model, calib_frames, tmp_path_factory):
    """Paths for a saved chain model, its frames, and a finished export."""
    from sdm_export import export
    from sdnn import save_frames

    d = tmp_path_factory.mktemp("export")
    paths = {
        "model": str(d / "model.pt"),
        "frames": str(d / "calib.sdt"),
        "out": str(d / "model.sdm"),
    }
    torch.save(chain_model, paths["model"])
    save_frames([f.numpy() for f in calib_frames], paths["frames"])
    paths["report"] = export(paths["model"], paths["frames"], paths["out"])
    return paths
