import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sdnn.synthetic import LayerShape, gen_synthetic


@pytest.fixture
def small_setup():
    """A 3-layer quantized model with a moving-blob video (nonzero input zero-point)."""
    model, frames, track = gen_synthetic(
        [LayerShape(6, 3, 2, 1), LayerShape(8, 3, 1, 1), LayerShape(9, 1, 1, 0)],
        (3, 12, 12),
         12,
        seed=7,
        background_offset=-0.25,
    )
    return model, list(frames), track


@pytest.fixture
def unsigned_setup():
    """A 2-layer model calibrated on nonnegative frames (input zero-point 0)."""
    model, frames, track = gen_synthetic(
        [LayerShape(4, 3, 1, 1), LayerShape(6, 3, 1, 0)],
        (2, 8, 8),
        8,
        seed=5,
    )
    assert model.input_qparams.zero_point == 0
    return model, list(frames), track
