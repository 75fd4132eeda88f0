"""Export quantized torch conv chains to the ".sdm" model format."""

from .export import ExportReport, LayerSummary, export, main
from .extract import UnsupportedModelError, extract_chain
from .sdm_format import (
    FormatError,
    QuantizedLayer,
    read_frame_stack,
    write_quantized_model,
)

__all__ = [
    "ExportReport",
    "FormatError",
    "LayerSummary",
    "QuantizedLayer",
    "UnsupportedModelError",
    "export",
    "extract_chain",
    "main",
    "read_frame_stack",
    "write_quantized_model",
]

__version__ = "0.1.0"
