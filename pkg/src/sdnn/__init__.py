"""Quantized CNNs as sigma-delta graded-spike networks, emulated bit-exactly.

The pipeline: calibrate and quantize a float conv stack (`quantize_model`),
convert it to an integer spiking graph (`convert`), replay videos on the
event-driven runtime (`run_sequence`) — bit-exact against the dense
fixed-point engine at threshold 0 — then profile activity, energy, and
detection quality (`threshold_sweep`, `decode_grid`).
"""

from .convert import (
    ConversionError,
    ConversionReport,
    Requantizer,
    SDNNGraph,
    SDNNLayer,
    convert,
    derive_requantizer,
    fold_bias,
    pad_correction,
    validate_conversion,
)
from .detect import (
    BoundingBox,
    DetectionScore,
    GridLayout,
    decode_grid,
    iou,
    score_detections,
    write_detections_csv,
)
from .engine import (
    ReferenceResult,
    conv2d_int,
    conv2d_raw,
    macs_per_layer,
    model_macs,
    requantize_fixed,
    requantize_float,
    run_reference,
)
from .fixedpoint import BitwidthConfig, IntegerOverflowError
from .model import (
    ConvLayerSpec,
    FloatConvLayer,
    ModelIR,
    ShapeError,
    conv_output_hw,
    float_forward,
    quantize_model,
)
from .profiling import (
    CostEstimate,
    EnergyModel,
    SweepResult,
    SweepRow,
    emit_report,
    estimate_cost,
    load_energy_model,
    read_report_csv,
    render_report,
    sweep_thresholds_for,
    synop_ratio,
    threshold_sweep,
)
from .quantization import (
    CalibrationError,
    MinMaxObserver,
    QuantParams,
    QuantTensor,
    dequantize_tensor,
    quantize_tensor,
    quantize_weights,
    symmetric_weight_qparams,
)
from .runtime import (
    DeltaEncoder,
    GradedSpike,
    NeuronBlockState,
    PipelineState,
    RunResult,
    RuntimeTrace,
    SpikeBatch,
    delta_encode,
    neuron_step,
    run_sequence,
    scatter_spikes,
    step_pipeline,
)
from .serialization import (
    FileFormatError,
    load_frames,
    load_graph,
    load_model,
    load_spike_trace,
    save_frames,
    save_graph,
    save_model,
    save_spike_trace,
)
from .synthetic import (
    BlobTrack,
    LayerShape,
    gen_float_model,
    gen_synthetic,
    gen_video,
    parse_layer_shapes,
)

__version__ = "0.1.0"
