"""Multi-task diffractive deep neural network simulator and trainer."""

from mtd2nn.field import PropagationSpec, propagate, propagate_direct, transfer_function
from mtd2nn.layers import BeamSplitterSpec, combine, diffractive_layer, modulate, split
from mtd2nn.detector import DetectorLayout, LabelCodec, decide, encode_target, read
from mtd2nn.network import ArchConfig, MultiTaskD2NN, build_model, forward, forward_trace

__version__ = "0.1.0"

__all__ = [
    "PropagationSpec", "propagate", "propagate_direct", "transfer_function",
    "BeamSplitterSpec", "combine", "diffractive_layer", "modulate", "split",
    "DetectorLayout", "LabelCodec", "decide", "encode_target", "read",
    "ArchConfig", "MultiTaskD2NN", "build_model", "forward", "forward_trace",
]
