from .fields import (FlowField, FlowStack, build_flow_stack,
                     deserialize_flow_stack, flow_to_pgm, load_flow_stack,
                     normalize_flow_for_net, save_flow_stack,
                     serialize_flow_stack, slice_stack)
from .pyramid import build_pyramid, pyramid_level_count, resize_bilinear, warp_bilinear
from .solver import (ENERGY_TOLERANCE, ROBUST_EPS, FlowParams, estimate_flow,
                     flow_energy, to_grayscale)

__all__ = [
    "FlowField", "FlowStack", "FlowParams",
    "estimate_flow", "flow_energy", "to_grayscale",
    "build_pyramid", "pyramid_level_count", "resize_bilinear", "warp_bilinear",
    "build_flow_stack", "slice_stack", "normalize_flow_for_net",
    "save_flow_stack", "load_flow_stack", "serialize_flow_stack",
    "deserialize_flow_stack", "flow_to_pgm",
    "ROBUST_EPS", "ENERGY_TOLERANCE",
]
