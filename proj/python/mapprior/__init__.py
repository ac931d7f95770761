# Copyright 2026 The mapprior Authors
# SPDX-License-Identifier: Apache-2.0
"""BEV 3D detection with surfel and Gaussian mapping priors.

Boxes are rows of ``(cx, cy, cz, l, w, h, yaw)``; point arrays are ``(N, 3)`` float64.
"""

from ._core import (
    DecodeError,
    Error,
    NumericError,
    build_surfels,
    cli,
    decode_pointcloud,
    dynamic_voxelize,
    estimate_normal,
    evaluate_ap,
    fnv1a64,
    fusion_gradcheck,
    gated_fuse,
    init_gaussians,
    iou_3d,
    iou_bev,
    model_directional_check,
    nms,
    pointcloud_roundtrip,
    remove_dynamic_points,
    run_inference_demo,
    segment_reduce,
    synth_scan,
)

__all__ = [
    "DecodeError",
    "Error",
    "NumericError",
    "build_surfels",
    "cli",
    "decode_pointcloud",
    "dynamic_voxelize",
    "estimate_normal",
    "evaluate_ap",
    "fnv1a64",
    "fusion_gradcheck",
    "gated_fuse",
    "init_gaussians",
    "iou_3d",
    "iou_bev",
    "model_directional_check",
    "nms",
    "pointcloud_roundtrip",
    "remove_dynamic_points",
    "run_inference_demo",
    "segment_reduce",
    "synth_scan",
]
