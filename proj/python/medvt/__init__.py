"""Multiscale encoder-decoder video transformer for video object segmentation.

Thin python surface over the C++ core: tensor file IO, the numerical
primitives, synthetic clip generation, segmentation metrics, and the model
itself (forward, sliding-window inference, two-stage training).
"""

from ._medvt import (
    Model,
    SceneSpec,
    bilinear_resize,
    boundary_f,
    conv2d,
    generate_clip,
    iou,
    j_statistics,
    make_dataset,
    matmul,
    read_mvt1,
    set_threads,
    sinusoidal_pe,
    softmax,
    write_mvt1,
)

__all__ = [
    "Model",
    "SceneSpec",
    "bilinear_resize",
    "boundary_f",
    "conv2d",
    "generate_clip",
    "iou",
    "j_statistics",
    "make_dataset",
    "matmul",
    "read_mvt1",
    "set_threads",
    "sinusoidal_pe",
    "softmax",
    "write_mvt1",
]

__version__ = "0.1.0"
