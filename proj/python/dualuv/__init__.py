"""Python bindings for the dualuv core library."""

from ._core import (
    Camera,
    Error,
    IoError,
    Mesh,
    NumericError,
    compose_prompt,
    distance_transform,
    encode_uv,
    normalize_config,
    rasterize,
    read_tensors,
    sample_surface,
    shell,
    silhouette,
    visibility,
    write_tensors,
)

__all__ = [
    "Camera",
    "Error",
    "IoError",
    "Mesh",
    "NumericError",
    "compose_prompt",
    "distance_transform",
    "encode_uv",
    "normalize_config",
    "rasterize",
    "read_tensors",
    "sample_surface",
    "shell",
    "silhouette",
    "visibility",
    "write_tensors",
]
