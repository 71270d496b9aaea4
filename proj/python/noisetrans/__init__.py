"""Point cloud denoising: model inference, corruption, metrics and the command line."""

from ._core import (
    ArgumentError,
    Error,
    Model,
    NumericError,
    chamfer_distance,
    farthest_point_sample,
    init_model,
    knn,
    load_model,
    perturb,
    point_to_mesh,
    point_to_shape,
    read_pointcloud,
    run_cli,
    sample_shape,
    write_pointcloud,
)

__all__ = [
    "ArgumentError",
    "Error",
    "Model",
    "NumericError",
    "chamfer_distance",
    "farthest_point_sample",
    "init_model",
    "knn",
    "load_model",
    "perturb",
    "point_to_mesh",
    "point_to_shape",
    "read_pointcloud",
    "run_cli",
    "sample_shape",
    "write_pointcloud",
]
