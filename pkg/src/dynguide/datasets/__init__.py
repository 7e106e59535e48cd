from .gmm import (
    DATA_SCALE,
    GmmSpec,
    cluster_labels,
    kmeans,
    read_points_csv,
    sample_gmm,
    write_points_csv,
)
from .labels import (
    MIXED_NAMES,
    SHAPE_KINDS,
    SINGLE_NAMES,
    ClassLabel,
    class_count,
    gmm_label,
    mixed_label,
    single_label,
)
from .shapes import (
    ShapeImage,
    ShapeInstance,
    generate_shapes,
    polygon_mask,
    rasterize,
)
from .storage import (
    DatasetFormatError,
    DatasetItem,
    ShapesDataset,
    as_dataset,
    read_dataset,
    write_dataset,
)

__all__ = [
    "GmmSpec",
    "DATA_SCALE",
    "sample_gmm",
    "kmeans",
    "cluster_labels",
    "write_points_csv",
    "read_points_csv",
    "ClassLabel",
    "class_count",
    "gmm_label",
    "single_label",
    "mixed_label",
    "SHAPE_KINDS",
    "SINGLE_NAMES",
    "MIXED_NAMES",
    "ShapeInstance",
    "ShapeImage",
    "polygon_mask",
    "rasterize",
    "generate_shapes",
    "DatasetItem",
    "ShapesDataset",
    "as_dataset",
    "write_dataset",
    "read_dataset",
    "DatasetFormatError",
]
