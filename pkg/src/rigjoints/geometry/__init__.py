"""Spatial kernels: kNN, BVH raycasting, normals, normalization and skinning."""

from .bvh import Bvh, Hit, Ray, build_bvh, hit_counts, is_inside, raycast_all, raycast_batch
from .io import (
    MeshFormatError,
    atomic_write_bytes,
    load_cloud,
    load_mesh,
    read_ply,
    save_cloud,
    save_mesh,
)
from .knn import KnnIndex, knn, knn_self
from .mesh import (
    GeometryError,
    PointCloud,
    TriMesh,
    cylinder_mesh,
    icosphere,
    mesh_to_pointcloud,
    unit_cube_mesh,
    validate_counts,
)
from .normals import DEFAULT_K_NORMALS, DegenerateNormalWarning, estimate_normals
from .skinning import SkinWeightError, check_weights, linear_blend_skinning
from .transforms import ScaleRecord, axis_index, fit_unit_height, normalize_to_unit_cube

__all__ = [name for name in dir() if not name.startswith("_")]
