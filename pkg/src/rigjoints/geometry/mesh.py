from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Invalid geometric input (bad indices, degenerate faces, wrong shapes)."""


@dataclass
class TriMesh:
    vertices: np.ndarray  # V x 3 float64
    faces: np.ndarray  # F x 3 int64

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError(f"vertices must be V x 3, got {self.vertices.shape}")
        if self.faces.size == 0:
            self.faces = self.faces.reshape(0, 3)
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise GeometryError(f"faces must be F x 3 (triangles only), got {self.faces.shape}")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise GeometryError("degenerate face: repeated vertex index")

    @property
    def triangles(self) -> np.ndarray:
        """F x 3 x 3 corner positions."""
        return self.vertices[self.faces]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def copy_with(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.faces.copy())


@dataclass
class PointCloud:
    points: np.ndarray  # N x 3
    normals: np.ndarray | None = None  # N x 3 unit vectors
    degenerate: np.ndarray | None = None  # N bool; set where a fallback normal was used

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise GeometryError(f"points must be N x 3, got {self.points.shape}")
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.points.shape:
                raise GeometryError("normals must match points in shape")
            lengths = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-6):
                raise GeometryError("normals must have unit length (tolerance 1e-6)")

    def __len__(self) -> int:
        return len(self.points)

    def features(self, use_normals: bool = True) -> np.ndarray:
        if not use_normals:
            return self.points
        if self.normals is None:
            raise GeometryError("cloud has no normals")
        return np.concatenate([self.points, self.normals], axis=1)


def unit_cube_mesh(center=(0.0, 0.0, 0.0), size: float = 1.0) -> TriMesh:
    """Closed axis-aligned cube with outward winding (12 triangles)."""
    c = np.asarray(center, dtype=np.float64)
    h = size / 2.0
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)]) + c
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriMesh(v, faces)


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
             [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
             [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
             [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [list(np.asarray(v, float) / np.linalg.norm(v)) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
                verts.append(list(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return TriMesh(np.asarray(verts) * radius + np.asarray(center, float), np.asarray(faces))


def cylinder_mesh(radius: float, length: float, segments: int = 128, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed cylinder along +Z with capped ends."""
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    lo = np.column_stack([ring, np.full(segments, -length / 2.0)])
    hi = np.column_stack([ring, np.full(segments, length / 2.0)])
    verts = np.vstack([lo, hi, [[0, 0, -length / 2.0]], [[0, 0, length / 2.0]]])
    c_lo, c_hi = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([i, j, segments + j])
        faces.append([i, segments + j, segments + i])
        faces.append([c_lo, j, i])
        faces.append([c_hi, segments + i, segments + j])
    return TriMesh(verts + np.asarray(center, float), np.asarray(faces))


def mesh_to_pointcloud(mesh: TriMesh) -> PointCloud:
    """Unique mesh vertices, kept in order of first occurrence."""
    _, first = np.unique(mesh.vertices, axis=0, return_index=True)
    return PointCloud(mesh.vertices[np.sort(first)])


def validate_counts(n_points: int, lo: int = 10000, hi: int = 12000) -> None:
    if not lo <= n_points <= hi:
        raise GeometryError(f"point count {n_points} outside the expected range [{lo}, {hi}]")
