"""Sphere tessellation, ODF peak finding and the fiber-orientation error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shore_basis import DirectionSet


@dataclass(frozen=True)
class PeakConfig:
    relative_threshold: float = 0.25
    min_sep_angle: float = 25.0
    max_peaks: int = 3

    def __post_init__(self):
        if not 0 < self.relative_threshold <= 1:
            raise ValueError("relative_threshold must lie in (0, 1]")
        if not 0 < self.min_sep_angle < 90:
            raise ValueError("min_sep_angle must lie in (0, 90) degrees")
        if self.max_peaks < 1:
            raise ValueError("max_peaks must be >= 1")


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def icosphere(subdivisions):
    """Vertices and triangular faces of a subdivided unit icosahedron."""
    verts, faces = _icosahedron()
    verts = list(verts)
    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces)
    return np.array(verts), faces


def edges_from_faces(faces):
    e = np.vstack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def tessellate_sphere(subdivisions: int) -> DirectionSet:
    """Full-sphere icosphere directions with symmetric edge adjacency."""
    if not 0 <= subdivisions <= 5:
        raise ValueError("subdivisions must lie in [0, 5]")
    verts, faces = icosphere(subdivisions)
    neighbors = [[] for _ in range(len(verts))]
    for a, b in edges_from_faces(faces):
        neighbors[a].append(b)
        neighbors[b].append(a)
    adjacency = tuple(np.array(sorted(nb), dtype=np.int64) for nb in neighbors)
    verts.flags.writeable = False
    return DirectionSet(verts, adjacency, False, f"icosphere-{subdivisions}")


def canonicalize(vectors) -> np.ndarray:
    """Flip vectors into the half-space z > 0 (ties: y > 0, then x >= 0)."""
    v = np.array(vectors, dtype=np.float64).reshape(-1, 3)
    for i, (x, y, z) in enumerate(v):
        if z < 0 or (z == 0 and (y < 0 or (y == 0 and x < 0))):
            v[i] = -v[i]
    return v


def axial_angle(a, b) -> np.ndarray:
    """Pairwise angles in degrees between antipodally identified unit vectors."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    # atan2 form stays exact for (anti)parallel pairs, unlike arccos near 1
    cross = np.linalg.norm(np.cross(a[:, None, :], b[None, :, :]), axis=-1)
    return np.degrees(np.arctan2(cross, np.abs(a @ b.T)))


def _padded_neighbors(adjacency):
    width = max(len(nb) for nb in adjacency)
    out = np.empty((len(adjacency), width), dtype=np.int64)
    for i, nb in enumerate(adjacency):
        out[i, :len(nb)] = nb
        out[i, len(nb):] = nb[0]
    return out


def _local_maxima(values, padded):
    """Strict local-maximum mask; `values` has shape (..., V)."""
    return np.all(values[..., :, None] > values[..., padded], axis=-1)


def _select(vals, dirs, candidates, cfg, cos_sep):
    order = candidates[np.lexsort((candidates, -vals[candidates]))]
    kept = []
    for i in order:
        if all(abs(dirs[i] @ dirs[k]) < cos_sep for k in kept):
            kept.append(i)
            if len(kept) == cfg.max_peaks:
                break
    return canonicalize(dirs[kept])


def find_peaks(v, dirs: DirectionSet, cfg: PeakConfig = PeakConfig()) -> np.ndarray:
    """Fiber orientations at ODF peaks on a tessellation.

    Vertices whose value strictly exceeds every neighbour and reaches
    ``relative_threshold * max(v)`` are visited in descending value (ties by
    lower vertex index) and kept when at least ``min_sep_angle`` away, modulo
    antipodal symmetry, from every orientation kept before.

    Returns
    -------
    (k, 3) array of canonicalised unit vectors, ``0 <= k <= max_peaks``.
    """
    if dirs.adjacency is None:
        raise ValueError("peak finding needs a direction set with adjacency")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (len(dirs),):
        raise ValueError(f"expected {len(dirs)} ODF values, got shape {v.shape}")
    return find_peaks_batch(v[None], dirs, cfg)[0]


def find_peaks_batch(values, dirs: DirectionSet, cfg: PeakConfig = PeakConfig()) -> list:
    """`find_peaks` for every row of `values` (shape (S, V))."""
    if dirs.adjacency is None:
        raise ValueError("peak finding needs a direction set with adjacency")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(dirs):
        raise ValueError(f"expected ODF rows of length {len(dirs)}")
    padded = _padded_neighbors(dirs.adjacency)
    cos_sep = np.cos(np.radians(cfg.min_sep_angle))
    out = []
    for start in range(0, len(values), 4096):
        block = values[start:start + 4096]
        vmax = block.max(axis=1, keepdims=True)
        mask = _local_maxima(block, padded) & (block >= cfg.relative_threshold * vmax) & (vmax > 0)
        for vals, m in zip(block, mask):
            out.append(_select(vals, dirs.dirs, np.flatnonzero(m), cfg, cos_sep))
    return out


def fo_error(est, ref) -> float:
    """Symmetric mean minimal axial angle (degrees) between two FO sets.

    ``0.5 * (mean_ref min_angle_to_est + mean_est min_angle_to_ref)``; 90 if
    exactly one set is empty and 0 if both are.
    """
    est = np.asarray(est, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1, 3)
    if len(est) == 0 and len(ref) == 0:
        return 0.0
    if len(est) == 0 or len(ref) == 0:
        return 90.0
    ang = axial_angle(ref, est)
    return float(0.5 * (ang.min(axis=1).mean() + ang.min(axis=0).mean()))
