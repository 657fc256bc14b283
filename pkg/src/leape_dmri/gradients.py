"""Gradient schemes: q-space sample points as (unit direction, b-value) pairs.

Diffusion time is fixed at tau = 1 / (4 pi^2), so that |q| = sqrt(b) with b in
s/mm^2.  Scheme files are plain text, one sample per line: ``gx gy gz b``.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass

import numpy as np

TAU = 1.0 / (4.0 * np.pi ** 2)


@dataclass(frozen=True, eq=False)
class GradientScheme:
    """Ordered list of q-space samples.

    Parameters
    ----------
    bvecs : (K, 3) array
        Unit gradient directions.  Rows with ``b == 0`` may carry the zero
        vector.
    bvals : (K,) array
        b-values in s/mm^2.
    """

    bvecs: np.ndarray
    bvals: np.ndarray

    def __post_init__(self):
        bvecs = np.array(self.bvecs, dtype=np.float64).reshape(-1, 3)
        bvals = np.array(self.bvals, dtype=np.float64).reshape(-1)
        if bvecs.shape[0] != bvals.shape[0]:
            raise ValueError("bvecs and bvals must have the same length")
        if bvals.shape[0] == 0:
            raise ValueError("a gradient scheme needs at least one sample")
        if np.any(bvals < 0) or not np.all(np.isfinite(bvals)):
            raise ValueError("b-values must be finite and >= 0")
        norms = np.linalg.norm(bvecs, axis=1)
        weighted = bvals > 0
        if np.any(np.abs(norms[weighted] - 1.0) > 1e-6):
            raise ValueError("diffusion-weighted directions must be unit vectors")
        # renormalise, but leave vectors that are already unit to a few ulps so
        # that parsing a saved scheme reproduces it bit for bit
        fix = weighted & (np.abs(norms - 1.0) > 4 * np.finfo(np.float64).eps)
        bvecs[fix] /= norms[fix, None]
        bvecs.flags.writeable = False
        bvals.flags.writeable = False
        object.__setattr__(self, "bvecs", bvecs)
        object.__setattr__(self, "bvals", bvals)

    def __len__(self):
        return self.bvals.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GradientScheme):
            return NotImplemented
        return (np.array_equal(self.bvecs, other.bvecs)
                and np.array_equal(self.bvals, other.bvals))

    @property
    def qvectors(self) -> np.ndarray:
        """q-space positions ``sqrt(b) * u`` (zero for b = 0 rows)."""
        q = self.bvecs * np.sqrt(self.bvals)[:, None]
        q[self.bvals == 0] = 0.0
        return q

    @property
    def shells(self) -> list[float]:
        return sorted(set(self.bvals.tolist()))

    def subset(self, indices) -> "GradientScheme":
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 1 or indices.size == 0:
            raise ValueError("subset indices must be a non-empty 1-D list")
        if indices.min() < 0 or indices.max() >= len(self):
            raise ValueError("subset index out of range")
        return GradientScheme(self.bvecs[indices], self.bvals[indices])

    def locate_in(self, other: "GradientScheme", atol: float = 1e-9) -> np.ndarray:
        """Indices ``idx`` such that ``other.subset(idx)`` reproduces this scheme.

        Raises ``ValueError`` if some sample of this scheme is not in `other`.
        """
        idx = np.empty(len(self), dtype=np.int64)
        for k in range(len(self)):
            hit = np.flatnonzero(
                (np.abs(other.bvals - self.bvals[k]) <= atol * max(1.0, self.bvals[k]))
                & np.all(np.abs(other.bvecs - self.bvecs[k]) <= atol, axis=1))
            if hit.size == 0:
                raise ValueError(f"sample {k} of the scheme is not part of the reference scheme")
            idx[k] = hit[0]
        return idx

    def to_text(self) -> str:
        lines = [f"{g[0]!r} {g[1]!r} {g[2]!r} {b!r}"
                 for g, b in zip(self.bvecs.tolist(), self.bvals.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GradientScheme":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 'gx gy gz b', got {line!r}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        if not rows:
            raise ValueError("scheme file contains no samples")
        arr = np.array(rows)
        return cls(arr[:, :3], arr[:, 3])

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_text().encode("utf-8"))

    @classmethod
    def load(cls, path) -> "GradientScheme":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write `data` to `path` through a temporary file and a rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def repulsion_directions(n, seed, fixed=None, iterations=1000):
    """Unit directions spread by electrostatic repulsion with antipodal charges.

    Each point ``p`` carries charges at ``p`` and ``-p``, so the optimised set
    is well spread in the antipodally identified sense.  `fixed` directions
    take part in the energy but are not moved, which allows building nested
    sets whose leading rows are themselves well distributed.

    Parameters
    ----------
    n : int
        Number of free directions to generate.
    seed : int
        Seed of the random starting configuration.
    fixed : (F, 3) array, optional
        Directions that repel the free ones but stay in place.
    iterations : int
        Number of projected gradient steps.

    Returns
    -------
    (n, 3) array of unit vectors with z >= 0.
    """
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    fixed = np.zeros((0, 3)) if fixed is None else np.asarray(fixed, dtype=np.float64)
    step = 0.1 / max(n + len(fixed), 1)
    for _ in range(iterations):
        allp = np.vstack([pts, fixed])
        force = np.zeros_like(pts)
        for sign in (1.0, -1.0):
            diff = pts[:, None, :] - sign * allp[None, :, :]
            dist = np.linalg.norm(diff, axis=2)
            if sign > 0:
                dist[np.arange(n), np.arange(n)] = np.inf
            force += np.sum(diff / dist[..., None] ** 3, axis=1)
        # keep only the tangential component
        force -= np.sum(force * pts, axis=1, keepdims=True) * pts
        pts = pts + step * force
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts[pts[:, 2] < 0] *= -1.0
    return pts
