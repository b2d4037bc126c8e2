"""Regular lattice of map locations shared by the grid-based baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..swgmm import mixture_logpdf


@dataclass(frozen=True)
class Lattice:
    x0: float
    y0: float
    resolution: float
    nx: int
    ny: int

    @classmethod
    def covering(cls, bounds, resolution: float = 1.0) -> "Lattice":
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        xmin, xmax, ymin, ymax = bounds
        x0 = math.floor(xmin / resolution) * resolution
        y0 = math.floor(ymin / resolution) * resolution
        nx = int(math.ceil((xmax - x0) / resolution - 1e-9)) + 1
        ny = int(math.ceil((ymax - y0) / resolution - 1e-9)) + 1
        return cls(float(x0), float(y0), float(resolution), max(nx, 1), max(ny, 1))

    def centres(self) -> np.ndarray:
        """(nx*ny, 2) lattice points, cell index = iy * nx + ix."""
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.stack([self.x0 + ix.ravel() * self.resolution, self.y0 + iy.ravel() * self.resolution], axis=1)

    def nearest(self, x, y) -> np.ndarray:
        """Index of the nearest lattice point; -1 outside the lattice."""
        ix = np.rint((np.asarray(x, dtype=float) - self.x0) / self.resolution).astype(np.int64)
        iy = np.rint((np.asarray(y, dtype=float) - self.y0) / self.resolution).astype(np.int64)
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return np.where(inside, iy * self.nx + ix, -1)

    def neighbourhoods(self, x, y, radius: float) -> list:
        """For every lattice point, the sorted indices of samples within ``radius`` (inclusive)."""
        if len(x) == 0:
            return [np.zeros(0, dtype=np.intp) for _ in range(self.nx * self.ny)]
        tree = cKDTree(np.stack([np.asarray(x, float), np.asarray(y, float)], axis=1))
        # a hair of slack so points exactly on the circle count for both cells
        hits = tree.query_ball_point(self.centres(), r=radius * (1.0 + 1e-12))
        return [np.array(sorted(h), dtype=np.intp) for h in hits]

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "resolution": self.resolution, "nx": self.nx, "ny": self.ny}


def canonical_order(speed, theta) -> np.ndarray:
    """Permutation sorting samples by value so fits do not depend on input order."""
    return np.lexsort((theta, speed))


def per_sample_logpdf(speed, theta, models: list) -> np.ndarray:
    """log-density of sample i under ``models[i]`` (an Swgmm), batched by model identity."""
    n = len(speed)
    out = np.empty(n)
    groups: dict[int, list] = {}
    for i, m in enumerate(models):
        groups.setdefault(id(m), [m, []])[1].append(i)
    for m, idx in groups.values():
        idx = np.asarray(idx)
        out[idx] = mixture_logpdf(speed[idx], theta[idx], *m.as_arrays())
    return out
