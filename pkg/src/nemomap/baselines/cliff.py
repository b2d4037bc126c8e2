"""Batch CLiFF-map: one SWGMM per lattice location, fitted per hour of day."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import serialize
from ..data import SampleSet
from ..swgmm import Swgmm, SwndParams, fit_single_swnd
from .em import MixtureParams, em_run
from .grid import Lattice, canonical_order, per_sample_logpdf
from .meanshift import DEFAULT_BANDWIDTHS, mean_shift_modes

MIN_SAMPLES = 5
GLOBAL_SEEDS = 400
GLOBAL_SUPPORT = 4000


@dataclass
class CliffCell:
    location: tuple
    model: Swgmm | None
    sample_count: int


@dataclass
class GridMod:
    lattice: Lattice
    hour: int | None = None
    cells: dict = field(default_factory=dict)  # lattice index -> CliffCell

    @property
    def resolution(self) -> float:
        return self.lattice.resolution

    def cell_at(self, x: float, y: float) -> CliffCell | None:
        idx = int(self.lattice.nearest(x, y))
        return self.cells.get(idx)


def fit_cell(speed, theta, bandwidths=DEFAULT_BANDWIDTHS, tol=1e-5, max_iter=100) -> Swgmm:
    """Mean shift for component count and placement, then EM."""
    order = canonical_order(speed, theta)
    speed = np.asarray(speed, dtype=float)[order]
    theta = np.asarray(theta, dtype=float)[order]
    modes = mean_shift_modes(speed, theta, bandwidths, tol=tol, max_iter=max_iter)
    init = MixtureParams.from_modes(modes, bandwidths)
    return em_run(speed, theta, init, tol=tol, max_iter=max_iter).model


def fit_global(samples: SampleSet, bandwidths=DEFAULT_BANDWIDTHS, seed: int = 0) -> Swgmm:
    """Fallback mixture over all samples; mean shift runs on a fixed subsample."""
    n = len(samples)
    if n == 0:
        return Swgmm((1.0,), (SwndParams(1.0, 0.0, 1.0, 4.0, 0.0),))
    if n < 2:
        return fit_single_swnd(np.r_[samples.speed, samples.speed], np.r_[samples.theta, samples.theta])
    order = canonical_order(samples.speed, samples.theta)
    sp, th = samples.speed[order], samples.theta[order]
    rng = np.random.default_rng(seed)
    support = rng.choice(n, size=min(n, GLOBAL_SUPPORT), replace=False)
    seeds = rng.choice(n, size=min(n, GLOBAL_SEEDS), replace=False)
    modes = mean_shift_modes(sp[support], th[support], bandwidths,
                             seeds=np.stack([sp[seeds], th[seeds]], axis=1))
    return em_run(sp, th, MixtureParams.from_modes(modes, bandwidths)).model


def build_cliff(
    samples: SampleSet,
    lattice: Lattice,
    radius: float | None = None,
    hour: int | None = None,
    min_samples: int = MIN_SAMPLES,
    bandwidths=DEFAULT_BANDWIDTHS,
) -> GridMod:
    """Fit every lattice location with at least ``min_samples`` samples
    within ``radius`` (default: the lattice resolution)."""
    radius = lattice.resolution if radius is None else radius
    mod = GridMod(lattice, hour)
    if len(samples) == 0:
        return mod
    centres = lattice.centres()
    for idx, members in enumerate(lattice.neighbourhoods(samples.x, samples.y, radius)):
        if len(members) < min_samples:
            continue
        model = fit_cell(samples.speed[members], samples.theta[members], bandwidths)
        mod.cells[idx] = CliffCell(tuple(centres[idx]), model, len(members))
    return mod


def hour_of(t_sec) -> np.ndarray:
    return np.floor(np.asarray(t_sec, dtype=float) / 3600.0).astype(np.int64) % 24


def _swgmm_doc(m: Swgmm) -> dict:
    return {"arrays": serialize.encode_array(np.stack(m.as_arrays(), axis=0))}


def _swgmm_from_doc(d: dict) -> Swgmm:
    a = serialize.decode_array(d["arrays"])
    return Swgmm.from_arrays(*a)


class HourlyGridMap:
    """24 hourly :class:`GridMod` layers plus a global fallback mixture.

    Shared by the batch and the online CLiFF-map; ``kind`` tells them apart.
    """

    kind = "cliff"

    def __init__(self, lattice: Lattice, hours: dict, fallback: Swgmm, meta: dict | None = None):
        self.lattice = lattice
        self.hours = hours  # hour -> GridMod
        self.fallback = fallback
        self.meta = dict(meta or {})

    def model_at(self, x: float, y: float, t_sec: float) -> Swgmm:
        mod = self.hours.get(int(hour_of(t_sec)))
        cell = mod.cell_at(x, y) if mod is not None else None
        return cell.model if cell is not None and cell.model is not None else self.fallback

    def query(self, x: float, y: float, t_sec: float) -> Swgmm:
        return self.model_at(x, y, t_sec)

    def has_model(self, x: float, y: float, t_sec: float) -> bool:
        mod = self.hours.get(int(hour_of(t_sec)))
        return mod is not None and mod.cell_at(x, y) is not None

    def logpdf(self, samples: SampleSet) -> np.ndarray:
        hours = hour_of(samples.t)
        cells = self.lattice.nearest(samples.x, samples.y)
        models = []
        for h, c in zip(hours, cells):
            mod = self.hours.get(int(h))
            cell = mod.cells.get(int(c)) if mod is not None else None
            models.append(cell.model if cell is not None and cell.model is not None else self.fallback)
        return per_sample_logpdf(samples.speed, samples.theta, models)

    @property
    def n_cells(self) -> int:
        return sum(len(m.cells) for m in self.hours.values())

    def to_document(self) -> dict:
        hours = {}
        for h in sorted(self.hours):
            mod = self.hours[h]
            hours[str(h)] = {
                str(i): {"count": c.sample_count, **_swgmm_doc(c.model)}
                for i, c in sorted(mod.cells.items())
                if c.model is not None
            }
        return serialize.make_document(
            self.kind,
            {"lattice": self.lattice.to_dict(), "hours": hours, "fallback": _swgmm_doc(self.fallback), "meta": self.meta},
        )

    @classmethod
    def from_document(cls, doc: dict):
        lat = Lattice(**doc["lattice"])
        centres = lat.centres()
        hours = {}
        for h, cells in doc["hours"].items():
            mod = GridMod(lat, int(h))
            for i, c in cells.items():
                mod.cells[int(i)] = CliffCell(tuple(centres[int(i)]), _swgmm_from_doc(c), int(c["count"]))
            hours[int(h)] = mod
        return cls(lat, hours, _swgmm_from_doc(doc["fallback"]), doc.get("meta"))

    def save(self, path) -> None:
        serialize.save_document(self.to_document(), path)

    @classmethod
    def load(cls, path):
        return cls.from_document(serialize.load_document(path, expect=cls.kind))


class CliffMap(HourlyGridMap):
    kind = "cliff"


def build_hourly_cliff(
    samples: SampleSet,
    bounds=None,
    resolution: float = 1.0,
    radius: float | None = None,
    min_samples: int = MIN_SAMPLES,
    bandwidths=DEFAULT_BANDWIDTHS,
) -> CliffMap:
    """Separate CLiFF-map for each hour of day, pooling all training dates."""
    bounds = samples.bounds() if bounds is None else bounds
    lattice = Lattice.covering(bounds, resolution)
    hours_of = hour_of(samples.t)
    hours = {}
    for h in range(24):
        sub = samples.subset(np.flatnonzero(hours_of == h))
        hours[h] = build_cliff(sub, lattice, radius, h, min_samples, bandwidths)
    meta = {"resolution": resolution, "radius": lattice.resolution if radius is None else radius,
            "min_samples": min_samples, "bandwidths": list(bandwidths)}
    return CliffMap(lattice, hours, fit_global(samples, bandwidths), meta)
