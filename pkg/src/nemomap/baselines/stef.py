"""STeF-map: per-cell, per-orientation-bin periodic models (FreMEn).

Each lattice cell keeps 8 orientation sectors. For every sector the hourly
fraction of the cell's samples falling into it forms a time series, which is
summarised by its mean plus the strongest few harmonics from a fixed set of
candidate periods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import serialize
from ..data import SampleSet
from ..swgmm import TWO_PI, wrap_angle
from .grid import Lattice

N_BINS = 8
ORDER = 2
HOUR = 3600.0
CANDIDATE_PERIODS = tuple(h * HOUR for h in (24, 12, 8, 6, 4, 3, 2, 1))
BIN_WIDTH = TWO_PI / N_BINS


@dataclass
class Spectrum:
    mean: float
    periods: np.ndarray = field(default_factory=lambda: np.zeros(0))
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def predict(self, t_sec) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t_sec, dtype=float))
        out = np.full(t.shape, self.mean)
        for per, amp, ph in zip(self.periods, self.amplitudes, self.phases):
            out = out + amp * np.cos(TWO_PI * t / per + ph)
        return out


def fremen_fit(times, values, order: int = ORDER, periods=CANDIDATE_PERIODS) -> Spectrum:
    """Mean plus the ``order`` candidate periods with the largest amplitude.

    For each candidate angular frequency w the complex coefficient
    g = mean((s - mean) * exp(-i w t)) gives amplitude 2|g| and phase arg(g),
    so the reconstruction is ``mean + sum 2|g| cos(w t + arg g)``.
    Series shorter than ``2 * order + 1`` points, or spanning less than a
    day, get a static model.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(values, dtype=float)
    if s.size and (s.min() < 0.0 or s.max() > 1.0):
        raise ValueError("FreMEn values must lie in [0, 1]")
    if s.size == 0:
        return Spectrum(0.0)
    p0 = float(s.mean())
    if s.size < 2 * order + 1 or t.max() - t.min() < 86400.0 - HOUR:
        return Spectrum(p0)
    resid = s - p0
    per = np.asarray(periods, dtype=float)
    g = (resid[None, :] * np.exp(-1j * TWO_PI * t[None, :] / per[:, None])).mean(axis=1)
    amp = 2.0 * np.abs(g)
    # stable order: strongest first, earlier candidate on ties
    best = np.lexsort((np.arange(len(per)), -amp))[:order]
    return Spectrum(p0, per[best], amp[best], np.angle(g[best]))


def orientation_bin(theta) -> np.ndarray:
    """Sector index with sectors centred on multiples of 2pi/8."""
    return (np.floor(wrap_angle(np.asarray(theta, dtype=float) + BIN_WIDTH / 2) / BIN_WIDTH).astype(np.int64)) % N_BINS


@dataclass
class StefCell:
    bins: list  # N_BINS Spectrum objects
    sample_count: int = 0


def stef_query(cell: StefCell, t_sec) -> np.ndarray:
    """Categorical distribution over the 8 sectors at time(s) ``t_sec``; shape (N, 8)."""
    vals = np.stack([np.clip(b.predict(t_sec), 0.0, 1.0) for b in cell.bins], axis=-1)
    tot = vals.sum(axis=-1, keepdims=True)
    return np.where(tot > 0, vals / np.where(tot > 0, tot, 1.0), 1.0 / N_BINS)


def _series_times(samples: SampleSet):
    """Absolute hour slot of each sample and its centre time in seconds."""
    dates = sorted(set(samples.date.tolist()))
    day_index = {d: i for i, d in enumerate(dates)}
    day = np.array([day_index[d] for d in samples.date], dtype=np.int64)
    slot = day * 24 + np.floor(samples.t / HOUR).astype(np.int64)
    return slot


def fit_stef_cell(samples: SampleSet, order: int = ORDER) -> StefCell:
    slot = _series_times(samples)
    bins = orientation_bin(samples.theta)
    slots = np.unique(slot)
    counts = np.zeros((len(slots), N_BINS))
    pos = np.searchsorted(slots, slot)
    np.add.at(counts, (pos, bins), 1.0)
    frac = counts / counts.sum(axis=1, keepdims=True)
    times = (slots + 0.5) * HOUR
    return StefCell([fremen_fit(times, frac[:, b], order) for b in range(N_BINS)], len(samples))


class StefMap:
    kind = "stef"

    def __init__(self, lattice: Lattice, cells: dict, fallback: StefCell, meta: dict | None = None):
        self.lattice = lattice
        self.cells = cells
        self.fallback = fallback
        self.meta = dict(meta or {})

    def cell_at(self, x, y) -> StefCell:
        return self.cells.get(int(self.lattice.nearest(x, y)), self.fallback)

    def query(self, x: float, y: float, t_sec: float) -> np.ndarray:
        return stef_query(self.cell_at(x, y), t_sec)[0]

    def logpdf(self, samples: SampleSet) -> np.ndarray:
        """Orientation-only log-density: sector probability / sector width."""
        idx = self.lattice.nearest(samples.x, samples.y)
        bins = orientation_bin(samples.theta)
        out = np.empty(len(samples))
        for c in np.unique(idx):
            sel = np.flatnonzero(idx == c)
            cell = self.cells.get(int(c), self.fallback)
            probs = stef_query(cell, samples.t[sel])
            p = probs[np.arange(sel.size), bins[sel]]
            with np.errstate(divide="ignore"):
                out[sel] = np.log(p) - math.log(BIN_WIDTH)
        return out

    def to_document(self) -> dict:
        def cell_doc(c: StefCell):
            return {
                "count": c.sample_count,
                "bins": [
                    {"mean": b.mean, "periods": serialize.encode_array(b.periods),
                     "amplitudes": serialize.encode_array(b.amplitudes), "phases": serialize.encode_array(b.phases)}
                    for b in c.bins
                ],
            }

        return serialize.make_document(self.kind, {
            "lattice": self.lattice.to_dict(),
            "cells": {str(i): cell_doc(c) for i, c in sorted(self.cells.items())},
            "fallback": cell_doc(self.fallback),
            "meta": self.meta,
        })

    @classmethod
    def from_document(cls, doc: dict) -> "StefMap":
        def cell(d):
            return StefCell([
                Spectrum(b["mean"], serialize.decode_array(b["periods"]), serialize.decode_array(b["amplitudes"]),
                         serialize.decode_array(b["phases"]))
                for b in d["bins"]
            ], int(d["count"]))

        cells = {int(i): cell(c) for i, c in doc["cells"].items()}
        return cls(Lattice(**doc["lattice"]), cells, cell(doc["fallback"]), doc.get("meta"))

    def save(self, path) -> None:
        serialize.save_document(self.to_document(), path)

    @classmethod
    def load(cls, path) -> "StefMap":
        return cls.from_document(serialize.load_document(path, expect=cls.kind))


def build_stef(samples: SampleSet, bounds=None, resolution: float = 1.0, order: int = ORDER,
               min_samples: int = 1) -> StefMap:
    """Assign samples to their nearest lattice point and fit one STeF cell per point."""
    bounds = samples.bounds() if bounds is None else bounds
    lattice = Lattice.covering(bounds, resolution)
    idx = lattice.nearest(samples.x, samples.y)
    cells = {}
    order_idx = np.argsort(idx, kind="stable")
    sorted_idx = idx[order_idx]
    uniq, starts = np.unique(sorted_idx, return_index=True)
    bounds_ = list(starts[1:]) + [len(sorted_idx)]
    for c, s, e in zip(uniq, starts, bounds_):
        if c < 0 or e - s < min_samples:
            continue
        cells[int(c)] = fit_stef_cell(samples.subset(order_idx[s:e]), order)
    meta = {"resolution": resolution, "bins": N_BINS, "order": order,
            "candidate_periods_h": [p / HOUR for p in CANDIDATE_PERIODS],
            "note": "orientation-only density (speed not modelled)"}
    return StefMap(lattice, cells, fit_stef_cell(samples, order), meta)
