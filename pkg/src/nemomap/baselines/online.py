"""Online CLiFF-map: per-location SWGMMs updated batch by batch with
stochastic EM (the E-step statistics are blended into running averages
with a decaying step size; the M-step is the exact batch one)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import SampleSet
from ..swgmm import Swgmm, wrap_angle
from .cliff import HourlyGridMap, CliffCell, GridMod, fit_global, hour_of
from .em import MixtureParams, SuffStats, drop_collapsed, e_step, m_step, suff_stats
from .grid import Lattice, canonical_order
from .meanshift import DEFAULT_BANDWIDTHS, mean_shift_modes

MIN_SAMPLES = 5


def default_step_size(n: int) -> float:
    return (n + 2) ** -0.7


@dataclass
class SemState:
    params: MixtureParams
    stats: SuffStats
    n: int = 1  # batches absorbed so far

    @property
    def model(self) -> Swgmm:
        return self.params.to_swgmm()


def sem_init(speed, theta, bandwidths=DEFAULT_BANDWIDTHS) -> SemState:
    """First batch: mean-shift modes, then one EM pass."""
    order = canonical_order(speed, theta)
    speed = np.asarray(speed, dtype=float)[order]
    theta = wrap_angle(np.asarray(theta, dtype=float)[order])
    modes = mean_shift_modes(speed, theta, bandwidths)
    p0 = MixtureParams.from_modes(modes, bandwidths)
    resp, _ = e_step(speed, theta, p0)
    stats = suff_stats(speed, theta, resp)
    params, keep = drop_collapsed(m_step(stats))
    return SemState(params, stats.keep(keep), 1)


def sem_update(state: SemState, speed, theta, step_size=None) -> SemState:
    """Absorb one batch. ``step_size`` overrides the schedule: a float, or a
    callable of the batch counter."""
    speed = np.asarray(speed, dtype=float)
    if speed.size == 0:
        return state
    theta = wrap_angle(np.asarray(theta, dtype=float))
    if step_size is None:
        gamma = default_step_size(state.n)
    elif callable(step_size):
        gamma = float(step_size(state.n))
    else:
        gamma = float(step_size)
    resp, _ = e_step(speed, theta, state.params)
    stats = state.stats.blend(suff_stats(speed, theta, resp), gamma)
    if gamma == 0.0:
        return SemState(state.params.copy(), stats, state.n)
    params, keep = drop_collapsed(m_step(stats))
    return SemState(params, stats.keep(keep), state.n + 1)


class OnlineCliffMap(HourlyGridMap):
    kind = "cliff-online"


def build_online_cliff(
    samples: SampleSet,
    bounds=None,
    resolution: float = 1.0,
    radius: float | None = None,
    min_samples: int = MIN_SAMPLES,
    bandwidths=DEFAULT_BANDWIDTHS,
) -> OnlineCliffMap:
    """Stream hourly batches in chronological order through per-location sEM.

    After the batch of (date, hour h) is absorbed, a snapshot of every
    location's current mixture becomes the layer for hour h; later dates
    overwrite earlier snapshots.
    """
    bounds = samples.bounds() if bounds is None else bounds
    lattice = Lattice.covering(bounds, resolution)
    radius = lattice.resolution if radius is None else radius
    centres = lattice.centres()
    hours_of = hour_of(samples.t)
    states: dict[int, SemState] = {}
    layers: dict[int, GridMod] = {}
    for date in sorted(set(samples.date.tolist())):
        on_day = samples.date == date
        for h in range(24):
            sel = np.flatnonzero(on_day & (hours_of == h))
            if sel.size == 0:
                continue
            batch = samples.subset(sel)
            for idx, members in enumerate(lattice.neighbourhoods(batch.x, batch.y, radius)):
                if len(members) < min_samples:
                    continue
                sp, th = batch.speed[members], batch.theta[members]
                if idx in states:
                    states[idx] = sem_update(states[idx], sp, th)
                else:
                    states[idx] = sem_init(sp, th, bandwidths)
            layer = GridMod(lattice, h)
            for idx, st in states.items():
                layer.cells[idx] = CliffCell(tuple(centres[idx]), st.model, st.n)
            layers[h] = layer
    meta = {"resolution": resolution, "radius": radius, "min_samples": min_samples,
            "bandwidths": list(bandwidths), "step_size": "(n+2)^-0.7"}
    return OnlineCliffMap(lattice, layers, fit_global(samples, bandwidths), meta)
