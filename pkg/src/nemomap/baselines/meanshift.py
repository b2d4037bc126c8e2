"""Gaussian-kernel mean shift on the speed/orientation cylinder."""
from __future__ import annotations

import numpy as np

from ..swgmm import wrap_angle, wrap_pi

DEFAULT_BANDWIDTHS = (0.3, 0.35)  # (m/s, rad)


def mean_shift_modes(
    speed,
    theta,
    bandwidths=DEFAULT_BANDWIDTHS,
    tol: float = 1e-5,
    max_iter: int = 100,
    seeds=None,
) -> np.ndarray:
    """Modes of the kernel density of (speed, orientation) samples.

    Every sample (or every row of ``seeds``) is shifted uphill until it moves
    less than ``tol`` or ``max_iter`` is reached. Orientation differences are
    taken on the circle. Converged points closer than half a bandwidth (in
    bandwidth-scaled distance) are merged, keeping the one with the highest
    density. Returns an (M, 2) array of (speed, orientation) sorted by
    decreasing density.
    """
    speed = np.asarray(speed, dtype=float)
    theta = wrap_angle(np.asarray(theta, dtype=float))
    if speed.size == 0:
        raise ValueError("mean shift needs at least one sample")
    bs, bt = bandwidths
    if seeds is None:
        pts = np.stack([speed, theta], axis=1)
    else:
        pts = np.array(seeds, dtype=float).reshape(-1, 2)
    active = np.ones(len(pts), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        p = pts[active]
        ds = (speed[None, :] - p[:, :1]) / bs
        dt = wrap_pi(theta[None, :] - p[:, 1:2]) / bt
        k = np.exp(-0.5 * (ds * ds + dt * dt))
        ksum = k.sum(axis=1)
        new_s = (k @ speed) / ksum
        new_t = p[:, 1] + (k * dt).sum(axis=1) * bt / ksum
        shift = np.hypot(new_s - p[:, 0], new_t - p[:, 1])
        p = np.stack([new_s, wrap_angle(new_t)], axis=1)
        pts[active] = p
        idx = np.flatnonzero(active)
        active[idx[shift < tol]] = False

    ds = (speed[None, :] - pts[:, :1]) / bs
    dt = wrap_pi(theta[None, :] - pts[:, 1:2]) / bt
    density = np.exp(-0.5 * (ds * ds + dt * dt)).sum(axis=1)
    order = np.lexsort((pts[:, 1], pts[:, 0], -density))
    kept: list[np.ndarray] = []
    for i in order:
        p = pts[i]
        if all(np.hypot((p[0] - q[0]) / bs, wrap_pi(p[1] - q[1]) / bt) >= 0.5 for q in kept):
            kept.append(p)
    return np.array(kept)
