"""Expectation-maximisation for semi-wrapped Gaussian mixtures.

The winding offsets k in {-1, 0, 1} are treated as latent variables next to
the component index, so every E-step yields responsibilities over (j, k)
and every M-step is a weighted Gaussian fit on the unwrapped images
``(speed, theta + 2 pi k)``. Mean orientations are kept unwrapped while
iterating (the fitted images are absolute, so no re-wrapping is needed) and
only folded into [0, 2pi) when a :class:`Swgmm` is exported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..swgmm import TWO_PI, WINDINGS, Swgmm, wrap_angle

VAR_FLOOR = 1e-6
WEIGHT_FLOOR = 1e-6
MAX_CORR = 0.99
_KS = np.array(WINDINGS, dtype=float)


@dataclass
class MixtureParams:
    """Working parameters: weights (J,), means (J, 2), covariances (J, 2, 2)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def copy(self) -> "MixtureParams":
        return MixtureParams(self.weights.copy(), self.means.copy(), self.covs.copy())

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def to_swgmm(self) -> Swgmm:
        var_s = self.covs[:, 0, 0]
        var_t = self.covs[:, 1, 1]
        corr = self.covs[:, 0, 1] / np.sqrt(var_s * var_t)
        w = self.weights / self.weights.sum()
        return Swgmm.from_arrays(w, np.maximum(self.means[:, 0], 0.0), wrap_angle(self.means[:, 1]), var_s, var_t, corr)

    @classmethod
    def from_swgmm(cls, m: Swgmm) -> "MixtureParams":
        w, ms, mt, vs, vt, r = m.as_arrays()
        c = r * np.sqrt(vs * vt)
        covs = np.stack([np.stack([vs, c], -1), np.stack([c, vt], -1)], -2)
        return cls(w.copy(), np.stack([ms, mt], axis=1), covs)

    @classmethod
    def from_modes(cls, modes, bandwidths) -> "MixtureParams":
        modes = np.asarray(modes, dtype=float).reshape(-1, 2)
        j = len(modes)
        covs = np.tile(np.diag([bandwidths[0] ** 2, bandwidths[1] ** 2]), (j, 1, 1))
        return cls(np.full(j, 1.0 / j), modes.copy(), covs)


def _log_terms(speed, theta, p: MixtureParams) -> np.ndarray:
    """log w_j + log N([speed, theta + 2pi k]; mu_j, Sigma_j), shape (N, J, 3)."""
    a = p.covs[:, 0, 0]
    b = p.covs[:, 1, 1]
    c = p.covs[:, 0, 1]
    det = a * b - c * c
    ds = speed[:, None, None] - p.means[None, :, 0, None]
    dt = theta[:, None, None] + TWO_PI * _KS[None, None, :] - p.means[None, :, 1, None]
    q = (b[None, :, None] * ds * ds - 2.0 * c[None, :, None] * ds * dt + a[None, :, None] * dt * dt) / det[None, :, None]
    with np.errstate(divide="ignore"):
        lw = np.log(p.weights)
    return (lw - math.log(TWO_PI) - 0.5 * np.log(det))[None, :, None] - 0.5 * q


def e_step(speed, theta, p: MixtureParams):
    """Responsibilities (N, J, 3) and mean log-likelihood."""
    lt = _log_terms(speed, theta, p)
    flat = lt.reshape(len(speed), -1)
    m = flat.max(axis=1, keepdims=True)
    s = np.exp(flat - m)
    tot = s.sum(axis=1, keepdims=True)
    ll = np.log(tot[:, 0]) + m[:, 0]
    resp = (s / tot).reshape(lt.shape)
    return resp, float(ll.mean())


def loglik(speed, theta, p: MixtureParams) -> float:
    return e_step(speed, theta, p)[1]


@dataclass
class SuffStats:
    """Per-sample averages of the complete-data sufficient statistics."""

    s0: np.ndarray  # (J,)
    s1: np.ndarray  # (J, 2)
    s2: np.ndarray  # (J, 2, 2)

    def blend(self, other: "SuffStats", gamma: float) -> "SuffStats":
        return SuffStats(
            self.s0 + gamma * (other.s0 - self.s0),
            self.s1 + gamma * (other.s1 - self.s1),
            self.s2 + gamma * (other.s2 - self.s2),
        )

    def keep(self, mask) -> "SuffStats":
        return SuffStats(self.s0[mask], self.s1[mask], self.s2[mask])


def suff_stats(speed, theta, resp) -> SuffStats:
    n = len(speed)
    ys = np.broadcast_to(speed[:, None, None], resp.shape)
    yt = theta[:, None, None] + TWO_PI * _KS[None, None, :]
    s0 = resp.sum(axis=(0, 2)) / n
    s1 = np.stack([(resp * ys).sum(axis=(0, 2)), (resp * yt).sum(axis=(0, 2))], axis=1) / n
    sss = (resp * ys * ys).sum(axis=(0, 2))
    sst = (resp * ys * yt).sum(axis=(0, 2))
    stt = (resp * yt * yt).sum(axis=(0, 2))
    s2 = np.stack([np.stack([sss, sst], -1), np.stack([sst, stt], -1)], -2) / n
    return SuffStats(s0, s1, s2)


def m_step(stats: SuffStats, var_floor: float = VAR_FLOOR) -> MixtureParams:
    s0 = stats.s0
    w = s0 / s0.sum()
    # a component with no mass gives NaNs here; drop_collapsed removes it
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = stats.s1 / s0[:, None]
        cov = stats.s2 / s0[:, None, None] - mu[:, :, None] * mu[:, None, :]
    a = np.maximum(cov[:, 0, 0], var_floor)
    b = np.maximum(cov[:, 1, 1], var_floor)
    # correlation bound: with r pinned at +-MAX_CORR the best variances are
    # s * (1 - r c) / (1 - r^2), c being the weighted sample correlation
    c_hat = cov[:, 0, 1] / np.sqrt(a * b)
    r = np.clip(c_hat, -MAX_CORR, MAX_CORR)
    pinned = np.abs(c_hat) > MAX_CORR
    scale = np.where(pinned, (1.0 - r * c_hat) / (1.0 - r * r), 1.0)
    a = np.maximum(a * scale, var_floor)
    b = np.maximum(b * scale, var_floor)
    c = r * np.sqrt(a * b)
    covs = np.stack([np.stack([a, c], -1), np.stack([c, b], -1)], -2)
    return MixtureParams(w, mu, covs)


def drop_collapsed(p: MixtureParams, floor: float = WEIGHT_FLOOR):
    """Remove components whose weight fell below ``floor``; returns (params, kept mask)."""
    keep = p.weights >= floor
    if keep.all() or not keep.any():
        return p, np.ones(len(p.weights), dtype=bool)
    w = p.weights[keep]
    return MixtureParams(w / w.sum(), p.means[keep], p.covs[keep]), keep


def em_iteration(speed, theta, p: MixtureParams, var_floor: float = VAR_FLOOR) -> MixtureParams:
    resp, _ = e_step(speed, theta, p)
    return m_step(suff_stats(speed, theta, resp), var_floor)


@dataclass
class EmResult:
    params: MixtureParams
    loglik: list = field(default_factory=list)  # mean log-likelihood, initial value first
    removals: list = field(default_factory=list)  # iteration indices where components were dropped

    @property
    def model(self) -> Swgmm:
        return self.params.to_swgmm()

    @property
    def n_iter(self) -> int:
        return len(self.loglik) - 1


def em_run(
    speed,
    theta,
    init: MixtureParams,
    tol: float = 1e-5,
    max_iter: int = 100,
    var_floor: float = VAR_FLOOR,
) -> EmResult:
    speed = np.asarray(speed, dtype=float)
    theta = wrap_angle(np.asarray(theta, dtype=float))
    p = init.copy()
    resp, ll = e_step(speed, theta, p)
    res = EmResult(p, [ll])
    for it in range(1, max_iter + 1):
        p = m_step(suff_stats(speed, theta, resp), var_floor)
        p, kept = drop_collapsed(p)
        if not kept.all():
            res.removals.append(it)
        resp, ll_new = e_step(speed, theta, p)
        res.params = p
        res.loglik.append(ll_new)
        if ll_new - ll < tol:
            break
        ll = ll_new
    return res


def em_fit_swgmm(speed, theta, init_modes, bandwidths=(0.3, 0.35), tol: float = 1e-5, max_iter: int = 100) -> Swgmm:
    """Fit an SWGMM starting from mode locations (e.g. from mean shift)."""
    speed = np.asarray(speed, dtype=float)
    if speed.size < 2:
        raise ValueError("EM needs at least two samples")
    init = MixtureParams.from_modes(init_modes, bandwidths)
    if init.n_components < 1:
        raise ValueError("EM needs at least one initial mode")
    return em_run(speed, theta, init, tol, max_iter).model
