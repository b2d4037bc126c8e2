"""Semi-wrapped normal densities over (speed, orientation) and their mixtures.

A velocity is the pair (speed, orientation). Speed is linear, orientation
lives on the circle. The semi-wrapped normal is a bivariate Gaussian whose
angular axis is folded onto [0, 2pi) by summing over winding offsets; the
sum is truncated to k in {-1, 0, 1}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
WINDINGS = (-1, 0, 1)
DET_FLOOR = 1e-300
_LOG_2PI = math.log(TWO_PI)


class DegenerateCovarianceError(ValueError):
    """Raised when a component covariance is (numerically) singular."""


def wrap_angle(theta):
    """Map an angle (scalar or array) into [0, 2pi)."""
    arr = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite angle: {theta!r}")
    out = np.mod(arr, TWO_PI)
    # np.mod can return exactly 2pi for tiny negative inputs
    out = np.where(out >= TWO_PI, 0.0, out)
    if np.ndim(theta) == 0:
        return float(out)
    return out


def wrap_pi(delta):
    """Signed angular difference in [-pi, pi)."""
    return np.mod(np.asarray(delta, dtype=float) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class Velocity:
    speed: float
    orientation: float

    def __post_init__(self):
        if not (math.isfinite(self.speed) and self.speed >= 0.0):
            raise ValueError(f"speed must be finite and >= 0, got {self.speed}")
        if not (0.0 <= self.orientation < TWO_PI):
            raise ValueError(f"orientation must lie in [0, 2pi), got {self.orientation}")

    @classmethod
    def from_raw(cls, speed: float, orientation: float) -> "Velocity":
        return cls(float(speed), wrap_angle(orientation))


@dataclass(frozen=True)
class SwndParams:
    """One semi-wrapped normal: mean (speed, orientation) and covariance
    stored as two variances plus a correlation coefficient."""

    mean_speed: float
    mean_theta: float
    var_speed: float
    var_theta: float
    corr: float = 0.0

    def __post_init__(self):
        vals = (self.mean_speed, self.mean_theta, self.var_speed, self.var_theta, self.corr)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite SWND parameters: {vals}")
        if self.mean_speed < 0.0:
            raise ValueError(f"mean speed must be >= 0, got {self.mean_speed}")
        if not (0.0 <= self.mean_theta < TWO_PI):
            raise ValueError(f"mean orientation must lie in [0, 2pi), got {self.mean_theta}")
        if self.var_speed <= 0.0 or self.var_theta <= 0.0:
            raise ValueError("variances must be positive")
        if not abs(self.corr) < 1.0:
            raise ValueError(f"|corr| must be < 1, got {self.corr}")

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mean_speed, self.mean_theta])

    @property
    def cov(self) -> np.ndarray:
        c = self.corr * math.sqrt(self.var_speed * self.var_theta)
        return np.array([[self.var_speed, c], [c, self.var_theta]])

    @property
    def det(self) -> float:
        return self.var_speed * self.var_theta * (1.0 - self.corr ** 2)


@dataclass(frozen=True)
class Swgmm:
    weights: tuple
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.weights) == 0 or len(self.weights) != len(self.components):
            raise ValueError("need J >= 1 components with one weight each")
        if any(not (0.0 <= w <= 1.0) for w in self.weights):
            raise ValueError(f"weights must lie in [0, 1]: {self.weights}")
        if abs(math.fsum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1: {self.weights}")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def as_arrays(self):
        """(weights, mean_speed, mean_theta, var_speed, var_theta, corr) arrays of length J."""
        c = self.components
        return (
            np.array(self.weights),
            np.array([p.mean_speed for p in c]),
            np.array([p.mean_theta for p in c]),
            np.array([p.var_speed for p in c]),
            np.array([p.var_theta for p in c]),
            np.array([p.corr for p in c]),
        )

    @classmethod
    def from_arrays(cls, weights, mean_speed, mean_theta, var_speed, var_theta, corr) -> "Swgmm":
        comps = [
            SwndParams(float(ms), wrap_angle(float(mt)), float(vs), float(vt), float(r))
            for ms, mt, vs, vt, r in zip(mean_speed, mean_theta, var_speed, var_theta, corr)
        ]
        return cls(tuple(float(w) for w in weights), tuple(comps))


def _logsumexp(a: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis)


def swnd_logpdf(v: Velocity, p: SwndParams) -> float:
    """Log-density of one semi-wrapped normal at velocity ``v``."""
    det = p.det
    if not det > DET_FLOOR:
        raise DegenerateCovarianceError(f"covariance determinant {det:g} <= {DET_FLOOR:g}")
    theta = wrap_angle(v.orientation)
    cov = p.cov
    inv = np.linalg.inv(cov)
    terms = []
    for k in WINDINGS:
        d = np.array([v.speed - p.mean_speed, theta + TWO_PI * k - p.mean_theta])
        terms.append(-0.5 * float(d @ inv @ d))
    norm = -_LOG_2PI - 0.5 * math.log(det)
    return float(_logsumexp(np.array(terms))) + norm


def swgmm_logpdf(v: Velocity, m: Swgmm) -> float:
    """Log-density of the mixture at ``v``."""
    comp = []
    for w, p in zip(m.weights, m.components):
        lw = math.log(w) if w > 0.0 else -math.inf
        comp.append(lw + swnd_logpdf(v, p))
    return float(_logsumexp(np.array(comp)))


def mixture_logpdf(speed, theta, weights, mean_speed, mean_theta, var_speed, var_theta, corr):
    """Vectorised mixture log-density.

    ``speed`` and ``theta`` have shape (N,). Parameter arrays have shape (J,)
    (one shared mixture) or (N, J) (one mixture per sample). Returns (N,).
    """
    speed = np.asarray(speed, dtype=float)[:, None, None]
    theta = wrap_angle(np.asarray(theta, dtype=float))[:, None, None]
    params = [np.asarray(a, dtype=float) for a in (weights, mean_speed, mean_theta, var_speed, var_theta, corr)]
    params = [a[None, :, None] if a.ndim == 1 else a[:, :, None] for a in params]
    w, ms, mt, vs, vt, r = params
    det = vs * vt * (1.0 - r * r)
    if np.any(det <= DET_FLOOR):
        raise DegenerateCovarianceError("covariance determinant below floor")
    ks = np.array(WINDINGS, dtype=float)[None, None, :]
    zs = (speed - ms) / np.sqrt(vs)
    zt = (theta + TWO_PI * ks - mt) / np.sqrt(vt)
    q = (zs * zs - 2.0 * r * zs * zt + zt * zt) / (1.0 - r * r)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    log_terms = lw - _LOG_2PI - 0.5 * np.log(det) - 0.5 * q
    n = log_terms.shape[0]
    return _logsumexp(log_terms.reshape(n, -1), axis=1)


def swgmm_sample(m: Swgmm, rng: np.random.Generator, size: int | None = None):
    """Draw velocities from the mixture.

    With ``size=None`` returns one :class:`Velocity`; otherwise returns
    ``(speed, theta)`` arrays of length ``size``.
    """
    n = 1 if size is None else int(size)
    w, ms, mt, vs, vt, r = m.as_arrays()
    idx = rng.choice(len(w), size=n, p=w / w.sum())
    z = rng.standard_normal((n, 2))
    ss = np.sqrt(vs[idx])
    st = np.sqrt(vt[idx])
    rr = r[idx]
    # Cholesky factor of [[1, r], [r, 1]] applied to unit normals
    speed = ms[idx] + ss * z[:, 0]
    theta = mt[idx] + st * (rr * z[:, 0] + np.sqrt(1.0 - rr * rr) * z[:, 1])
    speed = np.maximum(speed, 0.0)
    theta = wrap_angle(theta)
    if size is None:
        return Velocity(float(speed[0]), float(theta[0]))
    return speed, theta


def sample_components(m: Swgmm, rng: np.random.Generator, size: int) -> np.ndarray:
    """Component indices as :func:`swgmm_sample` would draw them (same rng stream)."""
    w = np.asarray(m.weights)
    return rng.choice(len(w), size=size, p=w / w.sum())


def dominant_component(m: Swgmm) -> int:
    # np.argmax returns the first maximum, which is the tie rule we want
    return int(np.argmax(np.asarray(m.weights)))


def fit_single_swnd(speed: Sequence[float], theta: Sequence[float], var_floor: float = 1e-6) -> Swgmm:
    """Closed-form single-component fit: circular mean for orientation,
    moments of the unwrapped residuals for the covariance."""
    speed = np.asarray(speed, dtype=float)
    theta = wrap_angle(np.asarray(theta, dtype=float))
    mt = wrap_angle(math.atan2(np.mean(np.sin(theta)), np.mean(np.cos(theta))))
    dt = wrap_pi(theta - mt)
    ms = float(np.mean(speed))
    ds = speed - ms
    vs = max(float(np.mean(ds * ds)), var_floor)
    vt = max(float(np.mean(dt * dt)), var_floor)
    r = float(np.mean(ds * dt)) / math.sqrt(vs * vt)
    r = float(np.clip(r, -0.99, 0.99))
    return Swgmm((1.0,), (SwndParams(ms, mt, vs, vt, r),))
