"""Synthetic corridor flows with a known, queryable ground truth.

Each flow occupies a lane of a straight corridor and has a daily activity
profile (a constant floor plus wrapped Gaussian bumps over the hour of day).
At a point (x, y, t) the true velocity distribution is an SWGMM with one
component per flow whose lane covers y, weighted by the flow's activity
density at t.
"""
from __future__ import annotations

import datetime as _dt
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import serialize
from .data import SampleSet
from .swgmm import TWO_PI, Swgmm, SwndParams, mixture_logpdf, wrap_angle

HOURS = 24.0


@dataclass
class FlowSpec:
    theta0: float = 0.0
    speed_mean: float = 1.2
    speed_std: float = 0.2
    theta_std: float = 0.15
    corr: float = 0.0
    lane: tuple = (0.0, 1.0)  # fraction of corridor width
    base_activity: float = 1.0
    bumps: tuple = ()  # (centre hour, width hours, amplitude)
    sway_amp: float = 0.0  # orientation sway along the corridor, rad
    drift_amp: float = 0.0  # orientation drift over the day, rad
    drift_phase: float = 0.0
    speed_drift_amp: float = 0.0

    def __post_init__(self):
        self.lane = tuple(float(v) for v in self.lane)
        self.bumps = tuple(tuple(float(v) for v in b) for b in self.bumps)

    def activity(self, hour) -> np.ndarray:
        hour = np.asarray(hour, dtype=float)
        a = np.full(hour.shape, self.base_activity)
        for c, w, amp in self.bumps:
            d = np.mod(hour - c + 12.0, HOURS) - 12.0
            a = a + amp * np.exp(-0.5 * (d / w) ** 2)
        return a

    def masses(self):
        """Integrated activity of the floor and of every bump (per day)."""
        return [self.base_activity * HOURS] + [amp * w * math.sqrt(TWO_PI) for _, w, amp in self.bumps]

    def mean_theta(self, x, t_frac, length):
        return (
            self.theta0
            + self.sway_amp * np.sin(TWO_PI * np.asarray(x) / length)
            + self.drift_amp * np.sin(TWO_PI * np.asarray(t_frac) + self.drift_phase)
        )

    def mean_speed(self, t_frac):
        return self.speed_mean + self.speed_drift_amp * np.sin(TWO_PI * np.asarray(t_frac) + self.drift_phase)


@dataclass
class SynthConfig:
    length: float = 30.0
    width: float = 6.0
    flows: list = field(default_factory=lambda: [FlowSpec()])
    train_days: int = 3
    test_days: int = 1
    samples_per_day: int = 15000
    seed: int = 0
    start_date: str = "2012-10-24"

    def __post_init__(self):
        self.flows = [f if isinstance(f, FlowSpec) else FlowSpec(**f) for f in self.flows]
        if not self.flows:
            raise ValueError("need at least one flow")

    @property
    def bounds(self) -> tuple:
        return (0.0, float(self.length), 0.0, float(self.width))

    def dates(self) -> list:
        d0 = _dt.date.fromisoformat(self.start_date)
        return [(d0 + _dt.timedelta(days=i)).isoformat() for i in range(self.train_days + self.test_days)]


def scenario(name: str, **overrides) -> SynthConfig:
    """Preset configurations used by the CLI and the acceptance suite."""
    if name == "constant":
        cfg = SynthConfig(flows=[FlowSpec(theta0=0.5)])
    elif name == "reversal":
        east = FlowSpec(theta0=0.0, speed_mean=1.3, speed_std=0.2, theta_std=0.2, corr=0.2,
                        base_activity=0.1, bumps=((9.0, 2.0, 1.0), (13.0, 2.0, 0.4)), sway_amp=0.3)
        west = FlowSpec(theta0=math.pi, speed_mean=1.0, speed_std=0.2, theta_std=0.2, corr=-0.2,
                        base_activity=0.1, bumps=((18.0, 2.0, 1.0), (13.0, 2.0, 0.4)), sway_amp=0.3)
        cfg = SynthConfig(flows=[east, west])
    elif name == "drift":
        flow = FlowSpec(theta0=math.pi / 2, speed_mean=1.2, speed_std=0.15, theta_std=0.12,
                        base_activity=1.0, sway_amp=0.3, drift_amp=0.8, speed_drift_amp=0.2)
        cfg = SynthConfig(flows=[flow])
    else:
        raise ValueError(f"unknown scenario {name!r}")
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


class TruthModel:
    """The generating distribution of a :class:`SynthConfig`."""

    kind = "truth"

    def __init__(self, config: SynthConfig):
        self.config = config

    def _lane_mask(self, y) -> np.ndarray:
        w = self.config.width
        frac = np.asarray(y, dtype=float) / w
        return np.stack([(frac >= f.lane[0]) & (frac <= f.lane[1]) for f in self.config.flows], axis=-1)

    def query_arrays(self, x, y, t_sec) -> dict:
        cfg = self.config
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        t_frac = np.mod(np.atleast_1d(np.asarray(t_sec, dtype=float)), 86400.0) / 86400.0
        hour = t_frac * HOURS
        lane = self._lane_mask(y)
        dens = np.stack(
            [f.activity(hour) / ((f.lane[1] - f.lane[0]) * cfg.width) for f in cfg.flows], axis=-1
        ) * lane
        tot = dens.sum(axis=1, keepdims=True)
        # outside every lane: fall back to equal weights so the model stays valid
        weights = np.where(tot > 0, dens / np.where(tot > 0, tot, 1.0), 1.0 / len(cfg.flows))
        ms = np.stack([np.broadcast_to(f.mean_speed(t_frac), x.shape) for f in cfg.flows], axis=-1)
        mt = np.stack([f.mean_theta(x, t_frac, cfg.length) for f in cfg.flows], axis=-1)
        ones = np.ones_like(x)[:, None]
        return {
            "weights": weights,
            "mean_speed": ms,
            "mean_theta": wrap_angle(mt),
            "var_speed": ones * np.array([f.speed_std ** 2 for f in cfg.flows]),
            "var_theta": ones * np.array([f.theta_std ** 2 for f in cfg.flows]),
            "corr": ones * np.array([f.corr for f in cfg.flows]),
        }

    def query(self, x: float, y: float, t_sec: float) -> Swgmm:
        a = self.query_arrays(x, y, t_sec)
        keep = a["weights"][0] > 0
        w = a["weights"][0][keep]
        comps = [
            SwndParams(float(a["mean_speed"][0][j]), float(a["mean_theta"][0][j]),
                       float(a["var_speed"][0][j]), float(a["var_theta"][0][j]), float(a["corr"][0][j]))
            for j in np.flatnonzero(keep)
        ]
        return Swgmm(tuple(w / w.sum()), tuple(comps))

    def logpdf(self, samples: SampleSet) -> np.ndarray:
        a = self.query_arrays(samples.x, samples.y, samples.t)
        return mixture_logpdf(samples.speed, samples.theta, a["weights"], a["mean_speed"],
                              a["mean_theta"], a["var_speed"], a["var_theta"], a["corr"])

    def to_document(self) -> dict:
        return serialize.make_document(self.kind, {"config": asdict(self.config)})

    @classmethod
    def from_document(cls, doc: dict) -> "TruthModel":
        return cls(SynthConfig(**doc["config"]))

    def save(self, path) -> None:
        serialize.save_document(self.to_document(), path)

    @classmethod
    def load(cls, path) -> "TruthModel":
        return cls.from_document(serialize.load_document(path, expect=cls.kind))


def _draw_day(cfg: SynthConfig, rng: np.random.Generator, n: int, date: str, pid0: int) -> SampleSet:
    flows = cfg.flows
    # pick (flow, activity piece) by integrated mass, then a time inside it
    pieces = [(fi, pi, m) for fi, f in enumerate(flows) for pi, m in enumerate(f.masses()) if m > 0]
    mass = np.array([m for _, _, m in pieces])
    choice = rng.choice(len(pieces), size=n, p=mass / mass.sum())
    hour = np.empty(n)
    flow_idx = np.empty(n, dtype=np.intp)
    for c, (fi, pi, _) in enumerate(pieces):
        sel = choice == c
        k = int(np.count_nonzero(sel))
        flow_idx[sel] = fi
        if pi == 0:
            hour[sel] = rng.uniform(0.0, HOURS, size=k)
        else:
            centre, width, _ = flows[fi].bumps[pi - 1]
            hour[sel] = np.mod(rng.normal(centre, width, size=k), HOURS)
    t_sec = hour * 3600.0
    t_sec = np.where(t_sec >= 86400.0, 0.0, t_sec)
    x = rng.uniform(0.0, cfg.length, size=n)
    lanes = np.array([f.lane for f in flows])[flow_idx]
    y = (lanes[:, 0] + (lanes[:, 1] - lanes[:, 0]) * rng.uniform(0.0, 1.0, size=n)) * cfg.width
    t_frac = t_sec / 86400.0
    ms = np.array([0.0] * n)
    mt = np.array([0.0] * n)
    for fi, f in enumerate(flows):
        sel = flow_idx == fi
        ms[sel] = f.mean_speed(t_frac[sel])
        mt[sel] = f.mean_theta(x[sel], t_frac[sel], cfg.length)
    ss = np.array([f.speed_std for f in flows])[flow_idx]
    st = np.array([f.theta_std for f in flows])[flow_idx]
    rr = np.array([f.corr for f in flows])[flow_idx]
    z = rng.standard_normal((n, 2))
    speed = np.maximum(ms + ss * z[:, 0], 0.0)
    theta = wrap_angle(mt + st * (rr * z[:, 0] + np.sqrt(1.0 - rr * rr) * z[:, 1]))
    order = np.argsort(t_sec, kind="stable")
    s = SampleSet(x, y, t_sec, speed, theta, pid0 + np.arange(n), np.full(n, date))
    return s.subset(order)


def synth_generate(cfg: SynthConfig):
    """Draw (train, test, truth) for a configuration. Deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    days = []
    for i, date in enumerate(cfg.dates()):
        days.append(_draw_day(cfg, rng, cfg.samples_per_day, date, i * cfg.samples_per_day))
    train = SampleSet.concat(days[: cfg.train_days])
    test = SampleSet.concat(days[cfg.train_days:])
    return train, test, TruthModel(cfg)


def truth_entropy(truth: TruthModel, n: int = 20000, seed: int = 1) -> tuple:
    """Monte Carlo estimate (mean, standard error) of the conditional
    entropy of velocity given (x, y, t) under the generating process."""
    cfg = SynthConfig(**{**asdict(truth.config), "seed": seed, "samples_per_day": n,
                         "train_days": 1, "test_days": 0})
    s, _, _ = synth_generate(cfg)
    nll = -truth.logpdf(s)
    return float(nll.mean()), float(nll.std(ddof=1) / math.sqrt(len(nll)))
