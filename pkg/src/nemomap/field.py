"""Continuous spatio-temporal map of dynamics as a small coordinate network.

A query (x, y, t) is answered by

1. normalising the position to [-1, 1]^2 and the time of day to [0, 1),
2. bilinearly interpolating a learnable feature grid at the position,
3. encoding the time (SIREN, a 24-bin table, or fixed Fourier features),
4. running ``[x, y, t, f_s, f_t]`` through a ReLU MLP,
5. modulating the MLP output with a per-channel affine (gamma, beta)
   generated from the time features, and
6. a linear head emitting 6J raw numbers mapped onto a valid SWGMM.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import serialize
from .autodiff import Node, Tape
from .swgmm import TWO_PI, WINDINGS, Swgmm

SECONDS_PER_DAY = 86400.0
VARIANTS = ("siren", "grid24", "fourier")
LOGVAR_RANGE = (-10.0, 10.0)
CORR_SCALE = 0.99
_LOG_2PI = math.log(TWO_PI)


@dataclass
class FieldConfig:
    bounds: tuple = (0.0, 10.0, 0.0, 10.0)  # x_min, x_max, y_min, y_max in metres
    n_components: int = 3
    cell_size: float = 1.0
    spatial_channels: int = 16
    temporal_channels: int = 16
    hidden: tuple = (128, 64)
    variant: str = "siren"
    omega_first: float = 30.0
    omega_hidden: float = 1.0
    time_bins: int = 24
    fourier_freqs: int = 4
    seed: int = 0

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        self.hidden = tuple(int(h) for h in self.hidden)
        x0, x1, y0, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate bounds {self.bounds}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown temporal variant {self.variant!r}; choose from {VARIANTS}")
        if self.n_components < 1:
            raise ValueError("need at least one mixture component")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")

    @property
    def grid_shape(self) -> tuple:
        """(H, W): rows follow y, columns follow x; cell centres sit on a
        lattice spanning the bounds."""
        x0, x1, y0, y1 = self.bounds
        w = max(2, int(round((x1 - x0) / self.cell_size)) + 1)
        h = max(2, int(round((y1 - y0) / self.cell_size)) + 1)
        return h, w

    @property
    def time_width(self) -> int:
        return 2 * self.fourier_freqs if self.variant == "fourier" else self.temporal_channels


# -- coordinate handling ------------------------------------------------------


def normalize_coords(x, y, bounds, counter: list | None = None):
    """World metres -> unit square [-1, 1]^2. Out-of-bounds points are clamped
    and counted in ``counter[0]`` when a counter is given."""
    x0, x1, y0, y1 = bounds
    u = 2.0 * (np.asarray(x, dtype=float) - x0) / (x1 - x0) - 1.0
    v = 2.0 * (np.asarray(y, dtype=float) - y0) / (y1 - y0) - 1.0
    outside = (np.abs(u) > 1.0) | (np.abs(v) > 1.0)
    n_out = int(np.count_nonzero(outside))
    if n_out and counter is not None:
        counter[0] += n_out
    return np.clip(u, -1.0, 1.0), np.clip(v, -1.0, 1.0)


def denormalize_coords(u, v, bounds):
    x0, x1, y0, y1 = bounds
    return x0 + (np.asarray(u) + 1.0) * 0.5 * (x1 - x0), y0 + (np.asarray(v) + 1.0) * 0.5 * (y1 - y0)


def normalize_time(t_sec):
    """Seconds of day -> [0, 1); whole days wrap."""
    return np.mod(np.asarray(t_sec, dtype=float), SECONDS_PER_DAY) / SECONDS_PER_DAY


def denormalize_time(t):
    return np.asarray(t, dtype=float) * SECONDS_PER_DAY


def fourier_features(t, n_freqs: int = 4) -> np.ndarray:
    """[sin(2^n 2pi t), cos(2^n 2pi t)] for n < n_freqs, interleaved; shape (N, 2F)."""
    t = np.mod(np.atleast_1d(np.asarray(t, dtype=float)), 1.0)
    out = np.empty((t.size, 2 * n_freqs))
    for n in range(n_freqs):
        arg = (2.0 ** n) * TWO_PI * t
        out[:, 2 * n] = np.sin(arg)
        out[:, 2 * n + 1] = np.cos(arg)
    return out


# -- network pieces (all work on any Tape) ------------------------------------


def interp_spatial(tape: Tape, grid: Node, u, v, shape) -> Node:
    h, w = shape
    cols = (np.asarray(u) + 1.0) * 0.5 * (w - 1)
    rows = (np.asarray(v) + 1.0) * 0.5 * (h - 1)
    return tape.gather_bilinear(grid, np.stack([cols, rows], axis=1), h, w)


def encode_time(tape: Tape, cfg: FieldConfig, p: dict, t) -> Node:
    t = np.asarray(t, dtype=float)
    if cfg.variant == "siren":
        tn = tape.const(t[:, None])
        h = tape.sin(tape.scale(tape.add(tape.matmul(tn, p["t_w1"]), p["t_b1"]), cfg.omega_first))
        return tape.sin(tape.scale(tape.add(tape.matmul(h, p["t_w2"]), p["t_b2"]), cfg.omega_hidden))
    if cfg.variant == "grid24":
        k = cfg.time_bins
        idx = np.floor(np.mod(t, 1.0) * k).astype(np.intp) % k
        return tape.gather_rows(p["t_table"], idx)
    return tape.const(fourier_features(t, cfg.fourier_freqs))


def film_fuse(tape: Tape, hs: Node, ft: Node, p: dict) -> Node:
    gamma = tape.add(tape.matmul(ft, p["film_wg"]), p["film_bg"])
    beta = tape.add(tape.matmul(ft, p["film_wb"]), p["film_bb"])
    return tape.add(tape.mul(gamma, hs), beta)


def forward_raw(tape: Tape, cfg: FieldConfig, p: dict, u, v, t) -> Node:
    """Raw (N, 6J) head output for unit coordinates (u, v) and day fraction t."""
    fs = interp_spatial(tape, p["grid"], u, v, cfg.grid_shape)
    ft = encode_time(tape, cfg, p, t)
    coords = tape.const(np.stack([u, v, t], axis=1))
    h = tape.concat([coords, fs, ft])
    for i in range(len(cfg.hidden)):
        h = tape.relu(tape.add(tape.matmul(h, p[f"mlp_w{i}"]), p[f"mlp_b{i}"]))
    h = film_fuse(tape, h, ft, p)
    return tape.add(tape.matmul(h, p["head_w"]), p["head_b"])


@dataclass
class HeadNodes:
    log_weights: Node
    mean_speed: Node
    mean_theta: Node
    logvar_speed: Node
    logvar_theta: Node
    corr: Node


def head_transform_nodes(tape: Tape, raw: Node, n_components: int) -> HeadNodes:
    j = n_components
    rw = tape.slice_cols(raw, 0, j)
    return HeadNodes(
        log_weights=tape.sub(rw, tape.logsumexp_row(rw)),
        mean_speed=tape.relu(tape.slice_cols(raw, j, 2 * j)),
        mean_theta=tape.mod(tape.slice_cols(raw, 2 * j, 3 * j), TWO_PI),
        logvar_speed=tape.clamp(tape.slice_cols(raw, 3 * j, 4 * j), *LOGVAR_RANGE),
        logvar_theta=tape.clamp(tape.slice_cols(raw, 4 * j, 5 * j), *LOGVAR_RANGE),
        corr=tape.scale(tape.tanh(tape.slice_cols(raw, 5 * j, 6 * j)), CORR_SCALE),
    )


def mixture_loglik(tape: Tape, hd: HeadNodes, speed, theta) -> Node:
    """(N, 1) log-density of each observed velocity under its predicted mixture."""
    sp = tape.const(np.asarray(speed, dtype=float)[:, None])
    th = np.asarray(theta, dtype=float)[:, None]
    inv_ss = tape.exp(tape.scale(hd.logvar_speed, -0.5))
    inv_st = tape.exp(tape.scale(hd.logvar_theta, -0.5))
    one_m_r2 = tape.add_const(tape.scale(tape.square(hd.corr), -1.0), 1.0)
    log_det = tape.add(tape.add(hd.logvar_speed, hd.logvar_theta), tape.log(one_m_r2))
    # log w - log 2pi - 0.5 log det, shared across windings
    base = tape.sub(tape.add_const(hd.log_weights, -_LOG_2PI), tape.scale(log_det, 0.5))
    zs = tape.mul(tape.sub(sp, hd.mean_speed), inv_ss)
    zs2 = tape.square(zs)
    two_r = tape.scale(hd.corr, 2.0)
    terms = []
    for k in WINDINGS:
        thk = tape.const(th + TWO_PI * k)
        zt = tape.mul(tape.sub(thk, hd.mean_theta), inv_st)
        quad = tape.sub(tape.add(zs2, tape.square(zt)), tape.mul(two_r, tape.mul(zs, zt)))
        terms.append(tape.sub(base, tape.scale(tape.div(quad, one_m_r2), 0.5)))
    return tape.logsumexp_row(tape.concat(terms))


def head_transform(raw, n_components: int) -> Swgmm:
    """Map 6J raw numbers to an SWGMM."""
    raw = np.asarray(raw, dtype=float).reshape(1, -1)
    if raw.shape[1] != 6 * n_components:
        raise ValueError(f"expected {6 * n_components} raw values, got {raw.shape[1]}")
    tape = Tape(record=False)
    hd = head_transform_nodes(tape, tape.const(raw), n_components)
    return _swgmm_from_head(hd, 0)


def _swgmm_from_head(hd: HeadNodes, row: int) -> Swgmm:
    lw = hd.log_weights.value[row]
    w = np.exp(lw)
    w = w / w.sum()
    return Swgmm.from_arrays(
        w,
        hd.mean_speed.value[row],
        hd.mean_theta.value[row],
        np.exp(hd.logvar_speed.value[row]),
        np.exp(hd.logvar_theta.value[row]),
        hd.corr.value[row],
    )


# -- initialisation -----------------------------------------------------------


def init_params(cfg: FieldConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.grid_shape
    ct = cfg.time_width

    def uni(shape, bound):
        return rng.uniform(-bound, bound, size=shape)

    p = {"grid": rng.normal(0.0, 0.01, size=(h * w, cfg.spatial_channels))}
    if cfg.variant == "siren":
        p["t_w1"] = uni((1, ct), 1.0)
        p["t_b1"] = uni((1, ct), 1.0)
        bound = math.sqrt(6.0 / ct) / cfg.omega_hidden
        p["t_w2"] = uni((ct, ct), bound)
        p["t_b2"] = uni((1, ct), 1.0 / math.sqrt(ct))
    elif cfg.variant == "grid24":
        p["t_table"] = rng.normal(0.0, 0.01, size=(cfg.time_bins, ct))
    fan_in = 3 + cfg.spatial_channels + ct
    for i, width in enumerate(cfg.hidden):
        b = 1.0 / math.sqrt(fan_in)
        p[f"mlp_w{i}"] = uni((fan_in, width), b)
        p[f"mlp_b{i}"] = uni((1, width), b)
        fan_in = width
    b = 1.0 / math.sqrt(ct)
    p["film_wg"] = uni((ct, fan_in), b)
    p["film_bg"] = np.ones((1, fan_in))
    p["film_wb"] = uni((ct, fan_in), b)
    p["film_bb"] = np.zeros((1, fan_in))
    b = 1.0 / math.sqrt(fan_in)
    out = 6 * cfg.n_components
    p["head_w"] = uni((fan_in, out), b)
    p["head_b"] = uni((1, out), b)
    return p


# -- the model ----------------------------------------------------------------


@dataclass
class NemoField:
    config: FieldConfig
    params: dict = field(default_factory=dict)
    train_info: dict = field(default_factory=dict)
    clamp_count: list = field(default_factory=lambda: [0])

    kind = "nemo"

    @classmethod
    def create(cls, config: FieldConfig) -> "NemoField":
        return cls(config, init_params(config))

    def param_nodes(self, tape: Tape) -> dict:
        return {name: tape.leaf(self.params[name], name=name) for name in sorted(self.params)}

    def unit_inputs(self, x, y, t_sec):
        u, v = normalize_coords(np.atleast_1d(x), np.atleast_1d(y), self.config.bounds, self.clamp_count)
        return u, v, normalize_time(np.atleast_1d(t_sec))

    def build_head(self, tape: Tape, p: dict, x, y, t_sec) -> HeadNodes:
        u, v, t = self.unit_inputs(x, y, t_sec)
        raw = forward_raw(tape, self.config, p, u, v, t)
        return head_transform_nodes(tape, raw, self.config.n_components)

    def _eval_head(self, x, y, t_sec) -> HeadNodes:
        tape = Tape(record=False)
        p = {k: tape.const(v) for k, v in self.params.items()}
        return self.build_head(tape, p, x, y, t_sec)

    def query(self, x: float, y: float, t_sec: float) -> Swgmm:
        return _swgmm_from_head(self._eval_head(x, y, t_sec), 0)

    def query_many(self, x, y, t_sec) -> list:
        hd = self._eval_head(x, y, t_sec)
        return [_swgmm_from_head(hd, i) for i in range(hd.corr.value.shape[0])]

    def query_arrays(self, x, y, t_sec, chunk: int = 16384) -> dict:
        """Mixture parameters for many queries as (N, J) arrays."""
        x, y, t_sec = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, y, t_sec))
        parts = []
        for s in range(0, x.size, chunk):
            hd = self._eval_head(x[s : s + chunk], y[s : s + chunk], t_sec[s : s + chunk])
            w = np.exp(hd.log_weights.value)
            parts.append({
                "weights": w / w.sum(axis=1, keepdims=True),
                "mean_speed": hd.mean_speed.value,
                "mean_theta": hd.mean_theta.value,
                "var_speed": np.exp(hd.logvar_speed.value),
                "var_theta": np.exp(hd.logvar_theta.value),
                "corr": hd.corr.value,
            })
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}

    def logpdf(self, samples, chunk: int = 65536) -> np.ndarray:
        out = np.empty(len(samples))
        for s in range(0, len(samples), chunk):
            sl = slice(s, s + chunk)
            tape = Tape(record=False)
            p = {k: tape.const(v) for k, v in self.params.items()}
            hd = self.build_head(tape, p, samples.x[sl], samples.y[sl], samples.t[sl])
            out[sl] = mixture_loglik(tape, hd, samples.speed[sl], samples.theta[sl]).value[:, 0]
        return out

    # -- persistence -------------------------------------------------------
    def to_document(self) -> dict:
        cfg = asdict(self.config)
        cfg["bounds"] = list(cfg["bounds"])
        cfg["hidden"] = list(cfg["hidden"])
        return serialize.make_document(
            self.kind,
            {
                "config": cfg,
                "grid_shape": list(self.config.grid_shape),
                "params": {k: serialize.encode_array(v) for k, v in sorted(self.params.items())},
                "train": self.train_info,
            },
        )

    @classmethod
    def from_document(cls, doc: dict) -> "NemoField":
        cfg = FieldConfig(**doc["config"])
        params = {k: serialize.decode_array(v) for k, v in doc["params"].items()}
        return cls(cfg, params, dict(doc.get("train", {})))

    def save(self, path) -> None:
        serialize.save_document(self.to_document(), path)

    @classmethod
    def load(cls, path) -> "NemoField":
        return cls.from_document(serialize.load_document(path, expect=cls.kind))
