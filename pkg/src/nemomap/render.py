"""SVG flow-field plots: one arrow per mixture component, coloured by
orientation, length proportional to mean speed."""
from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .swgmm import TWO_PI, dominant_component

PX_PER_M = 20.0
MARGIN_PX = 10.0


@dataclass
class RenderSpec:
    times: list = field(default_factory=lambda: [9 * 3600.0, 11 * 3600.0, 18 * 3600.0])
    stride: float = 1.0
    mode: str = "all"  # "all" | "max"
    arrow_scale: float = 0.6  # metres of arrow per m/s
    hue_steps: int = 360

    def __post_init__(self):
        if self.stride <= 0:
            raise ValueError("stride must be positive")
        if self.mode not in ("all", "max"):
            raise ValueError("mode must be 'all' or 'max'")


def orientation_colour(theta: float, steps: int = 360) -> str:
    """Hex colour on an HSV wheel; hue quantised to ``steps`` levels."""
    h = (round((theta % TWO_PI) / TWO_PI * steps) % steps) / steps
    r, g, b = colorsys.hsv_to_rgb(h, 0.85, 0.85)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def grid_points(bounds, stride: float, samples=None) -> np.ndarray:
    """Stride lattice inside ``bounds``; with ``samples``, only points having
    at least one sample within ``stride``."""
    x0, x1, y0, y1 = bounds
    xs = x0 + stride * np.arange(int(math.floor((x1 - x0) / stride + 1e-9)) + 1)
    ys = y0 + stride * np.arange(int(math.floor((y1 - y0) / stride + 1e-9)) + 1)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if samples is not None and len(samples):
        tree = cKDTree(np.stack([samples.x, samples.y], axis=1))
        counts = np.array([len(h) for h in tree.query_ball_point(pts, r=stride)])
        pts = pts[counts >= 1]
    return pts


def _arrows(model, pts: np.ndarray, t_sec: float, spec: RenderSpec):
    """(x, y, orientation, length, opacity) tuples for every arrow at time ``t_sec``."""
    out = []
    if getattr(model, "kind", "") == "stef":
        centres = np.arange(8) * (TWO_PI / 8)
        for x, y in pts:
            probs = model.query(x, y, t_sec)
            idx = [int(np.argmax(probs))] if spec.mode == "max" else range(8)
            for b in idx:
                out.append((x, y, centres[b], spec.arrow_scale, float(probs[b])))
        return out
    if hasattr(model, "query_many"):
        mixtures = model.query_many(pts[:, 0], pts[:, 1], np.full(len(pts), t_sec))
    else:
        mixtures = [model.query(x, y, t_sec) for x, y in pts]
    for (x, y), m in zip(pts, mixtures):
        comps = [dominant_component(m)] if spec.mode == "max" else range(m.n_components)
        for j in comps:
            c = m.components[j]
            opacity = 1.0 if spec.mode == "max" else m.weights[j]
            out.append((x, y, c.mean_theta, spec.arrow_scale * c.mean_speed, opacity))
    return out


def render_svg(model, bounds, t_sec: float, spec: RenderSpec, samples=None) -> str:
    """One SVG document for one query time."""
    x0, x1, y0, y1 = bounds
    w = (x1 - x0) * PX_PER_M + 2 * MARGIN_PX
    h = (y1 - y0) * PX_PER_M + 2 * MARGIN_PX

    def px(x, y):
        return MARGIN_PX + (x - x0) * PX_PER_M, MARGIN_PX + (y1 - y) * PX_PER_M

    hh, mm = divmod(int(round(t_sec)) // 60, 60)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.1f}" height="{h:.1f}" '
        f'viewBox="0 0 {w:.1f} {h:.1f}">',
        f"<title>flow field {hh:02d}:{mm:02d} ({spec.mode})</title>",
        f'<rect x="0" y="0" width="{w:.1f}" height="{h:.1f}" fill="#ffffff"/>',
    ]
    head = 0.25 * PX_PER_M
    for x, y, theta, length, opacity in _arrows(model, grid_points(bounds, spec.stride, samples), t_sec, spec):
        if opacity <= 0.0005:
            continue
        sx, sy = px(x, y)
        dx, dy = math.cos(theta), -math.sin(theta)
        ex, ey = sx + dx * length * PX_PER_M, sy + dy * length * PX_PER_M
        col = orientation_colour(theta, spec.hue_steps)
        lw, rw = (-dy, dx), (dy, -dx)
        p1 = (ex - dx * head + lw[0] * head * 0.5, ey - dy * head + lw[1] * head * 0.5)
        p2 = (ex - dx * head + rw[0] * head * 0.5, ey - dy * head + rw[1] * head * 0.5)
        lines.append(
            f'<g stroke="{col}" fill="{col}" opacity="{opacity:.3f}">'
            f'<line x1="{sx:.2f}" y1="{sy:.2f}" x2="{ex:.2f}" y2="{ey:.2f}" stroke-width="1.5"/>'
            f'<polygon points="{ex:.2f},{ey:.2f} {p1[0]:.2f},{p1[1]:.2f} {p2[0]:.2f},{p2[1]:.2f}"/></g>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_all(model, bounds, spec: RenderSpec, samples=None) -> dict:
    """{t_sec: svg text} for every time in ``spec.times``."""
    return {t: render_svg(model, bounds, t, spec, samples) for t in spec.times}
