"""Minimal hand-rolled SVG emitters for corridors and trajectory profiles."""
from __future__ import annotations

import numpy as np

from ..bezier import PiecewiseBezier
from ..config import KinodynamicLimits

_COLORS = {"current": "#4878cf", "left": "#6acc65", "right": "#d65f5f"}


def _svg(width, height, body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n'
        + body
        + "</svg>\n"
    )


def _polyline(xs, ys, color="#222222", width=1.5):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>\n'


def corridor_diagram(
    sequence,
    trajectory: PiecewiseBezier | None = None,
    axis: str = "s",
    width: int = 640,
    height: int = 360,
) -> str:
    """Time/position diagram of the voxel boxes and the planned curve."""
    t0 = min(v.lt for v in sequence)
    t1 = max(v.ut for v in sequence)
    lo = min((v.ls if axis == "s" else v.ld) for v in sequence)
    hi = max((v.us if axis == "s" else v.ud) for v in sequence)
    pad = 0.05 * max(hi - lo, 1e-6)
    lo, hi = lo - pad, hi + pad
    margin = 40

    def tx(t):
        return margin + (t - t0) / max(t1 - t0, 1e-9) * (width - 2 * margin)

    def py(v):
        return height - margin - (v - lo) / max(hi - lo, 1e-9) * (height - 2 * margin)

    body = ""
    for v in sequence:
        a = v.ls if axis == "s" else v.ld
        b = v.us if axis == "s" else v.ud
        color = _COLORS.get(v.lane.value, "#999999")
        body += (
            f'<rect x="{tx(v.lt):.2f}" y="{py(b):.2f}" width="{tx(v.ut) - tx(v.lt):.2f}" '
            f'height="{py(a) - py(b):.2f}" fill="{color}" fill-opacity="0.25" '
            f'stroke="{color}" stroke-width="1"/>\n'
        )
    if trajectory is not None:
        cols = trajectory.profile(0.05)
        body += _polyline([tx(t) for t in cols["t"]], [py(v) for v in cols[axis]])
    body += (
        f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="12" text-anchor="middle">t (s)</text>\n'
        f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})" '
        f'text-anchor="middle">{axis} (m)</text>\n'
    )
    return _svg(width, height, body)


def profile_diagram(
    trajectory: PiecewiseBezier,
    limits: KinodynamicLimits,
    width: int = 640,
    height: int = 720,
) -> str:
    """Velocity, acceleration, and jerk profiles for both axes."""
    cols = trajectory.profile(0.02)
    panels = [
        ("v_s (m/s)", cols["v_s"], (limits.v_s_min, limits.v_s_max)),
        ("v_d (m/s)", cols["v_d"], (limits.v_d_min, limits.v_d_max)),
        ("a_s (m/s^2)", cols["a_s"], (limits.a_s_min, limits.a_s_max)),
        ("a_d (m/s^2)", cols["a_d"], (limits.a_d_min, limits.a_d_max)),
        ("j_s (m/s^3)", cols["j_s"], (limits.j_s_min, limits.j_s_max)),
        ("j_d (m/s^3)", cols["j_d"], (limits.j_d_min, limits.j_d_max)),
    ]
    panel_h = height / len(panels)
    margin = 42
    ts = cols["t"]
    t0, t1 = float(ts[0]), float(ts[-1])
    body = ""
    for row, (label, values, (lim_lo, lim_hi)) in enumerate(panels):
        lo = min(float(np.min(values)), lim_lo) - 0.2
        hi = max(float(np.max(values)), lim_hi) + 0.2
        y_top = row * panel_h + 12

        def tx(t):
            return margin + (t - t0) / max(t1 - t0, 1e-9) * (width - 2 * margin)

        def py(v):
            return y_top + (hi - v) / max(hi - lo, 1e-9) * (panel_h - 28)

        for bound in (lim_lo, lim_hi):
            body += _polyline([tx(t0), tx(t1)], [py(bound)] * 2, color="#cc3333", width=0.8)
        body += _polyline([tx(t) for t in ts], [py(v) for v in values], color="#335588")
        body += f'<text x="{margin}" y="{y_top + 2}" font-size="11">{label}</text>\n'
    return _svg(width, height, body)
