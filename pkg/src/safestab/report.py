"""Trajectory CSV, metrics JSON, and SVG line-chart output.

The CSV column order and the metrics key set are stable interfaces:

    t, v_f, v_l, D, u, u_scaled, V, h, region, a_L, delta_v, delta_h
    min_h, max_speed_error, region_counts, u_min, u_max, runtime_s

Floats are written with ``repr`` (shortest round-trip form, '.' decimal),
so identical runs produce byte-identical files.  Charts are written as
plain SVG by a small built-in renderer: diffable, deterministic, and free
of plotting dependencies.
"""

from __future__ import annotations

import json
import math
from typing import Dict, Sequence

from .dynamics import TrajectoryLog

CSV_COLUMNS = ("t", "v_f", "v_l", "D", "u", "u_scaled", "V", "h",
               "region", "a_L", "delta_v", "delta_h")

METRICS_KEYS = ("min_h", "max_speed_error", "region_counts", "u_min", "u_max", "runtime_s")


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trajectory_csv(log: TrajectoryLog, path, input_scale: float = 1.0) -> None:
    """Write one run as CSV; ``input_scale`` converts u to the u_scaled column."""
    if len(log) == 0:
        raise ValueError("refusing to write an empty trajectory log")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for i in range(len(log)):
                u = float(log.controls[i, 0])
                row = (
                    _fmt(log.times[i]),
                    _fmt(log.states[i, 0]),
                    _fmt(log.states[i, 1]),
                    _fmt(log.states[i, 2]),
                    _fmt(u),
                    _fmt(u * input_scale),
                    _fmt(log.clf_values[i]),
                    _fmt(log.cbf_values[i]),
                    log.regions[i],
                    _fmt(log.exogenous_values[i]),
                    _fmt(log.delta_v[i]),
                    _fmt(log.delta_h[i]),
                )
                fh.write(",".join(row) + "\n")
    except OSError as err:
        raise OSError(f"cannot write trajectory CSV {path}: {err}") from err


def write_metrics_json(metrics: dict, path) -> None:
    """Write metrics as stable, sorted JSON."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as err:
        raise OSError(f"cannot write metrics JSON {path}: {err}") from err


# -- minimal SVG line charts ---------------------------------------------------

_WIDTH, _HEIGHT = 760, 420
_ML, _MR, _MT, _MB = 64, 16, 34, 46  # plot margins
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_MAX_POINTS = 1400  # decimation threshold per series


def _nice_ticks(lo: float, hi: float, target: int = 6):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if step >= raw:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return ticks


def _tick_label(value: float) -> str:
    if value == int(value) and abs(value) < 1e6:
        return str(int(value))
    return f"{value:.4g}"


class SvgChart:
    """One x/y line chart with legend, ticks, and reference lines."""

    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.series = []   # (name, xs, ys, color, dash)
        self.hlines = []   # (y, label)

    def add_series(self, name: str, xs, ys, dash: str = ""):
        color = _COLORS[sum(1 for s in self.series if not s[4]) % len(_COLORS)]
        self.series.append((name, list(map(float, xs)), list(map(float, ys)), color, dash))

    def add_reference(self, name: str, xs, ys):
        self.series.append((name, list(map(float, xs)), list(map(float, ys)), "#555555", "6,4"))

    def add_hline(self, y: float, label: str = ""):
        self.hlines.append((float(y), label))

    def _bounds(self):
        xs = [x for _, sx, _, _, _ in self.series for x in sx]
        ys = [y for _, _, sy, _, _ in self.series for y in sy]
        ys += [y for y, _ in self.hlines]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        if y_hi - y_lo < 1e-12:
            y_lo -= 0.5
            y_hi += 0.5
        pad = 0.05 * (y_hi - y_lo)
        return x_lo, x_hi, y_lo - pad, y_hi + pad

    def render(self) -> str:
        x_lo, x_hi, y_lo, y_hi = self._bounds()
        pw = _WIDTH - _ML - _MR
        ph = _HEIGHT - _MT - _MB

        def sx(x):
            return _ML + (x - x_lo) / (x_hi - x_lo) * pw

        def sy(y):
            return _MT + (y_hi - y) / (y_hi - y_lo) * ph

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
            f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
            f'<text x="{_ML + pw / 2:.1f}" y="20" text-anchor="middle" font-size="14">{self.title}</text>',
        ]
        for tick in _nice_ticks(x_lo, x_hi):
            px = sx(tick)
            parts.append(f'<line x1="{px:.2f}" y1="{_MT}" x2="{px:.2f}" y2="{_MT + ph}" '
                         f'stroke="#dddddd" stroke-width="1"/>')
            parts.append(f'<text x="{px:.2f}" y="{_MT + ph + 16}" text-anchor="middle">'
                         f"{_tick_label(tick)}</text>")
        for tick in _nice_ticks(y_lo, y_hi):
            py = sy(tick)
            parts.append(f'<line x1="{_ML}" y1="{py:.2f}" x2="{_ML + pw}" y2="{py:.2f}" '
                         f'stroke="#dddddd" stroke-width="1"/>')
            parts.append(f'<text x="{_ML - 6}" y="{py + 4:.2f}" text-anchor="end">'
                         f"{_tick_label(tick)}</text>")
        for y, label in self.hlines:
            py = sy(y)
            parts.append(f'<line x1="{_ML}" y1="{py:.2f}" x2="{_ML + pw}" y2="{py:.2f}" '
                         f'stroke="#222222" stroke-width="1" stroke-dasharray="2,3"/>')
            if label:
                parts.append(f'<text x="{_ML + pw - 4}" y="{py - 4:.2f}" text-anchor="end" '
                             f'fill="#222222">{label}</text>')
        for name, xs, ys, color, dash in self.series:
            stride = max(1, len(xs) // _MAX_POINTS)
            idx = list(range(0, len(xs), stride))
            if idx[-1] != len(xs) - 1:
                idx.append(len(xs) - 1)
            points = " ".join(f"{sx(xs[i]):.2f},{sy(ys[i]):.2f}" for i in idx)
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                         f'stroke-width="1.5"{dash_attr}/>')
        # legend, top-right inside the plot area
        ly = _MT + 12
        for name, _, _, color, dash in self.series:
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            parts.append(f'<line x1="{_ML + pw - 150}" y1="{ly - 4}" x2="{_ML + pw - 126}" '
                         f'y2="{ly - 4}" stroke="{color}" stroke-width="2"{dash_attr}/>')
            parts.append(f'<text x="{_ML + pw - 120}" y="{ly}">{name}</text>')
            ly += 16
        parts.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
                     f'stroke="#333333" stroke-width="1"/>')
        parts.append(f'<text x="{_ML + pw / 2:.1f}" y="{_HEIGHT - 10}" text-anchor="middle">'
                     f"{self.xlabel}</text>")
        parts.append(f'<text x="16" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
                     f'transform="rotate(-90 16 {_MT + ph / 2:.1f})">{self.ylabel}</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def render_plots(logs: Dict[str, TrajectoryLog], out_dir,
                 desired_speed: float = None, input_scale: float = 1.0) -> list:
    """Write the three benchmark panels, overlaying every provided scenario.

    Panels: follower speed (with target and lead-speed references), barrier
    value (with zero line), and scaled input.  Returns the written paths.
    """
    import os

    if not logs:
        raise ValueError("render_plots needs at least one trajectory log")
    os.makedirs(out_dir, exist_ok=True)

    speed = SvgChart("Follower speed", "t [s]", "v_f [m/s]")
    barrier = SvgChart("Barrier value", "t [s]", "h [m]")
    control = SvgChart("Scaled input", "t [s]", "u / (M g) [-]")

    first = next(iter(logs.values()))
    for name, log in logs.items():
        speed.add_series(name, log.times, log.states[:, 0])
        barrier.add_series(name, log.times, log.cbf_values)
        control.add_series(name, log.times, log.controls[:, 0] * input_scale)
    speed.add_reference("lead v_l", first.times, first.states[:, 1])
    if desired_speed is not None:
        speed.add_hline(desired_speed, "v_d")
    barrier.add_hline(0.0, "h = 0")

    paths = []
    for fname, chart in (("speed.svg", speed), ("barrier.svg", barrier), ("control.svg", control)):
        path = os.path.join(out_dir, fname)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(chart.render())
        paths.append(path)
    return paths
