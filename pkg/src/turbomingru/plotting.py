"""Minimal SVG writer for BER/BLER-vs-Eb/N0 curves on a log axis."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .checkpoint import atomic_write_text

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=70, right=20, top=30, bottom=50)
COLORS = {"ber": "#1f77b4", "bler": "#d62728"}


def _log_bounds(values: list[float]) -> tuple[int, int]:
    pos = [v for v in values if v > 0]
    if not pos:
        return -6, 0
    lo = math.floor(math.log10(min(pos)))
    hi = math.ceil(math.log10(max(pos)))
    if hi <= lo:
        hi = lo + 1
    return lo, min(hi, 0) if min(hi, 0) > lo else lo + 1


def render_ber_svg(points, title: str = "BER / BLER vs Eb/N0") -> str:
    """SVG text: one marker per point per curve, error bars from the CI columns."""
    xs = [p.ebn0_db for p in points]
    ys_all = []
    for p in points:
        ys_all += [p.ber, p.bler, p.ber_ci_low, p.ber_ci_high, p.bler_ci_low, p.bler_ci_high]
    dec_lo, dec_hi = _log_bounds(ys_all)
    floor = 10.0 ** dec_lo
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        y = max(y, floor)
        return MARGIN["top"] + (dec_hi - math.log10(y)) / (dec_hi - dec_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" data-yscale="log">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>']
    # log grid, one line per decade
    for d in range(dec_lo, dec_hi + 1):
        y = sy(10.0 ** d)
        out.append(f'<line class="grid" x1="{MARGIN["left"]}" x2="{WIDTH - MARGIN["right"]}" '
                   f'y1="{y:.2f}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{y + 4:.2f}" text-anchor="end" '
                   f'font-size="11">1e{d}</text>')
    for x in xs:
        out.append(f'<text x="{sx(x):.2f}" y="{HEIGHT - MARGIN["bottom"] + 16}" text-anchor="middle" '
                   f'font-size="11">{x:g}</text>')
    out.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">'
               f'Eb/N0 [dB]</text>')
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="black"/>')

    for key in ("ber", "bler"):
        color = COLORS[key]
        pts = [(sx(p.ebn0_db), sy(getattr(p, key))) for p in points]
        if pts:
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            out.append(f'<polyline class="curve-{key}" points="{path}" fill="none" stroke="{color}"/>')
        for p, (x, y) in zip(points, pts):
            lo = sy(getattr(p, f"{key}_ci_low"))
            hi = sy(getattr(p, f"{key}_ci_high"))
            out.append(f'<line class="errorbar-{key}" x1="{x:.2f}" x2="{x:.2f}" y1="{lo:.2f}" '
                       f'y2="{hi:.2f}" stroke="{color}"/>')
            out.append(f'<circle class="marker-{key}" cx="{x:.2f}" cy="{y:.2f}" r="3.5" fill="{color}"/>')
    for i, key in enumerate(("ber", "bler")):
        y = MARGIN["top"] + 16 + 16 * i
        x = WIDTH - MARGIN["right"] - 70
        out.append(f'<circle cx="{x}" cy="{y - 4}" r="3.5" fill="{COLORS[key]}"/>')
        out.append(f'<text x="{x + 8}" y="{y}" font-size="12">{key.upper()}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_ber_svg(path, points, title: str = "BER / BLER vs Eb/N0") -> None:
    atomic_write_text(path, render_ber_svg(points, title))
