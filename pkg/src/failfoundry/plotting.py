"""Dependency-free SVG renderings of the CSV outputs.

Plots are presentation only. Every SVG root carries ``data-xmin`` /
``data-xmax`` / ``data-ymin`` / ``data-ymax`` so the pixel mapping can be
inverted by tests and other tools.
"""

import csv
import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 30, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2")
KINDS = ("line", "roc", "boxplot", "density", "trace")
ARITY = {"line": (2, 3), "roc": (2, 2), "trace": (2, 3), "density": (1, 2), "boxplot": (2, 2)}


class PlotError(ValueError):
    pass


def read_table(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise PlotError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise PlotError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
    return header, body


def silverman_bandwidth(x):
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    sd = x.std(ddof=1) if n > 1 else 0.0
    iqr = np.subtract(*np.percentile(x, [75, 25])) if n > 1 else 0.0
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0:
        spread = 1.0
    return 0.9 * spread * n ** (-0.2)


def density_curve(x, n_points=200):
    """Gaussian KDE with Silverman's bandwidth on an evenly spaced grid."""
    x = np.asarray(x, dtype=np.float64)
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_points)
    dens = np.zeros(n_points)
    for chunk in np.array_split(x, max(1, len(x) // 2000)):
        z = (grid[:, None] - chunk[None, :]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= len(x) * h * math.sqrt(2 * math.pi)
    return grid, dens


def _nice(v):
    return format(v, ".4g")


class _Canvas:
    def __init__(self, xlim, ylim, xlabel, ylabel, title=""):
        x0, x1 = xlim
        y0, y1 = ylim
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        self.xlim = (float(x0), float(x1))
        self.ylim = (float(y0), float(y1))
        self.parts = []
        self.xlabel, self.ylabel, self.title = xlabel, ylabel, title

    def px(self, x, y):
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        w = WIDTH - LEFT - RIGHT
        h = HEIGHT - TOP - BOTTOM
        return LEFT + (x - x0) / (x1 - x0) * w, TOP + (1.0 - (y - y0) / (y1 - y0)) * h

    def polyline(self, xs, ys, color):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in (self.px(x, y) for x, y in zip(xs, ys)))
        self.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                          f'points="{pts}"/>')

    def line(self, x0, y0, x1, y1, color="#888", dash=True):
        a, b = self.px(x0, y0)
        c, d = self.px(x1, y1)
        style = ' stroke-dasharray="4,3"' if dash else ""
        self.parts.append(f'<line x1="{a:.2f}" y1="{b:.2f}" x2="{c:.2f}" y2="{d:.2f}" '
                          f'stroke="{color}"{style}/>')

    def rect(self, x0, y0, x1, y1, color):
        a, b = self.px(x0, y1)
        c, d = self.px(x1, y0)
        self.parts.append(f'<rect x="{a:.2f}" y="{b:.2f}" width="{c - a:.2f}" '
                          f'height="{d - b:.2f}" fill="none" stroke="{color}"/>')

    def text(self, x, y, s, anchor="middle", size=11, rotate=None):
        rot = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate else ""
        self.parts.append(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" '
                          f'text-anchor="{anchor}"{rot}>{escape(str(s))}</text>')

    def render(self, legend=()):
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
               f'data-xmin="{x0!r}" data-xmax="{x1!r}" data-ymin="{y0!r}" data-ymax="{y1!r}">',
               f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
        bl = self.px(x0, y0)
        tr = self.px(x1, y1)
        out.append(f'<path d="M{bl[0]:.2f},{tr[1]:.2f} L{bl[0]:.2f},{bl[1]:.2f} '
                   f'L{tr[0]:.2f},{bl[1]:.2f}" fill="none" stroke="black"/>')
        for i in range(5):
            xv = x0 + (x1 - x0) * i / 4
            yv = y0 + (y1 - y0) * i / 4
            px, _ = self.px(xv, y0)
            _, py = self.px(x0, yv)
            out.append(f'<text x="{px:.2f}" y="{bl[1] + 16:.2f}" font-size="10" '
                       f'text-anchor="middle">{_nice(xv)}</text>')
            out.append(f'<text x="{bl[0] - 6:.2f}" y="{py + 3:.2f}" font-size="10" '
                       f'text-anchor="end">{_nice(yv)}</text>')
        out.extend(self.parts)
        out.append(f'<text x="{(bl[0] + tr[0]) / 2:.2f}" y="{HEIGHT - 10}" font-size="12" '
                   f'text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{(bl[1] + tr[1]) / 2:.2f}" font-size="12" '
                   f'text-anchor="middle" transform="rotate(-90 16 {(bl[1] + tr[1]) / 2:.2f})">'
                   f'{escape(self.ylabel)}</text>')
        if self.title:
            out.append(f'<text x="{WIDTH / 2}" y="18" font-size="13" '
                       f'text-anchor="middle">{escape(self.title)}</text>')
        for i, (name, color) in enumerate(legend):
            y = TOP + 14 * i + 6
            out.append(f'<text x="{WIDTH - RIGHT - 4}" y="{y}" font-size="10" '
                       f'text-anchor="end" fill="{color}">{escape(str(name))}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _groups(header, body, value_cols, group_col):
    groups = {}
    for r in body:
        key = r[group_col] if group_col is not None else ""
        groups.setdefault(key, []).append([float(r[c]) for c in value_cols])
    return {k: np.array(v) for k, v in groups.items()}


def _pad(lo, hi, frac=0.04):
    span = hi - lo
    return lo - frac * span, hi + frac * span


def render(header, body, kind, title=""):
    """SVG text for a parsed table."""
    if kind not in KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    lo, hi = ARITY[kind]
    if not lo <= len(header) <= hi:
        raise PlotError(f"{kind} plot expects {lo}-{hi} columns, got {len(header)}")
    if not body:
        raise PlotError("no data rows")
    try:
        if kind in ("line", "trace", "roc"):
            groups = _groups(header, body, [0, 1], 2 if len(header) == 3 else None)
            allv = np.vstack(list(groups.values()))
            if kind == "roc":
                cv = _Canvas((0.0, 1.0), (0.0, 1.0), header[0], header[1], title)
                cv.line(0, 0, 1, 1)
            else:
                cv = _Canvas(_pad(allv[:, 0].min(), allv[:, 0].max(), 0.0),
                             _pad(allv[:, 1].min(), allv[:, 1].max()), header[0], header[1],
                             title)
            legend = []
            for i, (name, v) in enumerate(groups.items()):
                color = COLORS[i % len(COLORS)]
                cv.polyline(v[:, 0], v[:, 1], color)
                if name:
                    legend.append((f"{header[2]}={name}", color))
            return cv.render(legend)
        if kind == "density":
            groups = _groups(header, body, [0], 1 if len(header) == 2 else None)
            curves = {k: density_curve(v[:, 0]) for k, v in groups.items()}
            xs = np.concatenate([g for g, _ in curves.values()])
            ys = np.concatenate([d for _, d in curves.values()])
            cv = _Canvas((xs.min(), xs.max()), (0.0, ys.max() * 1.05), header[0], "density",
                         title)
            legend = []
            for i, (name, (g, dens)) in enumerate(curves.items()):
                color = COLORS[i % len(COLORS)]
                cv.polyline(g, dens, color)
                if name:
                    legend.append((f"{header[1]}={name}", color))
            return cv.render(legend)
        # boxplot: group, value
        groups = {}
        for r in body:
            groups.setdefault(r[0], []).append(float(r[1]))
        names = list(groups)
        allv = np.concatenate([np.asarray(v) for v in groups.values()])
        cv = _Canvas((0.0, len(names) + 1.0), _pad(allv.min(), allv.max()), header[0],
                     header[1], title)
        for i, name in enumerate(names, start=1):
            v = np.asarray(groups[name])
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            iqr = q3 - q1
            lo_w = v[v >= q1 - 1.5 * iqr].min()
            hi_w = v[v <= q3 + 1.5 * iqr].max()
            color = COLORS[(i - 1) % len(COLORS)]
            cv.rect(i - 0.3, q1, i + 0.3, q3, color)
            cv.line(i - 0.3, med, i + 0.3, med, color, dash=False)
            cv.line(i, q3, i, hi_w, color, dash=False)
            cv.line(i, q1, i, lo_w, color, dash=False)
            x, y = cv.px(i, cv.ylim[0])
            cv.text(x, y + 30, name, size=10)
        return cv.render()
    except ValueError as exc:
        if isinstance(exc, PlotError):
            raise
        raise PlotError(f"non-numeric value in plot data ({exc})") from None


def plot(csv_path, kind, out_path, title=""):
    """Render ``csv_path`` as a ``kind`` plot into ``out_path``."""
    header, body = read_table(csv_path)
    svg = render(header, body, kind, title)
    with open(out_path, "w") as fh:
        fh.write(svg)
    return out_path
