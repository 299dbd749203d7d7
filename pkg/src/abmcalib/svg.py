"""Minimal static SVG line/band/bar charts (no plotting dependency)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f")


def _f(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step * 1e-9, step)]


class Chart:
    def __init__(self, title: str = "", xlabel: str = "", ylabel: str = "",
                 width: int = 480, height: int = 320, xlim=None, ylim=None):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.width, self.height = width, height
        self.margin = (50, 20, 35, 45)  # left, right, top, bottom
        self.xlim, self.ylim = xlim, ylim
        self.items: list[tuple] = []
        self.legend: list[tuple[str, str, str]] = []

    def line(self, x, y, color=PALETTE[0], width=1.5, dash=None, label=None):
        self.items.append(("line", np.asarray(x, float), np.asarray(y, float), color, width, dash))
        if label:
            self.legend.append((label, color, dash or ""))

    def band(self, x, lo, hi, color=PALETTE[0], opacity=0.25, label=None):
        self.items.append(("band", np.asarray(x, float), np.asarray(lo, float), np.asarray(hi, float), color, opacity))
        if label:
            self.legend.append((label, color, ""))

    def vline(self, x, color="#000000", dash="5,4", label=None):
        self.items.append(("vline", float(x), color, dash))
        if label:
            self.legend.append((label, color, dash))

    def hline(self, y, color="#7f7f7f", dash="3,3", label=None):
        self.items.append(("hline", float(y), color, dash, label))

    def bars(self, labels, values, color=PALETTE[0]):
        self.items.append(("bars", list(labels), np.asarray(values, float), color))

    def _limits(self):
        xs, ys = [], []
        for it in self.items:
            kind = it[0]
            if kind == "line":
                xs += list(it[1]); ys += list(it[2])
            elif kind == "band":
                xs += list(it[1]); ys += list(it[2]) + list(it[3])
            elif kind == "vline":
                xs.append(it[1])
            elif kind == "hline":
                ys.append(it[1])
            elif kind == "bars":
                xs += [-0.5, len(it[1]) - 0.5]; ys += list(it[2]) + [0.0]
        xs = [v for v in xs if np.isfinite(v)] or [0.0, 1.0]
        ys = [v for v in ys if np.isfinite(v)] or [0.0, 1.0]
        xlim = self.xlim or (min(xs), max(xs))
        ylim = self.ylim or (min(ys), max(ys))
        if xlim[1] <= xlim[0]:
            xlim = (xlim[0] - 0.5, xlim[0] + 0.5)
        if ylim[1] <= ylim[0]:
            ylim = (ylim[0] - 0.5, ylim[0] + 0.5)
        pad = 0.04 * (ylim[1] - ylim[0])
        if self.ylim is None:
            ylim = (ylim[0] - pad, ylim[1] + pad)
        return xlim, ylim

    def render(self) -> str:
        (x0, x1), (y0, y1) = self._limits()
        ml, mr, mt, mb = self.margin
        pw, ph = self.width - ml - mr, self.height - mt - mb

        def sx(v):
            return ml + (np.asarray(v) - x0) / (x1 - x0) * pw

        def sy(v):
            return mt + ph - (np.asarray(v) - y0) / (y1 - y0) * ph

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>',
            f'<defs><clipPath id="plot"><rect x="{ml}" y="{mt}" width="{pw}" height="{ph}"/></clipPath></defs>',
        ]
        for it in self.items:
            kind = it[0]
            if kind == "band":
                _, x, lo, hi, color, op = it
                pts = [f"{_f(a)},{_f(b)}" for a, b in zip(sx(x), sy(hi))]
                pts += [f"{_f(a)},{_f(b)}" for a, b in zip(sx(x[::-1]), sy(lo[::-1]))]
                out.append(f'<polygon clip-path="url(#plot)" points="{" ".join(pts)}" fill="{color}" '
                           f'fill-opacity="{op}" stroke="none"/>')
            elif kind == "line":
                _, x, y, color, width, dash = it
                ok = np.isfinite(x) & np.isfinite(y)
                pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(sx(x[ok]), sy(y[ok])))
                d = f' stroke-dasharray="{dash}"' if dash else ""
                out.append(f'<polyline clip-path="url(#plot)" points="{pts}" fill="none" stroke="{color}" '
                           f'stroke-width="{width}"{d}/>')
            elif kind == "vline":
                _, x, color, dash = it
                out.append(f'<line x1="{_f(sx(x))}" y1="{mt}" x2="{_f(sx(x))}" y2="{mt + ph}" stroke="{color}" '
                           f'stroke-dasharray="{dash}"/>')
            elif kind == "hline":
                _, y, color, dash, label = it
                if y0 <= y <= y1:
                    out.append(f'<line x1="{ml}" y1="{_f(sy(y))}" x2="{ml + pw}" y2="{_f(sy(y))}" '
                               f'stroke="{color}" stroke-dasharray="{dash}"/>')
                    if label:
                        out.append(f'<text x="{ml + pw - 2}" y="{_f(sy(y) - 3)}" text-anchor="end" '
                                   f'fill="{color}">{escape(label)}</text>')
            elif kind == "bars":
                _, labels, vals, color = it
                bw = pw / max(len(vals), 1) * 0.7
                base = sy(max(min(0.0, y1), y0))
                for k, (lab, v) in enumerate(zip(labels, vals)):
                    cx = sx(k)
                    top = sy(v) if np.isfinite(v) else base
                    ytop, h = min(top, base), abs(base - top)
                    out.append(f'<rect x="{_f(cx - bw / 2)}" y="{_f(ytop)}" width="{_f(bw)}" height="{_f(h)}" '
                               f'fill="{color}"/>')
                    out.append(f'<text x="{_f(cx)}" y="{mt + ph + 14}" text-anchor="middle" '
                               f'font-size="9">{escape(str(lab))}</text>')
        # axes
        out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>')
        has_bars = any(it[0] == "bars" for it in self.items)
        if not has_bars:
            for t in _ticks(x0, x1):
                out.append(f'<line x1="{_f(sx(t))}" y1="{mt + ph}" x2="{_f(sx(t))}" y2="{mt + ph + 4}" stroke="#000000"/>')
                out.append(f'<text x="{_f(sx(t))}" y="{mt + ph + 15}" text-anchor="middle">{t:g}</text>')
        for t in _ticks(y0, y1):
            out.append(f'<line x1="{ml - 4}" y1="{_f(sy(t))}" x2="{ml}" y2="{_f(sy(t))}" stroke="#000000"/>')
            out.append(f'<text x="{ml - 6}" y="{_f(sy(t) + 4)}" text-anchor="end">{t:g}</text>')
        if self.title:
            out.append(f'<text x="{self.width / 2}" y="18" text-anchor="middle" font-size="13">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{ml + pw / 2}" y="{self.height - 8}" text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            out.append(f'<text x="12" y="{mt + ph / 2}" text-anchor="middle" '
                       f'transform="rotate(-90 12 {mt + ph / 2})">{escape(self.ylabel)}</text>')
        for k, (label, color, dash) in enumerate(self.legend):
            ly = mt + 12 + 14 * k
            d = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<line x1="{ml + 8}" y1="{ly - 4}" x2="{ml + 26}" y2="{ly - 4}" stroke="{color}" '
                       f'stroke-width="2"{d}/>')
            out.append(f'<text x="{ml + 30}" y="{ly}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.render())
