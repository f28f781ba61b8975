"""Minimal deterministic SVG emission for eigenvalue maps and time traces.

Hand-rolled on purpose: byte-identical output for identical input, no
rendering-library metadata or hashed ids.  Numbers are formatted with %.5g.
"""

W, H = 720.0, 480.0
ML, MR, MT, MB = 70.0, 20.0, 30.0, 50.0

ZIP_LIGHT, ZIP_DARK = (255, 204, 204), (150, 0, 0)
ZIE_LIGHT, ZIE_DARK = (204, 214, 255), (0, 20, 150)


def family_color(family, x):
    """Red shades for ZIP, blue for ZI-E, darker with increasing x."""
    lo, hi = (ZIP_LIGHT, ZIP_DARK) if family == "zip" else (ZIE_LIGHT, ZIE_DARK)
    rgb = tuple(round(a + (b - a) * float(x)) for a, b in zip(lo, hi))
    return "#%02x%02x%02x" % rgb


def _fmt(v):
    return f"{v:.5g}"


class _Axes:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, x):
        return ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def py(self, y):
        return H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)

    def frame(self, xlabel, ylabel, title):
        parts = [
            f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
            f'fill="none" stroke="black" stroke-width="1"/>'
        ]
        for k in range(5):
            xv = self.x0 + (self.x1 - self.x0) * k / 4.0
            yv = self.y0 + (self.y1 - self.y0) * k / 4.0
            xp, yp = self.px(xv), self.py(yv)
            parts.append(f'<line x1="{_fmt(xp)}" y1="{H - MB}" x2="{_fmt(xp)}" '
                         f'y2="{H - MB + 5}" stroke="black"/>')
            parts.append(f'<text x="{_fmt(xp)}" y="{H - MB + 18}" font-size="11" '
                         f'text-anchor="middle">{_fmt(xv)}</text>')
            parts.append(f'<line x1="{ML - 5}" y1="{_fmt(yp)}" x2="{ML}" '
                         f'y2="{_fmt(yp)}" stroke="black"/>')
            parts.append(f'<text x="{ML - 8}" y="{_fmt(yp + 4)}" font-size="11" '
                         f'text-anchor="end">{_fmt(yv)}</text>')
        parts.append(f'<text x="{(ML + W - MR) / 2}" y="{H - 12}" font-size="13" '
                     f'text-anchor="middle">{xlabel}</text>')
        parts.append(f'<text x="16" y="{(MT + H - MB) / 2}" font-size="13" '
                     f'text-anchor="middle" transform="rotate(-90 16 {(MT + H - MB) / 2})">'
                     f'{ylabel}</text>')
        parts.append(f'<text x="{(ML + W - MR) / 2}" y="20" font-size="14" '
                     f'text-anchor="middle">{title}</text>')
        return parts


def _document(parts):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" '
            f'height="{H:.0f}" viewBox="0 0 {W:.0f} {H:.0f}">')
    return head + "\n" + "\n".join(parts) + "\n</svg>\n"


def eigen_map(rows, title="Eigenvalue map"):
    """Scatter of eigenvalues in the complex plane.

    `rows` are dicts with keys re, im, family, x, is_reference_mode.
    The reference mode is drawn as a black cross.
    """
    if not rows:
        raise ValueError("no eigenvalue rows to plot")
    res = [float(r["re"]) for r in rows]
    ims = [float(r["im"]) for r in rows]
    pad_x = 0.05 * (max(res) - min(res)) + 1e-9
    pad_y = 0.05 * (max(ims) - min(ims)) + 1e-9
    ax = _Axes((min(res) - pad_x, max(res) + pad_x),
               (min(ims) - pad_y, max(ims) + pad_y))
    parts = ax.frame("Re (1/s)", "Im (rad/s)", title)
    for r in rows:
        xp, yp = ax.px(float(r["re"])), ax.py(float(r["im"]))
        if str(r.get("is_reference_mode", "")).lower() in ("1", "true"):
            parts.append(f'<path d="M {_fmt(xp - 4)} {_fmt(yp - 4)} L {_fmt(xp + 4)} '
                         f'{_fmt(yp + 4)} M {_fmt(xp - 4)} {_fmt(yp + 4)} L '
                         f'{_fmt(xp + 4)} {_fmt(yp - 4)}" stroke="black" '
                         f'stroke-width="1.5"/>')
        else:
            color = family_color(r.get("family", "zip"), r.get("x", 1.0))
            parts.append(f'<circle cx="{_fmt(xp)}" cy="{_fmt(yp)}" r="3" '
                         f'fill="{color}" fill-opacity="0.8"/>')
    return _document(parts)


def trace_plot(traces, signal, title="Transient traces", xlabel="t (s)"):
    """Overlayed time series.

    `traces`: list of dicts {label, family, x, t, values, diverged}.
    Diverged runs are truncated naturally and flagged in the legend.
    """
    if not traces:
        raise ValueError("no traces to plot")
    tmin = min(tr["t"][0] for tr in traces)
    tmax = max(tr["t"][-1] for tr in traces)
    vmin = min(min(tr["values"]) for tr in traces)
    vmax = max(max(tr["values"]) for tr in traces)
    pad = 0.05 * (vmax - vmin) + 1e-9
    ax = _Axes((tmin, tmax), (vmin - pad, vmax + pad))
    parts = ax.frame(xlabel, signal, title)
    for k, tr in enumerate(traces):
        color = family_color(tr.get("family", "zip"), tr.get("x", 1.0))
        pts = " ".join(f"{_fmt(ax.px(t))},{_fmt(ax.py(v))}"
                       for t, v in zip(tr["t"], tr["values"]))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.2"/>')
        label = tr["label"] + (" (diverged)" if tr.get("diverged") else "")
        yleg = MT + 16 + 14 * k
        parts.append(f'<line x1="{W - MR - 150}" y1="{yleg - 4}" '
                     f'x2="{W - MR - 130}" y2="{yleg - 4}" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text class="legend" x="{W - MR - 125}" y="{yleg}" '
                     f'font-size="11">{label}</text>')
    return _document(parts)
