"""Self-contained SVG scatter plots and dendrograms (byte-stable output, no plotting library)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _header(width, height, title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]


def scatter_svg(points, labels=None, title: str = "", width: int = 480, height: int = 480) -> str:
    pts = np.asarray(points, dtype=np.float64)
    labels = np.zeros(len(pts), dtype=int) if labels is None else np.asarray(labels)
    pad = 36
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    sx = (pts[:, 0] - lo[0]) / span[0] * (width - 2 * pad) + pad
    sy = height - pad - (pts[:, 1] - lo[1]) / span[1] * (height - 2 * pad - 16)
    out = _header(width, height, title)
    out.append(f'<rect x="{pad}" y="{pad - 4}" width="{width - 2 * pad}" height="{height - 2 * pad + 4}" '
               'fill="none" stroke="#999"/>')
    for x, y, lab in zip(sx, sy, labels):
        colour = PALETTE[int(lab) % len(PALETTE)]
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3.5" fill="{colour}" fill-opacity="0.8"/>')
    for n, lab in enumerate(sorted(set(int(v) for v in labels))):
        colour = PALETTE[lab % len(PALETTE)]
        y = pad + 8 + 16 * n
        out.append(f'<circle cx="{width - pad - 50}" cy="{y}" r="4" fill="{colour}"/>')
        out.append(f'<text x="{width - pad - 40}" y="{y + 4}">spk{lab}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def dendrogram_svg(dendrogram, title: str = "", cut_distance=None, width: int = 640, height: int = 400) -> str:
    """Classic U-link dendrogram; leaves ordered by an in-order traversal of the merge tree."""
    n = dendrogram.n_leaves
    merges = dendrogram.merges
    children = {n + i: (m.a, m.b) for i, m in enumerate(merges)}
    height_of = {n + i: m.distance for i, m in enumerate(merges)}
    root = n + len(merges) - 1 if merges else 0
    order = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node < n:
            order.append(node)
        else:
            a, b = children[node]
            stack.extend((b, a))
    pos = {leaf: i for i, leaf in enumerate(order)}
    pad = 40
    top = max(height_of.values()) if height_of else 1.0
    top = top if top > 0 else 1.0
    step = (width - 2 * pad) / max(1, n - 1)
    xs = {leaf: pad + pos[leaf] * step for leaf in range(n)}
    ys = {leaf: height - pad for leaf in range(n)}

    def ypix(d):
        return height - pad - d / top * (height - 2 * pad - 10)

    out = _header(width, height, title)
    for i, m in enumerate(merges):
        node = n + i
        y = ypix(m.distance)
        xa, xb = xs[m.a], xs[m.b]
        out.append(f'<path d="M{xa:.2f},{ys[m.a]:.2f} V{y:.2f} H{xb:.2f} V{ys[m.b]:.2f}" '
                   'fill="none" stroke="#1f77b4" stroke-width="1.2"/>')
        xs[node] = 0.5 * (xa + xb)
        ys[node] = y
    if n <= 60:
        for leaf in range(n):
            out.append(f'<text x="{xs[leaf]:.2f}" y="{height - pad + 14}" text-anchor="middle" '
                       f'font-size="9">{leaf}</text>')
    if cut_distance is not None:
        y = ypix(cut_distance)
        out.append(f'<line x1="{pad}" y1="{y:.2f}" x2="{width - pad}" y2="{y:.2f}" stroke="#d62728" '
                   'stroke-dasharray="6,4"/>')
    out.append(f'<line x1="{pad - 8}" y1="{height - pad}" x2="{pad - 8}" y2="{ypix(top):.2f}" stroke="#333"/>')
    out.append(f'<text x="{pad - 10}" y="{ypix(top):.2f}" text-anchor="end" font-size="9">{top:.3g}</text>')
    out.append(f'<text x="{pad - 10}" y="{height - pad}" text-anchor="end" font-size="9">0</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
