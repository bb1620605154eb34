"""SVG barcode and merge dendrogram, and the per-scale partition listing."""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET

import numpy as np

from .persist import MergeFiltration, MergeScaleMatrix, MergeTree, UnionFind

SVG_NS = "http://www.w3.org/2000/svg"


def barcode(tree: MergeTree) -> list[tuple[int, float, float]]:
    """(node, birth, death) bars under the elder rule; the survivor dies at inf.

    When two components meet, the one whose oldest member was born later
    ends; ties go to the larger label.
    """
    uf = UnionFind(tree.size)
    oldest = {i: (b, i) for i, b in enumerate(tree.birth)}
    death = {}
    for e in tree.edges:
        ra, rb = uf.find(e.a), uf.find(e.b)
        if ra == rb:
            continue
        ya, yb = oldest[ra], oldest[rb]
        young = max(ya, yb)
        death[young[1]] = e.scale
        uf.union(e.a, e.b)
        oldest[uf.find(e.a)] = min(ya, yb)
    return [(i, b, death.get(i, math.inf)) for i, b in enumerate(tree.birth)]


def dendrogram(msm: MergeScaleMatrix) -> list[tuple[float, int, int, int]]:
    """Single-linkage merges of the ideal components as (scale, left, right, new id).

    Leaves are 0..m-1; internal nodes are numbered from m in merge order.
    Pairs flagged beyond the ceiling never merge.
    """
    m = msm.size
    pairs = sorted((float(msm.mu[i, j]), i, j) for i in range(m) for j in range(i + 1, m)
                   if math.isfinite(msm.mu[i, j]))
    uf = UnionFind(m)
    node = list(range(m))
    out = []
    for s, i, j in pairs:
        ri, rj = uf.find(i), uf.find(j)
        if ri == rj:
            continue
        new = m + len(out)
        out.append((s, node[ri], node[rj], new))
        uf.union(i, j)
        node[uf.find(i)] = new
    return out


def partition_listing(filt: MergeFiltration) -> list[str]:
    labels = filt.labels or list(range(filt.size))
    lines = []
    for lam in filt.scales:
        parts = filt.partition_at(lam)
        body = " ".join("{" + ",".join(f"C{labels[i]}" for i in p) + "}" for p in parts)
        lines.append(f"{lam!r}: {body}")
    if filt.ceiling < math.inf and np.any(~np.isfinite(filt.mu)):
        lines.append(f"# pairs not joined by the ceiling {filt.ceiling!r} stay separate above it")
    return lines


def _el(parent, tag, **attrs):
    return ET.SubElement(parent, tag, {k.rstrip("_").replace("_", "-"): str(v) for k, v in attrs.items()})


def render_svg(tree: MergeTree, msm: MergeScaleMatrix, width: int = 640) -> str:
    """Barcode on top, dendrogram of the ideal components below; scale on the x axis."""
    bars = barcode(tree)
    merges = dendrogram(msm)
    finite = [b for _, b, _ in bars] + [d for _, _, d in bars if math.isfinite(d)]
    finite += [s for s, *_ in merges]
    lo = min(finite)
    hi = max(max(finite), tree.lambda_grid[-1] if tree.lambda_grid else lo)
    if hi <= lo:
        hi = lo + 1.0
    left, right = 80, width - 20
    xs = lambda v: left + (right - left) * (min(v, hi) - lo) / (hi - lo)
    row = 14
    top = 30
    leaves = msm.size
    height = top + row * len(bars) + 60 + row * max(leaves, 1) + 40

    root = ET.Element("svg", {"xmlns": SVG_NS, "width": str(width), "height": str(height),
                              "viewBox": f"0 0 {width} {height}"})
    _el(root, "text", x=left, y=18, font_size=12).text = "merge barcode (elder rule)"
    for k, (i, b, d) in enumerate(bars):
        y = top + row * k + row / 2
        _el(root, "text", x=4, y=y + 4, font_size=10).text = f"node {i}"
        _el(root, "line", x1=f"{xs(b):.3f}", y1=y, x2=f"{xs(d):.3f}", y2=y,
            stroke="black", stroke_width=3, data_birth=repr(b), data_death=repr(d))
        if not math.isfinite(d):
            _el(root, "text", x=f"{xs(hi) + 2:.3f}", y=y + 4, font_size=10).text = ">"

    base = top + row * len(bars) + 40
    _el(root, "text", x=left, y=base - 10, font_size=12).text = \
        f"ideal components, birth {msm.birth!r}"
    ypos = {i: base + row * i + row / 2 for i in range(leaves)}
    xpos = {i: xs(msm.birth) for i in range(leaves)}
    for i in range(leaves):
        _el(root, "text", x=4, y=ypos[i] + 4, font_size=10).text = f"C{msm.labels[i]}"
        _el(root, "circle", cx=f"{xpos[i]:.3f}", cy=ypos[i], r=3)
    for s, a, b, new in merges:
        x = xs(s)
        for c in (a, b):
            _el(root, "line", x1=f"{xpos[c]:.3f}", y1=ypos[c], x2=f"{x:.3f}", y2=ypos[c],
                stroke="steelblue", stroke_width=2)
        _el(root, "line", x1=f"{x:.3f}", y1=ypos[a], x2=f"{x:.3f}", y2=ypos[b],
            stroke="steelblue", stroke_width=2, data_scale=repr(s))
        xpos[new], ypos[new] = x, (ypos[a] + ypos[b]) / 2
    axis = height - 20
    _el(root, "line", x1=left, y1=axis, x2=right, y2=axis, stroke="gray")
    for v in (lo, hi):
        _el(root, "text", x=f"{xs(v):.3f}", y=axis + 14, font_size=10).text = f"{v:.6g}"
    return ET.tostring(root, encoding="unicode")
