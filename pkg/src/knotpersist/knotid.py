"""Knot-type checks from a generic planar projection.

A polygon is projected along a direction picked from a deterministic
golden-angle sweep of the upper hemisphere; the first direction whose
projection is generic (transverse crossings, distinct depths, no crossing at a
vertex) gives a Gauss code. The knot determinant ``|Delta(-1)|`` is the
absolute value of any first minor of the Fox colouring matrix of that code.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .geometry import PolygonalKnot

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
MAX_DIRECTIONS = 1024
ANGLE_MARGIN = 1e-6
DEPTH_MARGIN = 1e-9
PARAM_MARGIN = 1e-9


class DiagramError(ValueError):
    pass


class NonGenericProjection(DiagramError):
    pass


class GaussEntry(NamedTuple):
    label: int
    over: bool
    sign: int


@dataclass(frozen=True)
class Diagram:
    gauss_code: tuple[GaussEntry, ...]
    direction: tuple[float, float, float] | None = None

    def __post_init__(self):
        seen: dict[int, list[GaussEntry]] = {}
        for e in self.gauss_code:
            seen.setdefault(e.label, []).append(e)
        for label, entries in seen.items():
            if len(entries) != 2 or entries[0].over == entries[1].over:
                raise DiagramError(f"crossing {label} must appear once over and once under")
            if entries[0].sign != entries[1].sign or entries[0].sign not in (-1, 1):
                raise DiagramError(f"crossing {label} has inconsistent sign")

    @property
    def crossing_count(self) -> int:
        return len(self.gauss_code) // 2

    def __str__(self) -> str:
        return "".join(f"{'O' if e.over else 'U'}{e.label}{'+' if e.sign > 0 else '-'}"
                       for e in self.gauss_code)

    @classmethod
    def from_string(cls, code: str) -> "Diagram":
        code = code.strip()
        tokens = re.findall(r"([OU])(\d+)([+-])", code)
        if "".join(f"{a}{b}{c}" for a, b, c in tokens) != code:
            raise DiagramError(f"malformed Gauss code: {code!r}")
        return cls(tuple(GaussEntry(int(b), a == "O", 1 if c == "+" else -1) for a, b, c in tokens))

    def shifted(self, k: int) -> "Diagram":
        g = self.gauss_code
        k %= max(len(g), 1)
        return Diagram(g[k:] + g[:k], self.direction)

    def reversed(self) -> "Diagram":
        return Diagram(tuple(reversed(self.gauss_code)), self.direction)

    def writhe(self) -> int:
        return sum(e.sign for e in self.gauss_code if e.over)


def sweep_direction(k: int) -> np.ndarray:
    """k-th direction of the golden-angle spiral on the upper hemisphere."""
    z = 1.0 - (k + 0.5) / MAX_DIRECTIONS
    r = np.sqrt(max(0.0, 1.0 - z * z))
    phi = k * GOLDEN_ANGLE
    return np.array([r * np.cos(phi), r * np.sin(phi), z])


def _frame(direction):
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(helper, d)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2, d


def diagram_along(P: PolygonalKnot, direction) -> Diagram:
    """Gauss code of the projection along ``direction``; raises if not generic."""
    v = P.vertices
    n = len(v)
    e1, e2, d = _frame(direction)
    xy = np.stack([v @ e1, v @ e2], axis=1)
    h = v @ d
    dxy = np.roll(xy, -1, axis=0) - xy
    dh = np.roll(h, -1) - h
    scale = max(float(np.ptp(xy, axis=0).max()), 1e-300)
    seg_len = np.linalg.norm(dxy, axis=1)
    if np.any(seg_len <= PARAM_MARGIN * scale):
        raise NonGenericProjection("an edge projects to a point")
    # adjacent edges folding back onto each other
    prev = np.roll(dxy, 1, axis=0)
    cr = prev[:, 0] * dxy[:, 1] - prev[:, 1] * dxy[:, 0]
    dt = np.einsum("ij,ij->i", prev, dxy)
    if np.any((np.abs(cr) <= ANGLE_MARGIN * seg_len * np.roll(seg_len, 1)) & (dt < 0)):
        raise NonGenericProjection("adjacent edges overlap in projection")

    idx = np.arange(n)
    gap = (idx[None, :] - idx[:, None]) % n
    ii, jj = np.nonzero((gap >= 2) & (gap <= n - 2) & (idx[:, None] < idx[None, :]))
    a, b = dxy[ii], dxy[jj]
    w = xy[jj] - xy[ii]
    den = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    sin_ang = np.abs(den) / (seg_len[ii] * seg_len[jj])
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[:, 0] * b[:, 1] - w[:, 1] * b[:, 0]) / den
        t = (w[:, 0] * a[:, 1] - w[:, 1] * a[:, 0]) / den
    near_parallel = sin_ang < ANGLE_MARGIN
    if np.any(near_parallel):
        from .geometry import segment_distances
        z = np.zeros((int(near_parallel.sum()), 1))
        p0 = np.hstack([xy[ii[near_parallel]], z])
        p1 = np.hstack([xy[jj[near_parallel]], z])
        d0 = np.hstack([a[near_parallel], z])
        d1 = np.hstack([b[near_parallel], z])
        dist, _, _ = segment_distances(p0, d0, p1, d1)
        if np.any(dist <= PARAM_MARGIN * scale):
            raise NonGenericProjection("nearly parallel edges touch in projection")
    hit = ~near_parallel & (s >= -PARAM_MARGIN) & (s <= 1 + PARAM_MARGIN) \
        & (t >= -PARAM_MARGIN) & (t <= 1 + PARAM_MARGIN)
    ii, jj, s, t, den = ii[hit], jj[hit], s[hit], t[hit], den[hit]
    if np.any((s < PARAM_MARGIN) | (s > 1 - PARAM_MARGIN) | (t < PARAM_MARGIN) | (t > 1 - PARAM_MARGIN)):
        raise NonGenericProjection("a crossing lies at a vertex")
    hi = h[ii] + s * dh[ii]
    hj = h[jj] + t * dh[jj]
    zscale = max(float(np.ptp(h)), scale)
    if np.any(np.abs(hi - hj) <= DEPTH_MARGIN * zscale):
        raise NonGenericProjection("strands meet in space or are too close in depth")

    entries = []  # (edge, param, label, over, sign)
    for label, (i, j, si, tj, hii, hjj, dn) in enumerate(zip(ii, jj, s, t, hi, hj, den), start=1):
        i_over = hii > hjj
        # den = a x b with a along edge i; sign of (over x under) in the projection plane
        sign = int(np.sign(dn)) if i_over else -int(np.sign(dn))
        entries.append((int(i), float(si), label, bool(i_over), sign))
        entries.append((int(j), float(tj), label, not i_over, sign))
    entries.sort(key=lambda e: (e[0], e[1]))
    for k in range(1, len(entries)):
        if entries[k][0] == entries[k - 1][0] and entries[k][1] - entries[k - 1][1] <= PARAM_MARGIN:
            raise NonGenericProjection("triple point")
    return Diagram(tuple(GaussEntry(lab, ov, sg) for _, _, lab, ov, sg in entries),
                   tuple(float(x) for x in d))


def project_diagram(P: PolygonalKnot, direction=None) -> Diagram:
    if direction is not None:
        return diagram_along(P, direction)
    for k in range(MAX_DIRECTIONS):
        try:
            return diagram_along(P, sweep_direction(k))
        except NonGenericProjection:
            continue
    raise DiagramError(f"no generic projection among {MAX_DIRECTIONS} directions")


def _arcs(D: Diagram):
    """(over_arc, in_arc, out_arc, sign) per crossing, arcs split at underpasses."""
    c = D.crossing_count
    labels = sorted({e.label for e in D.gauss_code})
    row = {lab: k for k, lab in enumerate(labels)}
    over_arc, under = {}, {}
    arc = 0
    for e in D.gauss_code:
        if e.over:
            over_arc[e.label] = arc % c
        else:
            under[e.label] = (arc % c, (arc + 1) % c, e.sign)
            arc += 1
    return [(row[lab], over_arc[lab], *under[lab]) for lab in labels]


def _bareiss_det(m: list[list[int]]) -> int:
    """Exact integer determinant by fraction-free elimination."""
    a = [list(r) for r in m]
    n = len(a)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def _alexander_matrix(D: Diagram, t: int) -> list[list[int]]:
    c = D.crossing_count
    m = [[0] * c for _ in range(c)]
    for r, over, a_in, a_out, sign in _arcs(D):
        m[r][over] += 1 - t
        if sign > 0:
            m[r][a_in] += t
            m[r][a_out] -= 1
        else:
            m[r][a_in] -= 1
            m[r][a_out] += t
    return m


def knot_determinant(D: Diagram) -> int:
    if D.crossing_count == 0:
        return 1
    m = _alexander_matrix(D, -1)
    minor = [row[1:] for row in m[1:]]
    return abs(_bareiss_det(minor))


def alexander_polynomial(D: Diagram) -> list[int]:
    """Coefficients (ascending powers) normalised to start at t^0 with positive lead."""
    c = D.crossing_count
    if c == 0:
        return [1]
    xs = list(range(2, c + 2))
    ys = []
    for x in xs:
        m = _alexander_matrix(D, x)
        ys.append(Fraction(_bareiss_det([row[1:] for row in m[1:]])))
    # Newton divided differences, then expand to the monomial basis
    coef = list(ys)
    for k in range(1, len(xs)):
        for i in range(len(xs) - 1, k - 1, -1):
            coef[i] = (coef[i] - coef[i - 1]) / (xs[i] - xs[i - k])
    poly = [Fraction(0)] * len(xs)
    for k in range(len(xs) - 1, -1, -1):
        # poly = poly * (t - xs[k]) + coef[k]
        new = [Fraction(0)] * len(xs)
        for i, p in enumerate(poly[:-1]):
            new[i + 1] += p
            new[i] -= p * xs[k]
        new[0] += coef[k]
        poly = new
    ints = [int(p) for p in poly]
    if any(Fraction(i) != p for i, p in zip(ints, poly)):
        raise DiagramError("non-integral Alexander polynomial")
    while len(ints) > 1 and ints[-1] == 0:
        ints.pop()
    while len(ints) > 1 and ints[0] == 0:
        ints.pop(0)
    if ints[-1] < 0:
        ints = [-x for x in ints]
    return ints


def determinant_of(P: PolygonalKnot) -> int:
    return knot_determinant(project_diagram(P))


class TypeCertificate(NamedTuple):
    ok: bool
    route: str  # "tube", "not-refuted" or "determinant-mismatch"
    displacement: float

    def __bool__(self) -> bool:
        return self.ok

    @property
    def certified(self) -> bool:
        return self.route == "tube"


def same_type_certificate(x, y, max_step: float = 1.0) -> TypeCertificate:
    """Certify that two thickness-1 configurations share a knot type.

    Vertex displacement below ``max_step`` after alignment keeps the straight
    interpolation inside the unit tube. Otherwise only the determinants are
    compared, which can refute but never confirm.
    """
    from .normalize import align

    if x.knot.n == y.knot.n:
        moved, _ = align(x, y)
        disp = float(np.linalg.norm(moved.vertices - x.knot.vertices, axis=1).max())
        if disp < max_step:
            return TypeCertificate(True, "tube", disp)
    else:
        disp = float("inf")
    if x.determinant != y.determinant:
        return TypeCertificate(False, "determinant-mismatch", disp)
    return TypeCertificate(True, "not-refuted", disp)
