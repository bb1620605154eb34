"""Length, curvature, thickness and ropelength of closed polygons in R^3.

Thickness of a polygon is ``min(min_rad, dcsd / 2)`` where ``min_rad`` is the
smallest corner turning radius and ``dcsd`` the doubly critical self-distance.
A pair of points ``p, q`` on the polygon is doubly critical when the chord
``p - q`` lies in the normal cone of the polygon at ``p`` and at ``q``; for an
edge interior point that cone is the plane orthogonal to the edge, for a
vertex it is the set of directions ``u`` with ``0`` between ``t_in . u`` and
``t_out . u``.  Both local minima and local maxima of the distance function
count, so ``dcsd`` is a conservative minimum.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

ANGULAR_SLACK = 1e-9
PARALLEL_ANGLE = 1e-6
# endpoint parameters are handled by the vertex candidates
_INTERIOR_EPS = 1e-12


class DegenerateVertexError(ValueError):
    """A vertex where the polygon reverses direction (turning angle pi)."""

    def __init__(self, index: int):
        super().__init__(f"degenerate vertex {index}: turning angle is pi")
        self.index = index


class PolygonalKnot:
    """Closed polygon; edge ``i`` joins vertex ``i`` to vertex ``(i+1) % n``."""

    __slots__ = ("vertices",)

    def __init__(self, vertices, name: str | None = None):
        v = np.array(vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (n, 3), got {v.shape}")
        if v.shape[0] < 3:
            raise ValueError(f"need at least 3 vertices, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        lengths = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
        if np.any(lengths <= 0.0):
            i = int(np.argmin(lengths))
            raise ValueError(f"vertices {i} and {(i + 1) % len(v)} coincide")
        v.setflags(write=False)
        self.vertices = v

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def __repr__(self) -> str:
        return f"PolygonalKnot(n={self.n})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolygonalKnot):
            return NotImplemented
        return self.vertices.shape == other.vertices.shape and bool(
            np.array_equal(self.vertices, other.vertices))

    __hash__ = None

    def edges(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def scaled(self, factor: float, center=None) -> "PolygonalKnot":
        c = self.centroid() if center is None else np.asarray(center, float)
        return PolygonalKnot(c + factor * (self.vertices - c))

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> "PolygonalKnot":
        r = np.asarray(rotation, float)
        return PolygonalKnot(self.vertices @ r.T + np.asarray(translation, float))

    def shifted(self, k: int) -> "PolygonalKnot":
        return PolygonalKnot(np.roll(self.vertices, -k, axis=0))

    def reversed(self) -> "PolygonalKnot":
        return PolygonalKnot(self.vertices[::-1])

    def point_at(self, edge: int, s: float) -> np.ndarray:
        a = self.vertices[edge % self.n]
        b = self.vertices[(edge + 1) % self.n]
        return a + s * (b - a)


class ArcPosition(NamedTuple):
    edge: int
    s: float


@dataclass(frozen=True)
class ThicknessReport:
    min_rad: float
    dcsd: float
    thickness: float
    min_rad_witness: int
    dcsd_witness: tuple[ArcPosition, ArcPosition] | None = field(default=None)

    def to_dict(self) -> dict:
        w = self.dcsd_witness
        return {
            "min_rad": self.min_rad,
            "dcsd": self.dcsd,
            "thickness": self.thickness,
            "min_rad_witness": self.min_rad_witness,
            "dcsd_witness": None if w is None else [[p.edge, p.s] for p in w],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThicknessReport":
        w = d.get("dcsd_witness")
        witness = None if w is None else tuple(ArcPosition(int(e), float(s)) for e, s in w)
        return cls(float(d["min_rad"]), float(d["dcsd"]), float(d["thickness"]),
                   int(d["min_rad_witness"]), witness)


class EmbeddingCheck(NamedTuple):
    ok: bool
    witness: tuple[int, int] | None = None
    distance: float = float("inf")

    def __bool__(self) -> bool:
        return self.ok


def _vertices(P) -> np.ndarray:
    return P.vertices if isinstance(P, PolygonalKnot) else np.asarray(P, dtype=np.float64)


def length(P) -> float:
    v = _vertices(P)
    return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())


def edge_lengths(P) -> np.ndarray:
    v = _vertices(P)
    return np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)


def turning_angles(P, check: bool = True) -> np.ndarray:
    """Exterior angle at each vertex, in [0, pi]."""
    v = _vertices(P)
    d = np.roll(v, -1, axis=0) - v
    t_in = np.roll(d, 1, axis=0)
    cross = np.linalg.norm(np.cross(t_in, d), axis=1)
    dot = np.einsum("ij,ij->i", t_in, d)
    theta = np.arctan2(cross, dot)
    if check:
        bad = np.nonzero((cross == 0.0) & (dot < 0.0))[0]
        if len(bad):
            raise DegenerateVertexError(int(bad[0]))
    return theta


def total_curvature(P) -> float:
    return float(turning_angles(P).sum())


def vertex_radii(P) -> np.ndarray:
    """Turning radius ``min(|e_{i-1}|, |e_i|) / (2 tan(theta_i / 2))`` per vertex."""
    v = _vertices(P)
    d = np.roll(v, -1, axis=0) - v
    t_in = np.roll(d, 1, axis=0)
    l_out = np.linalg.norm(d, axis=1)
    l_in = np.roll(l_out, 1)
    sin_l = np.linalg.norm(np.cross(t_in, d), axis=1)  # |a||b| sin
    cos_l = np.einsum("ij,ij->i", t_in, d)              # |a||b| cos
    bad = np.nonzero((sin_l == 0.0) & (cos_l < 0.0))[0]
    if len(bad):
        raise DegenerateVertexError(int(bad[0]))
    # tan(theta/2) = sin / (1 + cos); the |a||b| factors cancel
    tan_half = sin_l / (l_in * l_out + cos_l)
    with np.errstate(divide="ignore"):
        r = np.minimum(l_in, l_out) / (2.0 * tan_half)
    return r


def min_rad(P) -> tuple[float, int]:
    r = vertex_radii(P)
    i = int(np.argmin(r))
    return float(r[i]), i


def _vertex_critical(t_in, t_out, u_hat, slack=ANGULAR_SLACK):
    a = np.einsum("...k,...k->...", t_in, u_hat)
    b = np.einsum("...k,...k->...", t_out, u_hat)
    return (np.minimum(a, b) <= slack) & (np.maximum(a, b) >= -slack)


def _dcsd_candidates(v: np.ndarray):
    """All doubly critical candidate pairs as (dist, e1, s1, e2, s2) arrays."""
    n = len(v)
    d = np.roll(v, -1, axis=0) - v
    l = np.linalg.norm(d, axis=1)
    t_out = d / l[:, None]
    t_in = np.roll(t_out, 1, axis=0)
    idx = np.arange(n)
    gap = (idx[None, :] - idx[:, None]) % n
    out = []

    # vertex-vertex: vertices that do not share an edge
    ii, jj = np.nonzero((gap >= 2) & (gap <= n - 2) & (idx[:, None] < idx[None, :]))
    if len(ii):
        u = v[ii] - v[jj]
        dist = np.linalg.norm(u, axis=1)
        with np.errstate(invalid="ignore"):
            uh = u / dist[:, None]
        # coincident vertices: the knot touches itself
        ok = (_vertex_critical(t_in[ii], t_out[ii], uh)
              & _vertex_critical(t_in[jj], t_out[jj], -uh)) | (dist == 0.0)
        z = np.zeros(ok.sum())
        out.append((dist[ok], ii[ok], z, jj[ok], z))

    # vertex to interior foot of an edge not containing the vertex
    ii, jj = np.nonzero((gap != 0) & (gap != n - 1))
    if len(ii):
        w = v[ii] - v[jj]
        t = np.einsum("ij,ij->i", w, d[jj]) / (l[jj] ** 2)
        inner = (t > _INTERIOR_EPS) & (t < 1.0 - _INTERIOR_EPS)
        ii, jj, t = ii[inner], jj[inner], t[inner]
        q = v[jj] + t[:, None] * d[jj]
        u = v[ii] - q
        dist = np.linalg.norm(u, axis=1)
        with np.errstate(invalid="ignore"):
            ok = _vertex_critical(t_in[ii], t_out[ii], u / dist[:, None]) | (dist == 0.0)
        out.append((dist[ok], ii[ok], np.zeros(ok.sum()), jj[ok], t[ok]))

    # edge-edge common perpendiculars between edges sharing no vertex
    ii, jj = np.nonzero((gap >= 2) & (gap <= n - 2) & (idx[:, None] < idx[None, :]))
    if len(ii):
        d1, d2 = d[ii], d[jj]
        r = v[ii] - v[jj]
        a = l[ii] ** 2
        e = l[jj] ** 2
        b = np.einsum("ij,ij->i", d1, d2)
        c = np.einsum("ij,ij->i", d1, r)
        f = np.einsum("ij,ij->i", d2, r)
        denom = a * e - b * b
        sin_ang = np.sqrt(np.maximum(denom, 0.0) / (a * e))
        par = sin_ang < PARALLEL_ANGLE
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (b * f - c * e) / denom
            t = (a * f - b * c) / denom
        # near-parallel: midpoint of the overlap of edge j projected onto edge i
        if np.any(par):
            s0 = -c[par] / a[par]
            s1 = (b[par] - c[par]) / a[par]
            lo = np.maximum(np.minimum(s0, s1), 0.0)
            hi = np.minimum(np.maximum(s0, s1), 1.0)
            sm = 0.5 * (lo + hi)
            sm = np.where(hi - lo > _INTERIOR_EPS, sm, np.nan)
            s[par] = sm
            t[par] = (b[par] * sm + f[par]) / e[par]
        with np.errstate(invalid="ignore"):
            inner = ((s > _INTERIOR_EPS) & (s < 1 - _INTERIOR_EPS)
                     & (t > _INTERIOR_EPS) & (t < 1 - _INTERIOR_EPS))
        ii, jj, s, t = ii[inner], jj[inner], s[inner], t[inner]
        p = v[ii] + s[:, None] * d[ii]
        q = v[jj] + t[:, None] * d[jj]
        dist = np.linalg.norm(p - q, axis=1)
        out.append((dist, ii, s, jj, t))
    return out


def dcsd(P) -> tuple[float, tuple[ArcPosition, ArcPosition] | None]:
    """Doubly critical self-distance and its witness pair.

    Returns ``(inf, None)`` when no doubly critical pair exists.
    """
    knot = P if isinstance(P, PolygonalKnot) else PolygonalKnot(P)
    cands = [c for c in _dcsd_candidates(knot.vertices) if len(c[0])]
    if not cands:
        return float("inf"), None
    dist = np.concatenate([c[0] for c in cands])
    e1 = np.concatenate([c[1] for c in cands])
    s1 = np.concatenate([c[2] for c in cands])
    e2 = np.concatenate([c[3] for c in cands])
    s2 = np.concatenate([c[4] for c in cands])
    # ties resolve on (edge, s, edge, s) order
    order = np.lexsort((s2, e2, s1, e1, dist))
    k = order[0]
    witness = (ArcPosition(int(e1[k]), float(s1[k])), ArcPosition(int(e2[k]), float(s2[k])))
    return witness_distance(knot, witness), witness


def witness_distance(P: PolygonalKnot, witness) -> float:
    (ea, sa), (eb, sb) = witness
    return float(np.linalg.norm(P.point_at(ea, sa) - P.point_at(eb, sb)))


def thickness(P) -> ThicknessReport:
    knot = P if isinstance(P, PolygonalKnot) else PolygonalKnot(P)
    r, ri = min_rad(knot)
    dd, w = dcsd(knot)
    return ThicknessReport(r, dd, min(r, dd / 2.0), ri, w)


def thickness_value(v: np.ndarray) -> float:
    """Thickness of a raw (n, 3) vertex array; the hot path of the optimizer.

    Returns 0.0 for degenerate input instead of raising.
    """
    try:
        r = vertex_radii(v).min()
    except DegenerateVertexError:
        return 0.0
    best = r
    for dist, *_ in _dcsd_candidates(v):
        if len(dist):
            best = min(best, 0.5 * dist.min())
    return float(best)


def ropelength(P) -> float:
    return length(P) / thickness(P).thickness


def segment_distances(p0, d0, p1, d1):
    """Closest distance between segments ``p0 + s d0`` and ``p1 + t d1``, s, t in [0, 1].

    Vectorised over leading axes. Returns ``(dist, s, t)``.
    """
    r = p0 - p1
    a = np.einsum("...k,...k->...", d0, d0)
    e = np.einsum("...k,...k->...", d1, d1)
    b = np.einsum("...k,...k->...", d0, d1)
    c = np.einsum("...k,...k->...", d0, r)
    f = np.einsum("...k,...k->...", d1, r)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-14 * a * e, (b * f - c * e) / denom, 0.0)
    s = np.clip(s, 0.0, 1.0)
    t = (b * s + f) / e
    low, high = t < 0.0, t > 1.0
    s = np.where(low, np.clip(-c / a, 0.0, 1.0), s)
    s = np.where(high, np.clip((b - c) / a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    diff = (p0 + s[..., None] * d0) - (p1 + t[..., None] * d1)
    return np.linalg.norm(diff, axis=-1), s, t


def is_embedded(P, clearance: float = 0.0) -> EmbeddingCheck:
    """Non-adjacent edges farther apart than ``clearance`` and no reversals.

    The witness of a failure is the closest violating edge pair; a reversal
    at vertex ``i`` is reported as the adjacent pair ``(i - 1, i)``.
    """
    v = _vertices(P)
    n = len(v)
    theta = turning_angles(v, check=False)
    d = np.roll(v, -1, axis=0) - v
    cross = np.linalg.norm(np.cross(np.roll(d, 1, axis=0), d), axis=1)
    dot = np.einsum("ij,ij->i", np.roll(d, 1, axis=0), d)
    rev = np.nonzero((cross <= 1e-15 * np.abs(dot)) & (dot < 0.0) | (theta >= np.pi))[0]
    if len(rev):
        i = int(rev[0])
        return EmbeddingCheck(False, ((i - 1) % n, i), 0.0)
    idx = np.arange(n)
    gap = (idx[None, :] - idx[:, None]) % n
    ii, jj = np.nonzero((gap >= 2) & (gap <= n - 2) & (idx[:, None] < idx[None, :]))
    if len(ii) == 0:
        return EmbeddingCheck(True)
    dist, _, _ = segment_distances(v[ii], d[ii], v[jj], d[jj])
    k = int(np.argmin(dist))
    if dist[k] <= clearance:
        return EmbeddingCheck(False, (int(ii[k]), int(jj[k])), float(dist[k]))
    return EmbeddingCheck(True, None, float(dist[k]))
