"""Thickness-one normalisation and the rigid/dihedral quotient distance."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import PolygonalKnot, ThicknessReport, edge_lengths, length, thickness, total_curvature

NORMALIZED_TOL = 1e-9


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NormalizedConfig:
    """A thickness-one polygon; its length equals its ropelength."""

    knot: PolygonalKnot
    length: float
    report: ThicknessReport

    def __post_init__(self):
        if abs(self.report.thickness - 1.0) > NORMALIZED_TOL:
            raise NormalizationError(f"thickness {self.report.thickness!r} is not 1")

    @classmethod
    def from_knot(cls, knot: PolygonalKnot) -> "NormalizedConfig":
        """Wrap a knot that is already at thickness one (e.g. read from disk)."""
        return cls(knot, length(knot), thickness(knot))

    @property
    def ropelength(self) -> float:
        return self.length / self.report.thickness

    @property
    def n(self) -> int:
        return self.knot.n

    @cached_property
    def determinant(self) -> int:
        from .knotid import determinant_of
        return determinant_of(self.knot)

    @cached_property
    def fingerprint(self) -> tuple:
        e = np.sort(edge_lengths(self.knot))
        q = tuple(round(float(x), 6) for x in np.quantile(e, [0.0, 0.5, 1.0]))
        return (self.n, self.determinant, round(self.length, 6), q,
                round(total_curvature(self.knot), 6))


def normalize_scale(P) -> NormalizedConfig:
    """Dilate ``P`` about the origin by ``1 / thickness(P)``."""
    if isinstance(P, NormalizedConfig):
        P = P.knot
    rep = thickness(P)
    if not rep.thickness > 0.0:
        raise NormalizationError("knot has zero thickness")
    knot = PolygonalKnot(P.vertices / rep.thickness)
    # one division can leave a few ulps of error at large coordinates
    for _ in range(3):
        rep = thickness(knot)
        if abs(rep.thickness - 1.0) <= 1e-12:
            break
        knot = PolygonalKnot(knot.vertices / rep.thickness)
    return NormalizedConfig(knot, length(knot), rep)


def may_coincide(x: NormalizedConfig, y: NormalizedConfig, tol: float) -> bool:
    """Cheap necessary condition for ``quotient_distance(x, y) < tol``.

    An RMS vertex displacement ``tol`` changes total length by at most
    ``2 n tol``.
    """
    if x.n != y.n:
        return False
    if abs(x.length - y.length) > 2.0 * x.n * tol:
        return False
    return x.determinant == y.determinant


def _as_vertices(x) -> np.ndarray:
    if isinstance(x, NormalizedConfig):
        return x.knot.vertices
    if isinstance(x, PolygonalKnot):
        return x.vertices
    return np.asarray(x, dtype=float)


def relabelings(n: int) -> np.ndarray:
    """Index arrays for the 2n dihedral relabelings: shifts, then reversed shifts."""
    i = np.arange(n)
    k = np.arange(n)[:, None]
    return np.concatenate([(k + i) % n, (k - i) % n])


def _best_alignment(X: np.ndarray, Y: np.ndarray):
    cx, cy = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - cx, Y - cy
    Ys = Yc[relabelings(len(X))]                       # (2n, n, 3)
    H = np.einsum("kij,il->kjl", Ys, Xc)               # sum_i y_i x_i^T
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    det = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    det[det == 0] = 1.0
    D = np.zeros_like(H)
    D[:, 0, 0] = D[:, 1, 1] = 1.0
    D[:, 2, 2] = det
    R = V @ D @ np.swapaxes(U, 1, 2)                   # proper rotations
    moved = np.einsum("kij,klj->kil", Ys, R)           # y_i -> R y_i
    rmsd = np.sqrt(np.mean(np.sum((moved - Xc) ** 2, axis=2), axis=1))
    k = int(np.argmin(rmsd))
    return moved[k] + cx, float(rmsd[k]), k


def align(x, y) -> tuple[PolygonalKnot, float]:
    """Relabel and properly rotate ``y`` onto ``x``; returns the moved copy and the RMSD."""
    X, Y = _as_vertices(x), _as_vertices(y)
    if X.shape != Y.shape:
        raise ValueError(f"vertex counts differ: {len(X)} vs {len(Y)}")
    moved, dist, _ = _best_alignment(X, Y)
    return PolygonalKnot(moved), dist


def quotient_distance(x, y) -> float:
    """RMS vertex distance minimised over proper rigid motions and dihedral relabelings."""
    X, Y = _as_vertices(x), _as_vertices(y)
    if X.shape != Y.shape:
        return float("inf")
    # fixed argument order keeps the result exactly symmetric
    if X.tobytes() > Y.tobytes():
        X, Y = Y, X
    return _best_alignment(X, Y)[1]
