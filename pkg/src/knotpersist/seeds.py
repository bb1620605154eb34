"""Parametric seed knots: regular polygons, torus knots, braid closures."""
from __future__ import annotations

from math import gcd

import numpy as np

from .geometry import PolygonalKnot, is_embedded, thickness_value


class SeedError(ValueError):
    pass


# six-stick trefoil on integer coordinates; three crossings seen from near +z
STICK_TREFOIL = np.array([
    [0.0, -3.0, -3.0],
    [1.0, 2.0, -1.0],
    [3.0, -1.0, -3.0],
    [-2.0, 0.0, 1.0],
    [1.0, 1.0, -3.0],
    [2.0, -1.0, 0.0],
])


def stick_trefoil() -> PolygonalKnot:
    return PolygonalKnot(STICK_TREFOIL)


def regular_ngon(n: int, radius: float = 1.0) -> PolygonalKnot:
    if n < 3:
        raise SeedError(f"n must be >= 3, got {n}")
    a = 2.0 * np.pi * np.arange(n) / n
    return PolygonalKnot(np.c_[radius * np.cos(a), radius * np.sin(a), np.zeros(n)])


def torus_knot(p: int, q: int, n: int, major: float = 2.0, minor: float = 1.0,
               mirror: bool = False) -> PolygonalKnot:
    """(p, q) torus knot sampled at n points; (2, 3) is the trefoil."""
    if n < 3:
        raise SeedError(f"n must be >= 3, got {n}")
    if p < 1 or q < 1 or gcd(p, q) != 1:
        raise SeedError(f"p and q must be coprime positive integers, got ({p}, {q})")
    t = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    rad = major + minor * np.cos(q * t)
    z = minor * np.sin(q * t)
    pts = np.c_[rad * np.cos(p * t), rad * np.sin(p * t), -z if mirror else z]
    knot = PolygonalKnot(pts)
    if not is_embedded(knot) or _determinant_or_none(knot) != torus_determinant(p, q):
        raise SeedError(f"{n} samples are too few for an embedded ({p}, {q}) torus knot")
    return knot


def torus_determinant(p: int, q: int) -> int:
    """|Delta(-1)| of the (p, q) torus knot: q if p is even, p if q is even, else 1."""
    if p % 2 == 0:
        return q
    if q % 2 == 0:
        return p
    return 1


def _determinant_or_none(knot: PolygonalKnot):
    from .knotid import DiagramError, determinant_of
    try:
        return determinant_of(knot)
    except DiagramError:
        return None


def figure_eight(n: int) -> PolygonalKnot:
    t = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    rad = 2.0 + np.cos(2 * t)
    knot = PolygonalKnot(np.c_[rad * np.cos(3 * t), rad * np.sin(3 * t), np.sin(4 * t)])
    if not is_embedded(knot):
        raise SeedError(f"{n} samples are too few for an embedded figure-eight knot")
    return knot


def braid_closure(word: list[int], strands: int, points_per_slot: int = 4,
                  radius: float = 4.0, spacing: float = 1.0, height: float = 0.5) -> PolygonalKnot:
    """Closed braid drawn around the z axis; generator ``+i``/``-i`` swaps strands i-1, i.

    Seen from +z the diagram has exactly one crossing per letter. The closure
    must have a single component.
    """
    slots = len(word)
    if slots == 0:
        raise SeedError("empty braid word")
    for g in word:
        if not 1 <= abs(g) < strands:
            raise SeedError(f"generator {g} out of range for {strands} strands")
    # track each position through one full turn
    pts = []
    pos = 0
    for _ in range(strands):
        for s, g in enumerate(word):
            i = abs(g)
            for k in range(points_per_slot):
                u = k / points_per_slot
                ang = 2.0 * np.pi * (s + u) / slots
                if pos in (i - 1, i):
                    other = i if pos == i - 1 else i - 1
                    r = radius + spacing * (pos + (other - pos) * (1 - np.cos(np.pi * u)) / 2)
                    up = (pos == i - 1) == (g > 0)
                    z = height * np.sin(np.pi * u) * (1 if up else -1)
                else:
                    r, z = radius + spacing * pos, 0.0
                pts.append((r * np.cos(ang), r * np.sin(ang), z))
            if pos in (i - 1, i):
                pos = i if pos == i - 1 else i - 1
        if pos == 0:
            break
    else:
        raise SeedError("braid closure has more than one component")
    if len(pts) != strands * slots * points_per_slot:
        raise SeedError("braid closure has more than one component")
    return PolygonalKnot(np.array(pts))


def perturb(P: PolygonalKnot, eps: float, rng: np.random.Generator,
            max_attempts: int = 100) -> PolygonalKnot:
    """Move every vertex by a random vector of norm <= eps, keeping the knot embedded.

    Below the input's thickness the knot type cannot change. Above it, an
    attempt is rejected unless it is embedded and keeps the knot determinant.
    """
    from .knotid import DiagramError, determinant_of

    v = P.vertices
    tau = thickness_value(v)
    if tau <= 0.0 or not is_embedded(P):
        raise SeedError("input knot is not embedded")
    det0 = None if eps < tau else determinant_of(P)
    for _ in range(max_attempts):
        d = rng.normal(size=v.shape)
        d /= np.linalg.norm(d, axis=1)[:, None]
        d *= eps * rng.random(len(v))[:, None] ** (1.0 / 3.0)
        try:
            out = PolygonalKnot(v + d)
        except ValueError:
            continue
        if thickness_value(out.vertices) <= 0.0 or not is_embedded(out):
            continue
        if det0 is not None:
            try:
                if determinant_of(out) != det0:
                    continue
            except DiagramError:
                continue
        return out
    raise SeedError(f"no embedded perturbation found in {max_attempts} attempts")
