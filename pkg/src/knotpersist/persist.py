"""Admissible-component merge persistence for sampled near-minimizers.

A *certified path* joins two thickness-one configurations through frames
that are each embedded, at least ``1 - thickness_slack`` thick and no longer
than the scale being certified. Consecutive frames move every vertex by less
than the smallest frame thickness, so the knot type cannot change along it.

Each ``connect`` route builds its frames without looking at the scale being
tested. A route therefore certifies every scale at or above its own maximum
frame length. That makes success monotone in the scale and, because routes
are tried in a fixed order, monotone in the number of attempts.
"""
from __future__ import annotations

import itertools
import math
import zlib
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import length_kernel, thickness_kernel
from .geometry import PolygonalKnot, is_embedded
from .normalize import NormalizedConfig, align, quotient_distance

IDENTICAL_TOL = 1e-12


class PathFailure(RuntimeError):
    pass


class TypeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PersistParams:
    thickness_slack: float = 1e-3
    attempts: int = 3
    max_frames: int = 2048
    knn: int = 8
    exhaustive_below: int = 64
    birth_tol: float = 1e-2
    relax_sweeps: int = 20
    relax_step: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.thickness_slack < 1.0:
            raise ValueError("thickness_slack must lie in [0, 1)")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")
        if self.max_frames < 2:
            raise ValueError("max_frames must be >= 2")
        if self.knn < 1:
            raise ValueError("knn must be >= 1")
        if self.birth_tol < 0:
            raise ValueError("birth_tol must be >= 0")


@dataclass(frozen=True)
class CertifiedPath:
    frames: tuple
    scale: float
    min_thickness: float
    max_step: float
    determinant: int
    route: str = ""
    thickness_slack: float = 1e-3

    @property
    def n(self) -> int:
        return self.frames[0].n

    @classmethod
    def from_frames(cls, frames, determinant: int, route: str = "",
                    thickness_slack: float = 1e-3) -> "CertifiedPath":
        frames = tuple(f if isinstance(f, PolygonalKnot) else PolygonalKnot(f) for f in frames)
        verts = [f.vertices for f in frames]
        scale = max(length_kernel(v) for v in verts)
        tmin = min(thickness_kernel(v) for v in verts)
        step = max((float(np.sqrt(((b - a) ** 2).sum(axis=1)).max())
                    for a, b in zip(verts, verts[1:])), default=0.0)
        return cls(frames, scale, tmin, step, determinant, route, thickness_slack)


@dataclass(frozen=True)
class PathCheck:
    ok: bool
    problems: tuple = ()

    def __bool__(self):
        return self.ok


def validate_path(path: CertifiedPath, lam: float | None = None,
                  thickness_slack: float | None = None, check_types: bool = True) -> PathCheck:
    """Re-run every frame check from the stored frames alone.

    The stored ``scale``, ``min_thickness`` and ``max_step`` must agree with
    the recomputed values to 1e-12 relative.
    """
    from .geometry import thickness
    from .knotid import DiagramError, determinant_of

    slack = path.thickness_slack if thickness_slack is None else thickness_slack
    problems = []
    frames = path.frames
    if not frames:
        return PathCheck(False, ("path has no frames",))
    n = frames[0].n
    if any(f.n != n for f in frames):
        problems.append("frames have different vertex counts")
        return PathCheck(False, tuple(problems))
    lengths, thick = [], []
    for k, f in enumerate(frames):
        emb = is_embedded(f)
        if not emb:
            problems.append(f"frame {k} is not embedded (segments {emb.witness})")
        t = thickness(f).thickness
        thick.append(t)
        if t < 1.0 - slack:
            problems.append(f"frame {k} has thickness {t!r} < 1 - {slack!r}")
        lengths.append(length_kernel(f.vertices))
    scale = max(lengths)
    tmin = min(thick)
    step = max((float(np.sqrt(((b.vertices - a.vertices) ** 2).sum(axis=1)).max())
                for a, b in zip(frames, frames[1:])), default=0.0)
    for name, stored, actual in (("scale", path.scale, scale),
                                 ("min_thickness", path.min_thickness, tmin),
                                 ("max_step", path.max_step, step)):
        if abs(stored - actual) > 1e-12 * max(1.0, abs(actual)):
            problems.append(f"stored {name} {stored!r} differs from recomputed {actual!r}")
    if lam is not None and scale > lam:
        problems.append(f"scale {scale!r} exceeds {lam!r}")
    if not step < tmin:
        problems.append(f"max_step {step!r} is not below min_thickness {tmin!r}")
    if check_types:
        for k, f in enumerate(frames):
            try:
                det = determinant_of(f)
            except DiagramError as exc:
                problems.append(f"frame {k}: {exc}")
                continue
            if det != path.determinant:
                problems.append(f"frame {k} has determinant {det}, expected {path.determinant}")
                break
    return PathCheck(not problems, tuple(problems))


# ---------------------------------------------------------------- routes

def _normalized_frame(v: np.ndarray) -> np.ndarray | None:
    """Dilate ``v`` about its centroid to thickness one; None if not embedded."""
    t = thickness_kernel(v)
    if not t > 0.0:
        return None
    c = v.mean(axis=0)
    return c + (v - c) / t


def _max_disp(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(((b - a) ** 2).sum(axis=1)).max())


def _adaptive(x: np.ndarray, y: np.ndarray, frame_at, max_frames: int, floor: float = math.inf):
    """Frames ``frame_at(s)`` for s in [0, 1], bisected until every step is
    below ``floor`` and the thickness of both of its frames. None when a
    frame is degenerate or the frame budget runs out."""
    fx, fy = frame_at(0.0), frame_at(1.0)
    if fx is None or fy is None:
        return None
    done = [(0.0, fx, thickness_kernel(fx))]
    todo = [(1.0, fy, thickness_kernel(fy))]
    while todo:
        s0, f0, t0 = done[-1]
        s1, f1, t1 = todo[-1]
        if _max_disp(f0, f1) < min(t0, t1, floor):
            done.append(todo.pop())
            continue
        if len(done) + len(todo) >= max_frames or s1 - s0 < 1e-12:
            return None
        sm = 0.5 * (s0 + s1)
        fm = frame_at(sm)
        if fm is None:
            return None
        todo.append((sm, fm, thickness_kernel(fm)))
    return [f for _, f, _ in done]


def _linear_frames(x, y, params, floor=None):
    # steps below the thickness floor keep the certificate global
    floor = 1.0 - params.thickness_slack if floor is None else floor
    return _adaptive(x, y, lambda s: (1.0 - s) * x + s * y, params.max_frames, floor)


def _normalized_frames(x, y, params):
    def at(s):
        if s == 0.0:
            return x
        if s == 1.0:
            return y
        return _normalized_frame((1.0 - s) * x + s * y)
    return _adaptive(x, y, at, params.max_frames, 1.0 - params.thickness_slack)


def _pair_seed(params, x, y) -> int:
    return zlib.crc32(x.tobytes() + y.tobytes(), params.seed & 0xFFFFFFFF)


def _relaxed_frames(x, y, params, waypoints: int):
    """Normalized interpolation through relaxed waypoints.

    Interior waypoints of the straight interpolation are normalized, then
    shortened by a few tube-certified tightening sweeps and rigidly
    re-registered on the unrelaxed waypoint. Consecutive waypoints are joined
    by normalized interpolation.
    """
    from .knotid import DiagramError
    from .optimize import OptimizationError, TightenParams, tighten

    tp = TightenParams(max_iters=params.relax_sweeps, step_init=params.relax_step,
                       anneal_temp=0.0, polish_betas=(), patience=params.relax_sweeps,
                       seed=_pair_seed(params, x, y) % 2**64)
    pts = [x]
    for j in range(1, waypoints):
        s = j / waypoints
        w = _normalized_frame((1.0 - s) * x + s * y)
        if w is None:
            return None
        try:
            r = tighten(PolygonalKnot(w), tp)
        except (OptimizationError, DiagramError):
            return None
        pts.append(_register(w, r.final.knot.vertices))
    pts.append(y)
    frames = [x]
    budget = params.max_frames
    for a, b in zip(pts, pts[1:]):
        seg = _normalized_frames(a, b, replace(params, max_frames=max(2, budget - len(frames) + 1)))
        if seg is None:
            return None
        frames.extend(seg[1:])
    return frames


def _register(target: np.ndarray, moving: np.ndarray) -> np.ndarray:
    """Proper rigid motion of ``moving`` onto ``target`` with fixed labels."""
    ct, cm = target.mean(axis=0), moving.mean(axis=0)
    H = (moving - cm).T @ (target - ct)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return (moving - cm) @ R.T + ct


def route_plan(attempts: int) -> list[tuple[str, int]]:
    """Routes tried by ``connect``, in order; the list only grows with attempts."""
    plan = [("linear", 0), ("normalized", 0)]
    k = 2
    while len(plan) < attempts:
        plan.append(("relaxed", k))
        k *= 2
    return plan[:attempts]


def _route(name, arg, x, y, params):
    if name == "linear":
        frames = _linear_frames(x, y, params)
    elif name == "normalized":
        frames = _normalized_frames(x, y, params)
    else:
        frames = _relaxed_frames(x, y, params, arg)
    if frames is None:
        return None
    slack = params.thickness_slack
    # certificate requires every frame thick and every step below the minimum
    tmin = min(thickness_kernel(f) for f in frames)
    if tmin < 1.0 - slack:
        return None
    step = max((_max_disp(a, b) for a, b in zip(frames, frames[1:])), default=0.0)
    if not step < tmin:
        return None
    return frames


@dataclass
class ConnectResult:
    path: CertifiedPath | None
    reason: str = ""

    def __bool__(self):
        return self.path is not None


class Connector:
    """``connect`` with a per-pair cache of route outcomes.

    Route frames do not depend on the scale, so binary searches over a grid
    reuse them.
    """

    def __init__(self, params: PersistParams | None = None):
        self.params = params or PersistParams()
        self._cache: dict = {}

    def _prepare(self, x: NormalizedConfig, y: NormalizedConfig):
        if x.n != y.n:
            raise ValueError(f"vertex counts differ: {x.n} vs {y.n}")
        if x.determinant != y.determinant:
            raise TypeMismatch(f"knot determinants differ: {x.determinant} vs {y.determinant}")
        moved, _ = align(x, y)
        return x.knot.vertices, moved.vertices

    def route_paths(self, x: NormalizedConfig, y: NormalizedConfig, attempts: int | None = None):
        """(route name, CertifiedPath or None) for the first ``attempts`` routes."""
        attempts = self.params.attempts if attempts is None else attempts
        key = (x.knot.vertices.tobytes(), y.knot.vertices.tobytes())
        entry = self._cache.get(key)
        if entry is None:
            xv, yv = self._prepare(x, y)
            entry = self._cache[key] = {"x": xv, "y": yv, "routes": []}
        xv, yv, routes = entry["x"], entry["y"], entry["routes"]
        slack = self.params.thickness_slack
        if _max_disp(xv, yv) <= IDENTICAL_TOL:
            single = CertifiedPath.from_frames([x.knot], x.determinant, "identical", slack)
            return [("identical", single)]
        for name, arg in route_plan(attempts)[len(routes):]:
            frames = _route(name, arg, xv, yv, self.params)
            label = name if name != "relaxed" else f"relaxed{arg}"
            path = None if frames is None else CertifiedPath.from_frames(
                frames, x.determinant, label, slack)
            routes.append((label, path))
        return routes[:attempts]

    def connect(self, x: NormalizedConfig, y: NormalizedConfig, lam: float,
                attempts: int | None = None) -> ConnectResult:
        if max(x.ropelength, y.ropelength) > lam:
            return ConnectResult(None, "scale below a birth")
        best = None
        for label, path in self.route_paths(x, y, attempts):
            if path is not None and path.scale <= lam:
                return ConnectResult(path)
            if path is not None and (best is None or path.scale < best):
                best = path.scale
        if best is None:
            return ConnectResult(None, "no route produced a certificate")
        return ConnectResult(None, f"cheapest certificate needs scale {best!r}")


def connect(x: NormalizedConfig, y: NormalizedConfig, lam: float,
            params: PersistParams | None = None) -> ConnectResult:
    """Certified path from ``x`` to an aligned copy of ``y`` within scale ``lam``."""
    return Connector(params).connect(x, y, lam)


def rescale_path(x: NormalizedConfig, y: NormalizedConfig,
                 params: PersistParams | None = None) -> CertifiedPath:
    """Inflate, interpolate at the inflated size, deflate.

    With ``tau`` the smallest thickness along the straight interpolation from
    ``x`` to aligned ``y``, dilating by ``s = max(1, 1 / tau)`` about the
    centroid makes every interpolated frame at least as thick as one.
    """
    p = params or PersistParams()
    if x.n != y.n:
        raise ValueError(f"vertex counts differ: {x.n} vs {y.n}")
    if x.determinant != y.determinant:
        raise TypeMismatch(f"knot determinants differ: {x.determinant} vs {y.determinant}")
    xv = x.knot.vertices
    yv = align(x, y)[0].vertices
    if _max_disp(xv, yv) <= IDENTICAL_TOL:
        return CertifiedPath.from_frames([x.knot], x.determinant, "identical", p.thickness_slack)
    floor = math.inf
    for _ in range(8):
        raw = _linear_frames(xv, yv, p, floor)
        if raw is None:
            raise PathFailure("no tube-certified interpolation between the two configurations")
        tau = min(thickness_kernel(f) for f in raw)
        s = max(1.0, 1.0 / tau)
        step = max(_max_disp(a, b) for a, b in zip(raw, raw[1:]))
        # after inflation the steps must stay below the thinnest frame, about one
        if step * s < 0.9 * (1.0 - p.thickness_slack):
            break
        floor = 0.8 * (1.0 - p.thickness_slack) / s
    c = xv.mean(axis=0)

    def dilation(v, a, b):
        # homothety a -> b about c; steps bounded by the smaller frame thickness
        r = float(np.sqrt(((v - c) ** 2).sum(axis=1)).max())
        t1 = thickness_kernel(v)
        out, f = [], a
        while True:
            out.append(c + (v - c) * f)
            if f == b:
                return out
            # thickness at factor g >= 1 is at least t1; keep |g - f| * r below it
            step = 0.5 * t1 / r
            f = min(f + step, b) if b > f else max(f - step, b)
            if len(out) > p.max_frames:
                raise PathFailure("frame budget exceeded while dilating")

    up = dilation(xv, 1.0, s)
    mid = [c + (f - c) * s for f in raw]
    down = dilation(yv, s, 1.0)
    frames = up + mid[1:] + down[1:]
    if len(frames) > p.max_frames:
        raise PathFailure("frame budget exceeded")
    path = CertifiedPath.from_frames(frames, x.determinant, "rescale", p.thickness_slack)
    if path.min_thickness < 1.0 - p.thickness_slack or not path.max_step < path.min_thickness:
        raise PathFailure("inflated interpolation is not certified")
    return path


# ---------------------------------------------------------------- union-find

class UnionFind:
    """Disjoint sets over 0..n-1 labelled by their smallest member."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.low = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def label(self, a: int) -> int:
        return self.low[self.find(a)]

    def union(self, a: int, b: int) -> tuple[int, int] | None:
        """Merge; returns the two labels merged, or None if already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return None
        la, lb = self.low[ra], self.low[rb]
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.low[ra] = min(la, lb)
        return (min(la, lb), max(la, lb))


@dataclass(frozen=True)
class MergeEdge:
    a: int
    b: int
    scale: float
    path: CertifiedPath | None = None


@dataclass(frozen=True)
class MergeEvent:
    scale: float
    a: int
    b: int


@dataclass
class MergeTree:
    birth: list
    edges: list
    merges: list
    lambda_grid: tuple
    nodes: list = field(default_factory=list)
    thickness_slack: float = 1e-3

    @property
    def size(self) -> int:
        return len(self.birth)

    def alive(self, lam: float) -> list[int]:
        return [i for i, b in enumerate(self.birth) if b <= lam]

    def active_edges(self, lam: float) -> list[MergeEdge]:
        return [e for e in self.edges if e.scale <= lam]

    def components_at(self, lam: float) -> list[tuple]:
        """Components of the nodes born by ``lam``, each sorted, ordered by label."""
        uf = UnionFind(self.size)
        for e in self.active_edges(lam):
            uf.union(e.a, e.b)
        groups = defaultdict(list)
        for i in self.alive(lam):
            groups[uf.label(i)].append(i)
        return [tuple(groups[k]) for k in sorted(groups)]

    def component_count(self, lam: float) -> int:
        return len(self.components_at(lam))


def build_merge_tree(births, edges, lambda_grid, nodes=None,
                     thickness_slack: float = 1e-3) -> MergeTree:
    """Union-find over edges sorted by (scale, a, b).

    ``edges`` holds ``MergeEdge`` values or ``(a, b, scale)`` tuples; every
    scale must be a grid point no smaller than both endpoint births.
    """
    grid = tuple(float(g) for g in lambda_grid)
    if any(b >= a for a, b in zip(grid[1:], grid)):
        raise ValueError("lambda_grid must be strictly increasing")
    births = [float(b) for b in births]
    if not births:
        raise ValueError("no samples")
    gridset = set(grid)
    norm = []
    for e in edges:
        if not isinstance(e, MergeEdge):
            e = MergeEdge(*e)
        a, b = min(e.a, e.b), max(e.a, e.b)
        if a == b or not 0 <= a < len(births) or b >= len(births):
            raise ValueError(f"bad edge endpoints ({e.a}, {e.b})")
        if e.scale not in gridset:
            raise ValueError(f"edge scale {e.scale!r} is not a grid point")
        if e.scale < max(births[a], births[b]):
            raise ValueError(f"edge ({a}, {b}) activates before a birth")
        norm.append(MergeEdge(a, b, float(e.scale), e.path))
    norm.sort(key=lambda e: (e.scale, e.a, e.b))
    uf = UnionFind(len(births))
    merges = []
    for e in norm:
        joined = uf.union(e.a, e.b)
        if joined is not None:
            merges.append(MergeEvent(e.scale, *joined))
    return MergeTree(births, norm, merges, grid, list(nodes or []), thickness_slack)


def _candidate_pairs(samples, params: PersistParams) -> list[tuple[int, int]]:
    m = len(samples)
    if m <= params.exhaustive_below:
        return list(itertools.combinations(range(m), 2))
    d = np.array([[quotient_distance(a, b) if i != j else np.inf
                   for j, b in enumerate(samples)] for i, a in enumerate(samples)])
    pairs = set()
    for i in range(m):
        for j in np.argsort(d[i], kind="stable")[:params.knn]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    return sorted(pairs)


def _scan_pair(args):
    samples, i, j, grid, params = args
    x, y = samples[i], samples[j]
    conn = Connector(params)
    first = int(np.searchsorted(grid, max(x.ropelength, y.ropelength), side="left"))
    lo, hi = first, len(grid)          # answer in [lo, hi); hi means none
    found = None
    while lo < hi:
        mid = (lo + hi) // 2
        res = conn.connect(x, y, grid[mid])
        if res:
            hi, found = mid, res.path
        else:
            lo = mid + 1
    if found is None:
        return None
    # the path found last certifies grid[hi]; recheck keeps it minimal
    return MergeEdge(i, j, float(grid[hi]), conn.connect(x, y, grid[hi]).path)


def merge_scan(samples: list[NormalizedConfig], lambda_grid, params: PersistParams | None = None,
               workers: int = 1) -> MergeTree:
    """Smallest certified grid scale for each candidate pair, then union-find."""
    p = params or PersistParams()
    if not samples:
        raise ValueError("no samples")
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda_grid must be a non-empty strictly increasing sequence")
    if len({s.n for s in samples}) > 1:
        raise ValueError("samples have different vertex counts")
    dets = {s.determinant for s in samples}
    if len(dets) > 1:
        raise TypeMismatch(f"samples have different knot determinants: {sorted(dets)}")
    pairs = _candidate_pairs(samples, p)
    jobs = [(samples, i, j, grid, p) for i, j in pairs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            found = list(pool.map(_scan_pair, jobs))
    else:
        found = [_scan_pair(j) for j in jobs]
    edges = [e for e in found if e is not None]
    births = [s.ropelength for s in samples]
    return build_merge_tree(births, edges, grid, samples, p.thickness_slack)


def first_birth(tree: MergeTree) -> float:
    """Smallest sampled ropelength; an upper bound for the true minimum."""
    if not tree.birth:
        raise ValueError("empty tree")
    return min(tree.birth)


def check_tree(tree: MergeTree) -> list[str]:
    """Structural assertions on a (possibly deserialized) tree; empty when sound."""
    problems = []
    grid = tree.lambda_grid
    gridset = set(grid)
    b0 = first_birth(tree)
    if b0 != min(tree.birth):
        problems.append("first birth is not the minimum birth")
    for g in grid:
        comps = tree.components_at(g)
        if g < b0 and comps:
            problems.append(f"component exists at {g!r} below the first birth")
        members = [i for c in comps for i in c]
        if sorted(members) != tree.alive(g):
            problems.append(f"nodes alive at {g!r} are not partitioned")
    for e in tree.edges:
        if e.scale not in gridset:
            problems.append(f"edge ({e.a}, {e.b}) scale {e.scale!r} off grid")
        if e.scale < max(tree.birth[e.a], tree.birth[e.b]):
            problems.append(f"edge ({e.a}, {e.b}) active before its endpoints exist")
    # active sets only grow along the grid
    prev = set()
    for g in grid:
        act = {(e.a, e.b) for e in tree.active_edges(g)}
        if not prev <= act:
            problems.append(f"edge set shrinks at {g!r}")
        prev = act
    all_born = max(tree.birth)
    counts = [tree.component_count(g) for g in grid if g >= all_born]
    if any(b > a for a, b in zip(counts, counts[1:])):
        problems.append("component count increases after all births")
    scales = [m.scale for m in tree.merges]
    if scales != sorted(scales):
        problems.append("merge events are not sorted by scale")
    replay = build_merge_tree(tree.birth, [(e.a, e.b, e.scale) for e in tree.edges], grid)
    if [(m.scale, m.a, m.b) for m in replay.merges] != [(m.scale, m.a, m.b) for m in tree.merges]:
        problems.append("merge events do not match a union-find replay of the edges")
    return problems


# ---------------------------------------------------------------- merge scales

@dataclass
class MergeScaleMatrix:
    components: list          # tuples of node ids; label = first entry
    mu: np.ndarray
    birth: float
    ceiling: float
    lambda_grid: tuple = ()

    @property
    def labels(self) -> list[int]:
        return [c[0] for c in self.components]

    @property
    def size(self) -> int:
        return len(self.components)

    @property
    def d_merge(self) -> np.ndarray:
        d = self.mu - self.birth
        np.fill_diagonal(d, 0.0)
        return d

    @property
    def d_merge_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) bounds on d_merge; a scan only sees grid points.

        A pair first joined at grid point g merged somewhere after the
        previous grid point, so a zero lower bound means the scan cannot
        tell d_merge = 0 from a value below one grid step.
        """
        upper = self.d_merge
        lower = upper.copy()
        grid = np.asarray(self.lambda_grid, dtype=float)
        if len(grid):
            k = np.searchsorted(grid, self.mu, side="left")
            prev = np.where(k > 0, grid[np.maximum(k - 1, 0)], -np.inf)
            with np.errstate(invalid="ignore"):
                lower = np.where(np.isfinite(self.mu), np.maximum(prev - self.birth, 0.0), np.inf)
        np.fill_diagonal(lower, 0.0)
        return lower, upper

    @property
    def flagged(self) -> np.ndarray:
        """Pairs not joined by the scan ceiling."""
        return ~np.isfinite(self.mu)

    @property
    def nu_ideal(self) -> int:
        return self.size


def merge_scales(tree: MergeTree, birth_tol: float = 1e-2) -> MergeScaleMatrix:
    """Merge scales between the components present just above the first birth."""
    b0 = first_birth(tree)
    cut = b0 * (1.0 + birth_tol)
    comps = tree.components_at(cut)
    where = {i: k for k, c in enumerate(comps) for i in c}
    m = len(comps)
    mu = np.full((m, m), np.inf)
    np.fill_diagonal(mu, b0)
    uf = UnionFind(tree.size)
    owned = [{where[i]} if i in where else set() for i in range(tree.size)]
    for e in tree.edges:
        ra, rb = uf.find(e.a), uf.find(e.b)
        if ra == rb:
            continue
        for i in owned[ra]:
            for j in owned[rb]:
                if i != j and not np.isfinite(mu[i, j]):
                    mu[i, j] = mu[j, i] = max(e.scale, b0)
        uf.union(e.a, e.b)
        root = uf.find(e.a)
        owned[root] = owned[ra] | owned[rb]
    ceiling = tree.lambda_grid[-1] if tree.lambda_grid else b0
    return MergeScaleMatrix(comps, mu, b0, ceiling, tuple(tree.lambda_grid))


def ultrametric_violations(mu: np.ndarray, limit: int = 10) -> list[tuple[int, int, int]]:
    """Triples with mu[i, k] > max(mu[i, j], mu[j, k]), exact comparison."""
    out = []
    m = len(mu)
    for i, j, k in itertools.product(range(m), repeat=3):
        if mu[i, k] > max(mu[i, j], mu[j, k]):
            out.append((i, j, k))
            if len(out) >= limit:
                break
    return out


# ---------------------------------------------------------------- filtration

@dataclass
class MergeFiltration:
    mu: np.ndarray
    birth: float
    scales: tuple
    labels: list = field(default_factory=list)
    ceiling: float = math.inf

    @property
    def size(self) -> int:
        return len(self.mu)

    def graph(self, lam: float) -> dict:
        adj = {i: set() for i in range(self.size)}
        for i, j in itertools.combinations(range(self.size), 2):
            if self.mu[i, j] <= lam:
                adj[i].add(j)
                adj[j].add(i)
        return adj

    def partition_at(self, lam: float) -> list[tuple]:
        """Connected components of the merge graph at ``lam``; empty below the birth."""
        if lam < self.birth:
            return []
        adj = self.graph(lam)
        seen, parts = set(), []
        for s in range(self.size):
            if s in seen:
                continue
            stack, comp = [s], []
            seen.add(s)
            while stack:
                u = stack.pop()
                comp.append(u)
                for w in adj[u]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            parts.append(tuple(sorted(comp)))
        return sorted(parts)

    def simplex_threshold(self, simplex) -> float:
        s = sorted(set(simplex))
        if not s:
            raise ValueError("empty simplex")
        if len(s) == 1:
            return float(self.mu[s[0], s[0]])
        return float(max(self.mu[i, j] for i, j in itertools.combinations(s, 2)))

    def definitional_threshold(self, simplex) -> float:
        """Smallest scanned scale at which all of ``simplex`` share a class."""
        s = set(simplex)
        for lam in self.scales:
            if any(s <= set(p) for p in self.partition_at(lam)):
                return lam
        return math.inf

    def simplices(self, max_dim: int | None = None) -> list[tuple[float, tuple]]:
        """Every simplex with a finite threshold, sorted by (scale, dimension, ids)."""
        out = []
        top = max(self.scales) if self.scales else self.birth
        for part in self.partition_at(top):
            k_max = len(part) if max_dim is None else min(len(part), max_dim + 1)
            for k in range(1, k_max + 1):
                for sigma in itertools.combinations(part, k):
                    t = self.simplex_threshold(sigma)
                    if math.isfinite(t):
                        out.append((t, sigma))
        out.sort(key=lambda e: (e[0], len(e[1]), e[1]))
        return out


def vr_filtration(msm: MergeScaleMatrix) -> MergeFiltration:
    finite = {float(v) for v in msm.mu[np.isfinite(msm.mu)]}
    scales = sorted(finite | {float(g) for g in msm.lambda_grid if g >= msm.birth})
    return MergeFiltration(msm.mu.copy(), msm.birth, tuple(scales), msm.labels, msm.ceiling)


@dataclass
class BettiReport:
    per_scale: list           # (scale, passed, witness triple or None)

    @property
    def ok(self) -> bool:
        return all(p for _, p, _ in self.per_scale)

    def failures(self) -> list:
        return [(s, w) for s, p, w in self.per_scale if not p]


def betti_check(filt: MergeFiltration) -> BettiReport:
    """At each scale every connected component of the merge graph must be a clique.

    A failure carries a witness ``(i, j, k)``: edges i-j and j-k present,
    i-k missing.
    """
    rows = []
    for lam in filt.scales:
        adj = filt.graph(lam)
        witness = None
        for part in filt.partition_at(lam):
            missing = [(i, k) for i, k in itertools.combinations(part, 2) if k not in adj[i]]
            if missing:
                witness = _triple(adj, *missing[0])
                break
        rows.append((lam, witness is None, witness))
    return BettiReport(rows)


def _triple(adj, i, k):
    """Consecutive vertices u - v - w on a shortest path from i to k with u, w apart."""
    prev = {i: None}
    queue = [i]
    for u in queue:
        for w in sorted(adj[u]):
            if w not in prev:
                prev[w] = u
                queue.append(w)
    path = [k]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    path.reverse()
    # on a shortest path, vertices two apart are never adjacent
    return (path[0], path[1], path[2])
