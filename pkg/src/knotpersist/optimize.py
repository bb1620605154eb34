"""Ropelength tightening at fixed vertex count.

Two phases:

1. A gradient-free search over vertex coordinates. Each proposal displaces one
   vertex, or a Gaussian bump of neighbouring vertices, by a random vector.
   Every bump width keeps its own step size, adapted by the one-fifth success
   rule, which acts as a cheap multiscale preconditioner. Acceptance is greedy
   on a smoothed ropelength plus a thickness penalty, with optional Metropolis
   annealing early on. The working knot is rescaled to the target thickness
   after every sweep.
2. A quasi-Newton polish (L-BFGS) of the same smoothed objective at
   increasing sharpness. Its iterates are replayed one by one and kept only
   while each step passes the tube test.

The hard (exact) thickness always decides which configuration is best, and a
move is accepted only if its largest vertex displacement is below the
thickness at both ends, so the knot type never changes.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.optimize import minimize

from ._kernels import length_kernel, soft_ropelength_grad, soft_thickness, thickness_kernel
from .geometry import PolygonalKnot, is_embedded
from .normalize import NormalizedConfig, normalize_scale, quotient_distance

ANNEAL_FLOOR = 1e-8
MIN_STEP = 1e-10
MAX_BISECTIONS = 12


class OptimizationError(ValueError):
    pass


class MixedKnotTypes(OptimizationError):
    pass


@dataclass(frozen=True)
class TightenParams:
    max_iters: int = 2000
    step_init: float = 0.05
    step_decay: float = 0.8
    penalty_weight: float = 1.0
    anneal_temp: float = 1e-4
    anneal_decay: float = 0.7
    seed: int = 0
    target_thickness: float = 1.0
    # smoothing of the thickness minimum during the search
    beta: float = 30.0
    sep_gap: float = math.pi
    sep_width: float = 0.5
    widths: tuple = (0, 1, 2, 4, 8, 16)
    patience: int = 20
    polish_patience: int = 200
    polish_betas: tuple = (300.0, 1000.0, 3000.0)
    polish_iters: int = 3000

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        for name in ("step_init", "target_thickness", "beta", "sep_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("step_decay", "anneal_decay"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        for name in ("penalty_weight", "anneal_temp", "sep_gap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if any(w < 0 for w in self.widths) or not self.widths:
            raise ValueError("widths must be a non-empty list of non-negative numbers")
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "polish_betas", tuple(float(b) for b in self.polish_betas))

    @classmethod
    def from_dict(cls, d: dict) -> "TightenParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tighten parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["polish_betas"] = list(self.polish_betas)
        return d


@dataclass(frozen=True)
class TraceRow:
    """Best configuration so far, measured at the end of one iteration."""
    iteration: int
    ropelength: float
    thickness: float
    length: float
    phase: str


@dataclass
class TightenResult:
    final: NormalizedConfig
    trace: list[TraceRow] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    determinant: int | None = None

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "ropelength", "thickness", "length", "phase"])
        for r in self.trace:
            w.writerow([r.iteration, repr(r.ropelength), repr(r.thickness), repr(r.length), r.phase])
        return buf.getvalue()


def _profiles(n: int, widths) -> np.ndarray:
    gap = np.arange(n)
    gap = np.minimum(gap, n - gap)
    out = np.empty((len(widths), n))
    for k, w in enumerate(widths):
        out[k] = (gap == 0) if w == 0 else np.exp(-(gap / w) ** 2)
    return out


def tube_step(a: np.ndarray, b: np.ndarray, ta: float | None = None) -> bool:
    """Whether the straight vertex interpolation a -> b is tube certified.

    Subdivides until every piece moves each vertex by less than the thickness
    at both of its ends; gives up after ``MAX_BISECTIONS`` levels.
    """
    if ta is None:
        ta = thickness_kernel(a)
    if ta <= 0.0:
        return False
    stack = [(a, b, ta, 0)]
    while stack:
        x, y, tx, depth = stack.pop()
        ty = thickness_kernel(y)
        if ty <= 0.0:
            return False
        if np.sqrt(((y - x) ** 2).sum(axis=1)).max() < min(tx, ty):
            continue
        if depth >= MAX_BISECTIONS:
            return False
        mid = 0.5 * (x + y)
        tm = thickness_kernel(mid)
        if tm <= 0.0:
            return False
        stack.append((mid, y, tm, depth + 1))
        stack.append((x, mid, tx, depth + 1))
    return True


def _length_grad(v: np.ndarray) -> np.ndarray:
    d = np.roll(v, -1, axis=0) - v
    t = d / np.linalg.norm(d, axis=1)[:, None]
    return np.roll(t, 1, axis=0) - t


class _Objective:
    """Smoothed ropelength, made scale invariant by evaluating every
    configuration rescaled to the reference length ``ref``."""

    def __init__(self, params: TightenParams, beta: float, ref: float):
        self.p, self.beta, self.ref = params, beta, ref
        self.sep0 = params.sep_gap * params.target_thickness
        self.width = params.sep_width * params.target_thickness

    def __call__(self, v) -> float:
        p = self.p
        k = self.ref / length_kernel(v)
        soft, hard = soft_thickness(v * k, self.beta, self.sep0, self.width)
        if not soft > 0.0:
            return math.inf
        value = self.ref / soft * p.target_thickness
        if p.penalty_weight:
            value += p.penalty_weight * max(0.0, 1.0 - hard / (k * p.target_thickness)) ** 2
        return value

    def with_grad(self, x: np.ndarray):
        v = x.reshape(-1, 3)
        L = length_kernel(v)
        k = self.ref / L
        w = v * k
        f, g, _, _ = soft_ropelength_grad(w, self.beta, self.sep0, self.width)
        if not math.isfinite(f):
            return 1e300, np.zeros(x.size)
        # chain rule through w = v * ref / L(v)
        grad = k * g - (np.sum(g * w) / L) * _length_grad(v)
        return f, grad.ravel()


def tighten(P0: PolygonalKnot, params: TightenParams | None = None) -> TightenResult:
    """Reduce the ropelength of ``P0`` without changing its knot type."""
    from .knotid import determinant_of

    p = params or TightenParams()
    v = np.array(P0.vertices, dtype=float)
    n = len(v)
    tau = thickness_kernel(v)
    if not tau > 0.0 or not is_embedded(P0):
        raise OptimizationError("seed knot is not embedded")
    det = determinant_of(P0)
    v = v * (p.target_thickness / tau)
    objective = _Objective(p, p.beta, length_kernel(v))
    cur = objective(v)
    if not math.isfinite(cur):
        raise OptimizationError("objective is not finite at the seed")

    rng = np.random.default_rng(p.seed)
    profiles = _profiles(n, p.widths)
    n_w = len(p.widths)
    steps = np.full(n_w, float(p.step_init)) * p.target_thickness
    tries = np.zeros(n_w, dtype=int)
    hits = np.zeros(n_w, dtype=int)
    temp = p.anneal_temp

    t_cur = thickness_kernel(v)
    best_v, best_t = v.copy(), t_cur
    best_rl = length_kernel(v) / t_cur
    trace: list[TraceRow] = []
    last_gain = 0
    converged = False

    def record(phase):
        trace.append(TraceRow(len(trace), best_rl, best_t, best_rl * best_t, phase))

    def record_polish(rl, t):
        trace.append(TraceRow(len(trace), rl, t, rl * t, "polish"))

    for it in range(p.max_iters):
        phase = "anneal" if temp >= ANNEAL_FLOOR else "descent"
        for _ in range(n):
            i = int(rng.integers(n))
            w = int(rng.integers(n_w))
            d = rng.normal(size=3)
            d *= steps[w] / np.linalg.norm(d)
            u = rng.random()
            tries[w] += 1
            cand = v + np.roll(profiles[w], i)[:, None] * d
            fc = objective(cand)
            if not math.isfinite(fc):
                continue
            if fc >= cur:
                if temp < ANNEAL_FLOOR or u >= math.exp(-(fc - cur) / (temp * cur)):
                    continue
            t_c = thickness_kernel(cand)
            # tube certificate for this single move
            if not steps[w] < min(t_cur, t_c):
                continue
            v, cur, t_cur = cand, fc, t_c
            hits[w] += 1
            rl = length_kernel(v) / t_c
            if rl < best_rl:
                if rl < best_rl * (1.0 - 1e-12):
                    last_gain = it
                best_rl, best_v, best_t = rl, v.copy(), t_c
        # exact rescale to the target thickness
        v = v * (p.target_thickness / t_cur)
        t_cur = thickness_kernel(v)
        objective = _Objective(p, p.beta, length_kernel(v))
        cur = objective(v)
        for w in range(n_w):
            if tries[w] >= 10:
                rate = hits[w] / tries[w]
                if rate < 0.2:
                    steps[w] *= p.step_decay
                elif rate > 0.4:
                    steps[w] = min(steps[w] / p.step_decay, 0.2 * p.target_thickness)
                tries[w] = hits[w] = 0
        if temp >= ANNEAL_FLOOR:
            temp *= p.anneal_decay
            last_gain = max(last_gain, it)
        record(phase)
        if steps.max() < MIN_STEP * p.target_thickness or it - last_gain >= p.patience:
            converged = True
            break

    polish_ok = True
    for beta in p.polish_betas:
        best_v, best_rl, best_t, polish_ok = _polish(best_v, beta, p, record_row=record_polish)
    final = normalize_scale(PolygonalKnot(best_v))
    return TightenResult(final, trace, len(trace), converged and polish_ok, det)


def _polish(v, beta, p: TightenParams, record_row):
    """L-BFGS on the smoothed ropelength, replayed under the tube test.

    Iterates are certified as they arrive; the stage stops at the first step
    that fails the tube test or after ``patience`` iterates without an exact
    improvement. Returns the best certified iterate rescaled to the target
    thickness, its ropelength and thickness, and whether the stage ended on
    its own convergence criteria.
    """
    fun = _Objective(p, beta, length_kernel(v)).with_grad
    t0 = thickness_kernel(v)
    state = {"cur": v, "t": t0, "best": (v, length_kernel(v) / t0, t0),
             "stale": 0, "broken": False}

    def callback(xk):
        w = xk.reshape(-1, 3).copy()
        if not tube_step(state["cur"], w, state["t"]):
            state["broken"] = True
            raise StopIteration
        t = thickness_kernel(w)
        state["cur"], state["t"] = w, t
        rl = length_kernel(w) / t
        best_rl = state["best"][1]
        if rl < best_rl:
            state["stale"] = 0 if rl < best_rl * (1.0 - 1e-12) else state["stale"] + 1
            state["best"] = (w, rl, t)
        else:
            state["stale"] += 1
        record_row(*state["best"][1:])
        if state["stale"] >= p.polish_patience:
            raise StopIteration

    res = minimize(fun, v.ravel(), jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": p.polish_iters, "maxfun": 10 * p.polish_iters,
                            "ftol": 1e-14, "gtol": 1e-9, "maxcor": 20})
    best_v, best_rl, best_t = state["best"]
    best_v = best_v * (p.target_thickness / best_t)
    # status 1 is the iteration cap; an abnormal line search (status 2) means
    # the smoothed objective is flat to machine precision
    done = not state["broken"] and (res.status != 1 or state["stale"] >= p.polish_patience)
    return best_v, best_rl, thickness_kernel(best_v), done


@dataclass(frozen=True)
class RestartResult:
    seed_index: int
    restart: int
    run_seed: int
    result: TightenResult


def _derived_seed(base: int, i: int, r: int) -> int:
    state = np.random.SeedSequence([base, i, r]).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def _one_run(args):
    knot, params, i, r, perturb_eps = args
    from .seeds import perturb

    run_seed = _derived_seed(params.seed, i, r)
    if r > 0:
        rng = np.random.default_rng(run_seed)
        knot = perturb(knot, perturb_eps * thickness_kernel(knot.vertices), rng)
    params = TightenParams.from_dict({**params.to_dict(), "seed": run_seed})
    return RestartResult(i, r, run_seed, tighten(knot, params))


def run_restarts(seeds: list[PolygonalKnot], params: TightenParams | None = None,
                 restarts: int = 1, perturb_eps: float = 0.1,
                 workers: int = 1) -> list[RestartResult]:
    """Tighten every seed ``restarts`` times; restart 0 starts from the seed itself.

    Later restarts start from a copy perturbed by ``perturb_eps`` times the
    seed's thickness, which stays inside its tube. Results come back in
    (seed, restart) order whatever the number of workers.
    """
    from .knotid import determinant_of

    if not seeds:
        raise ValueError("no seed knots given")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if not 0.0 <= perturb_eps < 1.0:
        raise ValueError("perturb_eps must lie in [0, 1)")
    dets = {determinant_of(s) for s in seeds}
    if len(dets) > 1:
        raise MixedKnotTypes(f"seeds have different knot determinants: {sorted(dets)}")
    params = params or TightenParams()
    jobs = [(s, params, i, r, perturb_eps) for i, s in enumerate(seeds) for r in range(restarts)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_one_run, jobs))
    return [_one_run(j) for j in jobs]


def dedup(configs: list[NormalizedConfig], tol: float = 1e-2) -> list[NormalizedConfig]:
    """Greedy representatives, in order of ropelength, at quotient distance >= tol."""
    kept: list[NormalizedConfig] = []
    for c in sorted(configs, key=lambda c: c.ropelength):
        if all(quotient_distance(c, k) >= tol for k in kept):
            kept.append(c)
    return kept


def sample_minimizers(seeds: list[PolygonalKnot], params: TightenParams | None = None,
                      restarts: int = 1, dedup_tol: float = 1e-2, perturb_eps: float = 0.1,
                      workers: int = 1) -> list[NormalizedConfig]:
    """Distinct near-minimizers from all seeds and restarts, sorted by ropelength."""
    runs = run_restarts(seeds, params, restarts, perturb_eps, workers)
    return dedup([r.result.final for r in runs], dedup_tol)
