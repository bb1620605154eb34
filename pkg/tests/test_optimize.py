import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knotpersist.geometry import PolygonalKnot, is_embedded, ropelength, thickness
from knotpersist.knotid import determinant_of
from knotpersist.normalize import normalize_scale, quotient_distance
from knotpersist.optimize import (MixedKnotTypes, OptimizationError, TightenParams, dedup, run_restarts,
                                  sample_minimizers, tighten, tube_step)
from knotpersist.seeds import perturb, regular_ngon, torus_knot

FAST = TightenParams(max_iters=40, polish_iters=200, patience=10)


def ngon_optimum(n):
    return 2 * n * math.tan(math.pi / n)


def test_params_validation_and_round_trip():
    p = TightenParams(seed=7, beta=12.0)
    assert TightenParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        TightenParams.from_dict({"bogus": 1})
    for bad in ({"step_decay": 1.0}, {"max_iters": -1}, {"step_init": 0.0}, {"seed": -1},
                {"anneal_temp": -1.0}, {"widths": ()}):
        with pytest.raises(ValueError):
            TightenParams(**bad)


def test_regular_polygon_is_a_local_minimum():
    """Independent local search: no small random move lowers the regular 32-gon's ropelength."""
    rng = np.random.default_rng(0)
    v = regular_ngon(32).vertices
    base = ropelength(PolygonalKnot(v))
    assert base == pytest.approx(ngon_optimum(32), rel=1e-12)
    for _ in range(300):
        cand = v + rng.normal(size=v.shape) * 10 ** rng.uniform(-6, -2)
        assert ropelength(PolygonalKnot(cand)) >= base * (1 - 1e-12)


def test_regular_64gon_converges_quickly():
    r = tighten(regular_ngon(64))
    assert r.converged
    assert r.iterations <= 100
    assert r.final.ropelength <= ngon_optimum(64) + 1e-6


@pytest.mark.parametrize("seed", [0, 1])
def test_perturbed_32gon_reaches_discrete_optimum(seed):
    k = perturb(regular_ngon(32), 0.1, np.random.default_rng(seed))
    r = tighten(k, TightenParams(seed=seed))
    assert r.final.ropelength <= 1.02 * ngon_optimum(32)
    assert r.final.ropelength >= ngon_optimum(32) * (1 - 1e-9)


def test_trefoil_respects_lower_bound():
    r = tighten(torus_knot(2, 3, 64))
    assert 4 * math.pi <= r.final.ropelength <= 35.0
    assert r.determinant == determinant_of(r.final.knot) == 3


def test_unknot_values_decrease_toward_two_pi():
    values = [tighten(regular_ngon(n), FAST).final.ropelength for n in (16, 32, 64, 96)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(v > 2 * math.pi for v in values)
    for n, v in zip((16, 32, 64, 96), values):
        assert v == pytest.approx(ngon_optimum(n), rel=1e-6)


def test_result_invariants():
    seed = perturb(torus_knot(2, 3, 36), 0.1, np.random.default_rng(3))
    r = tighten(seed, FAST)
    rls = [row.ropelength for row in r.trace]
    assert all(b <= a for a, b in zip(rls, rls[1:]))
    assert r.iterations == len(r.trace)
    assert abs(thickness(r.final.knot).thickness - 1.0) <= 1e-9
    assert is_embedded(r.final.knot)
    assert r.final.ropelength <= normalize_scale(seed).ropelength + 1e-9
    assert determinant_of(r.final.knot) == determinant_of(seed)
    assert {row.phase for row in r.trace} <= {"anneal", "descent", "polish"}


def test_determinism():
    k = perturb(regular_ngon(24), 0.1, np.random.default_rng(1))
    a = tighten(k, FAST)
    b = tighten(k, FAST)
    assert a.trace_csv() == b.trace_csv()
    assert np.array_equal(a.final.knot.vertices, b.final.knot.vertices)
    c = tighten(k, TightenParams(**{**FAST.to_dict(), "seed": 99}))
    assert c.trace_csv() != a.trace_csv()


def test_trace_csv_format():
    r = tighten(regular_ngon(12), FAST)
    lines = r.trace_csv().splitlines()
    assert lines[0] == "iter,ropelength,thickness,length,phase"
    first = lines[1].split(",")
    assert float(first[1]) == r.trace[0].ropelength


def test_non_embedded_seed_is_rejected():
    crossing = PolygonalKnot([[0, 0, 0], [2, 2, 0], [2, 0, 0], [0, 2, 0]])
    with pytest.raises(OptimizationError):
        tighten(crossing)


def test_tube_step():
    v = regular_ngon(10).vertices
    assert tube_step(v, v + 0.01)
    # a dilation is an isotopy and bisection certifies it
    assert tube_step(v, v * 3.0)
    # reflecting a trefoil must pass through a crossing change
    t = torus_knot(2, 3, 36).vertices
    assert not tube_step(t, t * [1.0, 1.0, -1.0])


@settings(max_examples=5)
@given(st.integers(0, 2**32 - 1), st.integers(8, 20))
def test_tightening_never_worsens(seed, n):
    rng = np.random.default_rng(seed)
    k = perturb(regular_ngon(n), 0.2, rng)
    r = tighten(k, TightenParams(max_iters=10, polish_iters=50, seed=seed))
    assert r.final.ropelength <= normalize_scale(k).ropelength + 1e-9
    assert determinant_of(r.final.knot) == 1
    assert abs(thickness(r.final.knot).thickness - 1.0) <= 1e-9


def test_sample_minimizers_singleton_and_mixed_types():
    out = sample_minimizers([regular_ngon(12)], FAST, restarts=1)
    assert len(out) == 1
    with pytest.raises(MixedKnotTypes):
        sample_minimizers([regular_ngon(36), torus_knot(2, 3, 36)], FAST)


def test_sample_minimizers_unknot_single_class():
    seeds = [perturb(regular_ngon(20), 0.1, np.random.default_rng(s)) for s in range(3)]
    out = sample_minimizers(seeds, TightenParams(), restarts=2)
    assert len(out) == 1


def test_mirror_trefoils_stay_distinct():
    out = sample_minimizers([torus_knot(2, 3, 36), torus_knot(2, 3, 36, mirror=True)], FAST)
    assert len(out) == 2
    assert quotient_distance(out[0], out[1]) > 1e-2


def test_restarts_are_ordered_and_worker_independent():
    seeds = [regular_ngon(10), perturb(regular_ngon(10), 0.1, np.random.default_rng(2))]
    p = TightenParams(max_iters=5, polish_iters=20)
    serial = run_restarts(seeds, p, restarts=2)
    parallel = run_restarts(seeds, p, restarts=2, workers=2)
    assert [(r.seed_index, r.restart) for r in serial] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    for a, b in zip(serial, parallel):
        assert a.run_seed == b.run_seed
        assert a.result.trace_csv() == b.result.trace_csv()


def test_dedup_keeps_lowest_representative():
    a = normalize_scale(regular_ngon(12))
    b = normalize_scale(perturb(a.knot, 1e-4, np.random.default_rng(0)))
    c = normalize_scale(perturb(regular_ngon(12), 0.3, np.random.default_rng(1)))
    kept = dedup([c, b, a], 1e-2)
    assert kept[0].ropelength == min(a.ropelength, b.ropelength)
    assert len(kept) == 2
