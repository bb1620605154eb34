import itertools
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_rotation
from knotpersist.geometry import PolygonalKnot
from knotpersist.normalize import normalize_scale
from knotpersist.optimize import tighten
from knotpersist.persist import (CertifiedPath, MergeScaleMatrix, PathFailure,
                                 PersistParams, TypeMismatch, UnionFind, betti_check, build_merge_tree,
                                 check_tree, connect, first_birth, merge_scales, merge_scan, rescale_path,
                                 route_plan, ultrametric_violations, validate_path, vr_filtration)
from knotpersist.seeds import perturb, regular_ngon, torus_knot

OPT32 = 2 * 32 * math.tan(math.pi / 32)


@pytest.fixture(scope="module")
def unknots():
    """Thickness-one 24-gons close to the regular one, all distinct."""
    rng = np.random.default_rng(11)
    base = regular_ngon(24)
    return [normalize_scale(base)] + [normalize_scale(perturb(base, 0.01, rng)) for _ in range(4)]


@pytest.fixture(scope="module")
def tight32():
    k = perturb(regular_ngon(32), 0.05, np.random.default_rng(4))
    return tighten(k).final


# ---------------------------------------------------------------- union-find

def test_union_find_labels_by_smallest_member():
    uf = UnionFind(6)
    assert uf.union(4, 5) == (4, 5)
    assert uf.union(5, 2) == (2, 4)
    assert uf.union(2, 4) is None
    assert uf.label(5) == 2
    assert uf.union(0, 5) == (0, 2)
    assert {uf.label(i) for i in (0, 2, 4, 5)} == {0}
    assert uf.label(1) == 1 and uf.label(3) == 3


# ---------------------------------------------------------------- connect

def test_connect_rigid_copy_gives_single_frame(rng):
    x = normalize_scale(perturb(regular_ngon(20), 0.1, rng))
    moved = normalize_scale(x.knot.transformed(random_rotation(rng), [5, 0, 1]).shifted(4))
    res = connect(x, moved, x.ropelength)
    assert res
    assert len(res.path.frames) == 1
    assert validate_path(res.path, x.ropelength)


def test_connect_regular_to_tightened_32gon(tight32):
    x = normalize_scale(regular_ngon(32))
    res = connect(x, tight32, 1.05 * OPT32)
    assert res and res.path.route == "linear"
    assert validate_path(res.path, 1.05 * OPT32)


def test_connect_mirror_trefoils_finds_no_certificate():
    a = normalize_scale(torus_knot(2, 3, 36))
    b = normalize_scale(torus_knot(2, 3, 36, mirror=True))
    res = connect(a, b, 2 * max(a.ropelength, b.ropelength))
    assert not res
    assert res.reason


def test_connect_errors(unknots):
    with pytest.raises(ValueError):
        connect(unknots[0], normalize_scale(regular_ngon(25)), 100.0)
    with pytest.raises(TypeMismatch):
        connect(normalize_scale(regular_ngon(36)), normalize_scale(torus_knot(2, 3, 36)), 100.0)


def test_connect_needs_both_births(unknots):
    x, y = unknots[0], unknots[1]
    res = connect(x, y, min(x.ropelength, y.ropelength) * 0.999)
    assert not res


def test_route_plan_is_prefix_closed():
    for k in range(1, 8):
        assert route_plan(k) == route_plan(k + 1)[:k]


# ---------------------------------------------------------------- rescale_path

def test_rescale_path_identity(unknots):
    p = rescale_path(unknots[0], unknots[0])
    assert len(p.frames) == 1
    assert p.scale == pytest.approx(unknots[0].ropelength, rel=1e-12)


def test_rescale_path_between_unknot_samples():
    a = tighten(perturb(regular_ngon(16), 0.1, np.random.default_rng(0))).final
    b = normalize_scale(perturb(regular_ngon(16), 0.3, np.random.default_rng(1)))
    p = rescale_path(a, b)
    assert validate_path(p)
    assert p.scale <= 3 * max(a.ropelength, b.ropelength)


def test_rescale_path_refuses_mirror_pair():
    a = normalize_scale(torus_knot(2, 3, 36))
    b = normalize_scale(torus_knot(2, 3, 36, mirror=True))
    with pytest.raises(PathFailure):
        rescale_path(a, b, PersistParams(max_frames=512))


# ---------------------------------------------------------------- validation

def test_validate_path_negative_controls(tight32):
    x = normalize_scale(regular_ngon(32))
    good = connect(x, tight32, 1.05 * OPT32).path
    assert validate_path(good)
    assert not validate_path(good, lam=OPT32 * 0.99)
    jump = CertifiedPath.from_frames([x.knot, PolygonalKnot(x.knot.vertices + 2.0)], 1)
    assert any("max_step" in m for m in validate_path(jump).problems)
    thin = CertifiedPath.from_frames([PolygonalKnot(x.knot.vertices * 0.5)], 1)
    assert not validate_path(thin)
    lie = CertifiedPath(good.frames, good.scale * 0.5, good.min_thickness, good.max_step, 1)
    assert not validate_path(lie)
    wrong_type = CertifiedPath(good.frames, good.scale, good.min_thickness, good.max_step, 3)
    assert not validate_path(wrong_type)


# ---------------------------------------------------------------- merge scan

def test_single_sample_scan(unknots):
    grid = np.linspace(6.3, 12.6, 65)
    tree = merge_scan([unknots[0]], grid)
    assert tree.merges == []
    for g in grid:
        assert tree.component_count(g) == (1 if g >= unknots[0].ropelength else 0)


def test_two_samples_merge_at_certified_grid_point(unknots):
    x, y = unknots[0], unknots[1]
    grid = np.linspace(6.3, 12.6, 65)
    tree = merge_scan([x, y], grid)
    assert len(tree.merges) == 1
    lam = tree.merges[0].scale
    assert connect(x, y, lam)
    below = [g for g in grid if g < lam and g >= max(x.ropelength, y.ropelength)]
    assert all(not connect(x, y, g) for g in below)
    k = list(grid).index(lam)
    assert tree.component_count(grid[k - 1]) == 2 or grid[k - 1] < y.ropelength
    assert tree.component_count(lam) == 1


def test_scan_errors(unknots):
    with pytest.raises(ValueError):
        merge_scan([], [1.0, 2.0])
    with pytest.raises(ValueError):
        merge_scan(unknots[:2], [3.0, 2.0])
    with pytest.raises(TypeMismatch):
        merge_scan([normalize_scale(regular_ngon(36)), normalize_scale(torus_knot(2, 3, 36))], [10.0, 100.0])


def test_scan_outputs_pass_tree_checks(unknots):
    grid = np.linspace(6.3, 12.6, 65)
    tree = merge_scan(unknots, grid)
    assert check_tree(tree) == []
    assert first_birth(tree) == min(s.ropelength for s in unknots)
    for e in tree.edges:
        assert validate_path(e.path, e.scale)
    msm = merge_scales(tree)
    assert ultrametric_violations(msm.mu) == []
    assert msm.nu_ideal == len(msm.components)
    assert betti_check(vr_filtration(msm)).ok


def test_knn_proposal_matches_exhaustive_on_small_sets(unknots):
    grid = np.linspace(6.3, 12.6, 65)
    full = merge_scan(unknots, grid)
    knn = merge_scan(unknots, grid, PersistParams(exhaustive_below=1, knn=2))
    # fewer candidate edges can only delay merges
    for g in grid:
        assert knn.component_count(g) >= full.component_count(g)


def test_more_attempts_never_raise_merge_scales():
    rng = np.random.default_rng(5)
    base = regular_ngon(16)
    samples = [normalize_scale(perturb(base, 0.15, rng)) for _ in range(4)]
    births = [s.ropelength for s in samples]
    grid = np.linspace(min(births), 1.6 * max(births), 40)
    mus = []
    for attempts in (1, 2, 4):
        tree = merge_scan(samples, grid, PersistParams(attempts=attempts))
        mu = np.full((4, 4), np.inf)
        for i, j in itertools.combinations(range(4), 2):
            for g in grid:
                comps = tree.components_at(g)
                if any(i in c and j in c for c in comps):
                    mu[i, j] = g
                    break
        mus.append(mu)
    assert np.all(mus[1] <= mus[0]) and np.all(mus[2] <= mus[1])


def test_concurrent_queries_on_completed_tree(unknots):
    grid = np.linspace(6.3, 12.6, 65)
    tree = merge_scan(unknots, grid)
    serial = [tree.components_at(g) for g in grid]
    with ThreadPoolExecutor(4) as pool:
        threaded = list(pool.map(tree.components_at, grid))
    assert threaded == serial


def test_first_birth_examples(tight32):
    tree = build_merge_tree([7.5], [], [7.0, 8.0])
    assert first_birth(tree) == 7.5
    grid = np.linspace(6.3, 12.6, 65)
    assert first_birth(merge_scan([tight32], grid)) == pytest.approx(OPT32, rel=1e-6)


# ---------------------------------------------------------------- synthetic histories

def brute_components(n, edges, scale):
    comp = list(range(n))
    for a, b, s in sorted(edges, key=lambda e: e[2]):
        if s <= scale:
            old, new = comp[b], comp[a]
            comp = [new if c == old else c for c in comp]
    return set(comp)


def brute_mu(n, births, edges, grid):
    """Merge scales by definition: first grid scale with i and j in one graph component."""
    mu = np.full((n, n), np.inf)
    for g in grid:
        alive = [i for i in range(n) if births[i] <= g]
        adj = {i: set() for i in alive}
        for a, b, s in edges:
            if s <= g:
                adj[a].add(b)
                adj[b].add(a)
        for i in alive:
            seen, stack = {i}, [i]
            while stack:
                u = stack.pop()
                for w in adj[u] - seen:
                    seen.add(w)
                    stack.append(w)
            for j in seen:
                if not np.isfinite(mu[i, j]):
                    mu[i, j] = g
    return mu


def project(msm, node_mu):
    """Node-level merge scales restricted to one representative per component."""
    reps = [c[0] for c in msm.components]
    out = node_mu[np.ix_(reps, reps)]
    np.fill_diagonal(out, msm.birth)
    return out


def test_all_three_node_histories():
    grid = (1.0, 2.0, 3.0)
    pairs = [(0, 1), (0, 2), (1, 2)]
    for choice in itertools.product([None, *grid], repeat=3):
        edges = [(a, b, s) for (a, b), s in zip(pairs, choice) if s is not None]
        tree = build_merge_tree([1.0, 1.0, 1.0], edges, grid)
        msm = merge_scales(tree, birth_tol=0.0)
        assert msm.size == len(brute_components(3, edges, 1.0))
        assert np.array_equal(msm.mu, project(msm, brute_mu(3, [1.0] * 3, edges, grid)))
        assert ultrametric_violations(msm.mu) == []
        assert check_tree(tree) == []


@st.composite
def histories(draw):
    m = draw(st.integers(3, 12))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    grid = np.cumsum(rng.uniform(0.1, 1.0, size=draw(st.integers(2, 20)))) + 5.0
    births = [float(grid[0])] * m
    edges = []
    for a, b in itertools.combinations(range(m), 2):
        if rng.random() < 0.4:
            edges.append((a, b, float(rng.choice(grid))))
    return births, edges, tuple(float(g) for g in grid)


@given(histories())
def test_synthetic_histories_are_ultrametric(h):
    births, edges, grid = h
    tree = build_merge_tree(births, edges, grid)
    msm = merge_scales(tree, 0.0)
    assert ultrametric_violations(msm.mu) == []
    assert msm.size == len(brute_components(len(births), edges, births[0]))
    assert np.array_equal(msm.mu, project(msm, brute_mu(len(births), births, edges, grid)))
    assert check_tree(tree) == []


def test_thousand_random_histories():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        m = int(rng.integers(3, 13))
        grid = tuple(float(x) for x in np.cumsum(rng.uniform(0.1, 1.0, size=int(rng.integers(2, 16)))) + 5.0)
        edges = [(a, b, float(rng.choice(grid))) for a, b in itertools.combinations(range(m), 2)
                 if rng.random() < 0.3]
        msm = merge_scales(build_merge_tree([grid[0]] * m, edges, grid), 0.0)
        mu = msm.mu
        assert np.all(mu[:, None, :] <= np.maximum(mu[:, :, None], mu[None, :, :]))


def test_staggered_births_and_ideal_layer():
    grid = (10.0, 10.05, 11.0, 12.0)
    tree = build_merge_tree([10.0, 10.05, 11.0], [(0, 2, 11.0), (1, 2, 12.0)], grid)
    msm = merge_scales(tree, birth_tol=1e-2)
    assert msm.components == [(0,), (1,)]
    assert msm.mu[0, 1] == 12.0
    assert check_tree(tree) == []
    assert tree.component_count(10.0 - 1e-9) == 0


def test_unmerged_pairs_are_flagged():
    tree = build_merge_tree([1.0, 1.0], [], (1.0, 2.0))
    msm = merge_scales(tree)
    assert msm.flagged[0, 1] and not msm.flagged[0, 0]
    assert msm.ceiling == 2.0


def test_build_merge_tree_rejects_bad_edges():
    with pytest.raises(ValueError):
        build_merge_tree([1.0, 2.0], [(0, 1, 1.5)], (1.0, 2.0))
    with pytest.raises(ValueError):
        build_merge_tree([1.0, 2.0], [(0, 1, 1.0)], (1.0, 2.0))
    with pytest.raises(ValueError):
        build_merge_tree([1.0], [], (2.0, 1.0))


# ---------------------------------------------------------------- filtrations

def fig3():
    """Three components: 0 and 1 merge at 2.0, then 2 joins at 3.0."""
    tree = build_merge_tree([1.0, 1.0, 1.0], [(0, 1, 2.0), (1, 2, 3.0)], (1.0, 2.0, 3.0))
    return vr_filtration(merge_scales(tree, 0.0))


def test_single_vertex_filtration():
    filt = vr_filtration(merge_scales(build_merge_tree([4.0], [], (4.0, 5.0, 6.0))))
    for g in (4.0, 5.0, 6.0):
        assert filt.partition_at(g) == [(0,)]
    assert filt.simplices() == [(4.0, (0,))]
    assert np.array_equal(merge_scales(build_merge_tree([4.0], [], (4.0,))).d_merge, [[0.0]])


def test_two_vertex_filtration():
    b = 5.0
    mu = np.array([[b, b + 1], [b + 1, b]])
    filt = vr_filtration(MergeScaleMatrix([(0,), (1,)], mu, b, math.inf))
    assert filt.partition_at(b + 0.5) == [(0,), (1,)]
    assert filt.partition_at(b + 1) == [(0, 1)]
    assert filt.simplex_threshold((0, 1)) == b + 1


def test_fig3_filtration():
    filt = fig3()
    assert filt.partition_at(1.0) == [(0,), (1,), (2,)]
    assert filt.partition_at(2.0) == [(0, 1), (2,)]
    assert filt.partition_at(3.0) == [(0, 1, 2)]
    assert filt.simplex_threshold((0, 1, 2)) == 3.0
    report = betti_check(filt)
    assert [s for s, ok, _ in report.per_scale] == [1.0, 2.0, 3.0]
    assert report.ok


def test_betti_check_catches_non_clique():
    filt = fig3()
    filt.mu[0, 2] = filt.mu[2, 0] = math.inf
    report = betti_check(filt)
    assert not report.ok
    (scale, witness), = report.failures()
    assert scale == 3.0
    i, j, k = witness
    assert filt.mu[i, j] <= scale and filt.mu[j, k] <= scale and filt.mu[i, k] > scale


@given(histories())
def test_thresholds_match_definition(h):
    births, edges, grid = h
    filt = vr_filtration(merge_scales(build_merge_tree(births, edges, grid), 0.0))
    assert betti_check(filt).ok
    m = filt.size
    for k in range(1, min(5, m) + 1):
        for sigma in itertools.islice(itertools.combinations(range(m), k), 40):
            assert filt.definitional_threshold(sigma) == filt.simplex_threshold(sigma)


@given(histories())
def test_filtration_is_monotone(h):
    births, edges, grid = h
    filt = vr_filtration(merge_scales(build_merge_tree(births, edges, grid), 0.0))
    prev = None
    for lam in filt.scales:
        parts = filt.partition_at(lam)
        if prev is not None:
            # every earlier class sits inside one later class
            assert all(any(set(p) <= set(q) for q in parts) for p in prev)
        prev = parts


def test_d_merge_bounds_bracket_the_grid_step():
    tree = build_merge_tree([1.0] * 3, [(0, 1, 1.0), (1, 2, 3.0)], (1.0, 2.0, 3.0))
    msm = merge_scales(tree, 0.0)
    lo, hi = msm.d_merge_bounds
    # 0 and 1 are one component at birth; the remaining pair merged in (2, 3]
    assert msm.size == 2
    assert hi[0, 1] == 2.0 and lo[0, 1] == 1.0
    tree = build_merge_tree([1.0] * 2, [(0, 1, 2.0)], (1.0, 2.0))
    lo, hi = merge_scales(tree, 0.0).d_merge_bounds
    assert lo[0, 1] == 0.0 and hi[0, 1] == 1.0
    lo, hi = merge_scales(build_merge_tree([1.0] * 2, [], (1.0, 2.0)), 0.0).d_merge_bounds
    assert math.isinf(lo[0, 1]) and math.isinf(hi[0, 1])
