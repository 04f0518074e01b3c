import itertools
import math

import pytest
from hypothesis import given, strategies as st

from dynrc.dynamics import Trajectory
from dynrc.random_cluster import RCParams
from dynrc.tessellation import (BoxIndex, Classification, ConfigError, DependencyError, Interval, ScaleParams,
                                box_gap, box_region, check_feasible, derive_scale_params, exits_via_time_boundary,
                                non_intersecting, region_vertices, regions_intersect, time_core, time_full,
                                validate_largem)
from dynrc.torus import TorusSpec, dist

P = RCParams(1e-3, 2.0, 1.0)
SP = ScaleParams(n=24, d=1, mu=1.0, ell=4, m=48, gamma=0.5, k_max=0, t1_mu=12.0, bar_t1_mu=6.0)
SP2 = ScaleParams(n=32, d=1, mu=1.0, ell=2, m=4, gamma=0.5, k_max=2, t1_mu=4.0, bar_t1_mu=1.0)


def test_derive_defaults():
    sp = derive_scale_params(P, 20)
    assert sp.ell == 10 and sp.m == 48 and math.isclose(sp.t1, math.sqrt(10))
    assert math.isclose(sp.bar_t1, 0.01 * math.ceil(math.log(10) ** 2 / 0.01 - 1e-9))
    assert derive_scale_params(RCParams(1e-3, 2.0, 0.5), 20).t1 == 2 * sp.t1


@pytest.mark.parametrize("ov", [dict(foo=1), dict(ell=1), dict(ell=7), dict(gamma=0), dict(m=0),
                                dict(k_max_cap=-1), dict(t1_mu=-1.0)])
def test_derive_rejects(ov):
    with pytest.raises(ConfigError):
        derive_scale_params(P, 20, overrides=ov)


def test_scales():
    assert SP2.ell_k(2) == 8 and SP2.ratio(2) == 4
    assert SP2.t_k(2) == 16.0 and SP2.bar_t_k(2) == 6 * 16 / 4
    assert SP2.n_boxes(1) == 16 and SP2.n_boxes(2) == 4
    assert time_core(SP, 1, 2) == Interval(24.0, 36.0)
    assert time_full(SP, 1, 2) == Interval(18.0, 36.0, True)
    assert time_full(SP2, 2, 1) == Interval(0.0, 48.0)


def test_largem():
    assert validate_largem(ScaleParams(10 ** 6, 1, 1.0, 2, 48, 0.5, 3, 4.0, 1.0)) == []
    assert validate_largem(SP2)


def test_interval_relations():
    a, b = Interval(0, 1), Interval(1, 2)
    assert not a.hits(b) and Interval(0, 1, True).hits(b)
    assert Interval(0, 2).contains(Interval(0, 1, True)) and not Interval(0, 1).contains(Interval(0, 1, True))


def _brute_gap(sp, b0, b1):
    r0, r1 = box_region(sp, b0), box_region(sp, b1)
    spec = TorusSpec(sp.n, sp.d)
    g = min(dist(spec, v, w) for v in region_vertices(r0, sp.n) for w in region_vertices(r1, sp.n))
    return g + r0.time.gap(r1.time)


boxes = st.builds(lambda i, t: BoxIndex(1, (i,), t), st.integers(0, 5), st.integers(0, 4))


@given(boxes, boxes)
def test_box_gap_matches_brute_force(b0, b1):
    assert box_gap(SP, b0, b1) == _brute_gap(SP, b0, b1)
    assert non_intersecting(SP, b0, b1) == non_intersecting(SP, b1, b0)


@given(boxes, boxes, st.sampled_from(["core", "full", "s_core", "inn"]))
def test_regions_intersect_matches_vertex_sets(b0, b1, kind):
    r0, r1 = box_region(SP, b0, kind), box_region(SP, b1, kind)
    both = bool(region_vertices(r0, SP.n) & region_vertices(r1, SP.n)) and r0.time.hits(r1.time)
    assert regions_intersect(r0, r1, SP.n) == both


def test_forced_scale2():
    sub = list(Classification(None, TorusSpec(32, 1), P, SP2, forced_default=True).sub_boxes(2, (1,), 1))
    near = next((a, b) for a, b in itertools.combinations(sub, 2) if not non_intersecting(SP2, a, b))
    far = next((a, b) for a, b in itertools.combinations(sub, 2) if non_intersecting(SP2, a, b))
    for pair, expect in [(near, True), (far, False)]:
        forced = {(b.i, b.tau): False for b in pair}
        cls = Classification(None, TorusSpec(32, 1), P, SP2, forced=forced, forced_default=True)
        assert cls.good(2, (1,), 1) is expect
    cls = Classification(None, TorusSpec(32, 1), P, SP2, forced_default=True)
    assert cls.is_k_great((3,), 2, 2)
    assert all(r[-1] == "good" for r in cls.export_rows())


def test_no_stream_and_horizon():
    cls = Classification(None, TorusSpec(24, 1), P, SP)
    with pytest.raises(DependencyError):
        cls.scale1((0,), 0)
    from dynrc.event_stream import EventSource, StreamSeed
    cls = Classification(EventSource(StreamSeed(1), 1.0), TorusSpec(24, 1), P, SP, horizon=12.0)
    cls.scale1((0,), 0)
    with pytest.raises(DependencyError):
        cls.scale1((0,), 1)
    with pytest.raises(ConfigError):
        Classification(EventSource(StreamSeed(1), 2.0), TorusSpec(24, 1), P, SP)


def _fast_path():
    return Trajectory((0,), 0.0, [(12.1, (0,), (1,)), (12.2, (1,), (2,))], end=30.0)


def test_feasibility_forced():
    spec = TorusSpec(24, 1)
    good = Classification(None, spec, P, SP, forced_default=True)
    ok, v = check_feasible(_fast_path(), good, SP)
    assert not ok and v.tau == 1 and v.s2 == 12.2
    bad = Classification(None, spec, P, SP, forced_default=False)
    assert check_feasible(_fast_path(), bad, SP) == (True, None)
    still = Trajectory((0,), 0.0, [], end=30.0)
    assert check_feasible(still, good, SP) == (True, None)


def test_exits_via_time_boundary():
    cls = Classification(None, TorusSpec(24, 1), P, SP, forced_default=True)
    assert exits_via_time_boundary(_fast_path(), cls, SP, (0,), 1)
    far = Trajectory((0,), 0.0, [(13.0 + 0.1 * j, (-j % 24,), (-(j + 1) % 24,)) for j in range(6)], end=30.0)
    assert not exits_via_time_boundary(far, cls, SP, (0,), 1)
