import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm
from scipy.stats import poisson

from dynrc.coupling import (CoupledState, CouplingConfig, TorusMap, _mirror, _poisson_parity, case_b_delta,
                            coalesced, event_B, event_B_scan, fully_matched, recouple, run_three_phase,
                            srwm_check, srwm_rate_formula)
from dynrc.event_stream import EventSource, StreamSeed, UniformStream
from dynrc.random_cluster import RCParams
from dynrc.star_process import CLOSED, STAR, StarConfig
from dynrc.tessellation import BoxIndex, ScaleParams, derive_scale_params
from dynrc.torus import TorusSpec, torus

S52 = TorusSpec(5, 2)
P = RCParams(0.3, 2.0, 1.0)
maps = st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(-1, 1), st.integers(0, 4))


def _map(t, m):
    return TorusMap(t, m[:2], m[2], m[3])


@given(maps)
def test_torus_map_is_automorphism(m):
    t = torus(S52)
    phi = _map(t, m)
    assert sorted(phi.v) == list(range(t.nv)) and sorted(phi.e) == list(range(t.ne))
    for e in range(t.ne):
        a, b = t.ends[e]
        assert set(t.ends[phi.e[e]]) == {phi.v[a], phi.v[b]}
    for x in range(t.nv):
        for k in range(4):
            assert t.nbr[phi.v[x]][phi.dirs[k]] == phi.v[t.nbr[x][k]]


def _random_star(spec, rng, walker):
    t = torus(spec)
    state = [rng.choice([0, 1, STAR, STAR]) for _ in range(t.ne)]
    return StarConfig(spec, P, walker, state=state, seed=StreamSeed(rng.randrange(1 << 30)))


@given(st.integers(0, 10 ** 6))
def test_event_B_matches_scan(seed):
    rng = random.Random(seed)
    spec = TorusSpec(12, 1)
    sp = ScaleParams(12, 1, 1.0, 2, 48, 0.5, 0, 2.0, 1.0)
    a, b = _random_star(spec, rng, 0), _random_star(spec, rng, 6)
    if rng.random() < 0.5:
        for sc in (a, b):
            for e in range(sc.t.ne):
                sc.s[e] = CLOSED if e in sc.t.inc[sc.walker] else STAR
                sc.mark[e] = 0.5 if sc.s[e] == STAR else None
            if rng.random() < 0.5:
                sc.s[rng.randrange(sc.t.ne)] = CLOSED
    cs = CoupledState.start(a, b)
    assert event_B(cs, sp) == event_B_scan(cs, sp)


def _mirrored_pair(rng, m):
    a = _random_star(S52, rng, (0, 0))
    t = a.t
    phi = _map(t, m)
    b = StarConfig(S52, P, t.coords[phi.v[a.walker]], state=[0] * t.ne, seed=StreamSeed(7))
    for f in range(t.ne):
        b.s[phi.e[f]] = a.s[f]
        b.mark[phi.e[f]] = None
    cs = CoupledState(a, b, t.offset(a.walker, b.walker), phi)
    cs.aux = UniformStream(EventSource(StreamSeed(99), 1.0, 4), "aux")
    return cs, phi


@given(st.integers(0, 10 ** 6), maps)
def test_recouple_pairs_marks(seed, m):
    cs, phi = _mirrored_pair(random.Random(seed), m)
    recouple(cs, phi)
    for f in range(cs.first.t.ne):
        if cs.first.s[f] == STAR:
            assert cs.first.mark[f] is not None and cs.first.mark[f] == cs.second.mark[phi.e[f]]
    assert fully_matched(cs)


@given(st.integers(0, 10 ** 6), maps)
def test_identity_coupling_stays_matched(seed, m):
    cs, phi = _mirrored_pair(random.Random(seed), m)
    recouple(cs, phi)
    src = EventSource(StreamSeed(seed), 1.0, 4)
    _mirror(cs, src, 0.0, 4.0, 0.0)
    assert fully_matched(cs)
    assert coalesced(cs) == phi.is_identity


@pytest.mark.parametrize("mu,d,c", [(1.0, 1, 0.25), (0.1, 2, 1.0), (3.0, 1, 2.0)])
def test_case_b_delta_two_state_chain(mu, d, c):
    r = 1 / (2 * d)
    Q = np.array([[-r, r], [r, -r]])
    assert math.isclose(case_b_delta(mu, d, c), expm(Q * c / mu)[0, 0], rel_tol=1e-12)


@pytest.mark.parametrize("lam,odd", [(0.3, 0), (0.3, 1), (4.0, 1)])
def test_poisson_parity(lam, odd):
    N = 20000
    draws = [_poisson_parity(lam, odd, (j + 0.5) / N) for j in range(N)]
    assert all(k % 2 == odd for k in draws)
    ks = np.arange(0, 40)
    pm = np.where(ks % 2 == odd, poisson.pmf(ks, lam), 0)
    pm /= pm.sum()
    emp = np.bincount(draws, minlength=40)[:40] / N
    assert np.abs(emp - pm).max() < 2e-4


def test_rate_formula_range():
    for p in (1e-2, 1e-3):
        pr = RCParams(p, 2.0, 1.0)
        r = srwm_rate_formula(pr, derive_scale_params(pr, 60, overrides=dict(k_max_cap=0)), 0.25)
        assert 0 < r < 1


def test_srwm_outcomes_are_consistent():
    pr = RCParams(0.02, 2.0, 1.0)
    spec = TorusSpec(12, 1)
    sp = derive_scale_params(pr, 12, overrides=dict(ell=3, k_max_cap=0, t1_mu=8.0))
    t = torus(spec)
    hits = 0
    for r in range(400):
        src = EventSource(StreamSeed(5, r), 1.0)
        out = srwm_check(src, spec, sp, pr, BoxIndex(1, (1,), 1), 4, c_i1=0.25)
        if not out.occurred:
            assert out.reason
            continue
        hits += 1
        assert out.edge in t.inc[4] and out.other == t.other_end(out.edge, 4)
        a0 = sp.t1
        assert a0 <= out.zeta <= out.ends[0] - 0.25
        opening = [ev for ev in src.edge_events(out.edge, a0, out.ends[0]) if ev.time == out.zeta]
        assert opening and opening[0].u_star < pr.p_star and opening[0].u < pr.star_open_prob
    assert hits > 0


def test_three_phase_deterministic():
    pr = RCParams(0.05, 2.0, 0.1)
    spec = TorusSpec(8, 1)
    sp = derive_scale_params(pr, 8, overrides=dict(ell=2, k_max_cap=0, t1_mu=4.0))
    cfg = CouplingConfig(c2=1000, c_i1=0.25, max_restarts=20)

    def run():
        a = StarConfig(spec, pr, (0,), state=[CLOSED] * 8, seed=StreamSeed(3, 0))
        b = StarConfig(spec, pr, (4,), state=[CLOSED] * 8, seed=StreamSeed(3, 1))
        return run_three_phase(a, b, StreamSeed(3), sp, pr, cfg)

    r1, r2 = run(), run()
    assert r1 == r2
    assert not r1.censored and r1.coalescence_time > 0 and r1.f1
