"""Acceptance criteria A1-A10; each test prints one PASS/FAIL line."""
import math
import random

import numpy as np
import pytest
from scipy import stats

from dynrc.cli import main
from dynrc.coupling import CouplingConfig
from dynrc.dynamics import evolve
from dynrc.estimators import (SweepConfig, exact_witness, scaling_sweep, sprinkle_eps, srwm_frequency,
                              tv_lower_witness)
from dynrc.event_stream import EventSource, StreamSeed, UniformStream, UpdateEvent
from dynrc.exact_oracle import (build_generator, detailed_balance_error, distance_to_origin, distribution_at,
                                point_mass, product_stationary, spectral_quantities, stationary_distribution, tv)
from dynrc.random_cluster import (DOWN, UP, EdgeConfig, RCParams, SprinkleTriple, coupled_sprinkle_step,
                                  ever_open_cluster_scan, exact_rc_distribution, glauber_apply, interval_cluster,
                                  is_cut_edge, sample_stationary)
from dynrc.star_process import StarConfig
from dynrc.tessellation import Classification, check_feasible, derive_scale_params, exits_via_time_boundary
from dynrc.torus import TorusSpec, torus

PQ = [(0.3, 2.0), (0.5, 0.5), (0.2, 1.0)]


@pytest.fixture
def report(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print(f"\n{tag} {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


def test_a1_exact_stationarity(report):
    worst_pi = worst_db = 0.0
    for n in (3, 4):
        for p, q in PQ:
            spec, params = TorusSpec(n, 1), RCParams(p, q, 1.0)
            G = build_generator(spec, params)
            pi = stationary_distribution(G)
            worst_pi = max(worst_pi, float(np.abs(pi - product_stationary(spec, params)).max()))
            worst_db = max(worst_db, detailed_balance_error(G, pi))
    ok = worst_pi < 1e-10 and worst_db < 1e-12
    assert report("A1", ok, f"max|pi - pi x nu|={worst_pi:.3g} detailed balance={worst_db:.3g}")


def test_a2_star_process_faithful(report):
    spec, params = TorusSpec(3, 1), RCParams(0.3, 2.0, 1.0)
    G = build_generator(spec, params)
    N = 10 ** 6
    times = (0.5 / params.mu, 2.0 / params.mu)
    counts = {t: np.zeros(G.space.size) for t in times}
    for r in range(N):
        rs = StreamSeed(7, r)
        src = EventSource(rs, params.mu, 2)
        sc = StarConfig(spec, params, 0, draws=UniformStream(src, "resolve"))
        _, traj = evolve(sc, rs, params, times[-1], snapshot_times=times, source=src, inplace=True)
        for t, (w, s, _) in traj.snapshots.items():
            counts[t][G.space.index(w, sum(1 << e for e, x in enumerate(s) if x == 1))] += 1
    dists = {t: tv(counts[t] / N, distribution_at(G, point_mass(G, 0), t)) for t in times}
    ok = all(x < 0.01 for x in dists.values())
    assert report("A2", ok, " ".join(f"TV(t={t})={x:.4f}" for t, x in dists.items()) + f" replicas={N}")


def test_a3_glauber_sampler(report):
    spec, params = TorusSpec(3, 1), RCParams(0.3, 2.0, 1.0)
    N = 10 ** 5
    counts = np.zeros(8)
    for r in range(N):
        counts[sample_stationary(StreamSeed(13, r), spec, params, 20).index()] += 1
    d = tv(counts / N, exact_rc_distribution(spec, params))
    assert report("A3", d < 0.02, f"TV={d:.4f} samples={N}")


def _components(t, s):
    parent = list(range(t.nv))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for e, x in enumerate(s):
        if x:
            a, b = find(t.ends[e][0]), find(t.ends[e][1])
            if a != b:
                parent[a] = b
    return len({find(v) for v in range(t.nv)})


def test_a4_cut_edge_and_cluster_oracles(report):
    spec = TorusSpec(4, 2)
    t = torus(spec)
    params = RCParams(0.3, 2.0, 1.0)
    rng = random.Random(4)
    cut_bad = cl_bad = 0
    N = 10 ** 4
    for _ in range(N):
        s = [int(rng.random() < rng.random()) for _ in range(t.ne)]
        e = rng.randrange(t.ne)
        lo, hi = list(s), list(s)
        lo[e], hi[e] = 0, 1
        cut_bad += is_cut_edge(EdgeConfig(spec, s), e) != (_components(t, lo) != _components(t, hi))
        evs = sorted(UpdateEvent(rng.uniform(0, 5), rng.randrange(t.ne), rng.random(), rng.random())
                     for _ in range(rng.randrange(60)))
        a = rng.uniform(0, 2)
        window = (a, a + rng.uniform(0, 3))
        base = EdgeConfig(spec, s)
        for ev in evs:
            if ev.time < a:
                base = glauber_apply(base, ev.edge, ev.u, params)
        rest = [ev for ev in evs if ev.time >= a]
        x = rng.randrange(t.nv)
        fast = {t.vertex_index(v) for v in interval_cluster(base, rest, x, window, params).vertices}
        slow = {t.vertex_index(v) for v in ever_open_cluster_scan(base, rest, x, window, params)}
        cl_bad += fast != slow
    ok = cut_bad == 0 and cl_bad == 0
    assert report("A4", ok, f"cut-edge mismatches={cut_bad} cluster mismatches={cl_bad} configs={N}")


def test_a5_sprinkling_invariant(report):
    spec = TorusSpec(4, 2)
    ne = spec.num_edges
    p, p2, q = 0.2, 0.5, 2.0
    eps = 0.9 * sprinkle_eps(p, p2, q)
    g = np.random.default_rng(5)
    bad = steps = 0
    for direction in (UP, DOWN):
        tr = SprinkleTriple.start(spec, p, p2, q, eps, direction)
        lo, up, z = tr.lower.s, tr.upper.s, tr.sprinkle
        for _ in range(10):
            es = g.integers(0, ne, 50_000).tolist()
            us, vs = g.random(50_000).tolist(), g.random(50_000).tolist()
            for e, u, v in zip(es, us, vs):
                try:
                    coupled_sprinkle_step(tr, e, u, v)
                except AssertionError:
                    bad += 1
                if direction == UP:
                    bad += (lo[e] | z[e]) > up[e]
                else:
                    bad += lo[e] > (up[e] & (1 - z[e]))
                steps += 1
        bad += not tr.invariant_holds()
    assert report("A5", bad == 0, f"violations={bad} steps={steps} eps={eps:.4g}")


A6_SETTINGS = [
    # (n, p, mu, scale overrides): a fast environment, then a slow one where the walker moves inside good boxes
    (24, 1e-3, 1.0, dict(ell=4, t1_mu=12, bar_t1_mu=6, gamma=0.5, k_max_cap=0)),
    (48, 3e-3, 0.02, dict(ell=12, t1_mu=24, bar_t1_mu=12, gamma=0.5, k_max_cap=0)),
]


def test_a6_feasible_paths_and_time_exits(report):
    N = 1000
    ok, parts = True, []
    for n, p, mu, ov in A6_SETTINGS:
        params = RCParams(p, 2.0, mu)
        spec = TorusSpec(n, 1)
        sp = derive_scale_params(params, n, 1, ov)
        T = 4 * sp.t1
        infeasible = escapes = good_occupied = jumps = inside = 0
        for r in range(N):
            rs = StreamSeed(21, r)
            src = EventSource(rs, params.mu, 2)
            sc = StarConfig(spec, params, 0, draws=UniformStream(src, "resolve"))
            _, traj = evolve(sc, rs, params, T, source=src, inplace=True)
            jumps += len(traj.jumps)
            cls = Classification(src, spec, params, sp, horizon=T)
            infeasible += not check_feasible(traj, cls, sp)[0]
            for tau in (1, 2):
                s = tau * sp.t1
                i = (traj.position_at(s)[0] // sp.ell,)
                if cls.good(1, i, tau):
                    good_occupied += 1
                    inside += sum(1 for t, _, _ in traj.jumps if s <= t < s + sp.t1)
                    escapes += not exits_via_time_boundary(traj, cls, sp, i, tau, s)
        ok &= infeasible == 0 and escapes == 0 and good_occupied > 0
        parts.append(f"[n={n} ell={sp.ell} p={p:g} mu={mu:g}] infeasible={infeasible} good occupied={good_occupied} "
                     f"escapes={escapes} jumps={jumps} jumps in good boxes={inside}")
    assert report("A6", ok, f"runs={N} per setting " + " ".join(parts))


def test_a7_srwm_exponent(report):
    ps = (1e-2, 1e-3, 1e-4)
    trials = (800_000, 4_000_000, 16_000_000)
    res = [srwm_frequency(RCParams(p, 2.0, 1.0), N, seed=5, c_i1=0.25) for p, N in zip(ps, trials)]
    if any(r.successes == 0 for r in res):
        assert report("A7", False, "no SRWM observed at some p"), res
    x = np.log(ps)
    y = np.log([r.estimate for r in res])
    fit = stats.linregress(x, y)
    ok = abs(fit.slope - 5 / 6) <= 0.10
    detail = " ".join(f"P({p:g})={r.estimate:.3g}+-{r.stderr:.2g}" for p, r in zip(ps, res))
    assert report("A7", ok, f"slope={fit.slope:.3f} target=0.833+-0.10 {detail}")


def test_a8_mixing_collapse(report):
    grid = [(8, 0.1, 0.05, 2.0), (8, 0.025, 0.05, 2.0), (16, 0.1, 0.05, 2.0), (16, 0.025, 0.05, 2.0)]
    cfg = SweepConfig(grid, replicas=60, seed=11, overrides=dict(ell=2, k_max_cap=0, t1_mu=4.0),
                      coupling=CouplingConfig(c2=1000, c_i1=0.25, max_restarts=20))
    res = scaling_sweep(cfg)
    cv = res.coefficient_of_variation()
    med = {(c.n, c.mu): c.estimate for c in res.cells}
    ratios = {"n 8->16 mu=0.1": med[16, 0.1] / med[8, 0.1], "n 8->16 mu=0.025": med[16, 0.025] / med[8, 0.025],
              "mu 0.1->0.025 n=8": med[8, 0.025] / med[8, 0.1], "mu 0.1->0.025 n=16": med[16, 0.025] / med[16, 0.1]}
    ok = cv < 0.5 and all(2.5 <= r <= 6 for r in ratios.values())
    detail = " ".join(f"[{k}]={v:.2f}" for k, v in ratios.items())
    cens = sum(c.censored for c in res.cells)
    assert report("A8", ok, f"CV={cv:.3f} {detail} censored={cens}")


def test_a9_lower_bound_direction(report):
    spec, params = TorusSpec(3, 1), RCParams(0.3, 2.0, 1.0)
    G = build_generator(spec, params)
    pi = stationary_distribution(G)
    sq = spectral_quantities(G, pi)
    f = distance_to_origin(spec)
    Q = G.Q.toarray()
    energy = 0.5 * float(np.sum(pi[:, None] * Q * (f[None, :] - f[:, None]) ** 2))
    var = float(pi @ (f - pi @ f) ** 2)
    rel_ok = sq.t_rel >= var / energy and math.isclose(var / energy, sq.dirichlet_bound, rel_tol=1e-12)
    worst = -math.inf
    mc_ok = True
    for t in (0.0, 0.5, 1.0, 2.0, 5.0):
        for eps in (0.3, 0.6):
            bound, exact_tv = exact_witness(spec, params, t, eps)
            worst = max(worst, bound - exact_tv)
            w = tv_lower_witness(params, 3, t, eps, 4000, seed=9)
            se = max(w.stderr, 1e-12)
            mc_ok &= w.bound <= exact_tv + 3 * se and abs(w.bound - bound) <= 3 * se + 1e-12
    ok = rel_ok and worst <= 1e-12 and mc_ok
    assert report("A9", ok, f"T_rel={sq.t_rel:.4f} Var/E={var / energy:.4f} "
                            f"max(witness - TV)={worst:.3g} mc within 3se={mc_ok}")


A10_RUNS = [
    ("simulate", ["n=6", "horizon=20", "replicas=3", "process=star"]),
    ("classify", ["n=24", "p=1e-3", "ell=4", "k_max_cap=0", "tau1=2"]),
    ("couple", ["n=8", "mu=1", "ell=2", "k_max_cap=0", "t1_mu=4", "replicas=3", "c_i1=0.25", "max_restarts=20",
                "c2=1000"]),
    ("mix-exact", ["n=3", "p=0.3", "mu=1"]),
    ("cluster-stats", ["n=12", "replicas=20"]),
    ("msd", ["n=12", "replicas=10", "times=1,2,4"]),
    ("scale-sweep", ["ns=8", "mus=1", "ps=0.05", "qs=2", "ell=2", "k_max_cap=0", "t1_mu=4", "replicas=30",
                     "c_i1=0.25", "max_restarts=20", "c2=1000"]),
]


def test_a10_determinism(report, tmp_path):
    diffs, files = [], 0
    for cmd, args in A10_RUNS:
        a, b = tmp_path / cmd / "a", tmp_path / cmd / "b"
        sa = main([cmd, "--out", str(a), "seed=3"] + args)
        sb = main([cmd, "--out", str(b), "seed=3", "workers=2"] + args)
        if sa != sb:
            diffs.append(f"{cmd}:status")
        for f in sorted(a.glob("*.csv")):
            files += 1
            if f.read_bytes() != (b / f.name).read_bytes():
                diffs.append(f"{cmd}:{f.name}")
    ok = not diffs and files >= len(A10_RUNS)
    assert report("A10", ok, f"csv files compared={files} differing={diffs or 'none'}")
