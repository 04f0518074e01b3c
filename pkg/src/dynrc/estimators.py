"""Monte Carlo estimators and experiment drivers.

Every estimate carries a standard error. Replicas are independent and are
reduced in replica order, so results do not depend on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from .coupling import CouplingConfig, run_three_phase, srwm_check
from .dynamics import PlainState, evolve, merged_events
from .event_stream import GENERATOR_NAME, EventSource, StreamSeed, UniformStream, UpdateEvent, fresh_uniform
from .random_cluster import EdgeConfig, RCParams, _pc, exact_rc_distribution, interval_cluster, sample_stationary
from .star_process import StarConfig
from .tessellation import BoxIndex, derive_scale_params
from .torus import L1, TorusSpec, torus

MIN_REPLICAS = 30
BI_LIPSCHITZ = 2 * math.pi
DEFAULT_SWEEPS = 50


class EstimationFailure(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


def _map(fn, items, workers=1):
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _mean_se(xs):
    a = np.asarray(xs, dtype=float)
    if a.size < 2:
        return float(a.mean()) if a.size else math.nan, math.nan
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))


def _bootstrap_quantile(x, q, reps, seed):
    g = np.random.default_rng(seed)
    idx = g.integers(0, len(x), size=(reps, len(x)))
    qs = np.quantile(x[idx], q, axis=1, method="inverted_cdf")
    qs = qs[np.isfinite(qs)]
    return float(qs.std(ddof=1)) if qs.size > 1 else math.nan


def sprinkle_eps(p: float, p2: float, q: float) -> float:
    """Largest eps for which the upward sprinkling from p to p2 is valid."""
    a = (p2 - p) / (1 - p)
    b = (_pc(p2, q) - _pc(p, q)) / (1 - _pc(p, q))
    return max(0.0, min(a, b))


def default_delta(params: RCParams, p2: float = None) -> float:
    """delta = eps/mu, eps taken from the sprinkling window [p, p2] (p2 = 2p by default)."""
    p2 = min(2 * params.p, (1 + params.p) / 2) if p2 is None else p2
    return sprinkle_eps(params.p, p2, params.q) / params.mu


# mixing -------------------------------------------------------------------

@dataclass
class MixingEstimate:
    level: float
    estimate: float
    stderr: float
    replicas: int
    censored: int
    times: list
    restarts: list
    srwm_attempts: int = 0
    srwm_successes: int = 0


def _couple_one(r, params, n, d, root, sp, cfg, starts):
    spec = TorusSpec(n, d)
    rs = StreamSeed(root, r)
    base = EventSource(rs, params.mu, 2 * d)
    a = StarConfig(spec, params, starts[0], draws=UniformStream(base, "resolve-first"))
    b = StarConfig(spec, params, starts[1], draws=UniformStream(base, "resolve-second"))
    return run_three_phase(a, b, rs, sp, params, cfg)


def couple_replicas(params: RCParams, n: int, replicas: int, d: int = 1, seed: int = 0, overrides=None,
                    cfg: CouplingConfig = None, starts=None, workers: int = 1) -> list:
    """One three-phase coupling per replica; both copies start all-closed.

    The walkers start at antipodal points unless ``starts`` is given.
    """
    sp = derive_scale_params(params, n, d, overrides)
    cfg = cfg or CouplingConfig()
    if starts is None:
        starts = ((0,) * d, (n // 2,) + (0,) * (d - 1))
    fn = partial(_couple_one, params=params, n=n, d=d, root=seed, sp=sp, cfg=cfg, starts=starts)
    return _map(fn, range(replicas), workers)


def mixing_upper_estimate(params: RCParams, n: int, replicas: int, quantile: float = 0.5, d: int = 1,
                          seed: int = 0, overrides=None, cfg: CouplingConfig = None, starts=None,
                          workers: int = 1, bootstrap: int = 400, allow_small=False) -> MixingEstimate:
    """Quantile of the coalescence time of the three-phase coupling.

    Censored replicas count as infinite times, which keeps the quantile an
    upper bound; the standard error is a bootstrap estimate.
    """
    if replicas < MIN_REPLICAS and not allow_small:
        raise ValueError(f"replicas must be >= {MIN_REPLICAS}")
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    out = couple_replicas(params, n, replicas, d, seed, overrides, cfg, starts, workers)
    times = np.array([math.inf if r.censored else r.coalescence_time for r in out])
    censored = int(np.isinf(times).sum())
    restarts = [r.restarts for r in out]
    if censored == replicas:
        raise EstimationFailure("every replica was censored",
                                dict(replicas=replicas, censored=censored, restarts=restarts))
    est = float(np.quantile(times, quantile, method="inverted_cdf"))
    se = _bootstrap_quantile(times, quantile, bootstrap, seed) if math.isfinite(est) else math.nan
    return MixingEstimate(quantile, est, se, replicas, censored, times.tolist(), restarts,
                          sum(r.srwm_attempts for r in out), sum(r.srwm_successes for r in out))


@dataclass
class SrwmFrequency:
    p: float
    ell: int
    estimate: float
    stderr: float
    successes: int
    trials: int


def srwm_frequency(params: RCParams, trials: int, ell: int = None, boxes: int = 60, seed: int = 0,
                   c_i1: float = 1.0, overrides=None) -> SrwmFrequency:
    """Monte Carlo frequency of an SRWM in a scale-1 box at d = 1.

    Each replica stream is tested at the vertices 1, 4, 7, ... of the first
    time block; their nearby edge sets are disjoint, so the trials are
    independent.
    """
    ov = dict(overrides or {})
    if ell is not None:
        ov["ell"] = ell
    ell = ov.get("ell") or max(2, round(params.p ** (-1.0 / 3)))
    ov["ell"] = ell
    ov.setdefault("k_max_cap", 0)
    n = ell * max(1, math.ceil(boxes * 3 / ell))
    spec = TorusSpec(n, 1)
    sp = derive_scale_params(params, n, 1, ov)
    per = n // 3
    hits = done = r = 0
    while done < trials:
        src = EventSource(StreamSeed(seed, r), params.mu, 2)
        for j in range(min(per, trials - done)):
            v = 3 * j + 1
            hits += srwm_check(src, spec, sp, params, BoxIndex(1, (v // ell,), 1), v, c_i1).occurred
            done += 1
        r += 1
    est = hits / done
    return SrwmFrequency(params.p, ell, est, math.sqrt(est * (1 - est) / done), hits, done)


# displacement -------------------------------------------------------------

def _stationary_env(spec, params, rs, sweeps):
    return sample_stationary(rs, spec, params, sweeps)


def _unwrapped(t, traj, times):
    pos = np.zeros(t.d, dtype=np.int64)
    out = []
    jumps = traj.jumps
    j = 0
    for s in times:
        while j < len(jumps) and jumps[j][0] <= s:
            _, a, b = jumps[j]
            step = [((bb - aa + 1) % t.n) - 1 for aa, bb in zip(a, b)]
            pos += step
            j += 1
        out.append(int(np.abs(pos).sum()))
    return out


def _msd_one(r, params, spec, root, times, sweeps, env):
    rs = StreamSeed(root, r)
    cfg = env if env is not None else _stationary_env(spec, params, rs, sweeps)
    t = torus(spec)
    horizon = max(times)
    if horizon <= 0:
        return [0] * len(times)
    _, traj = evolve(PlainState(cfg, 0, params), rs, params, horizon)
    return _unwrapped(t, traj, times)


@dataclass
class MSDResult:
    times: list
    mean: list
    stderr: list
    delta: float
    slope: float
    slope_se: float
    exponent: float
    exponent_se: float
    replicas: int


def msd(params: RCParams, n: int, times, replicas: int, d: int = 1, seed: int = 0,
        sweeps: int = DEFAULT_SWEEPS, delta: float = None, env: EdgeConfig = None,
        workers: int = 1) -> MSDResult:
    """E||X_t - X_0||_1^2 for the unwrapped displacement from a stationary start.

    The walker starts at the origin; by translation invariance this is the
    same as a uniform start. ``env`` replaces the stationary environment.
    """
    times = sorted(float(s) for s in times)
    if times and times[0] < 0:
        raise ValueError("times must be nonnegative")
    spec = TorusSpec(n, d)
    delta = default_delta(params) if delta is None else delta
    fn = partial(_msd_one, params=params, spec=spec, root=seed, times=times, sweeps=sweeps, env=env)
    sq = np.array(_map(fn, range(replicas), workers), dtype=float) ** 2
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.full(len(times), math.nan)
    x = np.array(times) / delta if delta > 0 else np.array(times)
    slope = slope_se = exponent = exponent_se = math.nan
    if np.any(x > 0):
        w = x @ x
        slope = float(x @ mean / w)
        slope_se = float(math.sqrt(np.sum((x * se) ** 2)) / w)
    pos = (np.array(times) > 0) & (mean > 0)
    if pos.sum() >= 3:
        fit = stats.linregress(np.log(np.array(times)[pos]), np.log(mean[pos]))
        exponent, exponent_se = float(fit.slope), float(fit.stderr)
    return MSDResult(times, mean.tolist(), se.tolist(), delta, slope, slope_se, exponent, exponent_se, replicas)


# cluster moment -----------------------------------------------------------

def edge_updates(src: EventSource, ne: int, t0: float, t1: float) -> list:
    """All edge updates in [t0, t1) as UpdateEvents with integer edges, in time order."""
    return [UpdateEvent(tt, e, a, c) for tt, _, e, a, c in merged_events(src, ne, t0, t1, walker=False)]


def _cluster_one(r, params, spec, root, delta, sweeps, env):
    rs = StreamSeed(root, r)
    cfg = env if env is not None else _stationary_env(spec, params, rs, sweeps)
    t = torus(spec)
    x = min(int(fresh_uniform(rs, "cluster-root", 0) * t.nv), t.nv - 1)
    src = EventSource(rs, params.mu, 2 * spec.d)
    evs = edge_updates(src, t.ne, 0.0, delta) if delta > 0 else []
    return interval_cluster(cfg, evs, x, (0.0, delta), params).diameter


@dataclass
class ClusterMoment:
    mean: float
    stderr: float
    delta: float
    replicas: int
    diameters: list = field(default_factory=list, repr=False)


def cluster_moment(params: RCParams, n: int, delta: float, replicas: int, d: int = 1, seed: int = 0,
                   sweeps: int = DEFAULT_SWEEPS, env: EdgeConfig = None, workers: int = 1) -> ClusterMoment:
    """E[D^2] for the ever-open cluster of a uniform vertex over [0, delta]."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    spec = TorusSpec(n, d)
    fn = partial(_cluster_one, params=params, spec=spec, root=seed, delta=delta, sweeps=sweeps, env=env)
    diam = _map(fn, range(replicas), workers)
    m, se = _mean_se(np.array(diam, dtype=float) ** 2)
    return ClusterMoment(m, se, delta, replicas, diam)


# total variation witness --------------------------------------------------

@dataclass
class Witness:
    t: float
    radius: float
    p_stay: float
    stderr: float
    ball_fraction: float
    bound: float
    threshold: float
    below_threshold: bool
    replicas: int


def witness_radius(n: int, d: int, eps: float) -> float:
    return eps ** (1.0 / d) * n


def ball_fraction(spec: TorusSpec, r: float) -> float:
    t = torus(spec)
    return sum(1 for v in range(t.nv) if t.dist(v, 0, L1) <= r) / t.nv


def witness_threshold(eps: float, delta: float, n: int, d: int, c_assump: float,
                      c: float = BI_LIPSCHITZ) -> float:
    """Largest t for which the displacement argument forces TV >= 1 - eps."""
    if c_assump <= 0:
        return math.inf
    return eps ** ((2 + d) / d) * delta * n * n / (6 * c ** 4 * c_assump)


def _stay_one(r, params, spec, root, t_end, radius, sweeps, env):
    rs = StreamSeed(root, r)
    cfg = env if env is not None else _stationary_env(spec, params, rs, sweeps)
    if t_end <= 0:
        return 1
    st, _ = evolve(PlainState(cfg, 0, params), rs, params, t_end)
    return int(st.t.dist(st.walker, 0, L1) <= radius)


def tv_lower_witness(params: RCParams, n: int, t: float, eps: float, replicas: int, d: int = 1,
                     seed: int = 0, sweeps: int = DEFAULT_SWEEPS, delta: float = None,
                     c_assump: float = None, env: EdgeConfig = None, workers: int = 1) -> Witness:
    """Lower bound on ||upsilon_t - pi x nu||_TV from the set {dist(X_t, X_0) <= eps^(1/d) n}.

    The bound is P(stay) - pi(ball), valid for any witness set. When
    ``c_assump`` is given, ``below_threshold`` compares t with the time up to
    which TV >= 1 - eps is guaranteed.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    spec = TorusSpec(n, d)
    r = witness_radius(n, d, eps)
    frac = ball_fraction(spec, r)
    fn = partial(_stay_one, params=params, spec=spec, root=seed, t_end=t, radius=r, sweeps=sweeps, env=env)
    hits = _map(fn, range(replicas), workers)
    p, se = _mean_se(hits)
    delta = default_delta(params) if delta is None else delta
    thr = witness_threshold(eps, delta, n, d, c_assump) if c_assump is not None else math.nan
    return Witness(t, r, p, se, frac, max(0.0, p - frac), thr, bool(t <= thr), replicas)


def exact_witness(spec: TorusSpec, params: RCParams, t: float, eps: float):
    """(witness bound, exact TV) for the walker at the origin and a stationary environment."""
    from .exact_oracle import build_generator, distribution_at, product_stationary, tv, walker_marginal

    G = build_generator(spec, params)
    nu = exact_rc_distribution(spec, params)
    init = np.zeros(G.space.size)
    init[: nu.size] = nu
    cur = distribution_at(G, init, t)
    tr = torus(spec)
    r = witness_radius(spec.n, spec.d, eps)
    inside = np.array([tr.dist(v, 0, L1) <= r for v in range(tr.nv)])
    stay = float(walker_marginal(G, cur)[inside].sum())
    bound = max(0.0, stay - inside.mean())
    return bound, tv(cur, product_stationary(spec, params))


# sweeps -------------------------------------------------------------------

@dataclass
class SweepConfig:
    grid: list
    d: int = 1
    replicas: int = MIN_REPLICAS
    seed: int = 0
    quantile: float = 0.5
    overrides: dict = None
    coupling: CouplingConfig = None
    cluster_replicas: int = 0
    msd_replicas: int = 0
    msd_times: tuple = ()
    delta: float = None
    workers: int = 1


@dataclass
class CellResult:
    n: int
    mu: float
    p: float
    q: float
    replicas: int
    estimate: float = math.nan
    stderr: float = math.nan
    censored: int = 0
    collapse: float = math.nan
    collapse_se: float = math.nan
    srwm_attempts: int = 0
    srwm_successes: int = 0
    q25: float = math.nan
    q75: float = math.nan
    cluster_mean: float = math.nan
    cluster_se: float = math.nan
    msd_slope: float = math.nan
    msd_slope_se: float = math.nan
    error: str = ""


@dataclass
class SweepResult:
    grid: list
    cells: list
    metadata: dict

    def collapse(self):
        return np.array([c.collapse for c in self.cells])

    def coefficient_of_variation(self) -> float:
        x = self.collapse()
        x = x[np.isfinite(x)]
        return float(x.std(ddof=1) / x.mean()) if x.size > 1 else math.nan

    def cell(self, n, mu, p=None, q=None):
        for c in self.cells:
            if c.n == n and c.mu == mu and (p is None or c.p == p) and (q is None or c.q == q):
                return c
        raise KeyError((n, mu, p, q))

    def rows(self):
        return [asdict(c) for c in self.cells]


def scaling_sweep(config: SweepConfig) -> SweepResult:
    """Mixing estimate (and optionally cluster moment and MSD) for every (n, mu, p, q) cell."""
    cells = []
    for j, (n, mu, p, q) in enumerate(config.grid):
        cell = CellResult(n, mu, p, q, config.replicas)
        seed = config.seed + 1000003 * j
        try:
            params = RCParams(p, q, mu)
            est = mixing_upper_estimate(params, n, config.replicas, config.quantile, config.d, seed,
                                        config.overrides, config.coupling, workers=config.workers)
            cell.estimate, cell.stderr, cell.censored = est.estimate, est.stderr, est.censored
            scale = mu / (n * n)
            cell.collapse, cell.collapse_se = est.estimate * scale, est.stderr * scale
            cell.srwm_attempts, cell.srwm_successes = est.srwm_attempts, est.srwm_successes
            ts = np.array(est.times)
            cell.q25, cell.q75 = (float(np.quantile(ts, x, method="inverted_cdf")) for x in (0.25, 0.75))
            delta = default_delta(params) if config.delta is None else config.delta
            if config.cluster_replicas:
                cm = cluster_moment(params, n, delta, config.cluster_replicas, config.d, seed,
                                    workers=config.workers)
                cell.cluster_mean, cell.cluster_se = cm.mean, cm.stderr
            if config.msd_replicas and config.msd_times:
                m = msd(params, n, config.msd_times, config.msd_replicas, config.d, seed, delta=delta,
                        workers=config.workers)
                cell.msd_slope, cell.msd_slope_se = m.slope, m.slope_se
        except (EstimationFailure, ValueError) as exc:
            cell.error = f"{type(exc).__name__}: {exc}"
        cells.append(cell)
    meta = dict(seed=config.seed, replicas=config.replicas, quantile=config.quantile, d=config.d,
                generator=GENERATOR_NAME, cell_seeds=[config.seed + 1000003 * j for j in range(len(config.grid))])
    return SweepResult(list(config.grid), cells, meta)
