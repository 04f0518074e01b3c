"""Three-phase coupling of two star processes.

Phase 1 runs the pair independently until event B (walker-adjacent edges
closed, everything else in the L-infinity ball of radius 2*ell STAR). Phase 2
drives the second process by the first one's update stream pushed through a
torus automorphism ``phi`` (identity coupling), with simple random walk moments
(SRWM) at great boxes to change the walker offset. Phase 3 keeps the identity
coupling blindly. Failures restart from phase 1 on fresh streams.

STAR marks are coupled by copying: a STAR edge holds the unrevealed uniform of
its last star update, so reassigning unrevealed marks bijectively between the
two processes is a valid coupling step. Second-process STAR edges left
without a partner get fresh marks from the second process's own stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .dynamics import merged_events
from .event_stream import EventSource, StreamError, StreamSeed, UniformStream
from .random_cluster import RCParams
from .star_process import CLOSED, STAR, StarConfig
from .tessellation import BoxIndex, Classification, ScaleParams, box_region, region_vertices
from .torus import LINF, TorusSpec, torus

# stream roles inside one attempt
ROLE_FIRST_P1, ROLE_SECOND_P1, ROLE_DRIVE, ROLE_AUX = range(4)
MAX_ATTEMPTS = 1 << 16


class CouplingFailure(Exception):
    """Raised inside an attempt when the walkers decouple; caught by the drivers."""

    def __init__(self, msg, time=None):
        super().__init__(msg)
        self.time = time


@dataclass
class CouplingConfig:
    c1: float = 4.0          # phase-1 deadline C1 log^2 n / mu
    c2: float = 50.0         # phase-2 deadline C2 n^2 / mu
    c_i1: float = 1.0        # e stays open for c_i1 / mu in E1
    gate_c: Optional[float] = None   # Bernoulli gate C p^((6d-1)/(6d)); None keeps every SRWM
    srwm_rate: Optional[float] = None  # normalizer for the gate; None uses srwm_rate_formula
    max_restarts: int = 10


class TorusMap:
    """Automorphism x -> R(x) + shift, R reflecting coordinate ``axis`` as x -> c - x."""

    __slots__ = ("t", "shift", "axis", "c", "v", "e", "dirs")

    def __init__(self, t, shift, axis=-1, c=0):
        self.t = t
        n, d = t.n, t.d
        self.shift = tuple(int(s) % n for s in shift)
        self.axis = axis
        self.c = c
        self.dirs = [(k ^ 1) if (k >> 1) == axis else k for k in range(2 * d)]
        vm = []
        for x in range(t.nv):
            co = list(t.coords[x])
            if axis >= 0:
                co[axis] = c - co[axis]
            vm.append(t.vertex_index(tuple((a + s) % n for a, s in zip(co, self.shift))))
        self.v = vm
        em = []
        for e in range(t.ne):
            a, _ = t.ends[e]
            k = e % d
            em.append(t.inc[vm[a]][self.dirs[2 * k + 1]])
        self.e = em

    @classmethod
    def translation(cls, t, shift):
        return cls(t, shift)

    @property
    def is_identity(self):
        return self.axis < 0 and not any(self.shift)

    def __eq__(self, other):
        return isinstance(other, TorusMap) and self.v == other.v

    def __repr__(self):
        return f"TorusMap(shift={self.shift}, axis={self.axis}, c={self.c})"


@dataclass
class CoupledState:
    first: StarConfig
    second: StarConfig
    psi: tuple
    phi: TorusMap
    phase: int = 1
    clock: float = 0.0
    f1: Optional[bool] = None
    f2: Optional[bool] = None
    f3: Optional[bool] = None
    aux: Optional[UniformStream] = None
    log: list = field(default_factory=list)

    @classmethod
    def start(cls, first: StarConfig, second: StarConfig):
        t = first.t
        psi = t.offset(first.walker, second.walker)
        return cls(first, second, psi, TorusMap.translation(t, psi))

    def update_psi(self):
        self.psi = self.first.t.offset(self.first.walker, self.second.walker)
        return self.psi


class SrwmOutcome(NamedTuple):
    occurred: bool
    axis: int = -1
    sign: int = 0
    edge: int = -1
    other: int = -1      # u, the far end of e
    zeta: float = math.nan
    ends: tuple = ()     # (end of I1, end of I2, end of I3)
    reason: str = ""


# events ---------------------------------------------------------------

_BALLS = {}


def _ball(t, v, r):
    key = (t.spec, v, r)
    hit = _BALLS.get(key)
    if hit is None:
        hit = _BALLS[key] = t.ball_edges(v, r, LINF)
    return hit


def _ball_ok(sc: StarConfig, r):
    t, s = sc.t, sc.s
    adj = set(t.inc[sc.walker])
    for e in _ball(t, sc.walker, r):
        if e in adj:
            if s[e] != CLOSED:
                return False
        elif s[e] != STAR:
            return False
    return all(s[e] == CLOSED for e in adj)


def event_B(cs: CoupledState, sp: ScaleParams) -> bool:
    r = 2 * sp.ell
    return _ball_ok(cs.first, r) and _ball_ok(cs.second, r)


def event_B_scan(cs: CoupledState, sp: ScaleParams) -> bool:
    """Full-lattice scan version of event_B."""
    r = 2 * sp.ell
    for sc in (cs.first, cs.second):
        t, w = sc.t, sc.walker
        for e in range(t.ne):
            a, b = t.ends[e]
            if w in (a, b):
                if sc.s[e] != CLOSED:
                    return False
            elif t.dist(w, a, LINF) <= r and t.dist(w, b, LINF) <= r and sc.s[e] != STAR:
                return False
    return True


def _pair_coupled(cs, f):
    g = cs.phi.e[f]
    a, b = cs.first.s[f], cs.second.s[g]
    if a != b:
        return False
    if a == STAR:
        m = cs.first.mark[f]
        return m is not None and m == cs.second.mark[g]
    return True


def event_Bprime(cs: CoupledState, sp: ScaleParams, radius=None) -> bool:
    """All edges of the L-infinity ball of radius ell/2 (default) around the first walker coupled under phi."""
    r = sp.ell // 2 if radius is None else radius
    t = cs.first.t
    if cs.phi.v[cs.first.walker] != cs.second.walker:
        return False
    return all(_pair_coupled(cs, f) for f in _ball(t, cs.first.walker, r))


def event_Bsecond(cs: CoupledState, sp: ScaleParams) -> bool:
    return event_Bprime(cs, sp, sp.ell // 3)


def fully_matched(cs: CoupledState) -> bool:
    if cs.phi.v[cs.first.walker] != cs.second.walker:
        return False
    return all(_pair_coupled(cs, f) for f in range(cs.first.t.ne))


def coalesced(cs: CoupledState) -> bool:
    return cs.phi.is_identity and cs.first.walker == cs.second.walker and fully_matched(cs)


def recouple(cs: CoupledState, new_map: TorusMap):
    """Switch to new_map, pairing STAR marks across it."""
    f1, f2 = cs.first, cs.second
    s1, s2, m1, m2 = f1.s, f2.s, f1.mark, f2.mark
    taken = [False] * f1.t.ne
    for f in range(f1.t.ne):
        g = new_map.e[f]
        if s1[f] == STAR and s2[g] == STAR:
            if m1[f] is None:
                m1[f] = f1.draws()
            m2[g] = m1[f]
            taken[g] = True
    for g in range(f1.t.ne):
        if s2[g] == STAR and not taken[g]:
            m2[g] = cs.aux()
    cs.phi = new_map


# SRWM -----------------------------------------------------------------

def srwm_rate_formula(params: RCParams, sp: ScaleParams, c_i1: float = 1.0) -> float:
    """Product of the closed-form probabilities of E1, E2 and E3 at small p."""
    d = sp.d
    pmin, pmax, pst = params.p_min, params.p_max, params.p_star
    t1 = sp.t1_mu
    e1 = ((1 - math.exp(-2 * d * pmin * t1 / 4)) * ((1 - pmax) / pst) ** (2 * d - 1)
          * math.exp(-(4 * d - 2) * pmin * t1 / 2) * math.exp(-c_i1 * (1 - pmax)))
    e2 = (1 - math.exp(-(1 - pmax))) * math.exp(-pmin) * math.exp(-(4 * d - 2) * pmin)
    e3 = (1 - math.exp(-(2 * d - 1) * pst)) * math.exp(-2 * d * pmin)
    return e1 * e2 * e3


def gate_probability(params: RCParams, sp: ScaleParams, cfg: CouplingConfig) -> float:
    if cfg.gate_c is None:
        return 1.0
    rate = cfg.srwm_rate if cfg.srwm_rate is not None else srwm_rate_formula(params, sp, cfg.c_i1)
    target = cfg.gate_c * params.p ** ((6 * sp.d - 1) / (6 * sp.d))
    return min(1.0, target / rate)


def _star_stats(evs, pstar, thr):
    """(star openings, star closings, non-star) counts for a list of UpdateEvents."""
    o = c = ns = 0
    for ev in evs:
        if ev.u_star >= pstar:
            ns += 1
        elif ev.u < thr:
            o += 1
        else:
            c += 1
    return o, c, ns


def srwm_check(source: EventSource, spec: TorusSpec, sp: ScaleParams, params: RCParams,
               b: BoxIndex, v, c_i1: float = 1.0) -> SrwmOutcome:
    """Whether the stream realizes a simple random walk moment in R_1(i, tau) from vertex v.

    Stricter than the bare definition in three places: no non-star update may
    touch an edge adjacent to v or u during I1-I3, the far-end edges of u must
    have a closing star update as their last update before zeta, and e must
    stay open for c_i1/mu inside I1.
    """
    t = torus(spec)
    v = t.vertex_index(v) if isinstance(v, tuple) else v
    k, i, tau = b
    if k != 1:
        raise ValueError("SRWM lives on scale-1 boxes")
    if tau < 0:
        raise StreamError("stream does not cover negative times")
    if t.coords[v] not in region_vertices(box_region(sp, b, "full"), sp.n):
        raise ValueError("v is not in S_1(i)")
    mu = params.mu
    pstar, thr = params.p_star, params.star_open_prob
    a0 = tau * sp.t1
    a1 = a0 + sp.t1 / 2
    a2 = a1 + 1 / mu
    a3 = a2 + 1 / mu
    ends = (a1, a2, a3)
    av = t.inc[v]
    zeta, e = math.inf, -1
    for f in av:
        for ev in source.edge_events(f, a0, a1):
            if ev.u_star < pstar and ev.u < thr:
                if ev.time < zeta:
                    zeta, e = ev.time, f
                break
    if e < 0:
        return SrwmOutcome(False, ends=ends, reason="E1: no opening")
    u = t.other_end(e, v)
    au = [f for f in t.inc[u] if f != e]
    nearby = sorted(set(av) | set(t.inc[u]))
    others = [f for f in nearby if f != e]
    for f in nearby:
        if _star_stats(source.edge_events(f, a0, a3), pstar, thr)[2]:
            return SrwmOutcome(False, ends=ends, reason="non-star update nearby")
    for f in au:
        last = source.last_before(f, zeta)
        if last is None or last.u_star >= pstar or last.u < thr:
            return SrwmOutcome(False, ends=ends, reason="E1: far edge not closed")
    for f in others:
        if _star_stats(source.edge_events(f, a0, a1), pstar, thr)[0]:
            return SrwmOutcome(False, ends=ends, reason="E1: another edge opens")
    hold = zeta + c_i1 / mu
    if hold > a1:
        return SrwmOutcome(False, ends=ends, reason="E1: opened too late")
    if _star_stats(source.edge_events(e, math.nextafter(zeta, math.inf), math.nextafter(hold, math.inf)),
                   pstar, thr)[1]:
        return SrwmOutcome(False, ends=ends, reason="E1: e closes early")
    o, c, _ = _star_stats(source.edge_events(e, a1, a2), pstar, thr)
    if o or not c:
        return SrwmOutcome(False, ends=ends, reason="E2: e does not close")
    for f in others:
        if _star_stats(source.edge_events(f, a1, a2), pstar, thr)[0]:
            return SrwmOutcome(False, ends=ends, reason="E2: neighbour opens")
    for f in nearby:
        o, c, _ = _star_stats(source.edge_events(f, a2, a3), pstar, thr)
        if o or not c:
            return SrwmOutcome(False, ends=ends, reason="E3")
    dirn = t.direction_of(v, e)
    return SrwmOutcome(True, dirn >> 1, 1 if dirn & 1 else -1, e, u, zeta, ends, "")


def case_b_delta(mu: float, d: int, c_i1: float = 1.0) -> float:
    """P(walker back at v after c_i1/mu with only e open): two-state chain, flip rate 1/(2d)."""
    return 0.5 * (1 + math.exp(-c_i1 / (d * mu)))


def _poisson_parity(lam, odd, u):
    """Inverse-CDF draw of Poisson(lam) conditioned on parity."""
    w = math.exp(-lam)
    pm = [w]
    k = 0
    while True:
        k += 1
        w *= lam / k
        pm.append(w)
        if k > lam + 20 * math.sqrt(lam + 1) + 20:
            break
    ks = [j for j in range(len(pm)) if (j & 1) == odd]
    tot = sum(pm[j] for j in ks)
    acc = 0.0
    for j in ks:
        acc += pm[j] / tot
        if u < acc:
            return j
    return ks[-1]


# identity coupling ----------------------------------------------------

def _audit(cs: CoupledState):
    f1, f2, phi = cs.first, cs.second, cs.phi
    w1 = f1.walker
    if phi.v[w1] != f2.walker:
        raise CouplingFailure("walkers not related by phi")
    s1, s2, em = f1.s, f2.s, phi.e
    for f in f1.t.inc[w1]:
        if s1[f] != s2[em[f]]:
            raise CouplingFailure(f"walker-adjacent edge {f} decoupled")


def identity_step(cs: CoupledState, ev) -> bool:
    """Mirror one merged event (time, kind, a, b, c) through phi; False on decoupling."""
    _, kind, a, b, c = ev
    f1, f2, phi = cs.first, cs.second, cs.phi
    if kind == 0:
        f1.apply_edge(a, b, c)
        f2.apply_edge(phi.e[a], b, c)
        if a not in f1.t.inc[f1.walker] and phi.e[a] not in f2.t.inc[f2.walker]:
            return True
    else:
        w1 = f1.walker_step(a)
        w2 = f2.walker_step(phi.dirs[a])
        if (w1 is None) != (w2 is None):
            return False
        if w1 is None:
            return True
    try:
        _audit(cs)
    except CouplingFailure:
        return False
    return True


def _mirror(cs: CoupledState, src: EventSource, t0: float, t1: float, origin: float, watch=False):
    """Identity coupling on local [t0, t1). Returns local coalescence time or None; raises on decoupling."""
    if not t0 < t1:
        return None
    ne = cs.first.t.ne
    together = watch and _together(cs)
    if together and coalesced(cs):
        cs.clock = origin + t0
        return t0
    for ev in merged_events(src, ne, t0, t1):
        if not identity_step(cs, ev):
            raise CouplingFailure(f"decoupled at local time {ev[0]:.6g}", ev[0])
        if watch:
            if ev[1] == 1:
                together = _together(cs)
            if together and coalesced(cs):
                cs.clock = origin + ev[0]
                return ev[0]
    return None


def _together(cs):
    return cs.first.walker == cs.second.walker and cs.phi.is_identity


def srwm_couple(cs: CoupledState, outcome: SrwmOutcome, src: EventSource, params: RCParams,
                sp: ScaleParams, t_start: float, c_i1: float = 1.0):
    """Couple the pair across an SRWM window starting at local time t_start.

    Case A (walkers agree on the chosen axis) is plain identity coupling.
    Case B switches the graph map to the reflection across e at zeta,
    anti-couples the endpoints at zeta + c_i1/mu, synchronizes the jumps
    across e and e-bar afterwards, and re-couples under the new translation at
    the end of I3. Returns the case letter.
    """
    if not outcome.occurred:
        raise ValueError("srwm_couple needs an occurred SRWM")
    f1, f2, phi = cs.first, cs.second, cs.phi
    t = f1.t
    v, vb = f1.walker, f2.walker
    if phi.v[v] != vb:
        raise ValueError("walkers are not related by phi")
    if any(f1.s[f] != CLOSED for f in t.inc[v]) or any(f2.s[f] != CLOSED for f in t.inc[vb]):
        raise ValueError("walkers are not trapped")
    j, sgn, e, u = outcome.axis, outcome.sign, outcome.edge, outcome.other
    a3 = outcome.ends[2]
    if t.coords[v][j] == t.coords[vb][j] or phi.axis >= 0:
        _mirror(cs, src, t_start, a3, 0.0)
        return "A"
    zeta = outcome.zeta
    hold = zeta + c_i1 / params.mu
    _mirror(cs, src, t_start, zeta, 0.0)
    # reflection on axis j across e: v -> vb, e -> e-bar
    cv, cb = t.coords[v], t.coords[vb]
    c = cv[j] + cb[j]
    shift = tuple(0 if k == j else (cb[k] - cv[k]) for k in range(t.d))
    refl = TorusMap(t, shift, j, c)
    if refl.v[v] != vb:
        raise AssertionError("reflection does not map v to v-bar")
    recouple(cs, refl)
    eb = refl.e[e]
    ub = t.other_end(eb, vb)
    # endpoint of the first walker at `hold` follows from its own clock
    d_across = t.direction_of(v, e)
    pos = v
    for we in src.walker_events(zeta, hold):
        if we.direction == (d_across if pos == v else d_across ^ 1):
            pos = u if pos == v else v
    delta = case_b_delta(params.mu, t.d, c_i1)
    if pos == u:
        end_b = vb
    else:
        end_b = ub if cs.aux() < (1 - delta) / delta else vb
    lam = (c_i1 / params.mu) / (2 * t.d)
    nj = _poisson_parity(lam, 1 if end_b == ub else 0, cs.aux())
    bridge = sorted(zeta + (hold - zeta) * cs.aux() for _ in range(nj))
    bi = 0
    em = refl.e
    tt = zeta
    try:
        for ev in merged_events(src, t.ne, zeta, a3):
            tt, kind, a, b, cc = ev
            while bi < len(bridge) and bridge[bi] < tt:
                _cross(f2, eb)
                bi += 1
            if kind == 0:
                f1.apply_edge(a, b, cc)
                f2.apply_edge(em[a], b, cc)
            else:
                w = f1.walker
                crosses = t.inc[w][a] == e
                moved = f1.walker_step(a)
                if moved is not None and not crosses:
                    raise CouplingFailure("walker left the SRWM edge")
                if tt >= hold and moved is not None:
                    _cross(f2, eb)
            _check_trapped(f1, e)
            _check_trapped(f2, eb)
        while bi < len(bridge):
            _cross(f2, eb)
            bi += 1
    except CouplingFailure as exc:
        exc.time = tt if exc.time is None else exc.time
        raise
    cs.update_psi()
    recouple(cs, TorusMap.translation(t, cs.psi))
    _audit(cs)
    return "B"


def _cross(sc: StarConfig, e):
    w = sc.walker
    dirn = sc.t.direction_of(w, e)
    if sc.walker_step(dirn) is None:
        raise CouplingFailure("SRWM edge closed under a synchronized jump")


def _check_trapped(sc: StarConfig, e):
    s = sc.s
    for f in sc.t.inc[sc.walker]:
        if f != e and s[f] != CLOSED:
            raise CouplingFailure("an edge next to the SRWM pair opened")


# phases ---------------------------------------------------------------

def _seed(root: StreamSeed, attempt: int, role: int) -> StreamSeed:
    if attempt >= MAX_ATTEMPTS:
        raise ValueError("too many attempts for the stream layout")
    return StreamSeed(root.root_seed, ((root.replica * MAX_ATTEMPTS + attempt) << 2) | role)


def run_phase1(cs: CoupledState, seed: StreamSeed, sp: ScaleParams, params: RCParams,
               cfg: CouplingConfig, attempt: int = 0):
    """Independent evolution until event B or the deadline; returns (cs, F1, elapsed)."""
    cs.phase = 1
    n = sp.n
    deadline = cfg.c1 * math.log(n) ** 2 / params.mu
    s1 = EventSource(_seed(seed, attempt, ROLE_FIRST_P1), params.mu, 2 * sp.d)
    s2 = EventSource(_seed(seed, attempt, ROLE_SECOND_P1), params.mu, 2 * sp.d)
    cs.aux = UniformStream(EventSource(_seed(seed, attempt, ROLE_AUX), params.mu, 2 * sp.d), "aux")
    if event_B(cs, sp):
        cs.f1 = True
        return cs, True, 0.0
    if deadline <= 0:
        cs.f1 = False
        return cs, False, 0.0
    ne = cs.first.t.ne
    g1 = merged_events(s1, ne, 0.0, deadline)
    g2 = merged_events(s2, ne, 0.0, deadline)
    e1, e2 = next(g1, None), next(g2, None)
    while e1 is not None or e2 is not None:
        if e2 is None or (e1 is not None and e1[0] <= e2[0]):
            ev, sc = e1, cs.first
            e1 = next(g1, None)
        else:
            ev, sc = e2, cs.second
            e2 = next(g2, None)
        if ev[1] == 0:
            sc.apply_edge(ev[2], ev[3], ev[4])
        else:
            sc.walker_step(ev[2])
        if event_B(cs, sp):
            cs.clock += ev[0]
            cs.update_psi()
            recouple(cs, TorusMap.translation(cs.first.t, cs.psi))
            cs.f1 = True
            return cs, True, ev[0]
    cs.clock += deadline
    cs.update_psi()
    cs.phi = TorusMap.translation(cs.first.t, cs.psi)
    cs.f1 = False
    return cs, False, deadline


@dataclass
class Phase2Report:
    success: bool
    coalesced_at: Optional[float] = None   # local time
    srwm_attempts: int = 0
    srwm_successes: int = 0
    gate_fired: int = 0
    reason: str = ""


def run_phase2(cs: CoupledState, seed: StreamSeed, sp: ScaleParams, params: RCParams,
               cfg: CouplingConfig, attempt: int = 0, src: EventSource = None,
               cls: Classification = None) -> Phase2Report:
    """Tessellation-driven coupling on local [0, Delta2]; stops early on coalescence."""
    cs.phase = 2
    mu = params.mu
    n = sp.n
    d2 = cfg.c2 * n * n / mu
    d3 = d2 + n * n / mu
    if src is None:
        src = EventSource(_seed(seed, attempt, ROLE_DRIVE), mu, 2 * sp.d)
    if cls is None:
        cls = Classification(src, cs.first.spec, params, sp, horizon=d3)
    gate_u = src.uniforms("gate")
    theta = gate_probability(params, sp, cfg)
    rep = Phase2Report(False)
    origin = cs.clock
    t = cs.first.t
    k = sp.k_max
    if not cls.is_k_great(_box1(sp, t.coords[cs.first.walker]), 0, k):
        rep.reason = "initial box not great"
        cs.f2 = False
        return rep
    now = 0.0
    tau = 0
    next_allowed = 0
    try:
        while now < d2:
            s_tau = tau * sp.t1
            if s_tau > now:
                stop = min(s_tau, d2)
                hit = _mirror(cs, src, now, stop, origin, watch=True)
                if hit is not None:
                    rep.success, rep.coalesced_at = True, hit
                    break
                now = stop
                if now >= d2:
                    break
            a3 = s_tau + sp.t1 / 2 + 2 / mu
            if tau >= next_allowed and a3 <= d2 and not _together(cs):
                w = cs.first.walker
                i = _box1(sp, t.coords[w])
                trapped = all(cs.first.s[f] == CLOSED for f in t.inc[w])
                if trapped and cls.is_k_great(i, tau, k):
                    rep.srwm_attempts += 1
                    out = srwm_check(src, cs.first.spec, sp, params, BoxIndex(1, i, tau), w, cfg.c_i1)
                    fire = out.occurred and gate_u() < theta
                    if fire and not out.occurred:
                        raise AssertionError("gate fired without an SRWM")
                    if out.occurred:
                        rep.srwm_successes += 1
                    if fire:
                        rep.gate_fired += 1
                        srwm_couple(cs, out, src, params, sp, s_tau, cfg.c_i1)
                        cs.log.append(("srwm", origin + s_tau, cs.psi))
                        now = a3
                        next_allowed = tau + 2
                        while (tau + 1) * sp.t1 <= now:
                            tau += 1
                        tau += 1
                        continue
            tau += 1
        if rep.success:
            cs.f2 = True
            return rep
        cs.clock = origin + d2
        ok = _together(cs) and event_Bprime(cs, sp)
        rep.success = ok
        rep.reason = "" if ok else "walkers apart or B' fails at Delta2"
    except CouplingFailure as exc:
        rep.success = False
        rep.reason = str(exc)
        cs.clock = origin + (exc.time if exc.time is not None else now)
    cs.f2 = rep.success
    return rep


def run_phase3(cs: CoupledState, seed: StreamSeed, sp: ScaleParams, params: RCParams,
               cfg: CouplingConfig, attempt: int = 0, src: EventSource = None):
    """Blind identity coupling on local (Delta2, Delta3]; returns (cs, F3, local coalescence time)."""
    cs.phase = 3
    mu = params.mu
    n = sp.n
    d2 = cfg.c2 * n * n / mu
    d3 = d2 + n * n / mu
    if src is None:
        src = EventSource(_seed(seed, attempt, ROLE_DRIVE), mu, 2 * sp.d)
    origin = cs.clock - d2
    try:
        hit = _mirror(cs, src, d2, d3, origin, watch=True)
    except CouplingFailure as exc:
        cs.clock = origin + (exc.time if exc.time is not None else d2)
        cs.f3 = False
        return cs, False, None
    if hit is not None:
        cs.f3 = True
        return cs, True, hit
    cs.clock = origin + d3
    cs.f3 = coalesced(cs)
    return cs, cs.f3, (d3 if cs.f3 else None)


def _box1(sp, coords):
    return tuple(c // sp.ell for c in coords)


@dataclass
class CouplingResult:
    coalescence_time: Optional[float]
    restarts: int
    f1: bool = False
    f2: bool = False
    f3: bool = False
    srwm_attempts: int = 0
    srwm_successes: int = 0
    censored: bool = False


def run_three_phase(first: StarConfig, second: StarConfig, seed: StreamSeed, sp: ScaleParams,
                    params: RCParams, cfg: CouplingConfig = None) -> CouplingResult:
    """Loop attempts until both processes are equal, or the restart budget runs out."""
    cfg = cfg or CouplingConfig()
    cs = CoupledState.start(first.copy(), second.copy())
    res = CouplingResult(None, 0)
    for attempt in range(cfg.max_restarts + 1):
        res.restarts = attempt
        cs, ok1, _ = run_phase1(cs, seed, sp, params, cfg, attempt)
        res.f1 = ok1
        res.f2 = res.f3 = False
        if not ok1:
            continue
        if coalesced(cs):
            res.f2 = res.f3 = True
            res.coalescence_time = cs.clock
            return res
        src = EventSource(_seed(seed, attempt, ROLE_DRIVE), params.mu, 2 * sp.d)
        rep = run_phase2(cs, seed, sp, params, cfg, attempt, src=src)
        res.srwm_attempts += rep.srwm_attempts
        res.srwm_successes += rep.srwm_successes
        res.f2 = rep.success
        if rep.coalesced_at is not None:
            res.f3 = True
            res.coalescence_time = cs.clock
            return res
        if not rep.success:
            continue
        cs, ok3, _ = run_phase3(cs, seed, sp, params, cfg, attempt, src=src)
        res.f3 = ok3
        if ok3:
            res.coalescence_time = cs.clock
            return res
    res.censored = True
    return res
