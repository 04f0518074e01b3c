"""Multi-scale space-time tessellation and the good/bad/great classification.

Spatial index ``i`` at scale ``k`` is a d-tuple taken mod ``n // ell_k``; the
core ``S_k^core(i)`` covers the vertices ``i*ell_k + [0, ell_k)^d`` (mod n).
Times are real times; ``t_k`` and ``tbar_k`` already include the ``1/mu``
factor.

At scale 1 the two fine sub-tessellations (``T1bar`` of length ``tbar_1`` and
``T1dbar`` of length ``gamma/mu``) are anchored at the start ``tau*t_1`` of each
core: the intervals inside ``[tau*t_1, (tau+1)*t_1 - tbar_1)`` are the full
intervals of the grid started at ``tau*t_1``, and ``j(tau)`` is the interval
``[tau*t_1 - tbar_1, tau*t_1)``. When ``tbar_1`` divides ``t_1`` this is the
global grid.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple

from .event_stream import EventSource
from .random_cluster import RCParams
from .torus import TorusSpec, torus

# boxes of the 1- and 2-enlargements, in units of full boxes
ENL1 = (range(-3, 4), range(-3, 4))
ENL2 = (range(-20, 21), range(-18, 4))

# bond percolation thresholds used by the (warning-only) gamma guard
_PC = {1: 1.0, 2: 0.5, 3: 0.2488, 4: 0.1601, 5: 0.1182, 6: 0.0942}


class ConfigError(ValueError):
    pass


class DependencyError(LookupError):
    pass


@dataclass(frozen=True)
class ScaleParams:
    n: int
    d: int
    mu: float
    ell: int
    m: int
    gamma: float
    k_max: int
    t1_mu: float
    bar_t1_mu: float

    @property
    def log2ell(self):
        return math.log(self.ell) ** 2

    @property
    def t1(self):
        return self.t1_mu / self.mu

    @property
    def bar_t1(self):
        return self.bar_t1_mu / self.mu

    @property
    def dbar(self):
        return self.gamma / self.mu

    def ell_k(self, k):
        out = self.ell
        for j in range(1, k):
            out *= self.m * j * j
        return out

    def ratio(self, k):
        """ell_k / ell_{k-1} = t_k / t_{k-1} for k >= 2."""
        return self.m * (k - 1) ** 2

    def t_k(self, k):
        out = self.t1
        for j in range(1, k):
            out *= self.m * j * j
        return out

    def bar_t_k(self, k):
        if k == 1:
            return self.bar_t1
        return 6 * self.t_k(k) / ((k - 1) ** 2 * self.m)

    def n_boxes(self, k):
        return self.n // self.ell_k(k)

    @property
    def inner_margin(self):
        return self.gamma / 6 * self.log2ell


def _default_kmax(n):
    return max(0, math.ceil(math.log2(math.log(n))))


def _divisor_at_most(n, x):
    for v in range(x, 1, -1):
        if n % v == 0:
            return v
    return min(v for v in range(2, n + 1) if n % v == 0)


def derive_scale_params(params: RCParams, n: int, d: int = 1, overrides=None) -> ScaleParams:
    """Scale parameters from (p, d), with optional desk-scale overrides.

    overrides keys: ell, m, gamma, k_max_cap, t1_mu, bar_t1_mu, strict.
    """
    ov = dict(overrides or {})
    unknown = set(ov) - {"ell", "m", "gamma", "k_max_cap", "t1_mu", "bar_t1_mu", "strict"}
    if unknown:
        raise ConfigError(f"unknown scale override(s): {sorted(unknown)}")
    strict = ov.get("strict", True)
    gamma = float(ov.get("gamma", 0.01))
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    m = int(ov.get("m", 48))
    if m < 1:
        raise ConfigError("m must be a positive integer")
    if "ell" in ov and ov["ell"] is not None:
        ell = int(ov["ell"])
        if ell < 2:
            raise ConfigError("ell must be >= 2")
        if strict and n % ell:
            raise ConfigError(f"ell={ell} does not divide n={n}")
    else:
        ell = max(2, round(params.p ** (-1.0 / (3 * d))))
        if strict:
            ell = _divisor_at_most(n, ell)
    if ell > n:
        raise ConfigError(f"ell={ell} exceeds n={n}")
    t1_mu = float(ov["t1_mu"]) if ov.get("t1_mu") is not None else math.sqrt(ell)
    if ov.get("bar_t1_mu") is not None:
        bar = float(ov["bar_t1_mu"])
    else:
        bar = gamma * math.ceil(math.log(ell) ** 2 / gamma - 1e-9)
    if not (t1_mu > 0 and bar > 0):
        raise ConfigError("t1_mu and bar_t1_mu must be positive")
    cap = ov.get("k_max_cap")
    kdef = _default_kmax(n)
    tmp = ScaleParams(n, d, params.mu, ell, m, gamma, 0, t1_mu, bar)
    if cap is None:
        k_max = kdef
        while k_max > 1 and n % tmp.ell_k(k_max):
            k_max -= 1
    else:
        if int(cap) < 0:
            raise ConfigError("k_max_cap must be >= 0")
        k_max = min(kdef, int(cap))
        if k_max >= 1 and n % tmp.ell_k(k_max):
            raise ConfigError(f"ell_{k_max}={tmp.ell_k(k_max)} does not divide n={n}")
    sp = replace(tmp, k_max=k_max)
    pc = _PC.get(d, 1.0 / (2 * d - 1))
    if params.star_open_prob + gamma >= pc:
        warnings.warn("p_min/p_star + gamma is not below the percolation threshold", stacklevel=2)
    if k_max >= 2:
        bad = validate_largem(sp)
        if bad:
            raise ConfigError(f"m={m} is too small for the scale nesting condition: {bad}")
    return sp


class BoxIndex(NamedTuple):
    k: int
    i: tuple
    tau: int


class Interval(NamedTuple):
    a: float
    b: float
    closed: bool = False  # whether b belongs to the interval

    def hits(self, other: "Interval") -> bool:
        lo_ok = self.a <= other.b if other.closed else self.a < other.b
        hi_ok = other.a <= self.b if self.closed else other.a < self.b
        return lo_ok and hi_ok and self.a <= self.b and other.a <= other.b

    def gap(self, other):
        return max(0.0, other.a - self.b, self.a - other.b)

    def contains(self, other: "Interval") -> bool:
        if other.a < self.a:
            return False
        if other.closed and not self.closed:
            return other.b < self.b
        return other.b <= self.b


class Region(NamedTuple):
    lo: tuple      # unwrapped lower corner
    side: tuple    # side lengths, vertices
    time: Interval


def region_vertices(region: Region, n: int) -> frozenset:
    axes = [[(lo + j) % n for j in range(s)] for lo, s in zip(region.lo, region.side)]
    return frozenset(itertools.product(*axes))


# geometry -------------------------------------------------------------

def time_core(sp: ScaleParams, k, tau) -> Interval:
    tk = sp.t_k(k)
    return Interval(tau * tk, (tau + 1) * tk)


def time_full(sp: ScaleParams, k, tau) -> Interval:
    if k == 1:
        return Interval(tau * sp.t1 - sp.bar_t1, (tau + 1) * sp.t1, True)
    tk = sp.t_k(k)
    return Interval((tau - 1) * tk, (tau + 2) * tk)


def _time_union(sp, k, tau, betas) -> Interval:
    a = time_full(sp, k, tau + betas.start)
    b = time_full(sp, k, tau + betas.stop - 1)
    return Interval(a.a, b.b, b.closed)


def _space(sp, k, i, lo_cores, hi_cores):
    lk = sp.ell_k(k)
    lo = tuple((c + lo_cores) * lk for c in i)
    side = tuple((hi_cores - lo_cores) * lk for _ in i)
    return lo, side


def box_region(sp: ScaleParams, b: BoxIndex, kind: str = "full") -> Region:
    k, i, tau = b
    if kind == "core":
        return Region(*_space(sp, k, i, 0, 1), time_core(sp, k, tau))
    if kind == "full":
        return Region(*_space(sp, k, i, -1, 2), time_full(sp, k, tau))
    if kind == "s_core":
        return Region(*_space(sp, k, i, 0, 1), time_full(sp, k, tau))
    if kind == "enl1":
        return Region(*_space(sp, k, i, -4, 5), _time_union(sp, k, tau, ENL1[1]))
    if kind == "enl2":
        return Region(*_space(sp, k, i, -21, 22), _time_union(sp, k, tau, ENL2[1]))
    if kind == "inn":
        if k == 1:
            lo, side = _space(sp, 1, i, -1, 2)
            cut = math.floor(sp.inner_margin) + 1
            lo = tuple(x + cut for x in lo)
            side = tuple(max(0, s - 2 * cut) for s in side)
            return Region(lo, side, time_full(sp, 1, tau))
        r = sp.ratio(k)
        lk1 = sp.ell_k(k - 1)
        lo = tuple(((c - 1) * r + 21) * lk1 for c in i)
        side = tuple(max(0, (3 * r - 42) * lk1) for _ in i)
        return Region(lo, side, time_full(sp, k, tau))
    raise ValueError(f"unknown region kind {kind!r}")


def enl2_box_count(d: int) -> int:
    return len(ENL2[0]) ** d * len(ENL2[1])


def _cyc_gap(a0, s0, a1, s1, n):
    """L1 gap between integer arcs [a0, a0+s0) and [a1, a1+s1) on the cycle Z_n."""
    if s0 >= n or s1 >= n:
        return 0
    fwd = (a1 - a0) % n
    g1 = fwd - (s0 - 1)
    back = (a0 - a1) % n
    g2 = back - (s1 - 1)
    return max(0, min(g1, g2)) if g1 > 0 and g2 > 0 else 0


def box_gap(sp: ScaleParams, b0: BoxIndex, b1: BoxIndex) -> float:
    """Infimum of the space-time L1 distance between two full boxes."""
    r0, r1 = box_region(sp, b0), box_region(sp, b1)
    g = sum(_cyc_gap(a, s, c, t, sp.n) for a, s, c, t in zip(r0.lo, r0.side, r1.lo, r1.side))
    return g + r0.time.gap(r1.time)


def non_intersecting(sp: ScaleParams, b0: BoxIndex, b1: BoxIndex) -> bool:
    return box_gap(sp, b0, b1) >= 2


def _arcs_intersect(a0, s0, a1, s1, n):
    if s0 <= 0 or s1 <= 0:
        return False
    if s0 >= n or s1 >= n:
        return True
    return (a1 - a0) % n < s0 or (a0 - a1) % n < s1


def regions_intersect(r0: Region, r1: Region, n: int) -> bool:
    if not all(_arcs_intersect(a, s, c, t, n) for a, s, c, t in zip(r0.lo, r0.side, r1.lo, r1.side)):
        return False
    return r0.time.hits(r1.time)


def validate_largem(sp: ScaleParams) -> list:
    """Check the scale-nesting condition for k = 1 .. k_max-1 on one coordinate axis.

    For a k-box, every (k+1)-box whose core meets it must contain all k-boxes
    meeting its 2-enlargement, and the inner part of that (k+1)-box must
    contain the spatial 2-enlargement. Returns the failures.
    """
    bad = []
    for k in range(1, sp.k_max):
        r = sp.ratio(k + 1)
        lk, lk1 = sp.ell_k(k), sp.ell_k(k + 1)
        # space, in vertices of Z
        for i in range(r):
            enl_lo, enl_hi = (i - 21) * lk, (i + 22) * lk
            full_lo, full_hi = (i - 1) * lk, (i + 2) * lk
            # k-boxes meeting the enlargement: j with [(j-1)lk,(j+2)lk) meeting [enl_lo, enl_hi)
            cover_lo, cover_hi = (i - 23) * lk, (i + 24) * lk
            for ip in range(math.floor(full_lo / lk1) - 1, math.ceil(full_hi / lk1) + 1):
                if not (ip * lk1 < full_hi and full_lo < (ip + 1) * lk1):
                    continue
                if not ((ip - 1) * lk1 <= cover_lo and cover_hi <= (ip + 2) * lk1):
                    bad.append(("space", k, i, ip))
                in_lo = ((ip - 1) * r + 21) * lk
                in_hi = ((ip + 2) * r - 21) * lk
                if not (in_lo <= enl_lo and enl_hi <= in_hi):
                    bad.append(("inner", k, i, ip))
        # time
        for tau in range(r):
            full = time_full(sp, k, tau)
            enl = _time_union(sp, k, tau, ENL2[1])
            hitting = [tt for tt in range(tau - 30, tau + 30) if time_full(sp, k, tt).hits(enl)]
            cover = Interval(min(time_full(sp, k, tt).a for tt in hitting),
                             max(time_full(sp, k, tt).b for tt in hitting), k == 1)
            tk1 = sp.t_k(k + 1)
            for tp in range(math.floor(full.a / tk1) - 1, math.ceil(full.b / tk1) + 1):
                if not time_core(sp, k + 1, tp).hits(full):
                    continue
                if not time_full(sp, k + 1, tp).contains(cover):
                    bad.append(("time", k, tau, tp))
    return bad


# classification -------------------------------------------------------

class Scale1Result(NamedTuple):
    good: bool
    g1: bool
    g2: bool
    g3: bool
    g4: bool


class Classification:
    """Lazy, memoized classification of boxes from one replica's update stream.

    ``forced`` maps (i, tau) to a scale-1 status, replacing the stream-based
    events; it is meant for constructed scenarios. With ``forced_default`` set,
    every unlisted scale-1 box takes that status and no stream is read.
    """

    def __init__(self, source: EventSource, spec: TorusSpec, params: RCParams, sp: ScaleParams,
                 forced=None, horizon=None, forced_default=None):
        if source is not None and abs(source.mu - params.mu) > 1e-15:
            raise ConfigError("event source and params disagree on mu")
        self.source = source
        self.spec = spec
        self.t = torus(spec)
        self.params = params
        self.sp = sp
        self.forced = {(self.norm_i(1, i), tau): g for (i, tau), g in dict(forced or {}).items()}
        self.forced_default = forced_default
        self.horizon = horizon
        self.status = {}
        self.detail = {}
        self._geo = {}
        self._great = {}

    # geometry caches, per spatial index
    def _geometry(self, i):
        g = self._geo.get(i)
        if g is not None:
            return g
        t, sp = self.t, self.sp
        full = region_vertices(box_region(sp, BoxIndex(1, i, 0), "full"), sp.n)
        vidx = {t.vertex_index(v) for v in full}
        edges = [e for e in range(t.ne) if t.ends[e][0] in vidx and t.ends[e][1] in vidx]
        cores = []
        for off in itertools.product((-1, 0, 1), repeat=sp.d):
            j = tuple((a + o) % sp.n_boxes(1) for a, o in zip(i, off))
            cv = {t.vertex_index(v) for v in region_vertices(box_region(sp, BoxIndex(1, j, 0), "core"), sp.n)}
            cores.append([e for e in range(t.ne) if t.ends[e][0] in cv and t.ends[e][1] in cv])
        inner = sorted(t.vertex_index(v) for v in region_vertices(box_region(sp, BoxIndex(1, i, 0), "inn"), sp.n))
        g = self._geo[i] = (sorted(vidx), edges, cores, inner)
        return g

    def norm_i(self, k, i):
        nb = self.sp.n_boxes(k)
        return tuple(a % nb for a in i)

    def _check_horizon(self, b):
        if self.horizon is not None and b > self.horizon + 1e-12:
            raise DependencyError(f"classification needs the stream beyond the horizon {self.horizon}")

    def scale1(self, i, tau) -> Scale1Result:
        i = self.norm_i(1, i)
        key = (i, tau)
        hit = self.detail.get(key)
        if hit is not None:
            return hit
        if key in self.forced:
            g = bool(self.forced[key])
            res = Scale1Result(g, g, g, g, g)
        elif tau >= 0 and self.forced_default is not None:
            g = bool(self.forced_default)
            res = Scale1Result(g, g, g, g, g)
        elif tau < 0:
            res = Scale1Result(True, True, True, True, True)
        else:
            res = self._classify1(i, tau)
        self.detail[key] = res
        self.status[(1, i, tau)] = res.good
        return res

    def _classify1(self, i, tau):
        sp, src, p = self.sp, self.source, self.params
        if src is None:
            raise DependencyError("no update stream attached")
        verts, edges, cores, inner = self._geometry(i)
        t1, tb, dbar = sp.t1, sp.bar_t1, sp.dbar
        pstar, thr = p.p_star, p.star_open_prob
        top = (tau + 1) * t1
        self._check_horizon(top)
        top_closed = math.nextafter(top, math.inf)
        # G1: no non-star update on E(S_1(i)) during T_1(tau) and t >= 0
        lo = max(0.0, tau * t1 - tb)
        g1 = True
        for e in edges:
            for ev in src.edge_events(e, lo, top_closed):
                if ev.u_star >= pstar:
                    g1 = False
                    break
            if not g1:
                break
        need = 0.5 * pstar * sp.log2ell

        def g3_ok(a, b):
            for ce in cores:
                for e in ce:
                    c = sum(1 for ev in src.edge_events(e, a, b) if ev.u_star < pstar)
                    if c < need:
                        return False
            return True

        # G2: no star-opening in j(tau), j(tau+1), plus the star-update counts there
        g2 = True
        for a in (tau * t1 - tb, top - tb):
            if a < 0:
                continue  # interval before time 0: no constraint
            b = a + tb
            for e in edges:
                if any(ev.u_star < pstar and ev.u < thr for ev in src.edge_events(e, a, b)):
                    g2 = False
                    break
            if g2 and not g3_ok(a, b):
                g2 = False
            if not g2:
                break
        # G3 and G4 live on [tau t_1, (tau+1) t_1 - tbar_1)
        start, end = tau * t1, top - tb
        g3 = True
        a = start
        while a + tb <= end + 1e-12 * max(1.0, end):
            if not g3_ok(a, a + tb):
                g3 = False
                break
            a += tb
        g4 = self._g4(edges, inner, start, end)
        return Scale1Result(g1 and g2 and g3 and g4, g1, g2, g3, g4)

    def _g4(self, edges, inner, start, end):
        sp, src, p = self.sp, self.source, self.params
        dbar = sp.dbar
        n_int = 0
        while start + (n_int + 1) * dbar <= end + 1e-12 * max(1.0, end):
            n_int += 1
        if n_int == 0 or not inner:
            return True
        pstar, thr = p.p_star, p.star_open_prob
        evs = []
        for e in edges:
            for ev in src.edge_events(e, start, start + n_int * dbar):
                if ev.u_star < pstar:
                    evs.append((ev.time, e, ev.u < thr))
        evs.sort()
        state = dict.fromkeys(edges, False)
        t = self.t
        lim = sp.log2ell
        pos = 0
        for j in range(n_int):
            b = start + (j + 1) * dbar
            ever = {e for e, s in state.items() if s}
            while pos < len(evs) and evs[pos][0] < b:
                _, e, op = evs[pos]
                state[e] = op
                if op:
                    ever.add(e)
                pos += 1
            if _max_cluster(t, ever, inner) >= lim:
                return False
        return True

    def good(self, k, i, tau) -> bool:
        i = self.norm_i(k, i)
        if k == 1:
            return self.scale1(i, tau).good
        key = (k, i, tau)
        hit = self.status.get(key)
        if hit is not None:
            return hit
        res = self._classify_k(k, i, tau)
        self.status[key] = res
        return res

    def sub_boxes(self, k, i, tau):
        """(k-1)-boxes contained in R_k(i, tau), in unwrapped indices."""
        sp = self.sp
        r = sp.ratio(k)
        sp_ranges = [range((c - 1) * r + 1, (c + 2) * r - 1) for c in i]
        outer = time_full(sp, k, tau)
        tk1 = sp.t_k(k - 1)
        lo = math.floor(outer.a / tk1) - 2
        hi = math.ceil(outer.b / tk1) + 2
        taus = [tt for tt in range(lo, hi + 1) if outer.contains(time_full(sp, k - 1, tt))]
        for ii in itertools.product(*sp_ranges):
            for tt in taus:
                yield BoxIndex(k - 1, ii, tt)

    def _classify_k(self, k, i, tau):
        sp = self.sp
        if time_full(sp, k, tau).b <= 0:
            return True
        bad = []
        for b in self.sub_boxes(k, i, tau):
            if not self.good(b.k, b.i, b.tau):
                for c in bad:
                    if non_intersecting(sp, b, c):
                        return False
                bad.append(b)
        return True

    def is_k_great(self, i, tau, k) -> bool:
        i = self.norm_i(1, i)
        key = (i, tau, k)
        hit = self._great.get(key)
        if hit is not None:
            return hit
        res = True
        for kk in range(1, k + 1):
            for b in self.enl2_hitting(i, tau, kk):
                if not self.good(*b):
                    res = False
                    break
            if not res:
                break
        self._great[key] = res
        return res

    def enl2_hitting(self, i, tau, k):
        """k-boxes whose 2-enlargement intersects R_1(i, tau)."""
        sp = self.sp
        target = box_region(sp, BoxIndex(1, i, tau), "full")
        nb = sp.n_boxes(k)
        lk = sp.ell_k(k)
        space_ok = []
        for c, lo in zip(i, target.lo):
            span = range(nb) if nb <= 47 else range(lo // lk - 23, lo // lk + 3 * sp.ell // lk + 24)
            space_ok.append([j for j in span
                             if _arcs_intersect((j - 21) * lk, 43 * lk, lo, 3 * sp.ell, sp.n)])
        tk = sp.t_k(k)
        lo = math.floor(target.time.a / tk) - 6
        hi = math.ceil(target.time.b / tk) + 20
        taus = [tt for tt in range(lo, hi + 1) if _time_union(sp, k, tt, ENL2[1]).hits(target.time)]
        out = []
        for ii in itertools.product(*space_ok):
            for tt in taus:
                out.append(BoxIndex(k, tuple(a % nb for a in ii), tt))
        return out

    def export_rows(self):
        rows = []
        for (k, i, tau), g in sorted(self.status.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
            rows.append((k,) + tuple(i) + (tau, "good" if g else "bad"))
        return rows


def _max_cluster(t, ever, roots):
    """Largest open cluster (vertex count) over clusters containing a root."""
    if not ever:
        return 1
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in ever:
        a, b = t.ends[e]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    sizes = {}
    for v in list(parent):
        r = find(v)
        sizes[r] = sizes.get(r, 0) + 1
    best = 1
    for v in roots:
        if v in parent:
            best = max(best, sizes[find(v)])
    return best


def classify_scale1(source, spec, params, sp, b: BoxIndex, cls: Classification = None) -> Scale1Result:
    if b.k != 1:
        raise ValueError("classify_scale1 takes a scale-1 box")
    cls = cls or Classification(source, spec, params, sp)
    return cls.scale1(b.i, b.tau)


def classify_scale_k(cls: Classification, b: BoxIndex) -> bool:
    if b.k < 2:
        raise ValueError("classify_scale_k takes k >= 2")
    return cls.good(b.k, b.i, b.tau)


def is_k_great(cls: Classification, sp: ScaleParams, i, tau, k) -> bool:
    return cls.is_k_great(tuple(i), tau, k)


# paths ----------------------------------------------------------------

class Violation(NamedTuple):
    tau: int
    interval: tuple
    s: float
    s2: float
    box: tuple


def _positions(traj, a, b):
    """(time, vertex tuple) pairs describing the path on [a, b)."""
    pos = traj.position_at(a)
    out = [(a, pos)]
    for t, _, w in traj.jumps:
        if a < t < b:
            out.append((t, w))
    return out


def _box1_of(sp, v):
    return tuple(c // sp.ell for c in v)


def check_feasible(traj, cls: Classification, sp: ScaleParams):
    """(True, None) or (False, first Violation) for the feasibility condition."""
    t = cls.t
    lim = sp.log2ell
    nb = sp.n_boxes(1)
    t_end = traj.end
    tau = 1
    while tau * sp.t1 < t_end:
        start = tau * sp.t1
        stop = min((tau + 1) * sp.t1, t_end)
        a = start
        while a + sp.dbar <= (tau + 1) * sp.t1 + 1e-12 and a < stop:
            b = a + sp.dbar
            pts = _positions(traj, a, b)
            for s, v in pts:
                home = _box1_of(sp, v)
                for off in itertools.product((-1, 0, 1), repeat=sp.d):
                    i = tuple((h + o) % nb for h, o in zip(home, off))
                    inner = cls._geometry(i)[3]
                    if t.vertex_index(v) not in inner or not cls.scale1(i, tau).good:
                        continue
                    for s2, w in pts:
                        if s2 >= s and t.dist(t.vertex_index(v), t.vertex_index(w)) >= lim:
                            return False, Violation(tau, (a, b), s, s2, i)
            a = b
        tau += 1
    return True, None


def exits_via_time_boundary(traj, cls: Classification, sp: ScaleParams, i, tau, s=None) -> bool:
    """Started in S_1^core(i) at time s in T_1(tau), the path stays in S_1(i) until max T_1(tau)."""
    t = cls.t
    full = box_region(sp, BoxIndex(1, i, tau), "full")
    members = {t.vertex_index(v) for v in region_vertices(full, sp.n)}
    if s is None:
        s = max(0.0, full.time.a)
    end = min(full.time.b, traj.end)
    for _, v in _positions(traj, s, math.nextafter(end, math.inf)):
        if t.vertex_index(v) not in members:
            return False
    return True


def count_great_crossings(traj, cls: Classification, sp: ScaleParams, k: int) -> int:
    """Greedy count of k-great 1-boxes entered through the bottom of the core and left through the top."""
    t = cls.t
    count = 0
    tau = 0
    while (tau + 1) * sp.t1 <= traj.end + 1e-12:
        s = tau * sp.t1
        v = traj.position_at(s)
        i = _box1_of(sp, v)
        if cls.is_k_great(i, tau, k) and exits_via_time_boundary(traj, cls, sp, i, tau, s):
            count += 1
            tau += 2
        else:
            tau += 1
    return count
