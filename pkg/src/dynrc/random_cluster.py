"""The plain random cluster environment.

Edge configurations are stored as lists of 0/1 indexed by the canonical edge
index of :class:`dynrc.torus.Torus`. Configuration ``k`` in the enumeration
order of :func:`exact_rc_distribution` has edge ``e`` open iff bit ``e`` of
``k`` is set.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .event_stream import StreamSeed, _Block, tag_code
from .torus import EdgeId, TorusSpec, torus

CLUSTER_CAP = 10 ** 6
ENUM_EDGE_LIMIT = 24


class ClusterCapError(RuntimeError):
    pass


class CapacityError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class RCParams:
    p: float
    q: float
    mu: float = 1.0

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0,1), got {self.p}")
        if not self.q > 0:
            raise ValueError(f"q must be positive, got {self.q}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @cached_property
    def p_cut(self):
        """Opening probability of a cut-edge."""
        p, q = self.p, self.q
        return p / (p + (1 - p) * q)

    @cached_property
    def p_min(self):
        return min(self.p, self.p_cut)

    @cached_property
    def p_max(self):
        return max(self.p, self.p_cut)

    @cached_property
    def p_star(self):
        return self.p_min + 1 - self.p_max

    @cached_property
    def star_open_prob(self):
        return self.p_min / self.p_star

    def open_prob(self, cut: bool):
        return self.p_cut if cut else self.p


class EdgeConfig:
    """Open/closed state of every edge; indexable by EdgeId or edge index."""

    def __init__(self, spec: TorusSpec, state=None):
        self.spec = spec
        self.torus = torus(spec)
        if state is None:
            state = [0] * self.torus.ne
        self.s = [int(x) for x in state]
        if len(self.s) != self.torus.ne:
            raise ValueError("state length does not match the edge count")

    def _idx(self, e):
        return self.torus.edge_index(e) if isinstance(e, tuple) else e

    def __getitem__(self, e):
        return self.s[self._idx(e)]

    def with_edge(self, e, value):
        out = EdgeConfig(self.spec, self.s)
        out.s[self._idx(e)] = value
        return out

    def copy(self):
        return EdgeConfig(self.spec, self.s)

    def open_edges(self):
        return [e for e, x in enumerate(self.s) if x == 1]

    def index(self) -> int:
        return sum(1 << e for e, x in enumerate(self.s) if x)

    @classmethod
    def from_index(cls, spec, k):
        ne = torus(spec).ne
        return cls(spec, [(k >> e) & 1 for e in range(ne)])

    def __eq__(self, other):
        return isinstance(other, EdgeConfig) and self.spec == other.spec and self.s == other.s

    def __repr__(self):
        return f"EdgeConfig(n={self.spec.n}, d={self.spec.d}, open={self.open_edges()})"


def connected_avoiding(t, s, a, b, skip, cap=CLUSTER_CAP) -> bool:
    """Bidirectional BFS: are a and b joined by edges with s == 1 other than skip?"""
    if a == b:
        return True
    seen = ({a}, {b})
    fronts = ([a], [b])
    nbr, inc = t.nbr, t.inc
    side = 0
    total = 2
    while fronts[0] and fronts[1]:
        mine, theirs = seen[side], seen[1 - side]
        nxt = []
        for v in fronts[side]:
            for w, f in zip(nbr[v], inc[v]):
                if f == skip or s[f] != 1 or w in mine:
                    continue
                if w in theirs:
                    return True
                mine.add(w)
                nxt.append(w)
        total += len(nxt)
        if total > cap:
            raise ClusterCapError(f"cluster search exceeded {cap} vertices")
        fronts = (nxt, fronts[1]) if side == 0 else (fronts[0], nxt)
        side = 1 - side
    return False


def cut_edge_idx(t, s, e, cap=CLUSTER_CAP) -> bool:
    a, b = t.ends[e]
    return not connected_avoiding(t, s, a, b, e, cap)


def is_cut_edge(cfg: EdgeConfig, e) -> bool:
    e = cfg._idx(e)
    return cut_edge_idx(cfg.torus, cfg.s, e)


def glauber_apply_idx(t, s, e, u, params: RCParams):
    """In-place Glauber update of edge e with mark u."""
    thr = params.p_cut if cut_edge_idx(t, s, e) else params.p
    s[e] = 1 if u < thr else 0
    return s[e]


def glauber_apply(cfg: EdgeConfig, e, u: float, params: RCParams) -> EdgeConfig:
    if not 0 < u < 1:
        raise ValueError("u must lie in (0,1)")
    out = cfg.copy()
    glauber_apply_idx(out.torus, out.s, out._idx(e), u, params)
    return out


def num_components(t, s) -> int:
    parent = list(range(t.nv))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    k = t.nv
    for e, x in enumerate(s):
        if x == 1:
            a, b = t.ends[e]
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
                k -= 1
    return k


def rc_log_weight(cfg: EdgeConfig, params: RCParams) -> float:
    t = cfg.torus
    k = sum(1 for x in cfg.s if x == 1)
    return k * math.log(params.p) + (t.ne - k) * math.log1p(-params.p) + num_components(t, cfg.s) * math.log(params.q)


def _components_table(t) -> np.ndarray:
    """kappa of every configuration, by adding edges one bit at a time."""
    ne = t.ne
    out = np.empty(1 << ne, dtype=np.int64)
    for k in range(1 << ne):
        out[k] = num_components(t, [(k >> e) & 1 for e in range(ne)])
    return out


_KAPPA = {}


def components_table(spec: TorusSpec) -> np.ndarray:
    t = torus(spec)
    if t.ne > ENUM_EDGE_LIMIT:
        raise CapacityError(f"{t.ne} edges exceed the enumeration limit {ENUM_EDGE_LIMIT}")
    tab = _KAPPA.get(spec)
    if tab is None:
        tab = _KAPPA[spec] = _components_table(t)
    return tab


def exact_rc_distribution(spec: TorusSpec, params: RCParams) -> np.ndarray:
    kappa = components_table(spec)
    ne = torus(spec).ne
    opens = np.array([bin(k).count("1") for k in range(1 << ne)], dtype=np.int64)
    logw = opens * math.log(params.p) + (ne - opens) * math.log1p(-params.p) + kappa * math.log(params.q)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def sample_stationary(seed: StreamSeed, spec: TorusSpec, params: RCParams, sweeps: int) -> EdgeConfig:
    """Burn-in sampler: sweeps*|E| Glauber updates at uniform edges from all-closed."""
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    t = torus(spec)
    steps = sweeps * t.ne
    g = _Block(seed).at(0, 0, 0, tag_code("stationary"))
    edges = g.integers(0, t.ne, size=steps).tolist()
    us = g.random(steps).tolist()
    s = [0] * t.ne
    p, pc = params.p, params.p_cut
    ends = t.ends
    for e, u in zip(edges, us):
        if u >= max(p, pc):
            s[e] = 0
        elif u < min(p, pc):
            s[e] = 1
        else:
            a, b = ends[e]
            s[e] = 1 if u < (p if connected_avoiding(t, s, a, b, e) else pc) else 0
    return EdgeConfig(spec, s)


class Cluster(NamedTuple):
    vertices: frozenset
    diameter: int


def _diameter(t, verts) -> int:
    vs = list(verts)
    best = 0
    for i, a in enumerate(vs):
        for b in vs[i + 1:]:
            r = t.dist(a, b)
            if r > best:
                best = r
    return best


def interval_cluster(base_cfg: EdgeConfig, events, x, interval, params: RCParams,
                     covered_until=None) -> Cluster:
    """Component of x among edges open at some time in [s, s'].

    base_cfg is the state at time s; events are the updates in order (vertices
    and edges may be given as tuples or indices). A stream known to end before
    s' (covered_until < s') is rejected.
    """
    s0, s1 = interval
    if s1 < s0:
        raise ValueError("interval is inverted")
    if covered_until is not None and covered_until < s1:
        raise ValueError("event stream does not cover the interval")
    t = base_cfg.torus
    state = list(base_cfg.s)
    ever = [x == 1 for x in state]
    last = -math.inf
    for ev in events:
        if ev.time < last:
            raise ValueError("events out of order")
        last = ev.time
        if ev.time < s0:
            continue
        if ev.time > s1:
            break
        e = t.edge_index(ev.edge) if isinstance(ev.edge, tuple) else ev.edge
        if glauber_apply_idx(t, state, e, ev.u, params):
            ever[e] = True
    x = t.vertex_index(x) if isinstance(x, tuple) else x
    seen = {x}
    queue = deque([x])
    while queue:
        v = queue.popleft()
        for w, f in zip(t.nbr[v], t.inc[v]):
            if ever[f] and w not in seen:
                seen.add(w)
                queue.append(w)
    return Cluster(frozenset(t.coords[v] for v in seen), _diameter(t, seen))


def ever_open_cluster_scan(base_cfg, events, x, interval, params):
    """Brute-force oracle: union of the open sets after every event, then a component search."""
    s0, s1 = interval
    t = base_cfg.torus
    cfg = base_cfg.copy()
    union = set(cfg.open_edges())
    for ev in events:
        if s0 <= ev.time <= s1:
            cfg = glauber_apply(cfg, ev.edge, ev.u, params)
            union |= set(cfg.open_edges())
    x = t.vertex_index(x) if isinstance(x, tuple) else x
    comp = {x}
    changed = True
    while changed:
        changed = False
        for e in union:
            a, b = t.ends[e]
            if (a in comp) != (b in comp):
                comp |= {a, b}
                changed = True
    return frozenset(t.coords[v] for v in comp)


class SprinkleCheck(NamedTuple):
    satisfies_up: bool
    satisfies_down: bool


def _pc(p, q):
    return p / (p + (1 - p) * q)


def sprinkle_check(p: float, p2: float, q: float, eps: float) -> SprinkleCheck:
    if q < 1:
        raise DomainError("the sprinkling coupling needs q >= 1")
    if not 0 < p < p2 < 1:
        raise ValueError("need 0 < p < p' < 1")
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    up = eps + (1 - eps) * p <= p2 and eps + (1 - eps) * _pc(p, q) <= _pc(p2, q)
    down = (1 - eps) * p2 >= p and (1 - eps) * _pc(p2, q) >= _pc(p, q)
    return SprinkleCheck(up, down)


UP = "up"
DOWN = "down"


@dataclass
class SprinkleTriple:
    lower: EdgeConfig
    upper: EdgeConfig
    sprinkle: list
    p: float
    p2: float
    q: float
    eps: float
    direction: str = UP
    steps: int = field(default=0)

    @classmethod
    def start(cls, spec, p, p2, q, eps, direction=UP):
        chk = sprinkle_check(p, p2, q, eps)
        if not (chk.satisfies_up if direction == UP else chk.satisfies_down):
            raise DomainError(f"sprinkling condition fails for direction {direction}")
        ne = torus(spec).ne
        return cls(EdgeConfig(spec), EdgeConfig(spec), [0] * ne, p, p2, q, eps, direction)

    def invariant_holds(self) -> bool:
        lo, up, z = self.lower.s, self.upper.s, self.sprinkle
        if self.direction == UP:
            return all(max(a, c) <= b for a, b, c in zip(lo, up, z))
        return all(a <= b * (1 - c) for a, b, c in zip(lo, up, z))

    def invariant_holds_at(self, e) -> bool:
        a, b, c = self.lower.s[e], self.upper.s[e], self.sprinkle[e]
        if self.direction == UP:
            return max(a, c) <= b
        return a <= b * (1 - c)


def coupled_sprinkle_step(tr: SprinkleTriple, e, u: float, v: float) -> SprinkleTriple:
    """Update edge e in all three chains with the monotone coupling (in place).

    u drives the quantile coupling; v is an independent uniform used only on
    the branch where the sprinkled bit hides the lower (resp. upper) edge.
    """
    t = tr.lower.torus
    e = tr.lower._idx(e)
    lo, up, z = tr.lower.s, tr.upper.s, tr.sprinkle
    pl = _pc(tr.p, tr.q) if cut_edge_idx(t, lo, e) else tr.p
    pu = _pc(tr.p2, tr.q) if cut_edge_idx(t, up, e) else tr.p2
    eps = tr.eps
    if tr.direction == UP:
        # eta+Z opens iff u < eps + (1-eps) pl <= pu
        if u < eps:
            z[e] = 1
            lo[e] = 1 if v < pl else 0
        else:
            z[e] = 0
            lo[e] = 1 if (u - eps) / (1 - eps) < pl else 0
        up[e] = 1 if u < pu else 0
    else:
        # eta'-Z opens iff u < (1-eps) pu, and pl <= (1-eps) pu
        if u >= 1 - eps:
            z[e] = 1
            up[e] = 1 if v < pu else 0
        else:
            z[e] = 0
            up[e] = 1 if u / (1 - eps) < pu else 0
        lo[e] = 1 if u < pl else 0
    tr.steps += 1
    if not tr.invariant_holds_at(e):
        raise AssertionError(f"sprinkling invariant violated at edge {e} after {tr.steps} steps")
    return tr


def export_config(cfg, params: RCParams, symbols="01") -> str:
    """Plain-text snapshot: header line, then one 'baseCoords axis state' line per edge."""
    t = cfg.torus
    lines = [f"# n={t.n} d={t.d} p={params.p!r} q={params.q!r}"]
    for e, x in enumerate(cfg.s):
        eid = t.edge_id(e)
        lines.append(f"{' '.join(map(str, eid.base))} {eid.axis} {symbols[x]}")
    return "\n".join(lines) + "\n"
