"""The star process: edges in {0, 1, STAR} with walker-adjacent edges kept in {0, 1}.

A STAR edge keeps the mark U of the star update that put it there and is
resolved from that mark when it has to be looked at (open iff
``U < p_min/p_star``). Edges that start in STAR have no mark and are resolved
from the lazy uniform stream of the replica instead.
"""
from __future__ import annotations

from .event_stream import EventSource, StreamSeed, UniformStream
from .random_cluster import CLUSTER_CAP, ClusterCapError, EdgeConfig, RCParams
from .torus import TorusSpec, torus

CLOSED, OPEN, STAR = 0, 1, 2
SYMBOLS = "01*"
RESOLVE_TAG = "resolve"
PROJECT_TAG = "project"


class ConstraintError(AssertionError):
    pass


class StarConfig:
    """Mutable state of one star process.

    ``s[e]`` is 0, 1 or STAR; ``mark[e]`` holds the stored U of a STAR edge or
    None when the STAR came from initialization. ``draws`` is the lazy uniform
    stream; its counter is the per-replica resolution counter.
    """

    __slots__ = ("spec", "t", "params", "walker", "s", "mark", "draws", "pdraws", "thr", "resolved")

    def __init__(self, spec: TorusSpec, params: RCParams, walker=0, state=None,
                 draws: UniformStream = None, seed: StreamSeed = None):
        self.spec = spec
        self.t = torus(spec)
        self.params = params
        self.walker = self.t.vertex_index(walker) if isinstance(walker, tuple) else walker
        self.s = [CLOSED] * self.t.ne if state is None else list(state)
        self.mark = [None] * self.t.ne
        if draws is None:
            src = EventSource(seed if seed is not None else StreamSeed(0), params.mu, 2 * spec.d)
            draws = UniformStream(src, RESOLVE_TAG)
        self.draws = draws
        self.pdraws = UniformStream(draws.source, PROJECT_TAG)
        self.thr = params.star_open_prob
        self.resolved = 0
        for e in self.t.inc[self.walker]:
            if self.s[e] == STAR:
                self._resolve(e)

    def copy(self):
        out = StarConfig.__new__(StarConfig)
        out.spec, out.t, out.params = self.spec, self.t, self.params
        out.walker = self.walker
        out.s = list(self.s)
        out.mark = list(self.mark)
        out.draws = UniformStream(self.draws.source, self.draws.tag, self.draws.counter)
        out.pdraws = UniformStream(self.pdraws.source, self.pdraws.tag, self.pdraws.counter)
        out.thr = self.thr
        out.resolved = self.resolved
        return out

    def _resolve(self, e):
        u = self.mark[e]
        if u is None:
            u = self.draws()
        self.mark[e] = None
        self.resolved += 1
        x = OPEN if u < self.thr else CLOSED
        self.s[e] = x
        return x

    def _idx(self, e):
        return self.t.edge_index(e) if isinstance(e, tuple) else e

    def __getitem__(self, e):
        return self.s[self._idx(e)]

    def check_constraint(self):
        for e in self.t.inc[self.walker]:
            if self.s[e] == STAR:
                raise ConstraintError(f"edge {e} adjacent to the walker is STAR")

    def set_star(self, e, mark=None):
        e = self._idx(e)
        if e in self.t.inc[self.walker]:
            raise ConstraintError("cannot put a walker-adjacent edge in STAR")
        self.s[e] = STAR
        self.mark[e] = mark

    # dynamics interface
    def apply_edge(self, e, u_star, u):
        t = self.t
        if u_star < self.params.p_star:
            if e in t.inc[self.walker]:
                self.s[e] = OPEN if u < self.thr else CLOSED
                self.mark[e] = None
            else:
                self.s[e] = STAR
                self.mark[e] = u
            return
        a, b = t.ends[e]
        seen = self.explore(a, e)
        cut = b not in seen
        if cut:
            self.explore(b, e)
        p = self.params
        # U rescaled onto (p_min, p_max) is below the branch threshold iff it is p_max
        opens = (p.p_cut > p.p) if cut else (p.p > p.p_cut)
        self.s[e] = OPEN if opens else CLOSED
        self.mark[e] = None

    def explore(self, root, skip, cap=CLUSTER_CAP):
        """Open cluster of root avoiding edge skip, resolving every STAR edge it touches."""
        t, s = self.t, self.s
        nbr, inc = t.nbr, t.inc
        seen = {root}
        stack = [root]
        while stack:
            v = stack.pop()
            for w, f in zip(nbr[v], inc[v]):
                if f == skip:
                    continue
                x = s[f]
                if x == STAR:
                    x = self._resolve(f)
                if x == OPEN and w not in seen:
                    seen.add(w)
                    if len(seen) > cap:
                        raise ClusterCapError(f"cluster exploration exceeded {cap} vertices")
                    stack.append(w)
        return seen

    def walker_step(self, dirn):
        """Proposed jump along direction dirn; returns the new position or None."""
        v = self.walker
        if self.s[self.t.inc[v][dirn]] != OPEN:
            return None
        w = self.t.nbr[v][dirn]
        self.arrive(w)
        return w

    def arrive(self, w):
        s = self.s
        for f in self.t.inc[w]:
            if s[f] == STAR:
                self._resolve(f)
        self.walker = w

    def edge_config(self):
        if STAR in self.s:
            raise ValueError("configuration still has STAR edges; use project()")
        return EdgeConfig(self.spec, self.s)

    def snapshot(self):
        """(walker, projected 0/1 list, raw list)."""
        return self.walker, project(self)[1].s, list(self.s)

    def star_count(self):
        return sum(1 for x in self.s if x == STAR)

    def __repr__(self):
        return f"StarConfig(walker={self.t.coords[self.walker]}, state={''.join(SYMBOLS[x] for x in self.s)})"


def star_apply_update(sc: StarConfig, ev, params: RCParams = None) -> StarConfig:
    """Apply one UpdateEvent in place and return sc."""
    e = sc._idx(ev.edge)
    sc.apply_edge(e, ev.u_star, ev.u)
    sc.check_constraint()
    return sc


def resolve_star_edge(sc: StarConfig, e):
    e = sc._idx(e)
    if sc.s[e] != STAR:
        raise ValueError(f"edge {e} is not STAR")
    return sc, sc._resolve(e)


def walker_arrive(sc: StarConfig, w, init: bool = False) -> StarConfig:
    w = sc.t.vertex_index(w) if isinstance(w, tuple) else w
    if not init:
        t = sc.t
        v = sc.walker
        if w != v:
            if w not in t.nbr[v]:
                raise ValueError("target is not a neighbour of the walker")
            e = t.inc[v][t.nbr[v].index(w)]
            if sc.s[e] != OPEN:
                raise ValueError("walker cannot cross a closed edge")
    sc.arrive(w)
    sc.check_constraint()
    return sc


def project(sc: StarConfig, draws: UniformStream = None):
    """(walker, EdgeConfig) with every STAR edge sampled open w.p. p_min/p_star.

    Stored marks are used where present, so projecting is consistent with a
    later resolution of the same edge; unmarked STAR edges use draws (default:
    the process's projection stream, separate from its resolution stream).
    """
    if draws is None:
        draws = sc.pdraws
    out = []
    thr = sc.thr
    for x, m in zip(sc.s, sc.mark):
        if x == STAR:
            u = m if m is not None else draws()
            out.append(OPEN if u < thr else CLOSED)
        else:
            out.append(x)
    return sc.t.coords[sc.walker], EdgeConfig(sc.spec, out)


def export_star(sc: StarConfig, params: RCParams) -> str:
    t = sc.t
    lines = [f"# n={t.n} d={t.d} p={params.p!r} q={params.q!r} walker={' '.join(map(str, t.coords[sc.walker]))}"]
    for e, x in enumerate(sc.s):
        eid = t.edge_id(e)
        lines.append(f"{' '.join(map(str, eid.base))} {eid.axis} {SYMBOLS[x]}")
    return "\n".join(lines) + "\n"
