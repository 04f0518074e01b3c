"""Event-driven evolution of the walker together with its environment.

The same loop drives the plain process (:class:`PlainState`) and the star
process (:class:`dynrc.star_process.StarConfig`); both expose ``apply_edge``,
``walker_step`` and ``walker``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .event_stream import BUCKET, WALKER_BUCKET, EventSource, StreamSeed
from .random_cluster import EdgeConfig, RCParams, cut_edge_idx
from .torus import torus


class PlainState:
    """Walker position plus an open/closed configuration (mutated in place)."""

    __slots__ = ("spec", "t", "params", "walker", "s")

    def __init__(self, cfg: EdgeConfig, walker, params: RCParams):
        self.spec = cfg.spec
        self.t = cfg.torus
        self.params = params
        self.walker = self.t.vertex_index(walker) if isinstance(walker, tuple) else walker
        self.s = list(cfg.s)

    def copy(self):
        return PlainState(EdgeConfig(self.spec, self.s), self.walker, self.params)

    def apply_edge(self, e, u_star, u):
        p = self.params
        if u >= p.p_max:
            self.s[e] = 0
        elif u < p.p_min:
            self.s[e] = 1
        else:
            self.s[e] = 1 if u < (p.p_cut if cut_edge_idx(self.t, self.s, e) else p.p) else 0

    def walker_step(self, dirn):
        v = self.walker
        if self.s[self.t.inc[v][dirn]] != 1:
            return None
        self.walker = w = self.t.nbr[v][dirn]
        return w

    def edge_config(self):
        return EdgeConfig(self.spec, self.s)

    def snapshot(self):
        return self.walker, list(self.s)


@dataclass
class Trajectory:
    start: tuple
    t0: float = 0.0
    jumps: list = field(default_factory=list)      # (time, from, to) as vertex tuples
    snapshots: dict = field(default_factory=dict)  # time -> state.snapshot()
    end: float = 0.0

    @property
    def samples(self):
        out = [(self.t0, self.start)]
        out += [(t, b) for t, _, b in self.jumps]
        return out

    def position_at(self, time):
        pos = self.start
        for t, _, b in self.jumps:
            if t > time:
                break
            pos = b
        return pos

    def to_csv_rows(self):
        return [(t,) + tuple(x) for t, x in self.samples]


def merged_events(src: EventSource, ne: int, t0: float, t1: float, walker=True):
    """Yield (time, kind, a, b, c) with kind 0 for edges, 1 for the walker.

    Edge events (time, 0, e, u_star, u) come before walker events at equal
    times, and equal-time edge events in canonical edge order.
    """
    mu = src.mu
    span = BUCKET / mu
    b = max(0, int(t0 * mu // BUCKET))
    while b * span < t1:
        lo, hi = max(t0, b * span), min(t1, (b + 1) * span)
        evs = []
        for e in range(ne):
            ts, us, uu = src.edge_bucket(e, b)
            for tt, a, c in zip(ts, us, uu):
                if t0 <= tt < t1:
                    evs.append((tt, 0, e, a, c))
        if walker and lo < hi:
            for wb in range(int(lo // WALKER_BUCKET), int(hi // WALKER_BUCKET) + 1):
                ts, ds = src.walker_bucket(wb)
                for tt, dirn in zip(ts, ds):
                    if lo <= tt < hi:
                        evs.append((tt, 1, dirn, 0.0, 0.0))
        evs.sort()
        yield from evs
        b += 1


def evolve(state, seed: StreamSeed, params: RCParams, T: float, snapshot_times=(),
           t0: float = 0.0, source: EventSource = None, inplace=False, check=False):
    """Run state over [t0, t0+T]; returns (final state, Trajectory).

    Snapshots at time s record the state after every event with time <= s.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if not inplace:
        state = state.copy()
    t = state.t
    if source is None:
        source = EventSource(seed, params.mu, 2 * t.d)
    t1 = t0 + T
    snaps = sorted(s for s in snapshot_times if t0 <= s <= t1)
    traj = Trajectory(t.coords[state.walker], t0)
    si = 0
    coords = t.coords
    apply_edge, walker_step = state.apply_edge, state.walker_step
    for ev in merged_events(source, t.ne, t0, t1):
        tt = ev[0]
        while si < len(snaps) and snaps[si] < tt:
            traj.snapshots[snaps[si]] = state.snapshot()
            si += 1
        if ev[1] == 0:
            apply_edge(ev[2], ev[3], ev[4])
        else:
            v = state.walker
            w = walker_step(ev[2])
            if w is not None:
                traj.jumps.append((tt, coords[v], coords[w]))
        if check and hasattr(state, "check_constraint"):
            state.check_constraint()
    while si < len(snaps):
        traj.snapshots[snaps[si]] = state.snapshot()
        si += 1
    traj.end = t1
    return state, traj


def evolve_pair_independent(states, seeds, params: RCParams, T: float, t0: float = 0.0):
    out = []
    for st, sd in zip(states, seeds):
        out.append(evolve(st, sd, params, T, t0=t0))
    return [o[0] for o in out], [o[1] for o in out]


def jump_times(traj: Trajectory):
    return [j[0] for j in traj.jumps]
