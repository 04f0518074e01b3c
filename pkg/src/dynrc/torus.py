"""Geometry of the d-dimensional torus of side n.

Vertices are tuples of d integers reduced mod n. Every undirected edge has a
canonical representation ``EdgeId(base, axis)`` joining ``base`` and
``base + e_axis``. Edges are indexed lexicographically by (base, axis), which
is also the order in which per-edge random streams are keyed.

The simulation engines work with integer indices; the tuple API is kept for
callers and tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence, Union

L1 = "L1"
LINF = "Linf"


class TorusError(ValueError):
    pass


@dataclass(frozen=True)
class TorusSpec:
    n: int
    d: int

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 3:
            raise TorusError(f"n must be an integer >= 3, got {self.n!r}")
        if not isinstance(self.d, int) or self.d < 1:
            raise TorusError(f"d must be an integer >= 1, got {self.d!r}")

    @property
    def num_vertices(self) -> int:
        return self.n ** self.d

    @property
    def num_edges(self) -> int:
        return self.d * self.n ** self.d


Vertex = tuple


class EdgeId(NamedTuple):
    base: tuple
    axis: int

    def __repr__(self):
        return f"edge({','.join(map(str, self.base))};{self.axis})"


def _check_vertex(spec: TorusSpec, v) -> tuple:
    v = tuple(v)
    if len(v) != spec.d:
        raise TorusError(f"vertex {v} has wrong dimension for d={spec.d}")
    for c in v:
        if not isinstance(c, (int,)) and not hasattr(c, "__index__"):
            raise TorusError(f"vertex {v} has non-integer coordinate")
        if not 0 <= c < spec.n:
            raise TorusError(f"vertex {v} has coordinate outside [0, {spec.n})")
    return tuple(int(c) for c in v)


class Torus:
    """Integer-indexed adjacency tables for one TorusSpec.

    Direction ``2*axis`` is the minus step along ``axis`` and ``2*axis+1`` the
    plus step, so ``nbr[v][dirn]`` and ``inc[v][dirn]`` follow the ordering of
    :func:`neighbors`.
    """

    def __init__(self, spec: TorusSpec):
        self.spec = spec
        n, d = spec.n, spec.d
        self.n, self.d = n, d
        self.nv = n ** d
        self.ne = d * self.nv
        self.strides = tuple(n ** (d - 1 - k) for k in range(d))
        self.coords = [self._coords(i) for i in range(self.nv)]
        self.nbr = []
        self.inc = []
        for i in range(self.nv):
            row_n, row_e = [], []
            c = self.coords[i]
            for axis in range(d):
                minus = list(c)
                minus[axis] = (c[axis] - 1) % n
                mi = self._index(minus)
                plus = list(c)
                plus[axis] = (c[axis] + 1) % n
                pi = self._index(plus)
                row_n += [mi, pi]
                row_e += [mi * d + axis, i * d + axis]
            self.nbr.append(tuple(row_n))
            self.inc.append(tuple(row_e))
        # endpoints of edge e: (base, base + e_axis)
        self.ends = []
        for e in range(self.ne):
            b, axis = divmod(e, d)
            self.ends.append((b, self.nbr[b][2 * axis + 1]))

    def _index(self, c) -> int:
        return sum(int(x) * s for x, s in zip(c, self.strides))

    def _coords(self, i: int) -> tuple:
        out = []
        for s in self.strides:
            q, i = divmod(i, s)
            out.append(q)
        return tuple(out)

    def vertex_index(self, v) -> int:
        return self._index(v)

    def edge_index(self, e: EdgeId) -> int:
        return self._index(e.base) * self.d + e.axis

    def edge_id(self, e: int) -> EdgeId:
        b, axis = divmod(e, self.d)
        return EdgeId(self.coords[b], axis)

    def other_end(self, e: int, v: int) -> int:
        a, b = self.ends[e]
        return b if v == a else a

    def direction_of(self, v: int, e: int) -> int:
        return self.inc[v].index(e)

    # offsets are d-tuples of integers
    def shift(self, v: int, offset) -> int:
        c = self.coords[v]
        n = self.n
        return self._index([(x + o) % n for x, o in zip(c, offset)])

    def shift_edge(self, e: int, offset) -> int:
        b, axis = divmod(e, self.d)
        return self.shift(b, offset) * self.d + axis

    def offset(self, u: int, v: int) -> tuple:
        """Offset o with shift(u, o) == v, coordinates in [0, n)."""
        n = self.n
        return tuple((b - a) % n for a, b in zip(self.coords[u], self.coords[v]))

    def dist(self, u: int, v: int, norm: str = L1) -> int:
        n = self.n
        parts = []
        for a, b in zip(self.coords[u], self.coords[v]):
            x = abs(a - b)
            parts.append(min(x, n - x))
        return max(parts) if norm == LINF else sum(parts)

    def ball(self, center: int, r: int, norm: str = LINF) -> list:
        return [v for v in range(self.nv) if self.dist(center, v, norm) <= r]

    def ball_edges(self, center: int, r: int, norm: str = LINF) -> list:
        inside = set(self.ball(center, r, norm))
        return [e for e in range(self.ne) if self.ends[e][0] in inside and self.ends[e][1] in inside]


@lru_cache(maxsize=64)
def torus(spec: TorusSpec) -> Torus:
    return Torus(spec)


def neighbors(spec: TorusSpec, v) -> list:
    v = _check_vertex(spec, v)
    t = torus(spec)
    i = t.vertex_index(v)
    return [(t.coords[w], t.edge_id(e)) for w, e in zip(t.nbr[i], t.inc[i])]


def dist(spec: TorusSpec, u, v, norm: str = L1) -> int:
    if norm not in (L1, LINF):
        raise TorusError(f"unknown norm {norm!r}")
    u = _check_vertex(spec, u)
    v = _check_vertex(spec, v)
    t = torus(spec)
    return t.dist(t.vertex_index(u), t.vertex_index(v), norm)


def ball_edges(spec: TorusSpec, center, r: int, norm: str = L1) -> set:
    if r < 0:
        raise TorusError("radius must be nonnegative")
    if norm not in (L1, LINF):
        raise TorusError(f"unknown norm {norm!r}")
    center = _check_vertex(spec, center)
    t = torus(spec)
    return {t.edge_id(e) for e in t.ball_edges(t.vertex_index(center), r, norm)}


def translate(spec: TorusSpec, offset: Sequence[int], x: Union[tuple, EdgeId]):
    if len(offset) != spec.d:
        raise TorusError("offset has wrong dimension")
    n = spec.n
    if isinstance(x, EdgeId):
        return EdgeId(tuple((c + o) % n for c, o in zip(x.base, offset)), x.axis)
    x = _check_vertex(spec, x)
    return tuple((c + o) % n for c, o in zip(x, offset))
