"""Counter-based random streams for edge clocks, the walker clock and lazy draws.

All randomness is drawn from numpy's Philox bit generator, whose state is set
directly from a (key, counter) pair before every block. The key is
``(root_seed, replica)``; the counter names the block:

* edge clock of edge ``e``, bucket ``b``:   ``(0, b, e, EDGE)``
* walker clock, bucket ``b``:                ``(0, b, 0, WALKER)``
* fresh uniforms for tag ``t``, block ``j``: ``(0, j, FRESH, code(t))``

The edge clocks live in scaled time ``s = t*mu``; scaled time is cut into
buckets of length ``BUCKET``. A bucket holds ``N ~ Poisson(BUCKET)`` sorted
uniform times followed by the ``U*`` and ``U`` marks, which together form a
rate-1 Poisson process in scaled time. Philox advances the first counter word
while a block is drawn, so block names never use it. Windows therefore compose exactly, any
part of the stream can be read without generating what precedes it, and a
change of ``mu`` only rescales the time axis (common random numbers).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

GENERATOR_NAME = "numpy.random.Philox(4x64-10)"
BUCKET = 4.0
WALKER_BUCKET = 32.0
FRESH_BLOCK = 64

EDGE = 1
WALKER = 2
FRESH = 1 << 63
_MASK = (1 << 64) - 1


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class StreamSeed:
    root_seed: int
    replica: int = 0

    def key(self):
        return np.array([self.root_seed & _MASK, self.replica & _MASK], dtype=np.uint64)

    def with_replica(self, replica):
        return StreamSeed(self.root_seed, replica)


class UpdateEvent(NamedTuple):
    time: float
    edge: object
    u_star: float
    u: float


class WalkerEvent(NamedTuple):
    time: float
    direction: int


def tag_code(tag) -> int:
    if isinstance(tag, str):
        return (1 << 32) | zlib.crc32(tag.encode())
    tag = int(tag)
    if tag < 0:
        raise StreamError("tag must be nonnegative")
    return tag


class _Block:
    """A reusable Philox generator whose counter is reset for every block."""

    def __init__(self, seed: StreamSeed):
        self.key = seed.key()
        self.bg = np.random.Philox(key=self.key)
        self.gen = np.random.Generator(self.bg)
        self._buf = np.zeros(4, dtype=np.uint64)

    def at(self, w0, w1, w2, w3):
        self.bg.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.array([w0, w1, w2, w3], dtype=np.uint64), "key": self.key},
            "buffer": self._buf,
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self.gen


def _check_window(t0, t1):
    if not t0 < t1:
        raise StreamError(f"empty or inverted window [{t0}, {t1})")


class EventSource:
    """Cached access to every stream of one replica.

    Edges are addressed by integer index (see :class:`dynrc.torus.Torus`).
    ``mu`` fixes the conversion between scaled and real time.
    """

    def __init__(self, seed: StreamSeed, mu: float, two_d: int = 2):
        if not mu > 0:
            raise StreamError("mu must be positive")
        self.seed = seed
        self.mu = float(mu)
        self.two_d = int(two_d)
        self._blk = _Block(seed)
        self._edge = {}
        self._walk = {}
        self._fresh = {}

    # edge clocks
    def edge_bucket(self, e: int, b: int):
        """(times, u_star, u) lists of the scaled-time bucket b of edge e, in real time."""
        key = (e, b)
        hit = self._edge.get(key)
        if hit is not None:
            return hit
        g = self._blk.at(0, b, e, EDGE)
        k = int(g.poisson(BUCKET))
        if k:
            x = g.random(3 * k)
            s = np.sort(x[:k]) * BUCKET + b * BUCKET
            out = ((s / self.mu).tolist(), x[k:2 * k].tolist(), x[2 * k:].tolist())
        else:
            out = ([], [], [])
        self._edge[key] = out
        return out

    def edge_events(self, e: int, t0: float, t1: float, label=None) -> list:
        """Updates of edge e with real time in [t0, t1); label replaces e in the events."""
        _check_window(t0, t1)
        out = []
        if t1 <= 0:
            return out
        lab = e if label is None else label
        b0 = max(0, int(t0 * self.mu // BUCKET))
        b1 = int(t1 * self.mu // BUCKET)
        for b in range(b0, b1 + 1):
            ts, us, uu = self.edge_bucket(e, b)
            for t, a, c in zip(ts, us, uu):
                if t0 <= t < t1:
                    out.append(UpdateEvent(t, lab, a, c))
        return out

    def last_before(self, e: int, t: float, label=None):
        """Last update of edge e with time < t, or None; scans buckets backwards."""
        if t <= 0:
            return None
        b = int(t * self.mu // BUCKET)
        while b >= 0:
            ts, us, uu = self.edge_bucket(e, b)
            for j in range(len(ts) - 1, -1, -1):
                if ts[j] < t:
                    return UpdateEvent(ts[j], e if label is None else label, us[j], uu[j])
            b -= 1
        return None

    # walker clock
    def walker_bucket(self, b: int):
        hit = self._walk.get(b)
        if hit is not None:
            return hit
        g = self._blk.at(0, b, 0, WALKER)
        k = int(g.poisson(WALKER_BUCKET))
        if k:
            x = g.random(2 * k)
            t = np.sort(x[:k]) * WALKER_BUCKET + b * WALKER_BUCKET
            dirs = (x[k:] * self.two_d).astype(np.int64)
            out = (t.tolist(), dirs.tolist())
        else:
            out = ([], [])
        self._walk[b] = out
        return out

    def walker_events(self, t0: float, t1: float) -> list:
        _check_window(t0, t1)
        out = []
        if t1 <= 0:
            return out
        b0 = max(0, int(t0 // WALKER_BUCKET))
        b1 = int(t1 // WALKER_BUCKET)
        for b in range(b0, b1 + 1):
            ts, ds = self.walker_bucket(b)
            for t, dirn in zip(ts, ds):
                if t0 <= t < t1:
                    out.append(WalkerEvent(t, dirn))
        return out

    # lazy uniforms
    def fresh(self, tag, counter: int) -> float:
        code = tag_code(tag)
        j, r = divmod(int(counter), FRESH_BLOCK)
        key = (code, j)
        blk = self._fresh.get(key)
        if blk is None:
            blk = self._blk.at(0, j, FRESH, code).random(FRESH_BLOCK).tolist()
            self._fresh[key] = blk
        return blk[r]

    def uniforms(self, tag) -> "UniformStream":
        return UniformStream(self, tag)

    def clear(self):
        self._edge.clear()
        self._walk.clear()
        self._fresh.clear()


class UniformStream:
    """Sequential reader over fresh uniforms of one tag; the counter never repeats."""

    def __init__(self, source: EventSource, tag, start: int = 0):
        self.source = source
        self.tag = tag
        self.counter = start

    def __call__(self) -> float:
        x = self.source.fresh(self.tag, self.counter)
        self.counter += 1
        return x


_SOURCES = {}


def source_for(seed: StreamSeed, mu: float, two_d: int = 2) -> EventSource:
    key = (seed, float(mu), two_d)
    src = _SOURCES.get(key)
    if src is None:
        if len(_SOURCES) > 256:
            _SOURCES.clear()
        src = _SOURCES[key] = EventSource(seed, mu, two_d)
    return src


def edge_events(seed: StreamSeed, mu: float, e, window, spec=None) -> list:
    """Ordered updates of edge e in window [t0, t1).

    e may be an integer edge index or an EdgeId (then spec is required);
    the events carry e as given.
    """
    t0, t1 = window
    if not mu > 0:
        raise StreamError("mu must be positive")
    _check_window(t0, t1)
    if isinstance(e, tuple):
        if spec is None:
            raise StreamError("spec is required to index an EdgeId")
        from .torus import torus
        idx = torus(spec).edge_index(e)
        two_d = 2 * spec.d
    else:
        idx, two_d = int(e), 2
    return source_for(seed, mu, two_d).edge_events(idx, t0, t1, label=e)


def walker_events(seed: StreamSeed, window, d: int = 1) -> list:
    t0, t1 = window
    _check_window(t0, t1)
    return source_for(seed, 1.0, 2 * d).walker_events(t0, t1)


def fresh_uniform(seed: StreamSeed, tag, counter: int) -> float:
    return source_for(seed, 1.0).fresh(tag, counter)
