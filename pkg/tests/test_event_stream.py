import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynrc.event_stream import (BUCKET, EDGE, WALKER_BUCKET, EventSource, StreamError, StreamSeed, edge_events,
                                fresh_uniform, tag_code, walker_events)


def _philox_bucket(root, replica, e, b):
    """Rebuild an edge bucket straight from numpy with the documented counter layout."""
    key = np.array([root, replica], dtype=np.uint64)
    bg = np.random.Philox(key=key)
    st_ = bg.state
    st_["state"]["counter"] = np.array([0, b, e, EDGE], dtype=np.uint64)
    st_["buffer_pos"] = 4
    bg.state = st_
    g = np.random.Generator(bg)
    k = int(g.poisson(BUCKET))
    x = g.random(3 * k)
    return np.sort(x[:k]) * BUCKET + b * BUCKET, x[k:2 * k], x[2 * k:]


def test_bucket_layout_matches_numpy():
    src = EventSource(StreamSeed(11, 3), 1.0)
    for e, b in [(0, 0), (5, 2), (17, 9)]:
        ts, us, uu = src.edge_bucket(e, b)
        ets, eus, euu = _philox_bucket(11, 3, e, b)
        assert np.allclose(ts, ets) and np.allclose(us, eus) and np.allclose(uu, euu)


def test_deterministic():
    a = edge_events(StreamSeed(1), 0.5, 3, (0, 40))
    b = edge_events(StreamSeed(1), 0.5, 3, (0, 40))
    assert a == b
    assert a != edge_events(StreamSeed(1, 1), 0.5, 3, (0, 40))


def test_mu_rescales_time():
    a = edge_events(StreamSeed(4), 1.0, 2, (0, 30))
    b = edge_events(StreamSeed(4), 0.25, 2, (0, 120))
    assert len(a) == len(b)
    assert all(math.isclose(x.time * 4, y.time) and x.u == y.u for x, y in zip(a, b))


def test_bad_windows():
    with pytest.raises(StreamError):
        edge_events(StreamSeed(0), 1.0, 0, (3, 3))
    with pytest.raises(StreamError):
        edge_events(StreamSeed(0), 0.0, 0, (0, 1))
    with pytest.raises(StreamError):
        tag_code(-1)


def test_edge_rate():
    n = sum(len(edge_events(StreamSeed(2), 0.5, e, (0, 2000))) for e in range(10))
    mean = 10 * 2000 * 0.5
    assert abs(n - mean) < 4 * math.sqrt(mean)


def test_walker_rate_and_directions():
    evs = walker_events(StreamSeed(3), (0, 4000), d=2)
    assert abs(len(evs) - 4000) < 4 * math.sqrt(4000)
    counts = np.bincount([e.direction for e in evs], minlength=4)
    assert counts.min() > 900
    assert all(a.time < b.time for a, b in zip(evs, evs[1:]))


def test_fresh_uniforms():
    xs = [fresh_uniform(StreamSeed(5), "tag", j) for j in range(200)]
    assert xs == [fresh_uniform(StreamSeed(5), "tag", j) for j in range(200)]
    assert len(set(xs)) == 200 and all(0 <= x < 1 for x in xs)
    assert xs[0] != fresh_uniform(StreamSeed(5), "other", 0)


@given(st.floats(0, 50), st.floats(0.01, 30), st.floats(0.01, 30), st.integers(0, 5))
def test_windows_compose(a, l1, l2, e):
    s = StreamSeed(9)
    b, c = a + l1, a + l1 + l2
    whole = edge_events(s, 0.7, e, (a, c))
    assert whole == edge_events(s, 0.7, e, (a, b)) + edge_events(s, 0.7, e, (b, c))
    ws = walker_events(s, (a, c))
    assert ws == walker_events(s, (a, b)) + walker_events(s, (b, c))
    assert all(a <= x.time < c for x in whole)


@given(st.floats(0.0, 200.0), st.integers(0, 3))
def test_last_before_matches_scan(t, e):
    src = EventSource(StreamSeed(13), 0.3)
    evs = src.edge_events(e, 0.0, t) if t > 0 else []
    last = src.last_before(e, t)
    assert last == (evs[-1] if evs else None)


def test_walker_bucket_length():
    src = EventSource(StreamSeed(0), 1.0)
    ts, ds = src.walker_bucket(1)
    assert all(WALKER_BUCKET <= x < 2 * WALKER_BUCKET for x in ts)
    assert set(ds) <= {0, 1}
