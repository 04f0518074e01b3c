import pytest
from hypothesis import given, strategies as st

from dynrc.torus import L1, LINF, EdgeId, TorusError, TorusSpec, ball_edges, dist, neighbors, torus, translate

specs = st.sampled_from([TorusSpec(3, 1), TorusSpec(5, 1), TorusSpec(4, 2), TorusSpec(5, 2), TorusSpec(3, 3)])


def vertex(spec):
    return st.tuples(*[st.integers(0, spec.n - 1)] * spec.d)


@st.composite
def spec_and_points(draw, k=2):
    spec = draw(specs)
    return (spec,) + tuple(draw(vertex(spec)) for _ in range(k))


def test_counts():
    s = TorusSpec(5, 2)
    assert s.num_vertices == 25
    assert s.num_edges == 50
    assert len(torus(s).ends) == 50


def test_small_n_rejected():
    with pytest.raises(TorusError):
        TorusSpec(2, 1)
    with pytest.raises(TorusError):
        TorusSpec(4, 0)


def test_neighbors_of_origin():
    nb = neighbors(TorusSpec(5, 2), (0, 0))
    assert sorted(v for v, _ in nb) == [(0, 1), (0, 4), (1, 0), (4, 0)]
    assert {e for _, e in nb} == {EdgeId((0, 0), 0), EdgeId((0, 0), 1), EdgeId((4, 0), 0), EdgeId((0, 4), 1)}


def test_distances():
    s = TorusSpec(6, 2)
    assert dist(s, (0, 0), (3, 5)) == 4
    assert dist(s, (0, 0), (3, 5), LINF) == 3
    with pytest.raises(TorusError):
        dist(s, (0, 0), (1, 1), "L7")


def test_ball_edges_l1_radius_one():
    assert len(ball_edges(TorusSpec(5, 2), (2, 2), 1, L1)) == 4
    assert len(ball_edges(TorusSpec(5, 2), (2, 2), 1, LINF)) == 12


def test_bad_vertex():
    with pytest.raises(TorusError):
        neighbors(TorusSpec(4, 2), (0,))


@given(spec_and_points(2))
def test_dist_symmetric_and_bounded(a):
    spec, u, v = a
    assert dist(spec, u, v) == dist(spec, v, u)
    assert dist(spec, u, v, LINF) <= dist(spec, u, v) <= spec.d * dist(spec, u, v, LINF)
    assert dist(spec, u, v) <= spec.d * (spec.n // 2)


@given(spec_and_points(3))
def test_translation_is_isometry(a):
    spec, u, v, o = a
    assert dist(spec, translate(spec, o, u), translate(spec, o, v)) == dist(spec, u, v)


@given(spec_and_points(1))
def test_neighbor_relation(a):
    spec, u = a
    nb = neighbors(spec, u)
    assert len(nb) == 2 * spec.d
    for w, e in nb:
        assert dist(spec, u, w) == 1
        assert u in (e.base, translate(spec, [int(j == e.axis) for j in range(spec.d)], e.base))


@given(specs)
def test_edge_index_roundtrip(spec):
    t = torus(spec)
    for e in range(t.ne):
        assert t.edge_index(t.edge_id(e)) == e
        a, b = t.ends[e]
        assert t.dist(a, b) == 1
        assert e in t.inc[a] and e in t.inc[b]
