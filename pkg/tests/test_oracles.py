import numpy as np
import pytest

from conftest import brute_probability
from stretchperc import oracles
from stretchperc.renewal import parse_spec


def test_transition_matrix_is_stochastic():
    P = oracles.transition_matrix(parse_spec("pmf:1=0.2,2=0.3,4=0.5"))
    assert P.shape == (4, 4)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.allclose(P[0], [0.2, 0.3, 0.0, 0.5])


def test_stationary_vector_is_invariant():
    spec = parse_spec("pmf:1=0.2,2=0.3,4=0.5")
    P = oracles.transition_matrix(spec)
    pi = oracles.stationary_vector(spec)
    assert np.allclose(pi @ P, pi)
    assert pi.sum() == pytest.approx(1.0)


def test_uniform_eigenvalue():
    eig = np.sort(np.linalg.eigvals(oracles.transition_matrix(parse_spec("uniform:1,2"))).real)
    assert np.allclose(eig, [-0.5, 1.0])


def test_cylinder_probability_conflicting_request_is_zero():
    assert oracles.cylinder_probability(parse_spec("uniform:1,2"), [2, 2], [0, 1]) == 0.0


def test_window_law_sums_to_one():
    law = oracles.stationary_window_law(parse_spec("uniform:1,3"), 3)
    assert sum(law.values()) == pytest.approx(1.0)


def test_rectangle_edges_layout():
    edges = oracles.rectangle_edges(2, 1)
    assert [kind for *_, kind, _ in edges] == ["h", "h", "v", "v"]


@pytest.mark.parametrize("w,h", [(1, 1), (2, 1), (1, 2), (2, 2), (3, 2), (2, 3)])
@pytest.mark.parametrize("direction", ["h", "v"])
def test_enumeration_matches_independent_bfs(w, h, direction, rng):
    ph = rng.uniform(0.1, 0.9, w)
    pv = rng.uniform(0.1, 0.9, w)
    got = oracles.exact_crossing_probability(w, h, direction, ph, pv)
    assert got == pytest.approx(brute_probability(w, h, direction, ph, pv), abs=1e-12)


def test_frozen_crossing_values():
    # frozen from the independent enumerator in conftest
    assert oracles.exact_crossing_probability(1, 1, "h", [0.3], [0.3]) == pytest.approx(0.3)
    assert oracles.exact_crossing_probability(2, 1, "h", [0.5] * 2, [0.5] * 2) == pytest.approx(0.25)
    assert oracles.exact_crossing_probability(2, 2, "h", [0.5] * 2, [0.5] * 2) == pytest.approx(0.5)
    assert oracles.exact_crossing_probability(3, 2, "h", [0.7] * 3, [0.7] * 3) == pytest.approx(
        0.70319116, abs=1e-8)
    assert oracles.exact_crossing_probability(2, 3, "v", [0.25, 0.125], [0.5, 0.5]) == pytest.approx(
        0.28125)


def test_enumeration_refuses_large_boxes():
    with pytest.raises(ValueError):
        oracles.crossing_indicator_table(4, 3, "h")


def test_enumerate_configurations():
    c = oracles.enumerate_configurations(3)
    assert c.shape == (8, 3)
    assert len({tuple(r) for r in c}) == 8
