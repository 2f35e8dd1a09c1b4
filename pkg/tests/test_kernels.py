import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import array_crossing
from stretchperc import _kernels as K


@settings(max_examples=80, deadline=None)
@given(w=st.integers(1, 6), h=st.integers(1, 6), p=st.floats(0.2, 0.8), seed=st.integers(0, 10**6),
       direction=st.sampled_from(["h", "v"]))
def test_rect_crossing_matches_bfs(w, h, p, seed, direction):
    rng = np.random.default_rng(seed)
    H = rng.random((h + 2, w + 2)) < p
    V = rng.random((h + 2, w + 2)) < p
    got = K.rect_crossing(H, V, 1, 1 + w, 1, 1 + h, 0 if direction == "h" else 1)
    assert bool(got) == array_crossing(H, V, 1, 1 + w, 1, 1 + h, direction)


def test_batch_matches_single(rng):
    H = rng.random((50, 5, 7)) < 0.5
    V = rng.random((50, 5, 7)) < 0.5
    batch = K.rect_crossing_batch(H, V, 0, 7, 0, 5, 0)
    single = [K.rect_crossing(H[r], V[r], 0, 7, 0, 5, 0) for r in range(50)]
    assert list(batch) == single


def _bfs_radius(H, V, n):
    from collections import deque
    seen = {(0, 0)}
    q = deque([(0, 0)])
    best = 0
    while q:
        x, y = q.popleft()
        best = max(best, x, y)
        if best >= n:
            return n
        nbrs = []
        if H[y, x]:
            nbrs.append((x + 1, y))
        if V[y, x]:
            nbrs.append((x, y + 1))
        if x > 0 and H[y, x - 1]:
            nbrs.append((x - 1, y))
        if y > 0 and V[y - 1, x]:
            nbrs.append((x, y - 1))
        for u in nbrs:
            if u not in seen:
                seen.add(u)
                q.append(u)
    return best


@pytest.mark.parametrize("p", [0.3, 0.5, 0.7])
def test_cluster_radius_matches_bfs(p, rng):
    n = 12
    for _ in range(40):
        H = rng.random((n + 1, n + 1)) < p
        V = rng.random((n + 1, n + 1)) < p
        assert min(K.cluster_radius(H, V, n, n), n) == _bfs_radius(H, V, n)


def test_hashed_uniforms_range_and_mean():
    uh, uv = K.hashed_uniforms(np.uint64(77), 200, 200)
    assert uh.min() >= 0 and uh.max() < 1
    assert abs(uh.mean() - 0.5) < 0.01 and abs(uv.mean() - 0.5) < 0.01
    assert abs(np.corrcoef(uh.ravel(), uv.ravel())[0, 1]) < 0.02


@pytest.mark.parametrize("key", [1, 2, 3, 99, 12345])
@pytest.mark.parametrize("p", [0.4, 0.5, 0.6])
def test_origin_radius_lazy_matches_materialized(key, p):
    n = 40
    ph = np.full(n + 1, p)
    uh, uv = K.hashed_uniforms(np.uint64(key), n + 1, n + 1)
    radius, steps = K.origin_radius_lazy(np.uint64(key), ph, p, n, 10**7)
    assert radius == min(K.cluster_radius(uh < p, uv < p, n, n), n)
    assert steps >= 1


def test_origin_radius_budget_censors():
    ph = np.ones(1000)
    radius, steps = K.origin_radius_lazy(np.uint64(5), ph, 1.0, 1000, 50)
    assert radius == -1


@settings(max_examples=60, deadline=None)
@given(key=st.integers(1, 2**40), width=st.integers(1, 5), rows=st.integers(1, 30),
       p=st.floats(0.3, 0.95), direction=st.integers(0, 1))
def test_strip_crossing_lazy_matches_materialized(key, width, rows, p, direction):
    rng = np.random.default_rng(key)
    ph = np.clip(p + 0.1 * rng.standard_normal(width), 0, 1)
    pv = np.full(width, 1 - p / 2)
    uh, uv = K.hashed_uniforms(np.uint64(key), width, rows)
    H = uh < ph[None, :]
    V = uv < pv[None, :]
    expected = K.rect_crossing(H, V, 0, width, 0, rows, direction)
    got = K.strip_crossing_lazy(np.uint64(key), ph, pv, width, rows, direction)
    assert bool(got) == bool(expected)
    assert bool(got) == array_crossing(H, V, 0, width, 0, rows, "h" if direction == 0 else "v")
