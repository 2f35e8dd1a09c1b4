import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import array_crossing
from stretchperc.duality import (
    blocking_check,
    choose_kappa,
    contract,
    contract_window,
    contracted_width,
    contraction_law,
    dualize,
    enhance_window,
    homomorphism_violations,
    origin_reaches,
    sample_contracted,
    semicircuit_probe,
)
from stretchperc.percolation import EnvironmentWindow, Rectangle, edge_prob_arrays, sample_window
from stretchperc.renewal import parse_spec
from stretchperc.rng import Stream
from stretchperc.stats import within_sigmas


def test_contract_example():
    res = contract(EnvironmentWindow.from_gaps([0.5, 1, 0.3, 0.2, 2]), 1.0)
    assert res.J.tolist() == [2, 5]
    assert res.zeta.tolist() == [2, 3]
    assert res.group_of(6).tolist() == [0, 0, 1, 1, 1, -1]


def test_contract_without_large_gap_is_empty():
    res = contract(EnvironmentWindow.from_gaps([0.5, 0.2]), 1.0)
    assert res.empty and res.diagnostic


def test_choose_kappa():
    assert choose_kappa(parse_spec("geometric:0.5")) == 1.0
    assert choose_kappa(parse_spec("pmf:0.25=0.3,0.5=0.4,2=0.3")) == 0.5


def _fractional_env(seed, n=40):
    rng = np.random.default_rng(seed)
    return EnvironmentWindow.from_gaps(rng.choice([0.3, 0.6, 1.5, 2.0], size=n))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.floats(0.2, 0.95))
def test_enhancement_dominates_and_contraction_is_homomorphic(seed, p):
    env = _fractional_env(seed)
    win = sample_window(env, p, (30, 8), "inhomogeneous", Stream(seed))
    res = contract(env, 1.0)
    if contracted_width(res, win.width) == 0:
        return
    enh = enhance_window(win, 1.0)
    assert np.all(enh.h >= win.h) and np.all(enh.v >= win.v)
    con = contract_window(enh, res)
    assert homomorphism_violations(enh, con, res) == 0


def test_contraction_law_identity():
    env = _fractional_env(3)
    res = contract(env, 1.0)
    width = 30
    Wc = contracted_width(res, width)
    lh, lv = contraction_law(env, res, 0.7, width)
    ph, pv = edge_prob_arrays(res.Xi, 0.7, "contracted", Wc, 1.0)
    assert np.allclose(lh, ph) and np.allclose(lv, pv)


def test_contracted_window_marginals():
    env = _fractional_env(4)
    res = contract(env, 1.0)
    win = sample_window(env, 0.6, (30, 4000), "inhomogeneous", Stream(8))
    con = contract_window(enhance_window(win, 1.0), res)
    lh, lv = contraction_law(env, res, 0.6, 30)
    for c in range(con.width):
        assert within_sigmas(con.h[:, c].mean(), lh[c], con.height, k=4)
        assert within_sigmas(con.v[:, c].mean(), lv[c], con.height, k=4)


def _contracted(seed, W=16, H=16, p=0.6):
    rng = np.random.default_rng(seed)
    res = contract(EnvironmentWindow.from_gaps(rng.choice([0.5, 1.0, 2.0], size=4 * W)), 1.0)
    return res, sample_contracted(res, p, W, H, Stream(seed))


def test_dual_is_complement():
    res, win = _contracted(1)
    dual = dualize(win, res, Stream(2))
    assert dual.complement_ok()


def test_dual_probabilities_shape():
    res, win = _contracted(2)
    dual = dualize(win, res, Stream(2))
    hp, vp = dual.edge_probabilities()
    assert hp.shape == vp.shape == (17, 17)
    assert np.allclose(hp[1:, :16], 1 - win.pv[None, :])


def test_exhaustive_xor_on_interior_box():
    res, win = _contracted(5, W=4, H=4)
    box = Rectangle(1, 3, 1, 3)
    edges = [(kind, x, y) for y in (1, 2) for x in (1, 2) for kind in "hv"]
    for bits in itertools.product((False, True), repeat=len(edges)):
        h, v = win.h.copy(), win.v.copy()
        for (kind, x, y), b in zip(edges, bits):
            (h if kind == "h" else v)[y, x] = b
        w2 = type(win)(**{**win.__dict__, "h": h, "v": v})
        dual = dualize(w2, res, Stream(0))
        for direction in "hv":
            verdict = blocking_check(w2, dual, box, direction)
            assert verdict.xor
            assert verdict.primal == array_crossing(h, v, 1, 3, 1, 3, direction)


def test_blocking_refuses_boundary_box():
    res, win = _contracted(6, W=4, H=4)
    dual = dualize(win, res, Stream(0))
    with pytest.raises(ValueError):
        blocking_check(win, dual, Rectangle(0, 2, 1, 3))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.floats(0.3, 0.8), r=st.integers(1, 12))
def test_semicircuit_iff_origin_blocked(seed, p, r):
    res, win = _contracted(seed, W=12, H=12, p=p)
    dual = dualize(win, res, Stream(seed + 1))
    assert semicircuit_probe(dual, r) != origin_reaches(win, r)


def test_dualize_rejects_other_formulations():
    env = EnvironmentWindow.from_gaps(np.ones(10, dtype=np.int64))
    win = sample_window(env, 0.5, (4, 4), "inhomogeneous", Stream(0))
    with pytest.raises(ValueError):
        dualize(win, contract(env, 1.0), Stream(0))
