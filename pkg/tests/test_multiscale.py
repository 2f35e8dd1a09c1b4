from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stretchperc.multiscale import (
    BlockLabelGrid,
    ParamError,
    ScaleSystem,
    block_indices,
    build_scales,
    coarsen,
    exact_p0,
    estimate_pk,
    feasible_gamma_range,
    floor_power,
    label_blocks,
    minimal_L0,
    param_violations,
    validate_L0,
    validate_params,
)
from stretchperc.percolation import EnvironmentWindow
from stretchperc.renewal import Geometric, parse_spec


def test_build_scales_frozen():
    assert build_scales(300, "1.2", 2) == [300, 900, 2700]


def test_build_scales_rejects_small_L0():
    with pytest.raises(ValueError):
        build_scales(10, "1.2", 1)


@settings(max_examples=200)
@given(L=st.integers(1, 10**12), p=st.integers(0, 7), q=st.integers(1, 7))
def test_floor_power_exact(L, p, q):
    m = floor_power(L, Fraction(p, q))
    assert m**q <= L**p < (m + 1) ** q


def test_valid_parameters_pass():
    params = validate_params("1", "0.1", "1.02", "0.99", "0.999")
    assert params.c2 > 0
    assert params.waived == ()


def test_acceptance_parameters_are_infeasible():
    bad = param_violations("1", "0.5", "1.2", "0.9", "0.95")
    assert any("gamma" in b for b in bad)
    assert any("c2" in b for b in bad)
    with pytest.raises(ParamError) as info:
        validate_params("1", "0.5", "1.2", "0.9", "0.95")
    assert info.value.violations == bad
    waived = validate_params("1", "0.5", "1.2", "0.9", "0.95", waive=True)
    assert waived.waived == tuple(bad)


def test_feasible_gamma_range():
    lo, hi = feasible_gamma_range("1")
    assert lo == 1 and hi == Fraction(6, 5)


def test_desk_heights_and_blocks():
    system = ScaleSystem.build(300, "1.2", 2, h=4)
    assert system.height(1) == 3600
    assert system.block(1, 2) == (1800, 2700)
    assert list(block_indices(system, 1, 1)) == [3, 4, 5]
    assert system.flag() == "desk"


def test_exact_log_heights_are_logarithmic():
    system = ScaleSystem.build(300, "1.2", 2, height_mode="exact_log", mu="0.9")
    assert system.log10_height(0) == pytest.approx(2.0)
    assert system.log10_height(2) > system.log10_height(1) > 100
    with pytest.raises(ValueError):
        system.height(1)


def _naive_coarsen(bad, m):
    out = []
    for j in range(len(bad) // m):
        idx = [i for i in range(m) if bad[j * m + i]]
        out.append(bool(idx) and idx[-1] - idx[0] >= 2)
    return np.array(out, dtype=bool)


@settings(max_examples=200)
@given(bits=st.lists(st.booleans(), min_size=3, max_size=40), m=st.integers(3, 6))
def test_coarsen_matches_naive(bits, m):
    bad = np.array(bits)
    assert np.array_equal(coarsen(bad, m), _naive_coarsen(bad, m))


def _system():
    return ScaleSystem.build(9, "1.5", 2)


@settings(max_examples=100, deadline=None)
@given(gaps=st.lists(st.integers(1, 30), min_size=30, max_size=80), where=st.floats(0, 1))
def test_labels_monotone_under_point_insertion(gaps, where):
    env = EnvironmentWindow.from_gaps(gaps)
    system = _system()
    if env.horizon + 1 < system.L[2]:
        return
    x = int(where * env.horizon)
    before = label_blocks(env, system)
    after = label_blocks(env.with_point(x), system)
    assert before.violations() == [] and after.violations() == []
    for k in range(3):
        assert np.all(after.good[k][: len(before.good[k])] >= before.good[k])


def test_label_dump_round_trip():
    rng = np.random.default_rng(1)
    env = EnvironmentWindow.from_gaps(rng.geometric(0.1, 400))
    grid = label_blocks(env, _system())
    back = BlockLabelGrid.load(grid.dump())
    assert back.L == grid.L
    assert all(np.array_equal(a, b) for a, b in zip(back.good, grid.good))


def test_violations_detect_bad_good_block():
    grid = BlockLabelGrid([3, 9], [3], [np.array([False, True, False]), np.array([True])])
    assert grid.violations()


def test_exact_p0_frozen():
    assert exact_p0(Geometric(0.5), 4) == pytest.approx(1 / 16)
    assert exact_p0(parse_spec("pmf:1=0.5,5=0.5"), 3) == pytest.approx(1 / 3)


def test_exact_p0_matches_monte_carlo(stream):
    spec = parse_spec("pmf:1=0.5,5=0.5")
    system = ScaleSystem.build(3, "2", 1)
    est = estimate_pk(spec, system, [0], 60_000, stream)[0]
    assert est.exact == pytest.approx(1 / 3)
    assert est.ci_lo <= 1 / 3 <= est.ci_hi


def test_pk_recursion_comparator_filled(stream):
    system = ScaleSystem.build(3, "2", 1)
    ests = estimate_pk(Geometric(0.3), system, [0, 1], 5000, stream, c1_hat=0.1)
    assert ests[1].recursion_rhs is not None


def test_minimal_L0_is_minimal():
    params = validate_params("1", "0.25", "1.1", "0.95", "0.97")
    L0 = minimal_L0(params, 1.0, 0.5)
    assert L0 is not None
    assert validate_L0(params, L0, 1.0, 0.5).ok
    assert not validate_L0(params, L0 - 1, 1.0, 0.5).ok


def test_minimal_L0_none_when_out_of_reach():
    params = validate_params("1", "0.1", "1.02", "0.99", "0.999")
    assert minimal_L0(params, 1.0, 0.5) is None


def test_validate_L0_rejects_missing_c1():
    params = validate_params("1", "0.1", "1.02", "0.99", "0.999")
    with pytest.raises(ValueError):
        validate_L0(params, 100, 1.0, float("nan"))
