import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stretchperc import oracles
from stretchperc.renewal import (
    Deterministic,
    Dirac,
    FinitePmf,
    Geometric,
    SpecError,
    Stationary,
    Zeta,
    check_moment,
    estimate_c1,
    is_aperiodic,
    parse_delay,
    parse_spec,
    reduce_to_aperiodic,
    sample_coupling_times,
    sample_forward_recurrence,
    sample_renewal,
    shift_stationarity_check,
    stationary_delay_pmf,
    stationary_moment,
    trajectory_from_interarrivals,
)
from stretchperc.rng import Stream

SPEC_TEXTS = ["det:3", "geometric:0.25", "zeta:2.5", "uniform:1,2", "pmf:1=0.25,3=0.75",
              "scaled:2:geometric:0.5"]


@pytest.mark.parametrize("text", SPEC_TEXTS)
def test_parse_round_trip(text):
    spec = parse_spec(text)
    assert parse_spec(str(spec)) == spec


@pytest.mark.parametrize("text", ["", "geometric:", "nope:1", "pmf:1=0.5,2", "det:x"])
def test_parse_rejects_garbage(text):
    with pytest.raises(SpecError):
        parse_spec(text)


@given(st.floats(0.05, 0.95))
def test_geometric_round_trip_and_sf(q):
    spec = parse_spec(f"geometric:{q!r}")
    k = np.arange(0, 30)
    assert np.allclose(spec.sf(k), (1 - q) ** k)
    assert np.allclose(spec.pmf(k[1:]), q * (1 - q) ** (k[1:] - 1))


@pytest.mark.parametrize("text", SPEC_TEXTS)
def test_pmf_and_sf_consistent(text):
    spec = parse_spec(text)
    k = np.arange(0, 40)
    # P(xi > k) - P(xi > k + 1) = P(xi = k + 1)
    assert np.allclose(spec.sf(k) - spec.sf(k + 1), spec.pmf(k + 1), atol=1e-12)


def test_pmf_csv_round_trip(tmp_path):
    path = tmp_path / "law.csv"
    path.write_text("value,probability\n1,0.2\n4,0.8\n")
    spec = parse_spec(f"pmf:@{path}")
    assert spec == FinitePmf([1, 4], [0.2, 0.8])


def test_stationary_delay_geometric_frozen():
    res = stationary_delay_pmf(Geometric(0.5), 2)
    assert np.allclose(res.pmf, [0.5, 0.25, 0.125])
    assert res.tail == pytest.approx(0.125)


def test_stationary_delay_uniform_frozen():
    res = stationary_delay_pmf(parse_spec("uniform:1,2"), 3)
    assert np.allclose(res.pmf, [2 / 3, 1 / 3, 0, 0])
    assert res.tail == 0.0


def test_stationary_delay_needs_finite_mean():
    with pytest.raises(SpecError):
        stationary_delay_pmf(Zeta(1.5), 5)


@pytest.mark.parametrize("s,eta,finite", [(1.5, 0.5, False), (1.5, 0.4, True), (3.0, 1.0, True),
                                          (3.0, 2.0, False)])
def test_zeta_moment_boundary(s, eta, finite):
    assert check_moment(Zeta(s), eta).finite is finite


def test_moments_closed_forms():
    assert check_moment(Geometric(0.5), 1.0).value == pytest.approx(2.0)
    assert check_moment(Geometric(0.5), 2.0).value == pytest.approx(6.0)
    assert check_moment(Deterministic(3), 2.0).value == 9.0
    assert check_moment(Zeta(3.0), 1.0).value == pytest.approx(1.6449340668 / 1.2020569032, rel=1e-9)
    # E rho for geometric(1/2): rho ~ geometric on {0,1,..} with mean 1
    val, err = stationary_moment(Geometric(0.5), 1.0)
    assert val == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(delay=st.integers(0, 6), gaps=st.lists(st.integers(1, 5), min_size=1, max_size=12),
       horizon=st.integers(0, 30))
def test_trajectory_invariants(delay, gaps, horizon):
    if delay + sum(gaps) <= horizon:
        with pytest.raises(SpecError):
            trajectory_from_interarrivals(delay, gaps, horizon)
        return
    traj = trajectory_from_interarrivals(delay, gaps, horizon)
    traj.check()
    assert traj.next_arrival > horizon
    # Z_t + t is the next arrival at or after t
    assert np.all(traj.forward >= 0)
    assert traj.indicator.sum() == len(traj.arrivals)


def test_sample_renewal_is_valid(stream):
    traj = sample_renewal(Geometric(0.3), Stationary(), 200, stream)
    traj.check()
    assert traj.horizon == 200


def test_zeta_sampler_matches_sf(stream):
    spec = Zeta(1.5)
    x = spec.sample(200_000, stream.generator())
    for k in (1, 2, 5, 20, 100):
        emp = float(np.mean(x > k))
        assert abs(emp - spec.sf(k)) < 4 * math.sqrt(spec.sf(k) * (1 - spec.sf(k)) / x.size)


def test_stationary_delay_sampler(stream):
    spec = parse_spec("pmf:1=0.5,3=0.5")
    d = Stationary().sample(spec, 100_000, stream.generator())
    rho = stationary_delay_pmf(spec, 2).pmf
    for k in range(3):
        assert abs(np.mean(d == k) - rho[k]) < 4 * math.sqrt(rho[k] * (1 - rho[k]) / d.size)


def test_parse_delay():
    assert parse_delay("stationary") == Stationary()
    assert parse_delay("dirac:3") == Dirac(3)


def test_aperiodic_reduction():
    assert is_aperiodic(Geometric(0.5)) == (True, 1)
    red = reduce_to_aperiodic(parse_spec("uniform:2,4"))
    assert red.period == 2
    assert red.spec == parse_spec("uniform:1,2")
    assert red.transport_p(0.81) == pytest.approx(0.9)
    assert reduce_to_aperiodic(Deterministic(3)).spec == Deterministic(1)


def _survival_by_gap_enumeration(values, probs, t):
    """P(no common renewal in 1..t) for two Dirac(0) copies, by listing gap words."""
    def arrival_sets():
        out = {}
        for n in range(1, t + 2):
            for word in itertools.product(range(len(values)), repeat=n):
                pts = np.cumsum([values[i] for i in word])
                if pts[-1] > t and (n == 1 or pts[-2] <= t):
                    key = frozenset(int(p) for p in pts if p <= t)
                    out[key] = out.get(key, 0.0) + math.prod(probs[i] for i in word)
        return out
    sets = arrival_sets()
    return sum(pa * pb for a, pa in sets.items() for b, pb in sets.items() if not (a & b))


@pytest.mark.parametrize("t", [1, 2, 3, 5])
def test_coupling_survival_oracle(t):
    spec = parse_spec("uniform:1,2")
    expected = _survival_by_gap_enumeration([1, 2], [0.5, 0.5], t)
    assert oracles.coupling_survival(spec, 0, 0, t) == pytest.approx(expected, abs=1e-12)


def test_coupling_geometric_mean(stream):
    T = sample_coupling_times(Geometric(0.5), Dirac(0), Dirac(0), 10**6, 20_000, stream)
    assert np.all(T >= 1)
    se = T.std(ddof=1) / math.sqrt(T.size)
    assert abs(T.mean() - 4.0) < 4 * se


def test_coupling_uniform_survival_empirical(stream):
    spec = parse_spec("uniform:1,2")
    T = sample_coupling_times(spec, Dirac(0), Dirac(0), 10**6, 50_000, stream)
    for t in (1, 2, 4):
        exact = oracles.coupling_survival(spec, 0, 0, t)
        emp = float(np.mean(T > t))
        assert abs(emp - exact) < 4 * math.sqrt(exact * (1 - exact) / T.size)


def test_shift_check_geometric(stream):
    res = shift_stationarity_check(Geometric(0.5), 7, 40_000, stream, window=1)
    assert res.tv_distance <= res.tv_bound
    assert res.chi2_pvalue > 1e-4


@pytest.mark.parametrize("n", range(1, 9))
def test_uniform_covariance_frozen(n):
    spec = parse_spec("uniform:1,2")
    assert oracles.exact_covariance(spec, 3, n) == pytest.approx((2 / 9) * (-0.5) ** n, abs=1e-14)


def test_geometric_covariance_is_zero():
    assert oracles.exact_covariance(Geometric(0.3), 2, 5) == pytest.approx(0.0, abs=1e-15)


def test_estimate_c1_brackets_exact(stream):
    spec = parse_spec("uniform:1,2")
    rep = estimate_c1(spec, 1.0, 4, [1, 2, 3], 100_000, stream)
    for e in rep.estimates:
        assert abs(e.gap - e.exact_gap) <= e.ci_halfwidth * 4 / 3
    assert rep.c_hat_exact == pytest.approx(max(abs((2 / 9) * (-0.5) ** n) * n for n in (1, 2, 3)))


def test_estimate_c1_refuses_periodic(stream):
    with pytest.raises(SpecError):
        estimate_c1(Deterministic(2), 1.0, 2, [1], 10, stream)


def test_forward_recurrence_reproducible():
    a = sample_forward_recurrence(Geometric(0.4), Stationary(), [0, 5], 50, Stream(3))
    b = sample_forward_recurrence(Geometric(0.4), Stationary(), [0, 5], 50, Stream(3))
    assert np.array_equal(a, b)
