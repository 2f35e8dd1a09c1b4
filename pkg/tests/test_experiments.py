import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stretchperc.experiments import (
    ConfigError,
    ExperimentConfig,
    HeavyTailPlan,
    apply_environment,
    audit_decoupling_and_pk,
    dependency_audit,
    certificate_system,
    fit_threshold,
    heavy_tail_experiment,
    read_record,
    run,
    summarize_heavy_tail,
    sweep_p,
    write_summary_csv,
)
from stretchperc.multiscale import ParamError
from stretchperc.renewal import SpecError
from stretchperc.rng import Stream


@settings(max_examples=50, deadline=None)
@given(replicas=st.integers(0, 500), p=st.floats(0, 1), seed=st.integers(0, 2**32),
       sizes=st.lists(st.integers(1, 500), min_size=1, max_size=4),
       gamma=st.sampled_from(["6/5", "1.2", "2"]), waive=st.booleans())
def test_config_text_round_trip(replicas, p, seed, sizes, gamma, waive):
    cfg = ExperimentConfig(replicas=replicas, p=p, seed=seed, sizes=tuple(sizes), gamma=gamma, waive=waive)
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg


def test_config_rejects_unknown_keys_and_values():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("replica = 3\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("replicas = many\n")
    with pytest.raises(ConfigError):
        ExperimentConfig(tasks=("nope",))
    with pytest.raises(ConfigError):
        ExperimentConfig(p_grid=(0.5, 0.3))


def test_config_comments_and_hash():
    cfg = ExperimentConfig.from_text("# a run\nreplicas = 7  # few\n")
    assert cfg.replicas == 7
    assert cfg.config_hash() == cfg.with_overrides(output="elsewhere.jsonl", workers=8).config_hash()
    assert cfg.config_hash() != cfg.with_overrides(seed=1).config_hash()


def test_environment_overrides():
    cfg = apply_environment(ExperimentConfig(), {"STRETCHPERC_SEED": "17", "STRETCHPERC_WORKERS": "3"})
    assert cfg.seed == 17 and cfg.workers == 3


def test_heavy_tail_plan_frozen():
    plan = HeavyTailPlan.from_eta(0.5)
    assert plan.epsilon_tail == pytest.approx(0.5)
    assert plan.indices == (2, 3, 4, 5, 6)
    assert plan.row_counts == (17, 181, 2981, 71707, 2414345)
    assert plan.bound_h(2, 0.5) == pytest.approx(1.0625)
    assert plan.bound_h(4, 0.5) == pytest.approx(2981 * 0.5**16)
    assert plan.bound_v(6, 0.9) == pytest.approx(math.exp(-2414345e-6))
    assert plan.no_closed_row(6, 0.9) <= plan.bound_v(6, 0.9)


def test_heavy_tail_extract():
    plan = HeavyTailPlan.from_eta(0.5)
    gaps = [1, 5, 9, 17, 1, 40]
    # thresholds i^2: 4, 9, 16, 25, 36
    assert plan.extract(gaps) == [2, 4, 6]


def test_heavy_tail_refuses_finite_moment():
    with pytest.raises(SpecError):
        heavy_tail_experiment("zeta:3", HeavyTailPlan.from_eta(0.5), 0.9, [10], 2, Stream(1))


def test_heavy_tail_small_run_is_monotone():
    plan = HeavyTailPlan.from_eta(0.5, cell_budget=10**5)
    res = heavy_tail_experiment("zeta:1.5", plan, 0.9, [10, 100], 40, Stream(3))
    est = [row["estimate"] for row in res["connection_curve"]]
    assert est[0] >= est[1]
    assert not [f for f in res["failures"] if "increased" in f]


def test_summarize_heavy_tail_counts_censored_as_reaching():
    plan = HeavyTailPlan.from_eta(0.5, cell_budget=10**4)
    reps = [{"radius": -1, "steps": 9, "strips": {}}, {"radius": 3, "steps": 4, "strips": {}}]
    res = summarize_heavy_tail(plan, 0.9, [2, 10], reps)
    assert [r["hits"] for r in res["connection_curve"]] == [2, 1]
    assert res["censored_probes"] == 1


def test_fit_threshold_recovers_midpoint():
    p = np.linspace(0, 1, 11)
    y = 1 / (1 + np.exp(-(p - 0.42) / 0.05))
    assert fit_threshold(p, y) == pytest.approx(0.42, abs=1e-3)
    assert fit_threshold(p, np.zeros_like(p)) is None


def test_sweep_endpoints_and_zero_p():
    cfg = ExperimentConfig(spec="det:1", sizes=(8,), replicas=20, bootstrap=20)
    res = sweep_p(cfg)[0]
    assert res["endpoints"] == {"0.0": 0.0, "1.0": 1.0}
    assert np.all(np.diff(res["probability"]) >= 0)


def test_random_environment_crosses_less():
    base = dict(sizes=(16,), replicas=60, bootstrap=0, p_grid=(0.55, 0.6, 0.65))
    det = sweep_p(ExperimentConfig(spec="det:1", **base))[0]["probability"]
    geo = sweep_p(ExperimentConfig(spec="geometric:0.5", **base))[0]["probability"]
    assert np.all(geo <= det)


def test_sweep_refuses_contracted():
    with pytest.raises(ConfigError):
        sweep_p(ExperimentConfig(formulation="contracted", sizes=(4,), replicas=1))


def test_certificate_system_needs_desk():
    with pytest.raises(ConfigError):
        certificate_system(ExperimentConfig(height_mode="exact_log"))


def test_dependency_audit_has_no_flips():
    cfg = ExperimentConfig(spec="geometric:0.5", L0=3, gamma="2", h=1, p=0.8)
    system = certificate_system(cfg, 1)
    res = dependency_audit(cfg, system, 0, 40, Stream(2))
    assert res["flips"] == 0
    assert res["inside_changes"] > 0


def test_audit_raises_on_infeasible_parameters():
    cfg = ExperimentConfig(spec="geometric:0.5", samples=200)
    with pytest.raises(ParamError):
        audit_decoupling_and_pk(cfg)


def test_waived_audit_reports():
    cfg = ExperimentConfig(spec="geometric:0.5", samples=2000, waive=True, L0=300, kmax=1)
    rep = audit_decoupling_and_pk(cfg)
    assert rep["waived"]
    assert rep["p0_exact"] == pytest.approx(0.5**300)
    assert rep["p0_exact"] <= rep["p0_bound"]


def _small_run_config(tmp_path, **kw):
    base = dict(spec="geometric:0.5", sizes=(8,), replicas=12, chunk=5, bootstrap=10,
                tasks=("sweep",), output=str(tmp_path / "run.jsonl"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_empty_task_list_writes_header_only(tmp_path):
    cfg = _small_run_config(tmp_path, tasks=())
    rec = run(cfg)
    header, tasks = read_record(cfg.output)
    assert header["config_hash"] == cfg.config_hash()
    assert tasks == [] and rec.ok


def test_resume_matches_uninterrupted(tmp_path):
    cfg = _small_run_config(tmp_path, tasks=("sweep", "sweep"))
    run(cfg, output=tmp_path / "full.jsonl")
    part = tmp_path / "part.jsonl"
    run(cfg, output=part, stop_after=1)
    with open(part, "a") as fh:
        fh.write('{"record": "task", "ind')  # torn write
    run(cfg, output=part)
    assert part.read_bytes() == (tmp_path / "full.jsonl").read_bytes()


def test_resume_refuses_other_config(tmp_path):
    cfg = _small_run_config(tmp_path)
    run(cfg)
    with pytest.raises(ConfigError):
        run(cfg.with_overrides(seed=5))


def test_timestamps_live_in_sidecar(tmp_path):
    cfg = _small_run_config(tmp_path)
    run(cfg)
    log = (tmp_path / "run.jsonl.log").read_text().splitlines()
    assert "start" in json.loads(log[0])
    assert "start" not in (tmp_path / "run.jsonl").read_text()


def test_summary_csv(tmp_path):
    cfg = _small_run_config(tmp_path)
    rec = run(cfg)
    write_summary_csv(rec, tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text()
    assert text.startswith("task,index,key,value")
    assert "p_c" in text

