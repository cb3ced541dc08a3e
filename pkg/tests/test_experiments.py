import numpy as np
import pytest

from mediatcp.config import config_from_dict
from mediatcp.experiments import (
    compare,
    fairness_study,
    oracle_check,
    random_instance,
    separability_error,
    sweep,
    theorem4_report,
)


def small_cfg(users=None, slots=30):
    users = users or [{"controller": "mt", "workload": "coastguard"}]
    return config_from_dict({"seed": 4, "slots": slots, "link": {"capacity": 450, "buffer": 100},
                             "users": users})


def test_oracle_single_class_never_disagrees():
    rep = oracle_check(instances=10, m_count=1, n_max=3, points=3, horizon=2)
    assert rep["pass"] and rep["disagreements"] == 0
    assert rep["states"] > 0


def test_oracle_independent_grid():
    rep = oracle_check(instances=50, m_count=3, n_max=3, points=3, horizon=2)
    assert rep["disagreements"] == 0
    assert rep["max_separability_error"] < 1e-9
    assert rep["monotonicity_violations"] == 0


def test_random_instance_respects_guard(rng):
    for dag in ("none", "chain", "random"):
        g, cfg = random_instance(rng, 3, 3, 3, 2, dag)
        assert len(g) == 3 and cfg.horizon == 2
        if dag == "none":
            assert not g.has_edges
        if dag == "chain":
            assert g.has_edges


def test_separability_error_small(rng):
    g, cfg = random_instance(rng, 2, 3, 2, 2, "none")
    assert separability_error(g, cfg) < 1e-9


def test_sweep_rows_and_runs():
    rows, runs = sweep(small_cfg(), [5, 10], [0.0], replicates=2)
    assert [(r["lambda"], r["gamma"]) for r in rows] == [(5, 0.0), (10, 0.0)]
    assert len(runs) == 4 and all(r["seeds"] == 2 for r in rows)


def test_sweep_needs_grids():
    with pytest.raises(ValueError):
        sweep(small_cfg(), [], [0.5])


def test_compare_needs_input():
    with pytest.raises(ValueError):
        compare(small_cfg(), [], [0.266])


def test_compare_long_delay_narrows_gap():
    cfg = small_cfg(slots=120)
    rows, _ = compare(cfg, ["mt", "pa"], [0.133, 0.532])
    q = {(r["controller"], r["delay_slots"]): r["mean_quality"] for r in rows}
    assert q[("mt", 1)] - q[("pa", 1)] > q[("mt", 4)] - q[("pa", 4)]


def test_fairness_study_identical_users():
    user = {"controller": "mt", "workload": "mobile"}
    cfg = small_cfg([dict(user, name="a"), dict(user, name="b")], slots=40)
    rows, runs, report = fairness_study(cfg, [5])
    assert len(rows) == 1 and len(runs) == 1
    assert rows[0]["gap"] == pytest.approx(0.0, abs=0.5)
    assert report["shared_q"]["pass"]


def test_fairness_study_needs_pair():
    with pytest.raises(ValueError):
        fairness_study(small_cfg(), [5])


def test_theorem4_report_mixed_lambda():
    cfg = small_cfg([{"controller": "mt", "workload": "coastguard", "lambda": 5},
                     {"controller": "mt", "workload": "coastguard", "lambda": 10}])
    rep = theorem4_report(cfg, windows=np.arange(0, 65, 8))
    assert rep["same_lambda"] is False and rep["pass"] is False
