import itertools

import numpy as np
import pytest

from mediatcp.media import ClassGraph, ClassSpec
from mediatcp.network import NetChain
from mediatcp.solver import (
    PreconditionError,
    SolverConfig,
    SystemState,
    backward_induction_class,
    constant_term,
    default_lambda,
    joint_actions,
    joint_value_tables,
    priority_metric,
    solve,
    solve_dag,
    solve_independent,
    solve_oracle,
)


def cfg_for(m, lam=10.0, gamma=0.0, K=1, grid=(16.0,), P=None, arrivals=None, discards=None, n_max=64):
    grid = np.asarray(grid, dtype=float)
    P = np.eye(grid.size) if P is None else np.asarray(P)
    arr = np.zeros((K, m), int) if arrivals is None else np.asarray(arrivals)
    dis = np.zeros((K, m), int) if discards is None else np.asarray(discards)
    return SolverConfig(lam, gamma, K, NetChain(grid, P), arr, dis, n_max)


def graph(qs, chain=False):
    return ClassGraph([
        ClassSpec(i, q, 1, parents={i - 1} if chain and i else set()) for i, q in enumerate(qs)
    ])


# -- tables -----------------------------------------------------------------

def test_terminal_slot_value():
    cfg = cfg_for(1, lam=10, K=1, n_max=8)
    J = backward_induction_class(1.0, [0], [0], cfg)
    assert J[0, 0, 5] == pytest.approx(1.875)


def test_terminal_slot_no_send_when_cost_dominates():
    cfg = cfg_for(1, lam=10, K=1, n_max=8)
    J = backward_induction_class(0.5, [0], [0], cfg)
    assert np.all(J == 0)


def test_gamma_zero_collapses_to_terminal_rule():
    cfg = cfg_for(1, lam=10, gamma=0, K=3, arrivals=[[2], [3], [1]], n_max=8)
    J = backward_induction_class(1.0, [2, 3, 1], [0, 0, 0], cfg)
    n = np.arange(9)
    assert J[0, 0] == pytest.approx(np.maximum(0, 0.375 * n))


def test_two_slot_hand_example():
    # grid {8, 16}, fair coin chain, gamma 1: at w=8 holding beats sending
    P = [[0.5, 0.5], [0.5, 0.5]]
    cfg = cfg_for(1, lam=10, gamma=1.0, K=2, grid=(8, 16), P=P, n_max=4)
    J = backward_induction_class(1.0, [0, 0], [0, 0], cfg)
    assert J[0, 0, 3] == pytest.approx(0.5625)
    assert J[0, 1, 3] == pytest.approx(1.125)
    pm8 = priority_metric(1.0, 3, 0, 0, 0, J[1], cfg)
    pm16 = priority_metric(1.0, 3, 0, 0, 1, J[1], cfg)
    assert pm8 == pytest.approx(-1.3125)
    assert pm16 == pytest.approx(0.5625)


def test_priority_metric_first_term():
    cfg = cfg_for(1, lam=10, gamma=0)
    assert priority_metric(0.154, 17, 0, 0, 0, None, cfg) == pytest.approx(-8.007)
    assert priority_metric(0.625, 9, 0, 0, 0, None, cfg) == pytest.approx(0.0)


def test_priority_metric_when_everything_expires():
    P = [[0.5, 0.5], [0.5, 0.5]]
    cfg = cfg_for(1, lam=10, gamma=0.9, K=2, grid=(8, 16), P=P, n_max=6)
    J = backward_induction_class(1.0, [0, 0], [6, 0], cfg)
    # hold and send both land on an empty buffer
    assert priority_metric(1.0, 5, 0, 6, 1, J[1], cfg) == pytest.approx((1 - 10 / 16) * 5)


def test_schedule_shorter_than_horizon():
    with pytest.raises(ValueError):
        cfg_for(1, K=3, arrivals=np.zeros((2, 1)), discards=np.zeros((2, 1)))


def test_config_validation():
    with pytest.raises(ValueError):
        cfg_for(1, gamma=1.5)
    with pytest.raises(ValueError):
        cfg_for(1, lam=-1)


# -- independent classes ----------------------------------------------------

def test_all_negative_metrics():
    st = SystemState(16, (17, 12), graph([0.154, 0.08]))
    res = solve_independent(st, cfg_for(2, lam=10))
    assert res.permissions == (0, 0)
    assert res.window == 0 and res.expected_quality == 0


def test_single_positive_class_sends():
    st = SystemState(16, (5,), graph([1.0]))
    res = solve_independent(st, cfg_for(1, lam=10))
    assert res.permissions == (1,) and res.window == 5


def test_indifference_does_not_send():
    st = SystemState(16, (4,), graph([0.625]))
    assert solve_independent(st, cfg_for(1, lam=10)).permissions == (0,)


def test_independent_rejects_dag():
    st = SystemState(16, (1, 1), graph([1, 1], chain=True))
    with pytest.raises(PreconditionError):
        solve_independent(st, cfg_for(2))


def test_window_is_granted_packets():
    st = SystemState(16, (17, 17, 12), graph([1.0, 0.9, 0.1]))
    res = solve_independent(st, cfg_for(3, lam=10))
    assert res.permissions == (1, 1, 0)
    assert res.window == 34
    assert res.expected_quality == pytest.approx(17 * 1.9)


def test_two_class_oracle_on_random_schedule(rng):
    g = graph([0.7, 0.4])
    P = rng.dirichlet(np.ones(2), size=2)
    cfg = cfg_for(2, lam=4, gamma=0.9, K=2, grid=(4, 8), P=P,
                  arrivals=rng.integers(0, 4, (2, 2)), discards=rng.integers(0, 4, (2, 2)), n_max=3)
    for w in (4, 8):
        for occ in itertools.product(range(4), repeat=2):
            st = SystemState(w, occ, g)
            a, b = solve_independent(st, cfg), solve_oracle(st, cfg)
            assert a.permissions == b.permissions
            assert a.value == pytest.approx(b.value, abs=1e-9)


def test_threshold_in_occupancy(rng):
    # fixed schedule: once sending is right at some n it stays right for larger n
    for _ in range(30):
        P = rng.dirichlet(np.ones(3), size=3)
        K = 3
        arr = rng.integers(0, 5, K)
        cfg = cfg_for(1, lam=float(rng.uniform(1, 20)), gamma=float(rng.uniform(0, 1)), K=K,
                      grid=(4, 10, 20), P=P, arrivals=arr[:, None], n_max=12)
        J = backward_induction_class(float(rng.uniform(0.1, 2)), arr, [0] * K, cfg)
        for w in range(3):
            sends = [priority_metric(1.0, n, int(arr[0]), 0, w, J[1], cfg) > 1e-10 for n in range(13)]
            first = sends.index(True) if True in sends else 13
            assert all(sends[first:])


# -- DAG --------------------------------------------------------------------

def test_denied_root_blocks_descendants():
    g = graph([0.05, 5.0, 5.0], chain=True)
    res = solve_dag(SystemState(16, (4, 4, 4), g), cfg_for(3, lam=10))
    assert res.permissions == (0, 0, 0)
    assert res.q_act[1] == 0 and res.q_act[2] == 0


def test_edgeless_dag_matches_independent(rng):
    g = graph([0.9, 0.5, 0.3])
    cfg = cfg_for(3, lam=6, gamma=0.5, K=2, grid=(8, 16), P=[[0.7, 0.3], [0.2, 0.8]],
                  arrivals=rng.integers(0, 5, (2, 3)), discards=rng.integers(0, 5, (2, 3)), n_max=8)
    st = SystemState(8, (3, 5, 7), g)
    assert solve_dag(st, cfg).permissions == solve_independent(st, cfg).permissions


def test_delivered_parent_lets_child_decide_alone():
    g = graph([0.05, 5.0], chain=True)
    st = SystemState(16, (0, 4), g, delivered=(True, False))
    assert solve(st, cfg_for(2, lam=10)).permissions == (0, 1)


def test_expired_ancestor_zeroes_descendants():
    g = graph([1.0, 5.0], chain=True)
    st = SystemState(16, (0, 4), g, expired=(True, False))
    assert solve(st, cfg_for(2, lam=10)).permissions == (0, 0)


def test_chain_dag_matches_oracle_when_greedy_is_safe():
    # the root is worth sending on its own, so the greedy order cannot hurt
    g = graph([2.0, 1.0, 0.5], chain=True)
    cfg = cfg_for(3, lam=6, K=1, grid=(10.0,), n_max=3)
    for occ in itertools.product(range(4), repeat=3):
        st = SystemState(10, occ, g)
        assert solve_dag(st, cfg).permissions == solve_oracle(st, cfg).permissions


def test_greedy_misses_root_that_unlocks_child():
    """The depth-by-depth greedy is not optimal when a weak root gates a strong child.

    Root Q=0.5, child Q=2.0, two packets each, lambda=6, W=10, one slot: the root's
    own metric is 2(0.5 - 0.6) = -0.2, so the greedy denies it and the child with
    it (utility 6). Sending both is worth 0.5*2 + 2*2 - 6(4/10 - 1) = 8.6.
    """
    g = graph([0.5, 2.0], chain=True)
    cfg = cfg_for(2, lam=6, K=1, grid=(10.0,), n_max=4)
    st = SystemState(10, (2, 2), g)
    greedy, best = solve_dag(st, cfg), solve_oracle(st, cfg)
    assert greedy.permissions == (0, 0)
    assert greedy.value == pytest.approx(6.0)
    assert best.permissions == (1, 1)
    assert best.value == pytest.approx(8.6)
    assert best.extra["action_values"][(1, 0)] == pytest.approx(5.8)


# -- oracle -----------------------------------------------------------------

def test_oracle_guard():
    g = graph([1] * 5)
    with pytest.raises(PreconditionError):
        solve_oracle(SystemState(16, (1,) * 5, g), cfg_for(5, n_max=3))
    with pytest.raises(PreconditionError):
        solve_oracle(SystemState(16, (1,), graph([1])), cfg_for(1, n_max=5))


def test_oracle_free_transmission_sends_all():
    g = graph([0.3, 0.2, 0.0])
    st = SystemState(8, (2, 3, 1), g)
    res = solve_oracle(st, cfg_for(3, lam=0, n_max=3, grid=(8.0,)))
    assert res.permissions == (1, 1, 0)


def test_oracle_single_class_matches_solver(rng):
    g = graph([0.8])
    for _ in range(10):
        P = rng.dirichlet(np.ones(3), size=3)
        cfg = cfg_for(1, lam=float(rng.uniform(0, 10)), gamma=float(rng.uniform(0, 1)), K=3,
                      grid=(3, 9, 15), P=P, arrivals=rng.integers(0, 4, (3, 1)),
                      discards=rng.integers(0, 4, (3, 1)), n_max=4)
        for w in (3, 9, 15):
            for n in range(5):
                st = SystemState(w, (n,), g)
                assert solve(st, cfg).permissions == solve_oracle(st, cfg).permissions


def test_joint_value_separates_under_uniform_chain(rng):
    q = np.array([0.6, 0.2])
    cfg = cfg_for(2, lam=5, gamma=0.8, K=2, grid=(4, 12), P=[[0.5, 0.5], [0.5, 0.5]],
                  arrivals=rng.integers(0, 3, (2, 2)), discards=rng.integers(0, 3, (2, 2)), n_max=3)
    J = joint_value_tables(q, cfg)[0]
    per = [backward_induction_class(q[m], cfg.arrivals[:, m], cfg.discards[:, m], cfg)[0]
           for m in range(2)]
    C = constant_term(cfg)[0]
    for s, (a, b) in enumerate(itertools.product(range(4), repeat=2)):
        for w in range(2):
            assert J[w, s] == pytest.approx(per[0][w, a] + per[1][w, b] + C[w], abs=1e-9)


def test_action_order_fewest_sends_first():
    acts = joint_actions(3).tolist()
    assert acts[0] == [0, 0, 0]
    assert acts[1:4] == [[0, 0, 1], [0, 1, 0], [1, 0, 0]]
    assert acts[-1] == [1, 1, 1]


# -- default lambda ---------------------------------------------------------

def test_default_lambda_examples():
    assert default_lambda(NetChain.constant([16.0]), [0.1]) == pytest.approx(1.6)
    assert default_lambda(NetChain.constant([1.0]), [1.0, 1.0]) == pytest.approx(1.0)
    ch = NetChain.constant([16.0])
    assert default_lambda(ch, [0.2, 0.1], [1, 3]) == pytest.approx(16 * 0.125)
