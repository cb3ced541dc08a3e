import pytest
from hypothesis import given, strategies as st

from mediatcp.config import workload_classes
from mediatcp.media import (
    Action,
    ClassGraph,
    ClassSpec,
    ClassState,
    ConfigError,
    actual_distortion,
    app_transition,
    distortion_reduction,
    effective_availability,
    recompute_depths,
)


def chain3():
    return ClassGraph([
        ClassSpec(1, 0.154, 17),
        ClassSpec(2, 0.153, 17, parents={1}),
        ClassSpec(3, 0.09, 12, parents={2}),
    ])


# -- app_transition ---------------------------------------------------------

def test_hold_with_arrivals_and_discards():
    s = ClassState(n=17, arrivals=3, discards=5)
    assert app_transition(s, 0).n == 15


def test_send_everything():
    s = ClassState(n=17, arrivals=0, discards=0)
    out = app_transition(s, 1)
    assert out.n == 0
    assert out.delivered


def test_clamped_at_n_max():
    assert app_transition(ClassState(n=60, arrivals=10), 0, n_max=64).n == 64


def test_discards_above_occupancy_rejected():
    with pytest.raises(ValueError):
        ClassState(n=2, discards=3)


def test_delivered_only_when_packets_sent():
    assert not app_transition(ClassState(n=0, arrivals=4), 1).delivered


@given(
    n=st.integers(0, 64),
    a=st.integers(0, 64),
    d_frac=st.floats(0, 1),
    permit=st.integers(0, 1),
)
def test_transition_stays_in_range(n, a, d_frac, permit):
    d = int(d_frac * n)
    out = app_transition(ClassState(n=n, arrivals=a, discards=d), permit)
    assert 0 <= out.n <= 64
    if permit:
        assert out.n == min(a, 64)


# -- distortion -------------------------------------------------------------

def test_root_gets_full_q():
    g = chain3()
    assert actual_distortion(g, 0, [False] * 3) == pytest.approx(0.154)


def test_descendant_blocked_by_missing_ancestor():
    g = chain3()
    assert actual_distortion(g, 2, [True, False, False]) == 0.0


def test_descendant_unlocked_when_all_ancestors_available():
    g = chain3()
    assert actual_distortion(g, 2, [True, True, False]) == pytest.approx(0.09)


def test_missing_availability_entry():
    g = chain3()
    with pytest.raises(ConfigError):
        actual_distortion(g, 2, {1: True})


def test_same_slot_grant_counts_for_children():
    g = chain3()
    # parents granted in the same slot make the child count
    got = distortion_reduction(g, [17, 17, 12], Action((1, 1, 1)))
    assert got == pytest.approx(0.154 * 17 + 0.153 * 17 + 0.09 * 12)


def test_granted_parent_with_empty_buffer_does_not_unlock():
    g = chain3()
    assert effective_availability([False, False, False], [0, 5, 0], [1, 1, 0]) == [False, True, False]
    assert distortion_reduction(g, [0, 5, 0], (1, 1, 0)) == 0.0


def test_delivered_parent_unlocks():
    g = chain3()
    got = distortion_reduction(g, [0, 0, 12], (0, 0, 1), delivered=[True, True, False])
    assert got == pytest.approx(1.08)


# -- graph ------------------------------------------------------------------

def test_cycle_names_classes():
    with pytest.raises(ConfigError, match="cycle"):
        ClassGraph([ClassSpec(1, 0.1, 1, parents={2}), ClassSpec(2, 0.1, 1, parents={1})])


def test_unknown_parent():
    with pytest.raises(ConfigError, match="unknown parent 9"):
        ClassGraph([ClassSpec(1, 0.1, 1, parents={9})])


def test_negative_q_rejected():
    with pytest.raises(ConfigError):
        ClassSpec(1, -0.1, 1)


def test_binary_actions_only():
    with pytest.raises(ValueError):
        Action((0, 2))


def test_mctf_depths_and_recompute():
    g = ClassGraph(workload_classes("coastguard"))
    assert recompute_depths(g) == [0, 1, 2, 2, 3, 3, 3, 3] + [4] * 8
    delivered = [True, True] + [False] * 14
    assert recompute_depths(g, delivered)[:8] == [0, 0, 0, 0, 1, 1, 1, 1]


def test_descendants_of_root_cover_tree():
    g = ClassGraph(workload_classes("coastguard"))
    assert g.descendants[0] == frozenset(range(1, 16))
    assert g.ancestors[15] == frozenset({0, 1, 3, 7})
