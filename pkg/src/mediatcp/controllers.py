"""Per-slot congestion controllers behind one decision type.

* ``mt_decide``: foresighted, solves the K-slot scheduling problem.
* ``rd_decide``: myopic, fills the TCP budget greedily by distortion density.
* ``pa_decide``: media pushed through a plain TCP window, FIFO by class.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .media import Action, recompute_depths
from .network import DEFAULT_W_MAX
from .solver import SolverConfig, SystemState, initial_q_act, joint_actions, solve


@dataclass(frozen=True)
class Decision:
    window: int
    permissions: Action
    sent: tuple[int, ...]
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.window < 0:
            raise ValueError("window must be nonnegative")
        if len(self.sent) != len(self.permissions):
            raise ValueError("sent and permissions disagree in length")
        if sum(self.sent) != self.window:
            raise ValueError(f"window {self.window} != packets sent {sum(self.sent)}")


def _scheduled(state: SystemState, perms, diagnostics: dict) -> Decision:
    perms = tuple(int(p and n > 0) for p, n in zip(perms, state.occupancy))
    sent = tuple(n * p for n, p in zip(state.occupancy, perms))
    return Decision(sum(sent), Action(perms), sent, diagnostics)


def _trim(state: SystemState, perms: list[int], metrics: np.ndarray, w_max: int) -> list[int]:
    # Drop the weakest grants (and whatever depends on them) until the window fits.
    occ = state.occupancy
    g = state.graph
    while sum(n * p for n, p in zip(occ, perms)) > w_max:
        granted = [m for m in range(len(perms)) if perms[m]]
        m = min(granted, key=lambda i: (metrics[i], -i))
        perms[m] = 0
        if not state.delivered[m]:
            for d in g.descendants[m]:
                perms[d] = 0
    return perms


def mt_decide(
    state: SystemState,
    cfg: SolverConfig,
    n_top: int | None = None,
    w_max: int = DEFAULT_W_MAX,
) -> Decision:
    """Foresighted decision: the first action of the K-slot plan.

    If the granted classes overflow ``w_max`` the lowest-priority grants are
    withdrawn, together with their dependents.
    """
    res = solve(state, cfg, n_top)
    perms = list(res.permissions)
    trimmed = res.window > w_max
    if trimmed:
        perms = _trim(state, perms, res.metrics, w_max)
    return _scheduled(
        state,
        perms,
        {"metrics": res.metrics.tolist(), "value": res.value, "trimmed": trimmed},
    )


def rd_decide(state: SystemState, budget: float, w_max: int = DEFAULT_W_MAX) -> Decision:
    """Greedy knapsack on Q_act per packet under a window budget.

    Classes are visited by decreasing Q_act, then depth, then position. A class
    is taken only if it fits and every undelivered ancestor has already been
    taken; passes repeat until nothing changes, so an ancestor admitted late
    can still unlock its descendants.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    g = state.graph
    occ = state.occupancy
    q = initial_q_act(state)
    depths = recompute_depths(g, state.delivered)
    room = min(int(np.floor(budget + 1e-9)), w_max)
    order = sorted(range(len(g)), key=lambda m: (-q[m], depths[m], m))
    perms = [0] * len(g)
    changed = True
    while changed:
        changed = False
        for m in order:
            if perms[m] or occ[m] == 0 or q[m] <= 0 or occ[m] > room:
                continue
            if all(state.delivered[a] or perms[a] for a in g.ancestors[m]):
                perms[m] = 1
                room -= occ[m]
                changed = True
    return _scheduled(state, perms, {"budget": float(budget), "unused": room})


def pa_decide(state: SystemState, tcp_window: float, w_max: int = DEFAULT_W_MAX) -> Decision:
    """Drain the buffer through a TCP window, lowest depth then lowest position first.

    A class is marked permitted only when this slot empties it.
    """
    g = state.graph
    occ = state.occupancy
    depths = recompute_depths(g, state.delivered)
    room = min(int(np.floor(max(tcp_window, 0.0) + 1e-9)), w_max)
    sent = [0] * len(g)
    for m in sorted(range(len(g)), key=lambda i: (depths[i], i)):
        take = min(occ[m], room)
        sent[m] = take
        room -= take
    perms = tuple(int(n > 0 and s == n) for s, n in zip(sent, occ))
    return Decision(sum(sent), Action(perms), tuple(sent), {"tcp_window": float(tcp_window)})


@functools.lru_cache(maxsize=32)
def _actions(m_count: int) -> np.ndarray:
    return joint_actions(m_count)


def lagrangian_decide(state: SystemState, lam: float, w_tcp: float | None = None) -> Decision:
    """Exhaustive single-slot maximizer of ``sum Q_act N pi - lam (W / W_TCP - 1)``.

    Reference implementation for small class counts; ties go to fewer sends,
    then to the lexicographically smallest permission vector.
    """
    g = state.graph
    m_count = len(g)
    if m_count > 16:
        raise ValueError("exhaustive search limited to 16 classes")
    w = state.w_tcp if w_tcp is None else w_tcp
    acts = _actions(m_count)
    occ = np.array(state.occupancy)
    avail = np.array(state.delivered)[None, :] | ((acts == 1) & (occ > 0)[None, :])
    q = np.tile(initial_q_act(state), (acts.shape[0], 1))
    for m in range(m_count):
        anc = sorted(g.ancestors[m])
        if anc:
            q[:, m] *= avail[:, anc].all(axis=1)
    sent = acts * occ
    values = (q * sent).sum(axis=1) - lam * (sent.sum(axis=1) / w - 1)
    best = int(np.flatnonzero(values >= values.max() - 1e-10)[0])
    return _scheduled(state, acts[best].tolist(), {"value": float(values[best])})
