"""Finite-horizon backward induction for the packet-class scheduling problem.

Per-class utility-to-go tables are indexed ``[slot, window grid point, occupancy]``.
Each class is an optimal stopping problem: send the whole class now, or hold it
and keep the option of sending it in a later, cheaper network state.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .media import ClassGraph, ConfigError, recompute_depths
from .network import NetChain

# Priority metrics within this margin of zero count as indifference (no send).
PM_TOL = 1e-10

ORACLE_MAX_CLASSES = 4
ORACLE_MAX_N = 4
ORACLE_MAX_GRID = 4
ORACLE_MAX_HORIZON = 3


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class SystemState:
    """Network state plus per-class buffer occupancy at the decision slot."""

    w_tcp: float
    occupancy: tuple[int, ...]
    graph: ClassGraph
    delivered: tuple[bool, ...] | None = None
    expired: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        m = len(self.graph)
        object.__setattr__(self, "occupancy", tuple(int(n) for n in self.occupancy))
        if len(self.occupancy) != m:
            raise ValueError(f"occupancy has {len(self.occupancy)} entries for {m} classes")
        if any(n < 0 for n in self.occupancy):
            raise ValueError("occupancy must be nonnegative")
        for name in ("delivered", "expired"):
            val = getattr(self, name)
            val = (False,) * m if val is None else tuple(bool(v) for v in val)
            if len(val) != m:
                raise ValueError(f"{name} has {len(val)} entries for {m} classes")
            object.__setattr__(self, name, val)

    @property
    def q(self) -> np.ndarray:
        return np.array(self.graph.q, dtype=float)


@dataclass(frozen=True)
class SolverConfig:
    lam: float
    gamma: float
    horizon: int
    chain: NetChain
    arrivals: np.ndarray
    discards: np.ndarray
    n_max: int = 64

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least one slot")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma {self.gamma} outside [0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        arr = np.asarray(self.arrivals, dtype=int)
        dis = np.asarray(self.discards, dtype=int)
        if arr.ndim != 2 or dis.shape != arr.shape:
            raise ValueError("arrivals and discards must be matching (slots, classes) arrays")
        if arr.shape[0] < self.horizon:
            raise ValueError(
                f"schedule covers {arr.shape[0]} slots, horizon needs {self.horizon}"
            )
        if (arr < 0).any() or (dis < 0).any():
            raise ValueError("schedule entries must be nonnegative")
        object.__setattr__(self, "arrivals", arr)
        object.__setattr__(self, "discards", dis)

    @property
    def num_classes(self) -> int:
        return self.arrivals.shape[1]


@dataclass(frozen=True)
class PolicyTables:
    """``j[m, k, w, n]``: utility-to-go of class m, k slots into the horizon."""

    j: np.ndarray

    def monotonicity_violations(self, tol: float = 1e-12) -> int:
        return int((np.diff(self.j, axis=-1) < -tol).sum())


@dataclass(frozen=True)
class SolveResult:
    metrics: np.ndarray
    permissions: tuple[int, ...]
    window: int
    expected_quality: float
    value: float
    tables: PolicyTables | None = None
    q_act: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _successors(n: np.ndarray, arrivals: int, discards: int, n_top: int):
    keep = np.minimum(np.maximum(n - discards, 0) + arrivals, n_top)
    send = min(arrivals, n_top)
    return keep, send


def backward_induction_class(
    q: float,
    arrivals: Sequence[int],
    discards: Sequence[int],
    cfg: SolverConfig,
    n_top: int | None = None,
) -> np.ndarray:
    """Utility-to-go tables of one class over the horizon, shape ``(K, W, n_top+1)``.

    ``n_top`` truncates the occupancy axis; it is exact for every state from which
    occupancy cannot exceed it within the horizon.
    """
    K = cfg.horizon
    if len(arrivals) < K or len(discards) < K:
        raise ValueError("class schedule is shorter than the horizon")
    n_top = cfg.n_max if n_top is None else min(n_top, cfg.n_max)
    grid = cfg.chain.grid
    P = cfg.chain.transition
    n = np.arange(n_top + 1)
    gain = (q - cfg.lam / grid)[:, None] * n[None, :]
    tables = np.empty((K, grid.size, n_top + 1))
    expect = np.zeros((grid.size, n_top + 1))
    for k in range(K - 1, -1, -1):
        keep, send = _successors(n, int(arrivals[k]), int(discards[k]), n_top)
        v_send = gain + cfg.gamma * expect[:, [send]]
        v_hold = cfg.gamma * expect[:, keep]
        tables[k] = np.maximum(v_send, v_hold)
        expect = P @ tables[k]
    return tables


def priority_metric(
    q: float,
    n: int,
    arrivals: int,
    discards: int,
    w_index: int,
    next_table: np.ndarray | None,
    cfg: SolverConfig,
) -> float:
    """Gain from sending the class now over holding it, given next-slot tables.

    ``next_table`` is ``J^{i+1}`` with shape ``(W, N+1)``; ``None`` means the
    decision slot is the last of the horizon.
    """
    w = cfg.chain.grid[w_index]
    first = (q - cfg.lam / w) * n
    if next_table is None or cfg.gamma == 0:
        return float(first)
    n_top = next_table.shape[1] - 1
    keep, send = _successors(np.array([min(n, n_top)]), arrivals, discards, n_top)
    expect = cfg.chain.transition[w_index] @ next_table
    return float(first + cfg.gamma * (expect[send] - expect[keep[0]]))


def constant_term(cfg: SolverConfig) -> np.ndarray:
    """Class-independent part of the joint utility-to-go, shape ``(K, W)``."""
    K, P = cfg.horizon, cfg.chain.transition
    c = np.empty((K, len(cfg.chain)))
    c[K - 1] = cfg.lam
    for k in range(K - 2, -1, -1):
        c[k] = cfg.lam + cfg.gamma * P @ c[k + 1]
    return c


def _n_top(state: SystemState, cfg: SolverConfig, n_top: int | None) -> int:
    if n_top is not None:
        return min(n_top, cfg.n_max)
    return cfg.n_max


def _solve_classes(
    state: SystemState,
    cfg: SolverConfig,
    order: Sequence[Sequence[int]],
    q_act: np.ndarray,
    n_top: int | None,
    zero_descendants: bool,
) -> SolveResult:
    m_count = len(state.graph)
    if cfg.num_classes != m_count:
        raise ValueError(f"schedule has {cfg.num_classes} classes, state has {m_count}")
    top = _n_top(state, cfg, n_top)
    w_idx = cfg.chain.index(state.w_tcp)
    occ = np.minimum(np.array(state.occupancy), top)
    K = cfg.horizon
    tables = np.zeros((m_count, K, len(cfg.chain), top + 1))
    metrics = np.zeros(m_count)
    perms = [0] * m_count
    cache: dict[tuple, np.ndarray] = {}
    for group in order:
        for m in group:
            key = (q_act[m], cfg.arrivals[:K, m].tobytes(), cfg.discards[:K, m].tobytes())
            if key not in cache:
                cache[key] = backward_induction_class(
                    q_act[m], cfg.arrivals[:K, m], cfg.discards[:K, m], cfg, top
                )
            tab = cache[key]
            tables[m] = tab
            metrics[m] = priority_metric(
                q_act[m], int(occ[m]), int(cfg.arrivals[0, m]), int(cfg.discards[0, m]),
                w_idx, tab[1] if K > 1 else None, cfg,
            )
            perms[m] = int(metrics[m] > PM_TOL)
            if zero_descendants and not perms[m] and not state.delivered[m]:
                for d in state.graph.descendants[m]:
                    q_act[d] = 0.0
    pi = np.array(perms)
    window = int((occ * pi).sum())
    quality = float((q_act * occ * pi).sum())
    value = float(tables[np.arange(m_count), 0, w_idx, occ].sum() + constant_term(cfg)[0, w_idx])
    return SolveResult(
        metrics=metrics,
        permissions=tuple(perms),
        window=window,
        expected_quality=quality,
        value=value,
        tables=PolicyTables(tables),
        q_act=q_act,
    )


def initial_q_act(state: SystemState) -> np.ndarray:
    """Q per class, zeroed where an ancestor expired without ever being delivered."""
    q = state.q.copy()
    g = state.graph
    for m in range(len(g)):
        if any(state.expired[a] and not state.delivered[a] for a in g.ancestors[m]):
            q[m] = 0.0
    return q


def solve_independent(
    state: SystemState, cfg: SolverConfig, n_top: int | None = None
) -> SolveResult:
    """Threshold policy for independently decodable classes."""
    if state.graph.has_edges:
        raise PreconditionError("classes have DAG dependencies; use solve_dag")
    m_count = len(state.graph)
    return _solve_classes(state, cfg, [range(m_count)], state.q.copy(), n_top, False)


def solve_dag(state: SystemState, cfg: SolverConfig, n_top: int | None = None) -> SolveResult:
    """Depth-by-depth greedy selection for interdependent classes.

    Classes at the current depth are decided by their priority metric; a class
    left unsent (and not yet delivered) zeroes the distortion impact of all its
    descendants before the next depth is processed.
    """
    depths = recompute_depths(state.graph, state.delivered)
    order = [
        [m for m in range(len(depths)) if depths[m] == d] for d in range(max(depths, default=0) + 1)
    ]
    return _solve_classes(state, cfg, order, initial_q_act(state), n_top, True)


def solve(state: SystemState, cfg: SolverConfig, n_top: int | None = None) -> SolveResult:
    if state.graph.has_edges:
        return solve_dag(state, cfg, n_top)
    return solve_independent(state, cfg, n_top)


def default_lambda(
    chain: NetChain, q: Sequence[float], weights: Sequence[float] | None = None
) -> float:
    """Long-run mean window times the packet-weighted mean distortion impact."""
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise ValueError("need at least one class")
    w = np.ones_like(q) if weights is None else np.asarray(weights, dtype=float)
    q_mean = float(q @ w / w.sum()) if w.sum() > 0 else float(q.mean())
    return chain.mean_window() * q_mean


# --------------------------------------------------------------------------
# exhaustive joint-state oracle


def _check_guard(m_count: int, cfg: SolverConfig) -> None:
    if (
        m_count > ORACLE_MAX_CLASSES
        or cfg.n_max > ORACLE_MAX_N
        or len(cfg.chain) > ORACLE_MAX_GRID
        or cfg.horizon > ORACLE_MAX_HORIZON
    ):
        raise PreconditionError(
            f"oracle limited to M<={ORACLE_MAX_CLASSES}, N_max<={ORACLE_MAX_N}, "
            f"{ORACLE_MAX_GRID} window points and K<={ORACLE_MAX_HORIZON}"
        )


def joint_states(m_count: int, n_max: int) -> np.ndarray:
    """All occupancy vectors, row ``i`` is the ``i``-th state in C order."""
    return np.array(list(itertools.product(range(n_max + 1), repeat=m_count)), dtype=int).reshape(
        -1, m_count
    )


def joint_actions(m_count: int) -> np.ndarray:
    """All permission vectors ordered by number of sends, then lexicographically."""
    acts = sorted(itertools.product((0, 1), repeat=m_count), key=lambda a: (sum(a), a))
    return np.array(acts, dtype=int).reshape(-1, m_count)


def joint_value_tables(q: Sequence[float], cfg: SolverConfig, start: int = 0) -> np.ndarray:
    """Joint utility-to-go ``J[k, w, s]`` for fixed per-class impacts ``q``.

    Slots ``start..K-1`` of the horizon are solved by enumerating every joint
    action; entries for earlier slots are left at zero.
    """
    q = np.asarray(q, dtype=float)
    m_count = q.size
    states = joint_states(m_count, cfg.n_max)
    actions = joint_actions(m_count)
    base = cfg.n_max + 1
    strides = base ** np.arange(m_count - 1, -1, -1)
    grid = cfg.chain.grid
    K = cfg.horizon
    J = np.zeros((K, grid.size, states.shape[0]))
    expect = np.zeros((grid.size, states.shape[0]))
    for k in range(K - 1, start - 1, -1):
        arr, dis = cfg.arrivals[k], cfg.discards[k]
        best = np.full((grid.size, states.shape[0]), -np.inf)
        for a in actions:
            sent = (states * a).sum(axis=1)
            gain = (states * a) @ q
            nxt = np.maximum(states - dis, 0) * (1 - a) + arr
            nxt = np.minimum(nxt, cfg.n_max)
            idx = nxt @ strides
            val = gain[None, :] - cfg.lam * (sent[None, :] / grid[:, None] - 1) + cfg.gamma * expect[:, idx]
            best = np.maximum(best, val)
        J[k] = best
        expect = cfg.chain.transition @ best
    return J


def _q_act_for_action(state: SystemState, a: np.ndarray, base_q: np.ndarray) -> np.ndarray:
    g = state.graph
    avail = [
        state.delivered[m] or (a[m] == 1 and state.occupancy[m] > 0) for m in range(len(g))
    ]
    q = base_q.copy()
    for m in range(len(g)):
        if not all(avail[p] for p in g.ancestors[m]):
            q[m] = 0.0
    return q


def solve_oracle(
    state: SystemState,
    cfg: SolverConfig,
    tie_tol: float = PM_TOL,
    cache: dict | None = None,
) -> SolveResult:
    """Best first-slot action by exhaustive search over the joint state space.

    Each candidate action fixes the actual distortion impacts of every class for
    the rest of the horizon (ancestors available iff delivered earlier or sent
    now); the remaining slots are then solved by joint backward induction over
    all ``2^M`` actions. Near-ties go to fewer sends, then the lexicographically
    smallest permission vector. ``cache`` may be shared between calls that use
    the same ``cfg``.
    """
    m_count = len(state.graph)
    _check_guard(m_count, cfg)
    if any(n > cfg.n_max for n in state.occupancy):
        raise PreconditionError("state occupancy exceeds n_max")
    K = cfg.horizon
    w_idx = cfg.chain.index(state.w_tcp)
    w = cfg.chain.grid[w_idx]
    base_q = initial_q_act(state)
    occ = np.array(state.occupancy)
    base = cfg.n_max + 1
    strides = base ** np.arange(m_count - 1, -1, -1)
    arr, dis = cfg.arrivals[0], cfg.discards[0]
    cache = {} if cache is None else cache
    values = []
    actions = joint_actions(m_count)
    for a in actions:
        q = _q_act_for_action(state, a, base_q)
        gain = float((q * occ * a).sum())
        sent = int((occ * a).sum())
        val = gain - cfg.lam * (sent / w - 1)
        if K > 1:
            key = tuple(q)
            if key not in cache:
                cache[key] = joint_value_tables(q, cfg, start=1)[1]
            nxt = np.minimum(np.maximum(occ - dis, 0) * (1 - a) + arr, cfg.n_max)
            val += cfg.gamma * float(cfg.chain.transition[w_idx] @ cache[key][:, nxt @ strides])
        values.append(val)
    values = np.array(values)
    best_val = values.max()
    choice = int(np.flatnonzero(values >= best_val - tie_tol)[0])
    a = actions[choice]
    q = _q_act_for_action(state, a, base_q)
    return SolveResult(
        metrics=np.full(m_count, np.nan),
        permissions=tuple(int(x) for x in a),
        window=int((occ * a).sum()),
        expected_quality=float((q * occ * a).sum()),
        value=float(best_val),
        q_act=q,
        extra={"action_values": dict(zip(map(tuple, actions.tolist()), values.tolist()))},
    )
