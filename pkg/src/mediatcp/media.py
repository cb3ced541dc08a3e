"""Packet classes, their decoding DAG, and the application-state transition.

Quality numbers are distortion reductions in dB per packet. A class only
contributes when every ancestor class is available at the receiver.
"""
from __future__ import annotations

import graphlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

DEFAULT_N_MAX = 64


class ConfigError(ValueError):
    """Invalid class, DAG or experiment configuration."""


@dataclass(frozen=True)
class ClassSpec:
    id: int
    q: float
    n0: int
    parents: frozenset[int] = field(default_factory=frozenset)
    arrival_time: float = 0.0
    # None: arrival time plus the user's playback delay
    deadline: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "parents", frozenset(self.parents))
        if self.q < 0:
            raise ConfigError(f"class {self.id}: q must be >= 0, got {self.q}")
        if self.n0 < 0:
            raise ConfigError(f"class {self.id}: n0 must be >= 0, got {self.n0}")
        if self.deadline is not None and self.deadline < self.arrival_time:
            raise ConfigError(f"class {self.id}: deadline precedes arrival time")
        if self.id in self.parents:
            raise ConfigError(f"class {self.id} lists itself as a parent")


@dataclass(frozen=True)
class ClassState:
    n: int
    arrivals: int = 0
    discards: int = 0
    depth: int = 0
    delivered: bool = False

    def __post_init__(self) -> None:
        if self.n < 0 or self.arrivals < 0:
            raise ValueError("occupancy and arrivals must be nonnegative")
        if not 0 <= self.discards <= self.n:
            raise ValueError(f"discards {self.discards} outside [0, n={self.n}]")
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")


@dataclass(frozen=True)
class Action:
    permissions: tuple[int, ...]

    def __post_init__(self) -> None:
        perms = tuple(int(p) for p in self.permissions)
        if any(p not in (0, 1) for p in perms):
            raise ValueError(f"permissions must be binary, got {self.permissions}")
        object.__setattr__(self, "permissions", perms)

    def __len__(self) -> int:
        return len(self.permissions)

    def __getitem__(self, i: int) -> int:
        return self.permissions[i]


class ClassGraph:
    """Decoding dependencies between the packet classes of one stream.

    Classes are addressed by position ``0..M-1`` in the order given; ``ClassSpec.id``
    values are only used to resolve ``parents``.
    """

    def __init__(self, specs: Sequence[ClassSpec]):
        self.specs = tuple(specs)
        ids = [s.id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate class ids in {ids}")
        self.index = {cid: i for i, cid in enumerate(ids)}
        self.parents: tuple[frozenset[int], ...] = tuple(
            frozenset(self._resolve(s.id, p) for p in s.parents) for s in self.specs
        )
        sorter = graphlib.TopologicalSorter({i: self.parents[i] for i in range(len(self.specs))})
        try:
            self.topo_order = tuple(sorter.static_order())
        except graphlib.CycleError as exc:
            cycle = [ids[i] for i in exc.args[1]]
            raise ConfigError(f"class DAG has a cycle through {cycle}") from None

        anc: list[frozenset[int]] = [frozenset()] * len(self.specs)
        for i in self.topo_order:
            acc = set(self.parents[i])
            for p in self.parents[i]:
                acc |= anc[p]
            anc[i] = frozenset(acc)
        self.ancestors: tuple[frozenset[int], ...] = tuple(anc)
        des: list[set[int]] = [set() for _ in self.specs]
        for i, a in enumerate(anc):
            for j in a:
                des[j].add(i)
        self.descendants: tuple[frozenset[int], ...] = tuple(frozenset(d) for d in des)

    def _resolve(self, child: int, parent: int) -> int:
        try:
            return self.index[parent]
        except KeyError:
            raise ConfigError(f"class {child} references unknown parent {parent}") from None

    def __len__(self) -> int:
        return len(self.specs)

    @property
    def has_edges(self) -> bool:
        return any(self.parents)

    @property
    def q(self) -> tuple[float, ...]:
        return tuple(s.q for s in self.specs)


def app_transition(
    state: ClassState, permit: int, n_max: int = DEFAULT_N_MAX
) -> ClassState:
    """Advance one class by a slot: ``n' = (n - discards)(1 - permit) + arrivals``."""
    n_next = (state.n - state.discards) * (1 - permit) + state.arrivals
    n_next = min(max(n_next, 0), n_max)
    delivered = state.delivered or (permit == 1 and state.n > 0)
    return replace(state, n=n_next, arrivals=0, discards=0, delivered=delivered)


def effective_availability(
    delivered: Sequence[bool], occupancy: Sequence[int], permissions: Sequence[int]
) -> list[bool]:
    """Availability after this slot: delivered earlier, or granted now with packets queued."""
    return [
        bool(d) or (int(p) == 1 and n > 0)
        for d, n, p in zip(delivered, occupancy, permissions)
    ]


def actual_distortion(
    graph: ClassGraph, m: int, availability: Sequence[bool] | Mapping[int, bool]
) -> float:
    """Q_m if every (transitive) ancestor of class position ``m`` is available, else 0."""
    for a in graph.ancestors[m]:
        try:
            ok = availability[a]
        except (KeyError, IndexError):
            raise ConfigError(f"no availability entry for ancestor {a} of class {m}") from None
        if not ok:
            return 0.0
    return graph.specs[m].q


def distortion_reduction(
    graph: ClassGraph,
    occupancy: Sequence[int],
    action: Action | Sequence[int],
    delivered: Sequence[bool] | None = None,
) -> float:
    """Sum of Q_act * N * pi over classes, counting same-slot grants of ancestors."""
    perms = action.permissions if isinstance(action, Action) else tuple(action)
    if len(perms) != len(graph):
        raise ValueError(f"action has {len(perms)} entries, expected {len(graph)}")
    if delivered is None:
        delivered = [False] * len(graph)
    avail = effective_availability(delivered, occupancy, perms)
    return sum(
        actual_distortion(graph, m, avail) * occupancy[m]
        for m in range(len(graph))
        if perms[m]
    )


def recompute_depths(graph: ClassGraph, delivered: Sequence[bool] | None = None) -> list[int]:
    """Depth of every class once delivered classes are removed from the DAG.

    A class with no undelivered ancestor sits at depth 0; otherwise it sits one
    below its deepest undelivered ancestor.
    """
    if delivered is None:
        delivered = [False] * len(graph)
    depths = [0] * len(graph)
    for i in graph.topo_order:
        pending = [depths[a] for a in graph.ancestors[i] if not delivered[a]]
        depths[i] = 1 + max(pending) if pending else 0
    return depths


def class_states(
    occupancy: Iterable[int],
    depths: Iterable[int],
    delivered: Iterable[bool],
) -> list[ClassState]:
    return [
        ClassState(n=n, depth=d, delivered=dv)
        for n, d, dv in zip(occupancy, depths, delivered)
    ]
