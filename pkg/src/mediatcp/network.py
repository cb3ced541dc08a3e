"""Transport-side models: TCP response function, bottleneck loss, AIMD agents and
the Markov chain over expected-TCP-window states."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

P_FLOOR = 1e-4
DEFAULT_W_MAX = 64
DEFAULT_ALPHA = 0.8


def tcp_response_window(p: float) -> float:
    """Expected TCP window in packets per slot, sqrt(1.5 / p)."""
    if p <= 0:
        raise ValueError(f"loss rate must be positive, got {p}")
    if p >= 1.5:
        return 1.0
    return math.sqrt(1.5 / p)


def quantize_window(w: float, w_max: int = DEFAULT_W_MAX) -> int:
    """Round half-up onto the integer grid 1..w_max."""
    return int(min(max(math.floor(w + 0.5), 1), w_max))


@dataclass(frozen=True)
class NetState:
    p: float
    w_tcp: int

    @classmethod
    def from_loss(cls, p: float, w_max: int = DEFAULT_W_MAX) -> "NetState":
        if not 0 < p <= 1:
            raise ValueError(f"loss rate {p} outside (0, 1]")
        return cls(p=p, w_tcp=quantize_window(tcp_response_window(p), w_max))


def bottleneck_loss(
    aggregate_load: float, capacity: float, buffer: int, p_floor: float = P_FLOOR
) -> float:
    """Blocking probability of an M/M/1/B queue offered ``aggregate_load`` per slot."""
    if aggregate_load < 0:
        raise ValueError(f"negative load {aggregate_load}")
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if buffer < 1:
        raise ValueError("buffer must hold at least one packet")
    rho = aggregate_load / capacity
    if rho == 0:
        blocking = 0.0
    elif math.isclose(rho, 1.0, rel_tol=1e-12, abs_tol=1e-12):
        blocking = 1.0 / (buffer + 1)
    elif rho < 1:
        blocking = (1 - rho) * rho**buffer / (1 - rho ** (buffer + 1))
    else:
        # divide through by rho**(B+1) to avoid overflow for heavy overload
        inv = 1.0 / rho
        blocking = (1 - inv) / (1 - inv ** (buffer + 1))
    return min(max(blocking, p_floor), 1.0)


def smooth_loss(p_prev: float, p_hat: float, alpha: float = DEFAULT_ALPHA,
                p_floor: float = P_FLOOR) -> float:
    return max(alpha * p_prev + (1 - alpha) * p_hat, p_floor)


def loss_event_probability(p_hat: float, window: float) -> float:
    """Chance that at least one of ``window`` independent packets is dropped."""
    if window <= 0:
        return 0.0
    return 1.0 - (1.0 - p_hat) ** window


@dataclass(frozen=True)
class AimdAgent:
    a: float = 1.0
    b: float = 0.5
    w: float = 1.0

    def __post_init__(self) -> None:
        if self.a <= 0 or not 0 < self.b < 1 or self.w < 1:
            raise ValueError(f"invalid AIMD agent {self}")


def aimd_step(agent: AimdAgent, lost: bool, w_cap: float | None = None) -> AimdAgent:
    if lost:
        w = max(1.0, (1 - agent.b) * agent.w)
    else:
        w = agent.w + agent.a
    if w_cap is not None:
        w = min(w, w_cap)
    return replace(agent, w=w)


@dataclass(frozen=True)
class NetChain:
    """Row-stochastic transition matrix over a grid of window values.

    ``visited`` marks rows backed by observations; it seeds the stationary
    distribution so that default self-loops on unseen rows carry no mass.
    """

    grid: np.ndarray
    transition: np.ndarray
    visited: np.ndarray | None = None

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        P = np.asarray(self.transition, dtype=float)
        if P.shape != (grid.size, grid.size):
            raise ValueError(f"transition shape {P.shape} does not match grid of {grid.size}")
        if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition matrix must be row-stochastic")
        if np.any(grid <= 0):
            raise ValueError("window grid must be positive")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "transition", P)

    @classmethod
    def constant(cls, grid: Sequence[float]) -> "NetChain":
        n = len(grid)
        return cls(np.asarray(grid), np.eye(n))

    @classmethod
    def uniform(cls, grid: Sequence[float]) -> "NetChain":
        n = len(grid)
        return cls(np.asarray(grid), np.full((n, n), 1.0 / n))

    def __len__(self) -> int:
        return self.grid.size

    def index(self, w: float) -> int:
        """Grid position of the point closest to ``w``."""
        return int(np.argmin(np.abs(self.grid - w)))

    def stationary(self, doublings: int = 11) -> np.ndarray:
        """Cesaro-averaged long-run distribution started from the visited rows.

        Averages ``pi0 P^t`` over ``t < 2**doublings`` by repeated squaring, which
        also settles periodic chains.
        """
        if self.visited is not None and self.visited.any():
            pi = self.visited.astype(float)
        else:
            pi = np.ones(len(self))
        pi = pi / pi.sum()
        power = self.transition.copy()
        total = np.eye(len(self))
        for _ in range(doublings):
            total = total + total @ power
            power = power @ power
        avg = pi @ total
        return avg / avg.sum()

    def mean_window(self) -> float:
        return float(self.stationary() @ self.grid)


def estimate_chain(window_trace: Sequence[int], w_max: int = DEFAULT_W_MAX) -> NetChain:
    """Empirical chain on the grid 1..w_max from a trace of quantized windows.

    Visited rows get add-one smoothing over the states seen in the trace;
    rows never left default to a self-loop.
    """
    trace = np.asarray(window_trace, dtype=int)
    if trace.size < 2:
        raise ValueError("need at least two observations to estimate a chain")
    if trace.min() < 1 or trace.max() > w_max:
        raise ValueError(f"trace values must lie in 1..{w_max}")
    idx = trace - 1
    counts = np.zeros((w_max, w_max))
    np.add.at(counts, (idx[:-1], idx[1:]), 1.0)
    support = np.zeros(w_max, dtype=bool)
    support[idx] = True
    visited = counts.sum(axis=1) > 0
    P = np.eye(w_max)
    smoothed = counts[visited] + support[None, :]
    P[visited] = smoothed / smoothed.sum(axis=1, keepdims=True)
    return NetChain(np.arange(1, w_max + 1), P, visited)
