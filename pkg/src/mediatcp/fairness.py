"""Quality fairness across media users: Jain's index, per-user quality changes,
and empirical checks of the conditions under which the index is driven to 1."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .media import ClassSpec
from .network import bottleneck_loss, quantize_window, smooth_loss, tcp_response_window
from .solver import SolverConfig, backward_induction_class, priority_metric

# jain_index result when nobody has received anything yet
NO_TRAFFIC = None


def jain_index(q: Sequence[float]) -> float | None:
    """(sum q)^2 / (V sum q^2); ``NO_TRAFFIC`` for an all-zero vector."""
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise ValueError("need at least one user")
    if (q < 0).any() or not np.isfinite(q).all():
        raise ValueError("qualities must be finite and nonnegative")
    sq = float((q * q).sum())
    if sq == 0:
        return NO_TRAFFIC
    return min(float(q.sum()) ** 2 / (q.size * sq), 1.0)


def quality_delta(
    prev_metrics: np.ndarray,
    next_metrics: np.ndarray,
    q: np.ndarray,
    n: np.ndarray,
) -> np.ndarray:
    """Signed change of each user's expected quality from classes whose metric flips sign.

    All arguments are ``(users, classes)`` arrays. A class turning positive adds
    ``Q N``; one turning negative removes it. Mixed flips within a user net out.
    """
    prev = np.asarray(prev_metrics, dtype=float)
    nxt = np.asarray(next_metrics, dtype=float)
    if prev.shape != nxt.shape:
        raise ValueError("metric arrays are not aligned")
    flipped = prev * nxt < 0
    sign = np.where(nxt > prev, 1.0, -1.0)
    return (flipped * sign * np.asarray(q, dtype=float) * np.asarray(n, dtype=float)).sum(axis=-1)


def lemma2_condition(q: Sequence[float], dq: Sequence[float], tol: float = 0.0) -> bool:
    """sum q^2 * sum dq >= sum q * sum q dq."""
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    if q.shape != dq.shape:
        raise ValueError("quality and delta vectors are not aligned")
    lhs = (q * q).sum() * dq.sum()
    rhs = q.sum() * (q * dq).sum()
    return bool(lhs >= rhs - tol)


@dataclass
class ConditionResult:
    passed: bool
    counterexamples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "counterexamples": self.counterexamples[:20]}


@dataclass
class Theorem4Report:
    shared_q: ConditionResult
    packet_order: ConditionResult
    metric_monotone: ConditionResult

    @property
    def passed(self) -> bool:
        return self.shared_q.passed and self.packet_order.passed and self.metric_monotone.passed

    def to_dict(self) -> dict:
        return {
            "shared_q": self.shared_q.to_dict(),
            "packet_order": self.packet_order.to_dict(),
            "metric_monotone": self.metric_monotone.to_dict(),
            "pass": self.passed,
        }


def _shared_q(users: Sequence[Sequence[ClassSpec]]) -> ConditionResult:
    bad = []
    ref = [s.q for s in users[0]]
    for u in range(1, len(users)):
        other = [s.q for s in users[u]]
        if len(other) != len(ref) or not np.allclose(other, ref, rtol=0, atol=1e-12):
            bad.append({"users": [0, u], "q": [ref, other]})
    return ConditionResult(not bad, bad)


def _packet_order(users: Sequence[Sequence[ClassSpec]]) -> ConditionResult:
    # Any class with Q at least another (distinct) class's Q must carry at least
    # as many packets, for every pair of users.
    bad = []
    for u, su in enumerate(users):
        for v, sv in enumerate(users):
            for i, a in enumerate(su):
                for j, b in enumerate(sv):
                    if i == j or a.q < b.q:
                        continue
                    if a.n0 < b.n0:
                        bad.append({"user": u, "class": a.id, "n": a.n0,
                                    "other_user": v, "other_class": b.id, "other_n": b.n0})
    return ConditionResult(not bad, bad)


def _metric_monotone(samples, tol: float) -> ConditionResult:
    bad = []
    for u, s in enumerate(samples or []):
        s = np.asarray(s, dtype=float)
        rises = np.argwhere(np.diff(s, axis=0) > tol)
        for w, m in rises[:5]:
            bad.append({"user": u, "class_index": int(m), "window_index": int(w),
                        "increase": float(s[w + 1, m] - s[w, m])})
    return ConditionResult(not bad, bad)


def check_theorem4_conditions(
    users: Sequence[Sequence[ClassSpec]],
    gamma: float,
    lam: float,
    metric_samples: Sequence[np.ndarray] | None = None,
    tol: float = 1e-9,
) -> Theorem4Report:
    """Check the three sufficient conditions for quality fairness to converge.

    ``metric_samples[u]`` is a ``(windows, classes)`` array of next-slot expected
    priority metrics for user ``u`` over ascending hypothetical windows (see
    ``expected_metrics``). Without samples the third condition is only known to
    hold when ``gamma == 0``.
    """
    if len(users) < 2:
        raise ValueError("need at least two users")
    if metric_samples is None:
        mono = ConditionResult(gamma == 0, [] if gamma == 0 else [{"reason": "no samples"}])
    else:
        mono = _metric_monotone(metric_samples, tol)
    return Theorem4Report(_shared_q(users), _packet_order(users), mono)


def expected_metrics(
    q: Sequence[float],
    occupancy: Sequence[int],
    cfg: SolverConfig,
    p_now: float,
    windows: Sequence[float],
    other_load: float,
    capacity: float,
    buffer: int,
    alpha: float = 0.8,
    p_floor: float = 1e-4,
    w_max: int = 64,
) -> np.ndarray:
    """Next-slot priority metrics of every class as a function of this slot's window.

    For each hypothetical window the bottleneck loss and the smoothed loss give
    the next expected TCP window, at which the metric is evaluated against the
    horizon tables built from ``cfg``. Returns an array ``(len(windows), M)``.
    """
    q = np.asarray(q, dtype=float)
    K = cfg.horizon
    tables = [
        backward_induction_class(q[m], cfg.arrivals[:K, m], cfg.discards[:K, m], cfg)
        for m in range(q.size)
    ]
    out = np.empty((len(windows), q.size))
    for i, w in enumerate(windows):
        p_hat = bottleneck_loss(other_load + w, capacity, buffer, p_floor)
        p_next = smooth_loss(p_now, p_hat, alpha, p_floor)
        w_idx = cfg.chain.index(quantize_window(tcp_response_window(p_next), w_max))
        for m in range(q.size):
            out[i, m] = priority_metric(
                q[m], int(occupancy[m]), int(cfg.arrivals[0, m]), int(cfg.discards[0, m]),
                w_idx, tables[m][1] if K > 1 else None, cfg,
            )
    return out
