"""Time-slotted simulation of media users sharing a bottleneck with AIMD flows.

Per slot: controllers decide from last slot's loss estimate, the bottleneck
realizes a loss rate from the aggregate window, AIMD flows react, every media
user smooths its loss estimate, then buffers advance (sends, retransmissions,
deadline purges, new arrivals).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import SimConfig, UserConfig
from .controllers import Decision, mt_decide, pa_decide, rd_decide
from .fairness import jain_index
from .media import ClassGraph, ClassSpec, ConfigError
from .network import (
    NetChain,
    bottleneck_loss,
    estimate_chain,
    quantize_window,
    smooth_loss,
    tcp_response_window,
)
from .solver import SolverConfig, SystemState, default_lambda

FRIENDLY_TOL = 1e-9


@dataclass(frozen=True)
class Schedule:
    """Per-slot arrivals and nominal deadline discards, shape ``(slots, classes)``.

    ``discards`` holds the arriving count of each generation at the slot its
    deadline falls in; at run time only the generation's residue is purged.
    """

    arrivals: np.ndarray
    discards: np.ndarray
    lifetime: int
    arrival_slots: tuple[tuple[int, ...], ...]


def build_schedule(
    specs: Sequence[ClassSpec],
    gop_length: int,
    playback_delay: float,
    slots: int,
    slot_duration: float = 0.133,
) -> Schedule:
    """Arrival and deadline slots of every class generation over ``slots`` slots.

    A generation arriving at time ``t`` lands in slot ``floor(t / T)`` and is
    purged at the end of slot ``floor((t + delay) / T)``.
    """
    if playback_delay <= 0:
        raise ConfigError(f"playback_delay must be positive, got {playback_delay}")
    if gop_length < 1:
        raise ConfigError("gop_length must be at least one slot")
    lifetime = round(playback_delay / slot_duration)
    if lifetime < 1:
        raise ConfigError(f"playback_delay {playback_delay} s is shorter than one slot")
    m_count = len(specs)
    arrivals = np.zeros((slots, m_count), dtype=int)
    discards = np.zeros((slots, m_count), dtype=int)
    offsets = [math.floor(s.arrival_time / slot_duration + 1e-9) for s in specs]
    if any(o >= gop_length for o in offsets):
        raise ConfigError("class arrival time falls outside its GOP")
    arr_slots = []
    for m, spec in enumerate(specs):
        ks = tuple(range(offsets[m], slots, gop_length))
        arr_slots.append(ks)
        for a in ks:
            arrivals[a, m] = spec.n0
            if a + lifetime < slots:
                discards[a + lifetime, m] = spec.n0
    return Schedule(arrivals, discards, lifetime, tuple(arr_slots))


def friendliness(ratios: Sequence[float], horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Rolling horizon sums of window ratios and whether each stays within ``horizon``."""
    r = np.asarray(ratios, dtype=float)
    if r.ndim != 1:
        raise ValueError("expected a 1-D ratio series")
    if r.size < horizon:
        raise ValueError(f"series of {r.size} slots is shorter than horizon {horizon}")
    c = np.concatenate([[0.0], np.cumsum(r)])
    sums = c[horizon:] - c[:-horizon]
    return sums, sums <= horizon + FRIENDLY_TOL


@dataclass(frozen=True)
class UserSlot:
    window: int
    permissions: str
    quality: float
    ratio: float
    w_ref: float
    p: float
    lost: int


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    users: tuple[UserSlot, ...]
    p_hat: float
    fairness: float | None
    bg_mean_window: float


@dataclass
class _Generation:
    gop: int
    cls: int
    expiry: int
    size: int
    fresh: int
    retx: int = 0

    @property
    def n(self) -> int:
        return self.fresh + self.retx


@dataclass
class _GopStatus:
    delivered: list[bool]
    expired: list[bool]


@dataclass
class _ClassTally:
    arrived: int = 0
    delivered: int = 0
    expired: int = 0
    packets_arrived: int = 0
    packets_received: int = 0
    packets_purged: int = 0
    packets_overflow: int = 0


class UserSim:
    """Buffers, loss estimate and controller of one media user."""

    def __init__(self, cfg: SimConfig, user: UserConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.user = user
        self.rng = rng
        self.graph = ClassGraph(user.classes)
        self.m_count = len(self.graph)
        s = cfg.solver
        self.horizon = user.horizon if user.horizon is not None else s.horizon
        self.gamma = user.gamma if user.gamma is not None else s.gamma
        self.lam_setting = user.lam if user.lam is not None else s.lam
        self.schedule = build_schedule(
            user.classes, user.gop_length, user.playback_delay,
            cfg.slots + self.horizon + 1, cfg.slot_duration,
        )
        self.lifetime = self.schedule.lifetime
        self.q = np.array(self.graph.q)
        self.n0 = np.array([c.n0 for c in user.classes])
        self.gens: list[list[_Generation]] = [[] for _ in range(self.m_count)]
        self.status: dict[int, _GopStatus] = {}
        self.tally = [_ClassTally() for _ in range(self.m_count)]
        p0 = cfg.initial_loss if cfg.initial_loss is not None else 1.5 / cfg.background.initial_window**2
        self.p = max(p0, s.p_floor)
        self.w_trace: list[int] = []
        self.grid = np.arange(1, s.w_max + 1)
        self.chain = NetChain.constant(self.grid)
        self.lam_solver = self._lambda()
        self.aimd_w = float(min(cfg.background.initial_window, s.w_max))
        self.quality_total = 0.0
        self.decision: Decision | None = None

    # -- helpers ---------------------------------------------------------

    def _lambda(self) -> float:
        if self.lam_setting == "auto":
            return default_lambda(self.chain, self.q, self.n0)
        return float(self.lam_setting) / self.cfg.gain_scale

    def w_tcp(self) -> int:
        return quantize_window(tcp_response_window(self.p), self.cfg.solver.w_max)

    def occupancy(self) -> list[int]:
        return [sum(g.n for g in gs) for gs in self.gens]

    def _current_gop(self) -> int | None:
        live = [g.gop for gs in self.gens for g in gs]
        if live:
            return min(live)
        return max(self.status) if self.status else None

    def _flags(self) -> tuple[list[bool], list[bool]]:
        g = self._current_gop()
        if g is None:
            return [False] * self.m_count, [False] * self.m_count
        st = self.status[g]
        return list(st.delivered), list(st.expired)

    def _solver_schedule(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        K, L = self.horizon, self.lifetime
        n_max = self.cfg.solver.n_max
        arrivals = self.schedule.arrivals[k:k + K].copy()
        discards = np.zeros_like(arrivals)
        for m in range(self.m_count):
            # (arrival slot, expiry slot, packets) of live and upcoming generations
            pending = [(k - 1, g.expiry, g.n) for g in self.gens[m]]
            pending += [(a, a + L, int(self.n0[m])) for a in range(k, k + K - 1)
                        if self.schedule.arrivals[a, m] > 0]
            for j in range(K):
                slot = k + j
                alive = [(e, n) for a, e, n in pending if a < slot <= e]
                due = [n for e, n in alive if e == slot]
                if due and len(due) == len(alive):
                    discards[j, m] = n_max
                else:
                    discards[j, m] = sum(due)
        return arrivals, discards

    # -- slot phases -----------------------------------------------------

    def decide(self, k: int) -> Decision:
        s = self.cfg.solver
        if k % self.horizon == 0:
            if len(self.w_trace) >= 2:
                self.chain = estimate_chain(self.w_trace[-s.chain_window:], s.w_max)
            self.lam_solver = self._lambda()
        delivered, expired = self._flags()
        w_tcp = self.w_tcp()
        state = SystemState(w_tcp, self.occupancy(), self.graph, delivered, expired)
        ctrl = self.user.controller
        if ctrl == "mt":
            arrivals, discards = self._solver_schedule(k)
            scfg = SolverConfig(
                self.lam_solver, self.gamma, self.horizon, self.chain,
                arrivals, discards, s.n_max,
            )
            occ = np.array(state.occupancy)
            n_top = int((occ + arrivals.sum(axis=0)).max()) if occ.size else 0
            dec = mt_decide(state, scfg, n_top=max(n_top, 1), w_max=s.w_max)
        elif ctrl == "rd":
            dec = rd_decide(state, w_tcp, s.w_max)
        else:
            dec = pa_decide(state, self.aimd_w, s.w_max)
        self.w_trace.append(w_tcp)
        self.decision = dec
        return dec

    def reference_window(self) -> float:
        # PA runs on its own AIMD window; the others are judged against the model TCP window.
        if self.user.controller == "pa":
            return self.aimd_w
        return float(self.w_trace[-1])

    def _credit(self, gen: _Generation, sending: set[tuple[int, int]]) -> float:
        st = self.status[gen.gop]
        for a in self.graph.ancestors[gen.cls]:
            if not (st.delivered[a] or (gen.gop, a) in sending):
                return 0.0
        return float(self.q[gen.cls])

    def advance(self, k: int, p_hat: float) -> UserSlot:
        dec = self.decision
        assert dec is not None
        w_ref = self.reference_window()
        p_used = self.p
        quality = 0.0
        lost_total = 0
        completed: list[_Generation] = []
        sent_from: list[tuple[_Generation, int]] = []
        pa = self.user.controller == "pa"
        order = range(self.m_count)
        if pa:
            # drain order was fixed by the decision; classes are independent buckets here
            order = [m for m in range(self.m_count) if dec.sent[m] > 0]
        sending = {
            (g.gop, m) for m in range(self.m_count) if dec.permissions[m] for g in self.gens[m] if g.n
        }
        for m in order:
            budget = dec.sent[m]
            for g in self.gens[m]:
                if budget <= 0:
                    break
                take = min(budget, g.n)
                if take == 0:
                    continue
                from_retx = min(take, g.retx)
                g.retx -= from_retx
                fresh_before = g.fresh
                g.fresh -= take - from_retx
                budget -= take
                sent_from.append((g, take))
                if fresh_before > 0 and g.fresh == 0:
                    completed.append(g)
        # ancestors before descendants, so PA sees its own same-slot completions
        rank = {m: i for i, m in enumerate(self.graph.topo_order)}
        completed.sort(key=lambda g: (g.gop, rank[g.cls]))
        for g in completed:
            st = self.status[g.gop]
            if pa:
                q_act = self._credit(g, set())
            else:
                q_act = self._credit(g, sending)
            quality += q_act * g.size
            if not st.delivered[g.cls]:
                self.tally[g.cls].delivered += 1
            st.delivered[g.cls] = True
        for g, take in sent_from:
            lost = int(self.rng.binomial(take, p_hat)) if p_hat > 0 else 0
            lost_total += lost
            self.tally[g.cls].packets_received += take - lost
            g.retx += lost
        self._purge(k)
        self._arrive(k)
        if pa:
            w_max = self.cfg.solver.w_max
            if lost_total > 0:
                self.aimd_w = max(1.0, (1 - self.cfg.background.b) * self.aimd_w)
            else:
                self.aimd_w = min(self.aimd_w + self.cfg.background.a, float(w_max))
        self.p = smooth_loss(self.p, p_hat, self.cfg.solver.alpha, self.cfg.solver.p_floor)
        self.quality_total += quality
        ratio = dec.window / w_ref if w_ref > 0 else 0.0
        return UserSlot(
            window=dec.window,
            permissions="".join(str(p) for p in dec.permissions.permissions),
            quality=quality,
            ratio=ratio,
            w_ref=w_ref,
            p=p_used,
            lost=lost_total,
        )

    def _purge(self, k: int) -> None:
        for m in range(self.m_count):
            keep = []
            for g in self.gens[m]:
                if g.expiry > k:
                    keep.append(g)
                    continue
                self.tally[m].packets_purged += g.n
                st = self.status[g.gop]
                if not st.delivered[m]:
                    st.expired[m] = True
                    self.tally[m].expired += 1
            self.gens[m] = keep

    def _arrive(self, k: int) -> None:
        n_max = self.cfg.solver.n_max
        gop = k // self.user.gop_length
        if gop not in self.status:
            # classes without packets never hold up their descendants
            self.status[gop] = _GopStatus(
                delivered=[n == 0 for n in self.n0], expired=[False] * self.m_count
            )
        for m in range(self.m_count):
            count = int(self.schedule.arrivals[k, m])
            if count == 0:
                continue
            t = self.tally[m]
            t.arrived += 1
            t.packets_arrived += count
            room = n_max - sum(g.n for g in self.gens[m])
            kept = max(min(count, room), 0)
            t.packets_overflow += count - kept
            self.gens[m].append(
                _Generation(gop=gop, cls=m, expiry=k + self.lifetime, size=kept, fresh=kept)
            )
        # GOP statuses no generation can refer to any more
        live = {g.gop for gs in self.gens for g in gs}
        for old in [g for g in self.status if g < gop and g not in live]:
            del self.status[old]

    def class_report(self) -> list[dict]:
        out = []
        for spec, t in zip(self.user.classes, self.tally):
            out.append({
                "id": spec.id,
                "generations": t.arrived,
                "delivered": t.delivered,
                "expired": t.expired,
                "packets_arrived": t.packets_arrived,
                "packets_received": t.packets_received,
                "packets_purged": t.packets_purged,
                "packets_overflow": t.packets_overflow,
            })
        return out


@dataclass
class Simulation:
    """Whole-network state; ``step`` advances one slot and returns its record."""

    cfg: SimConfig
    users: list[UserSim] = field(init=False)
    bg_w: np.ndarray = field(init=False)
    k: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        seq = np.random.SeedSequence(self.cfg.seed)
        streams = seq.spawn(1 + len(self.cfg.users))
        self.bg_rng = np.random.Generator(np.random.PCG64(streams[0]))
        self.users = [
            UserSim(self.cfg, u, np.random.Generator(np.random.PCG64(s)))
            for u, s in zip(self.cfg.users, streams[1:])
        ]
        bg = self.cfg.background
        self.bg_w = np.full(bg.count, float(bg.initial_window))
        self.cum_quality = np.zeros(len(self.users))

    def step(self) -> SlotRecord:
        k = self.k
        cfg = self.cfg
        decisions = [u.decide(k) for u in self.users]
        load = float(sum(d.window for d in decisions) + self.bg_w.sum())
        p_hat = bottleneck_loss(load, cfg.link.capacity, cfg.link.buffer, cfg.solver.p_floor)
        bg_mean = float(self.bg_w.mean()) if self.bg_w.size else 0.0
        if self.bg_w.size:
            p_event = 1.0 - (1.0 - p_hat) ** self.bg_w
            lost = self.bg_rng.random(self.bg_w.size) < p_event
            bg = cfg.background
            self.bg_w = np.where(
                lost,
                np.maximum(1.0, (1 - bg.b) * self.bg_w),
                np.minimum(self.bg_w + bg.a, float(cfg.solver.w_max)),
            )
        slots = tuple(u.advance(k, p_hat) for u in self.users)
        self.cum_quality += [s.quality for s in slots]
        fair = jain_index(self.cum_quality / (k + 1)) if self.users else None
        self.k += 1
        return SlotRecord(k, slots, p_hat, fair, bg_mean)


@dataclass
class RunResult:
    trace: list[SlotRecord]
    summary: dict


def summarize(cfg: SimConfig, trace: list[SlotRecord], sim: Simulation | None) -> dict:
    horizon_default = cfg.solver.horizon
    out: dict = {
        "unit": "dB distortion reduction (per-packet class impact x delivered packets)",
        "slots": len(trace),
        "no_data": not trace,
    }
    users = []
    for i, u in enumerate(cfg.users):
        entry: dict = {"name": u.name, "controller": u.controller}
        if trace:
            win = np.array([r.users[i].window for r in trace], dtype=float)
            qual = np.array([r.users[i].quality for r in trace])
            ratio = np.array([r.users[i].ratio for r in trace])
            K = u.horizon or horizon_default
            if len(ratio) >= K:
                _, ok = friendliness(ratio, K)
                pass_rate = float(ok.mean())
            else:
                pass_rate = None
            entry.update({
                "mean_quality": float(qual.mean()),
                "total_quality": float(qual.sum()),
                "mean_window": float(win.mean()),
                "mean_ratio": float(ratio.mean()),
                "friendliness_pass_rate": pass_rate,
                "mean_reference_window": float(np.mean([r.users[i].w_ref for r in trace])),
                "mean_p": float(np.mean([r.users[i].p for r in trace])),
                "packets_sent": int(win.sum()),
                "packets_lost": int(sum(r.users[i].lost for r in trace)),
            })
        if sim is not None:
            entry["classes"] = sim.users[i].class_report()
        users.append(entry)
    out["users"] = users
    if trace:
        fair = [r.fairness for r in trace]
        valid = [f for f in fair if f is not None]
        out["network"] = {
            "mean_p_hat": float(np.mean([r.p_hat for r in trace])),
            "bg_mean_window": float(np.mean([r.bg_mean_window for r in trace])),
        }
        out["fairness"] = {
            "final": fair[-1],
            "min": min(valid) if valid else None,
            "first_slot_above_0.99": next(
                (r.slot for r in trace if r.fairness is not None and r.fairness >= 0.99), None
            ),
        }
    return out


def run(cfg: SimConfig) -> RunResult:
    """Simulate ``cfg.slots`` slots; identical configs give identical results."""
    if cfg.slots < 0:
        raise ConfigError("slots must be nonnegative")
    if cfg.link.capacity <= 0:
        raise ConfigError("link.capacity must be positive")
    sim = Simulation(cfg)
    trace = [sim.step() for _ in range(cfg.slots)]
    return RunResult(trace, summarize(cfg, trace, sim))
