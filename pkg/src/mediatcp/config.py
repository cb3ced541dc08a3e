"""Experiment configuration: dataclasses, workload presets and a validating JSON loader."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .media import ClassGraph, ClassSpec, ConfigError

SCHEMA_VERSION = 1
CONTROLLERS = ("mt", "rd", "pa")

# Per-packet distortion impact (dB) of the sixteen temporal/spatial classes.
TABLE_Q = (0.154, 0.153, 0.09, 0.08) + (0.072,) * 4 + (0.053,) * 8

# Dyadic decoding tree over the sixteen classes: 1 -> 2 -> {3, 4} -> ...
MCTF_PARENTS: dict[int, tuple[int, ...]] = {1: (), 2: (1,), 3: (2,), 4: (2,)}
for _child in range(5, 17):
    MCTF_PARENTS[_child] = ((_child - 5) // 2 + 3,) if _child < 9 else ((_child - 9) // 2 + 5,)

WORKLOAD_PACKETS = {
    "coastguard": (17, 17, 12, 12) + (5,) * 4 + (4,) * 8,
    "foreman": (34, 34, 8, 8) + (4,) * 4 + (0,) * 8,
    "mobile": (30, 30, 13, 13) + (1,) * 4 + (0,) * 8,
}


def workload_classes(name: str, dag: bool = True) -> tuple[ClassSpec, ...]:
    try:
        packets = WORKLOAD_PACKETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown workload {name!r}; known: {sorted(WORKLOAD_PACKETS)}"
        ) from None
    return tuple(
        ClassSpec(
            id=i + 1,
            q=TABLE_Q[i],
            n0=n,
            parents=frozenset(MCTF_PARENTS[i + 1]) if dag else frozenset(),
        )
        for i, n in enumerate(packets)
    )


@dataclass(frozen=True)
class LinkConfig:
    capacity: float = 450.0
    buffer: int = 100


@dataclass(frozen=True)
class BackgroundConfig:
    count: int = 20
    a: float = 1.0
    b: float = 0.5
    initial_window: float = 16.0


@dataclass(frozen=True)
class SolverDefaults:
    lam: float | str = 10.0
    gamma: float = 0.8
    horizon: int = 4
    alpha: float = 0.8
    p_floor: float = 1e-4
    w_max: int = 64
    n_max: int = 64
    chain_window: int = 200
    gain_scale: float | None = None


@dataclass(frozen=True)
class UserConfig:
    name: str
    controller: str
    classes: tuple[ClassSpec, ...]
    gop_length: int = 4
    playback_delay: float = 0.266
    lam: float | str | None = None
    gamma: float | None = None
    horizon: int | None = None
    workload: str | None = None


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    slots: int = 1000
    slot_duration: float = 0.133
    packet_size: int = 1000
    users: tuple[UserConfig, ...] = ()
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    solver: SolverDefaults = field(default_factory=SolverDefaults)
    initial_loss: float | None = None

    @property
    def gain_scale(self) -> float:
        """Packet length in kilobits unless overridden."""
        if self.solver.gain_scale is not None:
            return self.solver.gain_scale
        return self.packet_size * 8 / 1000

    def delay_slots(self, user: UserConfig) -> int:
        return round(user.playback_delay / self.slot_duration)

    def with_users(self, **changes) -> "SimConfig":
        """Copy with ``changes`` applied to every user."""
        return replace(self, users=tuple(replace(u, **changes) for u in self.users))


# --------------------------------------------------------------------------
# loading


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}: required field missing")
    return d[key]


def _num(value, where: str, *, integer=False, lo=None, hi=None, lo_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer and (not float(value).is_integer()):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{where}: must be finite")
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ConfigError(f"{where}: must be {'>' if lo_open else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{where}: must be <= {hi}, got {value}")
    return int(value) if integer else float(value)


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")


def _lam(value, where: str):
    if value == "auto":
        return "auto"
    return _num(value, where, lo=0)


def _classes(raw, where: str) -> tuple[ClassSpec, ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where}: expected a nonempty list of classes")
    out = []
    for i, c in enumerate(raw):
        w = f"{where}[{i}]"
        _check_keys(c, {"id", "q", "n0", "parents", "arrival_time"}, w)
        parents = c.get("parents", [])
        if not isinstance(parents, list):
            raise ConfigError(f"{w}.parents: expected a list")
        out.append(
            ClassSpec(
                id=_num(_need(c, "id", w), f"{w}.id", integer=True),
                q=_num(_need(c, "q", w), f"{w}.q", lo=0),
                n0=_num(_need(c, "n0", w), f"{w}.n0", integer=True, lo=0),
                parents=frozenset(_num(p, f"{w}.parents", integer=True) for p in parents),
                arrival_time=_num(c.get("arrival_time", 0.0), f"{w}.arrival_time", lo=0),
            )
        )
    ClassGraph(out)
    return tuple(out)


def config_from_dict(raw: dict) -> SimConfig:
    """Validate a parsed config document; errors name the offending field."""
    _check_keys(
        raw,
        {"schema_version", "seed", "slots", "slot_duration", "packet_size", "users",
         "background_tcp", "link", "solver", "initial_loss"},
        "config",
    )
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: unsupported version {version!r}")
    link_raw = _need(raw, "link", "config")
    _check_keys(link_raw, {"capacity", "buffer"}, "link")
    link = LinkConfig(
        capacity=_num(_need(link_raw, "capacity", "link"), "link.capacity", lo=0, lo_open=True),
        buffer=_num(_need(link_raw, "buffer", "link"), "link.buffer", integer=True, lo=1),
    )
    bg_raw = raw.get("background_tcp", {})
    _check_keys(bg_raw, {"count", "a", "b", "initial_window"}, "background_tcp")
    bg = BackgroundConfig(
        count=_num(bg_raw.get("count", 20), "background_tcp.count", integer=True, lo=0),
        a=_num(bg_raw.get("a", 1.0), "background_tcp.a", lo=0, lo_open=True),
        b=_num(bg_raw.get("b", 0.5), "background_tcp.b", lo=0, lo_open=True, hi=0.999),
        initial_window=_num(bg_raw.get("initial_window", 16.0), "background_tcp.initial_window", lo=1),
    )
    s_raw = raw.get("solver", {})
    _check_keys(
        s_raw,
        {"lambda", "gamma", "horizon", "alpha", "p_floor", "w_max", "n_max",
         "chain_window", "gain_scale"},
        "solver",
    )
    solver = SolverDefaults(
        lam=_lam(s_raw.get("lambda", 10.0), "solver.lambda"),
        gamma=_num(s_raw.get("gamma", 0.8), "solver.gamma", lo=0, hi=1),
        horizon=_num(s_raw.get("horizon", 4), "solver.horizon", integer=True, lo=1),
        alpha=_num(s_raw.get("alpha", 0.8), "solver.alpha", lo=0, hi=1),
        p_floor=_num(s_raw.get("p_floor", 1e-4), "solver.p_floor", lo=0, lo_open=True, hi=1),
        w_max=_num(s_raw.get("w_max", 64), "solver.w_max", integer=True, lo=1),
        n_max=_num(s_raw.get("n_max", 64), "solver.n_max", integer=True, lo=1),
        chain_window=_num(s_raw.get("chain_window", 200), "solver.chain_window", integer=True, lo=2),
        gain_scale=None if s_raw.get("gain_scale") is None
        else _num(s_raw["gain_scale"], "solver.gain_scale", lo=0, lo_open=True),
    )
    slot_duration = _num(raw.get("slot_duration", 0.133), "config.slot_duration", lo=0, lo_open=True)
    users_raw = raw.get("users", [])
    if not isinstance(users_raw, list):
        raise ConfigError("config.users: expected a list")
    users = []
    for i, u in enumerate(users_raw):
        w = f"users[{i}]"
        _check_keys(
            u,
            {"name", "controller", "workload", "classes", "dag", "gop_length",
             "playback_delay", "lambda", "gamma", "horizon"},
            w,
        )
        ctrl = _need(u, "controller", w)
        if ctrl not in CONTROLLERS:
            raise ConfigError(f"{w}.controller: expected one of {CONTROLLERS}, got {ctrl!r}")
        if ("workload" in u) == ("classes" in u):
            raise ConfigError(f"{w}: give exactly one of 'workload' or 'classes'")
        if "workload" in u:
            classes = workload_classes(u["workload"], bool(u.get("dag", True)))
        else:
            classes = _classes(u["classes"], f"{w}.classes")
        gop = _num(u.get("gop_length", 4), f"{w}.gop_length", integer=True, lo=1)
        delay = _num(u.get("playback_delay", 0.266), f"{w}.playback_delay", lo=0, lo_open=True)
        ratio = delay / slot_duration
        if round(ratio) < 1 or abs(ratio - round(ratio)) > 0.01 * max(ratio, 1):
            raise ConfigError(
                f"{w}.playback_delay: {delay} s is not a whole number of {slot_duration} s slots"
            )
        for c in classes:
            if c.arrival_time >= gop * slot_duration:
                raise ConfigError(f"{w}.classes: class {c.id} arrives after the GOP ends")
        users.append(
            UserConfig(
                name=str(u.get("name", f"user{i}")),
                controller=ctrl,
                classes=classes,
                gop_length=gop,
                playback_delay=delay,
                lam=None if "lambda" not in u else _lam(u["lambda"], f"{w}.lambda"),
                gamma=None if "gamma" not in u else _num(u["gamma"], f"{w}.gamma", lo=0, hi=1),
                horizon=None if "horizon" not in u
                else _num(u["horizon"], f"{w}.horizon", integer=True, lo=1),
                workload=u.get("workload"),
            )
        )
    init = raw.get("initial_loss")
    return SimConfig(
        seed=_num(raw.get("seed", 0), "config.seed", integer=True, lo=0),
        slots=_num(raw.get("slots", 1000), "config.slots", integer=True, lo=0),
        slot_duration=slot_duration,
        packet_size=_num(raw.get("packet_size", 1000), "config.packet_size", integer=True, lo=1),
        users=tuple(users),
        background=bg,
        link=link,
        solver=solver,
        initial_loss=None if init is None
        else _num(init, "config.initial_loss", lo=0, lo_open=True, hi=1),
    )


def load_config(path: str | Path) -> SimConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw)


def _class_dict(c: ClassSpec) -> dict:
    return {
        "id": c.id,
        "q": c.q,
        "n0": c.n0,
        "parents": sorted(c.parents),
        "arrival_time": c.arrival_time,
    }


def config_to_dict(cfg: SimConfig) -> dict[str, Any]:
    """Fully resolved document; feeding it back to ``config_from_dict`` round-trips."""
    users = []
    for u in cfg.users:
        d = {
            "name": u.name,
            "controller": u.controller,
            "classes": [_class_dict(c) for c in u.classes],
            "gop_length": u.gop_length,
            "playback_delay": u.playback_delay,
        }
        for key, val in (("lambda", u.lam), ("gamma", u.gamma), ("horizon", u.horizon)):
            if val is not None:
                d[key] = val
        users.append(d)
    s = cfg.solver
    out = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "slots": cfg.slots,
        "slot_duration": cfg.slot_duration,
        "packet_size": cfg.packet_size,
        "link": {"capacity": cfg.link.capacity, "buffer": cfg.link.buffer},
        "background_tcp": {
            "count": cfg.background.count,
            "a": cfg.background.a,
            "b": cfg.background.b,
            "initial_window": cfg.background.initial_window,
        },
        "solver": {
            "lambda": s.lam, "gamma": s.gamma, "horizon": s.horizon, "alpha": s.alpha,
            "p_floor": s.p_floor, "w_max": s.w_max, "n_max": s.n_max,
            "chain_window": s.chain_window, "gain_scale": s.gain_scale,
        },
        "users": users,
    }
    if cfg.initial_loss is not None:
        out["initial_loss"] = cfg.initial_loss
    return copy.deepcopy(out)
