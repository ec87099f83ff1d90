"""Problem instances: network presets, traffic and delay generation, solar
profiles, tariffs, and scenario config files.

Everything here is a pure function over immutable inputs. Randomness always
flows through an explicit seed, so identical configs reproduce identical
instances bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

HOURS_PER_DAY = 24

TRAFFIC_TIERS = {"low": 0.5, "medium": 1.0, "high": 1.5}

MONTHS = ("jan", "feb", "mar", "apr", "may", "jun",
          "jul", "aug", "sep", "oct", "nov", "dec")
DAYS_IN_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)

# Daily solar yield per unit of panel scale (kWh / unit / day), one value per
# month. Synthetic city profiles with distinct seasonal shapes; cairo
# dominates istanbul dominates stockholm in every month, jakarta is flat.
CITY_MONTHLY_DAILY_KWH = {
    "stockholm": (0.020, 0.050, 0.120, 0.220, 0.320, 0.360,
                  0.340, 0.260, 0.160, 0.080, 0.030, 0.015),
    "istanbul": (0.100, 0.130, 0.190, 0.250, 0.310, 0.350,
                 0.340, 0.310, 0.240, 0.170, 0.110, 0.090),
    "cairo": (0.200, 0.240, 0.290, 0.330, 0.360, 0.380,
              0.370, 0.350, 0.310, 0.260, 0.210, 0.190),
    "jakarta": (0.270, 0.280, 0.290, 0.300, 0.290, 0.280,
                0.280, 0.290, 0.290, 0.290, 0.280, 0.270),
}

# Time-of-use grid tariff (currency per kWh by hour of day): night 22-06,
# day 06-17, evening peak 17-22.
TOU_TARIFF_LEVELS = (0.29, 0.46, 0.70)

CU = "cu"
DU = "du"
SWITCH = "switch"


class ConfigError(ValueError):
    """Scenario config rejected; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class TopologyError(ValueError):
    pass


class SolarParseError(ValueError):
    """Solar CSV rejected; ``line`` is the 1-based offending line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


# ---------------------------------------------------------------------------
# Network topology


@dataclass(frozen=True)
class Node:
    id: str
    kind: str  # CU | DU | SWITCH


@dataclass(frozen=True)
class Arc:
    tail: str
    head: str
    capacity: float


@dataclass(frozen=True)
class NetworkTopology:
    """Directed graph of one CU, DUs, and switches with capacitated arcs."""

    nodes: tuple[Node, ...]
    arcs: tuple[Arc, ...]

    @property
    def node_index(self) -> dict[str, int]:
        return {n.id: k for k, n in enumerate(self.nodes)}

    @property
    def cu_id(self) -> str:
        return next(n.id for n in self.nodes if n.kind == CU)

    @property
    def du_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.kind == DU)

    @property
    def switch_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.kind == SWITCH)

    def out_arcs(self, node_id: str) -> list[int]:
        return [k for k, a in enumerate(self.arcs) if a.tail == node_id]

    def in_arcs(self, node_id: str) -> list[int]:
        return [k for k, a in enumerate(self.arcs) if a.head == node_id]

    def with_capacity(self, capacity) -> "NetworkTopology":
        """Return a copy with arc capacities replaced (scalar or per-arc)."""
        caps = np.broadcast_to(np.asarray(capacity, dtype=float),
                               (len(self.arcs),))
        arcs = tuple(Arc(a.tail, a.head, float(c))
                     for a, c in zip(self.arcs, caps))
        return NetworkTopology(self.nodes, arcs)

    def validate(self) -> None:
        kinds = [n.kind for n in self.nodes]
        if kinds.count(CU) != 1:
            raise TopologyError("topology must contain exactly one CU node")
        if kinds.count(DU) < 1:
            raise TopologyError("topology must contain at least one DU node")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate node ids")
        known = set(ids)
        for a in self.arcs:
            if a.tail == a.head:
                raise TopologyError(f"self-loop arc at {a.tail}")
            if a.tail not in known or a.head not in known:
                raise TopologyError(f"arc {a.tail}->{a.head} uses unknown node")
            if not a.capacity >= 0:
                raise TopologyError(f"arc {a.tail}->{a.head} has negative capacity")
        cu = self.cu_id
        fwd = self._reachable(cu)
        for du in self.du_ids:
            if du not in fwd:
                raise TopologyError(f"no directed path CU->{du}")
            if cu not in self._reachable(du):
                raise TopologyError(f"no directed path {du}->CU")

    def _reachable(self, start: str) -> set[str]:
        succ: dict[str, list[str]] = {}
        for a in self.arcs:
            succ.setdefault(a.tail, []).append(a.head)
        seen = {start}
        stack = [start]
        while stack:
            for nxt in succ.get(stack.pop(), []):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen


def _two_tier_edges(n_du: int, tier1: int, tier2: int) -> list[tuple[str, str]]:
    """Undirected edge list of a two-tier aggregation mesh."""
    edges = [("cu", f"s{j + 1}") for j in range(tier1)]
    for k in range(tier2):
        sw = f"s{tier1 + k + 1}"
        edges.append((f"s{(k % tier1) + 1}", sw))
        if tier1 > 1 and k % 2 == 1:
            edges.append((f"s{((k + 1) % tier1) + 1}", sw))
    for k in range(tier2 - 1):  # neighbor links along the second tier
        edges.append((f"s{tier1 + k + 1}", f"s{tier1 + k + 2}"))
    for r in range(n_du):
        sw = f"s{tier1 + (r * tier2) // n_du + 1}"
        edges.append((sw, f"du{r + 1}"))
    return edges


# The 6-DU reference network: 12 nodes, 28 directed arcs. Two first-tier
# switches below the CU, three second-tier switches with neighbor links,
# two DUs per second-tier switch.
_DU6_EDGES = [
    ("cu", "s1"), ("cu", "s2"),
    ("s1", "s3"), ("s1", "s4"), ("s2", "s4"), ("s2", "s5"),
    ("s3", "s4"), ("s4", "s5"),
    ("s3", "du1"), ("s3", "du2"), ("s4", "du3"), ("s4", "du4"),
    ("s5", "du5"), ("s5", "du6"),
]

_PRESETS = {
    "du6": (6, _DU6_EDGES),
    "du12": (12, _two_tier_edges(12, 3, 5)),
    "du24": (24, _two_tier_edges(24, 4, 10)),
}


def build_topology(preset: str | None = None,
                   edges: list[tuple[str, str]] | None = None,
                   arc_capacity: float = math.inf) -> NetworkTopology:
    """Build a topology from a preset name or an explicit undirected edge list.

    Undirected edges expand to two directed arcs that share the capacity
    parameter but are constrained independently.
    """
    if (preset is None) == (edges is None):
        raise ConfigError("topology", "give exactly one of preset or edges")
    if preset is not None:
        if preset not in _PRESETS:
            raise ConfigError("topology.preset",
                              f"unknown preset {preset!r}; expected one of {sorted(_PRESETS)}")
        n_du, edges = _PRESETS[preset]
    node_ids: list[str] = []
    for tail, head in edges:
        for v in (tail, head):
            if v not in node_ids:
                node_ids.append(v)

    def kind_of(v: str) -> str:
        if v == "cu":
            return CU
        if v.startswith("du"):
            return DU
        return SWITCH

    def order_key(v: str) -> tuple[int, int]:
        rank = {CU: 0, DU: 1, SWITCH: 2}[kind_of(v)]
        digits = "".join(ch for ch in v if ch.isdigit())
        return (rank, int(digits) if digits else 0)

    nodes = tuple(Node(v, kind_of(v)) for v in sorted(node_ids, key=order_key))
    arcs = []
    for tail, head in edges:
        arcs.append(Arc(tail, head, float(arc_capacity)))
        arcs.append(Arc(head, tail, float(arc_capacity)))
    topo = NetworkTopology(nodes, tuple(arcs))
    topo.validate()
    return topo


# ---------------------------------------------------------------------------
# Users, traffic, delay thresholds


@dataclass(frozen=True)
class UserPopulation:
    """Who hangs where: RRH of each user, DU of each RRH, plus the per-user
    delay budgets (max functions allowed at the CU) and traffic matrix."""

    du_of_rrh: np.ndarray      # (n_rrh,) int, DU index
    rrh_of_user: np.ndarray    # (n_users,) int
    delay_limits: np.ndarray   # (n_users, T) int
    traffic: np.ndarray        # (n_users, T) float, load units

    @property
    def n_users(self) -> int:
        return int(self.rrh_of_user.shape[0])

    @property
    def du_of_user(self) -> np.ndarray:
        return self.du_of_rrh[self.rrh_of_user]

    def users_of_du(self, r: int) -> np.ndarray:
        return np.nonzero(self.du_of_user == r)[0]


@dataclass(frozen=True)
class TrafficGenConfig:
    """Daily sinusoidal traffic shape parameters."""

    slope_exponent: float = 3.0
    phase_range: tuple[float, float] = (3 * math.pi / 4, 7 * math.pi / 4)
    noise_amplitude: float = 0.05
    multiplier: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.slope_exponent < 1:
            raise ConfigError("traffic.slope_exponent", "must be >= 1")
        if self.multiplier <= 0:
            raise ConfigError("traffic.multiplier", "must be > 0")
        if self.noise_amplitude < 0:
            raise ConfigError("traffic.noise", "must be >= 0")


def traffic_shape(hour, phase, slope_exponent: float = 3.0):
    """Noiseless daily load shape in [0, 1]: ((1 + sin(pi*h/12 + phase)) / 2) ** nu."""
    return ((1.0 + np.sin(np.pi * np.asarray(hour, dtype=float) / 12.0 + phase)) / 2.0) \
        ** slope_exponent


def peak_hour(phase: float) -> float:
    """Hour of day at which traffic_shape(., phase) attains its maximum of 1."""
    return ((math.pi / 2 - phase) * 12.0 / math.pi) % HOURS_PER_DAY


def generate_traffic(config: TrafficGenConfig, users: UserPopulation,
                     n_intervals: int, interval_hours: float | None = None) -> np.ndarray:
    """Per-user, per-interval traffic loads.

    One phase is drawn per DU so each zone peaks at a distinct hour; a user
    inherits its DU's phase plus additive uniform noise on [0, amplitude].
    The shape is sampled at interval start hours.
    """
    if n_intervals <= 0:
        raise ConfigError("intervals", "must be > 0")
    config.validate()
    if interval_hours is None:
        interval_hours = HOURS_PER_DAY / n_intervals
    rng = np.random.default_rng(config.seed)
    n_du = int(users.du_of_rrh.max()) + 1
    phases = rng.uniform(config.phase_range[0], config.phase_range[1], size=n_du)
    noise = rng.uniform(0.0, config.noise_amplitude,
                        size=(users.n_users, n_intervals)) \
        if config.noise_amplitude > 0 else np.zeros((users.n_users, n_intervals))
    hours = np.arange(n_intervals) * interval_hours
    lam = traffic_shape(hours[None, :], phases[users.du_of_user][:, None],
                        config.slope_exponent) + noise
    return config.multiplier * np.maximum(0.0, lam)


def generate_delay_thresholds(n_users: int, f_size: int, seed: int) -> np.ndarray:
    """Per-user max count of functions placeable at the CU, uniform on {0..f_size}."""
    if f_size < 0:
        raise ConfigError("functions", "must be >= 0")
    rng = np.random.default_rng(seed)
    return rng.integers(0, f_size + 1, size=n_users)


# ---------------------------------------------------------------------------
# Solar


def solar_bell_weights() -> np.ndarray:
    """Hourly clear-sky weights: zero 19:00-05:00, peak at noon, sum 1."""
    hours = np.arange(HOURS_PER_DAY, dtype=float)
    w = np.where((hours > 5) & (hours < 19),
                 np.sin(np.pi * (hours - 5) / 14.0) ** 2, 0.0)
    return w / w.sum()


def synthetic_solar_day(city: str, month: str) -> np.ndarray:
    """Hourly generation (kWh per unit of panel scale) for a clear-sky day."""
    if city not in CITY_MONTHLY_DAILY_KWH:
        raise ConfigError("city", f"unknown city {city!r}; expected one of "
                                  f"{sorted(CITY_MONTHLY_DAILY_KWH)}")
    if month not in MONTHS:
        raise ConfigError("month", f"unknown month {month!r}")
    daily = CITY_MONTHLY_DAILY_KWH[city][MONTHS.index(month)]
    return daily * solar_bell_weights()


def load_solar_profile(path: str | Path) -> np.ndarray:
    """Parse a solar CSV into an array of (n_days, 24) hourly kWh values.

    Schema: header ``hour,generation_kwh_per_unit`` with 24 rows per day;
    multi-day files carry a leading ``day`` column.
    """
    rows: list[tuple[int, int, float]] = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        cols = [c.strip() for c in header.split(",")]
        if cols == ["hour", "generation_kwh_per_unit"]:
            has_day = False
        elif cols == ["day", "hour", "generation_kwh_per_unit"]:
            has_day = True
        else:
            raise SolarParseError(1, f"unexpected header {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != (3 if has_day else 2):
                raise SolarParseError(lineno, f"expected {3 if has_day else 2} fields")
            try:
                day = int(parts[0]) if has_day else 0
                hour = int(parts[-2])
                gen = float(parts[-1])
            except ValueError as exc:
                raise SolarParseError(lineno, str(exc)) from None
            if not 0 <= hour < HOURS_PER_DAY:
                raise SolarParseError(lineno, f"hour {hour} out of range")
            if gen < 0:
                raise SolarParseError(lineno, f"negative generation {gen}")
            rows.append((day, hour, gen))
    if not rows:
        raise SolarParseError(2, "no data rows")
    days = sorted({d for d, _, _ in rows})
    out = np.full((len(days), HOURS_PER_DAY), np.nan)
    for d, h, g in rows:
        out[days.index(d), h] = g
    if np.isnan(out).any():
        raise SolarParseError(2, "incomplete day record: each day needs 24 hourly rows")
    return out


def aggregate_hours(hourly: np.ndarray, n_intervals: int) -> np.ndarray:
    """Sum 24 hourly values into n_intervals equal bins (n must divide 24)."""
    if HOURS_PER_DAY % n_intervals != 0:
        raise ConfigError("intervals", "must divide 24")
    return np.asarray(hourly, dtype=float).reshape(n_intervals, -1).sum(axis=1)


def tou_tariff(n_intervals: int) -> np.ndarray:
    """Time-of-use tariff per interval (mean of hourly levels inside the bin)."""
    hours = np.arange(HOURS_PER_DAY)
    night, day, peak = TOU_TARIFF_LEVELS
    hourly = np.where(hours < 6, night,
                      np.where(hours < 17, day, np.where(hours < 22, peak, night)))
    if HOURS_PER_DAY % n_intervals != 0:
        raise ConfigError("intervals", "must divide 24")
    return hourly.reshape(n_intervals, -1).mean(axis=1)


# ---------------------------------------------------------------------------
# Energy parameters and the assembled scenario


@dataclass(frozen=True)
class SideValues:
    """A parameter that takes one value at the CU and one at every DU."""

    cu: float
    du: float

    def per_unit(self, n_du: int) -> np.ndarray:
        return np.array([self.cu] + [self.du] * n_du, dtype=float)


@dataclass(frozen=True)
class EnergyParams:
    """Wh figures are per interval; generation is kWh per unit of panel scale.

    Unit order everywhere: index 0 is the CU, then DUs in topology order.
    """

    static_wh: SideValues
    dpe_wh: SideValues
    panel_scale: SideValues
    battery_kwh: SideValues
    initial_charge_kwh: SideValues
    sell_ratio: float
    tariff: np.ndarray          # (T,)
    generation: np.ndarray      # (n_units, T)
    cyclic_battery: bool = False

    def validate(self, n_units: int, n_intervals: int) -> None:
        for name in ("static_wh", "dpe_wh", "panel_scale", "battery_kwh",
                     "initial_charge_kwh"):
            sv: SideValues = getattr(self, name)
            if sv.cu < 0 or sv.du < 0:
                raise ConfigError(f"energy.{name}", "must be >= 0")
        if not 0.0 <= self.sell_ratio <= 1.0:
            raise ConfigError("energy.sell_ratio", "must be in [0, 1]")
        if self.tariff.shape != (n_intervals,):
            raise ConfigError("energy.tariff",
                              f"needs one value per interval ({n_intervals})")
        if self.generation.shape != (n_units, n_intervals):
            raise ConfigError("energy.generation",
                              f"expected shape {(n_units, n_intervals)}, got "
                              f"{self.generation.shape}")
        if (self.generation < 0).any():
            raise ConfigError("energy.generation", "must be >= 0")
        if self.initial_charge_kwh.cu > self.battery_kwh.cu or \
                self.initial_charge_kwh.du > self.battery_kwh.du:
            raise ConfigError("energy.initial_charge_kwh",
                              "initial charge exceeds battery capacity")


@dataclass(frozen=True)
class Scenario:
    """A full problem instance."""

    topology: NetworkTopology
    users: UserPopulation
    energy: EnergyParams
    n_functions: int
    dpe_count: SideValues
    dpe_capacity: SideValues
    n_intervals: int
    interval_hours: float
    meta: dict = field(default_factory=dict)

    @property
    def n_du(self) -> int:
        return len(self.topology.du_ids)

    @property
    def n_units(self) -> int:
        return 1 + self.n_du

    @property
    def unit_labels(self) -> tuple[str, ...]:
        return ("cu",) + self.topology.du_ids

    def validate(self) -> None:
        self.topology.validate()
        T = self.n_intervals
        if T < 1:
            raise ConfigError("intervals", "must be >= 1")
        if self.interval_hours <= 0:
            raise ConfigError("interval_hours", "must be > 0")
        if self.n_functions < 1:
            raise ConfigError("functions", "must be >= 1")
        if int(self.dpe_count.cu) < 1 or int(self.dpe_count.du) < 1:
            raise ConfigError("dpe_count", "must be >= 1 per side")
        if self.dpe_capacity.cu < 0 or self.dpe_capacity.du < 0:
            raise ConfigError("dpe_capacity", "must be >= 0")
        u = self.users
        if u.traffic.shape != (u.n_users, T):
            raise ConfigError("traffic", f"expected shape {(u.n_users, T)}, got "
                                         f"{u.traffic.shape}")
        if u.delay_limits.shape != (u.n_users, T):
            raise ConfigError("delay", f"expected shape {(u.n_users, T)}")
        if (u.traffic < 0).any():
            raise ConfigError("traffic", "loads must be >= 0")
        if (u.delay_limits < 0).any() or (u.delay_limits > self.n_functions).any():
            raise ConfigError("delay", "thresholds must lie in {0..functions}")
        if u.du_of_rrh.min(initial=0) < 0 or \
                u.du_of_rrh.max(initial=0) >= self.n_du:
            raise ConfigError("users", "RRH maps to unknown DU index")
        self.energy.validate(self.n_units, T)


DEFAULT_CONFIG = {
    "name": "default",
    "seed": 1,
    "topology": {"preset": "du6"},
    "arc_capacity": "auto",
    "arc_capacity_fraction": 0.6,
    "rrh_per_du": 5,
    "users_per_rrh": 10,
    "functions": 3,
    "dpe_count": {"cu": 12, "du": 4},
    "dpe_capacity": {"cu": 45.0, "du": 45.0},
    "intervals": 24,
    "traffic": {"tier": "medium", "slope_exponent": 3.0, "noise": 0.05},
    "delay": {"per_interval": False},
    "city": "istanbul",
    "month": "jun",
    "solar_csv": None,
    "solar_day": 0,
    "energy": {
        "static_wh": {"cu": 1000.0, "du": 500.0},
        "dpe_wh": {"cu": 400.0, "du": 400.0},
        "panel_scale": {"cu": 80.0, "du": 20.0},
        "battery_kwh": {"cu": 50.0, "du": 20.0},
        "initial_charge_kwh": {"cu": 0.0, "du": 0.0},
        "sell_ratio": 0.5,
        "tariff": "tou",
        "cyclic_battery": False,
    },
}


def _merged_defaults(config: dict) -> dict:
    out = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, val in config.items():
        # topology is one coherent choice, never a field merge
        if key != "topology" and isinstance(val, dict) \
                and isinstance(out.get(key), dict):
            out[key].update(val)
        else:
            out[key] = val
    return out


def _side(raw, field_name: str) -> SideValues:
    try:
        return SideValues(float(raw["cu"]), float(raw["du"]))
    except (KeyError, TypeError, ValueError):
        raise ConfigError(field_name, "expected {'cu': x, 'du': y}") from None


def build_scenario(config: dict) -> Scenario:
    """Assemble and validate a Scenario from a config dict.

    If the config carries an ``explicit`` block (as written by
    save_scenario), its arrays are used verbatim; otherwise the instance is
    generated from the seed.
    """
    cfg = _merged_defaults(config)
    T = int(cfg["intervals"])
    if T < 1 or HOURS_PER_DAY % T != 0:
        raise ConfigError("intervals", "must be a positive divisor of 24")
    interval_hours = HOURS_PER_DAY / T
    F = int(cfg["functions"])
    seed = int(cfg["seed"])

    explicit = cfg.get("explicit")
    if explicit is not None:
        topo = NetworkTopology(
            tuple(Node(i, k) for i, k in explicit["nodes"]),
            tuple(Arc(t, h, float(c)) for t, h, c in explicit["arcs"]))
        users = UserPopulation(
            du_of_rrh=np.asarray(explicit["du_of_rrh"], dtype=int),
            rrh_of_user=np.asarray(explicit["rrh_of_user"], dtype=int),
            delay_limits=np.asarray(explicit["delay_limits"], dtype=int),
            traffic=np.asarray(explicit["traffic"], dtype=float))
        tariff = np.asarray(explicit["tariff"], dtype=float)
        generation = np.asarray(explicit["generation"], dtype=float)
    else:
        topo_cfg = cfg["topology"]
        if "preset" in topo_cfg:
            topo = build_topology(preset=topo_cfg["preset"])
        elif "edges" in topo_cfg:
            topo = build_topology(edges=[tuple(e) for e in topo_cfg["edges"]])
        else:
            raise ConfigError("topology", "needs preset or edges")
        n_du = len(topo.du_ids)
        rrh_per_du = int(cfg["rrh_per_du"])
        users_per_rrh = int(cfg["users_per_rrh"])
        if rrh_per_du < 1 or users_per_rrh < 1:
            raise ConfigError("users", "rrh_per_du and users_per_rrh must be >= 1")
        du_of_rrh = np.repeat(np.arange(n_du), rrh_per_du)
        rrh_of_user = np.repeat(np.arange(n_du * rrh_per_du), users_per_rrh)
        n_users = rrh_of_user.shape[0]

        tcfg = cfg["traffic"]
        if "multiplier" in tcfg:
            multiplier = float(tcfg["multiplier"])
        else:
            tier = tcfg.get("tier", "medium")
            if tier not in TRAFFIC_TIERS:
                raise ConfigError("traffic.tier",
                                  f"unknown tier {tier!r}; expected one of "
                                  f"{sorted(TRAFFIC_TIERS)}")
            multiplier = TRAFFIC_TIERS[tier]
        gen_cfg = TrafficGenConfig(
            slope_exponent=float(tcfg.get("slope_exponent", 3.0)),
            phase_range=tuple(tcfg.get("phase_range",
                                       (3 * math.pi / 4, 7 * math.pi / 4))),
            noise_amplitude=float(tcfg.get("noise", 0.05)),
            multiplier=multiplier,
            seed=seed)
        placeholder = UserPopulation(du_of_rrh, rrh_of_user,
                                     np.zeros((n_users, T), dtype=int),
                                     np.zeros((n_users, T)))
        traffic = generate_traffic(gen_cfg, placeholder, T, interval_hours)

        mu = generate_delay_thresholds(n_users, F, seed + 1)
        if cfg["delay"].get("per_interval", False):
            delay = np.stack([generate_delay_thresholds(n_users, F, seed + 1 + t)
                              for t in range(T)], axis=1)
        else:
            delay = np.tile(mu[:, None], (1, T))
        users = UserPopulation(du_of_rrh, rrh_of_user, delay, traffic)

        if cfg.get("solar_csv"):
            days = load_solar_profile(cfg["solar_csv"])
            day = int(cfg.get("solar_day", 0))
            if not 0 <= day < days.shape[0]:
                raise ConfigError("solar_day", f"file has {days.shape[0]} day records")
            hourly = days[day]
        else:
            hourly = synthetic_solar_day(cfg["city"], cfg["month"])
        g_series = aggregate_hours(hourly, T)
        generation = np.tile(g_series, (1 + n_du, 1))

        tr = cfg["energy"]["tariff"]
        tariff = tou_tariff(T) if tr == "tou" else np.asarray(tr, dtype=float)
        if tariff.shape == (HOURS_PER_DAY,) and T != HOURS_PER_DAY:
            tariff = tariff.reshape(T, -1).mean(axis=1)

        cap = cfg["arc_capacity"]
        if cap == "auto":
            peak_aggregate = float(traffic.sum(axis=0).max()) * F
            cap = float(cfg["arc_capacity_fraction"]) * peak_aggregate
        topo = topo.with_capacity(float(cap))

    ecfg = cfg["energy"]
    energy = EnergyParams(
        static_wh=_side(ecfg["static_wh"], "energy.static_wh"),
        dpe_wh=_side(ecfg["dpe_wh"], "energy.dpe_wh"),
        panel_scale=_side(ecfg["panel_scale"], "energy.panel_scale"),
        battery_kwh=_side(ecfg["battery_kwh"], "energy.battery_kwh"),
        initial_charge_kwh=_side(ecfg["initial_charge_kwh"],
                                 "energy.initial_charge_kwh"),
        sell_ratio=float(ecfg["sell_ratio"]),
        tariff=tariff,
        generation=generation,
        cyclic_battery=bool(ecfg.get("cyclic_battery", False)))
    # Wh figures in configs are per hour of operation; scale to the interval.
    if explicit is None and interval_hours != 1.0:
        energy = replace(
            energy,
            static_wh=SideValues(energy.static_wh.cu * interval_hours,
                                 energy.static_wh.du * interval_hours),
            dpe_wh=SideValues(energy.dpe_wh.cu * interval_hours,
                              energy.dpe_wh.du * interval_hours))

    meta = {"name": cfg.get("name", "scenario"),
            "seed": seed,
            "city": cfg.get("city"),
            "month": cfg.get("month"),
            "tier": cfg["traffic"].get("tier"),
            "preset": cfg["topology"].get("preset")}
    scenario = Scenario(topology=topo, users=users, energy=energy,
                        n_functions=F,
                        dpe_count=_side(cfg["dpe_count"], "dpe_count"),
                        dpe_capacity=_side(cfg["dpe_capacity"], "dpe_capacity"),
                        n_intervals=T, interval_hours=interval_hours, meta=meta)
    scenario.validate()
    return scenario


def scenario_to_config(s: Scenario) -> dict:
    """Fully explicit config for a scenario (round-trips exactly)."""
    return {
        "name": s.meta.get("name", "scenario"),
        "seed": s.meta.get("seed", 0),
        "intervals": s.n_intervals,
        "functions": s.n_functions,
        "dpe_count": {"cu": s.dpe_count.cu, "du": s.dpe_count.du},
        "dpe_capacity": {"cu": s.dpe_capacity.cu, "du": s.dpe_capacity.du},
        "topology": {"preset": s.meta.get("preset")},
        "traffic": {"tier": s.meta.get("tier")},
        "city": s.meta.get("city"),
        "month": s.meta.get("month"),
        "energy": {
            "static_wh": {"cu": s.energy.static_wh.cu, "du": s.energy.static_wh.du},
            "dpe_wh": {"cu": s.energy.dpe_wh.cu, "du": s.energy.dpe_wh.du},
            "panel_scale": {"cu": s.energy.panel_scale.cu,
                            "du": s.energy.panel_scale.du},
            "battery_kwh": {"cu": s.energy.battery_kwh.cu,
                            "du": s.energy.battery_kwh.du},
            "initial_charge_kwh": {"cu": s.energy.initial_charge_kwh.cu,
                                   "du": s.energy.initial_charge_kwh.du},
            "sell_ratio": s.energy.sell_ratio,
            "cyclic_battery": s.energy.cyclic_battery,
            "tariff": [float(v) for v in s.energy.tariff],
        },
        "explicit": {
            "nodes": [[n.id, n.kind] for n in s.topology.nodes],
            "arcs": [[a.tail, a.head, a.capacity] for a in s.topology.arcs],
            "du_of_rrh": s.users.du_of_rrh.tolist(),
            "rrh_of_user": s.users.rrh_of_user.tolist(),
            "delay_limits": s.users.delay_limits.tolist(),
            "traffic": s.users.traffic.tolist(),
            "generation": s.energy.generation.tolist(),
            "tariff": s.energy.tariff.tolist(),
        },
    }


def save_scenario(s: Scenario, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scenario_to_config(s), f, indent=2, sort_keys=True)
        f.write("\n")


def load_scenario(path: str | Path) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        try:
            config = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError("file", f"not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError("file", "top level must be an object")
    return build_scenario(config)


def scenario_hash(s: Scenario) -> str:
    """Stable content hash of the fully explicit scenario."""
    blob = json.dumps(scenario_to_config(s), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
