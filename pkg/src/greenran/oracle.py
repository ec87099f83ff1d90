"""Brute-force exact optimum for tiny instances.

Decomposition: the objective depends on the discrete decisions only through
each unit's active-DPE count series, and intervals couple only through the
batteries. So per interval we enumerate every feasible combination of
per-user centralized-function counts and DU->CU simple paths, reduce each to
its cheapest achievable count vector (exact bin packing per unit), keep the
Pareto-minimal achievable count vectors, and then search the cross-interval
product of those with an exact battery LP per unit. Monotonicity of cost in
the counts makes the reduction lossless, so the result is a true optimum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import milp as milp_mod
from .energy import Decisions, opex as opex_of
from .heuristics import optimal_battery_dispatch
from .scenario import Scenario

CAP_EPS = 1e-9


class OracleSizeError(ValueError):
    def __init__(self, estimate: int, limit: int):
        self.estimate = estimate
        super().__init__(f"enumeration would visit ~{estimate:.3g} candidates, "
                         f"over the {limit:.3g} guard")


@dataclass(frozen=True)
class TinyScenarioBound:
    max_dus: int = 3
    max_switches: int = 2
    max_users_per_du: int = 3
    max_functions: int = 2
    max_intervals: int = 4
    max_dpes_per_side: int = 2
    max_candidates: int = 10 ** 7

    def check(self, scenario: Scenario) -> None:
        topo = scenario.topology
        if len(topo.du_ids) > self.max_dus:
            raise OracleSizeError(len(topo.du_ids), self.max_dus)
        if len(topo.switch_ids) > self.max_switches:
            raise OracleSizeError(len(topo.switch_ids), self.max_switches)
        per_du = max(len(scenario.users.users_of_du(r))
                     for r in range(scenario.n_du))
        if per_du > self.max_users_per_du:
            raise OracleSizeError(per_du, self.max_users_per_du)
        if scenario.n_functions > self.max_functions:
            raise OracleSizeError(scenario.n_functions, self.max_functions)
        if scenario.n_intervals > self.max_intervals:
            raise OracleSizeError(scenario.n_intervals, self.max_intervals)
        if max(scenario.dpe_count.cu, scenario.dpe_count.du) > self.max_dpes_per_side:
            raise OracleSizeError(int(max(scenario.dpe_count.cu,
                                          scenario.dpe_count.du)),
                                  self.max_dpes_per_side)


@dataclass
class OracleStats:
    count_candidates: int = 0
    count_closed_form: int = 0
    path_checks: int = 0
    profiles_evaluated: int = 0
    profile_space: int = 0
    achievable_per_interval: list = field(default_factory=list)


@dataclass
class OracleResult:
    objective: float
    decisions: Decisions
    stats: OracleStats


def simple_paths(topology, start_id: str, goal_id: str,
                 limit: int = 10 ** 5) -> list[list[int]]:
    """All simple start->goal arc paths, lexicographic by arc ids."""
    node_index = topology.node_index
    arc_ends = [(node_index[a.tail], node_index[a.head]) for a in topology.arcs]
    out_of: dict[int, list[int]] = {}
    for e, (tail, _head) in enumerate(arc_ends):
        out_of.setdefault(tail, []).append(e)
    start, goal = node_index[start_id], node_index[goal_id]
    paths: list[list[int]] = []

    def dfs(node: int, visited: set[int], prefix: list[int]):
        if node == goal:
            paths.append(prefix.copy())
            return
        for e in sorted(out_of.get(node, [])):
            head = arc_ends[e][1]
            if head in visited:
                continue
            visited.add(head)
            prefix.append(e)
            dfs(head, visited, prefix)
            prefix.pop()
            visited.remove(head)
        if len(paths) > limit:
            raise OracleSizeError(len(paths), limit)

    dfs(start, {start}, [])
    return paths


def min_bins_exact(sizes: list[float], capacity: float, max_bins: int):
    """Exact minimum bin count; returns (n_bins, bin_of_item) or None.

    Zero-size items occupy no capacity but still need one open bin.
    """
    positive = [(s, k) for k, s in enumerate(sizes) if s > CAP_EPS]
    zero = [k for k, s in enumerate(sizes) if s <= CAP_EPS]
    bin_of = [0] * len(sizes)
    if not positive:
        if not sizes:
            return 0, []
        if max_bins < 1:
            return None
        return 1, bin_of
    if any(s > capacity + CAP_EPS for s, _ in positive):
        return None
    positive.sort(key=lambda sk: (-sk[0], sk[1]))
    vals = [s for s, _ in positive]
    total = sum(vals)
    lower = max(1, math.ceil(total / capacity - CAP_EPS))

    best: dict = {"n": None, "assign": None}

    def ffd():
        loads: list[float] = []
        assign = []
        for s in vals:
            for k, load in enumerate(loads):
                if load + s <= capacity + CAP_EPS:
                    loads[k] = load + s
                    assign.append(k)
                    break
            else:
                loads.append(s)
                assign.append(len(loads) - 1)
        return len(loads), assign

    n_ffd, assign_ffd = ffd()
    best["n"], best["assign"] = n_ffd, assign_ffd
    if n_ffd > lower:
        loads: list[float] = []
        assign: list[int] = []

        def dfs(idx: int):
            if best["n"] == lower:
                return
            if len(loads) >= best["n"]:
                return
            if idx == len(vals):
                if len(loads) < best["n"]:
                    best["n"] = len(loads)
                    best["assign"] = assign.copy()
                return
            s = vals[idx]
            seen_loads = set()
            for k in range(len(loads)):
                if loads[k] + s <= capacity + CAP_EPS and \
                        round(loads[k], 12) not in seen_loads:
                    seen_loads.add(round(loads[k], 12))
                    loads[k] += s
                    assign.append(k)
                    dfs(idx + 1)
                    assign.pop()
                    loads[k] -= s
            if len(loads) + 1 < best["n"]:
                loads.append(s)
                assign.append(len(loads) - 1)
                dfs(idx + 1)
                assign.pop()
                loads.pop()

        dfs(0)
    if best["n"] > max_bins:
        return None
    for (s, orig), k in zip(positive, best["assign"]):
        bin_of[orig] = k
    for orig in zero:
        bin_of[orig] = 0
    return best["n"], bin_of


def enumerate_optimum(scenario: Scenario,
                      bound: TinyScenarioBound | None = None) -> OracleResult:
    """Certified optimum by exhaustive enumeration; see the module docstring.

    Raises OracleSizeError when the instance exceeds the size guard.
    """
    bound = bound or TinyScenarioBound()
    bound.check(scenario)
    scenario.validate()
    users = scenario.users
    topo = scenario.topology
    T = scenario.n_intervals
    F = scenario.n_functions
    R = scenario.n_du
    I = users.n_users
    d_cu = int(scenario.dpe_count.cu)
    d_du = int(scenario.dpe_count.du)
    rho = users.traffic
    mu = np.minimum(users.delay_limits, F)
    caps = np.array([a.capacity for a in topo.arcs])
    stats = OracleStats()

    paths_of_du = [simple_paths(topo, du, topo.cu_id) for du in topo.du_ids]
    if any(not p for p in paths_of_du):
        raise milp_mod.BuildError("some DU has no path to the CU")
    path_arcs = [[np.array(p, dtype=int) for p in paths] for paths in paths_of_du]

    # Closed-form option counts and the size guard.
    per_t_products = []
    for t in range(T):
        prod = 1
        for i in range(I):
            prod *= int(mu[i, t]) + 1
        per_t_products.append(prod)
    path_product = 1
    for paths in paths_of_du:
        path_product *= len(paths)
    estimate = sum(per_t_products) * max(path_product, 1)
    if estimate > bound.max_candidates:
        raise OracleSizeError(estimate, bound.max_candidates)
    stats.count_closed_form = sum(per_t_products)

    users_of_du = [users.users_of_du(r) for r in range(R)]

    # Per interval: achievable Pareto-minimal count vectors with witnesses.
    achievable: list[dict[tuple, dict]] = []
    for t in range(T):
        found: dict[tuple, dict] = {}
        ranges = [range(int(mu[i, t]) + 1) for i in range(I)]
        route_cache: dict[tuple, object] = {}
        for k_vec in itertools.product(*ranges):
            stats.count_candidates += 1
            k = np.array(k_vec, dtype=int)
            cu_sizes = [rho[i, t] for i in range(I) for _ in range(k[i])]
            cu_pack = min_bins_exact(cu_sizes, scenario.dpe_capacity.cu, d_cu)
            if cu_pack is None:
                continue
            du_packs = []
            ok = True
            for r in range(R):
                idx = users_of_du[r]
                sizes = [rho[i, t] for i in idx for _ in range(F - k[i])]
                pack = min_bins_exact(sizes, scenario.dpe_capacity.du, d_du)
                if pack is None:
                    ok = False
                    break
                du_packs.append(pack)
            if not ok:
                continue
            w = np.array([(rho[idx, t] * k[idx]).sum() for idx in users_of_du])
            key = tuple(np.round(w, 12))
            routing = route_cache.get(key, "miss")
            if routing == "miss":
                routing = _route(w, path_arcs, caps, stats)
                route_cache[key] = routing
            if routing is None:
                continue
            kappa = (cu_pack[0],) + tuple(p[0] for p in du_packs)
            if kappa not in found:
                dominated = any(all(o[j] <= kappa[j] for j in range(R + 1))
                                for o in found)
                if not dominated:
                    for o in [o for o in list(found)
                              if all(kappa[j] <= o[j] for j in range(R + 1))]:
                        del found[o]
                    found[kappa] = {"k": k, "cu_pack": cu_pack,
                                    "du_packs": du_packs, "paths": routing}
        if not found:
            return OracleResult(math.inf, None, stats)  # interval infeasible
        achievable.append(found)
        stats.achievable_per_interval.append(len(found))

    profile_space = 1
    for found in achievable:
        profile_space *= len(found)
    stats.profile_space = profile_space
    if profile_space > bound.max_candidates:
        raise OracleSizeError(profile_space, bound.max_candidates)

    # Battery value per unit is additive across units and depends only on
    # that unit's count series; cache per (unit, series).
    e = scenario.energy
    sta = e.static_wh.per_unit(R) / 1000.0
    dpe = e.dpe_wh.per_unit(R) / 1000.0
    gen = e.panel_scale.per_unit(R)[:, None] * e.generation
    cap_b = e.battery_kwh.per_unit(R)
    b0 = e.initial_charge_kwh.per_unit(R)
    tariff = e.tariff
    ratio = e.sell_ratio
    value_cache: list[dict[tuple, tuple]] = [dict() for _ in range(1 + R)]

    def unit_value(u: int, counts: tuple) -> tuple:
        hit = value_cache[u].get(counts)
        if hit is not None:
            return hit
        psi = sta[u] + dpe[u] * np.array(counts, dtype=float)
        s, p, b = optimal_battery_dispatch(psi, gen[u], cap_b[u], b0[u],
                                           tariff, ratio)
        val = float(((psi - s - ratio * p) * tariff).sum())
        value_cache[u][counts] = (val, s, p, b)
        return value_cache[u][counts]

    best_val = math.inf
    best_profile = None
    keys_per_t = [sorted(found.keys()) for found in achievable]
    for profile in itertools.product(*keys_per_t):
        stats.profiles_evaluated += 1
        val = 0.0
        for u in range(1 + R):
            series = tuple(profile[t][u] for t in range(T))
            val += unit_value(u, series)[0]
        if val < best_val - 1e-12 or (abs(val - best_val) <= 1e-12
                                      and (best_profile is None
                                           or profile < best_profile)):
            best_val = val
            best_profile = profile

    decisions = _reconstruct(scenario, achievable, best_profile, unit_value)
    report = milp_mod.validate_solution(decisions, scenario)
    if not report.feasible:
        raise AssertionError(f"oracle produced infeasible decisions:\n{report}")
    value = opex_of(decisions, scenario)
    if abs(value - best_val) > 1e-6:
        raise AssertionError(
            f"oracle bookkeeping mismatch: {value} vs {best_val}")
    return OracleResult(value, decisions, stats)


def _route(w: np.ndarray, path_arcs, caps: np.ndarray, stats: OracleStats):
    """First feasible joint path assignment in lexicographic order.

    DUs with zero CU-bound traffic take their first path; they never load
    an arc. Feasibility of a combination is monotone in w, which the
    caller exploits by caching on the w vector.
    """
    R = len(path_arcs)
    active = [r for r in range(R) if w[r] > CAP_EPS]
    chosen = [path_arcs[r][0] for r in range(R)]
    if not active:
        return [list(map(int, p)) for p in chosen]

    def backtrack(pos: int, load: np.ndarray):
        if pos == len(active):
            return True
        r = active[pos]
        for path in path_arcs[r]:
            stats.path_checks += 1
            new = load.copy()
            new[path] += w[r]
            if (new[path] <= caps[path] + CAP_EPS).all():
                chosen[r] = path
                if backtrack(pos + 1, new):
                    return True
        return False

    if backtrack(0, np.zeros_like(caps)):
        return [list(map(int, p)) for p in chosen]
    return None


def _reconstruct(scenario: Scenario, achievable, profile, unit_value) -> Decisions:
    users = scenario.users
    T = scenario.n_intervals
    F = scenario.n_functions
    R = scenario.n_du
    I = users.n_users
    d_cu = int(scenario.dpe_count.cu)
    d_du = int(scenario.dpe_count.du)
    n_slots = d_cu + d_du
    d_total = d_cu + R * d_du
    n_arcs = len(scenario.topology.arcs)
    m = np.zeros((I, n_slots, F, T), dtype=np.uint8)
    a = np.zeros((d_total, T), dtype=np.uint8)
    l = np.zeros((R, T, n_arcs), dtype=np.uint8)
    users_of_du = [users.users_of_du(r) for r in range(R)]

    for t in range(T):
        wit = achievable[t][profile[t]]
        k = wit["k"]
        _, cu_assign = wit["cu_pack"]
        next_f = np.zeros(I, dtype=int)
        pos = 0
        for i in range(I):
            for _ in range(int(k[i])):
                slot = cu_assign[pos]
                m[i, slot, next_f[i], t] = 1
                a[slot, t] = 1
                next_f[i] += 1
                pos += 1
        for r in range(R):
            _, assign = wit["du_packs"][r]
            pos = 0
            for i in users_of_du[r]:
                for _ in range(F - int(k[i])):
                    slot = assign[pos]
                    m[i, d_cu + slot, next_f[i], t] = 1
                    a[d_cu + r * d_du + slot, t] = 1
                    next_f[i] += 1
                    pos += 1
        for r in range(R):
            for e_id in wit["paths"][r]:
                l[r, t, e_id] = 1

    U = 1 + R
    s = np.zeros((U, T))
    p = np.zeros((U, T))
    b = np.zeros((U, T))
    for u in range(U):
        series = tuple(profile[t][u] for t in range(T))
        _, su, pu, bu = unit_value(u, series)
        s[u], p[u], b[u] = su, pu, bu
    return Decisions(m=m, a=a, l=l, green_used=s, sold=p, stored=b)
