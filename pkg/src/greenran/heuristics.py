"""Primal heuristics and exact battery dispatch used to seed the solver.

The constructive heuristic works backwards from a target per-user count of
centralized functions: pack functions onto DPEs first-fit-decreasing, route
each DU along the shortest feasible path on residual arc capacity, then let
a small exact LP place the green energy. Every candidate is validated
against the full constraint set before the solver may accept it.
"""

from __future__ import annotations

import numpy as np

from . import milp as milp_mod
from .energy import Decisions
from .scenario import Scenario
from .simplex import solve_lp_dense


def optimal_battery_dispatch(psi: np.ndarray, gen: np.ndarray,
                             capacity: float, initial: float,
                             tariff: np.ndarray, sell_ratio: float):
    """Cost-optimal (s, p, b) series for one unit given its consumption.

    Small LP: maximize the tariff-weighted value of used plus sold energy
    subject to the storage balance. Exact up to LP tolerances.
    """
    T = len(psi)
    # Vars: s (T), p (T), b (T).
    c = np.concatenate([-tariff, -sell_ratio * tariff, np.zeros(T)])
    rows = np.zeros((T, 3 * T))
    rhs = np.zeros(T)
    for t in range(T):
        rows[t, t] = 1.0          # s_t
        rows[t, T + t] = 1.0      # p_t
        rows[t, 2 * T + t] = 1.0  # b_t
        if t > 0:
            rows[t, 2 * T + t - 1] = -1.0
        rhs[t] = gen[t] + (initial if t == 0 else 0.0)
    lb = np.zeros(3 * T)
    ub = np.concatenate([np.maximum(psi, 0.0),
                         np.full(T, initial + gen.sum()),
                         np.full(T, capacity)])
    res = solve_lp_dense(c, rows, np.zeros(T, dtype=int), rhs, lb, ub)
    if res.status != "optimal":
        raise RuntimeError(f"battery dispatch LP came back {res.status}")
    x = res.x
    return x[:T].copy(), x[T:2 * T].copy(), x[2 * T:].copy()


def _first_fit_decreasing(sizes: np.ndarray, capacity: float, max_bins: int):
    """Pack items into at most max_bins bins of given capacity.

    Returns (bin_of_item, n_bins, unplaced item positions). Deterministic:
    items sorted by decreasing size with the original position as tie-break.
    """
    order = np.lexsort((np.arange(sizes.size), -sizes))
    loads: list[float] = []
    bin_of = np.full(sizes.size, -1, dtype=int)
    unplaced = []
    for pos in order:
        size = sizes[pos]
        placed = False
        for k, load in enumerate(loads):
            if load + size <= capacity + 1e-9:
                loads[k] = load + size
                bin_of[pos] = k
                placed = True
                break
        if not placed:
            if len(loads) < max_bins and size <= capacity + 1e-9:
                loads.append(size)
                bin_of[pos] = len(loads) - 1
            else:
                unplaced.append(int(pos))
    return bin_of, len(loads), unplaced


def _shortest_path_with_capacity(topology, residual: np.ndarray,
                                 demand: float, start_idx: int, goal_idx: int,
                                 arc_ends: list[tuple[int, int]]):
    """Min-hop start->goal path over arcs with residual >= demand.

    Deterministic BFS; among equal-hop parents the smallest arc id wins.
    Returns arc-id list or None.
    """
    n_nodes = max(max(a, b) for a, b in arc_ends) + 1
    usable = [e for e in range(len(arc_ends))
              if residual[e] + 1e-9 >= demand]
    out_of: dict[int, list[int]] = {}
    for e in usable:
        out_of.setdefault(arc_ends[e][0], []).append(e)
    parent_arc = {start_idx: None}
    frontier = [start_idx]
    while frontier and goal_idx not in parent_arc:
        nxt = []
        for node in frontier:
            for e in sorted(out_of.get(node, [])):
                head = arc_ends[e][1]
                if head not in parent_arc:
                    parent_arc[head] = e
                    nxt.append(head)
        frontier = nxt
    if goal_idx not in parent_arc:
        return None
    path = []
    node = goal_idx
    while node != start_idx:
        e = parent_arc[node]
        path.append(e)
        node = arc_ends[e][0]
    return path[::-1]


def build_candidate(scenario: Scenario, model, cu_counts: np.ndarray,
                    fixed_paths: dict[int, list[int]] | None = None):
    """Turn per-user CU-function counts into a full feasible decision record.

    Returns Decisions or None when packing or routing cannot realize the
    requested counts.
    """
    users = scenario.users
    T = scenario.n_intervals
    F = scenario.n_functions
    R = scenario.n_du
    I = users.n_users
    d_cu = int(scenario.dpe_count.cu)
    d_du = int(scenario.dpe_count.du)
    L_cu = scenario.dpe_capacity.cu
    L_du = scenario.dpe_capacity.du
    rho = users.traffic
    mu = users.delay_limits
    topo = scenario.topology
    node_index = topo.node_index
    arc_ends = [(node_index[a.tail], node_index[a.head]) for a in topo.arcs]
    caps = np.array([a.capacity for a in topo.arcs])
    cu_idx = node_index[topo.cu_id]
    du_node = [node_index[d] for d in topo.du_ids]

    counts = np.clip(np.round(cu_counts).astype(int), 0,
                     np.minimum(mu, F)).astype(int)
    lay = model.layout
    m = np.zeros((I, lay.n_slots, F, T), dtype=np.uint8)
    a = np.zeros((lay.d_total, T), dtype=np.uint8)
    l = np.zeros((R, T, len(topo.arcs)), dtype=np.uint8)

    for t in range(T):
        k_t = counts[:, t].copy()
        # Alternate CU and local packing: CU overflow returns functions to
        # the local DU, local overflow bounces them to the CU while the
        # user's delay budget allows. A handful of rounds settles or fails.
        owners = bin_of = None
        local_assign: list[tuple[np.ndarray, np.ndarray]] = []
        for _attempt in range(4):
            owners = np.repeat(np.arange(I), k_t)
            sizes = rho[owners, t]
            bin_of, _, unplaced = _first_fit_decreasing(sizes, L_cu, d_cu)
            if unplaced:
                for pos in unplaced:
                    k_t[owners[pos]] -= 1
                continue
            local_assign = []
            bounced = False
            for r in range(R):
                idx = users.users_of_du(r)
                loc_owners = np.repeat(idx, F - k_t[idx])
                loc_sizes = rho[loc_owners, t] if loc_owners.size else np.zeros(0)
                lb_of, _, lost = _first_fit_decreasing(loc_sizes, L_du, d_du)
                if lost:
                    moved = False
                    for pos in lost:
                        owner = loc_owners[pos]
                        if k_t[owner] < min(int(mu[owner, t]), F):
                            k_t[owner] += 1
                            moved = True
                    if not moved:
                        return None
                    bounced = True
                    break
                local_assign.append((loc_owners, lb_of))
            if not bounced:
                break
        else:
            return None

        # Write m for the CU side: function slots filled in order per user.
        next_f = np.zeros(I, dtype=int)
        for pos, owner in enumerate(owners):
            m[owner, bin_of[pos], next_f[owner], t] = 1
            next_f[owner] += 1
            a[bin_of[pos], t] = 1
        for r, (loc_owners, lb_of) in enumerate(local_assign):
            for pos, owner in enumerate(loc_owners):
                m[owner, d_cu + lb_of[pos], next_f[owner], t] = 1
                next_f[owner] += 1
                a[lay.global_dpe(r, lb_of[pos]), t] = 1

        # Routing on residual capacity, heaviest DU first.
        w_t = np.zeros(R)
        for r in range(R):
            idx = users.users_of_du(r)
            w_t[r] = (rho[idx, t] * k_t[idx]).sum()
        residual = caps.copy()
        order = np.lexsort((np.arange(R), -w_t))
        for r in order:
            if fixed_paths is not None:
                path = fixed_paths[r]
                if any(residual[e] + 1e-9 < w_t[r] for e in path):
                    return None
            else:
                path = _shortest_path_with_capacity(
                    topo, residual, w_t[r], du_node[r], cu_idx, arc_ends)
            if path is None:
                return None
            for e in path:
                residual[e] -= w_t[r]
                l[r, t, e] = 1

    # Exact battery dispatch per unit.
    e = scenario.energy
    counts_unit = np.zeros((scenario.n_units, T))
    counts_unit[0] = a[:d_cu].sum(axis=0)
    for r in range(R):
        counts_unit[1 + r] = a[d_cu + r * d_du:d_cu + (r + 1) * d_du].sum(axis=0)
    sta = e.static_wh.per_unit(R) / 1000.0
    dpe = e.dpe_wh.per_unit(R) / 1000.0
    psi = sta[:, None] + counts_unit * dpe[:, None]
    gen = e.panel_scale.per_unit(R)[:, None] * e.generation
    cap_b = e.battery_kwh.per_unit(R)
    b0 = e.initial_charge_kwh.per_unit(R)
    s = np.zeros((scenario.n_units, T))
    p = np.zeros((scenario.n_units, T))
    b = np.zeros((scenario.n_units, T))
    for u in range(scenario.n_units):
        s[u], p[u], b[u] = optimal_battery_dispatch(
            psi[u], gen[u], cap_b[u], b0[u], e.tariff, e.sell_ratio)
    return Decisions(m=m, a=a, l=l, green_used=s, sold=p, stored=b)


def make_candidate_heuristics(model, scenario: Scenario):
    """Heuristic callables for the solver: LP-guided rounding plus two
    fixed-policy fallbacks (maximal centralization, all-local)."""
    lay = model.layout
    users = scenario.users
    T = scenario.n_intervals
    F = scenario.n_functions
    mu = users.delay_limits
    fixed_paths = model.meta.get("fixed_paths")

    def counts_from_lp(x_lp: np.ndarray) -> np.ndarray:
        m_part = x_lp[:lay.n_m].reshape(lay.n_users, lay.n_slots,
                                        lay.n_functions, T)
        return m_part[:, :lay.d_cu].sum(axis=(1, 2))

    def candidate_to_x(decisions):
        if decisions is None:
            return None
        return milp_mod.decisions_to_x(model, decisions, scenario)

    def lp_rounding(x_lp):
        if x_lp is None:
            return None
        return candidate_to_x(build_candidate(
            scenario, model, counts_from_lp(x_lp), fixed_paths))

    def max_central(_x_lp):
        return candidate_to_x(build_candidate(
            scenario, model, np.minimum(mu, F).astype(float), fixed_paths))

    def all_local(_x_lp):
        return candidate_to_x(build_candidate(
            scenario, model, np.zeros((users.n_users, T)), fixed_paths))

    return [lp_rounding, max_central, all_local]
