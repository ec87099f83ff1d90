"""Comparison methods: fixed-path routing and renewables-blind planning.

Static routing pins every DU to its hop-shortest path and optimizes
splitting and energy jointly on top. The traffic-aware method optimizes
splitting and routing while pretending no panels or batteries exist, then
realizes the actual renewables over those decisions with the greedy
dispatch policy.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import energy as energy_mod
from . import milp as milp_mod
from .energy import Decisions
from .scenario import Scenario, SideValues, TopologyError
from .solver import SolveResult, SolverConfig, solve

BASELINE_KINDS = ("static-routing", "traffic-aware")


@dataclass
class BaselineRun:
    kind: str
    result: SolveResult
    decisions: Decisions | None
    opex: float | None
    stage1_result: SolveResult | None = None


def static_routing_paths(topology) -> dict[int, list[int]]:
    """Hop-shortest DU->CU path per DU, ties broken towards the smallest
    node index, then the smallest arc id. Identical across intervals."""
    node_index = topology.node_index
    cu = node_index[topology.cu_id]
    arcs = [(node_index[a.tail], node_index[a.head]) for a in topology.arcs]
    n_nodes = len(topology.nodes)
    # Hop distance to the CU over directed arcs (reverse BFS).
    dist = np.full(n_nodes, -1, dtype=int)
    dist[cu] = 0
    frontier = [cu]
    into: dict[int, list[int]] = {}
    out_of: dict[int, list[int]] = {}
    for e, (tail, head) in enumerate(arcs):
        into.setdefault(head, []).append(e)
        out_of.setdefault(tail, []).append(e)
    while frontier:
        nxt = []
        for node in frontier:
            for e in into.get(node, []):
                tail = arcs[e][0]
                if dist[tail] < 0:
                    dist[tail] = dist[node] + 1
                    nxt.append(tail)
        frontier = nxt
    paths: dict[int, list[int]] = {}
    for r, du in enumerate(topology.du_ids):
        node = node_index[du]
        if dist[node] < 0:
            raise TopologyError(f"DU {du} cannot reach the CU")
        path = []
        while node != cu:
            step = None
            for e in sorted(out_of.get(node, []),
                            key=lambda e: (arcs[e][1], e)):
                if dist[arcs[e][1]] == dist[node] - 1:
                    step = e
                    break
            if step is None:
                raise TopologyError(f"no descending arc from node {node}")
            path.append(step)
            node = arcs[step][1]
        paths[r] = path
    return paths


def solve_static_routing(scenario: Scenario,
                         config: SolverConfig | None = None,
                         log_path=None) -> BaselineRun:
    """Optimize splitting and renewables with routing frozen to static paths.

    Infeasibility under the fixed paths (bandwidth) is reported, never
    repaired.
    """
    paths = static_routing_paths(scenario.topology)
    model = milp_mod.build_model(scenario, fixed_paths=paths)
    result = solve(model, scenario, config, log_path=log_path)
    decisions = result.decisions
    value = result.objective
    return BaselineRun("static-routing", result, decisions, value)


def _no_res_scenario(scenario: Scenario) -> Scenario:
    energy = replace(scenario.energy,
                     panel_scale=SideValues(0.0, 0.0),
                     battery_kwh=SideValues(0.0, 0.0),
                     initial_charge_kwh=SideValues(0.0, 0.0),
                     generation=np.zeros_like(scenario.energy.generation))
    return replace(scenario, energy=energy)


def solve_traffic_aware(scenario: Scenario,
                        config: SolverConfig | None = None,
                        log_path=None) -> BaselineRun:
    """Stage 1 ignores renewables entirely; stage 2 realizes the batteries
    greedily over the stage-1 activity and routing. The reported cost is
    the realized one."""
    stage1_scenario = _no_res_scenario(scenario)
    model = milp_mod.build_model(stage1_scenario)
    stage1 = solve(model, stage1_scenario, config, log_path=log_path)
    if stage1.decisions is None:
        return BaselineRun("traffic-aware", stage1, None, None,
                           stage1_result=stage1)
    plan: Decisions = stage1.decisions
    e = scenario.energy
    n_du = scenario.n_du
    psi = energy_mod.consumption_matrix(plan, scenario)
    ledger = energy_mod.greedy_battery_dispatch(
        psi,
        e.panel_scale.per_unit(n_du)[:, None] * e.generation,
        e.battery_kwh.per_unit(n_du),
        e.initial_charge_kwh.per_unit(n_du))
    realized = replace(plan, green_used=ledger.green_used, sold=ledger.sold,
                       stored=ledger.stored)
    value = energy_mod.opex(realized, scenario)
    result = replace(stage1)
    return BaselineRun("traffic-aware", result, realized, value,
                       stage1_result=stage1)
