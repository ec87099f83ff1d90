"""Exact solver: LP relaxation plus branch and bound.

Two LP backends sit behind one interface: the bundled dense bounded-variable
simplex for small problems and scipy's HiGHS wrapper for everything else.
The branch-and-bound layer adds two optional model-strengthening steps that
never cut off an integer point (indicator-tightened capacity rows and
activation-count floors derived from delay-forced local load), a set of
constructive primal heuristics, and three branching rules. Defaults are
deterministic for one worker and a fixed seed.
"""

from __future__ import annotations

import heapq
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import energy as energy_mod
from . import milp as milp_mod
from .lpio import export_model, read_lp  # re-exported: part of this module's API
from .milp import MilpModel, SENSE_EQ, SENSE_GE, SENSE_LE
from .scenario import Scenario
from .simplex import solve_lp_dense

__all__ = [
    "SolverConfig", "SolveResult", "LPSolution", "SolverError",
    "solve_lp", "branch_and_bound", "solve", "export_model", "read_lp",
]

INT_TOL = 1e-6
PRUNE_TOL = 1e-9
SIMPLEX_MAX_CELLS = 2_000_000   # dense backend guard: rows * cols


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    time_limit_s: float = 900.0
    gap_tol: float = 1e-6
    abs_gap_tol: float = 1e-9
    branch_rule: str = "most_fractional"   # | priority | aggregate
    node_limit: int | None = None
    workers: int = 1
    seed: int = 0
    lp_backend: str = "auto"               # | highs | simplex
    strengthen: bool = True
    plunge_depth: int = 40

    def validate(self) -> None:
        if self.time_limit_s <= 0:
            raise ValueError("time_limit_s must be > 0")
        if not 0 <= self.gap_tol < 1:
            raise ValueError("gap_tol must be in [0, 1)")
        if self.branch_rule not in ("most_fractional", "priority", "aggregate"):
            raise ValueError(f"unknown branch rule {self.branch_rule!r}")
        if self.lp_backend not in ("auto", "highs", "simplex"):
            raise ValueError(f"unknown lp backend {self.lp_backend!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class LPSolution:
    status: str                 # optimal | infeasible | unbounded
    x: np.ndarray | None
    objective: float | None    # includes the model constant


@dataclass
class SolveResult:
    status: str                 # optimal | feasible-gap | infeasible | time-limit-no-incumbent
    x: np.ndarray | None
    objective: float | None
    best_bound: float
    rel_gap: float | None
    abs_gap: float | None
    node_count: int
    wall_time_s: float
    stop_reason: str
    decisions: object | None = None
    log: list[str] = field(default_factory=list)

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None


def relative_gap(incumbent: float, bound: float) -> float:
    denom = max(abs(incumbent), abs(bound), 1.0)
    return max(0.0, (incumbent - bound) / denom)


# ---------------------------------------------------------------------------
# LP interface


class _LPData:
    """Model rows split by sense once, ready for repeated node solves."""

    def __init__(self, model: MilpModel, extra_rows=()):
        a = model.a_matrix
        rows = [a]
        senses = [model.sense]
        rhs = [model.rhs]
        if extra_rows:
            cols = np.concatenate([r[0] for r in extra_rows])
            vals = np.concatenate([r[1] for r in extra_rows])
            rptr = np.concatenate([np.full(len(r[0]), k)
                                   for k, r in enumerate(extra_rows)])
            extra = sp.csr_matrix((vals, (rptr, cols)),
                                  shape=(len(extra_rows), model.n_cols))
            rows.append(extra)
            senses.append(np.array([r[2] for r in extra_rows], dtype=np.int8))
            rhs.append(np.array([r[3] for r in extra_rows], dtype=float))
        self.a_all = sp.vstack(rows, format="csr") if len(rows) > 1 else a
        self.sense = np.concatenate(senses)
        self.rhs = np.concatenate(rhs)
        self.c = model.c
        self.const = model.const
        self.n_cols = model.n_cols
        le = self.sense == SENSE_LE
        ge = self.sense == SENSE_GE
        eq = self.sense == SENSE_EQ
        parts_ub = []
        rhs_ub = []
        if le.any():
            parts_ub.append(self.a_all[le])
            rhs_ub.append(self.rhs[le])
        if ge.any():
            parts_ub.append(-self.a_all[ge])
            rhs_ub.append(-self.rhs[ge])
        self.a_ub = sp.vstack(parts_ub, format="csr") if parts_ub else None
        self.b_ub = np.concatenate(rhs_ub) if rhs_ub else None
        self.a_eq = self.a_all[eq].tocsr() if eq.any() else None
        self.b_eq = self.rhs[eq] if eq.any() else None

    def solve(self, lb: np.ndarray, ub: np.ndarray, backend: str,
              branch_rows=()) -> LPSolution:
        a_ub, b_ub = self.a_ub, self.b_ub
        if branch_rows:
            extra_parts = []
            extra_rhs = []
            for cols, vals, sense, rhs in branch_rows:
                row = sp.csr_matrix((np.asarray(vals, dtype=float)
                                     * (1 if sense == SENSE_LE else -1),
                                     (np.zeros(len(cols), dtype=int), cols)),
                                    shape=(1, self.n_cols))
                extra_parts.append(row)
                extra_rhs.append(rhs if sense == SENSE_LE else -rhs)
            add = sp.vstack(extra_parts, format="csr")
            a_ub = add if a_ub is None else sp.vstack([a_ub, add], format="csr")
            b_ub = np.array(extra_rhs) if b_ub is None else \
                np.concatenate([b_ub, extra_rhs])
        if backend == "simplex":
            sense = self.sense
            a = self.a_all
            rhs = self.rhs
            if branch_rows:
                rows = [a]
                for cols, vals, s, r in branch_rows:
                    rows.append(sp.csr_matrix(
                        (np.asarray(vals, dtype=float),
                         (np.zeros(len(cols), dtype=int), cols)),
                        shape=(1, self.n_cols)))
                a = sp.vstack(rows, format="csr")
                sense = np.concatenate([sense,
                                        [s for _, _, s, _ in branch_rows]])
                rhs = np.concatenate([rhs, [r for _, _, _, r in branch_rows]])
            res = solve_lp_dense(self.c, a.toarray(), sense, rhs, lb, ub)
            obj = None if res.objective is None else res.objective + self.const
            return LPSolution(res.status, res.x, obj)
        bounds = np.column_stack([lb, np.where(np.isinf(ub), None, ub)])
        res = linprog(self.c, A_ub=a_ub, b_ub=b_ub, A_eq=self.a_eq,
                      b_eq=self.b_eq, bounds=bounds, method="highs")
        if res.status == 0:
            return LPSolution("optimal", res.x, float(res.fun) + self.const)
        if res.status == 2:
            return LPSolution("infeasible", None, None)
        if res.status == 3:
            return LPSolution("unbounded", None, None)
        raise SolverError(f"LP backend failed: status={res.status} "
                          f"message={res.message!r}")


def _pick_backend(model: MilpModel, requested: str) -> str:
    if requested != "auto":
        return requested
    if model.n_rows * model.n_cols <= SIMPLEX_MAX_CELLS and model.n_rows <= 400:
        return "simplex"
    return "highs"


def solve_lp(model: MilpModel, backend: str = "auto") -> LPSolution:
    """Solve the LP relaxation of a model (integrality dropped)."""
    data = _LPData(model)
    return data.solve(model.lb.astype(float), model.ub.astype(float),
                      _pick_backend(model, backend))


# ---------------------------------------------------------------------------
# Strengthening (solver-side, never cuts an integer point)


def _strengthen_rows(model: MilpModel) -> list[tuple]:
    """Rows implied by integrality that tighten the LP relaxation.

    1. Capacity-indicator form of the DPE capacity rows: load(d,t) <= L * a.
       With a = 0 the activation rows force load 0, with a = 1 this is the
       plain capacity row, so no integer point is cut.
    2. Activation floors: delay budgets pin part of each DU's load to its
       own DPEs, so ceil(forced_load / L) DPEs must be on. Same argument
       network-wide for the total load.
    """
    rows: list[tuple] = []
    lay = model.layout
    a_csr = model.a_matrix
    for row in range(model.n_rows):
        tag = model.row_tags[row]
        if tag not in ("eq4", "eq5"):
            continue
        d = dict(model.row_index[row])["d"]
        t = dict(model.row_index[row])["t"]
        cap = model.rhs[row]
        lo, hi = a_csr.indptr[row], a_csr.indptr[row + 1]
        cols = np.concatenate([a_csr.indices[lo:hi], [lay.a(d, t)]])
        vals = np.concatenate([a_csr.data[lo:hi], [-cap]])
        rows.append((cols, vals, SENSE_LE, 0.0))
    floors = model.meta.get("activation_floors")
    if floors:
        for unit, t, need in floors:
            if need < 1:
                continue
            if unit == 0:
                dpes = np.arange(lay.d_cu)
            else:
                dpes = lay.d_cu + (unit - 1) * lay.d_du + np.arange(lay.d_du)
            rows.append((lay.a(dpes, t), np.ones(dpes.size), SENSE_GE,
                         float(need)))
    total_floors = model.meta.get("network_floors")
    if total_floors:
        all_dpes = np.arange(lay.d_total)
        for t, need in total_floors:
            if need >= 1:
                rows.append((lay.a(all_dpes, t), np.ones(all_dpes.size),
                             SENSE_GE, float(need)))
    return rows


# ---------------------------------------------------------------------------
# Branch and bound


@dataclass
class _Node:
    node_id: int
    depth: int
    bound: float
    fixings: dict[int, tuple[float, float]]
    branch_rows: tuple

    def __lt__(self, other):  # heap tie-break
        return (self.bound, self.node_id) < (other.bound, other.node_id)


class _Tree:
    def __init__(self):
        self.heap: list[_Node] = []
        self.plunge: list[_Node] = []

    def push(self, node: _Node, plunge: bool):
        if plunge:
            self.plunge.append(node)
        else:
            heapq.heappush(self.heap, node)

    def pop(self) -> _Node | None:
        if self.plunge:
            return self.plunge.pop()
        if self.heap:
            return heapq.heappop(self.heap)
        return None

    def open_bound(self) -> float:
        vals = [n.bound for n in self.plunge] + \
            ([self.heap[0].bound] if self.heap else [])
        return min(vals) if vals else np.inf

    def prune(self, cutoff: float):
        self.plunge = [n for n in self.plunge if n.bound < cutoff]
        self.heap = [n for n in self.heap if n.bound < cutoff]
        heapq.heapify(self.heap)

    def __len__(self):
        return len(self.heap) + len(self.plunge)


def _fractional_binaries(x: np.ndarray, is_binary: np.ndarray) -> np.ndarray:
    frac = np.abs(x - np.round(x))
    frac[~is_binary] = 0.0
    return frac


def _choose_branch(model: MilpModel, x: np.ndarray, rule: str):
    """Returns ("var", col) or ("sum", cols, floor_value) or None."""
    lay = model.layout
    frac = _fractional_binaries(x, model.is_binary)
    if frac.max(initial=0.0) <= INT_TOL:
        return None
    if rule == "aggregate":
        groups = model.meta.get("a_groups")
        if groups is None:
            groups = []
            t_all = np.arange(lay.n_intervals)
            for t in range(lay.n_intervals):
                groups.append(lay.a(np.arange(lay.d_cu), t))
                for r in range(lay.n_du):
                    dpes = lay.d_cu + r * lay.d_du + np.arange(lay.d_du)
                    groups.append(lay.a(dpes, t))
            model.meta["a_groups"] = groups
            _ = t_all
        best = None
        for cols in groups:
            total = float(x[cols].sum())
            dist = abs(total - round(total))
            if dist > INT_TOL and (best is None or dist > best[0]):
                best = (dist, cols, int(np.floor(total)))
        if best is not None:
            return ("sum", best[1], best[2])
        rule = "priority"
    if rule == "priority":
        for lo, hi in ((lay.off_a, lay.off_l),      # a first
                       (lay.off_l, lay.off_z),      # then routing
                       (0, lay.off_a)):             # then placements
            if hi <= lo:
                continue
            seg = frac[lo:hi]
            if seg.max(initial=0.0) > INT_TOL:
                return ("var", lo + int(np.argmax(seg)))
        return None
    return ("var", int(np.argmax(frac)))


def branch_and_bound(model: MilpModel, config: SolverConfig | None = None,
                     heuristics=(), incumbent_processor=None,
                     log_path=None) -> SolveResult:
    """Best-bound branch and bound with depth-first plunging.

    ``heuristics`` are callables x_lp -> candidate x (or None); candidates
    and integral LP solutions both pass through ``incumbent_processor``
    which may polish the point and must return (objective, x, payload) or
    None to reject.
    """
    config = config or SolverConfig()
    config.validate()
    t_start = time.monotonic()
    backend = _pick_backend(model, config.lp_backend)
    extra = _strengthen_rows(model) if config.strengthen else []
    data = _LPData(model, extra)
    base_lb = model.lb.astype(float).copy()
    base_ub = model.ub.astype(float).copy()

    if incumbent_processor is None:
        def incumbent_processor(x, obj):
            if obj is None:
                obj = float(model.c @ x) + model.const
            return obj, x, None

    log: list[str] = []
    incumbent_obj: float | None = None
    incumbent_x = None
    incumbent_payload = None
    best_bound = -np.inf
    nodes_explored = 0
    next_id = 1
    tree = _Tree()

    def node_bounds(node: _Node):
        if not node.fixings:
            return base_lb, base_ub
        lb = base_lb.copy()
        ub = base_ub.copy()
        for col, (lo, hi) in node.fixings.items():
            lb[col] = lo
            ub[col] = hi
        return lb, ub

    def solve_node(node: _Node) -> LPSolution:
        lb, ub = node_bounds(node)
        return data.solve(lb, ub, backend, node.branch_rows)

    def consider(x_cand, obj_guess) -> bool:
        nonlocal incumbent_obj, incumbent_x, incumbent_payload
        if x_cand is None:
            return False
        processed = incumbent_processor(x_cand, obj_guess)
        if processed is None:
            return False
        obj, x_fix, payload = processed
        if incumbent_obj is None or obj < incumbent_obj - PRUNE_TOL:
            incumbent_obj = obj
            incumbent_x = x_fix
            incumbent_payload = payload
            tree.prune(obj - PRUNE_TOL)
            return True
        return False

    def emit(node_id, depth, lp_obj):
        inc = "" if incumbent_obj is None else f"{incumbent_obj:.6f}"
        gap = "" if incumbent_obj is None else \
            f"{relative_gap(incumbent_obj, best_bound):.6f}"
        log.append(f"{node_id},{depth},{lp_obj:.6f},{best_bound:.6f},{inc},"
                   f"{gap},{time.monotonic() - t_start:.3f}")

    def finish(reason: str) -> SolveResult:
        bound = best_bound
        if incumbent_obj is not None:
            if reason == "exhausted":
                bound = incumbent_obj
            bound = min(bound, incumbent_obj)
            abs_gap = incumbent_obj - bound
            rel = relative_gap(incumbent_obj, bound)
            status = "optimal" if (reason == "exhausted"
                                   or rel <= config.gap_tol
                                   or abs_gap <= config.abs_gap_tol) \
                else "feasible-gap"
        else:
            abs_gap = None
            rel = None
            status = "infeasible" if reason in ("infeasible", "exhausted") \
                else "time-limit-no-incumbent"
        result = SolveResult(
            status=status, x=incumbent_x, objective=incumbent_obj,
            best_bound=float(bound), rel_gap=rel, abs_gap=abs_gap,
            node_count=nodes_explored,
            wall_time_s=time.monotonic() - t_start, stop_reason=reason,
            decisions=incumbent_payload, log=log)
        if log_path is not None:
            with open(log_path, "w", encoding="utf-8") as f:
                f.write("node,depth,lp_obj,best_bound,incumbent,gap,time\n")
                if log:
                    f.write("\n".join(log) + "\n")
        return result

    def gap_closed() -> bool:
        if incumbent_obj is None:
            return False
        return (incumbent_obj - best_bound <= config.abs_gap_tol
                or relative_gap(incumbent_obj, best_bound) <= config.gap_tol)

    # Root relaxation.
    root = _Node(0, 0, -np.inf, {}, ())
    lp = solve_node(root)
    if lp.status == "infeasible":
        return finish("infeasible")
    if lp.status != "optimal":
        raise SolverError(f"root LP {lp.status}")
    best_bound = lp.objective
    frac = _fractional_binaries(lp.x, model.is_binary)
    if frac.max(initial=0.0) <= INT_TOL:
        consider(lp.x, lp.objective)
        emit(0, 0, lp.objective)
        return finish("exhausted")
    for h in heuristics:
        consider(h(lp.x), None)
    emit(0, 0, lp.objective)
    branch = _choose_branch(model, lp.x, config.branch_rule)
    if branch is not None:
        down, up = _children(branch, root, lp.objective, next_id)
        next_id += 2
        tree.push(down, plunge=True)
        tree.push(up, plunge=True)     # explored first

    heur_period = 25
    while True:
        # All nodes are at rest here, so the open set plus the incumbent
        # bounds the optimum from below.
        open_b = tree.open_bound()
        cap = incumbent_obj if incumbent_obj is not None else np.inf
        settled = min(open_b, cap)
        if np.isfinite(settled):
            best_bound = max(best_bound, settled)
        if gap_closed():
            return finish("gap-reached")
        if len(tree) == 0:
            return finish("exhausted" if incumbent_obj is not None
                          else "infeasible")
        if time.monotonic() - t_start > config.time_limit_s:
            return finish("time-limit")
        if config.node_limit is not None and nodes_explored >= config.node_limit:
            return finish("node-limit")

        cutoff = np.inf if incumbent_obj is None else incumbent_obj - PRUNE_TOL
        batch: list[_Node] = []
        while len(batch) < config.workers and len(tree):
            node = tree.pop()
            if node.bound < cutoff:
                batch.append(node)
                if config.workers == 1:
                    break
        if not batch:
            continue
        if len(batch) == 1:
            solved = [(batch[0], solve_node(batch[0]))]
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                lps = list(pool.map(solve_node, batch))
            solved = list(zip(batch, lps))
        for node, lp in solved:
            nodes_explored += 1
            cutoff = np.inf if incumbent_obj is None \
                else incumbent_obj - PRUNE_TOL
            if lp.status == "infeasible":
                continue
            if lp.status != "optimal":
                raise SolverError(f"node LP {lp.status}")
            if lp.objective >= cutoff:
                emit(node.node_id, node.depth, lp.objective)
                continue
            frac = _fractional_binaries(lp.x, model.is_binary)
            if frac.max(initial=0.0) <= INT_TOL:
                consider(lp.x, lp.objective)
                emit(node.node_id, node.depth, lp.objective)
                continue
            if nodes_explored % heur_period == 0:
                for h in heuristics:
                    consider(h(lp.x), None)
            branch = _choose_branch(model, lp.x, config.branch_rule)
            if branch is None:
                consider(lp.x, lp.objective)
                emit(node.node_id, node.depth, lp.objective)
                continue
            plunge = node.depth < config.plunge_depth
            down, up = _children(branch, node, lp.objective, next_id)
            next_id += 2
            tree.push(down, plunge=plunge)
            tree.push(up, plunge=plunge)
            emit(node.node_id, node.depth, lp.objective)


def _children(branch, parent: _Node, bound: float, next_id: int):
    """Down child first, up child second (the up side is explored first)."""
    if branch[0] == "var":
        col = branch[1]
        down = dict(parent.fixings)
        down[col] = (0.0, 0.0)
        up = dict(parent.fixings)
        up[col] = (1.0, 1.0)
        return (_Node(next_id, parent.depth + 1, bound, down,
                      parent.branch_rows),
                _Node(next_id + 1, parent.depth + 1, bound, up,
                      parent.branch_rows))
    _, cols, floor_val = branch
    ones = np.ones(len(cols))
    down_rows = parent.branch_rows + ((cols, ones, SENSE_LE, float(floor_val)),)
    up_rows = parent.branch_rows + ((cols, ones, SENSE_GE, float(floor_val + 1)),)
    return (_Node(next_id, parent.depth + 1, bound, dict(parent.fixings),
                  down_rows),
            _Node(next_id + 1, parent.depth + 1, bound, dict(parent.fixings),
                  up_rows))


# ---------------------------------------------------------------------------
# Scenario-aware entry point


def solve(model: MilpModel, scenario: Scenario,
          config: SolverConfig | None = None, log_path=None) -> SolveResult:
    """Branch and bound with the full pipeline wired in.

    Incumbents are extracted into Decisions, their energy books projected
    onto exact balance, validated against every original constraint, and
    re-priced by the ground-truth evaluator, so the reported objective is
    the exact cost of the reported decisions.
    """
    from . import heuristics as heur_mod

    def processor(x, _obj_guess):
        try:
            decisions = milp_mod.extract_decisions(model, x, scenario)
        except milp_mod.ExtractionError:
            return None
        decisions = energy_mod.project_ledger(decisions, scenario)
        report = milp_mod.validate_solution(
            decisions, scenario, strict_delay=model.meta.get("strict_delay", False))
        if not report.feasible:
            return None
        obj = energy_mod.opex(decisions, scenario)
        x_fixed = milp_mod.decisions_to_x(model, decisions, scenario)
        return obj, x_fixed, decisions

    heuristics = heur_mod.make_candidate_heuristics(model, scenario)
    return branch_and_bound(model, config, heuristics=heuristics,
                            incumbent_processor=processor, log_path=log_path)
