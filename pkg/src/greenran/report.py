"""Experiment matrices, metric aggregation, and plot-data emission.

A matrix cell is (city, tier, topology, method, seed); each cell runs one
scenario per representative day in the schedule and is annualized by the
day weights. Metric CSVs are byte-deterministic given seeds and one solver
worker; wall-clock and memory figures go to a separate volatile file
(solver_stats.csv) so the deterministic guarantee stays crisp.
"""

from __future__ import annotations

import csv
import resource
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as baselines_mod
from . import energy as energy_mod
from . import milp as milp_mod
from .scenario import DAYS_IN_MONTH, MONTHS, Scenario, build_scenario
from .solver import SolverConfig, relative_gap, solve

METHODS = ("proposed", "static-routing", "traffic-aware")

DEFAULT_SCHEDULE = tuple((m, float(d)) for m, d in zip(MONTHS, DAYS_IN_MONTH))


@dataclass(frozen=True)
class ExperimentCell:
    city: str
    tier: str
    method: str = "proposed"
    topology: str = "du6"
    seed: int = 1

    @property
    def cell_id(self) -> str:
        return f"{self.topology}-{self.tier}-{self.city}-{self.method}-s{self.seed}"


@dataclass
class ExperimentMatrix:
    cells: list[ExperimentCell]
    day_schedule: tuple = DEFAULT_SCHEDULE
    scenario_overrides: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self) -> None:
        if not self.cells:
            raise ValueError("experiment matrix has no cells")
        bad = {c.method for c in self.cells} - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; "
                             f"expected a subset of {METHODS}")
        if not self.day_schedule:
            raise ValueError("day schedule is empty")


@dataclass
class DayMetrics:
    month: str
    weight: float
    status: str
    opex: float | None
    best_bound: float | None
    abs_gap: float | None
    node_count: int
    validated: bool
    active_cu: np.ndarray | None      # (T,)
    active_du: np.ndarray | None
    unstored_cu: np.ndarray | None
    unstored_du: np.ndarray | None
    remaining_cu: np.ndarray | None
    remaining_du: np.ndarray | None
    ledger: energy_mod.EnergyLedger | None
    unit_labels: tuple = ()


@dataclass
class CellMetrics:
    cell: ExperimentCell
    status: str
    annual_opex: float | None
    currency: str
    days: list[DayMetrics]
    model_stats: dict
    wall_time_s: float
    peak_mem_mb: float
    error: str = ""

    @property
    def max_abs_gap(self) -> float:
        gaps = [d.abs_gap for d in self.days if d.abs_gap is not None]
        return max(gaps) if gaps else float("nan")


@dataclass
class MetricsBundle:
    cells: list[CellMetrics]
    n_intervals: int

    def by_method(self, attr: str) -> dict[str, np.ndarray]:
        """Mean per-interval series per method over all solved days."""
        out: dict[str, list] = {}
        for cm in self.cells:
            for day in cm.days:
                series = getattr(day, attr)
                if series is not None:
                    out.setdefault(cm.cell.method, []).append(series)
        return {k: np.mean(np.stack(v), axis=0) for k, v in out.items() if v}


def scenario_config_for(cell: ExperimentCell, month: str,
                        overrides: dict) -> dict:
    cfg = {
        "name": f"{cell.cell_id}-{month}",
        "seed": cell.seed,
        "topology": {"preset": cell.topology},
        "traffic": {"tier": cell.tier},
        "city": cell.city,
        "month": month,
    }
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


def _run_method(scenario: Scenario, method: str, config: SolverConfig):
    """Returns (status, opex, bound, abs_gap, nodes, decisions)."""
    if method == "proposed":
        model = milp_mod.build_model(scenario)
        res = solve(model, scenario, config)
        return (res.status, res.objective, res.best_bound, res.abs_gap,
                res.node_count, res.decisions, model.stats())
    if method == "static-routing":
        run = baselines_mod.solve_static_routing(scenario, config)
        res = run.result
        return (res.status, run.opex, res.best_bound, res.abs_gap,
                res.node_count, run.decisions, {})
    if method == "traffic-aware":
        run = baselines_mod.solve_traffic_aware(scenario, config)
        res = run.stage1_result
        abs_gap = None
        if run.opex is not None and res.best_bound is not None \
                and res.abs_gap is not None:
            # Realized cost vs the no-renewables stage bound stays a valid
            # suboptimality certificate for the comparison tolerance.
            abs_gap = res.abs_gap
        return (res.status, run.opex, res.best_bound, abs_gap,
                res.node_count, run.decisions, {})
    raise ValueError(f"unknown method {method!r}")


def run_cell(cell: ExperimentCell, matrix: ExperimentMatrix) -> CellMetrics:
    t0 = _now()
    days: list[DayMetrics] = []
    model_stats: dict = {}
    status = "ok"
    error = ""
    try:
        for month, weight in matrix.day_schedule:
            cfg = scenario_config_for(cell, month, matrix.scenario_overrides)
            scenario = build_scenario(cfg)
            (day_status, value, bound, abs_gap, nodes, decisions,
             stats) = _run_method(scenario, cell.method, matrix.solver)
            model_stats = stats or model_stats
            if decisions is None:
                days.append(DayMetrics(month, weight, day_status, None, bound,
                                       None, nodes, False, None, None, None,
                                       None, None, None, None))
                status = day_status
                continue
            counts = energy_mod.active_counts(decisions, scenario)
            ledger = energy_mod.ledger_from_decisions(decisions, scenario)
            report = milp_mod.validate_solution(decisions, scenario)
            days.append(DayMetrics(
                month, weight, day_status, value, bound, abs_gap, nodes,
                report.feasible,
                active_cu=counts[0], active_du=counts[1:].sum(axis=0),
                unstored_cu=ledger.sold[0],
                unstored_du=ledger.sold[1:].sum(axis=0),
                remaining_cu=ledger.stored[0],
                remaining_du=ledger.stored[1:].sum(axis=0),
                ledger=ledger, unit_labels=scenario.unit_labels))
    except Exception as exc:  # cell failures become rows, never aborts
        status = "error"
        error = f"{type(exc).__name__}: {exc}"
        traceback.format_exc()
    annual = None
    if days and all(d.opex is not None for d in days):
        annual = float(sum(d.weight * d.opex for d in days))
    elif status == "ok":
        status = "incomplete"
    peak_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    return CellMetrics(cell=cell, status=status, annual_opex=annual,
                       currency="TRY", days=days, model_stats=model_stats,
                       wall_time_s=_now() - t0, peak_mem_mb=peak_mb,
                       error=error)


def _now() -> float:
    import time
    return time.monotonic()


def run_experiment(matrix: ExperimentMatrix, out_dir: str | Path | None = None,
                   figures: bool = False) -> MetricsBundle:
    """Run every cell; emit CSVs (and optionally figures) when out_dir set."""
    matrix.validate()
    cells = [run_cell(cell, matrix) for cell in matrix.cells]
    n_intervals = 0
    for cm in cells:
        for day in cm.days:
            if day.active_cu is not None:
                n_intervals = len(day.active_cu)
                break
    bundle = MetricsBundle(cells, n_intervals)
    if out_dir is not None:
        emit_plotdata(bundle, out_dir)
        if figures:
            from . import figures as figures_mod
            figures_mod.render_bundle(bundle, out_dir)
    return bundle


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) and np.isnan(v):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def emit_plotdata(bundle: MetricsBundle, out_dir: str | Path) -> list[Path]:
    """Write the per-figure CSVs; see README for the header glossary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    rows = [[cm.cell.city, cm.cell.tier, cm.cell.topology, cm.cell.method,
             cm.cell.seed, cm.status, cm.annual_opex, cm.currency,
             cm.max_abs_gap,
             all(d.validated for d in cm.days) if cm.days else False,
             cm.error]
            for cm in bundle.cells]
    _write_csv(out / "summary.csv",
               ["city", "tier", "topology", "method", "seed", "status",
                "annual_opex", "currency", "max_abs_gap", "validated",
                "error"], rows)
    written.append(out / "summary.csv")

    rows = [[cm.cell.city, cm.cell.tier, cm.cell.method, cm.annual_opex,
             cm.currency]
            for cm in bundle.cells if cm.annual_opex is not None]
    _write_csv(out / "fig5_opex.csv",
               ["city", "tier", "method", "annual_opex", "currency"], rows)
    written.append(out / "fig5_opex.csv")

    for name, attr_cu, attr_du, value_name in (
            ("fig6_active_dpes", "active_cu", "active_du", "mean_active_dpes"),
            ("fig7_unstored", "unstored_cu", "unstored_du", "mean_unstored_kwh"),
            ("fig8_remaining", "remaining_cu", "remaining_du",
             "mean_remaining_kwh")):
        rows = []
        cu_series = bundle.by_method(attr_cu)
        du_series = bundle.by_method(attr_du)
        for method in sorted(cu_series):
            for t in range(len(cu_series[method])):
                rows.append([method, t, "cu", cu_series[method][t]])
            for t in range(len(du_series[method])):
                rows.append([method, t, "du", du_series[method][t]])
        _write_csv(out / f"{name}.csv",
                   ["method", "interval", "side", value_name], rows)
        written.append(out / f"{name}.csv")

    rows = []
    for cm in bundle.cells:
        stats = cm.model_stats
        rows.append([cm.cell.topology, cm.cell.tier, cm.cell.city,
                     cm.cell.method, stats.get("rows"), stats.get("cols"),
                     stats.get("binaries"), stats.get("nonzeros"), cm.status,
                     cm.annual_opex, cm.max_abs_gap,
                     sum(d.node_count for d in cm.days)])
    _write_csv(out / "fig9_scalability.csv",
               ["topology", "tier", "city", "method", "rows", "cols",
                "binaries", "nonzeros", "status", "annual_opex",
                "max_abs_gap", "node_count"], rows)
    written.append(out / "fig9_scalability.csv")

    # Volatile diagnostics: excluded from the byte-determinism guarantee.
    rows = [[cm.cell.cell_id, cm.wall_time_s, cm.peak_mem_mb] for cm in bundle.cells]
    _write_csv(out / "solver_stats.csv",
               ["cell", "wall_time_s", "peak_mem_mb"], rows)

    ledger_dir = out / "ledgers"
    ledger_dir.mkdir(exist_ok=True)
    for cm in bundle.cells:
        for day in cm.days:
            if day.ledger is not None:
                path = ledger_dir / f"{cm.cell.cell_id}-{day.month}.csv"
                energy_mod.write_ledger_csv(day.ledger, path, day.unit_labels)
                written.append(path)
    return written
