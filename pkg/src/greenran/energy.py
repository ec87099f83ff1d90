"""Energy accounting: unit consumption, operating cost, battery ledgers.

All internal accounting is in kWh; Wh parameters convert on use. This module
is the ground truth every solver output is checked against, so it never
depends on how a solution was produced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenario import Scenario

BALANCE_TOL = 1e-9   # kWh, battery bookkeeping
CAP_TOL = 1e-6       # kWh, inequality slack on caps


class InfeasibleDecisionsError(ValueError):
    """Raised when a decision set breaks its own energy bookkeeping."""

    def __init__(self, violations: list["LedgerViolation"]):
        self.violations = violations
        head = ", ".join(str(v) for v in violations[:3])
        more = "" if len(violations) <= 3 else f" (+{len(violations) - 3} more)"
        super().__init__(f"infeasible decisions: {head}{more}")


@dataclass(frozen=True)
class LedgerViolation:
    tag: str          # eq10..eq15
    unit: int         # 0 = CU, then DUs
    interval: int
    slack: float      # amount by which the relation is broken

    def __str__(self) -> str:
        return f"{self.tag}[unit={self.unit},t={self.interval}] off by {self.slack:.3g}"


@dataclass(frozen=True)
class EnergyLedger:
    """Per-unit, per-interval energy books. Unit 0 is the CU, then DUs."""

    psi: np.ndarray        # consumption, kWh
    green_used: np.ndarray  # s, kWh
    sold: np.ndarray        # p, kWh
    stored: np.ndarray      # b, kWh (end of interval)
    generated: np.ndarray   # panel scale * normalized generation, kWh
    capacity: np.ndarray    # (U,) battery caps, kWh
    initial: np.ndarray     # (U,) starting charge, kWh

    @property
    def n_units(self) -> int:
        return self.psi.shape[0]

    @property
    def n_intervals(self) -> int:
        return self.psi.shape[1]


@dataclass
class Decisions:
    """Extracted decision variables for one scenario.

    ``m`` uses per-user DPE slots: the first dpe_count.cu slots are the CU
    DPEs, the rest are the user's own DU's DPEs.
    ``a`` uses global DPE indices: CU DPEs first, then dpe_count.du per DU.
    """

    m: np.ndarray                      # (I, K, F, T) uint8
    a: np.ndarray                      # (D_total, T) uint8
    l: np.ndarray                      # (R, T, A) uint8
    green_used: np.ndarray             # (U, T)
    sold: np.ndarray                   # (U, T)
    stored: np.ndarray                 # (U, T)
    z: np.ndarray | None = None        # (R, T, A)
    routing_warnings: list = field(default_factory=list)


def active_counts(decisions: Decisions, scenario: Scenario) -> np.ndarray:
    """Active DPE count per unit per interval, shape (U, T)."""
    d_cu = int(scenario.dpe_count.cu)
    d_du = int(scenario.dpe_count.du)
    counts = np.empty((scenario.n_units, scenario.n_intervals))
    counts[0] = decisions.a[:d_cu].sum(axis=0)
    for r in range(scenario.n_du):
        lo = d_cu + r * d_du
        counts[1 + r] = decisions.a[lo:lo + d_du].sum(axis=0)
    return counts


def unit_consumption(side: str, active_count, params) -> np.ndarray | float:
    """Consumption in kWh of one unit given its active DPE count.

    ``side`` is "cu" or "du"; params is the scenario EnergyParams (Wh per
    interval).
    """
    count = np.asarray(active_count, dtype=float)
    if (count < 0).any():
        raise ValueError("active DPE count must be >= 0")
    sta = getattr(params.static_wh, side)
    dpe = getattr(params.dpe_wh, side)
    out = (sta + count * dpe) / 1000.0
    return float(out) if out.ndim == 0 else out


def consumption_matrix(decisions: Decisions, scenario: Scenario) -> np.ndarray:
    counts = active_counts(decisions, scenario)
    psi = np.empty_like(counts)
    psi[0] = unit_consumption("cu", counts[0], scenario.energy)
    psi[1:] = unit_consumption("du", counts[1:], scenario.energy)
    return psi


def ledger_from_decisions(decisions: Decisions, scenario: Scenario) -> EnergyLedger:
    e = scenario.energy
    n_du = scenario.n_du
    return EnergyLedger(
        psi=consumption_matrix(decisions, scenario),
        green_used=np.asarray(decisions.green_used, dtype=float),
        sold=np.asarray(decisions.sold, dtype=float),
        stored=np.asarray(decisions.stored, dtype=float),
        generated=e.panel_scale.per_unit(n_du)[:, None] * e.generation,
        capacity=e.battery_kwh.per_unit(n_du),
        initial=e.initial_charge_kwh.per_unit(n_du))


def validate_ledger(ledger: EnergyLedger, scenario: Scenario | None = None
                    ) -> list[LedgerViolation]:
    """Check battery balance, capacity bounds, and green-usage caps.

    Violations are data, not exceptions; an empty list means the ledger is
    consistent. Tags eq10/eq11 are the CU/DU balance equalities, eq12/eq13
    the capacity bounds, eq14/eq15 the green caps.
    """
    out: list[LedgerViolation] = []
    b_prev = ledger.initial.copy()
    for t in range(ledger.n_intervals):
        balance = ledger.stored[:, t] - (b_prev - ledger.green_used[:, t]
                                         - ledger.sold[:, t] + ledger.generated[:, t])
        for u in np.nonzero(np.abs(balance) > BALANCE_TOL)[0]:
            out.append(LedgerViolation("eq10" if u == 0 else "eq11",
                                       int(u), t, float(balance[u])))
        over = ledger.stored[:, t] - ledger.capacity
        under = -ledger.stored[:, t]
        for u in np.nonzero((over > CAP_TOL) | (under > CAP_TOL))[0]:
            amt = float(max(over[u], under[u]))
            out.append(LedgerViolation("eq12" if u == 0 else "eq13", int(u), t, amt))
        s_over = ledger.green_used[:, t] - ledger.psi[:, t]
        s_neg = -ledger.green_used[:, t]
        for u in np.nonzero((s_over > CAP_TOL) | (s_neg > CAP_TOL))[0]:
            amt = float(max(s_over[u], s_neg[u]))
            out.append(LedgerViolation("eq14" if u == 0 else "eq15", int(u), t, amt))
        for u in np.nonzero(ledger.sold[:, t] < -CAP_TOL)[0]:
            out.append(LedgerViolation("eq10" if u == 0 else "eq11",
                                       int(u), t, float(ledger.sold[u, t])))
        b_prev = ledger.stored[:, t]
    return out


def ledger_opex(ledger: EnergyLedger, tariff: np.ndarray, sell_ratio: float) -> float:
    """Grid bill net of sold energy. Negative means net income."""
    net = ledger.psi - ledger.green_used - sell_ratio * ledger.sold
    return float((net.sum(axis=0) * tariff).sum())


def opex(decisions: Decisions, scenario: Scenario, check: bool = True) -> float:
    """Objective value of a decision set; raises on broken bookkeeping."""
    ledger = ledger_from_decisions(decisions, scenario)
    if check:
        violations = validate_ledger(ledger, scenario)
        if violations:
            raise InfeasibleDecisionsError(violations)
    return ledger_opex(ledger, scenario.energy.tariff, scenario.energy.sell_ratio)


def greedy_battery_dispatch(psi: np.ndarray, generated: np.ndarray,
                            capacity: np.ndarray, initial: np.ndarray
                            ) -> EnergyLedger:
    """Use-then-store-then-sell battery policy.

    Per interval: cover consumption from stored-plus-fresh energy first, then
    refill the battery, then sell whatever cannot be stored. Never strands
    storable energy: sold > 0 implies a full battery.
    """
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    generated = np.atleast_2d(np.asarray(generated, dtype=float))
    if psi.shape != generated.shape:
        raise ValueError("psi and generation series must have equal shapes")
    U, T = psi.shape
    capacity = np.broadcast_to(np.asarray(capacity, dtype=float), (U,))
    initial = np.broadcast_to(np.asarray(initial, dtype=float), (U,))
    s = np.zeros((U, T))
    p = np.zeros((U, T))
    b = np.zeros((U, T))
    prev = initial.copy()
    for t in range(T):
        available = prev + generated[:, t]
        s[:, t] = np.minimum(psi[:, t], available)
        leftover = available - s[:, t]
        b[:, t] = np.minimum(capacity, leftover)
        p[:, t] = leftover - b[:, t]
        prev = b[:, t]
    return EnergyLedger(psi=psi, green_used=s, sold=p, stored=b,
                        generated=generated, capacity=capacity.copy(),
                        initial=initial.copy())


def project_ledger(decisions: Decisions, scenario: Scenario) -> Decisions:
    """Snap a decision record's energy books onto exact balance.

    Solver outputs satisfy the balance equalities only to LP tolerance;
    this forward pass keeps (s, p) as close as possible to the given values
    while making the stored series exactly consistent and within bounds.
    The drift is on the order of the LP tolerance.
    """
    from dataclasses import replace as _replace

    e = scenario.energy
    n_du = scenario.n_du
    psi = consumption_matrix(decisions, scenario)
    gen = e.panel_scale.per_unit(n_du)[:, None] * e.generation
    cap = e.battery_kwh.per_unit(n_du)
    U, T = psi.shape
    s = np.zeros((U, T))
    p = np.zeros((U, T))
    b = np.zeros((U, T))
    prev = e.initial_charge_kwh.per_unit(n_du).copy()
    for t in range(T):
        available = prev + gen[:, t]
        s[:, t] = np.clip(decisions.green_used[:, t], 0.0,
                          np.minimum(psi[:, t], available))
        p[:, t] = np.clip(decisions.sold[:, t], 0.0, available - s[:, t])
        b[:, t] = available - s[:, t] - p[:, t]
        over = b[:, t] - cap
        spill = over > 0
        p[spill, t] += over[spill]
        b[spill, t] = cap[spill]
        prev = b[:, t]
    return _replace(decisions, green_used=s, sold=p, stored=b)


def write_ledger_csv(ledger: EnergyLedger, path: str | Path,
                     unit_labels: tuple[str, ...] | None = None) -> None:
    labels = unit_labels or tuple(f"u{u}" for u in range(ledger.n_units))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["unit", "interval", "psi_kwh", "s_kwh", "p_kwh",
                    "b_kwh", "gen_kwh"])
        for u in range(ledger.n_units):
            for t in range(ledger.n_intervals):
                w.writerow([labels[u], t,
                            repr(float(ledger.psi[u, t])),
                            repr(float(ledger.green_used[u, t])),
                            repr(float(ledger.sold[u, t])),
                            repr(float(ledger.stored[u, t])),
                            repr(float(ledger.generated[u, t]))])
