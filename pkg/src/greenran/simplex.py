"""Bounded-variable revised simplex, dense.

Solves  min c.x  s.t.  A x (<=|=|>=) b,  lb <= x <= ub  for problems small
enough that a dense basis inverse is cheap. Phase 1 drives out artificial
variables, phase 2 optimizes. Dantzig pricing switches permanently to
Bland's rule once the objective stalls, which rules out cycling. Upper
bounds may be +inf; lower bounds must be finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
STALL_LIMIT = 200
REFACTOR_EVERY = 100

AT_LOWER, AT_UPPER, BASIC = 0, 1, 2


class SimplexError(RuntimeError):
    """Numerical failure; message carries condition diagnostics."""


@dataclass
class LPResult:
    status: str          # optimal | infeasible | unbounded
    x: np.ndarray | None
    objective: float | None
    iterations: int


def solve_lp_dense(c, a_matrix, sense, rhs, lb, ub,
                   max_iter: int | None = None) -> LPResult:
    """Sense per row: -1 for <=, 0 for =, +1 for >=."""
    c = np.asarray(c, dtype=float)
    a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
    sense = np.asarray(sense, dtype=int).ravel()
    rhs = np.asarray(rhs, dtype=float).ravel()
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    m, n = a.shape if a.size else (len(rhs), len(c))
    if m == 0:
        return _solve_unconstrained(c, lb, ub)
    if not np.isfinite(lb).all():
        raise SimplexError("lower bounds must be finite")
    if (lb > ub + FEAS_TOL).any():
        return LPResult("infeasible", None, None, 0)

    # Slacks turn inequalities into equalities.
    ineq = np.nonzero(sense != 0)[0]
    n_slack = ineq.size
    full_a = np.hstack([a, np.zeros((m, n_slack))])
    for k, row in enumerate(ineq):
        full_a[row, n + k] = 1.0 if sense[row] == -1 else -1.0
    full_c = np.concatenate([c, np.zeros(n_slack)])
    full_lb = np.concatenate([lb, np.zeros(n_slack)])
    full_ub = np.concatenate([ub, np.full(n_slack, np.inf)])

    solver = _Simplex(full_c, full_a, rhs, full_lb, full_ub, max_iter)
    status = solver.run()
    if status != "optimal":
        return LPResult(status, None, None, solver.iterations)
    x = solver.solution()[:n]
    return LPResult("optimal", x, float(c @ x), solver.iterations)


def _solve_unconstrained(c, lb, ub) -> LPResult:
    x = np.where(c >= 0, lb, ub)
    if not np.isfinite(x).all():
        return LPResult("unbounded", None, None, 0)
    return LPResult("optimal", x, float(c @ x), 0)


class _Simplex:
    def __init__(self, c, a, b, lb, ub, max_iter=None):
        self.m, n_struct = a.shape
        # Artificial columns appended up front; signs chosen after the
        # initial nonbasic point is known.
        self.n = n_struct
        self.c = c
        self.b = b.copy()
        self.lb = np.concatenate([lb, np.zeros(self.m)])
        self.ub = np.concatenate([ub, np.full(self.m, np.inf)])
        xn = np.where(np.isfinite(lb), lb, 0.0)
        resid = b - a @ xn
        signs = np.where(resid >= 0, 1.0, -1.0)
        self.a = np.hstack([a, np.diag(signs)])
        self.status = np.concatenate([
            np.full(self.n, AT_LOWER, dtype=np.int8),
            np.full(self.m, BASIC, dtype=np.int8)])
        self.basis = np.arange(self.n, self.n + self.m)
        self.binv = np.diag(signs)        # diag(s)^-1 == diag(s)
        self.xb = np.abs(resid)
        self.max_iter = max_iter or max(5000, 60 * (self.n + self.m))
        self.iterations = 0
        self.bland = False

    def run(self) -> str:
        phase1 = np.zeros(self.n + self.m)
        phase1[self.n:] = 1.0
        status = self._optimize(phase1, phase=1)
        if status != "optimal":
            return status
        art_basic = self.basis >= self.n
        if self.xb[art_basic].sum() > FEAS_TOL * max(1.0, np.abs(self.b).max(initial=1.0)):
            return "infeasible"
        self._drive_out_artificials()
        self.ub[self.n:] = 0.0            # pin artificials for phase 2
        phase2 = np.concatenate([self.c, np.zeros(self.m)])
        self.bland = False
        return self._optimize(phase2, phase=2)

    def solution(self) -> np.ndarray:
        x = self._nonbasic_point()
        x[self.basis] = self.xb
        return x

    def _drive_out_artificials(self):
        for pos in range(self.m):
            if self.basis[pos] < self.n:
                continue
            row = self.binv[pos] @ self.a[:, :self.n]
            ok = np.nonzero((np.abs(row) > 1e-7)
                            & (self.status[:self.n] != BASIC))[0]
            if ok.size == 0:
                continue  # redundant row, artificial stays basic at zero
            enter = int(ok[0])
            u = self.binv @ self.a[:, enter]
            value = self.ub[enter] if self.status[enter] == AT_UPPER \
                else self.lb[enter]
            self._pivot(enter, pos, value, False, u)

    def _nonbasic_point(self) -> np.ndarray:
        x = np.where(self.status == AT_UPPER, self.ub, self.lb)
        x[self.status == BASIC] = 0.0
        return x

    def _optimize(self, cost: np.ndarray, phase: int) -> str:
        stall = 0
        last_obj = np.inf
        while True:
            self.iterations += 1
            if self.iterations > self.max_iter:
                raise SimplexError(
                    f"iteration limit {self.max_iter} hit in phase {phase} "
                    f"(m={self.m}, n={self.n})")
            y = cost[self.basis] @ self.binv
            d = cost - y @ self.a
            enter = self._entering(d, phase)
            if enter is None:
                return "optimal"
            from_upper = self.status[enter] == AT_UPPER
            direction = -1.0 if from_upper else 1.0
            u = self.binv @ self.a[:, enter]
            g = direction * u
            step, leave_pos, leave_to_upper = self._ratio(enter, g)
            if step is None:
                return "unbounded"

            obj = cost[self.basis] @ self.xb
            if obj > last_obj - 1e-10 * max(1.0, abs(last_obj)):
                stall += 1
                if stall > STALL_LIMIT:
                    self.bland = True
            else:
                stall = 0
            last_obj = obj

            self.xb = self.xb - step * g
            if leave_pos is None:
                # Entering variable runs to its other bound.
                self.status[enter] = AT_LOWER if from_upper else AT_UPPER
                continue
            entering_value = (self.ub[enter] - step) if from_upper \
                else (self.lb[enter] + step)
            self._pivot(enter, leave_pos, entering_value, leave_to_upper, u)

    def _entering(self, d: np.ndarray, phase: int):
        movable = self.ub - self.lb > PIVOT_TOL
        if phase == 2:
            movable[self.n:] = False
        eligible = movable & (((self.status == AT_LOWER) & (d < -FEAS_TOL))
                              | ((self.status == AT_UPPER) & (d > FEAS_TOL)))
        idx = np.nonzero(eligible)[0]
        if idx.size == 0:
            return None
        if self.bland:
            return int(idx[0])
        return int(idx[np.argmax(np.abs(d[idx]))])

    def _ratio(self, enter: int, g: np.ndarray):
        """Max step for the entering variable moving by +step along its
        direction; g is the induced rate of decrease of basic values."""
        best = self.ub[enter] - self.lb[enter]   # bound-flip limit, may be inf
        leave_pos = None
        leave_to_upper = False
        for pos in range(self.m):
            gi = g[pos]
            var = self.basis[pos]
            if gi > PIVOT_TOL:
                room = self.xb[pos] - self.lb[var]
                ratio = max(room, 0.0) / gi
                to_upper = False
            elif gi < -PIVOT_TOL:
                cap = self.ub[var]
                if not np.isfinite(cap):
                    continue
                room = cap - self.xb[pos]
                ratio = max(room, 0.0) / (-gi)
                to_upper = True
            else:
                continue
            take = ratio < best - PIVOT_TOL
            if not take and leave_pos is not None and \
                    abs(ratio - best) <= PIVOT_TOL and self.bland and \
                    var < self.basis[leave_pos]:
                take = True
            if take or (leave_pos is None and ratio <= best + PIVOT_TOL):
                best = min(best, ratio)
                leave_pos = pos
                leave_to_upper = to_upper
        if not np.isfinite(best):
            return None, None, False
        flip_limit = self.ub[enter] - self.lb[enter]
        if leave_pos is None or (np.isfinite(flip_limit)
                                 and flip_limit < best - PIVOT_TOL):
            return flip_limit, None, False
        return best, leave_pos, leave_to_upper

    def _pivot(self, enter, leave_pos, entering_value, leave_to_upper, u):
        pivot = u[leave_pos]
        if abs(pivot) < PIVOT_TOL:
            raise SimplexError(f"pivot {pivot:.2e} below tolerance")
        leaving = self.basis[leave_pos]
        self.status[leaving] = AT_UPPER if leave_to_upper else AT_LOWER
        self.status[enter] = BASIC
        self.basis[leave_pos] = enter
        self.xb[leave_pos] = entering_value
        factor = u / pivot
        factor[leave_pos] = 0.0
        self.binv -= np.outer(factor, self.binv[leave_pos])
        self.binv[leave_pos] /= pivot
        if self.iterations % REFACTOR_EVERY == 0:
            self._refactorize()

    def _refactorize(self):
        basis_matrix = self.a[:, self.basis]
        try:
            self.binv = np.linalg.inv(basis_matrix)
        except np.linalg.LinAlgError as exc:
            raise SimplexError(
                f"singular basis (cond={np.linalg.cond(basis_matrix):.2e})"
            ) from exc
        xn = self._nonbasic_point()
        xn[self.basis] = 0.0
        self.xb = self.binv @ (self.b - self.a @ xn)
