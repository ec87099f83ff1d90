"""Mixed-integer linear model of the joint split / routing / renewable
scheduling problem.

Variables per interval t:
  m[i,d,f,t]  binary   function f of user i runs on DPE d (CU or own DU)
  a[d,t]      binary   DPE d is switched on
  l[r,e,t]    binary   arc e carries the path between DU r and the CU
  z[r,e,t]    cont.    linearization helper, one per (DU, arc)
  w[r,t]      cont.    aggregation helper: CU-bound traffic of DU r
  s,p,b[u,t]  cont.    green used / sold / stored energy per unit

Constraint families keep stable tags (eq4..eq20 plus wdef) so solver logs,
exported files, and validation reports line up; see the README for the tag
glossary. The bandwidth coupling is kept linear through the big-M rows eq19
and the shared-capacity rows eq20; the original quadratic form (eq17) is
never part of the model but is what validate_solution checks, so it acts as
an independent acceptance oracle for the linearization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import energy as energy_mod
from .energy import Decisions
from .scenario import ConfigError, Scenario

SENSE_LE, SENSE_EQ, SENSE_GE = -1, 0, 1

BINARY_TOL = 1e-6


class BuildError(ValueError):
    pass


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class VarLayout:
    """Flat column layout; all index math lives here."""

    n_users: int
    n_slots: int          # per-user DPE slots: CU DPEs then own-DU DPEs
    n_functions: int
    n_intervals: int
    d_cu: int
    d_du: int
    n_du: int
    n_arcs: int
    n_units: int
    has_routing: bool

    @property
    def n_m(self) -> int:
        return self.n_users * self.n_slots * self.n_functions * self.n_intervals

    @property
    def d_total(self) -> int:
        return self.d_cu + self.n_du * self.d_du

    @property
    def off_a(self) -> int:
        return self.n_m

    @property
    def off_l(self) -> int:
        return self.off_a + self.d_total * self.n_intervals

    @property
    def off_z(self) -> int:
        n_l = self.n_du * self.n_arcs * self.n_intervals if self.has_routing else 0
        return self.off_l + n_l

    @property
    def off_w(self) -> int:
        n_z = self.n_du * self.n_arcs * self.n_intervals if self.has_routing else 0
        return self.off_z + n_z

    @property
    def off_s(self) -> int:
        return self.off_w + self.n_du * self.n_intervals

    @property
    def off_p(self) -> int:
        return self.off_s + self.n_units * self.n_intervals

    @property
    def off_b(self) -> int:
        return self.off_p + self.n_units * self.n_intervals

    @property
    def n_cols(self) -> int:
        return self.off_b + self.n_units * self.n_intervals

    @property
    def n_binary(self) -> int:
        return self.off_z if self.has_routing else self.off_l

    # Index helpers accept scalars or numpy arrays.
    def m(self, i, k, f, t):
        return ((i * self.n_slots + k) * self.n_functions + f) * self.n_intervals + t

    def a(self, d, t):
        return self.off_a + d * self.n_intervals + t

    def l(self, r, e, t):
        return self.off_l + (r * self.n_arcs + e) * self.n_intervals + t

    def z(self, r, e, t):
        return self.off_z + (r * self.n_arcs + e) * self.n_intervals + t

    def w(self, r, t):
        return self.off_w + r * self.n_intervals + t

    def s(self, u, t):
        return self.off_s + u * self.n_intervals + t

    def p(self, u, t):
        return self.off_p + u * self.n_intervals + t

    def b(self, u, t):
        return self.off_b + u * self.n_intervals + t

    def global_dpe(self, r: int, j: int) -> int:
        """Global index of DPE j of DU r (CU DPEs occupy 0..d_cu-1)."""
        return self.d_cu + r * self.d_du + j

    def unit_of_dpe(self) -> np.ndarray:
        out = np.zeros(self.d_total, dtype=int)
        for r in range(self.n_du):
            out[self.d_cu + r * self.d_du:self.d_cu + (r + 1) * self.d_du] = 1 + r
        return out


@dataclass(frozen=True)
class BigMValues:
    activation_cu: float          # eq6
    activation_du: np.ndarray     # (R,), eq7
    bandwidth: np.ndarray         # (R, T), eq19


def big_m_values(scenario: Scenario) -> BigMValues:
    """Tightest constants that still deactivate their rows.

    eq6 bounds a CU DPE's total placement count, eq7 a DU DPE's, eq19 the
    largest possible CU-bound traffic of one DU at one interval.
    """
    F = scenario.n_functions
    users = scenario.users
    du_of_user = users.du_of_user
    R = scenario.n_du
    act_du = np.array([F * int((du_of_user == r).sum()) for r in range(R)],
                      dtype=float)
    bw = np.zeros((R, scenario.n_intervals))
    for r in range(R):
        idx = users.users_of_du(r)
        bw[r] = F * users.traffic[idx].sum(axis=0)
    return BigMValues(activation_cu=float(F * users.n_users),
                      activation_du=act_du, bandwidth=bw)


@dataclass
class MilpModel:
    """Sparse linear program plus integrality marks and semantic metadata."""

    c: np.ndarray
    const: float
    a_matrix: sp.csr_matrix
    sense: np.ndarray           # int8 per row: -1 le, 0 eq, +1 ge
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    is_binary: np.ndarray
    layout: VarLayout
    row_tags: list[str]
    row_index: list[tuple]
    big_m: BigMValues
    meta: dict = field(default_factory=dict)

    @property
    def n_cols(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.rhs.shape[0]

    def var_tuple(self, col: int) -> tuple:
        lay = self.layout
        T = lay.n_intervals
        if col < lay.off_a:
            rest, t = divmod(col, T)
            rest, f = divmod(rest, lay.n_functions)
            i, k = divmod(rest, lay.n_slots)
            d_cu = lay.d_cu
            if k < d_cu:
                d = k
            else:
                d = lay.global_dpe(int(self.meta["du_of_user"][i]), k - d_cu)
            return ("m", i, d, f, t)
        if col < lay.off_l:
            d, t = divmod(col - lay.off_a, T)
            return ("a", d, t)
        if col < lay.off_z:
            rest, t = divmod(col - lay.off_l, T)
            r, e = divmod(rest, lay.n_arcs)
            return ("l", r, e, t)
        if col < lay.off_w:
            rest, t = divmod(col - lay.off_z, T)
            r, e = divmod(rest, lay.n_arcs)
            return ("z", r, e, t)
        if col < lay.off_s:
            r, t = divmod(col - lay.off_w, T)
            return ("w", r, t)
        for name, off in (("s", lay.off_s), ("p", lay.off_p), ("b", lay.off_b)):
            if col < off + lay.n_units * T:
                u, t = divmod(col - off, T)
                return (name, u, t)
        raise IndexError(col)

    def var_name(self, col: int) -> str:
        tup = self.var_tuple(col)
        kind = tup[0]
        if kind == "m":
            _, i, d, f, t = tup
            return f"m_u{i}_d{d}_f{f}_t{t}"
        if kind == "a":
            return f"a_d{tup[1]}_t{tup[2]}"
        if kind in ("l", "z"):
            return f"{kind}_r{tup[1]}_e{tup[2]}_t{tup[3]}"
        if kind == "w":
            return f"w_r{tup[1]}_t{tup[2]}"
        _, u, t = tup
        label = "cu" if u == 0 else f"du{u}"
        return f"{kind}_{label}_t{t}"

    def row_name(self, row: int) -> str:
        tag = self.row_tags[row]
        idx = self.row_index[row]
        return tag + "".join(f"_{a}{b}" for a, b in idx)

    def stats(self) -> dict:
        return {"rows": self.n_rows, "cols": self.n_cols,
                "binaries": int(self.is_binary.sum()),
                "nonzeros": int(self.a_matrix.nnz)}


class _RowBuilder:
    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.sense: list[int] = []
        self.rhs: list[float] = []
        self.tags: list[str] = []
        self.index: list[tuple] = []
        self.n = 0

    def add(self, cols, vals, sense: int, rhs: float, tag: str, idx: tuple):
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if vals.shape[0] == 1 and cols.shape[0] > 1:
            vals = np.full(cols.shape[0], vals[0])
        self.rows.append(np.full(cols.shape[0], self.n, dtype=np.int64))
        self.cols.append(cols)
        self.vals.append(vals)
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.tags.append(tag)
        self.index.append(idx)
        self.n += 1

    def matrix(self, n_cols: int) -> sp.csr_matrix:
        rows = np.concatenate(self.rows) if self.rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(self.vals) if self.vals else np.zeros(0)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, n_cols))


def build_model(scenario: Scenario, fixed_paths: dict[int, list[int]] | None = None,
                strict_delay: bool = False) -> MilpModel:
    """Build the full linearized program for a scenario.

    ``fixed_paths`` freezes routing: it maps each DU index to an arc-id path
    towards the CU. The routing variables and their rows (eq16, eq19, eq20)
    are then substituted away and the bandwidth limits become the linear
    per-arc rows tagged eq17.
    """
    try:
        scenario.validate()
    except ConfigError as exc:
        raise BuildError(str(exc)) from None

    users = scenario.users
    topo = scenario.topology
    e = scenario.energy
    T = scenario.n_intervals
    F = scenario.n_functions
    R = scenario.n_du
    I = users.n_users
    d_cu = int(scenario.dpe_count.cu)
    d_du = int(scenario.dpe_count.du)
    arcs = topo.arcs
    A = len(arcs)
    U = scenario.n_units
    lay = VarLayout(n_users=I, n_slots=d_cu + d_du, n_functions=F,
                    n_intervals=T, d_cu=d_cu, d_du=d_du, n_du=R, n_arcs=A,
                    n_units=U, has_routing=fixed_paths is None)
    if fixed_paths is not None:
        missing = [r for r in range(R) if r not in fixed_paths]
        if missing:
            raise BuildError(f"fixed_paths missing DU indices {missing}")

    big_m = big_m_values(scenario)
    rho = users.traffic
    mu = users.delay_limits
    du_of_user = users.du_of_user
    dpe_kwh = e.dpe_wh.per_unit(R) / 1000.0        # per unit
    sta_kwh = e.static_wh.per_unit(R) / 1000.0
    gen_kwh = e.panel_scale.per_unit(R)[:, None] * e.generation
    cap = e.battery_kwh.per_unit(R)
    b0 = e.initial_charge_kwh.per_unit(R)
    tariff = e.tariff

    rb = _RowBuilder()
    i_all = np.arange(I)
    f_all = np.arange(F)
    t_all = np.arange(T)

    # eq4/eq5 DPE capacity, eq6/eq7 activation coupling.
    for d in range(d_cu):
        m_cols = lay.m(i_all[:, None, None], d, f_all[None, :, None],
                       t_all[None, None, :])          # (I, F, T)
        for t in range(T):
            cols = m_cols[:, :, t].ravel()
            vals = np.repeat(rho[:, t], F)
            rb.add(cols, vals, SENSE_LE, scenario.dpe_capacity.cu,
                   "eq4", (("d", d), ("t", t)))
            rb.add(np.concatenate(([lay.a(d, t)], cols)),
                   np.concatenate(([big_m.activation_cu], -np.ones(cols.size))),
                   SENSE_GE, 0.0, "eq6", (("d", d), ("t", t)))
    for r in range(R):
        users_r = users.users_of_du(r)
        for j in range(d_du):
            k = d_cu + j
            d_glob = lay.global_dpe(r, j)
            m_cols = lay.m(users_r[:, None, None], k, f_all[None, :, None],
                           t_all[None, None, :])
            for t in range(T):
                cols = m_cols[:, :, t].ravel()
                vals = np.repeat(rho[users_r, t], F)
                rb.add(cols, vals, SENSE_LE, scenario.dpe_capacity.du,
                       "eq5", (("d", d_glob), ("t", t)))
                rb.add(np.concatenate(([lay.a(d_glob, t)], cols)),
                       np.concatenate(([big_m.activation_du[r]],
                                       -np.ones(cols.size))),
                       SENSE_GE, 0.0, "eq7", (("d", d_glob), ("t", t)))

    # eq8 full assignment, eq9 delay budget.
    k_all = np.arange(lay.n_slots)
    k_cu = np.arange(d_cu)
    for i in range(I):
        cols8 = lay.m(i, k_all[:, None, None], f_all[None, :, None],
                      t_all[None, None, :])
        cols9 = lay.m(i, k_cu[:, None, None], f_all[None, :, None],
                      t_all[None, None, :])
        for t in range(T):
            rb.add(cols8[:, :, t].ravel(), [1.0], SENSE_EQ, float(F),
                   "eq8", (("u", i), ("t", t)))
            lim = int(mu[i, t])
            if strict_delay and lim >= 1:
                lim -= 1
            rb.add(cols9[:, :, t].ravel(), [1.0], SENSE_LE, float(lim),
                   "eq9", (("u", i), ("t", t)))

    # eq10/eq11 battery balance.
    for u in range(U):
        tag = "eq10" if u == 0 else "eq11"
        for t in range(T):
            cols = [lay.b(u, t), lay.s(u, t), lay.p(u, t)]
            vals = [1.0, 1.0, 1.0]
            rhs = gen_kwh[u, t]
            if t == 0:
                rhs += b0[u]
            else:
                cols.append(lay.b(u, t - 1))
                vals.append(-1.0)
            idx = (("t", t),) if u == 0 else (("du", u), ("t", t))
            rb.add(cols, vals, SENSE_EQ, rhs, tag, idx)
        if e.cyclic_battery:
            idx = (("t", T - 1),) if u == 0 else (("du", u), ("t", T - 1))
            rb.add([lay.b(u, T - 1)], [1.0], SENSE_EQ, b0[u], "cyc", idx)

    # eq14/eq15 green usage capped by consumption.
    for u in range(U):
        tag = "eq14" if u == 0 else "eq15"
        if u == 0:
            dpes = np.arange(d_cu)
        else:
            dpes = np.array([lay.global_dpe(u - 1, j) for j in range(d_du)])
        for t in range(T):
            cols = np.concatenate(([lay.s(u, t)], lay.a(dpes, t)))
            vals = np.concatenate(([1.0], np.full(dpes.size, -dpe_kwh[u])))
            idx = (("t", t),) if u == 0 else (("du", u), ("t", t))
            rb.add(cols, vals, SENSE_LE, sta_kwh[u], tag, idx)

    node_index = topo.node_index
    cu_idx = node_index[topo.cu_id]
    du_node_idx = [node_index[d] for d in topo.du_ids]

    if lay.has_routing:
        # eq16 flow conservation per commodity and node.
        out_of: dict[int, list[int]] = {v: [] for v in range(len(topo.nodes))}
        into: dict[int, list[int]] = {v: [] for v in range(len(topo.nodes))}
        for eid, arc in enumerate(arcs):
            out_of[node_index[arc.tail]].append(eid)
            into[node_index[arc.head]].append(eid)
        for r in range(R):
            for x in range(len(topo.nodes)):
                rhs = 1.0 if x == du_node_idx[r] else (-1.0 if x == cu_idx else 0.0)
                cols = np.array(out_of[x] + into[x])
                vals = np.concatenate((np.ones(len(out_of[x])),
                                       -np.ones(len(into[x]))))
                for t in range(T):
                    rb.add(lay.l(r, cols, t), vals, SENSE_EQ, rhs,
                           "eq16", (("r", r), ("x", x), ("t", t)))

    # wdef: w[r,t] aggregates the CU-bound traffic of DU r.
    for r in range(R):
        users_r = users.users_of_du(r)
        m_cols = lay.m(users_r[:, None, None], k_cu[None, :, None],
                       f_all[None, None, :], 0)       # t added later
        for t in range(T):
            cols = np.concatenate(([lay.w(r, t)], (m_cols + t).ravel()))
            vals = np.concatenate(([1.0],
                                   -np.repeat(rho[users_r, t], d_cu * F)))
            rb.add(cols, vals, SENSE_EQ, 0.0, "wdef", (("r", r), ("t", t)))

    if lay.has_routing:
        # eq19 per-DU big-M link, eq20 shared arc capacity.
        for e_id in range(A):
            for t in range(T):
                for r in range(R):
                    M = big_m.bandwidth[r, t]
                    rb.add([lay.w(r, t), lay.l(r, e_id, t), lay.z(r, e_id, t)],
                           [1.0, M, -1.0], SENSE_LE, M,
                           "eq19", (("r", r), ("e", e_id), ("t", t)))
                rb.add(lay.z(np.arange(R), e_id, t), [1.0], SENSE_LE,
                       arcs[e_id].capacity, "eq20", (("e", e_id), ("t", t)))
    else:
        # Routing frozen: bandwidth rows become linear in w (tag eq17).
        riders: dict[int, list[int]] = {e_id: [] for e_id in range(A)}
        for r, path in fixed_paths.items():
            for e_id in path:
                riders[e_id].append(r)
        for e_id in range(A):
            if not riders[e_id]:
                continue
            for t in range(T):
                rb.add(lay.w(np.array(riders[e_id]), t), [1.0], SENSE_LE,
                       arcs[e_id].capacity, "eq17", (("e", e_id), ("t", t)))

    # Objective: sum_t tariff * (consumption - green - sell_ratio * sold).
    c = np.zeros(lay.n_cols)
    unit_of_dpe = lay.unit_of_dpe()
    for d in range(lay.d_total):
        c[lay.a(d, t_all)] = tariff * dpe_kwh[unit_of_dpe[d]]
    for u in range(U):
        c[lay.s(u, t_all)] = -tariff
        c[lay.p(u, t_all)] = -e.sell_ratio * tariff
    const = float(tariff.sum() * sta_kwh.sum())

    # Bounds.
    lb = np.zeros(lay.n_cols)
    ub = np.ones(lay.n_cols)
    is_binary = np.zeros(lay.n_cols, dtype=bool)
    is_binary[:lay.off_z if lay.has_routing else lay.off_l] = True
    if lay.has_routing:
        for e_id in range(A):
            ub[lay.z(np.arange(R)[:, None], e_id, t_all[None, :])] = \
                arcs[e_id].capacity
    for r in range(R):
        ub[lay.w(r, t_all)] = big_m.bandwidth[r]
    psi_max = (sta_kwh + np.array([d_cu] + [d_du] * R) * dpe_kwh)
    sellable = b0 + gen_kwh.sum(axis=1)
    for u in range(U):
        ub[lay.s(u, t_all)] = psi_max[u]
        ub[lay.p(u, t_all)] = sellable[u]
        ub[lay.b(u, t_all)] = cap[u]

    # Integrality-implied activation floors, used by the solver as optional
    # bound tightening. Delay budgets pin part of each DU's load locally;
    # whatever exceeds the total local capacity must reach the CU.
    effective_mu = np.minimum(mu, F).astype(float)
    if strict_delay:
        effective_mu = np.maximum(effective_mu - 1, 0)
    forced_local = np.zeros((R, T))
    total_load = F * rho.sum(axis=0)
    for r in range(R):
        idx = users.users_of_du(r)
        if idx.size:
            forced_local[r] = ((F - effective_mu[idx]) * rho[idx]).sum(axis=0)
    floors: list[tuple[int, int, int]] = []
    eps = 1e-9
    local_capacity = R * d_du * scenario.dpe_capacity.du
    for t in range(T):
        if scenario.dpe_capacity.cu > 0:
            cu_forced = max(0.0, total_load[t] - local_capacity)
            need = int(np.ceil(cu_forced / scenario.dpe_capacity.cu - eps))
            if need >= 1:
                floors.append((0, t, need))
        if scenario.dpe_capacity.du > 0:
            for r in range(R):
                need = int(np.ceil(forced_local[r, t]
                                   / scenario.dpe_capacity.du - eps))
                if need >= 1:
                    floors.append((1 + r, t, need))
    l_max = max(scenario.dpe_capacity.cu, scenario.dpe_capacity.du)
    network_floors = []
    if l_max > 0:
        for t in range(T):
            need = int(np.ceil(total_load[t] / l_max - eps))
            if need >= 1:
                network_floors.append((t, need))

    a_matrix = rb.matrix(lay.n_cols)
    model = MilpModel(c=c, const=const, a_matrix=a_matrix,
                      sense=np.array(rb.sense, dtype=np.int8),
                      rhs=np.array(rb.rhs), lb=lb, ub=ub, is_binary=is_binary,
                      layout=lay, row_tags=rb.tags, row_index=rb.index,
                      big_m=big_m,
                      meta={"du_of_user": du_of_user.copy(),
                            "unit_of_dpe": unit_of_dpe,
                            "fixed_paths": fixed_paths,
                            "strict_delay": strict_delay,
                            "activation_floors": floors,
                            "network_floors": network_floors,
                            "scenario_name": scenario.meta.get("name", "")})
    return model


# ---------------------------------------------------------------------------
# Solution extraction and validation


def extract_decisions(model: MilpModel, x: np.ndarray,
                      scenario: Scenario) -> Decisions:
    """Round a variable vector into a Decisions record and decode paths.

    Cycle arcs disjoint from a decoded path are flagged in
    ``routing_warnings``, not treated as errors.
    """
    lay = model.layout
    x = np.asarray(x, dtype=float)
    if x.shape[0] != lay.n_cols:
        raise ExtractionError(f"expected {lay.n_cols} values, got {x.shape[0]}")
    bin_vals = x[model.is_binary]
    off = np.abs(bin_vals - np.round(bin_vals))
    if off.size and off.max() > BINARY_TOL:
        col = int(np.flatnonzero(model.is_binary)[int(np.argmax(off))])
        raise ExtractionError(
            f"binary variable {model.var_name(col)} = {x[col]:.6f} is fractional")

    T, F, R, A, U = (lay.n_intervals, lay.n_functions, lay.n_du, lay.n_arcs,
                     lay.n_units)
    m = np.round(x[:lay.n_m]).astype(np.uint8).reshape(
        lay.n_users, lay.n_slots, F, T)
    a = np.round(x[lay.off_a:lay.off_l]).astype(np.uint8).reshape(lay.d_total, T)
    if lay.has_routing:
        l = np.round(x[lay.off_l:lay.off_z]).astype(np.uint8).reshape(R, A, T)
        l = np.transpose(l, (0, 2, 1)).copy()          # (R, T, A)
        z = x[lay.off_z:lay.off_w].reshape(R, A, T)
        z = np.transpose(z, (0, 2, 1)).copy()
    else:
        l = np.zeros((R, T, A), dtype=np.uint8)
        for r, path in model.meta["fixed_paths"].items():
            for e_id in path:
                l[r, :, e_id] = 1
        z = None
    s = x[lay.off_s:lay.off_p].reshape(U, T)
    p = x[lay.off_p:lay.off_b].reshape(U, T)
    b = x[lay.off_b:].reshape(U, T)

    decisions = Decisions(m=m, a=a, l=l, green_used=s.copy(), sold=p.copy(),
                          stored=b.copy(), z=z)
    topo = scenario.topology
    node_index = topo.node_index
    cu = node_index[topo.cu_id]
    arc_ends = [(node_index[arc.tail], node_index[arc.head])
                for arc in topo.arcs]
    for r in range(R):
        start = node_index[topo.du_ids[r]]
        for t in range(T):
            on = set(np.nonzero(l[r, t])[0].tolist())
            path = _walk_path(on, arc_ends, start, cu, r, t)
            leftover = sorted(on - set(path))
            if leftover:
                decisions.routing_warnings.append(
                    {"du": r, "interval": t, "cycle_arcs": leftover})
    return decisions


def _walk_path(arcs_on: set[int], arc_ends: list[tuple[int, int]],
               start: int, goal: int, r: int, t: int) -> list[int]:
    path: list[int] = []
    visited = {start}
    current = start
    used: set[int] = set()
    while current != goal:
        candidates = sorted(e for e in arcs_on
                            if e not in used and arc_ends[e][0] == current)
        if not candidates:
            raise ExtractionError(
                f"routing for DU {r} at t={t} does not reach the CU")
        e = candidates[0]
        used.add(e)
        path.append(e)
        current = arc_ends[e][1]
        if current in visited and current != goal:
            raise ExtractionError(
                f"routing for DU {r} at t={t} revisits a node before the CU")
        visited.add(current)
    return path


def cu_bound_traffic(decisions: Decisions, scenario: Scenario) -> np.ndarray:
    """Traffic each DU sends towards the CU, shape (R, T)."""
    d_cu = int(scenario.dpe_count.cu)
    users = scenario.users
    cu_count = decisions.m[:, :d_cu].astype(float).sum(axis=(1, 2))  # (I, T)
    w = np.zeros((scenario.n_du, scenario.n_intervals))
    for r in range(scenario.n_du):
        idx = users.users_of_du(r)
        w[r] = (users.traffic[idx] * cu_count[idx]).sum(axis=0)
    return w


def decisions_to_x(model: MilpModel, decisions: Decisions,
                   scenario: Scenario) -> np.ndarray:
    """Inverse of extract_decisions for feasible decision records.

    The z helpers are filled with the exact values the linearization needs:
    the DU's CU-bound traffic on its own path arcs, zero elsewhere.
    """
    lay = model.layout
    x = np.zeros(lay.n_cols)
    x[:lay.n_m] = decisions.m.reshape(-1)
    x[lay.off_a:lay.off_l] = decisions.a.reshape(-1)
    w = cu_bound_traffic(decisions, scenario)
    if lay.has_routing:
        l_rat = np.transpose(decisions.l, (0, 2, 1)).astype(float)  # (R, A, T)
        x[lay.off_l:lay.off_z] = l_rat.reshape(-1)
        if decisions.z is not None:
            z_rat = np.transpose(decisions.z, (0, 2, 1))
        else:
            z_rat = l_rat * w[:, None, :]
        x[lay.off_z:lay.off_w] = z_rat.reshape(-1)
    t_all = np.arange(lay.n_intervals)
    for r in range(lay.n_du):
        x[lay.w(r, t_all)] = w[r]
    for u in range(lay.n_units):
        x[lay.s(u, t_all)] = decisions.green_used[u]
        x[lay.p(u, t_all)] = decisions.sold[u]
        x[lay.b(u, t_all)] = decisions.stored[u]
    return x


@dataclass(frozen=True)
class Violation:
    tag: str
    index: tuple
    slack: float

    def __str__(self) -> str:
        where = ",".join(f"{k}={v}" for k, v in self.index)
        return f"{self.tag}[{where}] violated by {self.slack:.3g}"


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.feasible:
            return "feasible"
        return "\n".join(str(v) for v in self.violations)


def validate_solution(decisions: Decisions, scenario: Scenario,
                      strict_delay: bool = False, tol: float = 1e-6
                      ) -> ValidationReport:
    """Check a decision record against every model constraint directly.

    The bandwidth limit is evaluated in its original quadratic form
    (path indicator times CU-bound traffic), so this is an independent check
    of the linearization, not a re-run of the model rows.
    """
    out: list[Violation] = []
    users = scenario.users
    rho = users.traffic
    F = scenario.n_functions
    T = scenario.n_intervals
    R = scenario.n_du
    d_cu = int(scenario.dpe_count.cu)
    d_du = int(scenario.dpe_count.du)
    m = decisions.m.astype(float)
    a = decisions.a

    for arr, name in ((decisions.m, "m"), (decisions.a, "a"), (decisions.l, "l")):
        vals = np.asarray(arr)
        if ((vals != 0) & (vals != 1)).any():
            out.append(Violation("domain", (("var", name),), 1.0))

    # eq4/eq6: CU DPE capacity and activation.
    load_cu = np.einsum("it,ikft->kt", rho, m[:, :d_cu])
    count_cu = m[:, :d_cu].sum(axis=(0, 2))            # (d_cu, T)
    for d, t in zip(*np.nonzero(load_cu > scenario.dpe_capacity.cu + tol)):
        out.append(Violation("eq4", (("d", int(d)), ("t", int(t))),
                             float(load_cu[d, t] - scenario.dpe_capacity.cu)))
    for d, t in zip(*np.nonzero((count_cu > 0.5) & (a[:d_cu] == 0))):
        out.append(Violation("eq6", (("d", int(d)), ("t", int(t))),
                             float(count_cu[d, t])))

    # eq5/eq7 per DU.
    for r in range(R):
        idx = users.users_of_du(r)
        load_du = np.einsum("it,ijft->jt", rho[idx], m[idx, d_cu:])
        count_du = m[idx, d_cu:].sum(axis=(0, 2))
        a_du = a[d_cu + r * d_du:d_cu + (r + 1) * d_du]
        for j, t in zip(*np.nonzero(load_du > scenario.dpe_capacity.du + tol)):
            out.append(Violation("eq5", (("d", d_cu + r * d_du + int(j)),
                                         ("t", int(t))),
                                 float(load_du[j, t] - scenario.dpe_capacity.du)))
        for j, t in zip(*np.nonzero((count_du > 0.5) & (a_du == 0))):
            out.append(Violation("eq7", (("d", d_cu + r * d_du + int(j)),
                                         ("t", int(t))), float(count_du[j, t])))

    # eq8/eq9 per user.
    total = m.sum(axis=(1, 2))                         # (I, T)
    at_cu = m[:, :d_cu].sum(axis=(1, 2))
    for i, t in zip(*np.nonzero(np.abs(total - F) > tol)):
        out.append(Violation("eq8", (("u", int(i)), ("t", int(t))),
                             float(total[i, t] - F)))
    limits = users.delay_limits.astype(float)
    if strict_delay:
        limits = np.maximum(limits - 1, 0)
    for i, t in zip(*np.nonzero(at_cu > limits + tol)):
        out.append(Violation("eq9", (("u", int(i)), ("t", int(t))),
                             float(at_cu[i, t] - limits[i, t])))

    # Battery books (eq10..eq15).
    ledger = energy_mod.ledger_from_decisions(decisions, scenario)
    for v in energy_mod.validate_ledger(ledger, scenario):
        idx = (("t", v.interval),) if v.unit == 0 else \
            (("du", v.unit), ("t", v.interval))
        out.append(Violation(v.tag, idx, v.slack))

    # eq16 flow conservation and eq17 quadratic bandwidth.
    topo = scenario.topology
    node_index = topo.node_index
    cu_idx = node_index[topo.cu_id]
    n_nodes = len(topo.nodes)
    tails = np.array([node_index[arc.tail] for arc in topo.arcs])
    heads = np.array([node_index[arc.head] for arc in topo.arcs])
    caps = np.array([arc.capacity for arc in topo.arcs])
    w = cu_bound_traffic(decisions, scenario)
    for r in range(R):
        du_idx = node_index[topo.du_ids[r]]
        for t in range(T):
            on = decisions.l[r, t].astype(float)
            net = np.zeros(n_nodes)
            np.add.at(net, tails, on)
            np.add.at(net, heads, -on)
            want = np.zeros(n_nodes)
            want[du_idx] = 1.0
            want[cu_idx] = -1.0
            bad = np.nonzero(np.abs(net - want) > tol)[0]
            for x_node in bad:
                out.append(Violation("eq16", (("r", r), ("x", int(x_node)),
                                              ("t", t)),
                                     float(net[x_node] - want[x_node])))
    for t in range(T):
        flow = (decisions.l[:, t, :].astype(float) * w[:, t][:, None]).sum(axis=0)
        for e_id in np.nonzero(flow > caps + tol)[0]:
            out.append(Violation("eq17", (("e", int(e_id)), ("t", t)),
                                 float(flow[e_id] - caps[e_id])))
    return ValidationReport(out)
