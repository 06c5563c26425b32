"""Case studies: discrete-shunt reactive dispatch and PV hosting capacity.

The reactive-dispatch study (ORPD) adds switchable shunt banks with integer
step counts. Each bank's ``q = b(n) * c_ii`` product is exactly linearized:
the step count gets a binary expansion and each binary-times-``c_ii`` product
is replaced by its bound-based envelope, which is exact at binary values. The
solution procedure: (1) anchor voltages from a local solve of the continuous
relaxation, (2) best-first branch-and-bound over the shunt binaries with
convexified node relaxations, (3) the discrete decision fixed and the
restricted problem re-solved for an AC-feasible cost. A cone-relaxed
continuous solve supplies a globally valid lower bound.

The hosting study maximizes total PV injection over chosen buses subject to
network limits and no reverse flow into the root substation, comparing the
penalized convex approximation (anchored at a flat voltage profile) against
the cone relaxation and an exact local reference; :func:`penalty_sweep`
traces the slack-versus-capacity frontier over a penalty grid.
"""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .acmodel import (
    BasePoint,
    Dispatch,
    LiftedState,
    PowerFlowError,
    branch_coefficients,
    newton_power_flow,
    objective as cost_of,
    residual_report,
)
from .dcc import (
    ConvexProgram,
    _add_network_core,
    add_qcac_lift_rows,
    add_soc_lift_rows,
    suggested_rho,
)
from .netparse import Bus, Network, SwitchedShunt
from .solver import (
    SeqConfig,
    _operational_violation,
    _violation_sq,
    interior_start,
    sequential_qcac,
    solve_convex,
)

__all__ = [
    "ShuntDecision",
    "OrpdResult",
    "linearize_shunt_product",
    "build_orpd_program",
    "solve_orpd",
    "HostingSetup",
    "HostingResult",
    "solve_hosting",
    "penalty_sweep",
]


# -- switchable-shunt linearization ---------------------------------------------


def shunt_bits(shunt: SwitchedShunt) -> list[int]:
    """Binary weights of the step expansion ``n = sum(bits_j * z_j)``."""
    nbits = max(1, math.ceil(math.log2(shunt.n_max + 1)))
    return [2**j for j in range(nbits)]


def linearize_shunt_product(shunt: SwitchedShunt, c_lo: float, c_hi: float):
    """Exact mixed-integer rows for ``q = b(n) * c_ii`` with discrete steps.

    Returns ``(bits, rows)``: per binary ``z_j`` the four envelope rows of the
    product ``w_j = z_j * c_ii`` over the ``c_ii`` box, each encoded as
    ``{"terms": {var: coef}, "rhs": value}`` meaning ``sum <= rhs`` with vars
    named ``w``, ``z``, ``c``. The envelope admits exactly ``w = z * c`` at
    binary ``z`` for any ``c`` inside the box.
    """
    if not (np.isfinite(c_lo) and np.isfinite(c_hi)) or c_lo > c_hi:
        raise ValueError("c_ii bounds must be finite and ordered")
    if shunt.n_max < 1:
        raise ValueError("n_max must be at least 1")
    bits = shunt_bits(shunt)
    rows = []
    for j in range(len(bits)):
        rows.append(
            [
                {"terms": {"w": 1.0, "z": -c_hi}, "rhs": 0.0},
                {"terms": {"w": -1.0, "z": c_lo}, "rhs": 0.0},
                {"terms": {"w": 1.0, "c": -1.0, "z": c_lo}, "rhs": c_lo},
                {"terms": {"w": -1.0, "c": 1.0, "z": -c_hi}, "rhs": -c_hi},
            ]
        )
    return bits, rows


def build_orpd_program(
    net: Network,
    base: BasePoint | None,
    rho: float,
    mode: str,
    z_bounds: dict[tuple[int, int], tuple[float, float]] | None = None,
):
    """Reactive-dispatch program with switchable banks in lifted variables.

    ``mode`` selects the voltage treatment: ``qcac`` (tangent rows anchored
    at ``base``) or ``soc`` (cone rows). Binary step variables live in groups
    ``z[k]`` relaxed to [0, 1]; ``z_bounds`` pins individual bits during
    branch-and-bound, in which case the pinned product is folded directly
    into the injection row (it is linear once ``z`` is fixed). Returns the
    program and per-shunt bookkeeping.
    """
    if not net.shunts:
        raise ValueError("network carries no switchable shunts")
    z_bounds = z_bounds or {}
    idx = net.bus_index()
    p = ConvexProgram()
    coef = branch_coefficients(net)

    nsh = len(net.shunts)
    q_sh = p.add_group("q_sh", np.full(nsh, -np.inf), np.full(nsh, np.inf))
    q_entries: dict[int, list[tuple[int, float]]] = {}
    bus_pos = [idx[s.bus] for s in net.shunts]
    for k in range(nsh):
        q_entries.setdefault(bus_pos[k], []).append((int(q_sh[k]), 1.0))
    h = _add_network_core(p, net, coef, balance_extra_q=q_entries)

    if mode == "qcac":
        if base is None:
            raise ValueError("qcac mode needs a base point")
        add_qcac_lift_rows(p, h, net, base, rho, slacks_enabled=True)
    elif mode == "soc":
        add_soc_lift_rows(p, h, net)
    else:
        raise ValueError(f"unknown mode {mode}")

    info = {"bus_pos": bus_pos, "free_bits": [], "fixed_steps": []}
    for k, s in enumerate(net.shunts):
        b = bus_pos[k]
        c_lo = net.buses[b].Vmin ** 2
        c_hi = net.buses[b].Vmax ** 2
        bits = shunt_bits(s)
        cii = int(h.c_ii[b])
        step = (s.b_max - s.b_min) / s.n_max

        free = [j for j in range(len(bits))
                if not (k, j) in z_bounds or z_bounds[(k, j)][0] != z_bounds[(k, j)][1]]
        fixed = {j: z_bounds[(k, j)][0] for j in range(len(bits)) if j not in free}
        info["free_bits"].append(free)
        info["fixed_steps"].append(fixed)

        # q_sh row accumulates: fixed bits fold into the c_ii coefficient,
        # free bits go through envelope variables.
        c_coef = -(s.b_min + step * sum(bits[j] * v for j, v in fixed.items()))
        row_idx = [int(q_sh[k]), cii]
        row_coef = [1.0, c_coef]

        if free:
            zlo = np.array([z_bounds.get((k, j), (0.0, 1.0))[0] for j in free])
            zhi = np.array([z_bounds.get((k, j), (0.0, 1.0))[1] for j in free])
            z = p.add_group(f"z[{k}]", zlo, zhi)
            w = p.add_group(f"w[{k}]", np.zeros(len(free)), np.full(len(free), c_hi))
            for pos, j in enumerate(free):
                zj, wj = int(z[pos]), int(w[pos])
                p.add_lin([wj, zj], [1.0, -c_hi], 0.0, "<=", f"shunt-w-hi[{k}.{j}]")
                p.add_lin([wj, zj], [-1.0, c_lo], 0.0, "<=", f"shunt-w-lo[{k}.{j}]")
                p.add_lin([wj, cii, zj], [1.0, -1.0, c_lo], c_lo, "<=", f"shunt-w-c1[{k}.{j}]")
                p.add_lin([wj, cii, zj], [-1.0, 1.0, -c_hi], -c_hi, "<=", f"shunt-w-c2[{k}.{j}]")
                row_idx.append(wj)
                row_coef.append(-step * bits[j])
            # Total step count within range.
            fixed_part = sum(bits[j] * v for j, v in fixed.items())
            p.add_lin(z, [bits[j] for j in free], float(s.n_max) - fixed_part, "<=",
                      f"shunt-steps[{k}]")
        p.add_lin(row_idx, row_coef, 0.0, "==", f"shunt-q[{k}]")
    return p, info


def _orpd_start(prog: ConvexProgram, net: Network, info: dict, hint=None) -> np.ndarray:
    """Interior start that keeps the shunt envelope rows strictly feasible."""
    x = interior_start(prog, net, hint)
    gi = prog.group_indices
    for k, s in enumerate(net.shunts):
        b = info["bus_pos"][k]
        c_val = x[gi("c_ii")[b]]
        bits = shunt_bits(s)
        step = (s.b_max - s.b_min) / s.n_max
        total = s.b_min * c_val + step * sum(
            bits[j] * v for j, v in info["fixed_steps"][k].items()
        ) * c_val
        name = f"z[{k}]"
        if name in prog.group_offset:
            z_idx = gi(name)
            w_idx = gi(f"w[{k}]")
            zs = x[z_idx]
            for pos, j in enumerate(info["free_bits"][k]):
                x[w_idx[pos]] = 0.999 * zs[pos] * c_val
                total += step * bits[j] * x[w_idx[pos]]
        x[gi("q_sh")[k]] = total
    return x


@dataclass
class ShuntDecision:
    """Chosen bank steps with the susceptance and injection they imply."""

    bus: list[int]
    n_sh: np.ndarray
    b_sh: np.ndarray
    q_sh: np.ndarray


def _decision_from_primal(net: Network, primal: dict, info: dict) -> ShuntDecision:
    n_sh, b_sh, q_sh = [], [], []
    for k, s in enumerate(net.shunts):
        bits = shunt_bits(s)
        n = sum(bits[j] * v for j, v in info["fixed_steps"][k].items())
        name = f"z[{k}]"
        if name in primal:
            for pos, j in enumerate(info["free_bits"][k]):
                n += bits[j] * float(primal[name][pos])
        n = min(max(int(round(n)), 0), s.n_max)
        n_sh.append(n)
        b_sh.append(s.b_min + (s.b_max - s.b_min) * n / s.n_max)
        q_sh.append(float(primal["q_sh"][k]))
    return ShuntDecision(
        bus=[s.bus for s in net.shunts],
        n_sh=np.array(n_sh, int),
        b_sh=np.array(b_sh, float),
        q_sh=np.array(q_sh, float),
    )


def _fold_shunts(net: Network, b_sh) -> Network:
    """Network with chosen bank susceptances folded into the fixed shunts."""
    by_bus = {s.bus: b for s, b in zip(net.shunts, b_sh)}
    buses = tuple(
        Bus(b.id, b.btype, b.Pd, b.Qd, b.G_sh, b.B_sh + by_bus.get(b.id, 0.0), b.Vmin, b.Vmax)
        for b in net.buses
    )
    return Network(net.name, net.base_mva, buses, net.branches, net.gens, ())


def _orpd_relaxed_anchor(net_sh: Network, start: LiftedState):
    """Local solve of the continuous relaxation over (p_g, v_set, b_sh)."""
    from scipy.optimize import minimize

    idx = net_sh.bus_index()
    ng = net_sh.n_gen
    gbus = [idx[g.bus] for g in net_sh.gens]
    ns = len(net_sh.shunts)
    lb = np.concatenate([[g.Pmin for g in net_sh.gens],
                         [net_sh.buses[b].Vmin for b in gbus],
                         [s.b_min for s in net_sh.shunts]])
    ub = np.concatenate([[g.Pmax for g in net_sh.gens],
                         [net_sh.buses[b].Vmax for b in gbus],
                         [s.b_max for s in net_sh.shunts]])
    u0 = np.clip(
        np.concatenate([start.p_g, [np.hypot(start.v_re[b], start.v_im[b]) for b in gbus],
                        np.zeros(ns)]),
        lb, ub,
    )
    base = BasePoint(start.v_re, start.v_im)

    def run(u):
        folded = _fold_shunts(net_sh, u[2 * ng:])
        try:
            st = newton_power_flow(folded, Dispatch(u[:ng], u[ng:2 * ng]), start=base, tol=1e-11)
        except (PowerFlowError, ValueError):
            return None, None
        return folded, st

    def score(u, pen):
        folded, st = run(u)
        if st is None:
            return 1e12
        return cost_of(folded, st) + pen * _violation_sq(folded, st)

    pen = 30.0 * max(suggested_rho(net_sh) / 2.0, 1.0)
    u = u0
    result = (start, np.zeros(ns))
    for _ in range(3):
        out = minimize(
            score, u, args=(pen,), method="L-BFGS-B", bounds=list(zip(lb, ub)),
            options={"maxiter": 70, "maxfun": 1800, "ftol": 1e-14, "gtol": 1e-9, "eps": 1e-5},
        )
        u = np.clip(out.x, lb, ub)
        folded, st = run(u)
        if st is None:
            break
        result = (st, u[2 * ng:])
        if _operational_violation(folded, st) < 1e-8:
            break
        pen *= 30.0
    return result


def _branch_and_bound(net_sh, base, rho, mode, node_limit, settings=None):
    """Best-first search over shunt bits.

    Returns ``(primal, info, objective, nodes, limit_hit)`` for the best
    integer-feasible node (objective includes any slack penalty).
    """
    nsh = len(net_sh.shunts)
    allbits = [shunt_bits(s) for s in net_sh.shunts]

    def solve_node(bounds):
        prog, info = build_orpd_program(net_sh, base, rho, mode, z_bounds=bounds)
        res = solve_convex(prog, _orpd_start(prog, net_sh, info), settings)
        return info, res

    counter = 0
    heap: list = []
    incumbent = (np.inf, None, None)
    nodes = 0
    limit_hit = False
    info0, root = solve_node({})
    if root.status not in ("optimal", "iteration-limit") or root.primal is None:
        raise RuntimeError(f"root relaxation failed: {root.status} {root.message}")
    heapq.heappush(heap, (root.objective, counter, {}, root.primal, info0))
    while heap:
        lb_obj, _, bounds, primal, info = heapq.heappop(heap)
        nodes += 1
        if nodes > node_limit:
            limit_hit = True
            break
        if lb_obj >= incumbent[0] - 1e-9 * (1 + abs(incumbent[0])):
            continue
        worst = (None, 0.0)
        for k in range(nsh):
            name = f"z[{k}]"
            if name not in primal:
                continue
            for pos, j in enumerate(info["free_bits"][k]):
                frac = abs(primal[name][pos] - round(primal[name][pos]))
                if frac > worst[1]:
                    worst = ((k, j), frac)
        if worst[0] is None or worst[1] < 1e-6:
            if lb_obj < incumbent[0]:
                incumbent = (lb_obj, primal, info)
            continue
        for val in (0.0, 1.0):
            child = dict(bounds)
            child[worst[0]] = (val, val)
            cinfo, res = solve_node(child)
            if res.status == "infeasible" or res.primal is None:
                continue
            if res.objective < incumbent[0] - 1e-9 * (1 + abs(incumbent[0])):
                counter += 1
                heapq.heappush(heap, (res.objective, counter, child, res.primal, cinfo))
    if incumbent[1] is None:
        raise RuntimeError("branch and bound found no integer-feasible point")
    return incumbent[1], incumbent[2], incumbent[0], nodes, limit_hit


@dataclass
class OrpdResult:
    mode: str
    cost: float
    baseline_cost: float
    savings_pct: float
    lower_bound: float
    mip_objective: float
    decision: ShuntDecision
    state: LiftedState
    feasible_resid: float
    nodes_explored: int
    node_limit_hit: bool
    runtime_s: float

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "cost": self.cost,
            "baseline_cost": self.baseline_cost,
            "savings_pct": self.savings_pct,
            "lower_bound": self.lower_bound,
            "shunt_bus": self.decision.bus,
            "shunt_steps": self.decision.n_sh.tolist(),
            "shunt_b": self.decision.b_sh.tolist(),
            "nodes_explored": self.nodes_explored,
            "node_limit_hit": self.node_limit_hit,
            "feasible_resid": self.feasible_resid,
            "runtime_s": self.runtime_s,
        }


def solve_orpd(
    net: Network,
    shunts,
    mode: str = "qcac",
    rho: float | None = None,
    node_limit: int = 400,
    cfg: SeqConfig | None = None,
) -> OrpdResult:
    """Three-step reactive-dispatch solve with discrete banks.

    ``net`` is the plain network; switchable banks replace the fixed shunt at
    their bus. Modes: ``qcac-mip``/``qcac``, ``soc-mip``/``soc`` for the
    mixed-integer step's voltage treatment, or ``continuous-relaxation``.
    """
    mode = {"qcac-mip": "qcac", "soc-mip": "soc"}.get(mode, mode)
    wall = time.perf_counter()
    baseline = sequential_qcac(net, _newton_base(net), cfg=cfg)
    baseline_cost = cost_of(net, baseline.state)
    empty = ShuntDecision([], np.zeros(0, int), np.zeros(0), np.zeros(0))
    if not shunts:
        return OrpdResult(
            mode=mode, cost=baseline_cost, baseline_cost=baseline_cost, savings_pct=0.0,
            lower_bound=-np.inf, mip_objective=baseline_cost, decision=empty,
            state=baseline.state,
            feasible_resid=residual_report(net, baseline.state).worst,
            nodes_explored=0, node_limit_hit=False, runtime_s=time.perf_counter() - wall,
        )

    net_sh = net.with_shunts(shunts)
    rho = rho if rho is not None else suggested_rho(net_sh)

    anchor_state, b_relax = _orpd_relaxed_anchor(net_sh, baseline.state)
    base = BasePoint(anchor_state.v_re, anchor_state.v_im)
    lower = _orpd_soc_bound(net_sh)
    if mode == "continuous-relaxation":
        relax_cost = cost_of(net_sh, anchor_state)
        return OrpdResult(
            mode=mode, cost=relax_cost, baseline_cost=baseline_cost,
            savings_pct=100.0 * (baseline_cost - relax_cost) / baseline_cost,
            lower_bound=lower, mip_objective=relax_cost,
            decision=ShuntDecision([s.bus for s in net_sh.shunts],
                                   np.full(len(net_sh.shunts), -1, int),
                                   np.asarray(b_relax, float),
                                   np.zeros(len(net_sh.shunts))),
            state=anchor_state,
            feasible_resid=residual_report(net_sh, anchor_state).worst,
            nodes_explored=0, node_limit_hit=False, runtime_s=time.perf_counter() - wall,
        )

    primal, info, mip_obj, nodes, limit_hit = _branch_and_bound(
        net_sh, base if mode == "qcac" else None, rho, mode, node_limit
    )
    decision = _decision_from_primal(net_sh, primal, info)

    net_fixed = _fold_shunts(net_sh, decision.b_sh)
    restricted = sequential_qcac(net_fixed, base, cfg=cfg)
    cost = cost_of(net_fixed, restricted.state)
    rep = residual_report(net_fixed, restricted.state)
    pos = [net_fixed.bus_index()[b] for b in decision.bus]
    decision.q_sh = decision.b_sh * restricted.state.c_ii[pos]
    return OrpdResult(
        mode=mode, cost=cost, baseline_cost=baseline_cost,
        savings_pct=100.0 * (baseline_cost - cost) / baseline_cost,
        lower_bound=lower, mip_objective=mip_obj, decision=decision,
        state=restricted.state, feasible_resid=rep.worst,
        nodes_explored=nodes, node_limit_hit=limit_hit,
        runtime_s=time.perf_counter() - wall,
    )


def _orpd_soc_bound(net_sh: Network) -> float:
    """Globally valid lower bound: cone-relaxed continuous problem."""
    prog, info = build_orpd_program(net_sh, None, 0.0, "soc")
    res = solve_convex(prog, _orpd_start(prog, net_sh, info))
    return res.objective if res.primal is not None else -np.inf


def _newton_base(net: Network) -> BasePoint:
    st = newton_power_flow(net)
    return BasePoint(st.v_re, st.v_im)


# -- PV hosting capacity -------------------------------------------------------


@dataclass(frozen=True)
class HostingSetup:
    """Study configuration: candidate buses and the per-bus cap in MW."""

    pv_buses: tuple[int, ...]
    pv_max_mw: float

    @staticmethod
    def from_json(text: str):
        doc = json.loads(text)
        setup = HostingSetup(tuple(int(b) for b in doc["pv_buses"]), float(doc["pv_max_mw"]))
        grid = [float(r) for r in doc.get("rho_grid", [1.0, 10.0, 100.0, 1000.0])]
        return setup, grid


@dataclass
class HostingResult:
    model: str
    rho: float | None
    total_pv_mw: float
    max_slack: float
    cost_error_pct: float | None
    speedup: float | None
    runtime_s: float
    status: str

    def __post_init__(self):
        if self.total_pv_mw < -1e-9:
            raise ValueError("hosting capacity cannot be negative")

    def summary(self) -> dict:
        return {
            "model": self.model,
            "rho": self.rho,
            "total_pv_mw": self.total_pv_mw,
            "max_slack": self.max_slack,
            "cost_error_pct": self.cost_error_pct,
            "speedup": self.speedup,
            "runtime_s": self.runtime_s,
            "status": self.status,
        }


def build_hosting_program(
    net: Network, setup: HostingSetup, mode: str, base: BasePoint | None, rho: float
) -> ConvexProgram:
    """Hosting model: extra PV injections, no reverse flow at the root."""
    idx = net.bus_index()
    pv_pos = [idx[b] for b in setup.pv_buses]
    cap = setup.pv_max_mw / net.base_mva
    p = ConvexProgram()
    coef = branch_coefficients(net)
    p_pv = p.add_group("p_pv", np.zeros(len(pv_pos)), np.full(len(pv_pos), cap))
    extra_p = {pos: [(int(p_pv[k]), 1.0)] for k, pos in enumerate(pv_pos)}
    h = _add_network_core(p, net, coef, include_voltage=(mode != "soc"),
                          balance_extra_p=extra_p)
    ref = net.ref_bus
    for k, g in enumerate(net.gens):
        if idx[g.bus] == ref:
            p.lb[h.p_g[k]] = max(p.lb[h.p_g[k]], 0.0)
    if mode == "qcac":
        if base is None:
            raise ValueError("qcac mode needs a base point")
        add_qcac_lift_rows(p, h, net, base, rho, slacks_enabled=True)
    elif mode == "soc":
        add_soc_lift_rows(p, h, net)
    else:
        raise ValueError(f"unknown hosting mode {mode}")
    p.set_objective([], [], p_pv, np.full(len(pv_pos), -1.0))
    if p.slacks is not None and rho > 0:
        for grp in (p.slacks.node, p.slacks.branch_c, p.slacks.branch_s):
            if grp is not None and len(grp):
                p.add_objective_lin(grp, np.full(len(grp), rho))
    return p


def hosting_reference(net: Network, setup: HostingSetup):
    """Exact local reference: descent over PV injections with power flows.

    Returns ``(total MW, state, runtime seconds)``.
    """
    from scipy.optimize import minimize

    wall = time.perf_counter()
    idx = net.bus_index()
    pv_pos = [idx[b] for b in setup.pv_buses]
    cap = setup.pv_max_mw / net.base_mva
    gbus = [idx[g.bus] for g in net.gens]
    ref = net.ref_bus
    npv = len(pv_pos)

    st0 = newton_power_flow(net)
    base = BasePoint(st0.v_re, st0.v_im)
    lb = np.concatenate([np.zeros(npv), [net.buses[b].Vmin for b in gbus]])
    ub = np.concatenate([np.full(npv, cap), [net.buses[b].Vmax for b in gbus]])
    u0 = np.clip(np.concatenate([np.zeros(npv),
                                 [np.hypot(st0.v_re[b], st0.v_im[b]) for b in gbus]]), lb, ub)
    pd0 = np.array([b.Pd for b in net.buses])
    qd0 = np.array([b.Qd for b in net.buses])
    pg0 = np.array([g.Pg for g in net.gens])

    def realize(u):
        pd = pd0.copy()
        for k, pos in enumerate(pv_pos):
            pd[pos] -= u[k]
        folded = net.with_loads(pd, qd0)
        try:
            st = newton_power_flow(folded, Dispatch(pg0, u[npv:]), start=base, tol=1e-11)
        except (PowerFlowError, ValueError):
            return None, None
        return folded, st

    def reverse_at_root(st):
        return max(
            (max(0.0, -st.p_g[k]) for k, g in enumerate(net.gens) if idx[g.bus] == ref),
            default=0.0,
        )

    def score(u, pen):
        folded, st = realize(u)
        if st is None:
            return 1e12
        return (
            -float(np.sum(u[:npv]))
            + pen * (_violation_sq(folded, st) + reverse_at_root(st) ** 2)
        )

    pen = 100.0
    u = u0
    total = 0.0
    state = st0
    for _ in range(4):
        out = minimize(
            score, u, args=(pen,), method="L-BFGS-B", bounds=list(zip(lb, ub)),
            options={"maxiter": 80, "maxfun": 2000, "ftol": 1e-14, "gtol": 1e-10, "eps": 1e-6},
        )
        u = np.clip(out.x, lb, ub)
        folded, st = realize(u)
        if st is None:
            break
        total = float(np.sum(u[:npv]))
        state = st
        if max(_operational_violation(folded, st), reverse_at_root(st)) < 1e-8:
            break
        pen *= 30.0
    return total * net.base_mva, state, time.perf_counter() - wall


def solve_hosting(
    net: Network,
    setup: HostingSetup,
    model: str,
    rho: float = 100.0,
    reference_mw: float | None = None,
    reference_s: float | None = None,
) -> HostingResult:
    """Hosting capacity under one power-flow treatment.

    ``nonconvex-seq`` computes the exact local reference; ``soc`` and
    ``qcac`` solve the corresponding convex program (the approximation
    anchored at a flat voltage profile, per the study protocol).
    """
    wall = time.perf_counter()
    if model == "nonconvex-seq":
        total, _state, dt = hosting_reference(net, setup)
        return HostingResult(model=model, rho=None, total_pv_mw=total, max_slack=0.0,
                             cost_error_pct=0.0, speedup=1.0, runtime_s=dt, status="optimal")
    if model == "soc":
        prog = build_hosting_program(net, setup, "soc", None, 0.0)
    elif model == "qcac":
        if rho <= 0:
            raise ValueError("rho must be positive for the qcac hosting model")
        prog = build_hosting_program(net, setup, "qcac", BasePoint.flat(net), rho)
    else:
        raise ValueError(f"unknown hosting model {model}")
    res = solve_convex(prog, interior_start(prog, net))
    dt = time.perf_counter() - wall
    if res.primal is None or res.status not in ("optimal", "iteration-limit"):
        return HostingResult(model=model, rho=rho if model == "qcac" else None,
                             total_pv_mw=0.0, max_slack=np.inf, cost_error_pct=None,
                             speedup=None, runtime_s=dt, status=res.status)
    total = float(np.sum(res.primal["p_pv"])) * net.base_mva
    max_slack = 0.0
    for g in ("xi_c_node", "xi_c_branch", "xi_s_branch"):
        if g in res.primal and len(res.primal[g]):
            max_slack = max(max_slack, float(res.primal[g].max()))
    err = None
    speedup = None
    if reference_mw is not None and reference_mw > 0:
        err = 100.0 * abs(total - reference_mw) / reference_mw
    if reference_s is not None and dt > 0:
        speedup = reference_s / dt
    return HostingResult(model=model, rho=rho if model == "qcac" else None,
                         total_pv_mw=total, max_slack=max_slack, cost_error_pct=err,
                         speedup=speedup, runtime_s=dt, status=res.status)


def penalty_sweep(net: Network, setup: HostingSetup, rho_grid) -> list[HostingResult]:
    """One hosting solve per penalty value; per-point failures are recorded."""
    rho_grid = list(rho_grid)
    if not rho_grid or any(r <= 0 for r in rho_grid):
        raise ValueError("rho grid must be nonempty and positive")
    ref_mw, _, ref_s = hosting_reference(net, setup)
    out = []
    for rho in rho_grid:
        try:
            out.append(solve_hosting(net, setup, "qcac", rho=rho,
                                     reference_mw=ref_mw, reference_s=ref_s))
        except Exception as exc:  # record the failure, keep sweeping
            out.append(HostingResult(model="qcac", rho=rho, total_pv_mw=0.0,
                                     max_slack=np.inf, cost_error_pct=None,
                                     speedup=None, runtime_s=0.0, status=f"error: {exc}"))
    return out
