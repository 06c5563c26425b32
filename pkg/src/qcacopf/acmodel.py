"""Lifted rectangular AC network model and Newton-Raphson power flow.

The grid physics live in five variable families per operating state: complex
nodal voltages split into real/imaginary parts, their lifted products
(``c_ii = |v_i|^2``, ``c_ij = Re(v_i* v_j)``, ``s_ij = Im(v_i* v_j)``),
directed branch flows, and generator injections. Branch flows are affine in
the lifted variables; every nonconvexity of AC optimal power flow is confined
to the three lifting identities.

This module evaluates residuals of each constraint family against a
:class:`~qcacopf.netparse.Network`, evaluates the production-cost objective,
and solves the AC power flow by polar Newton-Raphson with a sparse Jacobian to
produce exactly-lifted states for use as convexification anchors and
feasibility certificates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .netparse import Network

__all__ = [
    "BranchCoefficients",
    "branch_coefficients",
    "LiftedState",
    "BasePoint",
    "Dispatch",
    "ResidualReport",
    "objective",
    "flow_residuals",
    "balance_residuals",
    "lifting_residuals",
    "bound_violations",
    "residual_report",
    "PowerFlowError",
    "newton_power_flow",
    "default_dispatch",
    "state_to_json",
    "state_from_json",
]


@dataclass(frozen=True)
class BranchCoefficients:
    """Per-branch linear coefficients of the four directed flows.

    p_from = g_ff * c_ii + pc_f * c_ij + ps_f * s_ij
    q_from = b_ff * c_ii + qc_f * c_ij + qs_f * s_ij
    p_to   = g_tt * c_jj + pc_t * c_ij + ps_t * s_ij
    q_to   = b_tt * c_jj + qc_t * c_ij + qs_t * s_ij

    All arrays have one entry per branch. Tap and phase shift enter through
    the complex-tap rotation; at zero shift the coefficients reduce to the
    familiar tap-scaled conductance/susceptance ratios.
    """

    fbus: np.ndarray  # from-bus positions
    tbus: np.ndarray  # to-bus positions
    g_ff: np.ndarray
    b_ff: np.ndarray
    g_tt: np.ndarray
    b_tt: np.ndarray
    pc_f: np.ndarray
    ps_f: np.ndarray
    qc_f: np.ndarray
    qs_f: np.ndarray
    pc_t: np.ndarray
    ps_t: np.ndarray
    qc_t: np.ndarray
    qs_t: np.ndarray


@lru_cache(maxsize=128)
def branch_coefficients(net: Network) -> BranchCoefficients:
    """Assemble directed-flow coefficients for every in-service branch (cached)."""
    idx = net.bus_index()
    m = net.n_branch
    fbus = np.fromiter((idx[e.from_bus] for e in net.branches), int, m)
    tbus = np.fromiter((idx[e.to_bus] for e in net.branches), int, m)
    G = np.array([e.G for e in net.branches])
    B = np.array([e.B for e in net.branches])
    bc = np.array([e.B_charge for e in net.branches])
    T = np.array([e.tap for e in net.branches])
    cs = np.cos(np.array([e.shift for e in net.branches]))
    sn = np.sin(np.array([e.shift for e in net.branches]))

    # Rotation-aware mixing terms; at zero shift A=A'=G/T and C=-C'=B/T.
    A_f = (G * cs - B * sn) / T
    C_f = (G * sn + B * cs) / T
    A_t = (G * cs + B * sn) / T
    C_t = (G * sn - B * cs) / T

    return BranchCoefficients(
        fbus=fbus,
        tbus=tbus,
        g_ff=G / T**2,
        b_ff=-(B + bc / 2.0) / T**2,
        g_tt=G.copy(),
        b_tt=-(B + bc / 2.0),
        pc_f=-A_f,
        ps_f=C_f,
        qc_f=C_f,
        qs_f=A_f,
        pc_t=-A_t,
        ps_t=C_t,
        qc_t=-C_t,
        qs_t=-A_t,
    )


@dataclass
class LiftedState:
    """One operating point in lifted rectangular coordinates (all p.u.)."""

    v_re: np.ndarray
    v_im: np.ndarray
    c_ii: np.ndarray
    c_ij: np.ndarray
    s_ij: np.ndarray
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray

    def check_dims(self, net: Network) -> None:
        n, m, ng = net.n_bus, net.n_branch, net.n_gen
        for name, arr, size in (
            ("v_re", self.v_re, n),
            ("v_im", self.v_im, n),
            ("c_ii", self.c_ii, n),
            ("c_ij", self.c_ij, m),
            ("s_ij", self.s_ij, m),
            ("p_from", self.p_from, m),
            ("q_from", self.q_from, m),
            ("p_to", self.p_to, m),
            ("q_to", self.q_to, m),
            ("p_g", self.p_g, ng),
            ("q_g", self.q_g, ng),
        ):
            if len(arr) != size:
                raise ValueError(f"{name} has length {len(arr)}, expected {size}")


@dataclass(frozen=True)
class BasePoint:
    """Nodal voltage anchor for convexification (rectangular parts, p.u.)."""

    v_re: np.ndarray
    v_im: np.ndarray

    def __post_init__(self):
        vr, vi = np.asarray(self.v_re, float), np.asarray(self.v_im, float)
        object.__setattr__(self, "v_re", vr)
        object.__setattr__(self, "v_im", vi)
        if not (np.all(np.isfinite(vr)) and np.all(np.isfinite(vi))):
            raise ValueError("base point contains non-finite voltages")
        mag = np.hypot(vr, vi)
        if np.any(mag < 1e-3):
            k = int(np.argmin(mag))
            raise ValueError(
                f"base-point voltage magnitude {mag[k]:.2e} at bus position {k} is "
                "degenerate; tangents would be near-vertical"
            )

    @staticmethod
    def flat(net: Network) -> "BasePoint":
        return BasePoint(np.ones(net.n_bus), np.zeros(net.n_bus))


@dataclass(frozen=True)
class Dispatch:
    """Fixed injections for a power-flow solve: per-gen P (p.u.) and |V| setpoints."""

    p_g: np.ndarray
    v_set: np.ndarray


def default_dispatch(net: Network) -> Dispatch:
    """Dispatch recorded in the case file (PG and VG columns)."""
    return Dispatch(
        p_g=np.array([g.Pg for g in net.gens]),
        v_set=np.array([g.Vg for g in net.gens]),
    )


def lifted_from_voltages(
    net: Network, v_re, v_im, p_g=None, q_g=None, coef: BranchCoefficients | None = None
) -> LiftedState:
    """Exactly-lifted state from rectangular voltages; flows from the branch model."""
    coef = coef or branch_coefficients(net)
    v_re = np.asarray(v_re, float)
    v_im = np.asarray(v_im, float)
    c_ii = v_re**2 + v_im**2
    vrf, vif = v_re[coef.fbus], v_im[coef.fbus]
    vrt, vit = v_re[coef.tbus], v_im[coef.tbus]
    c_ij = vrf * vrt + vif * vit
    s_ij = vrf * vit - vrt * vif
    return LiftedState(
        v_re=v_re,
        v_im=v_im,
        c_ii=c_ii,
        c_ij=c_ij,
        s_ij=s_ij,
        p_from=coef.g_ff * c_ii[coef.fbus] + coef.pc_f * c_ij + coef.ps_f * s_ij,
        q_from=coef.b_ff * c_ii[coef.fbus] + coef.qc_f * c_ij + coef.qs_f * s_ij,
        p_to=coef.g_tt * c_ii[coef.tbus] + coef.pc_t * c_ij + coef.ps_t * s_ij,
        q_to=coef.b_tt * c_ii[coef.tbus] + coef.qc_t * c_ij + coef.qs_t * s_ij,
        p_g=np.zeros(net.n_gen) if p_g is None else np.asarray(p_g, float),
        q_g=np.zeros(net.n_gen) if q_g is None else np.asarray(q_g, float),
    )


def objective(net: Network, x: LiftedState) -> float:
    """Total production cost in $/h; quadratic cost polynomials act on MW."""
    x.check_dims(net)
    total = 0.0
    for g, p in zip(net.gens, x.p_g):
        mw = p * net.base_mva
        c2, c1, c0 = g.cost
        total += c2 * mw * mw + c1 * mw + c0
    return total


def flow_residuals(net: Network, x: LiftedState, coef: BranchCoefficients | None = None):
    """Residuals of the four directed-flow definitions, one array per family."""
    coef = coef or branch_coefficients(net)
    cf, ct = x.c_ii[coef.fbus], x.c_ii[coef.tbus]
    return {
        "flow-pf": x.p_from - (coef.g_ff * cf + coef.pc_f * x.c_ij + coef.ps_f * x.s_ij),
        "flow-qf": x.q_from - (coef.b_ff * cf + coef.qc_f * x.c_ij + coef.qs_f * x.s_ij),
        "flow-pt": x.p_to - (coef.g_tt * ct + coef.pc_t * x.c_ij + coef.ps_t * x.s_ij),
        "flow-qt": x.q_to - (coef.b_tt * ct + coef.qc_t * x.c_ij + coef.qs_t * x.s_ij),
    }


def balance_residuals(net: Network, x: LiftedState, coef: BranchCoefficients | None = None):
    """Per-bus active/reactive mismatch (generation - demand - shunt - line flows)."""
    coef = coef or branch_coefficients(net)
    idx = net.bus_index()
    n = net.n_bus
    dp = np.zeros(n)
    dq = np.zeros(n)
    for g, p, q in zip(net.gens, x.p_g, x.q_g):
        k = idx[g.bus]
        dp[k] += p
        dq[k] += q
    for k, b in enumerate(net.buses):
        dp[k] -= b.Pd + b.G_sh * x.c_ii[k]
        dq[k] -= b.Qd - b.B_sh * x.c_ii[k]
    np.subtract.at(dp, coef.fbus, x.p_from)
    np.subtract.at(dp, coef.tbus, x.p_to)
    np.subtract.at(dq, coef.fbus, x.q_from)
    np.subtract.at(dq, coef.tbus, x.q_to)
    return dp, dq


def lifting_residuals(net: Network, x: LiftedState):
    """Residuals of the three lifting identities tying products to voltages."""
    coef = branch_coefficients(net)
    vrf, vif = x.v_re[coef.fbus], x.v_im[coef.fbus]
    vrt, vit = x.v_re[coef.tbus], x.v_im[coef.tbus]
    return {
        "lift-cii": x.c_ii - (x.v_re**2 + x.v_im**2),
        "lift-cij": x.c_ij - (vrf * vrt + vif * vit),
        "lift-sij": x.s_ij - (vrf * vit - vrt * vif),
    }


def bound_violations(net: Network, x: LiftedState):
    """Nonnegative violations of voltage, generator, and thermal limits."""
    vmin = np.array([b.Vmin for b in net.buses])
    vmax = np.array([b.Vmax for b in net.buses])
    smax = np.array([e.S_max for e in net.branches])
    pmin = np.array([g.Pmin for g in net.gens])
    pmax = np.array([g.Pmax for g in net.gens])
    qmin = np.array([g.Qmin for g in net.gens])
    qmax = np.array([g.Qmax for g in net.gens])
    lim = np.where(smax > 0, smax**2, np.inf)
    out = {
        "bound-v": np.maximum(0, x.c_ii - vmax**2) + np.maximum(0, vmin**2 - x.c_ii),
        "bound-pg": np.maximum(0, x.p_g - pmax) + np.maximum(0, pmin - x.p_g),
        "bound-qg": np.maximum(0, x.q_g - qmax) + np.maximum(0, qmin - x.q_g),
        "thermal-from": np.maximum(0, x.p_from**2 + x.q_from**2 - lim),
        "thermal-to": np.maximum(0, x.p_to**2 + x.q_to**2 - lim),
    }
    return out


@dataclass
class ResidualReport:
    """Max/mean absolute residual per constraint family."""

    families: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max((v[0] for v in self.families.values()), default=0.0)

    def to_json(self) -> str:
        return json.dumps(
            {k: {"max": v[0], "mean": v[1]} for k, v in self.families.items()}, indent=1
        )


def residual_report(net: Network, x: LiftedState) -> ResidualReport:
    """Evaluate every constraint family of the lifted formulation."""
    rep = ResidualReport()
    fam: dict[str, np.ndarray] = {}
    fam.update(flow_residuals(net, x))
    dp, dq = balance_residuals(net, x)
    fam["balance-p"] = dp
    fam["balance-q"] = dq
    fam.update(lifting_residuals(net, x))
    fam.update(bound_violations(net, x))
    for k, arr in fam.items():
        a = np.abs(np.asarray(arr, float))
        rep.families[k] = (float(a.max()) if a.size else 0.0, float(a.mean()) if a.size else 0.0)
    return rep


class PowerFlowError(RuntimeError):
    """Newton-Raphson failure; carries the last mismatch for diagnostics."""

    def __init__(self, message: str, mismatch: float | None = None):
        self.mismatch = mismatch
        super().__init__(message)


@lru_cache(maxsize=128)
def _ybus(net: Network) -> sp.csr_matrix:
    idx = net.bus_index()
    n = net.n_bus
    rows, cols, vals = [], [], []
    for e in net.branches:
        i, j = idx[e.from_bus], idx[e.to_bus]
        y = complex(e.G, e.B)
        ych = complex(0, e.B_charge / 2.0)
        tap = e.tap * complex(math.cos(e.shift), math.sin(e.shift))
        yff = (y + ych) / (e.tap**2)
        yft = -y / np.conj(tap)
        ytf = -y / tap
        ytt = y + ych
        rows += [i, i, j, j]
        cols += [i, j, i, j]
        vals += [yff, yft, ytf, ytt]
    for k, b in enumerate(net.buses):
        rows.append(k)
        cols.append(k)
        vals.append(complex(b.G_sh, b.B_sh))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)


def newton_power_flow(
    net: Network,
    dispatch: Dispatch | None = None,
    start: BasePoint | None = None,
    tol: float = 1e-8,
    max_iter: int = 50,
    enforce_q_limits: bool = False,
) -> LiftedState:
    """Polar Newton-Raphson AC power flow, returned as an exactly-lifted state.

    Generator buses hold their active injection and voltage-magnitude
    setpoints; the reference bus absorbs the active slack. Converged states
    satisfy every lifting, flow, and balance residual below ``tol``. With
    ``enforce_q_limits`` generator buses whose reactive output leaves its box
    are converted to fixed-Q buses at the violated bound and the flow is
    re-solved (standard limit handling, at most five rounds).

    Raises :class:`PowerFlowError` on non-convergence or a singular Jacobian.
    """
    dispatch = dispatch or default_dispatch(net)
    if len(dispatch.p_g) != net.n_gen:
        raise ValueError("dispatch length does not match generator count")
    state = _newton_pf_once(net, dispatch, start, tol, max_iter, {})
    if not enforce_q_limits:
        return state
    idx = net.bus_index()
    fixed_q: dict[int, float] = {}
    for _ in range(5):
        moved = False
        bus_q: dict[int, float] = {}
        bus_lo: dict[int, float] = {}
        bus_hi: dict[int, float] = {}
        for g, q in zip(net.gens, state.q_g):
            b = idx[g.bus]
            bus_q[b] = bus_q.get(b, 0.0) + q
            bus_lo[b] = bus_lo.get(b, 0.0) + g.Qmin
            bus_hi[b] = bus_hi.get(b, 0.0) + g.Qmax
        for b, q in bus_q.items():
            if b == net.ref_bus or b in fixed_q:
                continue
            if q > bus_hi[b] + 1e-9:
                fixed_q[b] = bus_hi[b]
                moved = True
            elif q < bus_lo[b] - 1e-9:
                fixed_q[b] = bus_lo[b]
                moved = True
        if not moved:
            return state
        state = _newton_pf_once(
            net, dispatch, BasePoint(state.v_re, state.v_im), tol, max_iter, fixed_q
        )
    return state


def _newton_pf_once(
    net: Network,
    dispatch: Dispatch,
    start: BasePoint | None,
    tol: float,
    max_iter: int,
    fixed_q: dict[int, float],
) -> LiftedState:
    """One Newton solve; ``fixed_q`` buses hold total generator Q, not |V|."""
    idx = net.bus_index()
    n = net.n_bus
    ref = net.ref_bus

    # Bus-level fixed injections and voltage setpoints.
    pset = np.array([-b.Pd for b in net.buses])
    qset = np.array([-b.Qd for b in net.buses])
    vset = np.ones(n)
    is_pv = np.zeros(n, bool)
    for g, p, v in zip(net.gens, dispatch.p_g, dispatch.v_set):
        k = idx[g.bus]
        pset[k] += p
        vset[k] = v
        is_pv[k] = True
    for b, q in fixed_q.items():
        qset[b] += q
        is_pv[b] = False
    is_pv[ref] = False
    pv = np.flatnonzero(is_pv)
    pq = np.flatnonzero(~is_pv & (np.arange(n) != ref))
    has_v_target = is_pv.copy()
    has_v_target[ref] = any(idx[g.bus] == ref for g in net.gens)

    Y = _ybus(net)
    if start is not None:
        vm = np.hypot(start.v_re, start.v_im)
        va = np.arctan2(start.v_im, start.v_re)
    else:
        vm = np.ones(n)
        va = np.zeros(n)
    vm[has_v_target] = vset[has_v_target]
    va[ref] = 0.0

    ang_order = np.concatenate((pv, pq))
    npq = len(pq)

    mismatch = np.inf
    for it in range(max_iter + 1):
        V = vm * np.exp(1j * va)
        S = V * np.conj(Y @ V)
        dP = pset - S.real
        dQ = qset - S.imag
        f = np.concatenate((dP[ang_order], dQ[pq]))
        mismatch = float(np.max(np.abs(f))) if f.size else 0.0
        if mismatch < tol:
            return _assemble_pf_state(net, idx, V, S, dispatch, fixed_q)
        if it == max_iter:
            break

        # Standard polar Jacobian blocks from dS/dVa and dS/dVm.
        Ibus = Y @ V
        dS_dVa = 1j * sp.diags(V) @ (sp.diags(Ibus) - Y @ sp.diags(V)).conjugate()
        dS_dVm = (
            sp.diags(V / vm) @ sp.diags(Ibus).conjugate()
            + sp.diags(V) @ (Y @ sp.diags(V / vm)).conjugate()
        )
        J11 = dS_dVa.real.tocsr()[ang_order][:, ang_order]
        J12 = dS_dVm.real.tocsr()[ang_order][:, pq]
        J21 = dS_dVa.imag.tocsr()[pq][:, ang_order]
        J22 = dS_dVm.imag.tocsr()[pq][:, pq]
        J = sp.bmat([[J11, J12], [J21, J22]], format="csc")
        try:
            dx = splu(J).solve(f)
        except RuntimeError as exc:
            raise PowerFlowError(f"singular Jacobian: {exc}", mismatch) from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("Jacobian solve produced non-finite step", mismatch)
        va[ang_order] += dx[: len(ang_order)]
        if npq:
            vm[pq] += dx[len(ang_order) :]

    raise PowerFlowError(
        f"power flow did not converge in {max_iter} iterations (mismatch {mismatch:.3e})",
        mismatch,
    )


def _assemble_pf_state(net, idx, V, S, dispatch, fixed_q=None) -> LiftedState:
    """Distribute bus injections to generators and lift the solved voltages."""
    ref = net.ref_bus
    pd = np.array([b.Pd for b in net.buses])
    qd = np.array([b.Qd for b in net.buses])
    p_bus = S.real + pd  # generation required at each bus
    q_bus = S.imag + qd

    p_g = dispatch.p_g.astype(float).copy()
    q_g = np.zeros(net.n_gen)
    by_bus: dict[int, list[int]] = {}
    for k, g in enumerate(net.gens):
        by_bus.setdefault(idx[g.bus], []).append(k)

    for bpos, gidx in by_bus.items():
        # Reactive output split proportionally to each unit's Q range; buses
        # held at a reactive bound split that bound the same way.
        spans = np.array([max(net.gens[k].Qmax - net.gens[k].Qmin, 0.0) for k in gidx])
        if spans.sum() > 0:
            w = spans / spans.sum()
        else:
            w = np.full(len(gidx), 1.0 / len(gidx))
        qtot = fixed_q[bpos] if fixed_q and bpos in fixed_q else q_bus[bpos]
        for k, wk in zip(gidx, w):
            q_g[k] = wk * qtot
        if bpos == ref:
            fixed = sum(p_g[k] for k in gidx[1:])
            p_g[gidx[0]] = p_bus[bpos] - fixed
    return lifted_from_voltages(net, V.real, V.imag, p_g=p_g, q_g=q_g)


def state_to_json(net: Network, x: LiftedState) -> str:
    """Flat-array JSON serialization keyed by bus/branch/generator ids."""
    doc = {
        "bus_id": [b.id for b in net.buses],
        "branch": [[e.from_bus, e.to_bus] for e in net.branches],
        "gen_bus": [g.bus for g in net.gens],
        "v_re": x.v_re.tolist(),
        "v_im": x.v_im.tolist(),
        "c_ii": x.c_ii.tolist(),
        "c_ij": x.c_ij.tolist(),
        "s_ij": x.s_ij.tolist(),
        "p_from": x.p_from.tolist(),
        "q_from": x.q_from.tolist(),
        "p_to": x.p_to.tolist(),
        "q_to": x.q_to.tolist(),
        "p_g": x.p_g.tolist(),
        "q_g": x.q_g.tolist(),
    }
    return json.dumps(doc, indent=1)


def state_from_json(text: str) -> LiftedState:
    doc = json.loads(text)
    arr = lambda k: np.array(doc[k], float)
    return LiftedState(
        v_re=arr("v_re"),
        v_im=arr("v_im"),
        c_ii=arr("c_ii"),
        c_ij=arr("c_ij"),
        s_ij=arr("s_ij"),
        p_from=arr("p_from"),
        q_from=arr("q_from"),
        p_to=arr("p_to"),
        q_to=arr("q_to"),
        p_g=arr("p_g"),
        q_g=arr("q_g"),
    )
