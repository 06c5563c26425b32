"""Embedded convex solver and the sequential convexification driver.

:func:`solve_convex` is a primal log-barrier interior-point method for the
:class:`~qcacopf.dcc.ConvexProgram` class (linear rows, convex quadratic rows
as sums of affine squares, rotated-cone rows) with linear equalities handled
by infeasible-start Newton steps on a sparse KKT system. It is deterministic:
identical programs and settings produce identical iterates.

:func:`sequential_qcac` re-anchors the convex approximation at each solution's
voltages until the constraint slacks vanish, yielding locally optimal AC
states from convex solves only; :func:`project_dispatch` runs the same loop
with a least-squares dispatch objective to find the nearest AC-feasible
dispatch to a target. Like any local method, the projection returns a feasible
nearby point, not a certified closest one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .acmodel import (
    BasePoint,
    Dispatch,
    LiftedState,
    PowerFlowError,
    branch_coefficients,
    lifted_from_voltages,
    newton_power_flow,
    residual_report,
)
from .dcc import ConvexProgram, build_qcac, state_from_primal
from .netparse import Network

__all__ = [
    "SolverSettings",
    "SolveResult",
    "SolveError",
    "solve_convex",
    "interior_start",
    "SeqConfig",
    "TracePoint",
    "SeqResult",
    "sequential_qcac",
    "project_dispatch",
    "trace_to_csv",
]


@dataclass(frozen=True)
class SolverSettings:
    """Barrier-method tolerances; defaults sit well below model tolerances.

    Gap tolerances apply to the internally normalized objective (coefficients
    scaled to O(1)), so they behave like relative tolerances on problems with
    large cost or penalty coefficients.
    """

    gap_abs: float = 1e-8
    gap_rel: float = 1e-8
    mu: float = 20.0
    max_stages: int = 90
    max_newton: int = 60
    feas_tol: float = 1e-6  # post-solve constraint recheck


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | iteration-limit | numerical-failure
    primal: dict[str, np.ndarray] | None
    objective: float
    solve_time: float
    iterations: int
    message: str = ""
    gap: float = float("nan")  # certified optimality gap: objective - gap <= optimum


class SolveError(RuntimeError):
    pass


# -- compilation ---------------------------------------------------------------


class _Compiled:
    """Program lowered to flat arrays over free variables only."""

    def __init__(self, prog: ConvexProgram):
        self.prog = prog
        n = prog.n_var
        fixed = prog.lb == prog.ub
        self.fixed_vals = np.where(fixed, prog.lb, 0.0)
        self.free = np.flatnonzero(~fixed)
        self.nv = len(self.free)
        self.old2new = np.full(n, -1, int)
        self.old2new[self.free] = np.arange(self.nv)
        self.lb = prog.lb[self.free]
        self.ub = prog.ub[self.free]

        def remap(idx, coef, const=0.0):
            idx = np.asarray(idx, int)
            coef = np.asarray(coef, float)
            on = self.old2new[idx]
            keep = on >= 0
            const = const + float(coef[~keep] @ self.fixed_vals[idx[~keep]])
            return on[keep], coef[keep], const

        # Objective, normalized so coefficients are O(1).
        pdiag = np.zeros(self.nv)
        c = np.zeros(self.nv)
        const = prog.obj_const
        for i, q in zip(prog.obj_quad_idx, prog.obj_quad_coef):
            j = self.old2new[i]
            if j >= 0:
                pdiag[j] += 2.0 * q  # x'Px/2 convention
            else:
                const += q * self.fixed_vals[i] ** 2
        for i, l in zip(prog.obj_lin_idx, prog.obj_lin_coef):
            j = self.old2new[i]
            if j >= 0:
                c[j] += l
            else:
                const += l * self.fixed_vals[i]
        self.obj_scale = max(1.0, np.abs(c).max(initial=0.0), pdiag.max(initial=0.0))
        self.P = sp.diags(pdiag / self.obj_scale, format="csr")
        self.c = c / self.obj_scale
        self.obj_const = const

        # Equalities and linear inequalities (variable bounds become rows).
        eq_r, eq_c, eq_v, beq = [], [], [], []
        in_r, in_c, in_v, bin_ = [], [], [], []

        def add_row(rows, cols, vals, rhs_list, idx, coef, rhs):
            r = len(rhs_list)
            rows.extend([r] * len(idx))
            cols.extend(idx.tolist())
            vals.extend(coef.tolist())
            rhs_list.append(rhs)

        self.infeasible_row: str | None = None
        for row in prog.lin_rows:
            idx, coef, shift = remap(row.idx, row.coef)
            rhs = row.rhs - shift
            if len(idx) == 0:
                bad = abs(rhs) > 1e-7 if row.sense == "==" else rhs < -1e-7
                if bad:
                    self.infeasible_row = row.tag
                continue
            if row.sense == "==":
                add_row(eq_r, eq_c, eq_v, beq, idx, coef, rhs)
            else:
                add_row(in_r, in_c, in_v, bin_, idx, coef, rhs)
        for k in range(self.nv):
            if np.isfinite(self.ub[k]):
                add_row(in_r, in_c, in_v, bin_, np.array([k]), np.array([1.0]), self.ub[k])
            if np.isfinite(self.lb[k]):
                add_row(in_r, in_c, in_v, bin_, np.array([k]), np.array([-1.0]), -self.lb[k])
        self.Aeq = sp.csr_matrix((eq_v, (eq_r, eq_c)), shape=(len(beq), self.nv))
        self.beq = np.array(beq)
        self.Ain = sp.csr_matrix((in_v, (in_r, in_c)), shape=(len(bin_), self.nv))
        self.bin = np.array(bin_)

        # Quadratic rows: stack every affine square into F, map back via blk.
        f_r, f_c, f_v, gconst, blk = [], [], [], [], []
        q_r, q_c, q_v, bq = [], [], [], []
        for row in prog.quad_rows:
            pieces = [remap(sq.idx, sq.coef, sq.const) for sq in row.squares]
            idx, coef, shift = remap(row.lin_idx, row.lin_coef)
            if len(idx) == 0 and all(len(pi) == 0 for pi, _, _ in pieces):
                # Constant row after elimination: check it, do not carry it.
                if sum(pc**2 for _, _, pc in pieces) > row.rhs - shift + 1e-7:
                    self.infeasible_row = row.tag
                continue
            r = len(bq)
            q_r.extend([r] * len(idx))
            q_c.extend(idx.tolist())
            q_v.extend(coef.tolist())
            for pidx, pcoef, pconst in pieces:
                k = len(gconst)
                f_r.extend([k] * len(pidx))
                f_c.extend(pidx.tolist())
                f_v.extend(pcoef.tolist())
                gconst.append(pconst)
                blk.append(r)
            bq.append(row.rhs - shift)
        self.Aq = sp.csr_matrix((q_v, (q_r, q_c)), shape=(len(bq), self.nv))
        self.bq = np.array(bq)
        self.F = sp.csr_matrix((f_v, (f_r, f_c)), shape=(len(gconst), self.nv))
        self.gconst = np.array(gconst)
        self.blk = np.array(blk, int)
        self.Bmat = sp.csr_matrix(
            (np.ones(len(blk)), (self.blk, np.arange(len(blk)))),
            shape=(len(bq), len(blk)),
        )

        # Rotated cones.
        u_r, u_c, u_v, u0 = [], [], [], []
        w_r, w_c, w_v, w0 = [], [], [], []
        z_r, z_c, z_v, z0, zblk = [], [], [], [], []
        for row in prog.soc_rows:
            r = len(u0)
            idx, coef, const = remap(row.u.idx, row.u.coef, row.u.const)
            u_r.extend([r] * len(idx)), u_c.extend(idx.tolist()), u_v.extend(coef.tolist())
            u0.append(const)
            idx, coef, const = remap(row.w.idx, row.w.coef, row.w.const)
            w_r.extend([r] * len(idx)), w_c.extend(idx.tolist()), w_v.extend(coef.tolist())
            w0.append(const)
            for zk in row.z:
                idx, coef, const = remap(zk.idx, zk.coef, zk.const)
                k = len(z0)
                z_r.extend([k] * len(idx)), z_c.extend(idx.tolist()), z_v.extend(coef.tolist())
                z0.append(const)
                zblk.append(r)
        ns = len(u0)
        self.U = sp.csr_matrix((u_v, (u_r, u_c)), shape=(ns, self.nv))
        self.W = sp.csr_matrix((w_v, (w_r, w_c)), shape=(ns, self.nv))
        self.u0 = np.array(u0)
        self.w0 = np.array(w0)
        self.Z = sp.csr_matrix((z_v, (z_r, z_c)), shape=(len(z0), self.nv))
        self.z0 = np.array(z0)
        self.zblk = np.array(zblk, int)
        self.Bz = sp.csr_matrix(
            (np.ones(len(zblk)), (self.zblk, np.arange(len(zblk)))),
            shape=(ns, len(zblk)),
        )

        self.n_in = self.Ain.shape[0]
        self.n_q = self.Aq.shape[0]
        self.n_soc = ns
        self.m_bar = self.n_in + self.n_q + 2 * ns

    # -- evaluation --

    def expand(self, x: np.ndarray) -> np.ndarray:
        full = self.fixed_vals.copy()
        full[self.free] = x
        return full

    def fhat(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.c @ x)

    def slacks(self, x: np.ndarray):
        s_in = self.bin - self.Ain @ x
        tq = self.F @ x + self.gconst
        s_q = self.bq - self.Aq @ x - np.bincount(self.blk, tq**2, minlength=self.n_q) \
            if self.n_q else np.zeros(0)
        u = self.U @ x + self.u0
        w = self.W @ x + self.w0
        z = self.Z @ x + self.z0
        D = u * w - np.bincount(self.zblk, z**2, minlength=self.n_soc) if self.n_soc \
            else np.zeros(0)
        return s_in, s_q, tq, u, w, z, D

    def strictly_feasible(self, x: np.ndarray, margin: float = 0.0) -> bool:
        s_in, s_q, _, u, w, _, D = self.slacks(x)
        ok = True
        if self.n_in:
            ok &= bool(np.min(s_in) > margin)
        if self.n_q:
            ok &= bool(np.min(s_q) > margin)
        if self.n_soc:
            ok &= bool(min(np.min(u), np.min(w), np.min(D)) > margin)
        return ok

    def barrier(self, x: np.ndarray):
        """phi, grad phi, Hess phi at a strictly feasible x."""
        s_in, s_q, tq, u, w, z, D = self.slacks(x)
        phi = 0.0
        grad = np.zeros(self.nv)
        hess_parts = []
        if self.n_in:
            phi -= float(np.sum(np.log(s_in)))
            inv = 1.0 / s_in
            grad += self.Ain.T @ inv
            hess_parts.append(self.Ain.T @ sp.diags(inv**2) @ self.Ain)
        if self.n_q:
            phi -= float(np.sum(np.log(s_q)))
            inv = 1.0 / s_q
            grad += self.Aq.T @ inv + self.F.T @ (2.0 * tq * inv[self.blk])
            G = self.Aq + 2.0 * (self.Bmat @ sp.diags(tq) @ self.F)
            hess_parts.append(G.T @ sp.diags(inv**2) @ G)
            hess_parts.append(self.F.T @ sp.diags(2.0 * inv[self.blk]) @ self.F)
        if self.n_soc:
            phi -= float(np.sum(np.log(D)))
            invD = 1.0 / D
            grad += (
                self.U.T @ (-w * invD)
                + self.W.T @ (-u * invD)
                + self.Z.T @ (2.0 * z * invD[self.zblk])
            )
            Gs = sp.diags(w) @ self.U + sp.diags(u) @ self.W - 2.0 * (
                self.Bz @ sp.diags(z) @ self.Z
            )
            hess_parts.append(Gs.T @ sp.diags(invD**2) @ Gs)
            UdW = self.U.T @ sp.diags(invD) @ self.W
            hess_parts.append(-(UdW + UdW.T))
            hess_parts.append(self.Z.T @ sp.diags(2.0 * invD[self.zblk]) @ self.Z)
        H = sum(hess_parts) if hess_parts else sp.csr_matrix((self.nv, self.nv))
        return phi, grad, H.tocsr()


# -- barrier method ------------------------------------------------------------


def _kkt_solve(KKT, rhs, nv: int | None = None):
    """LU solve with symmetric equilibration and one refinement round.

    If the plain system is singular or the solve is inaccurate (redundant
    equality rows), retries with a small dual-block regularization.
    """
    d = np.sqrt(np.maximum(np.abs(KKT).max(axis=1).toarray().ravel(), 1e-300))
    Dinv = sp.diags(1.0 / d)
    M = (Dinv @ KKT @ Dinv).tocsc()
    r = rhs / d

    def attempt(mat):
        lu = splu(mat)
        y = lu.solve(r)
        y += lu.solve(r - mat @ y)
        resid = float(np.max(np.abs(mat @ y - r), initial=0.0))
        return y, resid

    try:
        y, resid = attempt(M)
        if np.all(np.isfinite(y)) and resid <= 1e-6 * (1.0 + float(np.max(np.abs(r), initial=0.0))):
            return y / d
    except RuntimeError:
        pass
    if nv is None:
        raise RuntimeError("singular KKT system")
    # Regularize only the dual block (rows past the primal variables).
    n = KKT.shape[0]
    bump = np.zeros(n)
    bump[nv:] = -1e-10
    y, _ = attempt((M + sp.diags(bump)).tocsc())
    if not np.all(np.isfinite(y)):
        raise RuntimeError("singular KKT system")
    return y / d


def _newton_center(comp: _Compiled, x, nu, t_bar, settings, counters) -> tuple:
    """Center t_bar * fhat + phi subject to equalities (infeasible start)."""
    neq = comp.Aeq.shape[0]
    reg = sp.diags(np.full(comp.nv, 1e-12))
    for _ in range(settings.max_newton):
        counters["newton"] += 1
        _, gphi, Hphi = comp.barrier(x)
        grad = t_bar * (comp.P @ x + comp.c) + gphi
        r_dual = grad + (comp.Aeq.T @ nu if neq else 0.0)
        r_pri = comp.Aeq @ x - comp.beq if neq else np.zeros(0)
        H = (t_bar * comp.P + Hphi + reg).tocsc()
        if neq:
            KKT = sp.bmat([[H, comp.Aeq.T], [comp.Aeq, None]], format="csc")
            rhs = -np.concatenate([r_dual, r_pri])
        else:
            KKT = H
            rhs = -r_dual
        try:
            step = _kkt_solve(KKT, rhs, nv=comp.nv)
        except RuntimeError:
            return x, nu, "singular"
        if not np.all(np.isfinite(step)):
            return x, nu, "nonfinite"
        dx = step[: comp.nv]
        dnu = step[comp.nv :] if neq else np.zeros(0)

        lam2 = float(dx @ (H @ dx))
        res_norm = np.linalg.norm(np.concatenate([r_dual, r_pri]))
        rp_inf = float(np.max(np.abs(r_pri), initial=0.0))
        if lam2 / 2.0 <= 1e-10 * (1.0 + t_bar) and rp_inf < 1e-8:
            return x, nu, "centered"

        # Backtrack into the barrier domain, then on the KKT residual norm.
        # Equality residuals must not grow: an exact Newton step scales them
        # by (1 - alpha), so growth indicates a failed linear solve.
        alpha = 1.0
        while alpha > 1e-14 and not comp.strictly_feasible(x + alpha * dx):
            alpha *= 0.5
        accepted = False
        while alpha > 1e-14:
            xn = x + alpha * dx
            nun = nu + alpha * dnu
            _, gphi_n, _ = comp.barrier(xn)
            rd = t_bar * (comp.P @ xn + comp.c) + gphi_n + (comp.Aeq.T @ nun if neq else 0.0)
            rp = comp.Aeq @ xn - comp.beq if neq else np.zeros(0)
            rp_ok = float(np.max(np.abs(rp), initial=0.0)) <= (1 - 0.005 * alpha) * rp_inf + 1e-9
            if rp_ok and np.linalg.norm(np.concatenate([rd, rp])) <= (1 - 0.01 * alpha) * res_norm:
                x, nu = xn, nun
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return x, nu, "stalled"
    return x, nu, "iter-limit"


def _run_barrier(comp: _Compiled, x0, settings, counters, early_stop=None):
    """Path-following loop; returns (x, status).

    A stage that fails to center marks the numerical accuracy floor: the last
    centered point is returned, optimal only if it already met the gap target.
    """
    x = x0
    nu = np.zeros(comp.Aeq.shape[0])
    if comp.m_bar == 0:
        x, nu, note = _newton_center(comp, x, nu, 1.0, settings, counters)
        ok = note in ("centered", "stalled")
        return x, ("optimal" if ok else "numerical-failure"), 0.0
    t_bar = max(1e-3, comp.m_bar / max(1.0, abs(comp.fhat(x))))
    last_good = None
    soft_fails = 0
    for _ in range(settings.max_stages):
        xn, nun, note = _newton_center(comp, x, nu, t_bar, settings, counters)
        if note in ("singular", "nonfinite", "stalled"):
            if last_good is None:
                return xn, "numerical-failure", np.inf
            x, gap = last_good
            met = gap <= max(settings.gap_abs, settings.gap_rel * abs(comp.fhat(x)))
            return x, ("optimal" if met else "iteration-limit"), gap
        if note == "iter-limit":
            # One soft retry: an occasional stage may need more Newton steps
            # than the budget; persistent failures mark the accuracy floor.
            soft_fails += 1
            if soft_fails >= 2:
                if last_good is not None:
                    x, gap = last_good
                    met = gap <= max(settings.gap_abs, settings.gap_rel * abs(comp.fhat(x)))
                    return x, ("optimal" if met else "iteration-limit"), gap
                x, nu = xn, nun
                return x, "iteration-limit", comp.m_bar / t_bar
        else:
            soft_fails = 0
        x, nu = xn, nun
        gap = comp.m_bar / t_bar
        if note == "centered":
            last_good = (x, gap)
        if early_stop is not None and early_stop(x):
            return x, "optimal", gap
        if gap <= max(settings.gap_abs, settings.gap_rel * abs(comp.fhat(x))):
            return x, "optimal", gap
        t_bar *= settings.mu
    return x, "iteration-limit", comp.m_bar / t_bar


def _crossover(comp: _Compiled, x: np.ndarray, status: str):
    """Exact equality-constrained QP finish when no inequality binds.

    Pinned or interior-optimum programs end up here: one KKT solve gives the
    exact optimum, verified against every inequality before being adopted.
    """
    neq = comp.Aeq.shape[0]
    try:
        if neq:
            dreg = -1e-12 * sp.identity(neq, format="csc")
            KKT = sp.bmat(
                [[(comp.P + sp.diags(np.full(comp.nv, 1e-12))).tocsc(), comp.Aeq.T],
                 [comp.Aeq, dreg]],
                format="csc",
            )
            rhs = np.concatenate([-comp.c, comp.beq])
            sol = _kkt_solve(KKT, rhs)[: comp.nv]
        else:
            KKT = (comp.P + sp.diags(np.full(comp.nv, 1e-12))).tocsc()
            sol = _kkt_solve(KKT, -comp.c)
    except RuntimeError:
        return x, status
    if not np.all(np.isfinite(sol)):
        return x, status
    if not comp.strictly_feasible(sol, margin=0.0):
        return x, status
    rp = float(np.max(np.abs(comp.Aeq @ sol - comp.beq), initial=0.0)) if neq else 0.0
    if rp > 1e-8:
        return x, status
    if comp.fhat(sol) <= comp.fhat(x) + 1e-9 * (1.0 + abs(comp.fhat(x))):
        return sol, "optimal"
    return x, status


def _default_start(comp: _Compiled) -> np.ndarray:
    """Midpoint-ish start: strictly inside bounds, zero for free variables."""
    lb, ub = comp.lb, comp.ub
    x = np.zeros(comp.nv)
    both = np.isfinite(lb) & np.isfinite(ub)
    x[both] = 0.5 * (lb[both] + ub[both])
    only_lb = np.isfinite(lb) & ~np.isfinite(ub)
    x[only_lb] = lb[only_lb] + 1.0
    only_ub = ~np.isfinite(lb) & np.isfinite(ub)
    x[only_ub] = ub[only_ub] - 1.0
    return x


def _phase_one(comp: _Compiled, x0, settings, counters):
    """Minimize the worst relaxed violation; linear/quadratic rows only.

    All variables get a phase-only box around the start so the relaxed
    problem is bounded; the loop exits as soon as a comfortably interior
    point appears.
    """
    if comp.n_soc:
        return None, "numerical-failure", "cone rows need a strictly feasible start"
    prog = comp.prog
    box = 1e5 * (1.0 + float(np.max(np.abs(x0), initial=0.0)))
    aux = ConvexProgram()
    pos = 0
    for name in prog.group_names:
        gi = prog.group_indices(name)
        seg = slice(pos, pos + len(gi))
        pos += len(gi)
        lo = np.maximum(prog.lb[gi], np.where(np.isfinite(prog.lb[gi]), prog.lb[gi], -box))
        hi = np.minimum(prog.ub[gi], np.where(np.isfinite(prog.ub[gi]), prog.ub[gi], box))
        aux.add_group(name, lo, hi)
    tau = aux.add_group("_tau", [-2.0], [np.inf])
    for row in prog.lin_rows:
        if row.sense == "==":
            aux.add_lin(row.idx, row.coef, row.rhs, "==", row.tag)
        else:
            aux.add_lin(
                np.concatenate([row.idx, tau]),
                np.concatenate([row.coef, [-1.0]]),
                row.rhs,
                "<=",
                row.tag,
            )
    for row in prog.quad_rows:
        aux.add_quad(
            [(sq.idx, sq.coef, sq.const) for sq in row.squares],
            np.concatenate([row.lin_idx, tau]),
            np.concatenate([row.lin_coef, [-1.0]]),
            row.rhs,
            row.tag,
        )
    aux.set_objective([], [], tau, [1.0])
    caux = _Compiled(aux)
    # Start: x0 inside bounds, tau above the worst violation.
    xa = np.zeros(caux.nv)
    xa[: comp.nv] = np.clip(x0, caux.lb[: comp.nv] + 1e-9, caux.ub[: comp.nv] - 1e-9)
    tpos = int(caux.old2new[aux.group_offset["_tau"]])
    s_in, s_q, *_ = caux.slacks(xa)
    worst = 0.0
    if len(s_in):
        worst = max(worst, float(-np.min(s_in)))
    if len(s_q):
        worst = max(worst, float(-np.min(s_q)))
    xa[tpos] = worst + 1.0
    settings1 = SolverSettings(gap_abs=1e-6, gap_rel=0.0, mu=settings.mu)
    xa, status, _gap = _run_barrier(
        caux, xa, settings1, counters, early_stop=lambda v: v[tpos] < -1e-3
    )
    if status == "numerical-failure":
        return None, "numerical-failure", "phase-one barrier failed"
    tau_val = xa[tpos]
    if tau_val >= -1e-9:
        return None, "infeasible", f"phase-one optimum {tau_val:.3e} certifies infeasibility"
    return xa[: comp.nv], "feasible", ""


def _cone_cut(row, x_full):
    """Violated tangent cut of a rotated-cone row at ``x_full``.

    The cone ``z1^2 + ... <= u*w`` equals ``||(2z, u-w)|| <= u+w``; the cut
    linearizes that convex norm form, so it is valid for every cone member
    and separates the given exterior point. Returns (idx, coef, rhs) or None
    at the (non-differentiable) apex.
    """
    u = row.u.value(x_full)
    w = row.w.value(x_full)
    zs = [zk.value(x_full) for zk in row.z]
    y = np.array([2.0 * v for v in zs] + [u - w])
    ny = float(np.linalg.norm(y))
    if ny < 1e-12:
        return None
    # g = ||y|| - (u + w); grad wrt each affine block:
    coefs: dict[int, float] = {}

    def add(expr, scale):
        for i, c in zip(expr.idx, expr.coef):
            coefs[int(i)] = coefs.get(int(i), 0.0) + scale * float(c)

    for k, zk in enumerate(row.z):
        add(zk, 2.0 * y[k] / ny)
    add(row.u, (u - w) / ny - 1.0)
    add(row.w, -(u - w) / ny - 1.0)
    g0 = ny - (u + w)
    lin0 = sum(c * x_full[i] for i, c in coefs.items())
    idx = np.array(sorted(coefs), int)
    coef = np.array([coefs[int(i)] for i in idx])
    return idx, coef, float(lin0 - g0)


def _solve_with_cone_cuts(prog, x0, settings, counters_unused=None) -> SolveResult:
    """Outer-approximation loop: cones enter through accumulating tangents.

    Every iterate solves a cut QP (a relaxation of the conic program), so for
    minimization its value approaches the conic optimum from below; the loop
    stops when every cone holds within tolerance.
    """
    wall = time.perf_counter()
    work = ConvexProgram()
    work.group_names = list(prog.group_names)
    work.group_offset = dict(prog.group_offset)
    work.lb = prog.lb.copy()
    work.ub = prog.ub.copy()
    work.lin_rows = list(prog.lin_rows)
    work.quad_rows = list(prog.quad_rows)
    work.soc_rows = []
    work.obj_quad_idx = prog.obj_quad_idx
    work.obj_quad_coef = prog.obj_quad_coef
    work.obj_lin_idx = prog.obj_lin_idx
    work.obj_lin_coef = prog.obj_lin_coef
    work.obj_const = prog.obj_const
    work.slacks = prog.slacks

    interior = None if x0 is None else np.asarray(x0, float).copy()
    start = interior
    total_iters = 0
    res = None
    loose = SolverSettings(gap_abs=max(settings.gap_abs, 1e-6),
                           gap_rel=max(settings.gap_rel, 1e-6), mu=settings.mu)
    for round_ in range(60):
        if start is not None:
            comp_check = _Compiled(work)
            xr = np.clip(start[comp_check.free], comp_check.lb + 1e-12,
                         comp_check.ub - 1e-12)
            if not comp_check.strictly_feasible(xr) and interior is not None:
                start = interior  # cone-interior anchor satisfies every cut
        res = solve_convex(work, start, loose if round_ < 40 else settings)
        total_iters += res.iterations
        if res.primal is None or res.status in ("infeasible", "numerical-failure"):
            res.solve_time = time.perf_counter() - wall
            res.iterations = total_iters
            return res
        x_full = np.concatenate([res.primal[g] for g in prog.group_names])
        worst = 0.0
        added = 0
        for k, row in enumerate(prog.soc_rows):
            viol = row.value(x_full)
            worst = max(worst, viol, -row.u.value(x_full), -row.w.value(x_full))
            if viol > 1e-9 or row.u.value(x_full) < -1e-9 or row.w.value(x_full) < -1e-9:
                cut = _cone_cut(row, x_full)
                if cut is not None:
                    idx, coef, rhs = cut
                    work.add_lin(idx, coef, rhs, "<=", f"cone-cut[{k}.{round_}]")
                    added += 1
        if worst <= 1e-7 or added == 0:
            final = SolveResult(
                status=res.status if worst <= 1e-6 else "iteration-limit",
                primal=res.primal,
                objective=res.objective,
                solve_time=time.perf_counter() - wall,
                iterations=total_iters,
                message=f"cone cuts converged in {round_ + 1} rounds" if worst <= 1e-6
                else f"cone violation {worst:.2e} after {round_ + 1} rounds",
                gap=res.gap,
            )
            return final
        # Warm start: blend the cut point toward the cone-interior start;
        # the round guard above reverts to the anchor if the blend lands on
        # the wrong side of a fresh cut.
        if interior is not None:
            start = 0.75 * x_full + 0.25 * interior
        else:
            start = None
    res.solve_time = time.perf_counter() - wall
    res.iterations = total_iters
    res.status = "iteration-limit"
    res.message = "cone cut rounds exhausted"
    return res


def solve_convex(
    prog: ConvexProgram,
    x0: np.ndarray | None = None,
    settings: SolverSettings | None = None,
) -> SolveResult:
    """Solve a convex program; never raises on solver trouble.

    ``x0`` (full-length, including any fixed variables) is used when it is
    strictly feasible for the inequalities; otherwise a midpoint start and, if
    needed, a phase-one relaxation supply the interior point. A returned
    ``optimal`` status is re-checked against every row of the program.
    """
    settings = settings or SolverSettings()
    if prog.soc_rows:
        return _solve_with_cone_cuts(prog, x0, settings)
    wall = time.perf_counter()
    counters = {"newton": 0}
    try:
        comp = _Compiled(prog)
    except Exception as exc:  # malformed program
        return SolveResult("numerical-failure", None, np.nan, 0.0, 0, str(exc))
    if comp.infeasible_row is not None:
        return SolveResult(
            "infeasible", None, np.nan, time.perf_counter() - wall, 0,
            f"constant row {comp.infeasible_row} cannot hold",
        )

    x = None
    if x0 is not None:
        xr = np.asarray(x0, float)[comp.free]
        xr = np.clip(xr, comp.lb + 1e-12, comp.ub - 1e-12)
        if comp.strictly_feasible(xr):
            x = xr
    if x is None:
        xm = _default_start(comp)
        if comp.strictly_feasible(xm):
            x = xm
        else:
            x, note, msg = _phase_one(comp, xm, settings, counters)
            if x is None:
                return SolveResult(note, None, np.nan, time.perf_counter() - wall,
                                   counters["newton"], msg)
            if not comp.strictly_feasible(x):
                return SolveResult(
                    "numerical-failure", None, np.nan, time.perf_counter() - wall,
                    counters["newton"], "phase-one point not strictly feasible",
                )

    x, status, gap = _run_barrier(comp, x, settings, counters)
    x, status = _crossover(comp, x, status)
    if status == "optimal" and not np.isfinite(gap):
        gap = 0.0
    elapsed = time.perf_counter() - wall
    full = comp.expand(x)
    obj = prog.objective_value(full)
    if status == "optimal":
        viol = prog.max_violation(full)
        if not np.isfinite(obj) or viol > settings.feas_tol:
            status = "numerical-failure"
    return SolveResult(
        status=status,
        primal=prog.split_primal(full),
        objective=obj,
        solve_time=elapsed,
        iterations=counters["newton"],
        gap=comp.obj_scale * gap if np.isfinite(gap) else gap,
    )


# -- model-aware interior start -------------------------------------------------


def interior_start(prog: ConvexProgram, net: Network, hint: LiftedState | None = None):
    """Strictly feasible, nearly balance-consistent start for built programs.

    Voltages come from the hint (or a flat profile), shrunk when needed so
    squared magnitudes sit strictly inside the ``c_ii`` box; lifted products
    are damped just inside the cones and the flows are set consistently with
    the damped products, so equality residuals start at the percent level.
    Injections copy the hint into the interior of their boxes; remaining
    groups start as close to zero as their bounds allow, and slack variables
    absorb whatever the convexified rows still need.
    """
    n = net.n_bus
    x = np.zeros(prog.n_var)
    gi = prog.group_indices

    has_v = "v_re" in prog.group_offset
    cii_idx = gi("c_ii")
    c_lo, c_hi = prog.lb[cii_idx], prog.ub[cii_idx]
    if hint is not None:
        v_re, v_im = hint.v_re.copy(), hint.v_im.copy()
    else:
        v_re, v_im = np.ones(n), np.zeros(n)
    vm2 = v_re**2 + v_im**2
    delta = np.minimum(0.02, np.maximum(1e-6, (c_hi - c_lo) / 4.0))
    cap = c_hi - 2.0 * delta
    scale = np.sqrt(np.where(vm2 > cap, cap / np.maximum(vm2, 1e-12), 1.0))
    v_re, v_im = v_re * scale, v_im * scale
    vm2 = v_re**2 + v_im**2
    c_ii = np.clip(vm2 + delta, c_lo + delta, c_hi - delta)

    if has_v:
        x[gi("v_re")] = v_re
        x[gi("v_im")] = v_im
    x[cii_idx] = c_ii
    coef = branch_coefficients(net)
    damp = 0.995
    c_ij = damp * (v_re[coef.fbus] * v_re[coef.tbus] + v_im[coef.fbus] * v_im[coef.tbus])
    s_ij = damp * (v_re[coef.fbus] * v_im[coef.tbus] - v_re[coef.tbus] * v_im[coef.fbus])
    x[gi("c_ij")] = c_ij
    x[gi("s_ij")] = s_ij
    # Flows consistent with the damped products: only the nodal balance rows
    # carry a (small) residual at the start.
    cf, ct = c_ii[coef.fbus], c_ii[coef.tbus]
    pf = coef.g_ff * cf + coef.pc_f * c_ij + coef.ps_f * s_ij
    qf = coef.b_ff * cf + coef.qc_f * c_ij + coef.qs_f * s_ij
    pt = coef.g_tt * ct + coef.pc_t * c_ij + coef.ps_t * s_ij
    qt = coef.b_tt * ct + coef.qc_t * c_ij + coef.qs_t * s_ij
    # Scale any flow pair sitting on or past its thermal ball back inside.
    smax = np.array([e.S_max for e in net.branches])
    lim = np.where(smax > 0, smax, np.inf)
    for p_arr, q_arr in ((pf, qf), (pt, qt)):
        mag = np.hypot(p_arr, q_arr)
        shrink = np.where(mag >= 0.97 * lim, 0.95 * lim / np.maximum(mag, 1e-12), 1.0)
        p_arr *= shrink
        q_arr *= shrink
    x[gi("p_from")] = pf
    x[gi("q_from")] = qf
    x[gi("p_to")] = pt
    x[gi("q_to")] = qt
    for name, vals in (("p_g", None if hint is None else hint.p_g),
                       ("q_g", None if hint is None else hint.q_g)):
        idx = gi(name)
        lo, hi = prog.lb[idx], prog.ub[idx]
        span = np.where(np.isfinite(hi - lo), hi - lo, 2.0)
        mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
        if vals is None:
            x[idx] = mid
        else:
            margin = np.minimum(1e-3, 0.05 * span)
            x[idx] = np.clip(vals, lo + margin, hi - margin)
    # Remaining groups (study extensions, slacks): closest-to-zero inside
    # the box keeps the balance rows nearly intact.
    core = {"v_re", "v_im", "c_ii", "c_ij", "s_ij", "p_from", "q_from",
            "p_to", "q_to", "p_g", "q_g"}
    for name in prog.group_names:
        if name in core:
            continue
        idx = gi(name)
        lo, hi = prog.lb[idx], prog.ub[idx]
        span = np.where(np.isfinite(hi) & np.isfinite(lo), hi - lo, 2.0)
        margin = np.minimum(1e-6, 0.25 * span)
        x[idx] = np.clip(0.0, lo + margin, np.where(np.isfinite(hi), hi - margin, np.inf))
    # Let slacks absorb the convexified-row residuals at this start.
    if prog.slacks is not None:
        for grp, fams in (
            (prog.slacks.node, ("lift-node-c[",)),
            (prog.slacks.branch_c, ("lift-branch-c-lo[", "lift-branch-c-hi[")),
            (prog.slacks.branch_s, ("lift-branch-s-lo[", "lift-branch-s-hi[")),
        ):
            if grp is None:
                continue
            need = np.zeros(len(grp))
            x[grp] = 0.0
            for row in prog.lin_rows:
                if row.tag.startswith(fams):
                    k = int(row.tag[row.tag.index("[") + 1 : -1])
                    val = float(row.coef @ x[row.idx]) - row.rhs
                    need[k] = max(need[k], val)
            for row in prog.quad_rows:
                if row.tag.startswith(fams):
                    k = int(row.tag[row.tag.index("[") + 1 : -1])
                    need[k] = max(need[k], row.value(x))
            cap = prog.ub[grp]
            head = need + 0.5
            finite = np.isfinite(cap)
            if np.any(finite):
                head = head.copy()
                head[finite] = cap[finite] - 1e-9 * np.maximum(np.abs(cap[finite]), 1.0)
            x[grp] = np.minimum(need + 0.5, np.maximum(need * 1.001 + 1e-12, head))
    return x


# -- sequential convexification -------------------------------------------------


@dataclass(frozen=True)
class SeqConfig:
    """Outer-loop controls for the re-anchoring driver."""

    max_outer_iters: int = 30
    slack_tol: float = 1e-7
    rho_init: float = 1e2
    rho_growth: float = 5.0
    rho_max: float = 1e10
    objective_stall_tol: float = 1e-8

    def __post_init__(self):
        if min(self.max_outer_iters, self.slack_tol, self.rho_init,
               self.rho_growth, self.rho_max, self.objective_stall_tol) <= 0:
            raise ValueError("all SeqConfig fields must be positive")
        if self.rho_growth <= 1:
            raise ValueError("rho_growth must exceed 1")


@dataclass
class TracePoint:
    iteration: int
    objective: float
    max_slack: float
    rho: float
    solve_time: float


@dataclass
class SeqResult:
    state: LiftedState
    trace: list[TracePoint] = field(default_factory=list)
    converged: bool = False
    rejected: int = 0
    message: str = ""

    @property
    def objective(self) -> float:
        return self.trace[-1].objective if self.trace else np.nan


def trace_to_csv(trace: list[TracePoint]) -> str:
    lines = ["iter,objective,max_slack,rho,time_s"]
    for t in trace:
        lines.append(f"{t.iteration},{t.objective!r},{t.max_slack!r},{t.rho!r},{t.solve_time:.6f}")
    return "\n".join(lines) + "\n"


def sequential_qcac(
    net: Network,
    start: BasePoint,
    objective: str = "cost",
    target=None,
    cfg: SeqConfig | None = None,
    settings: SolverSettings | None = None,
    program_builder=None,
    realize=None,
    objective_fn=None,
    bootstrap: bool | None = None,
) -> SeqResult:
    """Re-anchor the convex approximation until its slacks vanish.

    Each outer iteration builds the approximation at the current anchor and
    solves it; the solved dispatch and voltage setpoints are realized exactly
    by a Newton power flow and the anchor moves to that realized state, so
    anchors stay on the AC manifold and converged iterates carry Newton-level
    residuals (far inside the 1e-5 guarantee). Before the re-anchoring loop,
    a reduced-space descent over (dispatch, setpoints) with exact power-flow
    evaluation drives the anchor near a local optimum; the loop then shrinks
    the subproblem slacks to tolerance and certifies stationarity. Slack caps
    bound how far any single subproblem may trust the convexification, and a
    merit test (true objective plus a price on operating-limit violations)
    damps steps the full model does not confirm.

    ``program_builder(net, base, rho)`` overrides the subproblem (the case
    studies add variables this way). ``realize(net, primal) -> (pf_net, p_g,
    v_set)`` maps a subproblem solution to its power-flow realization and
    ``objective_fn(state, primal)`` scores a realized state; both default to
    the plain dispatch pipeline. ``bootstrap`` controls the descent phase and
    defaults to on for the plain pipeline, off for custom realizations.
    """
    cfg = cfg or SeqConfig()
    builder = program_builder or (
        lambda netz, anchor, rho: build_qcac(netz, anchor, rho, True, objective, target)
    )
    custom = realize is not None or objective_fn is not None
    if bootstrap is None:
        bootstrap = not custom
    if realize is None:
        realize = _default_realize
    if objective_fn is None:
        objective_fn = lambda st, primal: _true_objective(net, st, objective, target)

    price = _price_scale(net, objective)
    # Honest-by-construction penalty: above it, faking power through the
    # slacks never beats real dispatch, so subproblem proposals stay sane.
    rho = max(cfg.rho_init, _honest_rho(net, objective))
    infeas_pen = 10.0 * (price + 0.25 * price + cfg.rho_init)

    trace: list[TracePoint] = []
    rejected = 0

    # Phase one: enter the AC manifold. The very first subproblem's dispatch
    # is realized by a power flow; failing that, the case dispatch is used.
    anchor_state = lifted_from_voltages(net, start.v_re, start.v_im)
    base = BasePoint(start.v_re, start.v_im)
    hint = anchor_state
    prog = builder(net, base, rho)
    _cap_slacks(prog, 0.2)
    res0 = solve_convex(prog, interior_start(prog, net, hint), settings)
    entered = False
    if res0.primal is not None and res0.status in ("optimal", "iteration-limit"):
        pf_net, d0, v0 = realize(net, res0.primal)
        try:
            anchor_state = newton_power_flow(pf_net, Dispatch(d0, v0), start=base)
            entered = True
            hint = state_from_primal(net, res0.primal)
        except (PowerFlowError, ValueError):
            pass
    if not entered:
        try:
            anchor_state = newton_power_flow(net, start=base)
        except (PowerFlowError, ValueError):
            anchor_state = lifted_from_voltages(net, start.v_re, start.v_im)
    base = BasePoint(anchor_state.v_re, anchor_state.v_im)

    # Phase two: reduced-space local descent with exact power-flow states.
    if bootstrap and net.n_gen:
        anchor_state = _dispatch_descent(net, anchor_state, objective, target, price)
        base = BasePoint(anchor_state.v_re, anchor_state.v_im)
        hint = anchor_state

    # Phase three: re-anchoring loop until the subproblem slacks vanish.
    best: LiftedState | None = None
    best_slack = np.inf
    merit_prev = objective_fn(anchor_state, None) + infeas_pen * _operational_violation(
        net, anchor_state
    )
    obj_prev = None
    disp_prev: np.ndarray | None = None
    vset_prev: np.ndarray | None = None
    radius = 0.05
    radius_max = 0.3
    it = 0
    while it < cfg.max_outer_iters:
        it += 1
        prog = builder(net, base, rho)
        _cap_slacks(prog, max(8.0 * radius * radius, 100.0 * cfg.slack_tol))
        res = solve_convex(prog, interior_start(prog, net, hint), settings)
        if res.status == "infeasible" and radius < radius_max:
            radius = min(2.0 * radius, radius_max)
            rejected += 1
            continue
        if res.status not in ("optimal", "iteration-limit") or res.primal is None:
            return SeqResult(
                state=best if best is not None else anchor_state,
                trace=trace,
                converged=False,
                rejected=rejected,
                message=f"convex solve ended with status {res.status}: {res.message}",
            )
        xs = state_from_primal(net, res.primal)
        max_slack = 0.0
        for gname in ("xi_c_node", "xi_c_branch", "xi_s_branch"):
            if gname in res.primal and len(res.primal[gname]):
                max_slack = max(max_slack, float(res.primal[gname].max()))

        # Realize the proposed dispatch exactly, damping the step toward the
        # previous accepted dispatch when the full step fails the merit test
        # or the power flow diverges.
        pf_net, disp_new, vset_new = realize(net, res.primal)
        accepted = None
        theta = 1.0
        while theta > 0.04:
            d_try = disp_new if disp_prev is None else disp_prev + theta * (disp_new - disp_prev)
            v_try = vset_new if vset_prev is None else vset_prev + theta * (vset_new - vset_prev)
            try:
                st = newton_power_flow(pf_net, Dispatch(d_try, v_try), start=base)
            except (PowerFlowError, ValueError):
                theta *= 0.5
                continue
            obj_try = objective_fn(st, res.primal)
            merit = obj_try + infeas_pen * _operational_violation(pf_net, st)
            if merit <= merit_prev + 1e-6 * (1.0 + abs(merit_prev)):
                accepted = (st, obj_try, merit, d_try, v_try)
                break
            theta *= 0.5
        if accepted is None:
            radius = max(0.35 * radius, 2e-6)
            rejected += 1
            hint = xs
            if radius <= 2e-6 and trace:
                final = best if best is not None else anchor_state
                return SeqResult(final, trace, converged=False, rejected=rejected,
                                 message="step collapsed before reaching tolerance")
            continue

        st, obj, merit, d_acc, v_acc = accepted
        move = float(
            max(np.max(np.abs(st.v_re - base.v_re)), np.max(np.abs(st.v_im - base.v_im)))
        )
        trace.append(TracePoint(len(trace), obj, max_slack, rho, res.solve_time))
        if max_slack < best_slack:
            best, best_slack = st, max_slack
        stalled = obj_prev is not None and abs(obj - obj_prev) <= (
            cfg.objective_stall_tol * max(1.0, abs(obj_prev))
        )
        settled = move <= max(1e-6, np.sqrt(cfg.slack_tol))
        if max_slack < cfg.slack_tol and len(trace) >= 2:
            return SeqResult(st, trace, converged=True, rejected=rejected)
        if settled and stalled and max_slack >= cfg.slack_tol:
            if rho >= cfg.rho_max:
                return SeqResult(st, trace, converged=False, rejected=rejected,
                                 message="slack floor above tolerance at rho_max")
            rho = min(rho * cfg.rho_growth, cfg.rho_max)
        if move > 0.4 * radius and radius < radius_max:
            radius = min(1.6 * radius, radius_max)
        base = BasePoint(st.v_re, st.v_im)
        anchor_state = st
        hint = xs
        merit_prev = merit
        obj_prev = obj
        disp_prev, vset_prev = d_acc, v_acc
    return SeqResult(anchor_state, trace, converged=False, rejected=rejected,
                     message="outer iteration limit reached")


def _dispatch_descent(
    net: Network,
    st0: LiftedState,
    objective: str,
    target,
    price: float,
) -> LiftedState:
    """Quasi-Newton descent over (p_g, v_set) with exact power-flow states.

    Operating-limit violations enter through an escalating smooth penalty;
    the returned state is the best power-flow realization found.
    """
    from scipy.optimize import minimize

    idx = net.bus_index()
    ng = net.n_gen
    gbus = [idx[g.bus] for g in net.gens]
    lb = np.concatenate([[g.Pmin for g in net.gens],
                         [net.buses[b].Vmin for b in gbus]])
    ub = np.concatenate([[g.Pmax for g in net.gens],
                         [net.buses[b].Vmax for b in gbus]])
    u0 = np.clip(np.concatenate([st0.p_g, [np.hypot(st0.v_re[b], st0.v_im[b]) for b in gbus]]),
                 lb, ub)
    base = BasePoint(st0.v_re, st0.v_im)
    cache: dict = {}
    warm = [base]

    def realize_u(u):
        key = u.tobytes()
        if key in cache:
            return cache[key]
        try:
            # Tight tolerance keeps the finite-difference gradients clean;
            # warm-starting from the last solution makes the tiny
            # finite-difference steps converge in one or two iterations.
            st = newton_power_flow(net, Dispatch(u[:ng], u[ng:]), start=warm[0], tol=1e-11)
            warm[0] = BasePoint(st.v_re, st.v_im)
        except (PowerFlowError, ValueError):
            st = None
        if len(cache) > 4096:
            cache.clear()
        cache[key] = st
        return st

    def score(u, pen):
        st = realize_u(np.asarray(u))
        if st is None:
            return 1e12
        return _true_objective(net, st, objective, target) + pen * _violation_sq(net, st)

    pen = 30.0 * max(price, 1.0)
    u = u0
    st = st0
    for _ in range(5):
        out = minimize(
            score, u, args=(pen,), method="L-BFGS-B",
            bounds=list(zip(lb, ub)),
            options={"maxiter": 70, "maxfun": 1800, "ftol": 1e-14, "gtol": 1e-9, "eps": 1e-5},
        )
        u = np.clip(out.x, lb, ub)
        st = realize_u(u)
        if st is None:
            return st0
        exhausted = out.nit >= 69
        if _operational_violation(net, st) < 1e-8:
            if not exhausted:
                break
        else:
            pen *= 30.0
    # Exact reactive-limit cleanup; voltages shift marginally.
    try:
        st_q = newton_power_flow(
            net, Dispatch(u[:ng], u[ng:]), start=BasePoint(st.v_re, st.v_im),
            enforce_q_limits=True,
        )
        if _operational_violation(net, st_q) <= _operational_violation(net, st) + 1e-12:
            st = st_q
    except (PowerFlowError, ValueError):
        pass
    return st if st is not None else st0


def _violation_sq(net: Network, st: LiftedState) -> float:
    """Smooth (squared-hinge) measure of operating-limit violations."""
    from .acmodel import bound_violations

    total = 0.0
    for arr in bound_violations(net, st).values():
        total += float(np.sum(np.square(arr)))
    return total


def _default_realize(net: Network, primal: dict):
    """Harvest generator dispatch and voltage setpoints from a solution."""
    idx = net.bus_index()
    vm = np.hypot(primal["v_re"], primal["v_im"]) if "v_re" in primal else np.sqrt(
        np.maximum(primal["c_ii"], 1e-12)
    )
    vmin = np.array([b.Vmin for b in net.buses])
    vmax = np.array([b.Vmax for b in net.buses])
    vm = np.clip(vm, vmin, vmax)
    vset = np.array([vm[idx[g.bus]] for g in net.gens])
    return net, primal["p_g"].copy(), vset


def _operational_violation(net: Network, st: LiftedState) -> float:
    """Worst limit violation of an exact power-flow state (p.u.)."""
    from .acmodel import bound_violations

    v = bound_violations(net, st)
    return float(max(np.max(arr, initial=0.0) for arr in v.values()))


def _cap_slacks(prog: ConvexProgram, cap: float) -> None:
    """Upper-bound every slack variable; bounds cheating and step length."""
    if prog.slacks is None:
        return
    for grp in (prog.slacks.node, prog.slacks.branch_c, prog.slacks.branch_s):
        if grp is not None and len(grp):
            prog.ub[grp] = cap


def _honest_rho(net: Network, objective: str) -> float:
    from .dcc import suggested_rho

    rho = suggested_rho(net)
    if objective != "cost":
        # Non-cost objectives trade in p.u. rather than $: rescale the
        # cost-based suggestion down to the admittance leverage alone.
        rho = max(1.0, rho / max(_price_scale(net, "cost"), 1.0))
    return rho


def _price_scale(net: Network, objective: str) -> float:
    """Largest generator marginal cost in $ per p.u., the natural slack price."""
    if objective != "cost":
        return 1.0
    S = net.base_mva
    worst = 0.0
    for g in net.gens:
        c2, c1, _ = g.cost
        mw = max(abs(g.Pmin), abs(g.Pmax)) * S
        worst = max(worst, (abs(c1) + 2.0 * abs(c2) * mw) * S)
    return worst


def _true_objective(net: Network, xs: LiftedState, objective: str, target) -> float:
    from .acmodel import objective as cost_of

    if objective == "cost":
        return cost_of(net, xs)
    d = np.asarray(target, float) - xs.p_g
    return float(d @ d)


def project_dispatch(
    net: Network,
    target,
    start: BasePoint,
    cfg: SeqConfig | None = None,
):
    """Project a dispatch onto the AC-feasible set via sequential solves.

    Returns ``(projected p_g, residual report, SeqResult)``; the report
    certifies how AC-feasible the projection's carrier state is.
    """
    target = np.asarray(target, float)
    if len(target) != net.n_gen:
        raise ValueError("target length must equal the generator count")
    res = sequential_qcac(net, start, objective="projection", target=target, cfg=cfg)
    report = residual_report(net, res.state)
    return res.state.p_g.copy(), report, res
