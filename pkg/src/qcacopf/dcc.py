"""Difference-of-convex splitting and convex program builders.

Every nonconvexity of the lifted AC model is a bivariate product, and any
product ``x*y`` equals ``(x+y)^2/4 - (x-y)^2/4``: a difference of two convex
quadratics. Replacing each lifting equality by a pair of inequalities in that
split form gives an exact (still nonconvex) reformulation; linearizing only
the concave side of each inequality around a voltage base point yields a
convex quadratically-constrained approximation whose zero-slack feasible
points are feasible for the original AC equations (an inner approximation).

This module provides:

- :func:`dc_split` and :func:`tangent_rhs`, the algebraic core;
- :func:`build_dc_reformulation`, the exact split-form constraint set used
  for residual checking;
- :func:`build_qcac`, the convexified approximation with penalized slacks;
- :func:`build_ts`, the fully linearized baseline;
- :func:`build_soc`, the rotated-cone relaxation baseline;
- :class:`ConvexProgram`, a solver-agnostic QCQP/SOCP container with a
  documented JSON serialization.

Constraint-row tags use stable family ids (``balance-p``, ``flow-pf``,
``lift-node-c``, ``lift-branch-c-lo``, ...) so rows can be traced back to the
model family they encode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .acmodel import (
    BasePoint,
    BranchCoefficients,
    LiftedState,
    branch_coefficients,
    lifted_from_voltages,
)
from .netparse import Network

__all__ = [
    "DEFAULT_RHO",
    "AffineExpr",
    "LinRow",
    "QuadRow",
    "SocRow",
    "ConvexProgram",
    "SlackSet",
    "dc_split",
    "tangent_rhs",
    "convex_rhs",
    "TANGENT_FAMILIES",
    "build_dc_reformulation",
    "suggested_rho",
    "build_qcac",
    "build_ts",
    "build_soc",
    "state_from_primal",
]

DEFAULT_RHO = 1e3

_PSD_TOL = 1e-9


@dataclass(frozen=True)
class AffineExpr:
    """Sparse affine form ``sum(coef * x[idx]) + const``."""

    idx: np.ndarray
    coef: np.ndarray
    const: float = 0.0

    def value(self, x: np.ndarray) -> float:
        return float(self.coef @ x[self.idx] + self.const)


@dataclass
class LinRow:
    """``sum(coef * x[idx]) <sense> rhs`` with sense ``<=`` or ``==``."""

    idx: np.ndarray
    coef: np.ndarray
    rhs: float
    sense: str
    tag: str


@dataclass
class QuadRow:
    """``sum_k (affine_k)^2 + sum(lin_coef * x[lin_idx]) <= rhs``.

    The squares list is the positive-semidefinite factorization of the row's
    quadratic part: ``Q = 2 * sum_k w_k w_k^T`` in ``x'Qx/2`` convention.
    """

    squares: list[AffineExpr]
    lin_idx: np.ndarray
    lin_coef: np.ndarray
    rhs: float
    tag: str

    def value(self, x: np.ndarray) -> float:
        v = float(self.lin_coef @ x[self.lin_idx]) - self.rhs
        for sq in self.squares:
            v += sq.value(x) ** 2
        return v  # <= 0 when satisfied


@dataclass
class SocRow:
    """Rotated-cone membership ``sum_k z_k^2 <= u * w`` with ``u, w >= 0``."""

    u: AffineExpr
    w: AffineExpr
    z: list[AffineExpr]
    tag: str

    def value(self, x: np.ndarray) -> float:
        return sum(zk.value(x) ** 2 for zk in self.z) - self.u.value(x) * self.w.value(x)


@dataclass
class SlackSet:
    """Named offsets of the nonnegative constraint slacks and their penalty."""

    node: np.ndarray | None
    branch_c: np.ndarray | None
    branch_s: np.ndarray | None
    rho: float

    def max_slack(self, x: np.ndarray) -> float:
        parts = [x[g] for g in (self.node, self.branch_c, self.branch_s) if g is not None]
        return float(max(p.max() for p in parts)) if parts else 0.0


class ConvexProgram:
    """Solver-agnostic convex QCQP/SOCP instance over named variable groups."""

    def __init__(self):
        self.group_names: list[str] = []
        self.group_offset: dict[str, int] = {}
        self.lb = np.zeros(0)
        self.ub = np.zeros(0)
        self.lin_rows: list[LinRow] = []
        self.quad_rows: list[QuadRow] = []
        self.soc_rows: list[SocRow] = []
        self.obj_quad_idx = np.zeros(0, int)
        self.obj_quad_coef = np.zeros(0)  # terms coef * x_i^2
        self.obj_lin_idx = np.zeros(0, int)
        self.obj_lin_coef = np.zeros(0)
        self.obj_const = 0.0
        self.slacks: SlackSet | None = None

    # -- variables ----------------------------------------------------------

    @property
    def n_var(self) -> int:
        return len(self.lb)

    def add_group(self, name: str, lb, ub) -> np.ndarray:
        """Add a named variable group; returns its flat indices."""
        lb = np.atleast_1d(np.asarray(lb, float))
        ub = np.atleast_1d(np.asarray(ub, float))
        if lb.shape != ub.shape:
            raise ValueError(f"group {name}: lb/ub shape mismatch")
        if np.any(lb > ub):
            raise ValueError(f"group {name}: lb > ub")
        if name in self.group_offset:
            raise ValueError(f"duplicate variable group {name}")
        off = self.n_var
        self.group_offset[name] = off
        self.group_names.append(name)
        self.lb = np.concatenate([self.lb, lb])
        self.ub = np.concatenate([self.ub, ub])
        return np.arange(off, off + len(lb))

    def group_indices(self, name: str) -> np.ndarray:
        off = self.group_offset[name]
        names = self.group_names
        k = names.index(name)
        end = self.group_offset[names[k + 1]] if k + 1 < len(names) else self.n_var
        return np.arange(off, end)

    def split_primal(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {name: x[self.group_indices(name)] for name in self.group_names}

    # -- rows ---------------------------------------------------------------

    def add_lin(self, idx, coef, rhs: float, sense: str, tag: str) -> None:
        if sense not in ("<=", "=="):
            raise ValueError(f"unknown sense {sense}")
        self.lin_rows.append(
            LinRow(np.asarray(idx, int), np.asarray(coef, float), float(rhs), sense, tag)
        )

    def add_quad(self, squares, lin_idx, lin_coef, rhs: float, tag: str) -> None:
        self.quad_rows.append(
            QuadRow(
                [AffineExpr(np.asarray(i, int), np.asarray(c, float), float(o)) for i, c, o in squares],
                np.asarray(lin_idx, int),
                np.asarray(lin_coef, float),
                float(rhs),
                tag,
            )
        )

    def add_soc(self, u, w, z, tag: str) -> None:
        mk = lambda t: AffineExpr(np.asarray(t[0], int), np.asarray(t[1], float), float(t[2]))
        self.soc_rows.append(SocRow(mk(u), mk(w), [mk(t) for t in z], tag))

    def set_objective(self, quad_idx, quad_coef, lin_idx, lin_coef, const: float = 0.0) -> None:
        self.obj_quad_idx = np.asarray(quad_idx, int)
        self.obj_quad_coef = np.asarray(quad_coef, float)
        if np.any(self.obj_quad_coef < -_PSD_TOL):
            raise ValueError("objective quadratic must be convex")
        self.obj_lin_idx = np.asarray(lin_idx, int)
        self.obj_lin_coef = np.asarray(lin_coef, float)
        self.obj_const = float(const)

    def add_objective_lin(self, idx, coef) -> None:
        self.obj_lin_idx = np.concatenate([self.obj_lin_idx, np.asarray(idx, int)])
        self.obj_lin_coef = np.concatenate([self.obj_lin_coef, np.asarray(coef, float)])

    # -- evaluation ---------------------------------------------------------

    def objective_value(self, x: np.ndarray) -> float:
        return float(
            self.obj_quad_coef @ x[self.obj_quad_idx] ** 2
            + self.obj_lin_coef @ x[self.obj_lin_idx]
            + self.obj_const
        )

    def max_violation(self, x: np.ndarray) -> float:
        """Worst constraint violation at ``x`` (0 when feasible)."""
        worst = 0.0
        worst = max(worst, float(np.max(self.lb - x, initial=0.0)))
        worst = max(worst, float(np.max(x - self.ub, initial=0.0)))
        for r in self.lin_rows:
            v = float(r.coef @ x[r.idx]) - r.rhs
            worst = max(worst, abs(v) if r.sense == "==" else v)
        for r in self.quad_rows:
            worst = max(worst, r.value(x))
        for r in self.soc_rows:
            worst = max(worst, r.value(x), -r.u.value(x), -r.w.value(x))
        return worst

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        """Documented JSON schema: variables, sparse rows, cone lists.

        Quadratic rows are emitted as symmetric ``Q`` triplets (upper
        triangle, ``x'Qx/2`` convention) plus a linear part, with any affine
        offsets of the square terms folded into the linear part and rhs.
        """
        def aff(e: AffineExpr):
            return {"idx": e.idx.tolist(), "coef": e.coef.tolist(), "const": e.const}

        quad = []
        for r in self.quad_rows:
            qacc: dict[tuple[int, int], float] = {}
            lin: dict[int, float] = {}
            rhs = r.rhs
            for i, c in zip(r.lin_idx, r.lin_coef):
                lin[int(i)] = lin.get(int(i), 0.0) + float(c)
            for sq in r.squares:
                for a, ca in zip(sq.idx, sq.coef):
                    for b, cb in zip(sq.idx, sq.coef):
                        if a <= b:
                            key = (int(a), int(b))
                            qacc[key] = qacc.get(key, 0.0) + 2.0 * float(ca * cb)
                    if sq.const != 0.0:
                        lin[int(a)] = lin.get(int(a), 0.0) + 2.0 * sq.const * float(ca)
                rhs -= sq.const**2
            keys = sorted(qacc)
            quad.append(
                {
                    "q_i": [k[0] for k in keys],
                    "q_j": [k[1] for k in keys],
                    "q_v": [qacc[k] for k in keys],
                    "lin_idx": sorted(lin),
                    "lin_coef": [lin[k] for k in sorted(lin)],
                    "rhs": rhs,
                    "tag": r.tag,
                }
            )
        doc = {
            "variables": [
                {
                    "name": name,
                    "lb": self.lb[self.group_indices(name)].tolist(),
                    "ub": self.ub[self.group_indices(name)].tolist(),
                }
                for name in self.group_names
            ],
            "objective": {
                "quad_idx": self.obj_quad_idx.tolist(),
                "quad_coef": self.obj_quad_coef.tolist(),
                "lin_idx": self.obj_lin_idx.tolist(),
                "lin_coef": self.obj_lin_coef.tolist(),
                "const": self.obj_const,
            },
            "linear": [
                {
                    "idx": r.idx.tolist(),
                    "coef": r.coef.tolist(),
                    "rhs": r.rhs,
                    "sense": r.sense,
                    "tag": r.tag,
                }
                for r in self.lin_rows
            ],
            "quadratic": quad,
            "cones": [
                {"u": aff(r.u), "w": aff(r.w), "z": [aff(z) for z in r.z], "tag": r.tag}
                for r in self.soc_rows
            ],
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "ConvexProgram":
        """Rebuild a program from :meth:`to_json` output.

        Quadratic rows are re-factorized into affine squares through a
        small-block eigendecomposition; eigenvalues below ``-1e-9`` raise,
        tiny negatives are clipped to zero.
        """
        doc = json.loads(text)
        p = ConvexProgram()
        for g in doc["variables"]:
            p.add_group(g["name"], g["lb"], g["ub"])
        o = doc["objective"]
        p.set_objective(o["quad_idx"], o["quad_coef"], o["lin_idx"], o["lin_coef"], o["const"])
        for r in doc["linear"]:
            p.add_lin(r["idx"], r["coef"], r["rhs"], r["sense"], r["tag"])
        for r in doc["quadratic"]:
            squares = _squares_from_triplets(r["q_i"], r["q_j"], r["q_v"], r["tag"])
            p.add_quad(squares, r["lin_idx"], r["lin_coef"], r["rhs"], r["tag"])
        for r in doc["cones"]:
            aff = lambda e: (e["idx"], e["coef"], e["const"])
            p.add_soc(aff(r["u"]), aff(r["w"]), [aff(z) for z in r["z"]], r["tag"])
        return p


def _squares_from_triplets(q_i, q_j, q_v, tag: str) -> list[tuple]:
    """PSD-check symmetric Q triplets and factor into affine squares."""
    support = sorted(set(map(int, q_i)) | set(map(int, q_j)))
    pos = {v: k for k, v in enumerate(support)}
    Q = np.zeros((len(support), len(support)))
    for i, j, v in zip(q_i, q_j, q_v):
        Q[pos[int(i)], pos[int(j)]] += v
        if i != j:
            Q[pos[int(j)], pos[int(i)]] += v
    w, V = np.linalg.eigh(Q)
    if np.any(w < -_PSD_TOL):
        raise ValueError(f"row {tag}: quadratic part has eigenvalue {w.min():.3e} < -{_PSD_TOL}")
    w = np.clip(w, 0.0, None)
    squares = []
    sup = np.asarray(support, int)
    for k in range(len(w)):
        if w[k] > 0:
            # x'Qx/2 = sum_k (sqrt(w_k/2) v_k' x)^2
            squares.append((sup, np.sqrt(w[k] / 2.0) * V[:, k], 0.0))
    return squares


# -- difference-of-convex core -----------------------------------------------


def suggested_rho(net: Network) -> float:
    """Penalty large enough that buying fake power through the slacks never
    beats honest dispatch: marginal cost scale times the worst nodal
    admittance leverage, with margin."""
    S = net.base_mva
    price = 1.0
    for g in net.gens:
        c2, c1, _ = g.cost
        mw = max(abs(g.Pmin), abs(g.Pmax)) * S
        price = max(price, (abs(c1) + 2.0 * abs(c2) * mw) * S)
    coef = branch_coefficients(net)
    lever = np.zeros(net.n_bus)
    for k in range(net.n_branch):
        lever[coef.fbus[k]] += abs(coef.g_ff[k]) + abs(coef.b_ff[k])
        lever[coef.tbus[k]] += abs(coef.g_tt[k]) + abs(coef.b_tt[k])
    return 2.0 * price * max(1.0, float(lever.max()))


def dc_split(x, y):
    """Split the product ``x*y`` into its convex pair.

    Returns ``(plus, minus) = ((x+y)^2/4, (x-y)^2/4)`` with
    ``plus - minus == x*y`` to machine precision. Accepts scalars or arrays.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    plus = 0.25 * (x + y) ** 2
    minus = 0.25 * (x - y) ** 2
    if plus.ndim == 0:
        return float(plus), float(minus)
    return plus, minus


#: Tangent families: the concave-side convex term each row linearizes.
#: node-c        c_ii <= |v_i|^2 side (tangent of |v_i|^2)
#: branch-c-lo   lower bound on c_ij (tangent of the (v_i - v_j) grouping)
#: branch-c-hi   upper bound on c_ij (tangent of the (v_i + v_j) grouping)
#: branch-s-lo   lower bound on s_ij (tangent of the "minus" s grouping)
#: branch-s-hi   upper bound on s_ij (tangent of the "plus" s grouping)
TANGENT_FAMILIES = ("node-c", "branch-c-lo", "branch-c-hi", "branch-s-lo", "branch-s-hi")


@dataclass(frozen=True)
class TangentExpr:
    """Affine under-estimator over (v_re_i, v_im_i, v_re_j, v_im_j)."""

    d_re_i: float
    d_im_i: float
    d_re_j: float
    d_im_j: float
    const: float

    def evaluate(self, v_re, v_im, i: int, j: int | None = None) -> float:
        val = self.d_re_i * v_re[i] + self.d_im_i * v_im[i] + self.const
        if j is not None:
            val += self.d_re_j * v_re[j] + self.d_im_j * v_im[j]
        return float(val)


def _groupings(family: str):
    """Signs (sa, sb) such that the convex term is (a + sa*c)^2 + (b + sb*d)^2
    for c families, or (a + sa*d)^2 + (c + sb*b)^2 for s families."""
    return {
        "branch-c-lo": (-1.0, -1.0),
        "branch-c-hi": (+1.0, +1.0),
        "branch-s-hi": (+1.0, -1.0),
        "branch-s-lo": (-1.0, +1.0),
    }[family]


def convex_rhs(family: str, v_re, v_im, i: int, j: int | None = None) -> float:
    """Value of the convex term that :func:`tangent_rhs` under-estimates."""
    if family == "node-c":
        return float(v_re[i] ** 2 + v_im[i] ** 2)
    sa, sb = _groupings(family)
    a, b = v_re[i], v_im[i]
    c, d = v_re[j], v_im[j]
    if family.startswith("branch-c"):
        return float((a + sa * c) ** 2 + (b + sb * d) ** 2)
    return float((a + sa * d) ** 2 + (c + sb * b) ** 2)


def tangent_rhs(family: str, base: BasePoint, i: int, j: int | None = None) -> TangentExpr:
    """First-order tangent of the concave-side convex term at ``base``.

    The returned affine expression equals the convex term exactly at the base
    point and under-estimates it everywhere (the gradient inequality for
    convex functions).
    """
    if family not in TANGENT_FAMILIES:
        raise ValueError(f"unknown tangent family {family}")
    A, B = float(base.v_re[i]), float(base.v_im[i])
    if family == "node-c":
        return TangentExpr(2 * A, 2 * B, 0.0, 0.0, -(A * A + B * B))
    if j is None:
        raise ValueError(f"family {family} needs a second bus")
    C, D = float(base.v_re[j]), float(base.v_im[j])
    sa, sb = _groupings(family)
    if family.startswith("branch-c"):
        g1, g2 = A + sa * C, B + sb * D
        # d/d(a), d/d(c) of (a + sa*c)^2; d/d(b), d/d(d) of (b + sb*d)^2
        return TangentExpr(2 * g1, 2 * g2, 2 * sa * g1, 2 * sb * g2, -(g1 * g1 + g2 * g2))
    g1, g2 = A + sa * D, C + sb * B
    # squares are (a + sa*d)^2 and (c + sb*b)^2
    return TangentExpr(2 * g1, 2 * sb * g2, 2 * g2, 2 * sa * g1, -(g1 * g1 + g2 * g2))


# -- exact reformulation (residual checking substrate) ------------------------


@dataclass(frozen=True)
class DcRow:
    """One inequality of the exact split-form reformulation (<= 0 satisfied)."""

    tag: str
    family: str
    i: int
    j: int


def build_dc_reformulation(net: Network):
    """Exact inequality-pair reformulation of the lifting equalities.

    Returns an object whose ``violations(state)`` maps each row tag to its
    signed constraint value (positive = violated). An exactly-lifted state
    satisfies every row with equality; the worst violation over all rows
    equals the worst lifting residual. Never meant to be solved directly.
    """
    coef = branch_coefficients(net)
    rows = [DcRow(f"node-cvx[{i}]", "node-cvx", i, -1) for i in range(net.n_bus)]
    rows += [DcRow(f"node-conc[{i}]", "node-conc", i, -1) for i in range(net.n_bus)]
    for k in range(net.n_branch):
        i, j = int(coef.fbus[k]), int(coef.tbus[k])
        for fam in ("branch-c-lo", "branch-c-hi", "branch-s-lo", "branch-s-hi"):
            rows.append(DcRow(f"{fam}[{k}]", fam, i, j))

    class _Reformulation:
        def __init__(self, rows, coef):
            self.rows = rows
            self.coef = coef

        def violations(self, x: LiftedState) -> dict[str, float]:
            out = {}
            vr, vi = x.v_re, x.v_im
            for r in self.rows:
                if r.family == "node-cvx":
                    val = (vr[r.i] ** 2 + vi[r.i] ** 2) - x.c_ii[r.i]
                elif r.family == "node-conc":
                    val = x.c_ii[r.i] - (vr[r.i] ** 2 + vi[r.i] ** 2)
                else:
                    k = int(r.tag[r.tag.index("[") + 1 : -1])
                    lift = x.c_ij[k] if "c-" in r.family else x.s_ij[k]
                    sgn = -4.0 if r.family.endswith("lo") else 4.0
                    # convex-LHS <= convex-RHS form: LHS grouping printed on the
                    # left, the opposite grouping on the right.
                    lhs_fam = _opposite(r.family)
                    lhs = convex_rhs(lhs_fam, vr, vi, r.i, r.j)
                    rhs = convex_rhs(r.family, vr, vi, r.i, r.j)
                    val = (lhs + sgn * lift - rhs) / 4.0
                out[r.tag] = float(val)
            return out

        def max_violation(self, x: LiftedState) -> float:
            return max(self.violations(x).values())

    return _Reformulation(rows, coef)


def _opposite(family: str) -> str:
    pair = {
        "branch-c-lo": "branch-c-hi",
        "branch-c-hi": "branch-c-lo",
        "branch-s-lo": "branch-s-hi",
        "branch-s-hi": "branch-s-lo",
    }
    return pair[family]


# -- shared network scaffolding -----------------------------------------------


@dataclass
class CoreHandles:
    """Flat variable offsets of the shared network core of a program."""

    coef: BranchCoefficients
    v_re: np.ndarray | None
    v_im: np.ndarray | None
    c_ii: np.ndarray
    c_ij: np.ndarray
    s_ij: np.ndarray
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray


class _PinnedCore:
    """Anchor state whose voltage block is frozen in a zero-slack program."""

    def __init__(self, anchor: LiftedState):
        self.anchor = anchor


def _add_network_core(
    p: ConvexProgram,
    net: Network,
    coef: BranchCoefficients,
    include_voltage: bool = True,
    balance_extra_p: dict[int, list[tuple[int, float]]] | None = None,
    balance_extra_q: dict[int, list[tuple[int, float]]] | None = None,
    drop_bus_shunt_b: set[int] | None = None,
    pinned: "_PinnedCore | None" = None,
) -> CoreHandles:
    """Variables, balance, flow-definition, and thermal rows shared by models.

    ``balance_extra_*`` inject additional (flat index, coefficient) terms into
    a bus's balance row; ``drop_bus_shunt_b`` removes the fixed shunt
    susceptance term for the listed bus positions (used when a switchable
    bank replaces it). With ``pinned`` the whole voltage block is fixed to the
    anchor's values and the voltage-magnitude box is checked rather than
    imposed.
    """
    n, m = net.n_bus, net.n_branch
    vmin = np.array([b.Vmin for b in net.buses])
    vmax = np.array([b.Vmax for b in net.buses])
    ref = net.ref_bus

    if pinned is not None:
        a = pinned.anchor
        v_re = p.add_group("v_re", a.v_re, a.v_re)
        v_im = p.add_group("v_im", a.v_im, a.v_im)
        c_ii = p.add_group("c_ii", a.c_ii, a.c_ii)
        c_ij = p.add_group("c_ij", a.c_ij, a.c_ij)
        s_ij = p.add_group("s_ij", a.s_ij, a.s_ij)
        for i in range(n):
            if not (vmin[i] ** 2 - 1e-12 <= a.c_ii[i] <= vmax[i] ** 2 + 1e-12):
                p.add_lin([], [], -1.0, "<=", f"bound-v[{i}]")
        p_from = p.add_group("p_from", a.p_from, a.p_from)
        q_from = p.add_group("q_from", a.q_from, a.q_from)
        p_to = p.add_group("p_to", a.p_to, a.p_to)
        q_to = p.add_group("q_to", a.q_to, a.q_to)
        p_g = p.add_group("p_g", [g.Pmin for g in net.gens], [g.Pmax for g in net.gens])
        q_g = p.add_group("q_g", [g.Qmin for g in net.gens], [g.Qmax for g in net.gens])
    else:
        if include_voltage:
            lb_re = -vmax.copy()
            lb_re[ref] = 0.0  # reference orientation: positive real axis
            v_re = p.add_group("v_re", lb_re, vmax)
            v_im = p.add_group("v_im", -vmax, vmax)
        else:
            v_re = v_im = None
        c_ii = p.add_group("c_ii", vmin**2, vmax**2)
        cmax = vmax[coef.fbus] * vmax[coef.tbus]
        c_ij = p.add_group("c_ij", -cmax, cmax)
        s_ij = p.add_group("s_ij", -cmax, cmax)
        inf = np.full(m, np.inf)
        p_from = p.add_group("p_from", -inf, inf)
        q_from = p.add_group("q_from", -inf, inf)
        p_to = p.add_group("p_to", -inf, inf)
        q_to = p.add_group("q_to", -inf, inf)
        p_g = p.add_group("p_g", [g.Pmin for g in net.gens], [g.Pmax for g in net.gens])
        q_g = p.add_group("q_g", [g.Qmin for g in net.gens], [g.Qmax for g in net.gens])

    if include_voltage and pinned is None:
        p.add_lin([v_im[ref]], [1.0], 0.0, "==", "ref-angle")

    # Directed-flow definitions: four affine equalities per branch.
    for k in range(m):
        f, t = int(coef.fbus[k]), int(coef.tbus[k])
        p.add_lin(
            [p_from[k], c_ii[f], c_ij[k], s_ij[k]],
            [1.0, -coef.g_ff[k], -coef.pc_f[k], -coef.ps_f[k]],
            0.0,
            "==",
            f"flow-pf[{k}]",
        )
        p.add_lin(
            [q_from[k], c_ii[f], c_ij[k], s_ij[k]],
            [1.0, -coef.b_ff[k], -coef.qc_f[k], -coef.qs_f[k]],
            0.0,
            "==",
            f"flow-qf[{k}]",
        )
        p.add_lin(
            [p_to[k], c_ii[t], c_ij[k], s_ij[k]],
            [1.0, -coef.g_tt[k], -coef.pc_t[k], -coef.ps_t[k]],
            0.0,
            "==",
            f"flow-pt[{k}]",
        )
        p.add_lin(
            [q_to[k], c_ii[t], c_ij[k], s_ij[k]],
            [1.0, -coef.b_tt[k], -coef.qc_t[k], -coef.qs_t[k]],
            0.0,
            "==",
            f"flow-qt[{k}]",
        )

    # Nodal balance rows.
    idx = net.bus_index()
    gens_at: dict[int, list[int]] = {}
    for gk, g in enumerate(net.gens):
        gens_at.setdefault(idx[g.bus], []).append(gk)
    from_at: dict[int, list[int]] = {}
    to_at: dict[int, list[int]] = {}
    for k in range(m):
        from_at.setdefault(int(coef.fbus[k]), []).append(k)
        to_at.setdefault(int(coef.tbus[k]), []).append(k)

    for b in range(n):
        bus = net.buses[b]
        pidx, pcoef = [], []
        qidx, qcoef = [], []
        for gk in gens_at.get(b, []):
            pidx.append(p_g[gk])
            pcoef.append(1.0)
            qidx.append(q_g[gk])
            qcoef.append(1.0)
        for k in from_at.get(b, []):
            pidx.append(p_from[k])
            pcoef.append(-1.0)
            qidx.append(q_from[k])
            qcoef.append(-1.0)
        for k in to_at.get(b, []):
            pidx.append(p_to[k])
            pcoef.append(-1.0)
            qidx.append(q_to[k])
            qcoef.append(-1.0)
        if bus.G_sh != 0.0:
            pidx.append(c_ii[b])
            pcoef.append(-bus.G_sh)
        if bus.B_sh != 0.0 and not (drop_bus_shunt_b and b in drop_bus_shunt_b):
            qidx.append(c_ii[b])
            qcoef.append(bus.B_sh)
        for i, c in (balance_extra_p or {}).get(b, []):
            pidx.append(i)
            pcoef.append(c)
        for i, c in (balance_extra_q or {}).get(b, []):
            qidx.append(i)
            qcoef.append(c)
        p.add_lin(pidx, pcoef, bus.Pd, "==", f"balance-p[{bus.id}]")
        p.add_lin(qidx, qcoef, bus.Qd, "==", f"balance-q[{bus.id}]")

    # Thermal limits on both orientations; zero rating means unlimited.
    for k, e in enumerate(net.branches):
        if e.S_max <= 0:
            continue
        lim = e.S_max**2
        p.add_quad(
            [([p_from[k]], [1.0], 0.0), ([q_from[k]], [1.0], 0.0)],
            [], [], lim, f"thermal-from[{k}]",
        )
        p.add_quad(
            [([p_to[k]], [1.0], 0.0), ([q_to[k]], [1.0], 0.0)],
            [], [], lim, f"thermal-to[{k}]",
        )

    return CoreHandles(
        coef=coef, v_re=v_re, v_im=v_im, c_ii=c_ii, c_ij=c_ij, s_ij=s_ij,
        p_from=p_from, q_from=q_from, p_to=p_to, q_to=q_to, p_g=p_g, q_g=q_g,
    )


def _cost_objective(p: ConvexProgram, h: CoreHandles, net: Network) -> None:
    S = net.base_mva
    qidx, qcoef, lidx, lcoef = [], [], [], []
    const = 0.0
    for k, g in enumerate(net.gens):
        c2, c1, c0 = g.cost
        if c2 != 0.0:
            qidx.append(h.p_g[k])
            qcoef.append(c2 * S * S)
        if c1 != 0.0:
            lidx.append(h.p_g[k])
            lcoef.append(c1 * S)
        const += c0
    p.set_objective(qidx, qcoef, lidx, lcoef, const)


def _projection_objective(p: ConvexProgram, h: CoreHandles, net: Network, target) -> None:
    target = np.asarray(target, float)
    if len(target) != net.n_gen:
        raise ValueError("projection target length must equal generator count")
    p.set_objective(
        h.p_g, np.ones(net.n_gen), h.p_g, -2.0 * target, float(target @ target)
    )


def set_model_objective(
    p: ConvexProgram, h: CoreHandles, net: Network, objective: str, target=None
) -> None:
    """Attach the cost or dispatch-projection objective to a built program."""
    if objective == "cost":
        _cost_objective(p, h, net)
    elif objective == "projection":
        _projection_objective(p, h, net, target)
    else:
        raise ValueError(f"unknown objective {objective}")
    if p.slacks is not None and p.slacks.rho > 0:
        for grp in (p.slacks.node, p.slacks.branch_c, p.slacks.branch_s):
            if grp is not None and len(grp):
                p.add_objective_lin(grp, np.full(len(grp), p.slacks.rho))


def add_qcac_lift_rows(
    p: ConvexProgram,
    h: CoreHandles,
    net: Network,
    base: BasePoint,
    rho: float,
    slacks_enabled: bool = True,
) -> None:
    """Convexified lifting rows: convex sides kept, concave sides tangent-ized.

    Node rows share one slack per bus; the two c_ij rows of a branch share one
    slack, as do the two s_ij rows. The convex node inequality is exact and
    carries no slack.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    n, m = net.n_bus, net.n_branch
    if len(base.v_re) != n:
        raise ValueError("base point does not match network size")
    coef = h.coef
    if slacks_enabled:
        xi_n = p.add_group("xi_c_node", np.zeros(n), np.full(n, np.inf))
        xi_c = p.add_group("xi_c_branch", np.zeros(m), np.full(m, np.inf))
        xi_s = p.add_group("xi_s_branch", np.zeros(m), np.full(m, np.inf))
        p.slacks = SlackSet(node=xi_n, branch_c=xi_c, branch_s=xi_s, rho=rho)
    else:
        xi_n = xi_c = xi_s = None
        p.slacks = SlackSet(node=None, branch_c=None, branch_s=None, rho=rho)

    vr, vi, cii = h.v_re, h.v_im, h.c_ii
    for i in range(n):
        # Convex side: |v_i|^2 <= c_ii.
        p.add_quad(
            [([vr[i]], [1.0], 0.0), ([vi[i]], [1.0], 0.0)],
            [cii[i]], [-1.0], 0.0, f"lift-node-cvx[{i}]",
        )
        # Concave side tangent: c_ii <= 2 V.v - |V|^2 (+ slack).
        t = tangent_rhs("node-c", base, i)
        idxs = [cii[i], vr[i], vi[i]]
        coefs = [1.0, -t.d_re_i, -t.d_im_i]
        if xi_n is not None:
            idxs.append(xi_n[i])
            coefs.append(-1.0)
        p.add_lin(idxs, coefs, t.const, "<=", f"lift-node-c[{i}]")

    for k in range(m):
        i, j = int(coef.fbus[k]), int(coef.tbus[k])
        a, b = vr[i], vi[i]
        c, d = vr[j], vi[j]
        for fam, lift_idx, sgn, xi in (
            ("branch-c-lo", h.c_ij[k], -4.0, xi_c),
            ("branch-c-hi", h.c_ij[k], +4.0, xi_c),
            ("branch-s-lo", h.s_ij[k], -4.0, xi_s),
            ("branch-s-hi", h.s_ij[k], +4.0, xi_s),
        ):
            lhs_fam = _opposite(fam)
            sa, sb = _groupings(lhs_fam)
            if fam.startswith("branch-c"):
                squares = [([a, c], [1.0, sa], 0.0), ([b, d], [1.0, sb], 0.0)]
            else:
                squares = [([a, d], [1.0, sa], 0.0), ([c, b], [1.0, sb], 0.0)]
            t = tangent_rhs(fam, base, i, j)
            lin_idx = [lift_idx, a, b, c, d]
            lin_coef = [sgn, -t.d_re_i, -t.d_im_i, -t.d_re_j, -t.d_im_j]
            if xi is not None:
                lin_idx.append(xi[k])
                lin_coef.append(-1.0)
            p.add_quad(squares, lin_idx, lin_coef, t.const, f"lift-{fam}[{k}]")


def build_qcac(
    net: Network,
    base: BasePoint,
    rho: float = DEFAULT_RHO,
    slacks_enabled: bool = True,
    objective: str = "cost",
    target=None,
) -> ConvexProgram:
    """Convex quadratically-constrained approximation anchored at ``base``.

    With slacks enabled the program is always feasible; with all slacks at
    zero its feasible set is contained in the exact AC feasible set. Row
    metadata tags identify each constraint family.

    The zero-slack program is presolved: the paired node rows force
    ``|v - V|^2 <= 0``, so every feasible point has its voltage block pinned
    to the anchor's exact lifted state. The builder fixes those variables
    (exactly preserving the feasible set) and leaves dispatch and flows free;
    the program is infeasible when the anchor itself violates network limits.
    """
    p = ConvexProgram()
    coef = branch_coefficients(net)
    if slacks_enabled:
        h = _add_network_core(p, net, coef)
        add_qcac_lift_rows(p, h, net, base, rho, slacks_enabled)
        set_model_objective(p, h, net, objective, target)
        return p

    if len(base.v_re) != net.n_bus:
        raise ValueError("base point does not match network size")
    anchor = lifted_from_voltages(net, base.v_re, base.v_im, coef=coef)
    pin = _PinnedCore(anchor)
    h = _add_network_core(p, net, coef, pinned=pin)
    p.slacks = SlackSet(node=None, branch_c=None, branch_s=None, rho=rho)
    if abs(float(base.v_im[net.ref_bus])) > 1e-9:
        p.add_lin([], [], -1.0, "<=", "zero-slack-anchor-unrotated")
    set_model_objective(p, h, net, objective, target)
    return p


def add_ts_lift_rows(p: ConvexProgram, h: CoreHandles, net: Network, base: BasePoint) -> None:
    """Full first-order linearization of the three lifting identities."""
    n, m = net.n_bus, net.n_branch
    if len(base.v_re) != n:
        raise ValueError("base point does not match network size")
    coef = h.coef
    vr, vi, cii = h.v_re, h.v_im, h.c_ii
    A, B = base.v_re, base.v_im
    for i in range(n):
        # c_ii = 2(A a + B b) - (A^2 + B^2), linearized exactly at the base.
        p.add_lin(
            [cii[i], vr[i], vi[i]],
            [1.0, -2 * A[i], -2 * B[i]],
            -(A[i] ** 2 + B[i] ** 2),
            "==",
            f"lift-ts-node[{i}]",
        )
    for k in range(m):
        i, j = int(coef.fbus[k]), int(coef.tbus[k])
        # c_ij = a*c + b*d around base (A_i, B_i, A_j, B_j).
        p.add_lin(
            [h.c_ij[k], vr[i], vr[j], vi[i], vi[j]],
            [1.0, -A[j], -A[i], -B[j], -B[i]],
            -(A[i] * A[j] + B[i] * B[j]),
            "==",
            f"lift-ts-c[{k}]",
        )
        # s_ij = a*d - c*b around base.
        p.add_lin(
            [h.s_ij[k], vr[i], vi[j], vr[j], vi[i]],
            [1.0, -B[j], -A[i], B[i], A[j]],
            -(A[i] * B[j] - A[j] * B[i]),
            "==",
            f"lift-ts-s[{k}]",
        )


def build_ts(
    net: Network, base: BasePoint, objective: str = "cost", target=None
) -> ConvexProgram:
    """Taylor-series baseline: lifting identities fully linearized at ``base``."""
    p = ConvexProgram()
    coef = branch_coefficients(net)
    h = _add_network_core(p, net, coef)
    add_ts_lift_rows(p, h, net, base)
    set_model_objective(p, h, net, objective, target)
    return p


def add_soc_lift_rows(p: ConvexProgram, h: CoreHandles, net: Network) -> None:
    """Rotated-cone relaxation rows ``c_ij^2 + s_ij^2 <= c_ii c_jj``."""
    coef = h.coef
    for k in range(net.n_branch):
        i, j = int(coef.fbus[k]), int(coef.tbus[k])
        p.add_soc(
            ([h.c_ii[i]], [1.0], 0.0),
            ([h.c_ii[j]], [1.0], 0.0),
            [([h.c_ij[k]], [1.0], 0.0), ([h.s_ij[k]], [1.0], 0.0)],
            f"lift-soc[{k}]",
        )


def build_soc(net: Network, objective: str = "cost", target=None) -> ConvexProgram:
    """Second-order-cone relaxation baseline; needs no base point.

    Voltage rectangular variables are dropped: the relaxation constrains only
    the lifted variables, so its optimal value lower-bounds the AC optimum.
    """
    p = ConvexProgram()
    coef = branch_coefficients(net)
    h = _add_network_core(p, net, coef, include_voltage=False)
    add_soc_lift_rows(p, h, net)
    set_model_objective(p, h, net, objective, target)
    return p


def state_from_primal(net: Network, primal: dict[str, np.ndarray]) -> LiftedState:
    """Assemble a :class:`LiftedState` from solved program variables.

    Programs without voltage variables (the cone relaxation) get voltages
    recovered from the lifted products: magnitudes from ``c_ii`` and angles
    accumulated over a breadth-first spanning tree from the reference bus.
    """
    coef = branch_coefficients(net)
    n = net.n_bus
    if "v_re" in primal:
        v_re = primal["v_re"]
        v_im = primal["v_im"]
    else:
        theta = np.zeros(n)
        seen = np.zeros(n, bool)
        ref = net.ref_bus
        seen[ref] = True
        adj: dict[int, list[tuple[int, float, bool]]] = {}
        for k in range(net.n_branch):
            i, j = int(coef.fbus[k]), int(coef.tbus[k])
            dtheta = float(np.arctan2(primal["s_ij"][k], primal["c_ij"][k]))
            adj.setdefault(i, []).append((j, dtheta, True))
            adj.setdefault(j, []).append((i, dtheta, False))
        frontier = [ref]
        while frontier:
            i = frontier.pop()
            for j, dtheta, fwd in adj.get(i, []):
                if not seen[j]:
                    seen[j] = True
                    # s_ij measures the angle of bus j relative to bus i.
                    theta[j] = theta[i] + (dtheta if fwd else -dtheta)
                    frontier.append(j)
        vm = np.sqrt(np.maximum(primal["c_ii"], 0.0))
        v_re = vm * np.cos(theta)
        v_im = vm * np.sin(theta)
    return LiftedState(
        v_re=np.asarray(v_re, float),
        v_im=np.asarray(v_im, float),
        c_ii=primal["c_ii"],
        c_ij=primal["c_ij"],
        s_ij=primal["s_ij"],
        p_from=primal["p_from"],
        q_from=primal["q_from"],
        p_to=primal["p_to"],
        q_to=primal["q_to"],
        p_g=primal["p_g"],
        q_g=primal["q_g"],
    )
