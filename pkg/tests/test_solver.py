"""Convex-solver contract and sequential-driver tests."""

import numpy as np
import pytest

from qcacopf.acmodel import BasePoint, newton_power_flow, objective, residual_report
from qcacopf.dcc import ConvexProgram, build_qcac
from qcacopf.solver import (
    SeqConfig,
    SolverSettings,
    interior_start,
    project_dispatch,
    sequential_qcac,
    solve_convex,
    trace_to_csv,
)


class TestSolveConvex:
    def test_quadratic_with_halfspace(self):
        p = ConvexProgram()
        x = p.add_group("x", [-np.inf], [np.inf])
        p.add_lin([x[0]], [-1.0], -3.0, "<=", "ge3")
        p.set_objective([x[0]], [1.0], [], [])
        res = solve_convex(p)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(9.0, abs=1e-6)
        assert res.primal["x"][0] == pytest.approx(3.0, abs=1e-6)

    def test_infeasible_pair(self):
        p = ConvexProgram()
        x = p.add_group("x", [-np.inf], [np.inf])
        p.add_lin([x[0]], [1.0], 0.0, "<=", "le0")
        p.add_lin([x[0]], [-1.0], -1.0, "<=", "ge1")
        p.set_objective([], [], [x[0]], [1.0])
        assert solve_convex(p).status == "infeasible"

    def test_equality_qp(self):
        p = ConvexProgram()
        x = p.add_group("x", [-10, -10], [10, 10])
        p.add_lin([x[0], x[1]], [1.0, 1.0], 1.0, "==", "sum1")
        p.set_objective(x, [1.0, 1.0], [], [])
        res = solve_convex(p)
        assert res.status == "optimal"
        assert res.primal["x"] == pytest.approx([0.5, 0.5], abs=1e-7)

    def test_quadratic_constraint(self):
        # minimize x + y subject to x^2 + y^2 <= 2
        p = ConvexProgram()
        x = p.add_group("x", [-10, -10], [10, 10])
        p.add_quad([([x[0]], [1.0], 0.0), ([x[1]], [1.0], 0.0)], [], [], 2.0, "ball")
        p.set_objective([], [], x, [1.0, 1.0])
        res = solve_convex(p)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(-2.0, abs=1e-5)

    def test_rotated_cone_via_cuts(self):
        # minimize u + w subject to z^2 <= u*w with z pinned at 2: optimum 4.
        p = ConvexProgram()
        v = p.add_group("v", [0.0, 0.0, 2.0], [10.0, 10.0, 2.0])
        p.add_soc(([v[0]], [1.0], 0.0), ([v[1]], [1.0], 0.0),
                  [([v[2]], [1.0], 0.0)], "cone")
        p.set_objective([], [], [v[0], v[1]], [1.0, 1.0])
        res = solve_convex(p)
        assert res.objective == pytest.approx(4.0, abs=1e-4)

    def test_optimal_result_satisfies_rows(self, net30, ref30):
        prog = build_qcac(net30, BasePoint(ref30.state.v_re, ref30.state.v_im))
        res = solve_convex(prog, interior_start(prog, net30, ref30.state))
        assert res.status == "optimal"
        full = np.concatenate([res.primal[g] for g in prog.group_names])
        assert prog.max_violation(full) < 1e-6

    def test_determinism(self, net2, newton2):
        prog1 = build_qcac(net2, BasePoint(newton2.v_re, newton2.v_im))
        prog2 = build_qcac(net2, BasePoint(newton2.v_re, newton2.v_im))
        r1 = solve_convex(prog1, interior_start(prog1, net2, newton2))
        r2 = solve_convex(prog2, interior_start(prog2, net2, newton2))
        assert r1.objective == r2.objective
        np.testing.assert_array_equal(r1.primal["p_g"], r2.primal["p_g"])

    @pytest.mark.cvxpy
    def test_cross_solver_on_serialized_program(self, net30, ref30):
        """Independent reconstruction of the serialized program must agree."""
        cvxpy = pytest.importorskip("cvxpy")
        import json

        prog = build_qcac(net30, BasePoint(ref30.state.v_re, ref30.state.v_im), rho=1e3)
        mine = solve_convex(prog, interior_start(prog, net30, ref30.state))
        assert mine.status == "optimal"

        doc = json.loads(prog.to_json())
        sizes = [len(g["lb"]) for g in doc["variables"]]
        ntot = sum(sizes)
        x = cvxpy.Variable(ntot)
        cons = []
        lb = np.concatenate([g["lb"] for g in doc["variables"]])
        ub = np.concatenate([g["ub"] for g in doc["variables"]])
        fin = np.isfinite(lb)
        if fin.any():
            cons.append(x[np.flatnonzero(fin)] >= lb[fin])
        fin = np.isfinite(ub)
        if fin.any():
            cons.append(x[np.flatnonzero(fin)] <= ub[fin])
        for row in doc["linear"]:
            expr = cvxpy.sum(cvxpy.multiply(np.array(row["coef"]), x[np.array(row["idx"], int)]))
            cons.append(expr == row["rhs"] if row["sense"] == "==" else expr <= row["rhs"])
        for row in doc["quadratic"]:
            qi = np.array(row["q_i"], int)
            qj = np.array(row["q_j"], int)
            qv = np.array(row["q_v"], float)
            quad = 0
            for i, j, v in zip(qi, qj, qv):
                quad = quad + (0.5 * v * cvxpy.square(x[i]) if i == j
                               else v * x[i] * x[j])
            lin = cvxpy.sum(cvxpy.multiply(np.array(row["lin_coef"]),
                                           x[np.array(row["lin_idx"], int)])) \
                if row["lin_idx"] else 0
            cons.append(quad + lin <= row["rhs"])
        o = doc["objective"]
        obj = cvxpy.sum(cvxpy.multiply(np.array(o["quad_coef"]),
                                       cvxpy.square(x[np.array(o["quad_idx"], int)])))
        obj = obj + cvxpy.sum(cvxpy.multiply(np.array(o["lin_coef"]),
                                             x[np.array(o["lin_idx"], int)]))
        problem = cvxpy.Problem(cvxpy.Minimize(obj + o["const"]), cons)
        problem.solve(solver=cvxpy.CLARABEL)
        assert problem.status == "optimal"
        assert mine.objective == pytest.approx(problem.value, rel=1e-6)


class TestSequential:
    def test_feasible_start_monotone_slack(self, net30, newton30, ref30):
        trace = ref30.trace
        assert len(trace) >= 1
        slacks = [t.max_slack for t in trace]
        for a, b in zip(slacks, slacks[1:]):
            assert b <= max(a * (1 + 1e-6), 1e-7)
        assert ref30.converged

    def test_terminal_slack_implies_residuals(self, net30, ref30):
        assert ref30.trace[-1].max_slack < 1e-7
        rep = residual_report(net30, ref30.state)
        for fam in ("lift-cii", "lift-cij", "lift-sij", "balance-p", "balance-q"):
            assert rep.families[fam][0] < 1e-5

    def test_two_bus_flat_start_matches_nlp(self, net2):
        """Independent local NLP solve (scipy SLSQP on the rectangular
        formulation) agrees with the sequential result within 1e-4 relative."""
        from scipy.optimize import minimize

        res = sequential_qcac(net2, BasePoint.flat(net2))
        assert res.converged
        cost_seq = objective(net2, res.state)

        e = net2.branches[0]
        g_, b_, bc = e.G, e.B, e.B_charge
        gen = net2.gens[0]
        S = net2.base_mva
        c2, c1, _ = gen.cost

        def unpack(z):
            v = np.array([z[0], z[1] + 1j * z[2]])
            v = np.array([complex(z[0], 0.0), complex(z[1], z[2])])
            return v

        def cost(z):
            return c2 * (z[3] * S) ** 2 + c1 * z[3] * S

        def cons_balance(z):
            v = unpack(z)
            y = complex(g_, b_)
            ych = 1j * bc / 2
            i1 = (y + ych) * v[0] - y * v[1]
            i2 = -y * v[0] + (y + ych) * v[1]
            s1 = v[0] * np.conj(i1)
            s2 = v[1] * np.conj(i2)
            return np.array([
                z[3] - s1.real,
                z[4] - s1.imag,
                -net2.buses[1].Pd - s2.real,
                -net2.buses[1].Qd - s2.imag,
            ])

        z0 = np.array([1.0, 1.0, 0.0, 0.55, 0.25])
        out = minimize(
            cost, z0, method="SLSQP",
            constraints=[{"type": "eq", "fun": cons_balance}],
            bounds=[(0.9, 1.1), (-1.1, 1.1), (-1.1, 1.1),
                    (gen.Pmin, gen.Pmax), (gen.Qmin, gen.Qmax)],
            options={"maxiter": 500, "ftol": 1e-12},
        )
        assert out.success
        assert cost_seq == pytest.approx(out.fun, rel=1e-4)

    def test_trace_csv_format(self, ref30):
        text = trace_to_csv(ref30.trace)
        lines = text.strip().splitlines()
        assert lines[0] == "iter,objective,max_slack,rho,time_s"
        assert len(lines) == len(ref30.trace) + 1

    def test_seqconfig_validation(self):
        with pytest.raises(ValueError):
            SeqConfig(rho_growth=0.5)
        with pytest.raises(ValueError):
            SeqConfig(max_outer_iters=0)


class TestProjection:
    def test_fixed_point(self, net2, ref2):
        target = ref2.state.p_g.copy()
        projected, report, seq = project_dispatch(
            net2, target, BasePoint(ref2.state.v_re, ref2.state.v_im))
        assert np.max(np.abs(projected - target)) < 1e-6

    def test_projection_self_consistency(self, net2, ref2):
        target = ref2.state.p_g + 0.3
        projected, report, seq = project_dispatch(
            net2, target, BasePoint(ref2.state.v_re, ref2.state.v_im))
        for fam in ("lift-cii", "lift-cij", "lift-sij"):
            assert report.families[fam][0] < 1e-5

    def test_two_bus_grid_search(self, net2, ref2):
        """Grid search over the 2-dof feasible manifold (|V1|, |V2| setpoint
        free; dispatch from the power flow) brackets the projection."""
        from qcacopf.acmodel import Dispatch

        target = np.array([0.8])
        projected, _rep, _ = project_dispatch(
            net2, target, BasePoint(ref2.state.v_re, ref2.state.v_im))
        best = np.inf
        for vset in np.linspace(0.94, 1.1, 33):
            for pg in np.linspace(0.4, 0.9, 51):
                try:
                    st_ = newton_power_flow(net2, Dispatch(np.array([pg]), np.array([vset])))
                except Exception:
                    continue
                from qcacopf.acmodel import bound_violations

                if max(np.max(v, initial=0.0) for v in bound_violations(net2, st_).values()) > 1e-9:
                    continue
                best = min(best, abs(st_.p_g[0] - target[0]))
        assert abs(projected[0] - target[0]) <= best + 1e-3

    def test_bad_target_length(self, net2, ref2):
        with pytest.raises(ValueError):
            project_dispatch(net2, np.ones(5), BasePoint(ref2.state.v_re, ref2.state.v_im))
