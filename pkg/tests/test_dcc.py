"""Difference-of-convex core and program-builder tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcacopf.acmodel import BasePoint, lifted_from_voltages, newton_power_flow
from qcacopf.dcc import (
    TANGENT_FAMILIES,
    ConvexProgram,
    build_dc_reformulation,
    build_qcac,
    build_soc,
    build_ts,
    convex_rhs,
    dc_split,
    state_from_primal,
    suggested_rho,
    tangent_rhs,
)
from qcacopf.solver import interior_start, solve_convex

from conftest import lifted_to_flat


class TestDcSplit:
    def test_identity_case(self):
        plus, minus = dc_split(1.0, 1.0)
        assert (plus, minus) == (1.0, 0.0)

    def test_arithmetic(self):
        plus, minus = dc_split(2.0, -3.0)
        assert plus == pytest.approx(0.25)
        assert minus == pytest.approx(6.25)
        assert plus - minus == pytest.approx(-6.0)

    def test_bulk_random_pairs(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-10, 10, 100_000)
        y = rng.uniform(-10, 10, 100_000)
        plus, minus = dc_split(x, y)
        assert np.max(np.abs(plus - minus - x * y)) < 1e-12

    @given(x=st.floats(-10, 10), y=st.floats(-10, 10))
    @settings(max_examples=200, deadline=None)
    def test_identity_property(self, x, y):
        plus, minus = dc_split(x, y)
        assert plus >= 0 and minus >= 0
        assert abs(plus - minus - x * y) < 1e-12


def random_base(rng, n=4):
    v_re = rng.uniform(0.9, 1.1, n) * np.cos(rng.uniform(-0.5, 0.5, n))
    v_im = rng.uniform(0.9, 1.1, n) * np.sin(rng.uniform(-0.5, 0.5, n))
    return BasePoint(v_re, v_im)


class TestTangent:
    def test_tangency_at_base(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            base = random_base(rng)
            for fam in TANGENT_FAMILIES:
                i, j = 1, 2
                t = tangent_rhs(fam, base, i, None if fam == "node-c" else j)
                val = t.evaluate(base.v_re, base.v_im, i, None if fam == "node-c" else j)
                ref = convex_rhs(fam, base.v_re, base.v_im, i, None if fam == "node-c" else j)
                assert val == pytest.approx(ref, abs=1e-10)

    def test_global_under_estimation(self):
        rng = np.random.default_rng(4)
        for _ in range(2000):
            base = random_base(rng)
            v_re = rng.uniform(-1.2, 1.2, 4)
            v_im = rng.uniform(-1.2, 1.2, 4)
            for fam in TANGENT_FAMILIES:
                j = None if fam == "node-c" else 2
                t = tangent_rhs(fam, base, 1, j)
                assert t.evaluate(v_re, v_im, 1, j) <= convex_rhs(fam, v_re, v_im, 1, j) + 1e-10

    def test_scalar_convexification_example(self):
        """Splitting y >= x^2 - |x| and tangent-izing |x| at x=1 yields
        y >= x^2 - x, which coincides with the true set for x >= 0 and is a
        strict inner subset for x < 0; the full linearization y >= x - 1 is
        tight only at the expansion point."""
        def tangent_abs_at_1(x):
            return x  # d|x|/dx at x=1 is 1

        xs = np.linspace(0.0, 2.0, 101)
        np.testing.assert_allclose(xs**2 - np.abs(xs), xs**2 - tangent_abs_at_1(xs))
        for x in (-2.0, -1.0, -0.3):
            assert x**2 - tangent_abs_at_1(x) > x**2 - abs(x)
        # Point feasible for the full linearization but outside the true set:
        x, y = -1.0, -1.5
        assert y >= x - 1.0  # linearized boundary admits it
        assert y < x**2 - abs(x)  # the true constraint rejects it

    def test_unknown_family_rejected(self):
        base = BasePoint(np.ones(2), np.zeros(2))
        with pytest.raises(ValueError):
            tangent_rhs("nope", base, 0, 1)


class TestDcReformulation:
    def test_exact_state_on_the_boundary(self, net30, newton30):
        ref = build_dc_reformulation(net30)
        assert ref.max_violation(newton30) < 1e-12

    def test_inflated_c_violates_concave_side(self, net2, newton2):
        ref = build_dc_reformulation(net2)
        bumped = lifted_from_voltages(net2, newton2.v_re, newton2.v_im)
        bumped.c_ii = bumped.c_ii + 0.1
        viol = ref.violations(bumped)
        assert viol["node-conc[0]"] == pytest.approx(0.1)
        assert viol["node-conc[1]"] == pytest.approx(0.1)

    def test_max_violation_equals_lift_residual(self, net57):
        from qcacopf.acmodel import lifting_residuals

        rng = np.random.default_rng(5)
        ref = build_dc_reformulation(net57)
        st_ = newton_power_flow(net57)
        for _ in range(5):
            x = lifted_from_voltages(net57, st_.v_re, st_.v_im)
            x.c_ii = x.c_ii + rng.normal(0, 1e-3, net57.n_bus)
            x.c_ij = x.c_ij + rng.normal(0, 1e-3, net57.n_branch)
            x.s_ij = x.s_ij + rng.normal(0, 1e-3, net57.n_branch)
            lift = lifting_residuals(net57, x)
            worst_lift = max(np.max(np.abs(v)) for v in lift.values())
            assert ref.max_violation(x) == pytest.approx(worst_lift, abs=1e-12)


class TestProgramContainer:
    def test_group_bookkeeping(self):
        p = ConvexProgram()
        a = p.add_group("a", [0, 0], [1, 1])
        b = p.add_group("b", [-1], [1])
        assert list(a) == [0, 1]
        assert list(b) == [2]
        assert p.n_var == 3

    def test_duplicate_group_rejected(self):
        p = ConvexProgram()
        p.add_group("a", [0], [1])
        with pytest.raises(ValueError):
            p.add_group("a", [0], [1])

    def test_psd_check_on_json_load(self):
        p = ConvexProgram()
        p.add_group("x", [-1, -1], [1, 1])
        p.set_objective([], [], [0], [1.0])
        doc = p.to_json()
        import json

        parsed = json.loads(doc)
        # Inject an indefinite quadratic row: x0*x1 alone has eigenvalues +-1.
        parsed["quadratic"].append(
            {"q_i": [0], "q_j": [1], "q_v": [2.0], "lin_idx": [], "lin_coef": [],
             "rhs": 0.0, "tag": "bad"}
        )
        with pytest.raises(ValueError, match="eigenvalue"):
            ConvexProgram.from_json(json.dumps(parsed))

    def test_json_round_trip_evaluates_identically(self, net2, newton2):
        prog = build_qcac(net2, BasePoint(newton2.v_re, newton2.v_im), rho=10.0)
        again = ConvexProgram.from_json(prog.to_json())
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, prog.n_var)
        assert again.objective_value(x) == pytest.approx(prog.objective_value(x), rel=1e-12)
        assert again.max_violation(x) == pytest.approx(prog.max_violation(x), rel=1e-9, abs=1e-9)


class TestBuildQcac:
    def test_anchor_witness_zero_slack(self, net2, ref2):
        st_ = ref2.state
        prog = build_qcac(net2, BasePoint(st_.v_re, st_.v_im), rho=1e3)
        x = lifted_to_flat(prog, st_)  # slacks stay zero
        assert prog.max_violation(x) < 1e-7

    def test_metadata_tags_cover_families(self, net2, newton2):
        prog = build_qcac(net2, BasePoint(newton2.v_re, newton2.v_im))
        tags = [r.tag for r in prog.lin_rows] + [r.tag for r in prog.quad_rows]
        for fam in ("balance-p", "balance-q", "flow-pf", "lift-node-cvx",
                    "lift-node-c", "lift-branch-c-lo", "lift-branch-c-hi",
                    "lift-branch-s-lo", "lift-branch-s-hi", "thermal-from"):
            assert any(t.startswith(fam) for t in tags), fam

    def test_sparsity_of_lift_rows(self, net30, newton30):
        """Every convexified row touches only its own bus or branch endpoints."""
        prog = build_qcac(net30, BasePoint(newton30.v_re, newton30.v_im))
        coef_net = {"v_re", "v_im", "c_ii"}
        n = net30.n_bus
        gi = {name: prog.group_indices(name) for name in prog.group_names}

        def owner(flat):
            for name, idx in gi.items():
                if idx[0] <= flat <= idx[-1]:
                    return name, flat - idx[0]
            raise AssertionError

        from qcacopf.acmodel import branch_coefficients

        coefs = branch_coefficients(net30)
        for row in prog.quad_rows + prog.lin_rows:
            if not row.tag.startswith("lift-"):
                continue
            k = int(row.tag[row.tag.index("[") + 1 : -1])
            if "node" in row.tag:
                allowed_buses = {k}
            else:
                allowed_buses = {int(coefs.fbus[k]), int(coefs.tbus[k])}
            idx = list(row.lin_idx) if hasattr(row, "lin_idx") else list(row.idx)
            if hasattr(row, "squares"):
                for sq in row.squares:
                    idx.extend(sq.idx)
            for flat in idx:
                name, off = owner(int(flat))
                if name in coef_net:
                    assert off in allowed_buses, row.tag
                elif name in ("c_ij", "s_ij", "xi_c_branch", "xi_s_branch"):
                    assert off == k, row.tag

    def test_zero_slack_program_may_be_infeasible(self, net2):
        # A flat anchor cannot carry the 2-bus load with zero slack.
        prog = build_qcac(net2, BasePoint.flat(net2), slacks_enabled=False)
        res = solve_convex(prog)
        assert res.status == "infeasible"

    def test_rejects_negative_rho(self, net2, newton2):
        with pytest.raises(ValueError):
            build_qcac(net2, BasePoint(newton2.v_re, newton2.v_im), rho=-1.0)


class TestBuildTs:
    def test_base_point_satisfies_linearization(self, net30, newton30):
        prog = build_ts(net30, BasePoint(newton30.v_re, newton30.v_im))
        x = lifted_to_flat(prog, newton30)
        for row in prog.lin_rows:
            if row.tag.startswith("lift-ts-"):
                assert abs(float(row.coef @ x[row.idx]) - row.rhs) < 1e-9, row.tag

    def test_ts_admits_points_qcac_rejects(self, net2, ref2):
        """The linearized set is not an inner approximation: sampling finds
        points feasible for the linearization whose lifted products are
        infeasible for the convexified set."""
        st_ = ref2.state
        base = BasePoint(st_.v_re, st_.v_im)
        ts = build_ts(net2, base)
        qc = build_qcac(net2, base, slacks_enabled=False)
        rng = np.random.default_rng(9)
        found = False
        for _ in range(400):
            v_re = st_.v_re + rng.normal(0, 0.03, 2)
            v_im = st_.v_im + rng.normal(0, 0.03, 2)
            probe = lifted_from_voltages(net2, v_re, v_im, p_g=st_.p_g, q_g=st_.q_g)
            # Recompute the TS lifted block from its linearized identities.
            A, B = base.v_re, base.v_im
            probe_ts = lifted_from_voltages(net2, v_re, v_im, p_g=st_.p_g, q_g=st_.q_g)
            probe_ts.c_ii = 2 * (A * v_re + B * v_im) - (A**2 + B**2)
            x_ts = lifted_to_flat(ts, probe_ts)
            # Compare only the lifting treatment: TS linear rows vs the exact
            # quadratic node identity those rows replace.
            ts_lift_ok = all(
                abs(float(r.coef @ x_ts[r.idx]) - r.rhs) < 1e-9
                for r in ts.lin_rows if r.tag.startswith("lift-ts-node")
            )
            exact_gap = np.max(np.abs(probe_ts.c_ii - (v_re**2 + v_im**2)))
            if ts_lift_ok and exact_gap > 1e-4:
                found = True
                break
        assert found


class TestBuildSoc:
    def test_exact_state_on_cone_boundary(self, net30, newton30):
        prog = build_soc(net30)
        for row in prog.soc_rows:
            x = lifted_to_flat(prog, newton30)
            assert row.value(x) == pytest.approx(0.0, abs=1e-12)

    def test_no_base_needed_and_no_voltage_vars(self, net30):
        prog = build_soc(net30)
        assert "v_re" not in prog.group_offset

    def test_state_recovery_spanning_tree(self, net30, newton30):
        prog = build_soc(net30)
        primal = {name: lifted_to_flat(prog, newton30)[prog.group_indices(name)]
                  for name in prog.group_names}
        st_ = state_from_primal(net30, primal)
        vm = np.hypot(st_.v_re, st_.v_im)
        np.testing.assert_allclose(vm, np.hypot(newton30.v_re, newton30.v_im), atol=1e-9)
        ang = np.arctan2(st_.v_im, st_.v_re)
        ref_ang = np.arctan2(newton30.v_im, newton30.v_re)
        np.testing.assert_allclose(ang - ang[0], ref_ang - ref_ang[0], atol=1e-7)


class TestSuggestedRho:
    def test_scales_with_marginal_cost(self, net2, net30):
        assert suggested_rho(net2) > 0
        assert suggested_rho(net30) > suggested_rho(net2) / 100
