"""Parser and network-model tests."""

import math

import numpy as np
import pytest

from qcacopf import bundled_case
from qcacopf.netparse import (
    ParseError,
    load_shunt_sidecar,
    network_from_json,
    network_to_json,
    parse_case,
    to_network,
)

MINIMAL = """\
function mpc = mini2
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0  0 0 1 1 0 135 1 1.1 0.9;
    2 1 30 10 0 0 1 1 0 135 1 1.1 0.9;
];
mpc.gen = [
    1 35 0 50 -50 1 100 1 100 0;
];
mpc.branch = [
    1 2 0 0.1 0.04 100 100 100 0 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0.01 5 0;
];
"""


class TestParseCase:
    def test_minimal_two_bus(self):
        raw = parse_case(MINIMAL)
        assert raw.name == "mini2"
        assert raw.base_mva == 100.0
        assert len(raw.bus_table) == 2
        assert len(raw.branch_table) == 1
        assert len(raw.gen_table) == 1

    def test_case30_has_30_bus_rows(self):
        raw = parse_case(bundled_case("case30.m"))
        assert len(raw.bus_table) == 30
        assert len(raw.branch_table) == 41
        assert len(raw.gen_table) == 6

    def test_dangling_row_reports_line(self):
        bad = MINIMAL.replace("    2 1 30 10 0 0 1 1 0 135 1 1.1 0.9;",
                              "    2 1 30 10 0 0 1 1 0 135 1 1.1 0.9")
        with pytest.raises(ParseError, match="line 5"):
            parse_case(bad)

    def test_non_numeric_entry_reports_line(self):
        bad = MINIMAL.replace("1 2 0 0.1", "1 2 zero 0.1")
        with pytest.raises(ParseError, match="non-numeric"):
            parse_case(bad)

    def test_missing_table(self):
        bad = MINIMAL.replace("mpc.gencost", "mpc.othercost")
        with pytest.raises(ParseError, match="mpc.gencost"):
            parse_case(bad)

    def test_unknown_tables_preserved(self):
        extra = MINIMAL + "\nmpc.bus_name = [\n 1;\n 2;\n];\n"
        raw = parse_case(extra)
        assert "bus_name" in raw.extras

    def test_gen_referencing_unknown_bus(self):
        bad = MINIMAL.replace("1 35 0 50", "7 35 0 50")
        with pytest.raises(ParseError, match="unknown bus 7"):
            parse_case(bad)

    def test_comments_stripped(self):
        commented = MINIMAL.replace("mpc.baseMVA = 100;",
                                    "mpc.baseMVA = 100; % system base")
        assert parse_case(commented).base_mva == 100.0


class TestToNetwork:
    def test_series_admittance(self):
        net = to_network(parse_case(MINIMAL))
        br = net.branches[0]
        # r=0, x=0.1 -> G=0, B=-10
        assert br.G == 0.0
        assert br.B == pytest.approx(-10.0)

    def test_per_unit_loads(self):
        net = to_network(parse_case(MINIMAL))
        assert net.buses[1].Pd == pytest.approx(0.30)
        assert net.buses[1].Qd == pytest.approx(0.10)

    def test_zero_impedance_rejected(self):
        bad = MINIMAL.replace("1 2 0 0.1", "1 2 0 0")
        with pytest.raises(ValueError, match="zero impedance"):
            to_network(parse_case(bad))

    def test_duplicate_bus_rejected(self):
        bad = MINIMAL.replace(
            "    2 1 30 10 0 0 1 1 0 135 1 1.1 0.9;",
            "    2 1 30 10 0 0 1 1 0 135 1 1.1 0.9;\n    1 1 0 0 0 0 1 1 0 135 1 1.1 0.9;",
        )
        with pytest.raises(ValueError, match="duplicate bus"):
            to_network(parse_case(bad))

    def test_out_of_service_branch_dropped(self):
        bad = MINIMAL.replace("0 0 1 -360 360;", "0 0 0 -360 360;")
        net = to_network(parse_case(bad))
        assert net.n_branch == 0

    def test_shift_rejected_without_flag(self):
        shifted = MINIMAL.replace("100 100 100 0 0 1", "100 100 100 0 30 1")
        with pytest.raises(ValueError, match="phase shift"):
            to_network(parse_case(shifted))

    def test_shift_accepted_with_flag(self):
        shifted = MINIMAL.replace("100 100 100 0 0 1", "100 100 100 0 30 1")
        net = to_network(parse_case(shifted), rotate_shift=True)
        assert net.branches[0].shift == pytest.approx(math.radians(30))

    def test_piecewise_cost_rejected(self):
        bad = MINIMAL.replace("2 0 0 3 0.01 5 0;", "1 0 0 4 0 0 100 2000;")
        with pytest.raises(ValueError, match="polynomial"):
            to_network(parse_case(bad))

    def test_exactly_one_reference(self):
        bad = MINIMAL.replace("2 1 30 10", "2 3 30 10")
        with pytest.raises(ValueError, match="reference"):
            to_network(parse_case(bad))


class TestInvariants:
    @pytest.mark.parametrize("name", ["case2", "case30", "case33", "case39", "case57"])
    def test_round_trip_json(self, name):
        net = to_network(parse_case(bundled_case(name + ".m")))
        dump = network_to_json(net)
        again = network_from_json(dump)
        assert network_to_json(again) == dump
        assert again == net

    @pytest.mark.parametrize("name", ["case2", "case30", "case33", "case39", "case57"])
    def test_branch_admittance_nonzero(self, name):
        net = to_network(parse_case(bundled_case(name + ".m")))
        for br in net.branches:
            assert br.G**2 + br.B**2 > 0

    @pytest.mark.parametrize("name", ["case30", "case39", "case57"])
    def test_load_sum_matches_mw(self, name):
        raw = parse_case(bundled_case(name + ".m"))
        net = to_network(raw)
        mw = sum(r[2] for r in raw.bus_table)
        assert sum(b.Pd for b in net.buses) == pytest.approx(mw / raw.base_mva, abs=1e-14)


class TestSidecar:
    def test_attach_and_replace(self, net30):
        net = load_shunt_sidecar(net30, bundled_case("case30_shunts.json"))
        assert len(net.shunts) == 3
        by_id = {b.id: b for b in net.buses}
        # A listed bus's fixed susceptance is replaced by the switchable bank.
        assert by_id[10].B_sh == 0.0
        assert by_id[24].B_sh == 0.0

    def test_unknown_bus_rejected(self, net30):
        with pytest.raises(ValueError, match="unknown bus"):
            load_shunt_sidecar(net30, '[{"bus": 999, "b_min": 0, "b_max": 1, "n_max": 2}]')

    def test_bad_steps_rejected(self, net30):
        with pytest.raises(ValueError, match="n_max"):
            load_shunt_sidecar(net30, '[{"bus": 10, "b_min": 0, "b_max": 1, "n_max": 0}]')
