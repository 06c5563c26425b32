"""Shared fixtures: bundled networks and cached expensive solves.

The heavyweight artifacts (local references, convex solves) are computed once
per session and shared across test modules, including the acceptance suite.
"""

import numpy as np
import pytest

from qcacopf import bundled_case
from qcacopf.acmodel import BasePoint, newton_power_flow
from qcacopf.netparse import parse_case, to_network
from qcacopf.solver import sequential_qcac


def load_net(name: str):
    return to_network(parse_case(bundled_case(name + ".m")))


@pytest.fixture(scope="session")
def net2():
    return load_net("case2")


@pytest.fixture(scope="session")
def net30():
    return load_net("case30")


@pytest.fixture(scope="session")
def net33():
    return load_net("case33")


@pytest.fixture(scope="session")
def net39():
    return load_net("case39")


@pytest.fixture(scope="session")
def net57():
    return load_net("case57")


@pytest.fixture(scope="session")
def newton2(net2):
    return newton_power_flow(net2)


@pytest.fixture(scope="session")
def newton30(net30):
    return newton_power_flow(net30)


@pytest.fixture(scope="session")
def ref2(net2, newton2):
    """Local AC solution of the 2-bus case (converged sequential solve)."""
    return sequential_qcac(net2, BasePoint(newton2.v_re, newton2.v_im))


@pytest.fixture(scope="session")
def ref30(net30, newton30):
    """Local AC solution of the 30-bus case."""
    return sequential_qcac(net30, BasePoint(newton30.v_re, newton30.v_im))


@pytest.fixture(scope="session")
def ref39(net39):
    st = newton_power_flow(net39)
    return sequential_qcac(net39, BasePoint(st.v_re, st.v_im))


@pytest.fixture(scope="session")
def ref57(net57):
    st = newton_power_flow(net57)
    return sequential_qcac(net57, BasePoint(st.v_re, st.v_im))


def lifted_to_flat(prog, state):
    """Pack a LiftedState into a program's flat variable vector (slacks 0)."""
    x = np.zeros(prog.n_var)
    for name, arr in (
        ("v_re", state.v_re), ("v_im", state.v_im), ("c_ii", state.c_ii),
        ("c_ij", state.c_ij), ("s_ij", state.s_ij), ("p_from", state.p_from),
        ("q_from", state.q_from), ("p_to", state.p_to), ("q_to", state.q_to),
        ("p_g", state.p_g), ("q_g", state.q_g),
    ):
        if name in prog.group_offset:
            x[prog.group_indices(name)] = arr
    return x
