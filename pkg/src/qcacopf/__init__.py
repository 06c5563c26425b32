"""Convex approximations of AC optimal power flow.

Subpackages cover case-file parsing (:mod:`~qcacopf.netparse`), the lifted AC
model and power flow (:mod:`~qcacopf.acmodel`), convex program builders
(:mod:`~qcacopf.dcc`), the embedded interior-point solver and sequential
convexification driver (:mod:`~qcacopf.solver`), evaluation metrics
(:mod:`~qcacopf.metrics`), the reactive-dispatch and PV-hosting studies
(:mod:`~qcacopf.studies`), and the command-line interface (:mod:`~qcacopf.cli`).
"""

from importlib import resources

__version__ = "0.1.0"


def bundled_case(name: str) -> str:
    """Return the text of a bundled case or sidecar file, e.g. ``case30.m``."""
    return resources.files("qcacopf.cases").joinpath(name).read_text()
