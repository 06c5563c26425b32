"""MATPOWER case-file parsing and the per-unit network model.

Reads standard MATPOWER ``.m`` case files (``mpc.baseMVA``, ``mpc.bus``,
``mpc.gen``, ``mpc.branch``, ``mpc.gencost`` matrices with semicolon-terminated
rows and ``%`` comments) into a :class:`RawCase`, then converts the raw tables
into an immutable per-unit :class:`Network`.

Column conventions follow the MATPOWER manual:

- bus:    BUS_I=1, TYPE=2, PD=3, QD=4, GS=5, BS=6, VM=8, VA=9, VMAX=12, VMIN=13
- gen:    BUS=1, PG=2, QG=3, QMAX=4, QMIN=5, VG=6, STATUS=8, PMAX=9, PMIN=10
- branch: F=1, T=2, R=3, X=4, B=5, RATE_A=6, TAP=9, SHIFT=10, STATUS=11
- gencost: MODEL=1, STARTUP=2, SHUTDOWN=3, NCOST=4, coefficients highest first

Switched-shunt candidates for reactive-dispatch studies are not part of the
MATPOWER tables; they are supplied through a sidecar JSON file (a list of
``{"bus", "b_min", "b_max", "n_max"}`` records) and attached to the network by
:func:`load_shunt_sidecar`.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

__all__ = [
    "ParseError",
    "RawCase",
    "Bus",
    "Branch",
    "Gen",
    "SwitchedShunt",
    "Network",
    "parse_case",
    "to_network",
    "network_to_json",
    "network_from_json",
    "load_shunt_sidecar",
]

# Required table name -> minimum column count.
_REQUIRED_TABLES = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}


class ParseError(ValueError):
    """Malformed case file; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class RawCase:
    """Verbatim numeric tables of a MATPOWER case, before any conversion."""

    name: str
    base_mva: float
    bus_table: list[list[float]]
    gen_table: list[list[float]]
    branch_table: list[list[float]]
    gencost_table: list[list[float]]
    extras: dict[str, list[list[float]]] = field(default_factory=dict)


@dataclass(frozen=True)
class Bus:
    id: int
    btype: int  # 1=PQ, 2=PV, 3=reference
    Pd: float  # p.u.
    Qd: float  # p.u.
    G_sh: float  # p.u.
    B_sh: float  # p.u.
    Vmin: float  # p.u.
    Vmax: float  # p.u.


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    G: float  # series conductance, p.u.
    B: float  # series susceptance, p.u.
    B_charge: float  # total line-charging susceptance, p.u. (split half per side)
    tap: float  # off-nominal tap ratio on the from side, 1.0 for lines
    shift: float  # phase-shift angle, rad
    S_max: float  # apparent-power rating, p.u.; 0 encodes "unlimited"
    status: int


@dataclass(frozen=True)
class Gen:
    bus: int
    Pmin: float  # p.u.
    Pmax: float  # p.u.
    Qmin: float  # p.u.
    Qmax: float  # p.u.
    cost: tuple[float, float, float]  # ($/MW^2 h, $/MW h, $/h), quadratic in MW
    Pg: float  # case-file dispatch, p.u. (seed for power-flow base points)
    Vg: float  # case-file voltage setpoint, p.u.


@dataclass(frozen=True)
class SwitchedShunt:
    bus: int
    b_min: float  # p.u.
    b_max: float  # p.u.
    n_max: int  # number of steps above zero


@dataclass(frozen=True)
class Network:
    """Immutable per-unit grid model. Safe to share across threads."""

    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    gens: tuple[Gen, ...]
    shunts: tuple[SwitchedShunt, ...] = ()

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.gens)

    def bus_index(self) -> dict[int, int]:
        """Map external bus id -> position in ``buses``."""
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def ref_bus(self) -> int:
        """Position of the reference bus in ``buses``."""
        for k, b in enumerate(self.buses):
            if b.btype == 3:
                return k
        raise ValueError("network has no reference bus")

    def with_loads(self, pd, qd) -> "Network":
        """Copy of the network with per-bus demands replaced (p.u. arrays)."""
        buses = tuple(
            Bus(b.id, b.btype, float(p), float(q), b.G_sh, b.B_sh, b.Vmin, b.Vmax)
            for b, p, q in zip(self.buses, pd, qd)
        )
        return Network(self.name, self.base_mva, buses, self.branches, self.gens, self.shunts)

    def with_shunts(self, shunts) -> "Network":
        """Copy with switched-shunt candidates attached.

        A listed bus has its fixed shunt susceptance replaced by the
        switchable range, so step 0 means "bank disconnected".
        """
        shunts = tuple(shunts)
        listed = {s.bus for s in shunts}
        buses = tuple(
            Bus(b.id, b.btype, b.Pd, b.Qd, b.G_sh, 0.0 if b.id in listed else b.B_sh, b.Vmin, b.Vmax)
            for b in self.buses
        )
        return Network(self.name, self.base_mva, buses, self.branches, self.gens, shunts)


def _strip_comments(line: str) -> str:
    cut = line.find("%")
    return line if cut < 0 else line[:cut]


def _parse_matrix(lines: list[str], start: int, name: str) -> tuple[list[list[float]], int]:
    """Parse rows of ``mpc.<name> = [ ... ];`` starting after the ``[`` line.

    Returns the rows and the index of the line holding the closing ``];``.
    Every data row must be terminated by ``;`` on its own line.
    """
    rows: list[list[float]] = []
    i = start
    ncols = None
    while i < len(lines):
        text = _strip_comments(lines[i]).strip()
        if text.startswith("]"):
            return rows, i
        if text:
            if not text.endswith(";"):
                raise ParseError(f"row in mpc.{name} is missing its terminating ';'", i + 1)
            fields = text[:-1].split()
            try:
                row = [float(v) for v in fields]
            except ValueError:
                raise ParseError(f"non-numeric entry in mpc.{name} row", i + 1) from None
            if ncols is None:
                ncols = len(row)
            elif len(row) != ncols:
                raise ParseError(
                    f"mpc.{name} row has {len(row)} columns, expected {ncols}", i + 1
                )
            rows.append(row)
        i += 1
    raise ParseError(f"mpc.{name} matrix is never closed with '];'", start)


def parse_case(text: str) -> RawCase:
    """Parse MATPOWER case text into raw numeric tables.

    Unknown ``mpc.*`` matrices are preserved in :attr:`RawCase.extras`.
    Raises :class:`ParseError` (with a line number) on malformed input.
    """
    lines = text.splitlines()
    name = ""
    base_mva = None
    tables: dict[str, list[list[float]]] = {}

    header = re.compile(r"^\s*function\s+(?:\w+\s*=\s*)?(\w+)")
    scalar = re.compile(r"^\s*mpc\.baseMVA\s*=\s*([^;]+);")
    matrix = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[")

    i = 0
    while i < len(lines):
        text_line = _strip_comments(lines[i])
        m = header.match(text_line)
        if m and not name:
            name = m.group(1)
            i += 1
            continue
        m = scalar.match(text_line)
        if m:
            try:
                base_mva = float(m.group(1))
            except ValueError:
                raise ParseError("mpc.baseMVA is not numeric", i + 1) from None
            i += 1
            continue
        m = matrix.match(text_line)
        if m:
            tname = m.group(1)
            rows, closed_at = _parse_matrix(lines, i + 1, tname)
            if tname in tables:
                raise ParseError(f"duplicate table mpc.{tname}", i + 1)
            tables[tname] = rows
            i = closed_at + 1
            continue
        i += 1

    if base_mva is None:
        raise ParseError("missing mpc.baseMVA")
    if base_mva <= 0:
        raise ParseError(f"mpc.baseMVA must be positive, got {base_mva}")
    for tname, mincols in _REQUIRED_TABLES.items():
        if tname not in tables:
            raise ParseError(f"missing mandatory table mpc.{tname}")
        for row in tables[tname]:
            if len(row) < mincols:
                raise ParseError(f"mpc.{tname} rows need at least {mincols} columns")

    raw = RawCase(
        name=name,
        base_mva=base_mva,
        bus_table=tables.pop("bus"),
        gen_table=tables.pop("gen"),
        branch_table=tables.pop("branch"),
        gencost_table=tables.pop("gencost"),
        extras=tables,
    )
    _validate_raw(raw)
    return raw


def _validate_raw(raw: RawCase) -> None:
    bus_ids = {int(r[0]) for r in raw.bus_table}
    for r in raw.gen_table:
        if int(r[0]) not in bus_ids:
            raise ParseError(f"generator references unknown bus {int(r[0])}")
    for r in raw.branch_table:
        for end in (int(r[0]), int(r[1])):
            if end not in bus_ids:
                raise ParseError(f"branch references unknown bus {end}")


def to_network(raw: RawCase, rotate_shift: bool = False) -> Network:
    """Convert raw tables to the validated per-unit :class:`Network`.

    Impedances become series admittances ``G + jB = 1/(r + jx)``; MW/MVAr
    quantities are divided by the MVA base; out-of-service branches and
    generators are dropped. Branches with a nonzero phase-shift angle are
    rejected unless ``rotate_shift`` is set, in which case the shift is kept
    and handled by the flow model's complex-tap rotation.
    """
    S = raw.base_mva
    seen: set[int] = set()
    buses = []
    n_ref = 0
    for r in raw.bus_table:
        bid = int(r[0])
        if bid in seen:
            raise ValueError(f"duplicate bus id {bid}")
        seen.add(bid)
        btype = int(r[1])
        if btype == 3:
            n_ref += 1
        vmax, vmin = float(r[11]), float(r[12])
        if vmin > vmax:
            raise ValueError(f"bus {bid}: Vmin {vmin} > Vmax {vmax}")
        buses.append(
            Bus(
                id=bid,
                btype=btype,
                Pd=float(r[2]) / S,
                Qd=float(r[3]) / S,
                G_sh=float(r[4]) / S,
                B_sh=float(r[5]) / S,
                Vmin=vmin,
                Vmax=vmax,
            )
        )
    if n_ref != 1:
        raise ValueError(f"expected exactly one reference bus, found {n_ref}")

    branches = []
    for r in raw.branch_table:
        status = int(r[10])
        if status == 0:
            continue
        rr, xx = float(r[2]), float(r[3])
        z2 = rr * rr + xx * xx
        if z2 == 0.0:
            raise ValueError(f"branch {int(r[0])}-{int(r[1])} has zero impedance")
        tap = float(r[8])
        if tap == 0.0:
            tap = 1.0
        if tap <= 0.0:
            raise ValueError(f"branch {int(r[0])}-{int(r[1])} has non-positive tap {tap}")
        shift = math.radians(float(r[9]))
        if shift != 0.0 and not rotate_shift:
            raise ValueError(
                f"branch {int(r[0])}-{int(r[1])} has a phase shift of {float(r[9])} deg; "
                "re-run with rotate_shift enabled to model it"
            )
        smax = float(r[5]) / S
        if smax < 0:
            raise ValueError(f"branch {int(r[0])}-{int(r[1])} has negative rating")
        branches.append(
            Branch(
                from_bus=int(r[0]),
                to_bus=int(r[1]),
                G=rr / z2,
                B=-xx / z2,
                B_charge=float(r[4]),
                tap=tap,
                shift=shift,
                S_max=smax,
                status=status,
            )
        )

    gens = []
    for k, r in enumerate(raw.gen_table):
        if int(r[7]) <= 0:
            continue
        if k >= len(raw.gencost_table):
            raise ValueError(f"generator {k} has no cost row")
        c = raw.gencost_table[k]
        if int(c[0]) != 2:
            raise ValueError(
                f"gencost row {k}: only polynomial cost models are supported (model 2)"
            )
        ncost = int(c[3])
        coeffs = c[4 : 4 + ncost]
        if len(coeffs) != ncost:
            raise ValueError(f"gencost row {k}: expected {ncost} coefficients")
        if ncost > 3:
            raise ValueError(f"gencost row {k}: polynomial degree above 2 is not supported")
        # Pad to (c2, c1, c0), highest degree first in the file.
        padded = [0.0] * (3 - ncost) + [float(v) for v in coeffs]
        pmin, pmax = float(r[9]) / S, float(r[8]) / S
        qmin, qmax = float(r[4]) / S, float(r[3]) / S
        if pmin > pmax:
            raise ValueError(f"generator {k}: Pmin > Pmax")
        if qmin > qmax:
            raise ValueError(f"generator {k}: Qmin > Qmax")
        gens.append(
            Gen(
                bus=int(r[0]),
                Pmin=pmin,
                Pmax=pmax,
                Qmin=qmin,
                Qmax=qmax,
                cost=(padded[0], padded[1], padded[2]),
                Pg=float(r[1]) / S,
                Vg=float(r[5]),
            )
        )

    return Network(
        name=raw.name,
        base_mva=raw.base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        gens=tuple(gens),
    )


def network_to_json(net: Network) -> str:
    """Canonical JSON dump of a network (stable key order, exact floats)."""
    doc = {
        "name": net.name,
        "base_mva": net.base_mva,
        "buses": [
            {
                "id": b.id,
                "btype": b.btype,
                "Pd": b.Pd,
                "Qd": b.Qd,
                "G_sh": b.G_sh,
                "B_sh": b.B_sh,
                "Vmin": b.Vmin,
                "Vmax": b.Vmax,
            }
            for b in net.buses
        ],
        "branches": [
            {
                "from_bus": e.from_bus,
                "to_bus": e.to_bus,
                "G": e.G,
                "B": e.B,
                "B_charge": e.B_charge,
                "tap": e.tap,
                "shift": e.shift,
                "S_max": e.S_max,
                "status": e.status,
            }
            for e in net.branches
        ],
        "gens": [
            {
                "bus": g.bus,
                "Pmin": g.Pmin,
                "Pmax": g.Pmax,
                "Qmin": g.Qmin,
                "Qmax": g.Qmax,
                "cost": list(g.cost),
                "Pg": g.Pg,
                "Vg": g.Vg,
            }
            for g in net.gens
        ],
        "shunts": [
            {"bus": s.bus, "b_min": s.b_min, "b_max": s.b_max, "n_max": s.n_max}
            for s in net.shunts
        ],
    }
    return json.dumps(doc, indent=1)


def network_from_json(text: str) -> Network:
    """Inverse of :func:`network_to_json`."""
    doc = json.loads(text)
    return Network(
        name=doc["name"],
        base_mva=doc["base_mva"],
        buses=tuple(Bus(**b) for b in doc["buses"]),
        branches=tuple(Branch(**e) for e in doc["branches"]),
        gens=tuple(
            Gen(
                bus=g["bus"],
                Pmin=g["Pmin"],
                Pmax=g["Pmax"],
                Qmin=g["Qmin"],
                Qmax=g["Qmax"],
                cost=tuple(g["cost"]),
                Pg=g["Pg"],
                Vg=g["Vg"],
            )
            for g in doc["gens"]
        ),
        shunts=tuple(SwitchedShunt(**s) for s in doc["shunts"]),
    )


def load_shunt_sidecar(net: Network, text: str) -> Network:
    """Attach switched-shunt candidates from sidecar JSON to a network."""
    data = json.loads(text)
    ids = {b.id for b in net.buses}
    shunts = []
    for rec in data:
        bus = int(rec["bus"])
        if bus not in ids:
            raise ValueError(f"shunt sidecar references unknown bus {bus}")
        n_max = int(rec["n_max"])
        if n_max < 1:
            raise ValueError(f"shunt at bus {bus}: n_max must be >= 1")
        b_min, b_max = float(rec["b_min"]), float(rec["b_max"])
        if b_min > b_max:
            raise ValueError(f"shunt at bus {bus}: b_min > b_max")
        shunts.append(SwitchedShunt(bus=bus, b_min=b_min, b_max=b_max, n_max=n_max))
    return net.with_shunts(shunts)
