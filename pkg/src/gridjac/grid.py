"""Network description, admittance assembly and network-file I/O.

Admittance sign convention: off-diagonal entries are the branch series
admittances and each diagonal entry is minus the sum of its row's
off-diagonal entries, i.e. the negative of the textbook bus admittance
matrix.  Node-to-ground shunts are kept on :class:`Bus` and never folded
into the matrix.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConnectivityError, ParseError


class BusKind(str, enum.Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


class Status(str, enum.Enum):
    CLOSED = "closed"
    OPEN = "open"


@dataclass(frozen=True)
class Bus:
    """A network node.

    ``p`` and ``q`` are scheduled injections in p.u. with generation
    positive; ``g_shunt + j*b_shunt`` is the node-to-ground admittance.
    """

    id: int
    kind: BusKind
    p: float = 0.0
    q: float = 0.0
    v_setpoint: float | None = None
    g_shunt: float = 0.0
    b_shunt: float = 0.0

    @property
    def shunt(self) -> complex:
        return complex(self.g_shunt, self.b_shunt)


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    g: float
    b: float
    status: Status = Status.CLOSED

    @property
    def y(self) -> complex:
        return complex(self.g, self.b)

    @property
    def key(self) -> frozenset:
        return frozenset((self.from_bus, self.to_bus))

    @property
    def closed(self) -> bool:
        return self.status is Status.CLOSED


@dataclass(frozen=True)
class Grid:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_kv: float = 0.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        index = {}
        for pos, bus in enumerate(self.buses):
            if bus.id in index:
                raise ValueError(f"duplicate bus id {bus.id}")
            index[bus.id] = pos
            if bus.kind is not BusKind.PQ:
                if bus.v_setpoint is None or not bus.v_setpoint > 0:
                    raise ValueError(f"bus {bus.id}: v_setpoint must be > 0")
        n_slack = sum(b.kind is BusKind.SLACK for b in self.buses)
        if n_slack != 1:
            raise ValueError(f"grid needs exactly one slack bus, found {n_slack}")
        seen = set()
        for br in self.branches:
            if br.from_bus == br.to_bus:
                raise ValueError(f"branch {br.from_bus}-{br.to_bus} is a self loop")
            for end in (br.from_bus, br.to_bus):
                if end not in index:
                    raise ValueError(f"branch references unknown bus {end}")
            if br.key in seen:
                raise ValueError(f"duplicate branch {br.from_bus}-{br.to_bus}")
            seen.add(br.key)
        object.__setattr__(self, "_index", index)

    @property
    def n(self) -> int:
        return len(self.buses)

    def position(self, bus_id: int) -> int:
        """Row/column of ``bus_id`` in every matrix built from this grid."""
        return self._index[bus_id]

    @property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @property
    def pv(self) -> list[int]:
        return [i for i, b in enumerate(self.buses) if b.kind is BusKind.PV]

    @property
    def pq(self) -> list[int]:
        return [i for i, b in enumerate(self.buses) if b.kind is BusKind.PQ]

    @property
    def non_slack(self) -> list[int]:
        return [i for i, b in enumerate(self.buses) if b.kind is not BusKind.SLACK]

    def branch(self, a: int, b: int) -> Branch:
        key = frozenset((a, b))
        for br in self.branches:
            if br.key == key:
                return br
        raise LookupError(f"no branch between buses {a} and {b}")

    def is_connected(self) -> bool:
        return _n_components(self) == 1


def _n_components(grid: Grid) -> int:
    rows, cols = [], []
    for br in grid.branches:
        if br.closed:
            rows.append(grid.position(br.from_bus))
            cols.append(grid.position(br.to_bus))
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(grid.n, grid.n))
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp


def build_admittance(grid: Grid) -> np.ndarray:
    """Assemble the dense complex nodal admittance matrix.

    Raises
    ------
    ConnectivityError
        If the closed branches leave some bus unreachable.
    """
    n_comp = _n_components(grid)
    if n_comp != 1:
        raise ConnectivityError(f"closed branches form {n_comp} islands")
    y = np.zeros((grid.n, grid.n), dtype=complex)
    for br in grid.branches:
        if not br.closed:
            continue
        i, j = grid.position(br.from_bus), grid.position(br.to_bus)
        y[i, j] += br.y
        y[j, i] += br.y
    y[np.diag_indices(grid.n)] = -y.sum(axis=1)
    return y


def apply_switch_plan(grid: Grid, toggles) -> Grid:
    """Return a copy of ``grid`` with the status of each listed branch flipped.

    ``toggles`` is an iterable of ``(bus_a, bus_b)`` pairs naming branches
    by their endpoints in either order.
    """
    keys = [frozenset(t) for t in toggles]
    known = {br.key for br in grid.branches}
    for k, t in zip(keys, toggles):
        if k not in known:
            raise LookupError(f"unknown branch {tuple(t)}")
    flips = {}
    for k in keys:
        flips[k] = not flips.get(k, False)
    branches = []
    for br in grid.branches:
        if flips.get(br.key):
            new = Status.OPEN if br.closed else Status.CLOSED
            br = replace(br, status=new)
        branches.append(br)
    return replace(grid, branches=tuple(branches))


def scale_branch_impedance(grid: Grid, pairs, factor: float) -> Grid:
    """Copy of ``grid`` with the named branches' impedance multiplied by ``factor``."""
    keys = {frozenset(p) for p in pairs}
    branches = []
    for br in grid.branches:
        if br.key in keys:
            br = replace(br, g=br.g / factor, b=br.b / factor)
            keys.discard(br.key)
        branches.append(br)
    if keys:
        raise LookupError(f"unknown branches {sorted(tuple(k) for k in keys)}")
    return replace(grid, branches=tuple(branches))


# --- network files -----------------------------------------------------------

_BUS_KEYS = {"id", "kind", "v_setpoint", "p", "q", "g_shunt", "b_shunt"}
_BRANCH_KEYS = {"from", "to", "g", "b", "status"}


def _number(obj, key, where, default=None):
    if key not in obj:
        if default is not None:
            return default
        raise ParseError(f"missing field '{key}'", where)
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(f"field '{key}' must be a number", f"{where}.{key}")
    return float(val)


def _integer(obj, key, where):
    val = obj.get(key)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ParseError(f"field '{key}' must be an integer", f"{where}.{key}")
    return val


def _enum(cls, obj, key, where):
    try:
        return cls(str(obj[key]).lower())
    except KeyError:
        raise ParseError(f"missing field '{key}'", where) from None
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ParseError(f"'{obj[key]}' is not one of {choices}", f"{where}.{key}") from None


def parse_network(text: str) -> Grid:
    """Parse a JSON network document into a :class:`Grid`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{exc.lineno}:{exc.colno}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", "$")
    for key in ("buses", "branches"):
        if not isinstance(doc.get(key), list):
            raise ParseError(f"'{key}' must be an array", "$")

    buses = []
    slack_at = None
    for k, obj in enumerate(doc["buses"]):
        where = f"buses[{k}]"
        if not isinstance(obj, dict):
            raise ParseError("bus entry must be an object", where)
        extra = set(obj) - _BUS_KEYS
        if extra:
            raise ParseError(f"unknown fields {sorted(extra)}", where)
        kind = _enum(BusKind, obj, "kind", where)
        if kind is BusKind.SLACK:
            if slack_at is not None:
                raise ParseError(f"second slack bus (first at {slack_at})", where)
            slack_at = where
        v_set = None
        if kind is not BusKind.PQ or "v_setpoint" in obj:
            v_set = _number(obj, "v_setpoint", where)
            if not v_set > 0:
                raise ParseError("v_setpoint must be positive", f"{where}.v_setpoint")
        buses.append(Bus(
            id=_integer(obj, "id", where),
            kind=kind,
            p=_number(obj, "p", where),
            q=_number(obj, "q", where),
            v_setpoint=v_set,
            g_shunt=_number(obj, "g_shunt", where, 0.0),
            b_shunt=_number(obj, "b_shunt", where, 0.0),
        ))
    if slack_at is None:
        raise ParseError("no slack bus", "buses")

    ids = {b.id for b in buses}
    branches = []
    for k, obj in enumerate(doc["branches"]):
        where = f"branches[{k}]"
        if not isinstance(obj, dict):
            raise ParseError("branch entry must be an object", where)
        extra = set(obj) - _BRANCH_KEYS
        if extra:
            raise ParseError(f"unknown fields {sorted(extra)}", where)
        ends = []
        for key in ("from", "to"):
            bid = _integer(obj, key, where)
            if bid not in ids:
                raise ParseError(f"unknown bus {bid}", f"{where}.{key}")
            ends.append(bid)
        branches.append(Branch(
            from_bus=ends[0],
            to_bus=ends[1],
            g=_number(obj, "g", where),
            b=_number(obj, "b", where),
            status=_enum(Status, obj, "status", where) if "status" in obj else Status.CLOSED,
        ))

    base_kv = _number(doc, "base_kv", "$", 0.0)
    try:
        return Grid(tuple(buses), tuple(branches), base_kv)
    except ValueError as exc:
        raise ParseError(str(exc), "$") from None


def serialize_network(grid: Grid) -> str:
    buses = []
    for b in grid.buses:
        obj = {"id": b.id, "kind": b.kind.value}
        if b.v_setpoint is not None:
            obj["v_setpoint"] = b.v_setpoint
        obj.update(p=b.p, q=b.q, g_shunt=b.g_shunt, b_shunt=b.b_shunt)
        buses.append(obj)
    branches = [
        {"from": br.from_bus, "to": br.to_bus, "g": br.g, "b": br.b,
         "status": br.status.value}
        for br in grid.branches
    ]
    # one record per line keeps the bundled cases diffable
    lines = ['{', f'  "base_kv": {json.dumps(grid.base_kv)},', '  "buses": [']
    lines += [f"    {json.dumps(o)}," for o in buses]
    if buses:
        lines[-1] = lines[-1].rstrip(",")
    lines += ["  ],", '  "branches": [']
    lines += [f"    {json.dumps(o)}," for o in branches]
    if branches:
        lines[-1] = lines[-1].rstrip(",")
    lines += ["  ]", "}", ""]
    return "\n".join(lines)


def load_network(path) -> Grid:
    return parse_network(Path(path).read_text(encoding="utf-8"))


def save_network(grid: Grid, path) -> None:
    Path(path).write_text(serialize_network(grid), encoding="utf-8")


CASES_DIR = Path(__file__).parent / "cases"


def ieee33() -> Grid:
    """The bundled 33-bus radial feeder (12.66 kV, 10 MVA base)."""
    return load_network(CASES_DIR / "ieee33.json")
