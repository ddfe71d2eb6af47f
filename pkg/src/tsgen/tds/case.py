"""Static grid description and the sectioned plain-text case format.

A case file is a sequence of ``[section]`` blocks. ``[case]`` holds ``key value``
pairs; ``[bus]``, ``[line]``, ``[generator]`` and ``[load]`` hold a header row
followed by whitespace-separated rows. ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

BUS_TYPES = ("slack", "PV", "PQ")


class CaseError(ValueError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    base_kv: float = 1.0


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0


@dataclass(frozen=True)
class Generator:
    bus: int
    p0: float
    vset: float
    pmin: float
    pmax: float
    h: float
    xd_prime: float
    d: float = 0.0


@dataclass(frozen=True)
class Load:
    bus: int
    p0: float
    q0: float


@dataclass(frozen=True, eq=False)
class GridCase:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    base_mva: float = 100.0
    frequency: float = 60.0
    name: str = "case"
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for attr in ("buses", "lines", "generators", "loads"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        index = {b.id: i for i, b in enumerate(self.buses)}
        if len(index) != len(self.buses):
            raise CaseError("duplicate bus ids")
        for b in self.buses:
            if b.type not in BUS_TYPES:
                raise CaseError(f"bus {b.id}: unknown type {b.type!r}")
        if sum(b.type == "slack" for b in self.buses) != 1:
            raise CaseError("case needs exactly one slack bus")
        for k, ln in enumerate(self.lines):
            for end in (ln.from_bus, ln.to_bus):
                if end not in index:
                    raise CaseError(f"line {k}: unknown bus {end}")
            if ln.from_bus == ln.to_bus:
                raise CaseError(f"line {k}: both ends on bus {ln.from_bus}")
            if not ln.x > 0:
                raise CaseError(f"line {k}: reactance must be positive")
            if not ln.tap > 0:
                raise CaseError(f"line {k}: tap ratio must be positive")
        gen_buses = set()
        for g in self.generators:
            if g.bus not in index:
                raise CaseError(f"generator at unknown bus {g.bus}")
            if self.buses[index[g.bus]].type == "PQ":
                raise CaseError(f"generator at bus {g.bus} sits on a PQ bus")
            if not g.h > 0 or not g.xd_prime > 0:
                raise CaseError(f"generator at bus {g.bus}: H and xd' must be positive")
            gen_buses.add(g.bus)
        for b in self.buses:
            if b.type != "PQ" and b.id not in gen_buses:
                raise CaseError(f"{b.type} bus {b.id} has no generator")
        for ld in self.loads:
            if ld.bus not in index:
                raise CaseError(f"load at unknown bus {ld.bus}")
        object.__setattr__(self, "_index", index)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: int) -> int:
        return self._index[bus_id]

    @property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.type == "slack")

    @property
    def omega_s(self) -> float:
        return 2.0 * np.pi * self.frequency

    @property
    def snapshot_width(self) -> int:
        return 2 * self.n_bus + 2 * len(self.loads) + 2 * len(self.generators)


_SECTION_TYPES = {
    "bus": (Bus, {"id": int, "type": str, "base_kv": float}),
    "line": (Line, {"from": int, "to": int, "r": float, "x": float, "b": float, "tap": float}),
    "generator": (
        Generator,
        {"bus": int, "p0": float, "vset": float, "pmin": float, "pmax": float,
         "h": float, "xd_prime": float, "d": float},
    ),
    "load": (Load, {"bus": int, "p0": float, "q0": float}),
}
_RENAMES = {"from": "from_bus", "to": "to_bus"}


def parse_case(text: str, name: str = "case") -> GridCase:
    sections: dict[str, list[list[str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current in sections:
                raise CaseError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise CaseError(f"line {lineno}: content before first section")
        sections[current].append(line.split() + [f"@{lineno}"])

    unknown = set(sections) - set(_SECTION_TYPES) - {"case"}
    if unknown:
        raise CaseError(f"unknown sections: {sorted(unknown)}")

    meta = {}
    for tokens in sections.get("case", []):
        if len(tokens) != 3:
            raise CaseError(f"line {tokens[-1][1:]}: expected 'key value' in [case]")
        meta[tokens[0]] = float(tokens[1])

    parsed = {}
    for sec, (cls, types) in _SECTION_TYPES.items():
        rows = sections.get(sec)
        if not rows:
            raise CaseError(f"missing section [{sec}]")
        header = rows[0][:-1]
        bad = [h for h in header if h not in types]
        if bad:
            raise CaseError(f"[{sec}]: unknown columns {bad}")
        items = []
        for tokens in rows[1:]:
            where, cells = tokens[-1][1:], tokens[:-1]
            if len(cells) != len(header):
                raise CaseError(f"line {where}: expected {len(header)} fields in [{sec}]")
            kwargs = {}
            for h, cell in zip(header, cells):
                try:
                    kwargs[_RENAMES.get(h, h)] = types[h](cell)
                except ValueError:
                    raise CaseError(f"line {where}: bad value {cell!r} for {h}") from None
            items.append(cls(**kwargs))
        parsed[sec] = items

    return GridCase(
        buses=parsed["bus"],
        lines=parsed["line"],
        generators=parsed["generator"],
        loads=parsed["load"],
        base_mva=meta.get("base_mva", 100.0),
        frequency=meta.get("frequency", 60.0),
        name=name,
    )


def load_case(path) -> GridCase:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"case file not found: {path}")
    return parse_case(path.read_text(encoding="utf-8"), name=path.stem)


def default_case() -> GridCase:
    """The bundled IEEE 39-bus case."""
    text = resources.files("tsgen").joinpath("data/case39.txt").read_text(encoding="utf-8")
    return parse_case(text, name="case39")
