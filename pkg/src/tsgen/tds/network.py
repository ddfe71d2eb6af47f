"""Bus admittance matrix for the pre-fault, fault-on and post-fault networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .case import GridCase

FAULT_ADMITTANCE = 1e6
NETWORK_STATES = ("prefault", "fault_on", "postfault")


class ScenarioRejected(RuntimeError):
    """The drawn scenario cannot be simulated and must be resampled."""


@dataclass(frozen=True)
class Fault:
    """Three-phase fault on ``line`` at ``position`` (fraction from the from-bus)."""

    line: int
    position: float


def _stamp(Y, f, t, r, x, b, tap=1.0):
    y = 1.0 / complex(r, x)
    ysh = 0.5j * b
    Y[f, f] += (y + ysh) / tap**2
    Y[t, t] += y + ysh
    Y[f, t] -= y / tap
    Y[t, f] -= y / tap


def is_connected(n_bus: int, edges) -> bool:
    edges = list(edges)
    if n_bus <= 1:
        return True
    if not edges:
        return False
    i, j = np.array(edges).T
    graph = coo_matrix((np.ones(len(i)), (i, j)), shape=(n_bus, n_bus))
    n_comp, _ = connected_components(graph, directed=False)
    return n_comp == 1


def build_ybus(case: GridCase, fault: Fault | None = None, state: str = "prefault") -> np.ndarray:
    """Complex bus admittance matrix with pi-model branches.

    In the ``fault_on`` state the faulted line is split at the fault point into
    two pi-sections meeting at an extra node (index ``n_bus``) that carries a
    1e6 pu shunt. In the ``postfault`` state the faulted line is removed.
    """
    if state not in NETWORK_STATES:
        raise ValueError(f"unknown network state {state!r}")
    if state != "prefault" and fault is None:
        raise ValueError(f"state {state!r} needs a fault")
    n = case.n_bus
    faulted = fault.line if fault is not None and state != "prefault" else None
    if faulted is not None and not 0 <= faulted < len(case.lines):
        raise ValueError(f"fault line index {faulted} out of range")
    size = n + 1 if state == "fault_on" else n
    Y = np.zeros((size, size), dtype=np.complex128)
    edges = []
    for k, ln in enumerate(case.lines):
        f, t = case.bus_index(ln.from_bus), case.bus_index(ln.to_bus)
        if k == faulted:
            continue
        _stamp(Y, f, t, ln.r, ln.x, ln.b, ln.tap)
        edges.append((f, t))

    if state == "fault_on":
        ln = case.lines[faulted]
        p = fault.position
        if not 0.0 < p < 1.0:
            raise ValueError(f"fault position {p} must lie strictly inside the line")
        f, t = case.bus_index(ln.from_bus), case.bus_index(ln.to_bus)
        _stamp(Y, f, n, ln.r * p, ln.x * p, ln.b * p, ln.tap)
        _stamp(Y, n, t, ln.r * (1 - p), ln.x * (1 - p), ln.b * (1 - p))
        Y[n, n] += FAULT_ADMITTANCE
    elif state == "postfault":
        if not is_connected(n, edges):
            ln = case.lines[faulted]
            raise ScenarioRejected(
                f"tripping line {ln.from_bus}-{ln.to_bus} islands the network"
            )
    return Y
