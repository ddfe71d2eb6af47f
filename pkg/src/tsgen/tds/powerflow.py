"""Newton-Raphson AC power flow with proportional generator dispatch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case import GridCase
from .network import ScenarioRejected, build_ybus

MAX_ITER = 50
TOLERANCE = 1e-8
MIN_VOLTAGE = 0.5


@dataclass(frozen=True, eq=False)
class PowerFlowResult:
    v: np.ndarray  # complex bus voltages
    pg: np.ndarray  # per generator, pu
    qg: np.ndarray
    p_load: np.ndarray  # per load, pu, after scaling
    q_load: np.ndarray
    load_scale: float
    iterations: int
    mismatch: float

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def va(self) -> np.ndarray:
        return np.angle(self.v)


def _jacobian(Y, V, pvpq, pq):
    Ibus = Y @ V
    Vn = V / np.abs(V)
    dS_dVa = 1j * V[:, None] * np.conj(np.diag(Ibus) - Y * V[None, :])
    dS_dVm = V[:, None] * np.conj(Y * Vn[None, :]) + np.diag(np.conj(Ibus) * Vn)
    return np.block([
        [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
        [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
    ])


def solve_power_flow(case: GridCase, load_scale: float = 1.0,
                     max_iter: int = MAX_ITER, tol: float = TOLERANCE) -> PowerFlowResult:
    """Solve the AC power flow at ``load_scale`` times the base load.

    Loads scale P and Q together; non-slack generators scale their base
    dispatch by the same factor and the slack covers the remainder plus losses.
    Raises ``ScenarioRejected`` on non-convergence or voltage collapse.
    """
    n = case.n_bus
    Y = build_ybus(case)
    slack = case.slack_index
    types = [b.type for b in case.buses]
    pv = [i for i, t in enumerate(types) if t == "PV"]
    pq = [i for i, t in enumerate(types) if t == "PQ"]
    pvpq = pv + pq

    gen_bus = np.array([case.bus_index(g.bus) for g in case.generators], dtype=np.int64)
    load_bus = np.array([case.bus_index(ld.bus) for ld in case.loads], dtype=np.int64)
    p_load = np.array([ld.p0 for ld in case.loads]) * load_scale
    q_load = np.array([ld.q0 for ld in case.loads]) * load_scale
    is_slack_gen = gen_bus == slack
    pg_sched = np.array([g.p0 for g in case.generators]) * load_scale

    S_spec = np.zeros(n, dtype=np.complex128)
    np.add.at(S_spec, gen_bus[~is_slack_gen], pg_sched[~is_slack_gen])
    np.subtract.at(S_spec, load_bus, p_load + 1j * q_load)

    vm = np.ones(n)
    for g, b in zip(case.generators, gen_bus):
        vm[b] = g.vset
    va = np.zeros(n)
    V = vm * np.exp(1j * va)

    def mismatch(V):
        S = V * np.conj(Y @ V)
        d = S_spec - S
        return np.concatenate([d.real[pvpq], d.imag[pq]])

    F = mismatch(V)
    err = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while err >= tol:
        if it >= max_iter:
            raise ScenarioRejected(
                f"power flow did not converge in {max_iter} iterations "
                f"(load scale {load_scale:.4f}, mismatch {err:.3e})"
            )
        J = _jacobian(Y, V, pvpq, pq)
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            raise ScenarioRejected("singular power-flow Jacobian") from None
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        V = vm * np.exp(1j * va)
        F = mismatch(V)
        err = np.max(np.abs(F)) if F.size else 0.0
        it += 1
        if not np.isfinite(err):
            raise ScenarioRejected("power flow diverged")

    if np.any(vm < MIN_VOLTAGE):
        raise ScenarioRejected(f"voltage collapse: min |V| = {vm.min():.3f} pu")

    S = V * np.conj(Y @ V)
    S_gen_bus = S.copy()
    np.add.at(S_gen_bus, load_bus, p_load + 1j * q_load)

    pg = pg_sched.copy()
    qg = np.zeros(len(case.generators))
    for b in np.unique(gen_bus):
        members = np.flatnonzero(gen_bus == b)
        qg[members] = S_gen_bus[b].imag / len(members)
        if b == slack:
            pg[members] = S_gen_bus[b].real / len(members)
    return PowerFlowResult(V, pg, qg, p_load, q_load, float(load_scale), it, float(err))
