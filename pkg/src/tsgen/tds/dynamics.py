"""Classical-model transient simulation.

Each generator is a constant EMF behind its transient reactance. Loads become
constant admittances at their power-flow voltage and all non-generator nodes
are Kron-reduced away, leaving an internal-node admittance matrix per network
state. Rotor dynamics follow

    (2H / omega_s) * d2(delta)/dt2 = Pm - Pe - D * (d(delta)/dt) / omega_s

with ``D`` in pu power per pu speed deviation, integrated by fixed-step RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .case import GridCase
from .network import Fault, ScenarioRejected, build_ybus
from .powerflow import PowerFlowResult

DIVERGENCE_ANGLE = 1e4
INSTABILITY_SPREAD = 2.0 * np.pi
STABLE, UNSTABLE = "stable", "unstable"


@dataclass(frozen=True, eq=False)
class ReducedModel:
    y_red: np.ndarray  # (ng, ng) internal-node admittance
    e_mag: np.ndarray  # EMF magnitudes
    delta0: np.ndarray  # initial rotor angles, rad
    pm: np.ndarray  # mechanical power, pu
    h: np.ndarray
    d: np.ndarray
    omega_s: float
    recovery: np.ndarray  # (n_bus, ng): bus voltages = recovery @ internal EMFs
    gen_bus: np.ndarray
    xd_prime: np.ndarray
    load_bus: np.ndarray
    load_y: np.ndarray
    state: str = "prefault"

    def electrical_power(self, delta: np.ndarray) -> np.ndarray:
        E = self.e_mag * np.exp(1j * delta)
        return (E * np.conj(self.y_red @ E)).real


@dataclass(frozen=True)
class SwingModels:
    prefault: ReducedModel
    fault_on: ReducedModel
    postfault: ReducedModel


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Full-network operating point recovered from the rotor angles."""

    vm: np.ndarray
    va: np.ndarray  # bus angles relative to the centre-of-inertia angle, rad
    p_load: np.ndarray
    q_load: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.vm, self.va, self.p_load, self.q_load, self.p_gen, self.q_gen])


@dataclass(frozen=True, eq=False)
class SwingResult:
    times: np.ndarray
    delta: np.ndarray  # (T, ng)
    omega: np.ndarray  # (T, ng) speed deviation, rad/s
    snapshot: Snapshot
    clearing_time: float
    early_stop: bool
    h: np.ndarray  # inertia constants, for the centre-of-inertia frame


def prepare_dynamic_model(case: GridCase, pf: PowerFlowResult, state: str = "prefault",
                          fault: Fault | None = None) -> ReducedModel:
    Y = build_ybus(case, fault, state)
    n = case.n_bus
    V = pf.v
    load_bus = np.array([case.bus_index(ld.bus) for ld in case.loads], dtype=np.int64)
    load_y = (pf.p_load - 1j * pf.q_load) / np.abs(V[load_bus]) ** 2
    np.add.at(Y, (load_bus, load_bus), load_y)

    gens = case.generators
    gen_bus = np.array([case.bus_index(g.bus) for g in gens], dtype=np.int64)
    xd = np.array([g.xd_prime for g in gens])
    y_gen = 1.0 / (1j * xd)
    Vt = V[gen_bus]
    I = np.conj((pf.pg + 1j * pf.qg) / Vt)
    E = Vt + 1j * xd * I

    np.add.at(Y, (gen_bus, gen_bus), y_gen)
    ng = len(gens)
    Y_bg = np.zeros((Y.shape[0], ng), dtype=np.complex128)
    Y_bg[gen_bus, np.arange(ng)] = -y_gen
    try:
        X = np.linalg.solve(Y, Y_bg)
    except np.linalg.LinAlgError:
        raise ScenarioRejected(f"singular network matrix in {state} state") from None
    y_red = np.diag(y_gen) - Y_bg.T @ X
    if not np.all(np.isfinite(y_red)):
        raise ScenarioRejected(f"non-finite reduced matrix in {state} state")
    return ReducedModel(
        y_red=y_red,
        e_mag=np.abs(E),
        delta0=np.angle(E),
        pm=np.asarray(pf.pg, dtype=np.float64).copy(),
        h=np.array([g.h for g in gens]),
        d=np.array([g.d for g in gens]),
        omega_s=case.omega_s,
        recovery=-X[:n],
        gen_bus=gen_bus,
        xd_prime=xd,
        load_bus=load_bus,
        load_y=load_y,
        state=state,
    )


def coi_angle(delta: np.ndarray, h: np.ndarray) -> np.ndarray:
    return delta @ h / h.sum()


def network_snapshot(model: ReducedModel, delta: np.ndarray) -> Snapshot:
    E = model.e_mag * np.exp(1j * delta)
    V = model.recovery @ E
    ref = coi_angle(delta, model.h)
    Vt = V[model.gen_bus]
    S_gen = Vt * np.conj((E - Vt) / (1j * model.xd_prime))
    S_load = np.abs(V[model.load_bus]) ** 2 * np.conj(model.load_y)
    return Snapshot(
        vm=np.abs(V),
        va=np.angle(V * np.exp(-1j * ref)),
        p_load=S_load.real,
        q_load=S_load.imag,
        p_gen=S_gen.real,
        q_gen=S_gen.imag,
    )


def _rk4(model: ReducedModel, delta, omega, dt, n_steps, out_d, out_w, start, stop_spread):
    Y, Em = model.y_red, model.e_mag
    M = 2.0 * model.h / model.omega_s
    damp = model.d / model.omega_s
    pm = model.pm

    def accel(dl, w):
        E = Em * np.exp(1j * dl)
        pe = (E * np.conj(Y @ E)).real
        return (pm - pe - damp * w) / M

    k = start
    for _ in range(n_steps):
        a1 = accel(delta, omega)
        d2, w2 = delta + 0.5 * dt * omega, omega + 0.5 * dt * a1
        a2 = accel(d2, w2)
        d3, w3 = delta + 0.5 * dt * w2, omega + 0.5 * dt * a2
        a3 = accel(d3, w3)
        d4, w4 = delta + dt * w3, omega + dt * a3
        a4 = accel(d4, w4)
        delta = delta + dt / 6.0 * (omega + 2 * w2 + 2 * w3 + w4)
        omega = omega + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        k += 1
        out_d[k], out_w[k] = delta, omega
        if not np.all(np.isfinite(delta)) or np.max(np.abs(delta)) > DIVERGENCE_ANGLE:
            return delta, omega, k, True
        if stop_spread is not None and delta.max() - delta.min() > stop_spread:
            return delta, omega, k, True
    return delta, omega, k, False


def simulate_swing(models: SwingModels, clearing_time: float, horizon: float = 10.0,
                   step: float = 0.005, stop_spread: float | None = None) -> SwingResult:
    """Integrate the fault-on network on [0, t_cl) and the post-fault network after.

    Step sizes are shrunk uniformly within each interval so the switch lands
    exactly on ``clearing_time``. The snapshot is taken on the post-fault
    network at the clearing instant. ``stop_spread`` (rad) ends the run early
    once the rotor-angle spread exceeds it.
    """
    if not 0.0 <= clearing_time < horizon:
        raise ValueError("clearing time must lie in [0, horizon)")
    if step <= 0:
        raise ValueError("step must be positive")
    n1 = math.ceil(clearing_time / step - 1e-9) if clearing_time > 0 else 0
    n2 = max(1, math.ceil((horizon - clearing_time) / step - 1e-9))
    total = n1 + n2
    times = np.empty(total + 1)
    out_d = np.empty((total + 1, len(models.prefault.delta0)))
    out_w = np.empty_like(out_d)
    delta = models.prefault.delta0.copy()
    omega = np.zeros_like(delta)
    out_d[0], out_w[0], times[0] = delta, omega, 0.0

    k, stopped = 0, False
    if n1:
        dt1 = clearing_time / n1
        times[1:n1 + 1] = dt1 * np.arange(1, n1 + 1)
        delta, omega, k, stopped = _rk4(models.fault_on, delta, omega, dt1, n1,
                                        out_d, out_w, 0, stop_spread)
    snapshot = network_snapshot(models.postfault, delta)
    if not stopped:
        dt2 = (horizon - clearing_time) / n2
        times[n1 + 1:] = clearing_time + dt2 * np.arange(1, n2 + 1)
        delta, omega, k, stopped = _rk4(models.postfault, delta, omega, dt2, n2,
                                        out_d, out_w, n1, stop_spread)
    return SwingResult(times[:k + 1], out_d[:k + 1], out_w[:k + 1], snapshot,
                       float(clearing_time), bool(stopped), models.prefault.h)


def label_stability(result: SwingResult) -> str:
    """Unstable iff the rotor-angle spread ever exceeds 2*pi rad."""
    delta = result.delta
    rel = delta - coi_angle(delta, result.h)[:, None]
    if not np.all(np.isfinite(rel)):
        return UNSTABLE
    spread = rel.max(axis=1) - rel.min(axis=1)
    return UNSTABLE if spread.max() > INSTABILITY_SPREAD else STABLE
