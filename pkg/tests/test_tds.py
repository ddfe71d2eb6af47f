import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from tsgen.tds.case import Bus, CaseError, Generator, GridCase, Line, Load, default_case, parse_case
from tsgen.tds.dynamics import (
    STABLE,
    UNSTABLE,
    SwingModels,
    SwingResult,
    label_stability,
    network_snapshot,
    prepare_dynamic_model,
    simulate_swing,
)
from tsgen.tds.network import FAULT_ADMITTANCE, Fault, ScenarioRejected, build_ybus
from tsgen.tds.powerflow import solve_power_flow
from tsgen.tds.scenario import (
    LOAD_LEVELS,
    ConfigurationError,
    ScenarioConfig,
    generate_dataset,
    load_level_bucket,
    run_scenario,
    sample_schema,
)


@pytest.fixture(scope="module")
def case39():
    return default_case()


# --------------------------------------------------------------------------
# case
# --------------------------------------------------------------------------

class TestCase:
    def test_default_counts(self, case39):
        assert (case39.n_bus, len(case39.generators), len(case39.loads), len(case39.lines)) == \
            (39, 10, 19, 46)
        assert case39.snapshot_width == 136

    def test_total_base_load(self, case39):
        assert sum(ld.p0 for ld in case39.loads) * case39.base_mva == pytest.approx(6097.1, abs=1e-6)

    def test_single_slack(self, case39):
        assert sum(b.type == "slack" for b in case39.buses) == 1

    def test_parse_errors(self):
        with pytest.raises(CaseError, match="missing section"):
            parse_case("[bus]\nid type\n1 slack\n")
        good = ("[bus]\nid type\n1 slack\n2 PQ\n[line]\nfrom to r x\n1 2 0 0.1\n"
                "[generator]\nbus p0 vset pmin pmax h xd_prime\n1 0 1 0 1 5 0.2\n"
                "[load]\nbus p0 q0\n2 0.1 0\n")
        assert parse_case(good).n_bus == 2
        with pytest.raises(CaseError, match="unknown bus"):
            parse_case(good.replace("1 2 0 0.1", "1 3 0 0.1"))
        with pytest.raises(CaseError, match="reactance"):
            parse_case(good.replace("1 2 0 0.1", "1 2 0 0"))
        with pytest.raises(CaseError, match="line 7"):
            parse_case(good.replace("1 2 0 0.1", "1 2 zero 0.1"))


# --------------------------------------------------------------------------
# admittance matrix
# --------------------------------------------------------------------------

def two_bus(r=0.0, x=0.1, b=0.0, p=0.0, q=0.0):
    return GridCase(
        buses=[Bus(1, "slack"), Bus(2, "PQ")],
        lines=[Line(1, 2, r, x, b)],
        generators=[Generator(1, 0.0, 1.0, 0.0, 10.0, 5.0, 0.2)],
        loads=[Load(2, p, q)] if (p or q) else [],
    )


class TestYbus:
    def test_two_bus_pi_model(self):
        Y = build_ybus(two_bus())
        y = 1 / 0.1j
        assert Y[0, 1] == pytest.approx(-y, abs=1e-12)
        assert Y[0, 0] == pytest.approx(y, abs=1e-12)
        assert Y[1, 1] == pytest.approx(y, abs=1e-12)

    def test_three_bus_hand_built(self):
        case = GridCase(
            buses=[Bus(1, "slack"), Bus(2, "PV"), Bus(3, "PQ")],
            lines=[Line(1, 2, 0.01, 0.1, 0.02), Line(2, 3, 0.02, 0.2, 0.04, tap=1.05),
                   Line(1, 3, 0.0, 0.25, 0.0)],
            generators=[Generator(1, 0, 1, 0, 5, 5, 0.2), Generator(2, 0.5, 1, 0, 5, 5, 0.2)],
            loads=[Load(3, 0.5, 0.1)],
        )
        y12, y23, y13 = 1 / (0.01 + 0.1j), 1 / (0.02 + 0.2j), 1 / 0.25j
        s12, s23 = 0.01j, 0.02j
        t = 1.05
        expected = np.array([
            [y12 + s12 + y13, -y12, -y13],
            [-y12, y12 + s12 + (y23 + s23) / t**2, -y23 / t],
            [-y13, -y23 / t, y23 + s23 + y13],
        ])
        assert np.max(np.abs(build_ybus(case) - expected)) < 1e-12

    def test_row_sums_zero_without_shunts(self, case39):
        lossless = GridCase(case39.buses, [Line(ln.from_bus, ln.to_bus, ln.r, ln.x)
                                           for ln in case39.lines],
                            case39.generators, case39.loads)
        assert np.max(np.abs(build_ybus(lossless).sum(axis=1))) < 1e-9

    def test_symmetric(self, case39):
        for state in ("prefault", "fault_on", "postfault"):
            Y = build_ybus(case39, Fault(3, 0.4), state)
            assert np.allclose(Y, Y.T, atol=1e-12, rtol=0)

    def test_fault_node(self, case39):
        Y = build_ybus(case39, Fault(3, 0.4), "fault_on")
        assert Y.shape == (40, 40)
        assert Y[39, 39].real >= FAULT_ADMITTANCE
        ln = case39.lines[3]
        f, t = case39.bus_index(ln.from_bus), case39.bus_index(ln.to_bus)
        assert Y[f, t] == 0
        assert Y[f, 39] == pytest.approx(-1 / complex(ln.r * 0.4, ln.x * 0.4) / ln.tap)

    def test_postfault_removes_line(self, case39):
        ln = case39.lines[3]
        f, t = case39.bus_index(ln.from_bus), case39.bus_index(ln.to_bus)
        Y = build_ybus(case39, Fault(3, 0.4), "postfault")
        assert Y[f, t] == 0 and Y.shape == (39, 39)

    def test_islanding_rejected(self):
        with pytest.raises(ScenarioRejected, match="islands"):
            build_ybus(two_bus(), Fault(0, 0.5), "postfault")


# --------------------------------------------------------------------------
# power flow
# --------------------------------------------------------------------------

def two_bus_closed_form(r, x, p, q, v1=1.0):
    """Receiving-end voltage of a radial line feeding P+jQ, larger root."""
    a = 2 * (r * p + x * q) - v1**2
    c = (r**2 + x**2) * (p**2 + q**2)
    v2sq = (-a + math.sqrt(a * a - 4 * c)) / 2
    vm = math.sqrt(v2sq)
    # with V2 on the real axis: V1 = V2 + Z * conj(S / V2)
    v1_rel = vm + complex(r, x) * complex(p, -q) / vm
    return vm, -math.atan2(v1_rel.imag, v1_rel.real)


class TestPowerFlow:
    def test_flat_no_load(self):
        case = GridCase(
            buses=[Bus(1, "slack"), Bus(2, "PV"), Bus(3, "PQ")],
            lines=[Line(1, 2, 0, 0.1), Line(2, 3, 0, 0.2), Line(1, 3, 0, 0.3)],
            generators=[Generator(1, 0, 1.02, 0, 5, 5, 0.2), Generator(2, 0, 1.02, 0, 5, 5, 0.2)],
            loads=[],
        )
        pf = solve_power_flow(case)
        assert np.allclose(pf.vm, 1.02, atol=1e-12)
        assert np.allclose(pf.va, 0.0, atol=1e-12)

    @pytest.mark.parametrize("r,x,p,q", [(0.01, 0.1, 1.0, 0.3), (0.05, 0.2, 0.8, -0.2),
                                         (0.0, 0.15, 1.5, 0.5)])
    def test_two_bus_closed_form(self, r, x, p, q):
        pf = solve_power_flow(two_bus(r, x, 0.0, p=p, q=q))
        vm, va = two_bus_closed_form(r, x, p, q)
        assert abs(pf.vm[1] - vm) < 1e-8
        assert abs(pf.va[1] - va) < 1e-8

    @pytest.mark.parametrize("scale", [0.6, 1.0, 1.45])
    def test_residual(self, case39, scale):
        pf = solve_power_flow(case39, scale)
        Y = build_ybus(case39)
        S = pf.v * np.conj(Y @ pf.v)
        inj = np.zeros(case39.n_bus, dtype=complex)
        for g, pg, qg in zip(case39.generators, pf.pg, pf.qg):
            inj[case39.bus_index(g.bus)] += pg + 1j * qg
        for ld, pl, ql in zip(case39.loads, pf.p_load, pf.q_load):
            inj[case39.bus_index(ld.bus)] -= pl + 1j * ql
        assert np.max(np.abs(S - inj)) < 1e-8

    def test_proportional_dispatch(self, case39):
        pf = solve_power_flow(case39, 1.2)
        slack = case39.buses[case39.slack_index].id
        for g, pg in zip(case39.generators, pf.pg):
            if g.bus != slack:
                assert pg == pytest.approx(1.2 * g.p0)

    def test_non_convergence_rejected(self):
        with pytest.raises(ScenarioRejected):
            solve_power_flow(two_bus(0.0, 0.5, p=5.0, q=2.0))


# --------------------------------------------------------------------------
# reduced models and swing
# --------------------------------------------------------------------------

class TestReducedModel:
    def test_equilibrium(self, case39):
        pf = solve_power_flow(case39)
        m = prepare_dynamic_model(case39, pf)
        assert np.max(np.abs(m.electrical_power(m.delta0) - m.pm)) < 1e-8

    def test_symmetric(self, case39):
        pf = solve_power_flow(case39)
        for state in ("prefault", "fault_on", "postfault"):
            m = prepare_dynamic_model(case39, pf, state, Fault(10, 0.3))
            assert np.max(np.abs(m.y_red - m.y_red.T)) < 1e-12

    def test_prefault_snapshot_reproduces_power_flow(self, case39):
        pf = solve_power_flow(case39, 0.9)
        m = prepare_dynamic_model(case39, pf)
        snap = network_snapshot(m, m.delta0)
        assert np.max(np.abs(snap.vm - pf.vm)) < 1e-9
        assert np.max(np.abs(snap.p_gen - pf.pg)) < 1e-9
        assert np.max(np.abs(snap.q_load - pf.q_load)) < 1e-9


def no_fault_models(case, scale=1.0):
    pre = prepare_dynamic_model(case, solve_power_flow(case, scale))
    return SwingModels(pre, pre, pre)


class TestSwing:
    def test_no_fault_drift(self, case39):
        res = simulate_swing(no_fault_models(case39), 0.1, horizon=10.0, step=0.005)
        assert np.max(np.abs(res.delta - res.delta[0])) < 1e-6
        assert label_stability(res) == STABLE

    def test_step_landing_on_clearing_time(self, case39):
        res = simulate_swing(no_fault_models(case39), 0.0731, horizon=1.0, step=0.01)
        assert np.any(np.isclose(res.times, 0.0731, atol=1e-14, rtol=0))
        assert res.times[-1] == pytest.approx(1.0)

    def test_step_halving_snapshot(self, case39):
        pf = solve_power_flow(case39, 1.1)
        fault = Fault(20, 0.35)
        models = SwingModels(*(prepare_dynamic_model(case39, pf, s, fault)
                               for s in ("prefault", "fault_on", "postfault")))
        a = simulate_swing(models, 0.137, horizon=0.5, step=0.005).snapshot.vector()
        b = simulate_swing(models, 0.137, horizon=0.5, step=0.0025).snapshot.vector()
        assert np.max(np.abs(a - b)) < 1e-4

    def test_label_constant_and_runaway(self):
        h = np.array([5.0, 5.0])
        t = np.linspace(0, 1, 11)
        const = np.tile([0.1, -0.2], (11, 1))
        runaway = np.column_stack([t * 20.0, np.zeros(11)])
        dummy = None
        assert label_stability(SwingResult(t, const, 0 * const, dummy, 0.1, False, h)) == STABLE
        assert label_stability(SwingResult(t, runaway, 0 * runaway, dummy, 0.1, False, h)) == UNSTABLE

    def test_clearing_time_validated(self, case39):
        with pytest.raises(ValueError):
            simulate_swing(no_fault_models(case39), 10.0, horizon=10.0)


# --------------------------------------------------------------------------
# single machine against an infinite bus: equal-area oracle
# --------------------------------------------------------------------------

XG, XL, X_INF, H_GEN, H_INF, P_M, POS = 0.3, 0.5, 1e-3, 5.0, 1e5, 0.8, 0.5


def smib_case():
    # two parallel lines so that tripping the faulted one keeps the system connected
    return GridCase(
        buses=[Bus(1, "PV"), Bus(2, "slack")],
        lines=[Line(1, 2, 0.0, XL), Line(1, 2, 0.0, XL)],
        generators=[Generator(1, P_M, 1.0, 0, 5, H_GEN, XG, 0.0),
                    Generator(2, 0.0, 1.0, -50, 50, H_INF, X_INF, 0.0)],
        loads=[],
        frequency=60.0,
    )


def _chain(*elements):
    m = np.eye(2, dtype=complex)
    for kind, v in elements:
        m = m @ (np.array([[1, v], [0, 1]]) if kind == "z" else np.array([[1, 0], [v, 1]]))
    return m


def smib_oracle():
    """Equal-area critical angle and the fault-on time to reach it."""
    # operating point from the two-bus solution with |V1| = |V2| = 1
    x_pre_line = XL / 2
    theta = math.asin(P_M * x_pre_line)
    v1, v2 = complex(math.cos(theta), math.sin(theta)), 1.0 + 0j
    i = (v1 - v2) / (1j * x_pre_line)
    e1, e2 = v1 + 1j * XG * i, v2 - 1j * X_INF * i
    E1, E2 = abs(e1), abs(e2)
    d0 = math.atan2(e1.imag, e1.real) - math.atan2(e2.imag, e2.real)

    pmax_pre = E1 * E2 / (XG + x_pre_line + X_INF)
    pmax_post = E1 * E2 / (XG + XL + X_INF)
    # fault-on: the grounded fault point turns the two half-lines into shunts
    b_fault = _chain(("z", 1j * XG), ("y", 1 / (1j * POS * XL)), ("z", 1j * XL),
                     ("y", 1 / (1j * (1 - POS) * XL)), ("z", 1j * X_INF))[0, 1]
    pmax_f = E1 * E2 / abs(b_fault)
    assert math.isclose(pmax_pre * math.sin(d0), P_M, rel_tol=1e-9)

    d_max = math.pi - math.asin(P_M / pmax_post)
    cos_dc = (P_M * (d_max - d0) + pmax_post * math.cos(d_max) - pmax_f * math.cos(d0)) \
        / (pmax_post - pmax_f)
    d_crit = math.acos(cos_dc)

    omega_s = 2 * math.pi * 60.0
    # relative angle: the slack machine carries -P_M mechanical and -Pe electrical power
    inv_m = omega_s / (2 * H_GEN) + omega_s / (2 * H_INF)

    def rhs(t, y):
        return [y[1], (P_M - pmax_f * math.sin(y[0])) * inv_m]

    def hit(t, y):
        return y[0] - d_crit
    hit.terminal, hit.direction = True, 1
    sol = solve_ivp(rhs, (0, 5), [d0, 0.0], events=hit, rtol=1e-11, atol=1e-12)
    return d_crit, float(sol.t_events[0][0])


@pytest.fixture(scope="module")
def smib():
    case = smib_case()
    pf = solve_power_flow(case)
    fault = Fault(0, POS)
    models = SwingModels(*(prepare_dynamic_model(case, pf, s, fault)
                           for s in ("prefault", "fault_on", "postfault")))
    return models, smib_oracle()


class TestSMIB:
    def test_reduced_matrix_matches_textbook(self, smib):
        models, _ = smib
        for m, x in ((models.prefault, XG + XL / 2 + X_INF), (models.postfault, XG + XL + X_INF)):
            assert abs(m.y_red[0, 1] + 1 / (1j * x)) < 1e-9
            assert abs(m.y_red[0, 0] - 1 / (1j * x)) < 1e-9

    def test_critical_clearing_bracket(self, smib):
        models, (_, t_crit) = smib
        assert 0.05 < t_crit < 0.5
        below = simulate_swing(models, 0.95 * t_crit, horizon=5.0, step=0.002)
        above = simulate_swing(models, 1.05 * t_crit, horizon=5.0, step=0.002)
        assert label_stability(below) == STABLE
        assert label_stability(above) == UNSTABLE
        rel = below.delta[:, 0] - below.delta[:, 1]
        assert rel.max() < math.pi

    def test_monotone_in_clearing_time(self, smib):
        models, (_, t_crit) = smib
        labels = [label_stability(simulate_swing(models, f * t_crit, horizon=3.0, step=0.004,
                                                 stop_spread=2 * math.pi))
                  for f in np.linspace(0.3, 1.7, 15)]
        first_unstable = labels.index(UNSTABLE)
        assert all(lab == UNSTABLE for lab in labels[first_unstable:])
        assert all(lab == STABLE for lab in labels[:first_unstable])


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------

class TestScenario:
    def test_bucket(self):
        assert load_level_bucket(1.02) == "100%"
        assert load_level_bucket(0.6) == "60%"
        assert load_level_bucket(1.45) == "145%"
        assert load_level_bucket(0.874) == "85%"
        assert len(LOAD_LEVELS) == 18

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.60, 1.45))
    def test_bucket_in_levels(self, scale):
        assert load_level_bucket(scale) in LOAD_LEVELS

    def test_config_ranges(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(load_scale_range=(0.5, 1.0))
        with pytest.raises(ConfigurationError):
            ScenarioConfig(step=0.05)
        with pytest.raises(ConfigurationError):
            ScenarioConfig(clearing_time_range=(0.1, 0.01))

    def test_deterministic_and_in_range(self, case39):
        cfg = ScenarioConfig(seed=11)
        for i in range(5):
            a, b = run_scenario(case39, cfg, i), run_scenario(case39, cfg, i)
            assert a.features.tobytes() == b.features.tobytes()
            assert (a.label, a.load_level, a.clearing_time) == (b.label, b.load_level, b.clearing_time)
            assert 0.60 <= a.load_scale <= 1.45
            assert 0.20 <= a.fault_position <= 0.80
            assert 1 / 60 <= a.clearing_time <= 1 / 3
            assert a.features.shape == (136,)
            assert np.all(np.isfinite(a.features))
            assert np.all((a.features[:39] > 0) & (a.features[:39] < 2))
            assert a.load_level == load_level_bucket(a.load_scale)

    def test_schema(self, case39):
        schema = sample_schema(case39)
        assert len(schema) == 138
        assert schema[-2].name == "stability" and schema[-2].role == "label"
        assert len(schema[-1].categories) == 18

    def test_single_row(self, case39):
        t = generate_dataset(case39, ScenarioConfig(seed=1), 1)
        assert len(t) == 1 and t.rows.shape == (1, 138)

    def test_workers_do_not_change_results(self, case39):
        cfg = ScenarioConfig(seed=5)
        one = generate_dataset(case39, cfg, 100, workers=1)
        two = generate_dataset(case39, cfg, 100, workers=2)
        assert one.equals(two)
