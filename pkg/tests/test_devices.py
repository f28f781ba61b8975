import json
import math

import numpy as np
import pytest

from zipedyn import dae, netdata, oracle, smallsignal, transient
from zipedyn.devices import (
    NetworkSolveError, SmParams, AvrParams, GovParams,
    dynpi_derivatives, bus_capacitor_derivative, initialize_sm,
    sm_derivatives, sm_injection, statpi_network_solve,
    vsm_derivatives, initialize_vsm,
)
from zipedyn.frames import DQ_SCALE, phasor_to_dq
from zipedyn.smallsignal import fd_jacobian

from conftest import two_bus_case

W_BASE = 2 * math.pi * 60.0


# ------------------------------------------------------------------ SM

def test_sm_equilibrium_fixed_point(eqcache):
    system, eq = eqcache.get("zip", 0.0, "dynpi", 0.5)
    gen = [g for g in system.gens if g.kind == "SM"][0]
    v = system.bus_voltages(eq.x0)[gen.pos]
    d = sm_derivatives(eq.x0[gen.sl], v, gen.par)
    assert np.max(np.abs(d)) < 1e-9


def test_sm_no_load_terminal_voltage():
    case = two_bus_case()  # SM alone, nothing connected downstream
    sc = dae.ScenarioSpec(family="zip", x=0.0, line_model="dynpi", load_scale=1.0)
    system = dae.assemble(case, sc)
    pf = dae.scenario_power_flow(system)
    eq = dae.initialize(system, pf)
    gen = system.gens[0]
    v = system.bus_voltages(eq.x0)[gen.pos]
    assert abs(v) / DQ_SCALE == pytest.approx(1.0, abs=1e-9)
    res = transient.simulate(system, eq, horizon=0.5, sample_hz=500,
                             keep_states=True)
    delta_col = system.state_index[(f"gen{gen.bus}_sm", "delta")]
    drift = np.max(np.abs(res.states[:, delta_col] - eq.x0[delta_col]))
    assert drift < 1e-8


def test_sm_damping_shifts_electromech_mode_left():
    """More rotor damping strictly lowers the dominant swing mode's Re."""
    res = []
    for d in (1.0, 5.0, 20.0):
        case = two_bus_case(load_p=0.8, load_q=0.2, branch_b=0.05)
        gens = list(case.generators)
        par = gens[0].params
        newpar = SmParams(h=par.h, d=d, xd=par.xd, xq=par.xq, xd_p=par.xd_p,
                          xq_p=par.xq_p, td0_p=par.td0_p, tq0_p=par.tq0_p,
                          ra=par.ra, avr=par.avr, gov=par.gov)
        from dataclasses import replace
        case = replace(case, generators=(replace(gens[0], params=newpar),))
        sc = dae.ScenarioSpec(family="zip", x=0.0, line_model="dynpi",
                              load_scale=1.0)
        system = dae.assemble(case, sc)
        eq = dae.initialize(system, dae.scenario_power_flow(system))
        blocks = smallsignal.jacobian(system, eq)
        a, _ = smallsignal.reduce(blocks)
        rep = smallsignal.eigenvalues(a)
        p = smallsignal.participation_factors(a)
        om = system.state_index[("gen1_sm", "omega")]
        osc = [(p[k][om], lam) for k, lam in enumerate(rep.eigenvalues)
               if 0.1 < rep.freq_hz[k] < 5.0]
        res.append(max(osc)[1].real)
    assert res[0] > res[1] > res[2]


def test_sm_injection_consistent_with_power_flow(eqcache):
    system, eq = eqcache.get("zip", 0.0, "dynpi", 0.5)
    gen = [g for g in system.gens if g.kind == "SM"][0]
    v = system.bus_voltages(eq.x0)[gen.pos]
    i = sm_injection(eq.x0[gen.sl], v, gen.par)
    s = 0.5 * v * np.conj(i)
    assert s.real == pytest.approx(eq.pf.p_inj[gen.pos], abs=1e-9)
    assert s.imag == pytest.approx(eq.pf.q_inj[gen.pos], abs=1e-9)


# ------------------------------------------------------------------ VSM

def test_vsm_equilibrium_fixed_point(eqcache):
    system, eq = eqcache.get("zip", 0.0, "dynpi", 0.5)
    gen = [g for g in system.gens if g.kind == "GFM_VSM"][0]
    v = system.bus_voltages(eq.x0)[gen.pos]
    d = vsm_derivatives(eq.x0[gen.sl], v, gen.par)
    assert np.max(np.abs(d)) < 1e-9


def _islanded_vsm_case(load_p=0.5, load_q=0.1):
    doc = {
        "base_mva": 100.0, "f_nom": 60.0,
        "buses": [{"id": 1, "kind": "Reference", "v_set": 1.0, "v_nom": 18.0}],
        "branches": [],
        "generators": [{"bus": 1, "kind": "GFM_VSM", "p_set": load_p,
                        "q_set": 0.0,
                        "params": {"ta": 4.0, "kd": 75.0, "komega": 75.0,
                                   "kp_v": 0.5, "ki_v": 60.0, "kp_c": 0.8,
                                   "ki_c": 15.0, "lf": 0.1, "rf": 0.005,
                                   "cf": 0.12}}],
        "loads": [{"bus": 1, "p0": load_p, "q0": load_q, "v0": 1.0,
                   "eta": [1.0, 0.0, 0.0, 0.0], "gamma": [1.0, 0.0, 0.0, 0.0]}],
    }
    return netdata.load_case(json.dumps(doc))


def test_islanded_vsm_settles_to_droop_frequency():
    """A 10% load step on an islanded VSM lands at the droop-implied speed."""
    case = _islanded_vsm_case()
    sc = dae.ScenarioSpec(family="zip", x=0.0, line_model="dynpi", load_scale=1.0)
    base = dae.assemble(case, sc)
    eq = dae.initialize(base, dae.scenario_power_flow(base))
    stepped = dae.assemble(case, dae.ScenarioSpec(
        family="zip", x=0.0, line_model="dynpi", load_scale=1.1))
    dae.rebind_operating_point(stepped, base)
    x0 = dae.map_states(base, stepped, eq.x0)
    eq_stepped = dae.EquilibriumPoint(x0=x0, y0=np.empty(0), pf=eq.pf,
                                      residual_inf_norm=np.nan)
    res = transient.simulate(stepped, eq_stepped, horizon=8.0, sample_hz=500)
    gen = stepped.gens[0]
    # the voltage loop restores the load voltage, so the impedance load
    # consumes exactly 1.1x its bound power; droop absorbs the extra 0.1*p_set
    omega_expect = 1.0 - 0.1 * gen.par.p_set / (gen.par.kd + gen.par.komega)
    omega = res.signals["gen1_omega"][-1]
    assert omega == pytest.approx(omega_expect, abs=1e-5)


def test_two_vsm_power_step_shares_per_droop():
    """Steady-state sharing of a load step follows the droop coefficients."""
    k_sums = (300.0, 150.0)
    doc = {
        "base_mva": 100.0, "f_nom": 60.0,
        "buses": [{"id": 1, "kind": "Reference", "v_set": 1.0, "v_nom": 18.0},
                  {"id": 2, "kind": "PV", "v_set": 1.0, "v_nom": 18.0}],
        "branches": [{"id": "1-2", "from_bus": 1, "to_bus": 2, "r": 0.01,
                      "x": 0.15, "b": 0.0}],
        "generators": [
            {"bus": 1, "kind": "GFM_VSM", "p_set": 0.4, "q_set": 0.0,
             "params": {"ta": 4.0, "kd": 150.0, "komega": 150.0, "kp_v": 0.5,
                        "ki_v": 60.0, "kp_c": 0.8, "ki_c": 15.0,
                        "lf": 0.1, "rf": 0.005, "cf": 0.12}},
            {"bus": 2, "kind": "GFM_VSM", "p_set": 0.4, "q_set": 0.0,
             "params": {"ta": 4.0, "kd": 75.0, "komega": 75.0, "kp_v": 0.5,
                        "ki_v": 60.0, "kp_c": 0.8, "ki_c": 15.0,
                        "lf": 0.1, "rf": 0.005, "cf": 0.12}},
        ],
        "loads": [{"bus": 2, "p0": 0.8, "q0": 0.2, "v0": 1.0,
                   "eta": [1.0, 0.0, 0.0, 0.0], "gamma": [1.0, 0.0, 0.0, 0.0]}],
    }
    case = netdata.load_case(json.dumps(doc))
    sc = dae.ScenarioSpec(family="zip", x=0.0, line_model="dynpi", load_scale=1.0)
    base = dae.assemble(case, sc)
    eq = dae.initialize(base, dae.scenario_power_flow(base))
    stepped = dae.assemble(case, dae.ScenarioSpec(
        family="zip", x=0.0, line_model="dynpi", load_scale=1.12))
    dae.rebind_operating_point(stepped, base)
    x0 = dae.map_states(base, stepped, eq.x0)
    eq_stepped = dae.EquilibriumPoint(x0=x0, y0=np.empty(0), pf=eq.pf,
                                      residual_inf_norm=np.nan)
    res = transient.simulate(stepped, eq_stepped, horizon=10.0, sample_hz=500,
                             keep_states=True)
    x_end = res.states[-1]
    v = stepped.bus_voltages(x_end)
    dp = []
    for k, gen in enumerate(stepped.gens):
        ig = complex(x_end[gen.sl][10], x_end[gen.sl][11])
        p_meas = (0.5 * v[gen.pos] * np.conj(ig)).real
        omega = x_end[gen.sl][1]
        # gen.par.p_set is the bound setpoint (reference unit absorbs losses)
        assert p_meas - gen.par.p_set == pytest.approx(
            k_sums[k] * (1.0 - omega), abs=1e-5)
        dp.append(p_meas - gen.par.p_set)
    assert dp[0] / dp[1] == pytest.approx(k_sums[0] / k_sums[1], rel=1e-2)


# ------------------------------------------------------------------ GFL

def test_gfl_source_fixed_point_and_sign(eqcache):
    from zipedyn.devices import gfl_source_derivatives, gfl_source_injection

    system, eq = eqcache.get("zip", 0.0, "dynpi", 0.5)
    gen = [g for g in system.gens if g.kind == "GFL"][0]
    v = system.bus_voltages(eq.x0)[gen.pos]
    d = gfl_source_derivatives(eq.x0[gen.sl], v, gen.par, gen.p_set, gen.q_set)
    assert np.max(np.abs(d)) < 1e-9
    i = gfl_source_injection(eq.x0[gen.sl], v, gen.par)
    s = 0.5 * v * np.conj(i)
    assert s.real == pytest.approx(gen.p_set, abs=1e-9)  # delivers, not draws
    assert s.real > 0


# ------------------------------------------------------------------ statpi

def test_statpi_two_bus_divider():
    """Stiff source behind a line feeding an impedance: analytic divider."""
    y_src = 1.0 / 0.001j
    y_line = 1.0 / 0.1j
    y_load = 1.0 / (2.0 + 0.5j)
    ybus = np.array([[y_src + y_line, -y_line], [-y_line, y_line + y_load]])
    v_src = DQ_SCALE + 0j
    inj = np.array([y_src * v_src, 0j])
    v, cond = statpi_network_solve(ybus, lambda vc: inj, np.array([1 + 0j, 1 + 0j]))
    v_expect = np.linalg.solve(ybus, inj)
    assert np.max(np.abs(v - v_expect)) < 1e-10
    assert cond < 1e6


def test_statpi_case9_reproduces_power_flow(eqcache):
    system, eq = eqcache.get("zip", 0.3, "statpi", 0.5)
    v, _ = system.solve_algebraic(eq.x0)
    v_pf = np.array([phasor_to_dq(eq.pf.v_at(b), eq.pf.theta_at(b))
                     for b in system.bus_ids])
    assert np.max(np.abs(v - v_pf)) < 1e-8


def test_statpi_cpl_collapse_is_flagged():
    """Loadability of a stiff source behind X feeding a unity-pf CPL is
    P_max = V^2/(2X); beyond it the solve must fail loudly, and conditioning
    grows monotonically on the approach."""
    x_line = 0.1
    p_max = 1.0 / (2 * x_line)
    y_src = 1.0 / 0.0005j
    y_line = 1.0 / (1j * x_line)
    ybus = np.array([[y_src + y_line, -y_line], [-y_line, y_line]])
    v_src = DQ_SCALE + 0j

    def solve_at(p):
        def inj(vc):
            i_load = np.conj(2.0 * p / vc[1])
            return np.array([y_src * v_src, -i_load])
        guess = np.array([DQ_SCALE + 0j, DQ_SCALE + 0j])
        return statpi_network_solve(ybus, inj, guess, max_iter=60)

    conds = [solve_at(f * p_max)[1] for f in (0.5, 0.9, 0.99)]
    assert conds[0] < conds[1] < conds[2]
    with pytest.raises(NetworkSolveError):
        solve_at(1.5 * p_max)


# ------------------------------------------------------------------ dynpi

def test_dynpi_steady_state_is_phasor_solution():
    v_from = DQ_SCALE * 1.02 * np.exp(0.2j)
    v_to = DQ_SCALE * 0.98 * np.exp(-0.1j)
    r, x = 0.01, 0.085
    i_s = (v_from - v_to) / complex(r, x)
    d = dynpi_derivatives(i_s, v_from, v_to, r, x)
    assert abs(d) < 1e-9


def test_dynpi_zero_input_stays_zero():
    assert dynpi_derivatives(0j, 0j, 0j, 0.01, 0.1) == 0j


def test_dynpi_isolated_lc_resonance_matches_analytic():
    """Series L into a shorted-far-end capacitor: the rotating-frame pair
    frequencies are the stationary-frame resonance shifted by +-w_base."""
    l, c = 0.085, 0.24
    w0 = abs(oracle.rlc_eigs(0.0, l, c, W_BASE)[0].imag)

    def rhs(z):
        i_s = complex(z[0], z[1])
        v_c = complex(z[2], z[3])
        di = dynpi_derivatives(i_s, 0j, v_c, 0.0, l)
        dv = bus_capacitor_derivative(v_c, i_s, c)
        return np.array([di.real, di.imag, dv.real, dv.imag])

    a = fd_jacobian(rhs, np.zeros(4))
    lam = np.linalg.eigvals(a)
    freqs = sorted(set(np.round(np.abs(lam.imag), 3)))
    expect = sorted({round(abs(w0 - W_BASE), 3), round(w0 + W_BASE, 3)})
    for f, e in zip(freqs, expect):
        assert f == pytest.approx(e, rel=1e-6)


def test_line_models_share_one_equilibrium(eqcache):
    """statpi and dynpi initialize from the same power flow to the same
    operating point (identical device states and bus voltages)."""
    sys_s, eq_s = eqcache.get("zie", 0.5, "statpi", 0.5)
    sys_d, eq_d = eqcache.get("zie", 0.5, "dynpi", 0.5)
    assert np.max(np.abs(eq_s.pf.v - eq_d.pf.v)) == 0.0
    for key, pos in sys_s.state_index.items():
        if pos >= sys_s.n_diff:
            continue
        pos_d = sys_d.state_index[key]
        assert eq_s.x0[pos] == pytest.approx(eq_d.x0[pos_d], abs=1e-12)
    v_s = sys_s.bus_voltages(eq_s.x0, eq_s.y0)
    v_d = sys_d.bus_voltages(eq_d.x0)
    assert np.max(np.abs(v_s - v_d)) < 1e-12
