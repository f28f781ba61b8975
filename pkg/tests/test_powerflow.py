import json

import numpy as np
import pytest

from zipedyn import netdata, oracle, powerflow
from zipedyn.powerflow import (PowerFlowError, heaviest_loaded_branch,
                               scale_loading, solve_power_flow)

from conftest import two_bus_case


def total_losses(sol):
    return sum(fl[0] + fl[2] for fl in sol.branch_flows.values())


def test_scale_identity(case9):
    assert scale_loading(case9, 1.0) == case9


def test_scale_fifth(case9):
    scaled = scale_loading(case9, 0.2)
    ld5 = [ld for ld in scaled.loads if ld.bus == 5][0]
    base5 = [ld for ld in case9.loads if ld.bus == 5][0]
    assert ld5.p0 == pytest.approx(0.2 * base5.p0, rel=1e-15)
    assert ld5.q0 == pytest.approx(0.2 * base5.q0, rel=1e-15)
    # generator active setpoints scale too; everything else untouched
    for g0, g1 in zip(case9.generators, scaled.generators):
        assert g1.p_set == pytest.approx(0.2 * g0.p_set, rel=1e-15)
        assert g1.q_set == g0.q_set
        assert g1.params == g0.params
    assert scaled.branches == case9.branches


def test_scale_zero(case9):
    scaled = scale_loading(case9, 0.0)
    assert all(ld.p0 == 0 and ld.q0 == 0 for ld in scaled.loads)
    assert all(g.p_set == 0 for g in scaled.generators)


def test_scale_negative_rejected(case9):
    with pytest.raises(ValueError):
        scale_loading(case9, -0.1)


def test_newton_nominal_vs_gs_oracle(case9):
    sol = solve_power_flow(case9, tol=1e-8)
    assert sol.n_iter <= 6
    assert sol.residual_norm < 1e-8
    gs = oracle.gs_power_flow(case9, tol=1e-9)
    assert np.max(np.abs(sol.v - gs.v)) < 1e-6
    assert np.max(np.abs(sol.theta - gs.theta)) < 1e-6


def test_no_load_network(case9):
    bare = scale_loading(case9, 0.0)
    sol = solve_power_flow(bare)
    for k, bus in enumerate(bare.buses):
        if bus.kind in ("Reference", "PV"):
            assert sol.v[k] == pytest.approx(bus.v_set, abs=1e-12)
    # only charging flows remain; angles stay near zero (sub-2-degree)
    assert np.max(np.abs(sol.theta)) < 0.03


def test_overload_diverges(case9):
    heavy = scale_loading(case9, 10.0)
    with pytest.raises(PowerFlowError):
        solve_power_flow(heavy)
    with pytest.raises(oracle.OracleError):
        oracle.gs_power_flow(heavy, max_iter=3000)


def test_heaviest_branch_nominal_is_4_5(case9):
    sol = solve_power_flow(case9)
    assert heaviest_loaded_branch(sol) == "4-5"


def test_heaviest_branch_singleton():
    case = two_bus_case(load_p=0.5, load_q=0.1, branch_b=0.05)
    sol = solve_power_flow(case)
    assert heaviest_loaded_branch(sol) == "1-2"


def test_heaviest_branch_tie_breaks_to_first():
    case = two_bus_case(load_p=0.5, load_q=0.1, branch_b=0.05, parallel=True)
    sol = solve_power_flow(case)
    f_a = sol.branch_flows["1-2"]
    f_b = sol.branch_flows["1-2b"]
    assert f_a == pytest.approx(f_b, abs=1e-12)  # symmetric split
    assert heaviest_loaded_branch(sol) == "1-2"


def test_injections_balance_losses(case9):
    for ls in (0.2, 0.5, 1.0):
        sol = solve_power_flow(scale_loading(case9, ls))
        assert sum(sol.p_inj) == pytest.approx(total_losses(sol), abs=1e-8)


def test_branch_flow_consistency(case9):
    """Recomputing flows from (v, theta) must reproduce branch_flows."""
    sol = solve_power_flow(case9)
    idx = {b: k for k, b in enumerate(sol.bus_ids)}
    vc = sol.v * np.exp(1j * sol.theta)
    for br in case9.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        s_from = vc[i] * np.conj(ys * (vc[i] - vc[j]) + 0.5j * br.b * vc[i])
        pf, qf, _, _ = sol.branch_flows[br.id]
        assert complex(pf, qf) == pytest.approx(s_from, abs=1e-10)


def test_solution_continuity_in_load_scale(case9):
    s = 0.5
    a = solve_power_flow(scale_loading(case9, s))
    b = solve_power_flow(scale_loading(case9, s + 1e-6))
    assert np.max(np.abs(a.v - b.v)) < 1e-4
    assert np.max(np.abs(a.theta - b.theta)) < 1e-4


def test_csv_dump_schema(case9):
    sol = solve_power_flow(case9)
    text = sol.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "bus,v_pu,theta_rad,p_inj,q_inj"
    assert len(lines) == 1 + len(case9.buses)
    row = lines[1].split(",")
    assert int(row[0]) == case9.buses[0].id
    assert float(row[1]) == pytest.approx(sol.v[0])
