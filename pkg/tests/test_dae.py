import json

import numpy as np
import pytest

from zipedyn import dae, netdata, smallsignal
from zipedyn.dae import ConfigError, ScenarioSpec, apply_branch_trip, assemble
from zipedyn.loadmodels import N_ELOAD_STATES

from conftest import two_bus_case


def test_statpi_zip_state_counts(case9):
    system = assemble(case9, ScenarioSpec(family="zip", x=0.4, line_model="statpi"))
    assert system.n_alg == 18  # 2 per bus
    assert not any(key[0].startswith("load") for key in system.state_index)


def test_dynpi_zie_adds_36_eload_states(case9):
    base = assemble(case9, ScenarioSpec(family="zip", x=0.4, line_model="dynpi"))
    zie = assemble(case9, ScenarioSpec(family="zie", x=0.4, line_model="dynpi"))
    eload_keys = [key for key in zie.state_index if key[0].startswith("load")]
    assert len(eload_keys) == 3 * N_ELOAD_STATES == 36
    assert zie.n_diff == base.n_diff + 36
    assert zie.n_alg == 0


def test_assembly_is_deterministic(case9):
    sc = ScenarioSpec(family="zie", x=0.7, line_model="dynpi", load_scale=0.4)
    a = assemble(case9, sc)
    b = assemble(case9, sc)
    assert a.state_index == b.state_index
    assert np.array_equal(a.mass_diag, b.mass_diag)
    assert np.array_equal(a.ybus_aug, b.ybus_aug)


def test_residual_purity(case9, eqcache):
    """Equal inputs give bitwise-equal residual values."""
    system, eq = eqcache.get("zie", 0.5, "dynpi", 0.3)
    sc = ScenarioSpec(family="zie", x=0.5, line_model="dynpi", load_scale=0.3)
    other = assemble(case9, sc)
    other.bind_operating_point(eq.pf)
    rng = np.random.default_rng(1)
    x = eq.x0 + 1e-3 * rng.standard_normal(system.n_diff)
    fa, _ = system.residual(x)
    fb, _ = other.residual(x)
    assert np.array_equal(fa, fb)


def test_missing_eload_params_is_config_error(case9):
    doc = json.loads(netdata.serialize(case9))
    for ld in doc["loads"]:
        ld.pop("eload_params", None)
    stripped = netdata.load_case(json.dumps(doc))
    with pytest.raises(ConfigError):
        assemble(stripped, ScenarioSpec(family="zie", x=0.5, line_model="dynpi"))


def test_initialization_residual_certificate(eqcache):
    for lm in ("statpi", "dynpi"):
        for fam, x in (("zip", 0.5), ("zie", 0.5)):
            _, eq = eqcache.get(fam, x, lm, 0.2)
            assert eq.residual_inf_norm < 1e-8


def test_zero_load_equilibrium_has_no_flow():
    case = two_bus_case()  # machine plus an open-ended transformer branch
    system = assemble(case, ScenarioSpec(family="zip", x=0.0, line_model="dynpi"))
    eq = dae.initialize(system, dae.scenario_power_flow(system))
    # only the fictitious floor capacitor at the open end draws current
    i_line = eq.x0[system.state_index[("line1-2", "i_d")]:
                   system.state_index[("line1-2", "i_q")] + 1]
    assert np.max(np.abs(i_line)) < 2e-4
    delta = eq.x0[system.state_index[("gen1_sm", "delta")]]
    assert abs(delta) < 1e-3  # rotor angle at the (near) no-load position


def test_families_coincide_at_x_zero(eqcache):
    sys_zip, eq_zip = eqcache.get("zip", 0.0, "dynpi", 0.2)
    sys_zie, eq_zie = eqcache.get("zie", 0.0, "dynpi", 0.2)
    assert sys_zip.state_index == sys_zie.state_index
    assert np.array_equal(eq_zip.x0, eq_zie.x0)
    f_a, _ = sys_zip.residual(eq_zip.x0)
    f_b, _ = sys_zie.residual(eq_zie.x0)
    assert np.array_equal(f_a, f_b)


def test_trip_zeroes_ybus_coupling(case9):
    system = assemble(case9, ScenarioSpec(family="zip", x=0.0, line_model="statpi"))
    pf = dae.scenario_power_flow(system)
    dae.initialize(system, pf)
    tripped = apply_branch_trip(system, "4-5")
    idx = case9.bus_index()
    assert tripped.ybus_aug[idx[4], idx[5]] == 0
    assert system.ybus_aug[idx[4], idx[5]] != 0


def test_trip_then_restore_recovers_original(case9, eqcache):
    system, eq = eqcache.get("zip", 0.3, "dynpi", 0.3)
    tripped = apply_branch_trip(system, "4-5")
    restored = assemble(case9, system.scenario)
    dae.rebind_operating_point(restored, tripped)
    assert restored.state_index == system.state_index
    assert np.array_equal(restored.ybus_aug, system.ybus_aug)
    f_a, _ = system.residual(eq.x0)
    f_b, _ = restored.residual(eq.x0)
    assert np.array_equal(f_a, f_b)


def test_trip_unknown_branch(case9, eqcache):
    system, _ = eqcache.get("zip", 0.0, "dynpi", 0.2)
    with pytest.raises(KeyError):
        apply_branch_trip(system, "4-99")


def test_trip_islanding_branch_is_allowed(eqcache):
    system, _ = eqcache.get("zip", 0.0, "dynpi", 0.2)
    tripped = apply_branch_trip(system, "1-4")  # islands the SM bus
    assert "1-4" not in set(tripped.in_service)


def test_trip_drops_line_states_and_preserves_names(eqcache):
    system, eq = eqcache.get("zie", 0.5, "dynpi", 0.25)
    tripped = apply_branch_trip(system, "4-5")
    assert tripped.n_diff == system.n_diff - 2
    assert ("line4-5", "i_d") not in tripped.state_index
    x_map = dae.map_states(system, tripped, eq.x0)
    for key, pos in tripped.state_index.items():
        if pos < tripped.n_diff:
            assert x_map[pos] == eq.x0[system.state_index[key]]


def test_residual_sparsity_under_angle_perturbation(eqcache):
    """Nudging the SM rotor angle only touches machine rows and its bus."""
    system, eq = eqcache.get("zip", 0.0, "dynpi", 0.2)
    f0, _ = system.residual(eq.x0)
    x = eq.x0.copy()
    sm = [g for g in system.gens if g.kind == "SM"][0]
    x[system.state_index[("gen1_sm", "delta")]] += 1e-6
    f1, _ = system.residual(x)
    changed = set(np.nonzero(np.abs(f1 - f0) > 1e-13)[0])
    allowed = set(range(sm.sl.start, sm.sl.stop))
    allowed |= {2 * sm.pos, 2 * sm.pos + 1}  # its bus capacitor rows
    assert changed <= allowed
    assert changed  # something did change


def test_residual_consistent_with_fd_jacobian(eqcache):
    system, eq = eqcache.get("zip", 0.5, "statpi", 0.3)
    blocks = smallsignal.jacobian(system, eq)
    rng = np.random.default_rng(11)
    v = rng.standard_normal(system.n_diff)
    v /= np.linalg.norm(v)
    h = 1e-6
    fp, _ = system.residual(eq.x0 + h * v, eq.y0)
    fm, _ = system.residual(eq.x0 - h * v, eq.y0)
    d_dir = (fp - fm) / (2 * h)
    assert np.max(np.abs(blocks.f_x @ v - d_dir)) < 1e-4 * max(1, np.max(np.abs(d_dir)))


def test_energy_bookkeeping_at_equilibrium(eqcache):
    """Generation = load + series-line losses, from the dynamic quantities."""
    for lm in ("statpi", "dynpi"):
        for fam, x in (("zip", 0.5), ("zie", 0.5), ("zip", 1.0)):
            for ls in (0.2, 0.5):
                system, eq = eqcache.get(fam, x, lm, ls)
                v = system.bus_voltages(eq.x0, eq.y0 if eq.y0.size else None)
                p_gen = 0.0
                from zipedyn.devices import (gfl_source_injection, sm_injection,
                                             vsm_injection)
                for gen in system.gens:
                    inj = {"SM": sm_injection, "GFM_VSM": vsm_injection,
                           "GFL": gfl_source_injection}[gen.kind](
                               eq.x0[gen.sl], v[gen.pos], gen.par)
                    p_gen += (0.5 * v[gen.pos] * np.conj(inj)).real
                p_load = sum(ld.spec.p0 for ld in system.loads)  # anchored draw
                p_loss = 0.0
                for br in system.case.branches:
                    if br.id not in set(system.in_service):
                        continue
                    i, j = system._bus_pos[br.from_bus], system._bus_pos[br.to_bus]
                    i_s = (v[i] - v[j]) / complex(br.r, br.x)
                    p_loss += 0.5 * abs(i_s) ** 2 * br.r
                assert p_gen == pytest.approx(p_load + p_loss, abs=1e-7)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        ScenarioSpec(family="zap")
    with pytest.raises(ConfigError):
        ScenarioSpec(x=1.5)
    with pytest.raises(ConfigError):
        ScenarioSpec(line_model="pi")
    with pytest.raises(ConfigError):
        ScenarioSpec(load_scale=-1.0)
