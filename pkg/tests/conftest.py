import numpy as np
import pytest

from zipedyn import dae, netdata


@pytest.fixture(scope="session")
def case9():
    return netdata.case9()


class EquilibriumCache:
    """Assemble/solve each scenario once per test session."""

    def __init__(self, case):
        self.case = case
        self._store = {}

    def get(self, family, x, line_model, load_scale, in_service=None):
        key = (family, round(float(x), 6), line_model, round(float(load_scale), 9),
               in_service)
        if key not in self._store:
            sc = dae.ScenarioSpec(family=family, x=x, line_model=line_model,
                                  load_scale=load_scale)
            system = dae.assemble(self.case, sc,
                                  in_service=list(in_service) if in_service else None)
            pf = dae.scenario_power_flow(system)
            eq = dae.initialize(system, pf)
            self._store[key] = (system, eq)
        return self._store[key]


@pytest.fixture(scope="session")
def eqcache(case9):
    return EquilibriumCache(case9)


@pytest.fixture(scope="session")
def report_cache(eqcache):
    """Scenario -> EigenReport, shared across small-signal heavy tests."""
    from zipedyn import smallsignal

    store = {}

    def get(family, x, line_model, load_scale):
        key = (family, round(float(x), 6), line_model, round(float(load_scale), 9))
        if key not in store:
            system, eq = eqcache.get(*key)
            store[key] = smallsignal.analyze(system, eq)
        return store[key]

    return get


def two_bus_case(load_p=0.0, load_q=0.0, branch_b=0.0, x_ser=0.1, r_ser=0.0,
                 parallel=False, gen_kind="SM"):
    """Tiny synthetic network: one machine at bus 1, optional load at bus 2."""
    gen_params = {
        "SM": {"h": 5.0, "d": 2.0, "xd": 1.0, "xq": 0.7, "xd_p": 0.3,
               "xq_p": 0.7, "td0_p": 6.0, "tq0_p": 0.4, "ra": 0.003,
               "avr": {"ka": 100.0, "ta": 0.05},
               "gov": {"r_droop": 0.05, "tg": 0.5}},
        "GFM_VSM": {"ta": 4.0, "kd": 75.0, "komega": 75.0, "kp_v": 0.5,
                    "ki_v": 60.0, "kp_c": 0.8, "ki_c": 15.0,
                    "lf": 0.1, "rf": 0.005, "cf": 0.12},
    }[gen_kind]
    branches = [{"id": "1-2", "from_bus": 1, "to_bus": 2, "r": r_ser,
                 "x": x_ser, "b": branch_b}]
    if parallel:
        branches.append({"id": "1-2b", "from_bus": 1, "to_bus": 2, "r": r_ser,
                         "x": x_ser, "b": branch_b})
    doc = {
        "base_mva": 100.0,
        "f_nom": 60.0,
        "buses": [
            {"id": 1, "kind": "Reference", "v_set": 1.0, "v_nom": 115.0},
            {"id": 2, "kind": "PQ", "v_nom": 115.0},
        ],
        "branches": branches,
        "generators": [{"bus": 1, "kind": gen_kind, "p_set": load_p,
                        "q_set": 0.0, "params": gen_params}],
        "loads": [],
    }
    if load_p or load_q:
        doc["loads"] = [{"bus": 2, "p0": load_p, "q0": load_q, "v0": 1.0,
                         "eta": [1.0, 0.0, 0.0, 0.0],
                         "gamma": [1.0, 0.0, 0.0, 0.0]}]
    import json

    return netdata.load_case(json.dumps(doc))
