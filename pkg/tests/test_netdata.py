import json

import numpy as np
import pytest

from zipedyn import netdata, oracle
from zipedyn.netdata import CaseParseError, CaseValidationError, build_ybus


def test_case9_inventory(case9):
    assert len(case9.buses) == 9
    lines = [br for br in case9.branches if br.is_line]
    xfmrs = [br for br in case9.branches if not br.is_line]
    assert len(lines) == 6
    assert len(xfmrs) == 3
    assert len(case9.generators) == 3
    assert len(case9.loads) == 3
    kinds = {g.bus: g.kind for g in case9.generators}
    assert kinds == {1: "SM", 2: "GFM_VSM", 3: "GFL"}
    ref = [b for b in case9.buses if b.kind == "Reference"]
    assert [b.id for b in ref] == [1]


def test_dangling_branch_reference_rejected(case9):
    doc = json.loads(netdata.serialize(case9))
    doc["branches"][0]["to_bus"] = 99
    with pytest.raises(CaseValidationError, match="dangling"):
        netdata.load_case(json.dumps(doc))


def test_nonpositive_base_rejected(case9):
    doc = json.loads(netdata.serialize(case9))
    doc["base_mva"] = 0.0
    with pytest.raises(CaseValidationError, match="base_mva"):
        netdata.load_case(json.dumps(doc))


def test_malformed_text_is_parse_error():
    with pytest.raises(CaseParseError):
        netdata.load_case("{not json")
    with pytest.raises(CaseParseError):
        netdata.load_case(json.dumps({"base_mva": 100.0}))


def test_two_reference_buses_rejected(case9):
    doc = json.loads(netdata.serialize(case9))
    doc["buses"][1]["kind"] = "Reference"
    doc["buses"][1]["v_set"] = 1.0
    with pytest.raises(CaseValidationError, match="Reference"):
        netdata.load_case(json.dumps(doc))


def test_serialize_round_trips(case9):
    again = netdata.load_case(netdata.serialize(case9))
    assert again == case9


def test_ybus_single_branch():
    doc = {
        "base_mva": 100.0, "f_nom": 60.0,
        "buses": [{"id": 1, "kind": "Reference", "v_set": 1.0},
                  {"id": 2, "kind": "PQ"}],
        "branches": [{"id": "1-2", "from_bus": 1, "to_bus": 2,
                      "r": 0.0, "x": 0.1, "b": 0.0}],
        "generators": [], "loads": [],
    }
    y = build_ybus(netdata.load_case(json.dumps(doc)))
    assert y[0, 1] == pytest.approx(10j, abs=1e-15)
    assert y[1, 0] == pytest.approx(10j, abs=1e-15)
    assert y[0, 0] == pytest.approx(-10j, abs=1e-15)


def test_ybus_matches_incidence_oracle(case9):
    y = build_ybus(case9)
    y_ref = oracle.incidence_ybus(case9)
    assert np.max(np.abs(y - y_ref)) < 1e-12
    assert np.max(np.abs(y - y.T)) < 1e-15  # pi model is symmetric


def test_ybus_trip_zeroes_coupling(case9):
    kept = {br.id for br in case9.branches} - {"4-5"}
    y = build_ybus(case9, kept)
    idx = case9.bus_index()
    assert y[idx[4], idx[5]] == 0
    assert y[idx[5], idx[4]] == 0


def test_ybus_empty_service_set_is_zero(case9):
    y = build_ybus(case9, set())
    assert np.max(np.abs(y)) == 0.0


def test_stamp_additivity_every_branch(case9):
    """Removing any one branch subtracts exactly its standalone 2x2 stamp."""
    idx = case9.bus_index()
    y_full = build_ybus(case9)
    all_ids = {br.id for br in case9.branches}
    for br in case9.branches:
        y_wo = build_ybus(case9, all_ids - {br.id})
        d = y_full - y_wo
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        expect = np.zeros_like(y_full)
        expect[i, i] = ys + ysh
        expect[j, j] = ys + ysh
        expect[i, j] = -ys
        expect[j, i] = -ys
        assert np.max(np.abs(d - expect)) < 1e-14


def test_unknown_branch_in_service_set(case9):
    with pytest.raises(KeyError):
        build_ybus(case9, {"nope"})


def test_allsm_variant_loads():
    alt = netdata.case9_allsm()
    assert all(g.kind == "SM" for g in alt.generators)
    assert len(alt.buses) == 9
