"""Network data model, per-unit conventions, and the embedded 9-bus case.

All quantities are per unit on a common system base (`base_mva`, usually
100 MVA); device parameter blocks are already on the system base.  Cases are
described by a JSON document whose field names follow the type definitions
below; two cases ship with the package: the SM/VSM/GFL portfolio (`case9`)
and an all-synchronous-machine variant (`case9_allsm`).
"""

import json
from dataclasses import dataclass, field, asdict
from importlib import resources

import numpy as np

from .devices import SmParams, AvrParams, GovParams, VsmParams
from .loadmodels import CompositionVector, EloadParams

BUS_KINDS = ("Reference", "PV", "PQ")
GEN_KINDS = ("SM", "GFM_VSM", "GFL")


class CaseParseError(ValueError):
    """Case text is not well-formed."""


class CaseValidationError(ValueError):
    """Case text parsed but violates a data invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    v_set: float | None = None
    v_nom: float = 1.0


@dataclass(frozen=True)
class BranchParams:
    id: str
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0

    @property
    def is_line(self):
        # transformers carry no shunt charging in this data model
        return self.b > 0.0


@dataclass(frozen=True)
class GeneratorSpec:
    bus: int
    kind: str
    p_set: float
    q_set: float = 0.0
    params: object = None


@dataclass(frozen=True)
class LoadSpec:
    bus: int
    p0: float
    q0: float
    v0: float = 1.0
    eta: CompositionVector = field(default_factory=lambda: CompositionVector(1, 0, 0, 0))
    gamma: CompositionVector = field(default_factory=lambda: CompositionVector(1, 0, 0, 0))
    eload_params: EloadParams | None = None


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    f_nom: float
    buses: tuple
    branches: tuple
    generators: tuple
    loads: tuple

    @property
    def bus_ids(self):
        return tuple(b.id for b in self.buses)

    def bus_index(self):
        """Bus id -> position, buses ascending by id (the global ordering)."""
        return {b.id: k for k, b in enumerate(self.buses)}

    def branch(self, branch_id):
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(f"unknown branch id {branch_id!r}")


def _validate(case: NetworkCase) -> NetworkCase:
    if case.base_mva <= 0:
        raise CaseValidationError(f"base_mva must be positive, got {case.base_mva}")
    if case.f_nom <= 0:
        raise CaseValidationError(f"f_nom must be positive, got {case.f_nom}")
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseValidationError("bus ids must be unique")
    id_set = set(ids)
    refs = [b for b in case.buses if b.kind == "Reference"]
    if len(refs) != 1:
        raise CaseValidationError(f"exactly one Reference bus required, found {len(refs)}")
    for b in case.buses:
        if b.kind not in BUS_KINDS:
            raise CaseValidationError(f"bus {b.id}: unknown kind {b.kind!r}")
        if b.kind in ("Reference", "PV"):
            if b.v_set is None or b.v_set <= 0:
                raise CaseValidationError(f"bus {b.id}: {b.kind} bus needs v_set > 0")
    br_ids = [br.id for br in case.branches]
    if len(set(br_ids)) != len(br_ids):
        raise CaseValidationError("branch ids must be unique")
    for br in case.branches:
        if br.from_bus not in id_set or br.to_bus not in id_set:
            raise CaseValidationError(f"branch {br.id}: dangling bus reference")
        if br.from_bus == br.to_bus:
            raise CaseValidationError(f"branch {br.id}: from_bus equals to_bus")
        if br.x == 0:
            raise CaseValidationError(f"branch {br.id}: series reactance must be nonzero")
        if br.b < 0:
            raise CaseValidationError(f"branch {br.id}: shunt susceptance must be nonnegative")
    for g in case.generators:
        if g.bus not in id_set:
            raise CaseValidationError(f"generator at bus {g.bus}: dangling bus reference")
        if g.kind not in GEN_KINDS:
            raise CaseValidationError(f"generator at bus {g.bus}: unknown kind {g.kind!r}")
    for ld in case.loads:
        if ld.bus not in id_set:
            raise CaseValidationError(f"load at bus {ld.bus}: dangling bus reference")
        if ld.p0 < 0:
            raise CaseValidationError(f"load at bus {ld.bus}: p0 must be nonnegative")
        if ld.v0 <= 0:
            raise CaseValidationError(f"load at bus {ld.bus}: v0 must be positive")
        if (ld.eta.e > 0 or ld.gamma.e > 0) and ld.eload_params is None:
            raise CaseValidationError(
                f"load at bus {ld.bus}: nonzero E weight needs an eload_params block")
    return case


def _gen_params_from_dict(kind, d):
    if d is None:
        d = {}
    if kind == "SM":
        avr = AvrParams(**d.get("avr", {}))
        gov = GovParams(**d.get("gov", {}))
        rest = {k: v for k, v in d.items() if k not in ("avr", "gov")}
        return SmParams(avr=avr, gov=gov, **rest)
    if kind == "GFM_VSM":
        return VsmParams(**d)
    if kind == "GFL":
        return EloadParams(**d)
    raise CaseValidationError(f"unknown generator kind {kind!r}")


def case_from_dict(data) -> NetworkCase:
    """Build and validate a NetworkCase from a parsed JSON document."""
    try:
        buses = tuple(sorted((Bus(**b) for b in data["buses"]), key=lambda b: b.id))
        branches = tuple(BranchParams(**br) for br in data["branches"])
        gens = []
        for g in data["generators"]:
            kind = g["kind"]
            gens.append(GeneratorSpec(
                bus=g["bus"], kind=kind,
                p_set=g.get("p_set", 0.0), q_set=g.get("q_set", 0.0),
                params=_gen_params_from_dict(kind, g.get("params")),
            ))
        loads = []
        for ld in data["loads"]:
            ep = ld.get("eload_params")
            loads.append(LoadSpec(
                bus=ld["bus"], p0=ld["p0"], q0=ld["q0"], v0=ld.get("v0", 1.0),
                eta=CompositionVector.from_array(ld.get("eta", [1, 0, 0, 0])),
                gamma=CompositionVector.from_array(ld.get("gamma", [1, 0, 0, 0])),
                eload_params=EloadParams(**ep) if ep is not None else None,
            ))
        case = NetworkCase(
            base_mva=data["base_mva"], f_nom=data["f_nom"],
            buses=buses, branches=branches,
            generators=tuple(gens), loads=tuple(loads),
        )
    except CaseValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseParseError(f"malformed case document: {exc}") from exc
    return _validate(case)


def load_case(text: str) -> NetworkCase:
    """Parse a JSON case document and validate every data invariant."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"invalid JSON: {exc}") from exc
    return case_from_dict(data)


def serialize(case: NetworkCase) -> str:
    """JSON text for a case; load_case(serialize(case)) round-trips exactly."""
    def gen_params_dict(g):
        d = {k: v for k, v in asdict(g.params).items() if v is not None}
        if g.kind == "SM":
            d["avr"] = {k: v for k, v in d["avr"].items() if v is not None}
            d["gov"] = {k: v for k, v in d["gov"].items() if v is not None}
        return d

    doc = {
        "base_mva": case.base_mva,
        "f_nom": case.f_nom,
        "buses": [{k: v for k, v in asdict(b).items() if v is not None}
                  for b in case.buses],
        "branches": [asdict(br) for br in case.branches],
        "generators": [
            {"bus": g.bus, "kind": g.kind, "p_set": g.p_set, "q_set": g.q_set,
             "params": gen_params_dict(g)}
            for g in case.generators
        ],
        "loads": [
            {"bus": ld.bus, "p0": ld.p0, "q0": ld.q0, "v0": ld.v0,
             "eta": list(ld.eta.as_array()), "gamma": list(ld.gamma.as_array()),
             **({"eload_params": asdict(ld.eload_params)}
                if ld.eload_params is not None else {})}
            for ld in case.loads
        ],
    }
    return json.dumps(doc, indent=2)


def build_ybus(case: NetworkCase, in_service=None) -> np.ndarray:
    """Complex bus-admittance matrix of the pi-model branch network.

    `in_service` restricts which branches are stamped (default: all).  Shunt
    charging b is split half to each end; transformers (b = 0) stamp series
    admittance only.
    """
    idx = case.bus_index()
    n = len(case.buses)
    if in_service is None:
        in_service = {br.id for br in case.branches}
    else:
        in_service = set(in_service)
        unknown = in_service - {br.id for br in case.branches}
        if unknown:
            raise KeyError(f"unknown branch ids in service set: {sorted(unknown)}")
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if br.id not in in_service:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        y[i, i] += ys + ysh
        y[j, j] += ys + ysh
        y[i, j] -= ys
        y[j, i] -= ys
    return y


def case9() -> NetworkCase:
    """The embedded 9-bus test case: SM at bus 1 (reference), VSM at bus 2,
    GFL source at bus 3, loads at buses 5, 6, and 8."""
    text = resources.files("zipedyn").joinpath("cases/case9.json").read_text()
    return load_case(text)


def case9_allsm() -> NetworkCase:
    """9-bus variant with synchronous machines at all three generator buses."""
    text = resources.files("zipedyn").joinpath("cases/case9_allsm.json").read_text()
    return load_case(text)
