"""System assembly: states, algebraic variables, initialization, and events.

A `SystemModel` stacks device, line, and load dynamics for one scenario
(load family, composition fraction, line model, loading level).  Residual
rows use natural balance units — current balance for capacitor rows, voltage
balance for series-inductor rows, state-rate balance for controller and
machine rows — and the diagonal mass converts them to state rates; this keeps
initialization residuals sharp regardless of how small a shunt capacitor is.

The scenario network is identical for both line models and for every load
composition: branch pi stamps plus device filter capacitors plus the small
fictitious capacitance floor.  Both line models therefore share one power
flow and one equilibrium.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .devices import (
    N_SM_STATES, N_VSM_STATES, SM_STATE_NAMES, VSM_STATE_NAMES,
    initialize_gfl_source, initialize_sm, initialize_vsm,
    sm_derivatives, sm_injection, statpi_network_solve,
    vsm_derivatives, vsm_injection, gfl_source_derivatives, gfl_source_injection,
)
from .frames import DQ_SCALE, phasor_to_dq
from .loadmodels import (
    ELOAD_STATE_NAMES, N_ELOAD_STATES, composition_from_x,
    gfl_core_derivatives, initialize_eload, zip_current,
)
from .netdata import build_ybus
from .powerflow import scale_loading, solve_power_flow

FAMILIES = ("zip", "zie")
LINE_MODELS = ("statpi", "dynpi")

# fictitious shunt capacitance (pu) for buses with no aggregate capacitance
FLOOR_CAP = 1e-4


class ConfigError(ValueError):
    """Scenario/case combination is inconsistent."""


class InitializationError(RuntimeError):
    """Equilibrium back-solve left a residual above tolerance."""

    def __init__(self, message, worst=None, residual=None):
        super().__init__(message)
        self.worst = worst
        self.residual = residual


@dataclass(frozen=True)
class ScenarioSpec:
    family: str = "zip"
    x: float = 0.0
    line_model: str = "dynpi"
    load_scale: float = 1.0
    event: tuple | None = None  # (branch id, trip time in s)
    generation_portfolio: str = "default"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.line_model not in LINE_MODELS:
            raise ConfigError(f"line_model must be one of {LINE_MODELS}, got {self.line_model!r}")
        if not 0.0 <= self.x <= 1.0:
            raise ConfigError(f"composition fraction x outside [0, 1]: {self.x}")
        if self.load_scale < 0:
            raise ConfigError(f"load_scale must be nonnegative: {self.load_scale}")

    def label(self):
        ev = f"_trip{self.event[0]}" if self.event else ""
        return (f"{self.family}_x{self.x:.2f}_{self.line_model}"
                f"_ls{self.load_scale:.3f}{ev}")


@dataclass
class EquilibriumPoint:
    x0: np.ndarray
    y0: np.ndarray
    pf: object
    residual_inf_norm: float


class _Gen:
    __slots__ = ("kind", "bus", "pos", "sl", "par", "p_set", "q_set")

    def __init__(self, kind, bus, pos, sl, par, p_set=0.0, q_set=0.0):
        self.kind = kind
        self.bus = bus
        self.pos = pos
        self.sl = sl
        self.par = par
        self.p_set = p_set
        self.q_set = q_set


class _Load:
    __slots__ = ("spec", "bus", "pos", "sl", "p_ref_e", "q_ref_e", "v0_eff")

    def __init__(self, spec, bus, pos, sl):
        self.spec = spec
        self.bus = bus
        self.pos = pos
        self.sl = sl          # E-load state slice or None
        self.p_ref_e = 0.0
        self.q_ref_e = 0.0
        self.v0_eff = spec.v0


class SystemModel:
    """Assembled dynamics for one scenario; immutable once initialized."""

    def __init__(self, case, scenario, in_service=None):
        self.scenario = scenario
        self.case_input = case
        self.case = scale_loading(case, scenario.load_scale)
        self.f_nom = case.f_nom
        self.w_base = 2.0 * math.pi * case.f_nom
        self.w_sys = 1.0

        all_ids = tuple(br.id for br in self.case.branches)
        if in_service is None:
            in_service = all_ids
        else:
            unknown = set(in_service) - set(all_ids)
            if unknown:
                raise KeyError(f"unknown branch ids: {sorted(unknown)}")
            in_service = tuple(b for b in all_ids if b in set(in_service))
        self.in_service = in_service

        self.bus_ids = self.case.bus_ids
        self._bus_pos = self.case.bus_index()
        n_bus = len(self.bus_ids)

        comp = composition_from_x(scenario.x, scenario.family)
        self.composition = comp

        seen = set()
        for g in self.case.generators:
            if g.bus in seen:
                raise ConfigError(f"more than one generator at bus {g.bus}")
            seen.add(g.bus)

        # --- state indexing: buses, devices, lines, loads --------------------
        index = {}
        k = 0
        dynpi = scenario.line_model == "dynpi"
        self.bus_sl = None
        if dynpi:
            self.bus_sl = slice(0, 2 * n_bus)
            for bid in self.bus_ids:
                index[(f"bus{bid}", "v_d")] = k
                index[(f"bus{bid}", "v_q")] = k + 1
                k += 2

        self.gens = []
        for g in self.case.generators:
            pos = self._bus_pos[g.bus]
            if g.kind == "SM":
                names, tag = SM_STATE_NAMES, "sm"
                nst = N_SM_STATES
            elif g.kind == "GFM_VSM":
                names, tag = VSM_STATE_NAMES, "vsm"
                nst = N_VSM_STATES
            elif g.kind == "GFL":
                names, tag = ELOAD_STATE_NAMES, "gfl"
                nst = N_ELOAD_STATES
            else:
                raise ConfigError(f"unknown generator kind {g.kind!r}")
            sl = slice(k, k + nst)
            comp_name = f"gen{g.bus}_{tag}"
            for j, nm in enumerate(names):
                index[(comp_name, nm)] = k + j
            k += nst
            self.gens.append(_Gen(g.kind, g.bus, pos, sl, g.params, g.p_set, g.q_set))

        self.lines = []
        if dynpi:
            for br in self.case.branches:
                if br.id not in set(self.in_service):
                    continue
                sl = slice(k, k + 2)
                index[(f"line{br.id}", "i_d")] = k
                index[(f"line{br.id}", "i_q")] = k + 1
                k += 2
                self.lines.append((br.id, self._bus_pos[br.from_bus],
                                   self._bus_pos[br.to_bus], br.r, br.x, sl))

        self.loads = []
        has_e = comp.e > 0
        for ld in self.case.loads:
            spec = replace(ld, eta=comp, gamma=comp)
            if has_e and spec.eload_params is None:
                raise ConfigError(f"load at bus {ld.bus}: composition has E weight "
                                  "but no eload_params block")
            sl = None
            if has_e:
                sl = slice(k, k + N_ELOAD_STATES)
                comp_name = f"load{ld.bus}_e"
                for j, nm in enumerate(ELOAD_STATE_NAMES):
                    index[(comp_name, nm)] = k + j
                k += N_ELOAD_STATES
            self.loads.append(_Load(spec, ld.bus, self._bus_pos[ld.bus], sl))

        self.n_diff = k
        self.n_alg = 0 if dynpi else 2 * n_bus
        if not dynpi:
            for bid in self.bus_ids:
                index[(f"bus{bid}", "v_d")] = k
                index[(f"bus{bid}", "v_q")] = k + 1
                k += 2
        self.state_index = index

        # --- shunt capacitance bookkeeping -----------------------------------
        # line charging aggregates per bus; buses left with zero capacitance
        # get the small fictitious floor so the dynpi system is a pure ODE,
        # and the same shunt joins the algebraic/power-flow network so both
        # line models share one equilibrium exactly
        cap = np.zeros(n_bus)
        for br in self.case.branches:
            if br.id in set(self.in_service):
                cap[self._bus_pos[br.from_bus]] += 0.5 * br.b
                cap[self._bus_pos[br.to_bus]] += 0.5 * br.b
        self.extra_shunts = {}
        for pos, bid in enumerate(self.bus_ids):
            if cap[pos] == 0.0:
                cap[pos] = FLOOR_CAP
                self.extra_shunts[bid] = self.extra_shunts.get(bid, 0j) \
                    + 1j * self.w_sys * FLOOR_CAP
        self.bus_cap = cap

        self.ybus = build_ybus(self.case, set(self.in_service))
        self.ybus_aug = self.ybus.copy()
        for bid, ysh in self.extra_shunts.items():
            p = self._bus_pos[bid]
            self.ybus_aug[p, p] += ysh

        # --- diagonal mass: residual row units -> state rates ----------------
        mass = np.ones(self.n_diff)
        if dynpi:
            mass[self.bus_sl] = np.repeat(cap, 2) / self.w_base
            for (_bid, _i, _j, _r, x_ser, sl) in self.lines:
                mass[sl] = x_ser / self.w_base
        self.mass_diag = mass

        self._bound = False
        self._alg_cache = {}

    # ------------------------------------------------------------------ refs
    def bind_operating_point(self, pf):
        """Anchor load references and device setpoints to a power flow.

        Loads: the ZIP anchor voltage becomes the solved bus voltage (so the
        composite consumes exactly its scaled nominal there) and the E part's
        power reference becomes the E share.  Devices: setpoints are
        back-solved so the power-flow point is an exact fixed point.
        """
        if self._bound:
            raise RuntimeError("operating point already bound")
        for ld in self.loads:
            v_pf = pf.v_at(ld.bus)
            ld.v0_eff = v_pf
            ld.spec = replace(ld.spec, v0=v_pf)
            ld.p_ref_e = ld.spec.eta.e * ld.spec.p0
            ld.q_ref_e = ld.spec.gamma.e * ld.spec.q0
        for gen in self.gens:
            v_bus = phasor_to_dq(pf.v_at(gen.bus), pf.theta_at(gen.bus))
            pos = self._bus_pos[gen.bus]
            s_inj = complex(pf.p_inj[pos], pf.q_inj[pos])
            for ld in self.loads:
                if ld.bus == gen.bus:
                    s_inj += complex(ld.spec.p0, ld.spec.q0)
            if gen.kind == "SM":
                _, bound = initialize_sm(gen.par, v_bus, s_inj, self.w_sys)
                gen.par = bound
            elif gen.kind == "GFM_VSM":
                _, bound = initialize_vsm(gen.par, v_bus, s_inj, self.w_sys)
                gen.par = bound
            else:
                _, (p_set, q_set) = initialize_gfl_source(gen.par, v_bus, s_inj, self.w_sys)
                gen.p_set = p_set
                gen.q_set = q_set
        self._bound = True

    def _copy_bound_refs(self, other):
        for mine, theirs in zip(self.loads, other.loads):
            mine.v0_eff = theirs.v0_eff
            mine.spec = replace(mine.spec, v0=theirs.v0_eff)
            mine.p_ref_e = theirs.p_ref_e
            mine.q_ref_e = theirs.q_ref_e
        for mine, theirs in zip(self.gens, other.gens):
            mine.par = theirs.par
            mine.p_set = theirs.p_set
            mine.q_set = theirs.q_set
        self._bound = other._bound

    # ------------------------------------------------------------- evaluation
    def bus_voltages(self, x, y=None):
        blk = x[self.bus_sl] if self.bus_sl is not None else y
        return blk[0::2] + 1j * blk[1::2]

    def _net_injection(self, x, v):
        """Net device-minus-load dq current at every bus (no lines, no caps)."""
        i = np.zeros(len(self.bus_ids), dtype=complex)
        for gen in self.gens:
            vb = v[gen.pos]
            if gen.kind == "SM":
                i[gen.pos] += sm_injection(x[gen.sl], vb, gen.par)
            elif gen.kind == "GFM_VSM":
                i[gen.pos] += vsm_injection(x[gen.sl], vb, gen.par)
            else:
                i[gen.pos] += gfl_source_injection(x[gen.sl], vb, gen.par)
        for ld in self.loads:
            i_zip = zip_current(ld.spec.p0, ld.spec.q0, ld.v0_eff,
                                ld.spec.eta, ld.spec.gamma, v[ld.pos])
            i[ld.pos] -= i_zip
            if ld.sl is not None:
                i[ld.pos] -= complex(x[ld.sl][4], x[ld.sl][5])
        return i

    def residual(self, x, y=None, t=0.0, w_sys=None):
        """(differential residual, algebraic residual) in natural row units.

        `w_sys` overrides the reference-frame speed (pu); steady states of a
        post-event system generally rotate at the droop-settled speed, and a
        root solve in that frame sees them as true fixed points.
        """
        if not self._bound:
            raise RuntimeError("operating point not bound; call initialize() first")
        w = self.w_sys if w_sys is None else w_sys
        x = np.asarray(x, dtype=float)
        dynpi = self.bus_sl is not None
        if not dynpi and y is None:
            raise ValueError("statpi residual needs the algebraic vector y")
        v = self.bus_voltages(x, y)
        f = np.empty(self.n_diff)
        i_net = self._net_injection(x, v)

        for gen in self.gens:
            vb = v[gen.pos]
            if gen.kind == "SM":
                f[gen.sl] = sm_derivatives(x[gen.sl], vb, gen.par, w, self.f_nom)
            elif gen.kind == "GFM_VSM":
                f[gen.sl] = vsm_derivatives(x[gen.sl], vb, gen.par, w, self.f_nom)
            else:
                f[gen.sl] = gfl_source_derivatives(
                    x[gen.sl], vb, gen.par, gen.p_set, gen.q_set, w, self.f_nom)
        for ld in self.loads:
            if ld.sl is not None:
                f[ld.sl] = gfl_core_derivatives(
                    x[ld.sl], v[ld.pos].real, v[ld.pos].imag, ld.spec.eload_params,
                    ld.p_ref_e, ld.q_ref_e, w, self.w_base)

        if dynpi:
            for (_bid, ipos, jpos, r_ser, x_ser, sl) in self.lines:
                i_s = complex(x[sl][0], x[sl][1])
                # voltage balance across the series RL element
                dv = v[ipos] - v[jpos] - complex(r_ser, w * x_ser) * i_s
                f[sl.start] = dv.real
                f[sl.start + 1] = dv.imag
                i_net[ipos] -= i_s
                i_net[jpos] += i_s
            # current balance at every bus capacitor
            cap_res = i_net - 1j * w * self.bus_cap * v
            f[0:2 * len(self.bus_ids):2] = cap_res.real
            f[1:2 * len(self.bus_ids):2] = cap_res.imag
            return f, np.empty(0)

        g_c = i_net - self.ybus_aug @ v
        g = np.empty(self.n_alg)
        g[0::2] = g_c.real
        g[1::2] = g_c.imag
        return f, g

    def solve_algebraic(self, x, v_guess=None, tol=1e-10, cond_limit=1e12):
        """statpi: bus voltages satisfying the nodal balance for states x."""
        if self.bus_sl is not None:
            raise RuntimeError("dynpi systems have no algebraic block")
        if v_guess is None:
            v_guess = self._alg_cache.get("v")
        if v_guess is None:
            v_guess = np.full(len(self.bus_ids), DQ_SCALE + 0j)

        def injection(vc):
            return self._net_injection(x, vc)

        v, cond = statpi_network_solve(self.ybus_aug, injection, v_guess,
                                       tol=tol, cond_limit=cond_limit)
        self._alg_cache["v"] = v
        return v, cond

    def rhs(self, t, x):
        """State rates for the integrator (inner algebraic solve for statpi)."""
        if self.bus_sl is not None:
            f, _ = self.residual(x)
        else:
            v, _ = self.solve_algebraic(x)
            y = np.empty(self.n_alg)
            y[0::2] = v.real
            y[1::2] = v.imag
            f, _ = self.residual(x, y)
        return f / self.mass_diag

    def pack_bus_voltages(self, v):
        y = np.empty(2 * len(self.bus_ids))
        y[0::2] = np.real(v)
        y[1::2] = np.imag(v)
        return y

    def state_names(self):
        inv = [None] * (self.n_diff + self.n_alg)
        for key, pos in self.state_index.items():
            inv[pos] = key
        return inv


def assemble(case, scenario: ScenarioSpec, in_service=None) -> SystemModel:
    """Build the system model for a scenario (deterministic state ordering)."""
    return SystemModel(case, scenario, in_service=in_service)


def scenario_power_flow(system: SystemModel, tol=1e-11, max_iter=30, warm_start=None):
    """Power flow on the scenario network (branch pi + device caps + floors).

    The tight default tolerance keeps the initialization residual well under
    the 1e-8 certificate; the network is identical for both line models and
    every composition, so the solution is shared across a ls-matched sweep.
    """
    kept = set(system.in_service)
    pruned = replace(system.case,
                     branches=tuple(br for br in system.case.branches if br.id in kept))
    return solve_power_flow(pruned, tol=tol, max_iter=max_iter,
                            extra_shunts=system.extra_shunts, warm_start=warm_start)


def initialize(system: SystemModel, pf) -> EquilibriumPoint:
    """Back-solve every state from the power flow and certify the residual."""
    if not system._bound:
        system.bind_operating_point(pf)

    x0 = np.zeros(system.n_diff)
    v = np.array([phasor_to_dq(pf.v_at(b), pf.theta_at(b)) for b in system.bus_ids])
    if system.bus_sl is not None:
        x0[0:2 * len(system.bus_ids):2] = v.real
        x0[1:2 * len(system.bus_ids):2] = v.imag

    for gen in system.gens:
        vb = v[gen.pos]
        s_inj = complex(pf.p_inj[gen.pos], pf.q_inj[gen.pos])
        for ld in system.loads:
            if ld.bus == gen.bus:
                s_inj += complex(ld.spec.p0, ld.spec.q0)
        if gen.kind == "SM":
            state, _ = initialize_sm(gen.par, vb, s_inj, system.w_sys)
        elif gen.kind == "GFM_VSM":
            state, _ = initialize_vsm(gen.par, vb, s_inj, system.w_sys)
        else:
            state, _ = initialize_gfl_source(gen.par, vb, s_inj, system.w_sys)
        x0[gen.sl] = state

    for (_bid, ipos, jpos, r_ser, x_ser, sl) in system.lines:
        i_s = (v[ipos] - v[jpos]) / complex(r_ser, system.w_sys * x_ser)
        x0[sl.start] = i_s.real
        x0[sl.start + 1] = i_s.imag

    for ld in system.loads:
        if ld.sl is not None:
            st = initialize_eload(ld.spec.eload_params, v[ld.pos],
                                  ld.p_ref_e, ld.q_ref_e, system.w_sys)
            x0[ld.sl] = st.to_array()

    y0 = np.empty(0) if system.bus_sl is not None else system.pack_bus_voltages(v)
    f, g = system.residual(x0, y0 if y0.size else None)
    res = np.concatenate([f, g])
    worst_ix = int(np.argmax(np.abs(res)))
    res_norm = float(np.abs(res[worst_ix]))
    if res_norm >= 1e-8:
        names = system.state_names()
        worst = names[worst_ix] if worst_ix < len(names) else ("alg", worst_ix)
        raise InitializationError(
            f"initialization residual {res_norm:.3e} at {worst}",
            worst=worst, residual=res_norm)
    return EquilibriumPoint(x0=x0, y0=y0, pf=pf, residual_inf_norm=res_norm)


def apply_branch_trip(system: SystemModel, branch_id) -> SystemModel:
    """System with one branch removed; bound references carry over."""
    if branch_id not in set(system.in_service):
        raise KeyError(f"branch {branch_id!r} is not in service")
    kept = tuple(b for b in system.in_service if b != branch_id)
    tripped = SystemModel(system.case_input, system.scenario, in_service=kept)
    tripped._copy_bound_refs(system)
    return tripped


def map_states(src: SystemModel, dst: SystemModel, x_src):
    """Carry retained states across a topology change by (component, name)."""
    x_dst = np.zeros(dst.n_diff)
    for key, pos in dst.state_index.items():
        if pos >= dst.n_diff:
            continue
        spos = src.state_index.get(key)
        if spos is not None and spos < src.n_diff:
            x_dst[pos] = x_src[spos]
    return x_dst


def rebind_operating_point(system: SystemModel, source: SystemModel):
    """Carry bound references from a structurally identical system.

    Useful for step studies: assemble the same case at a different loading
    and keep the original setpoints so the model responds to the change.
    """
    if len(system.gens) != len(source.gens) or len(system.loads) != len(source.loads):
        raise ValueError("systems are not structurally compatible")
    system._copy_bound_refs(source)
    return system


def residual(system: SystemModel, x, y=None, t=0.0):
    """Module-level alias for the stacked residual evaluator."""
    return system.residual(x, y, t)
