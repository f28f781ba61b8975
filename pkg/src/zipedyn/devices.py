"""Generation-device dynamics and the two transmission-line models.

Devices: two-axis synchronous machine with first-order exciter and governor
(6 states), virtual-synchronous-machine grid-forming converter (8 states,
output capacitor handled as a bus shunt), and a grid-following source that
reuses the E-load converter core with generation sign convention (12 states).

Lines: `statpi` treats the pi network algebraically (phasor nodal balance,
solved by Newton); `dynpi` adds series RL states per branch and aggregates
all shunt capacitance into per-bus voltage states.
"""

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .frames import DQ_SCALE
from .loadmodels import EloadParams, gfl_core_derivatives, initialize_eload


class NetworkSolveError(RuntimeError):
    """Algebraic nodal solve failed or is too ill-conditioned to trust."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


# ---------------------------------------------------------------------------
# synchronous machine: two-axis model + AVR + governor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AvrParams:
    ka: float = 100.0
    ta: float = 0.05
    v_ref: float | None = None  # back-solved at initialization when None


@dataclass(frozen=True)
class GovParams:
    r_droop: float = 0.05
    tg: float = 0.5
    p_ref: float | None = None  # back-solved at initialization when None


@dataclass(frozen=True)
class SmParams:
    h: float = 23.64
    d: float = 2.0
    xd: float = 0.146
    xq: float = 0.0969
    xd_p: float = 0.0608
    xq_p: float = 0.0969
    td0_p: float = 8.96
    tq0_p: float = 0.31
    ra: float = 0.0
    avr: AvrParams = field(default_factory=AvrParams)
    gov: GovParams = field(default_factory=GovParams)

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("inertia constant h must be positive")
        for name in ("td0_p", "tq0_p"):
            if getattr(self, name) <= 0:
                raise ValueError(f"time constant {name} must be positive")
        if self.avr.ta <= 0 or self.gov.tg <= 0:
            raise ValueError("controller time constants must be positive")


SM_STATE_NAMES = ("delta", "omega", "eq_p", "ed_p", "efd", "pm")
N_SM_STATES = len(SM_STATE_NAMES)


def _sm_stator_currents(delta, eq_p, ed_p, v_bus, par):
    """Machine-frame stator currents from the algebraic stator equations.

    Rotor frame has the q axis leading: system = machine * exp(j(delta-pi/2)).
    """
    vm = v_bus * cmath.exp(-1j * (delta - math.pi / 2.0))
    vd, vq = vm.real, vm.imag
    # vd = ed_p - ra*id + xq_p*iq ; vq = eq_p - ra*iq - xd_p*id
    det = par.ra * par.ra + par.xd_p * par.xq_p
    i_d = (par.ra * (ed_p - vd) + par.xq_p * (eq_p - vq)) / det
    i_q = (-par.xd_p * (ed_p - vd) + par.ra * (eq_p - vq)) / det
    return i_d, i_q, vd, vq


def sm_injection(state, v_bus, par):
    """System-frame dq current delivered to the bus."""
    delta, _, eq_p, ed_p, _, _ = state
    i_d, i_q, _, _ = _sm_stator_currents(delta, eq_p, ed_p, v_bus, par)
    return complex(i_d, i_q) * cmath.exp(1j * (delta - math.pi / 2.0))


def sm_derivatives(state, v_bus, par, w_sys=1.0, f_nom=60.0):
    """Two-axis flux + swing + exciter + governor derivatives.

    The half factor in the electrical power reflects the dq magnitude
    convention (|u| = sqrt(2) V at a 1-pu operating point).
    """
    delta, omega, eq_p, ed_p, efd, pm = state
    w_base = 2.0 * math.pi * f_nom
    i_d, i_q, _, _ = _sm_stator_currents(delta, eq_p, ed_p, v_bus, par)

    p_e = 0.5 * (ed_p * i_d + eq_p * i_q + (par.xq_p - par.xd_p) * i_d * i_q)

    # rotation terms reference the frame speed w_sys; damping, droop, and the
    # governor reference nominal speed (1 pu) regardless of the frame
    d_delta = w_base * (omega - w_sys)
    d_omega = (pm - p_e - par.d * (omega - 1.0)) / (2.0 * par.h)
    d_eq_p = (-eq_p - (par.xd - par.xd_p) * i_d + efd) / par.td0_p
    d_ed_p = (-ed_p + (par.xq - par.xq_p) * i_q) / par.tq0_p
    d_efd = (par.avr.ka * (DQ_SCALE * par.avr.v_ref - abs(v_bus)) - efd) / par.avr.ta
    d_pm = (par.gov.p_ref + (1.0 - omega) / par.gov.r_droop - pm) / par.gov.tg
    return np.array([d_delta, d_omega, d_eq_p, d_ed_p, d_efd, d_pm])


def initialize_sm(par, v_bus, s_inj, w_sys=1.0):
    """Back-solve machine states and setpoints from a power-flow injection.

    Returns (state, params-with-bound-setpoints); the bound v_ref/p_ref make
    the returned state an exact fixed point.
    """
    i = np.conj(2.0 * s_inj / v_bus)
    e_behind = v_bus + complex(par.ra, par.xq) * i
    delta = cmath.phase(e_behind)
    rot = cmath.exp(-1j * (delta - math.pi / 2.0))
    im = i * rot
    vm = v_bus * rot
    i_d, i_q = im.real, im.imag
    vd, vq = vm.real, vm.imag
    eq_p = vq + par.ra * i_q + par.xd_p * i_d
    ed_p = vd + par.ra * i_d - par.xq_p * i_q
    efd = eq_p + (par.xd - par.xd_p) * i_d
    p_e = 0.5 * (ed_p * i_d + eq_p * i_q + (par.xq_p - par.xd_p) * i_d * i_q)
    v_ref = (abs(v_bus) + efd / par.avr.ka) / DQ_SCALE
    bound = SmParams(
        h=par.h, d=par.d, xd=par.xd, xq=par.xq, xd_p=par.xd_p, xq_p=par.xq_p,
        td0_p=par.td0_p, tq0_p=par.tq0_p, ra=par.ra,
        avr=AvrParams(ka=par.avr.ka, ta=par.avr.ta, v_ref=v_ref),
        gov=GovParams(r_droop=par.gov.r_droop, tg=par.gov.tg, p_ref=p_e),
    )
    state = np.array([delta, w_sys, eq_p, ed_p, efd, p_e])
    return state, bound


# ---------------------------------------------------------------------------
# virtual synchronous machine (grid-forming converter)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VsmParams:
    """Virtual swing + cascaded voltage/current PI + LC output filter.

    The regulated capacitor is internal to the device; lg/rg couple it to
    the connection bus, so parallel grid-forming units do not fight over a
    shared node voltage.  The grid-side current is the network injection.
    """

    ta: float = 4.0
    kd: float = 75.0
    komega: float = 75.0
    kp_v: float = 0.5
    ki_v: float = 60.0
    kp_c: float = 0.8
    ki_c: float = 15.0
    lf: float = 0.1
    rf: float = 0.005
    cf: float = 0.12
    lg: float = 0.08
    rg: float = 0.004
    p_set: float | None = None
    v_set: float | None = None

    def __post_init__(self):
        if self.ta <= 0:
            raise ValueError("virtual inertia ta must be positive")
        if self.lf <= 0 or self.cf <= 0 or self.lg <= 0:
            raise ValueError("filter elements lf, cf, lg must be positive")


VSM_STATE_NAMES = ("delta", "omega", "zeta_d", "zeta_q", "sigma_d", "sigma_q",
                   "i_cv_d", "i_cv_q", "v_cf_d", "v_cf_q", "i_g_d", "i_g_q")
N_VSM_STATES = len(VSM_STATE_NAMES)


def vsm_derivatives(state, v_bus, par, w_sys=1.0, f_nom=60.0):
    """VSM derivatives: the voltage loop pins the internal capacitor vector
    onto the virtual-rotor d axis, so power transfer follows the swing angle
    through the grid-side coupling inductor."""
    (delta, omega, zeta_d, zeta_q, sig_d, sig_q,
     icv_d, icv_q, vcf_d, vcf_q, ig_d, ig_q) = state
    w_base = 2.0 * math.pi * f_nom
    ct, st = math.cos(delta), math.sin(delta)

    # system -> VSM frame
    vcf_pd = vcf_d * ct + vcf_q * st
    vcf_pq = -vcf_d * st + vcf_q * ct
    icv_pd = icv_d * ct + icv_q * st
    icv_pq = -icv_d * st + icv_q * ct
    ig_pd = ig_d * ct + ig_q * st
    ig_pq = -ig_d * st + ig_q * ct

    p_meas = 0.5 * (v_bus.real * ig_d + v_bus.imag * ig_q)
    # angle integrates against the frame; damping/droop against nominal speed
    d_delta = w_base * (omega - w_sys)
    d_omega = (par.p_set - p_meas + (par.kd + par.komega) * (1.0 - omega)) / par.ta

    # voltage loop on the internal capacitor, with cap cross-coupling and
    # grid-current feedforward
    e_vd = DQ_SCALE * par.v_set - vcf_pd
    e_vq = -vcf_pq
    id_ref = par.kp_v * e_vd + par.ki_v * zeta_d - omega * par.cf * vcf_pq + ig_pd
    iq_ref = par.kp_v * e_vq + par.ki_v * zeta_q + omega * par.cf * vcf_pd + ig_pq

    # current loop with cross-coupling decoupling; no voltage feedforward,
    # so kp_c damps the filter branch directly
    e_id = id_ref - icv_pd
    e_iq = iq_ref - icv_pq
    vcv_pd = -omega * par.lf * icv_pq + par.kp_c * e_id + par.ki_c * sig_d
    vcv_pq = omega * par.lf * icv_pd + par.kp_c * e_iq + par.ki_c * sig_q

    # VSM -> system frame
    vcv_d = vcv_pd * ct - vcv_pq * st
    vcv_q = vcv_pd * st + vcv_pq * ct

    d_icv_d = (w_base / par.lf) * (vcv_d - vcf_d - par.rf * icv_d + w_sys * par.lf * icv_q)
    d_icv_q = (w_base / par.lf) * (vcv_q - vcf_q - par.rf * icv_q - w_sys * par.lf * icv_d)
    d_vcf_d = (w_base / par.cf) * (icv_d - ig_d + w_sys * par.cf * vcf_q)
    d_vcf_q = (w_base / par.cf) * (icv_q - ig_q - w_sys * par.cf * vcf_d)
    d_ig_d = (w_base / par.lg) * (vcf_d - v_bus.real - par.rg * ig_d + w_sys * par.lg * ig_q)
    d_ig_q = (w_base / par.lg) * (vcf_q - v_bus.imag - par.rg * ig_q - w_sys * par.lg * ig_d)
    return np.array([d_delta, d_omega, e_vd, e_vq, e_id, e_iq,
                     d_icv_d, d_icv_q, d_vcf_d, d_vcf_q, d_ig_d, d_ig_q])


def vsm_injection(state, v_bus, par):
    """Grid-side filter current delivered to the bus."""
    return complex(state[10], state[11])


def initialize_vsm(par, v_bus, s_inj, w_sys=1.0):
    """Back-solve VSM states and setpoints from a power-flow injection."""
    if par.ki_v <= 0 or par.ki_c <= 0:
        raise ValueError("VSM equilibrium back-solve needs ki_v, ki_c > 0")
    ig = np.conj(2.0 * s_inj / v_bus)
    vcf = v_bus + complex(par.rg, w_sys * par.lg) * ig
    icv = ig + 1j * w_sys * par.cf * vcf
    delta = cmath.phase(vcf)
    rot = cmath.exp(-1j * delta)
    icv_loc = icv * rot
    ig_loc = ig * rot
    vcf_loc = vcf * rot
    p_meas = (0.5 * v_bus * np.conj(ig)).real
    zeta = (icv_loc - 1j * w_sys * par.cf * vcf_loc - ig_loc) / par.ki_v
    # zero inner-loop error: the integrators carry the cap voltage plus rf*i
    sigma = (vcf_loc + par.rf * icv_loc) / par.ki_c
    bound = VsmParams(
        ta=par.ta, kd=par.kd, komega=par.komega, kp_v=par.kp_v, ki_v=par.ki_v,
        kp_c=par.kp_c, ki_c=par.ki_c, lf=par.lf, rf=par.rf, cf=par.cf,
        lg=par.lg, rg=par.rg,
        p_set=p_meas, v_set=abs(vcf) / DQ_SCALE,
    )
    state = np.array([delta, w_sys, zeta.real, zeta.imag, sigma.real, sigma.imag,
                      icv.real, icv.imag, vcf.real, vcf.imag, ig.real, ig.imag])
    return state, bound


# ---------------------------------------------------------------------------
# grid-following source (same converter core as the E load, generation sign)
# ---------------------------------------------------------------------------

def gfl_source_derivatives(state, v_bus, par: EloadParams, p_set, q_set,
                           w_sys=1.0, f_nom=60.0):
    """GFL source derivatives: the E-load core run with consumption -p_set."""
    x = np.asarray(state, dtype=float)
    return gfl_core_derivatives(x, v_bus.real, v_bus.imag, par, -p_set, -q_set,
                                w_sys, 2.0 * math.pi * f_nom)


def gfl_source_injection(state, v_bus, par):
    """Network injection: minus the load-convention grid-side current."""
    return -complex(state[4], state[5])


def initialize_gfl_source(par, v_bus, s_inj, w_sys=1.0):
    """Back-solve the GFL source equilibrium delivering s_inj to the bus."""
    state = initialize_eload(par, v_bus, -s_inj.real, -s_inj.imag, w_sys=w_sys)
    return state.to_array(), (s_inj.real, s_inj.imag)


# ---------------------------------------------------------------------------
# statpi: algebraic pi network
# ---------------------------------------------------------------------------

def statpi_network_solve(ybus, injection_fn, v_guess, tol=1e-10, max_iter=30,
                         cond_limit=1e12):
    """Solve the nodal balance injection_fn(v) - Y v = 0 for bus voltages.

    `injection_fn` maps the complex bus-voltage vector to the complex net
    current injected by devices and drawn by static loads (already signed).
    Newton iteration on the stacked real form; returns (v, condition estimate
    of the final Jacobian).  Raises NetworkSolveError on non-convergence or
    when the Jacobian condition exceeds `cond_limit`.
    """
    n = ybus.shape[0]
    v = np.array(v_guess, dtype=complex)

    def residual(vc):
        return injection_fn(vc) - ybus @ vc

    def stacked(vr):
        r = residual(vr[:n] + 1j * vr[n:])
        return np.concatenate([r.real, r.imag])

    vr = np.concatenate([v.real, v.imag])
    cond = None
    for _ in range(max_iter):
        r = stacked(vr)
        if np.max(np.abs(r)) < tol:
            jac = _numeric_jacobian(stacked, vr)
            cond = np.linalg.cond(jac)
            if not np.isfinite(cond) or cond > cond_limit:
                raise NetworkSolveError(
                    f"algebraic network ill-conditioned (cond={cond:.3e})", cond)
            return vr[:n] + 1j * vr[n:], cond
        jac = _numeric_jacobian(stacked, vr)
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > cond_limit:
            raise NetworkSolveError(
                f"algebraic network ill-conditioned (cond={cond:.3e})", cond)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NetworkSolveError(f"singular network Jacobian: {exc}", cond) from exc
        vr = vr + step
    raise NetworkSolveError(
        f"nodal solve did not converge in {max_iter} iterations "
        f"(residual {np.max(np.abs(stacked(vr))):.3e})", cond)


def _numeric_jacobian(fn, x, h=1e-7):
    f0 = fn(x)
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        step = h * max(1.0, abs(x[k]))
        xp = x.copy()
        xp[k] += step
        jac[:, k] = (fn(xp) - f0) / step
    return jac


# ---------------------------------------------------------------------------
# dynpi: series RL state per branch, shunt C aggregated at buses
# ---------------------------------------------------------------------------

def dynpi_derivatives(i_s, v_from, v_to, r, x, w_sys=1.0, f_nom=60.0):
    """Series-branch current derivative in the synchronous frame.

    (x / w_base) d(i)/dt = v_from - v_to - (r + j*w_sys*x) i
    """
    w_base = 2.0 * math.pi * f_nom
    return (w_base / x) * (v_from - v_to - complex(r, w_sys * x) * i_s)


def bus_capacitor_derivative(v_bus, i_net, c, w_sys=1.0, f_nom=60.0):
    """Aggregated bus-shunt capacitor dynamics: (c/w_base) dv/dt = i_net - j w c v."""
    w_base = 2.0 * math.pi * f_nom
    return (w_base / c) * (i_net - 1j * w_sys * c * v_bus)
