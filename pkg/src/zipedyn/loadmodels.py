"""Static and dynamic load models: exponential, ZIP, E, and composite ZIP-E.

The static laws work on RMS per-unit voltage magnitude.  The E load is a
grid-following rectifier: PLL + outer P/Q PI loops + inner current PI loops
+ LCL filter, 12 dynamic states, written in the common synchronous frame.
Sign convention is load-positive: positive references mean consumption.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from .frames import DQ_SCALE

# Voltage magnitude (RMS pu) below which constant-power/current conversion aborts.
VOLTAGE_FLOOR = 1e-6


class VoltageFloorError(ValueError):
    """Bus voltage too low to convert a P/I load block into current."""


class InfeasibleOperatingPoint(ValueError):
    """No E-load equilibrium exists for the requested terminal condition."""


# ---------------------------------------------------------------------------
# composition vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositionVector:
    """Convex weights over the {Z, I, P, E} load types."""

    z: float
    i: float
    p: float
    e: float

    def __post_init__(self):
        vals = (self.z, self.i, self.p, self.e)
        if any(w < -1e-12 or w > 1.0 + 1e-12 for w in vals):
            raise ValueError(f"composition weights must lie in [0, 1]: {vals}")
        if abs(sum(vals) - 1.0) > 1e-12:
            raise ValueError(f"composition weights must sum to 1: {vals}")

    @classmethod
    def from_array(cls, arr):
        z, i, p, e = (float(v) for v in arr)
        return cls(z, i, p, e)

    def as_array(self):
        return np.array([self.z, self.i, self.p, self.e])


def composition_from_x(x, family):
    """Composition for sweep fraction x: ZIP puts x on P, ZI-E puts x on E.

    The remainder (1-x) is split equally between Z and I in both families, so
    the families coincide at x = 0.
    """
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"composition fraction outside [0, 1]: {x}")
    rest = (1.0 - x) / 2.0
    fam = family.lower().replace("-", "")
    if fam == "zip":
        return CompositionVector(rest, rest, x, 0.0)
    if fam == "zie":
        return CompositionVector(rest, rest, 0.0, x)
    raise ValueError(f"unknown load family: {family!r} (expected 'zip' or 'zie')")


# ---------------------------------------------------------------------------
# static load laws
# ---------------------------------------------------------------------------

def eval_exponential(p0, q0, v0, n_p, n_q, v):
    """Voltage-dependent load: P = p0*(v/v0)^n_p, Q = q0*(v/v0)^n_q."""
    if v < 0 or v0 <= 0:
        raise ValueError("voltage magnitudes must satisfy v >= 0, v0 > 0")
    if v == 0.0 and (n_p < 0 or n_q < 0):
        raise ZeroDivisionError("zero voltage with negative exponent")
    u = v / v0
    return p0 * u ** n_p, q0 * u ** n_q


def eval_zip(p0, q0, v0, eta, gamma, v):
    """Polynomial ZIP load; the e entries of eta/gamma are ignored here."""
    if v < 0 or v0 <= 0:
        raise ValueError("voltage magnitudes must satisfy v >= 0, v0 > 0")
    u = v / v0
    p = p0 * (eta.z * u * u + eta.i * u + eta.p)
    q = q0 * (gamma.z * u * u + gamma.i * u + gamma.p)
    return p, q


def eload_power(v_d, v_q, i_d, i_q):
    """Power drawn by dq current (i_d, i_q) at dq voltage (v_d, v_q)."""
    p = 0.5 * (v_d * i_d + v_q * i_q)
    q = 0.5 * (v_q * i_d - v_d * i_q)
    return p, q


# ---------------------------------------------------------------------------
# E load: grid-following rectifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EloadParams:
    """Converter parameters, per unit on the system base.

    lf/rf/cf/lg/rg form the LCL filter (converter side, shunt capacitor,
    grid side).  PI gains: PLL, outer real/reactive power loops, inner
    current loops.  i_base records the device current base relative to the
    system base; all quantities here are already on the system base, so it
    is metadata only.
    """

    lf: float = 0.08
    rf: float = 0.004
    cf: float = 0.074
    lg: float = 0.2
    rg: float = 0.01
    kp_pll: float = 0.4
    ki_pll: float = 30.0
    kp_p: float = 0.25
    ki_p: float = 40.0
    kp_q: float = 0.25
    ki_q: float = 40.0
    kp_c: float = 0.5
    ki_c: float = 10.0
    i_base: float = 1.0

    def __post_init__(self):
        if self.lf <= 0 or self.cf <= 0 or self.lg <= 0:
            raise ValueError("filter elements lf, cf, lg must be positive")
        for name in ("kp_pll", "ki_pll", "kp_p", "ki_p", "kp_q", "ki_q", "kp_c", "ki_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"gain {name} must be nonnegative")


ELOAD_STATE_NAMES = (
    "i_cv_d", "i_cv_q", "v_cf_d", "v_cf_q", "i_g_d", "i_g_q",
    "pll_eps", "pll_theta", "xi_p", "xi_q", "sigma_d", "sigma_q",
)
N_ELOAD_STATES = len(ELOAD_STATE_NAMES)


@dataclass
class EloadState:
    i_cv_d: float = 0.0
    i_cv_q: float = 0.0
    v_cf_d: float = 0.0
    v_cf_q: float = 0.0
    i_g_d: float = 0.0
    i_g_q: float = 0.0
    pll_eps: float = 0.0
    pll_theta: float = 0.0
    xi_p: float = 0.0
    xi_q: float = 0.0
    sigma_d: float = 0.0
    sigma_q: float = 0.0

    def to_array(self):
        return np.array([getattr(self, f.name) for f in fields(self)])

    @classmethod
    def from_array(cls, arr):
        return cls(*(float(v) for v in arr))


def gfl_core_derivatives(x, v_bus_d, v_bus_q, par, p_ref, q_ref, w_sys, w_base):
    """Core converter ODE right-hand side on a plain 12-vector.

    Written component-wise (no complex packing, no magnitudes), so every
    operation is analytic in each state entry; derivative checks may use a
    complex step directly.  Order of x follows ELOAD_STATE_NAMES.
    """
    (icv_d, icv_q, vcf_d, vcf_q, ig_d, ig_q,
     pll_eps, pll_theta, xi_p, xi_q, sig_d, sig_q) = x

    ct = np.cos(pll_theta)
    st = np.sin(pll_theta)
    # system frame -> PLL frame
    vcf_pd = vcf_d * ct + vcf_q * st
    vcf_pq = -vcf_d * st + vcf_q * ct
    icv_pd = icv_d * ct + icv_q * st
    icv_pq = -icv_d * st + icv_q * ct

    # SRF-PLL locks the capacitor voltage onto its d axis
    w_pll = w_sys + par.kp_pll * vcf_pq + par.ki_pll * pll_eps
    d_pll_eps = vcf_pq
    d_pll_theta = w_base * (w_pll - w_sys)

    # measured consumption at the bus terminal
    p_meas = 0.5 * (v_bus_d * ig_d + v_bus_q * ig_q)
    q_meas = 0.5 * (v_bus_q * ig_d - v_bus_d * ig_q)

    # outer PI loops -> current references in the PLL frame
    e_p = p_ref - p_meas
    e_q = q_ref - q_meas
    id_ref = par.kp_p * e_p + par.ki_p * xi_p
    iq_ref = -(par.kp_q * e_q + par.ki_q * xi_q)

    # inner PI loops with cross-coupling decoupling; no capacitor-voltage
    # feedforward, so kp_c acts as series damping on the filter resonance
    e_id = id_ref - icv_pd
    e_iq = iq_ref - icv_pq
    u_d = par.kp_c * e_id + par.ki_c * sig_d
    u_q = par.kp_c * e_iq + par.ki_c * sig_q
    vcv_pd = w_pll * par.lf * icv_pq - u_d
    vcv_pq = -w_pll * par.lf * icv_pd - u_q

    # PLL frame -> system frame
    vcv_d = vcv_pd * ct - vcv_pq * st
    vcv_q = vcv_pd * st + vcv_pq * ct

    # LCL filter in the common synchronous frame
    d_icv_d = (w_base / par.lf) * (vcf_d - vcv_d - par.rf * icv_d + w_sys * par.lf * icv_q)
    d_icv_q = (w_base / par.lf) * (vcf_q - vcv_q - par.rf * icv_q - w_sys * par.lf * icv_d)
    d_vcf_d = (w_base / par.cf) * (ig_d - icv_d + w_sys * par.cf * vcf_q)
    d_vcf_q = (w_base / par.cf) * (ig_q - icv_q - w_sys * par.cf * vcf_d)
    d_ig_d = (w_base / par.lg) * (v_bus_d - vcf_d - par.rg * ig_d + w_sys * par.lg * ig_q)
    d_ig_q = (w_base / par.lg) * (v_bus_q - vcf_q - par.rg * ig_q - w_sys * par.lg * ig_d)

    return np.array([
        d_icv_d, d_icv_q, d_vcf_d, d_vcf_q, d_ig_d, d_ig_q,
        d_pll_eps, d_pll_theta, e_p, e_q, e_id, e_iq,
    ])


def eload_derivatives(state, v_bus_dq, params, p_ref, q_ref, w_sys=1.0, f_nom=60.0):
    """Time derivatives of an E-load state at the given terminal voltage."""
    x = state.to_array() if isinstance(state, EloadState) else np.asarray(state, dtype=float)
    v = complex(v_bus_dq)
    dx = gfl_core_derivatives(x, v.real, v.imag, params, p_ref, q_ref,
                              w_sys, 2.0 * math.pi * f_nom)
    return EloadState.from_array(dx) if isinstance(state, EloadState) else dx


def initialize_eload(params, v_bus_dq, p_ref, q_ref, w_sys=1.0):
    """Back-solve the unique E-load equilibrium consuming (p_ref, q_ref).

    Closed form: the grid current follows from the power target, the filter
    chain from phasor steady state, and each PI integrator from its zero-error
    condition.  Requires strictly positive integral gains.
    """
    v = complex(v_bus_dq)
    if abs(v) / DQ_SCALE < VOLTAGE_FLOOR:
        raise InfeasibleOperatingPoint("cannot transfer power at (near-)zero voltage")
    for name in ("ki_p", "ki_q", "ki_c"):
        if getattr(params, name) <= 0:
            raise InfeasibleOperatingPoint(f"equilibrium back-solve needs {name} > 0")

    ig = np.conj(2.0 * complex(p_ref, q_ref) / v)
    vcf = v - complex(params.rg, w_sys * params.lg) * ig
    if abs(vcf) / DQ_SCALE < VOLTAGE_FLOOR:
        raise InfeasibleOperatingPoint("filter capacitor voltage collapses at this operating point")
    icv = ig - 1j * w_sys * params.cf * vcf
    theta = math.atan2(vcf.imag, vcf.real)
    icv_pll = icv * np.exp(-1j * theta)
    # zero inner-loop error: the integrators carry rf*i minus the cap voltage
    sigma = (params.rf * icv_pll - abs(vcf)) / params.ki_c

    return EloadState(
        i_cv_d=icv.real, i_cv_q=icv.imag,
        v_cf_d=vcf.real, v_cf_q=vcf.imag,
        i_g_d=ig.real, i_g_q=ig.imag,
        pll_eps=0.0, pll_theta=theta,
        xi_p=icv_pll.real / params.ki_p,
        xi_q=-icv_pll.imag / params.ki_q,
        sigma_d=sigma.real,
        sigma_q=sigma.imag,
    )


# ---------------------------------------------------------------------------
# composite ZIP-E injection
# ---------------------------------------------------------------------------

def zip_current(p0, q0, v0, eta, gamma, v_bus_dq, floor=VOLTAGE_FLOOR):
    """Load-convention dq current of the Z/I/P parts at dq voltage v_bus_dq."""
    v = complex(v_bus_dq)
    vmag_rms = abs(v) / DQ_SCALE
    s_z = complex(eta.z * p0, gamma.z * q0)
    s_i = complex(eta.i * p0, gamma.i * q0)
    s_p = complex(eta.p * p0, gamma.p * q0)

    i_tot = np.conj(s_z) * v / (v0 * v0)
    if s_i != 0 or s_p != 0:
        if vmag_rms < floor:
            raise VoltageFloorError(
                f"bus voltage {vmag_rms:.3e} pu below floor {floor:.1e}; "
                "constant-current/power conversion undefined")
        i_tot += DQ_SCALE * np.conj(s_i) * v / (v0 * abs(v))
        i_tot += 2.0 * np.conj(s_p) * v / (abs(v) ** 2)
    return i_tot


def zipe_injection(spec, load_scale, v_bus_dq, eload_state=None):
    """Total dq current drawn by a ZIP-E load (ZIP parts + grid-side E current).

    The E weight of the composition selects the dynamic part; its grid-side
    filter current must be supplied (and only then).  The ZIP parts respond
    to the instantaneous voltage magnitude.
    """
    has_e = spec.eta.e > 0 or spec.gamma.e > 0
    if has_e != (eload_state is not None):
        raise ValueError("eload_state must be present exactly when the E weight is nonzero")
    i = zip_current(spec.p0 * load_scale, spec.q0 * load_scale, spec.v0,
                    spec.eta, spec.gamma, v_bus_dq)
    if has_e:
        i += complex(eload_state.i_g_d, eload_state.i_g_q)
    return i
