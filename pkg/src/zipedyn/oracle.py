"""Independent small-scale reference implementations, used only by tests.

Nothing here shares a numerical kernel with the main modules: the power flow
is Gauss-Seidel (not Newton), the admittance matrix comes from an incidence
factorization (not branch stamping), and resonances come from the closed-form
RLC characteristic polynomial (not a numerical eigensolver).
"""

import math

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .frames import DQ_SCALE
from .loadmodels import gfl_core_derivatives, initialize_eload
from .powerflow import PFSolution


class OracleError(RuntimeError):
    pass


def incidence_ybus(case, in_service=None):
    """Bus admittance matrix via A^T diag(y) A plus shunt split — an
    algebraically different construction from the branch-stamping builder."""
    idx = case.bus_index()
    n = len(case.buses)
    branches = [br for br in case.branches
                if in_service is None or br.id in in_service]
    m = len(branches)
    rows, cols, vals = [], [], []
    for k, br in enumerate(branches):
        rows += [k, k]
        cols += [idx[br.from_bus], idx[br.to_bus]]
        vals += [1.0, -1.0]
    a = sp.csr_matrix((vals, (rows, cols)), shape=(m, n), dtype=complex)
    y_series = sp.diags([1.0 / complex(br.r, br.x) for br in branches],
                        dtype=complex, shape=(m, m))
    y = (a.T @ y_series @ a).toarray()
    for br in branches:
        y[idx[br.from_bus], idx[br.from_bus]] += 0.5j * br.b
        y[idx[br.to_bus], idx[br.to_bus]] += 0.5j * br.b
    return y


def gs_power_flow(case, tol=1e-8, max_iter=20000, extra_shunts=None):
    """Gauss-Seidel power flow; slow but entirely Newton-free."""
    idx = case.bus_index()
    n = len(case.buses)
    ybus = incidence_ybus(case)
    if extra_shunts:
        for bus_id, ysh in extra_shunts.items():
            ybus[idx[bus_id], idx[bus_id]] += ysh

    kinds = [b.kind for b in case.buses]
    ref = kinds.index("Reference")
    p = np.zeros(n)
    q = np.zeros(n)
    for g in case.generators:
        p[idx[g.bus]] += g.p_set
        q[idx[g.bus]] += g.q_set
    for ld in case.loads:
        p[idx[ld.bus]] -= ld.p0
        q[idx[ld.bus]] -= ld.q0

    v = np.ones(n, dtype=complex)
    vset = np.ones(n)
    for k, bus in enumerate(case.buses):
        if bus.v_set is not None and kinds[k] in ("Reference", "PV"):
            vset[k] = bus.v_set
            v[k] = bus.v_set

    for it in range(max_iter):
        for k in range(n):
            if k == ref:
                continue
            coupled = ybus[k] @ v - ybus[k, k] * v[k]
            if kinds[k] == "PV":
                q_k = (v[k] * np.conj(ybus[k] @ v)).imag
                s_k = complex(p[k], q_k)
            else:
                s_k = complex(p[k], q[k])
            v_new = (np.conj(s_k / v[k]) - coupled) / ybus[k, k]
            if kinds[k] == "PV":
                v_new = vset[k] * v_new / abs(v_new)
            v[k] = v_new
        s_calc = v * np.conj(ybus @ v)
        dp = p - s_calc.real
        dq = q - s_calc.imag
        mis = [abs(dp[k]) for k in range(n) if k != ref]
        mis += [abs(dq[k]) for k in range(n) if kinds[k] == "PQ"]
        if max(mis) < tol:
            return _gs_solution(case, ybus, v, s_calc, max(mis), it + 1)
    raise OracleError(f"Gauss-Seidel did not converge in {max_iter} sweeps "
                      f"(mismatch {max(mis):.3e})")


def _gs_solution(case, ybus, v, s_calc, mismatch, n_iter):
    idx = case.bus_index()
    flows = {}
    charging = {}
    for br in case.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        s_from = v[i] * np.conj(ys * (v[i] - v[j]) + ysh * v[i])
        s_to = v[j] * np.conj(ys * (v[j] - v[i]) + ysh * v[j])
        flows[br.id] = (s_from.real, s_from.imag, s_to.real, s_to.imag)
        charging[br.id] = br.b
    return PFSolution(
        bus_ids=tuple(b.id for b in case.buses),
        v=np.abs(v), theta=np.angle(v),
        p_inj=s_calc.real.copy(), q_inj=s_calc.imag.copy(),
        residual_norm=mismatch, branch_flows=flows,
        branch_charging=charging, n_iter=n_iter,
    )


def rlc_eigs(r, l, c, w_base=1.0):
    """Closed-form eigenvalue pair of a series RLC loop.

    In per-unit reactance/susceptance, pass w_base = 2*pi*f_nom to obtain
    eigenvalues in rad/s.
    """
    alpha = r / (2.0 * l)
    disc = 1.0 / (l * c) - alpha * alpha
    if disc >= 0:
        root = math.sqrt(disc)
        return (complex(-alpha, root) * w_base, complex(-alpha, -root) * w_base)
    root = math.sqrt(-disc)
    return (complex(-alpha + root, 0.0) * w_base, complex(-alpha - root, 0.0) * w_base)


def single_gfl_step_response(params, step, p0=0.3, q0=0.0, v_mag=1.0,
                             t_end=1.5, f_nom=60.0, n_samples=1500):
    """Drive one converter against a fixed voltage source and step p_ref.

    Returns (t, p_meas) where p_meas is the consumed real power.  Divergence
    shows up as non-finite samples or runaway magnitude; callers assert on the
    trace shape.
    """
    v_bus = DQ_SCALE * v_mag + 0.0j
    x0 = initialize_eload(params, v_bus, p0, q0).to_array()
    w_base = 2.0 * math.pi * f_nom
    p_ref = p0 + step

    def rhs(_t, x):
        return gfl_core_derivatives(x, v_bus.real, v_bus.imag, params,
                                    p_ref, q0, 1.0, w_base)

    t_eval = np.linspace(0.0, t_end, n_samples)
    sol = solve_ivp(rhs, (0.0, t_end), x0, method="Radau", rtol=1e-8, atol=1e-10,
                    t_eval=t_eval, dense_output=False)
    ig_d, ig_q = sol.y[4], sol.y[5]
    p_meas = 0.5 * (v_bus.real * ig_d + v_bus.imag * ig_q)
    return sol.t, p_meas
