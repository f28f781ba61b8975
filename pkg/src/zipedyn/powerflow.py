"""Newton-Raphson AC power flow and the loading-scale protocol.

The power flow fixes the operating condition: loads enter as constant PQ at
their scaled nominals, PV buses hold their setpoint magnitude, and the
reference bus absorbs the loss mismatch.  It is used only to anchor the
dynamic models; the assembled dynamics carry no infinite bus.
"""

from dataclasses import dataclass, replace

import numpy as np

from .netdata import NetworkCase, build_ybus


class PowerFlowError(RuntimeError):
    """Power flow failed (non-convergence or singular Jacobian)."""

    def __init__(self, message, mismatch=None, iteration=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.iteration = iteration


@dataclass(frozen=True)
class PFSolution:
    bus_ids: tuple
    v: np.ndarray
    theta: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    residual_norm: float
    branch_flows: dict      # id -> (p_from, q_from, p_to, q_to)
    branch_charging: dict   # id -> total shunt susceptance b
    n_iter: int = 0

    def v_at(self, bus_id):
        return self.v[self.bus_ids.index(bus_id)]

    def theta_at(self, bus_id):
        return self.theta[self.bus_ids.index(bus_id)]

    def phasor(self, bus_id):
        k = self.bus_ids.index(bus_id)
        return self.v[k] * np.exp(1j * self.theta[k])

    def to_csv(self):
        lines = ["bus,v_pu,theta_rad,p_inj,q_inj"]
        for k, b in enumerate(self.bus_ids):
            lines.append(f"{b},{self.v[k]:.12g},{self.theta[k]:.12g},"
                         f"{self.p_inj[k]:.12g},{self.q_inj[k]:.12g}")
        return "\n".join(lines) + "\n"


def scale_loading(case: NetworkCase, load_scale: float) -> NetworkCase:
    """Scale every load's nominal powers and every generator's active
    setpoint by the same factor; everything else is untouched."""
    if load_scale < 0:
        raise ValueError(f"load_scale must be nonnegative, got {load_scale}")
    loads = tuple(replace(ld, p0=ld.p0 * load_scale, q0=ld.q0 * load_scale)
                  for ld in case.loads)
    gens = tuple(replace(g, p_set=g.p_set * load_scale) for g in case.generators)
    return replace(case, loads=loads, generators=gens)


def _scheduled_injections(case):
    idx = case.bus_index()
    n = len(case.buses)
    p = np.zeros(n)
    q = np.zeros(n)
    for g in case.generators:
        p[idx[g.bus]] += g.p_set
        q[idx[g.bus]] += g.q_set
    for ld in case.loads:
        p[idx[ld.bus]] -= ld.p0
        q[idx[ld.bus]] -= ld.q0
    return p, q


def _calc_injections(ybus, v, theta):
    vc = v * np.exp(1j * theta)
    s = vc * np.conj(ybus @ vc)
    return s.real, s.imag


def solve_power_flow(case: NetworkCase, tol=1e-8, max_iter=20,
                     extra_shunts=None, warm_start=None) -> PFSolution:
    """Full-Newton polar power flow.

    extra_shunts: optional {bus_id: complex admittance} stamped onto the
    diagonal (scenario networks add device filter capacitors this way).
    warm_start: optional PFSolution or (v, theta) used instead of flat start.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    idx = case.bus_index()
    n = len(case.buses)
    ybus = build_ybus(case)
    if extra_shunts:
        for bus_id, ysh in extra_shunts.items():
            ybus[idx[bus_id], idx[bus_id]] += ysh

    kinds = [b.kind for b in case.buses]
    ref = kinds.index("Reference")
    pv = [k for k, kind in enumerate(kinds) if kind == "PV"]
    pq = [k for k, kind in enumerate(kinds) if kind == "PQ"]
    ang_vars = [k for k in range(n) if k != ref]
    mag_vars = list(pq)

    v = np.ones(n)
    theta = np.zeros(n)
    for k, bus in enumerate(case.buses):
        if bus.v_set is not None and kinds[k] in ("Reference", "PV"):
            v[k] = bus.v_set
    if warm_start is not None:
        if isinstance(warm_start, PFSolution):
            v = warm_start.v.copy()
            theta = warm_start.theta.copy()
        else:
            v = np.array(warm_start[0], dtype=float)
            theta = np.array(warm_start[1], dtype=float)

    p_sched, q_sched = _scheduled_injections(case)
    g, b = ybus.real, ybus.imag

    mismatch = None
    for it in range(max_iter + 1):
        p_calc, q_calc = _calc_injections(ybus, v, theta)
        dp = p_sched - p_calc
        dq = q_sched - q_calc
        mis = np.concatenate([dp[ang_vars], dq[mag_vars]])
        mismatch = float(np.max(np.abs(mis))) if mis.size else 0.0
        if mismatch < tol:
            return _finish(case, ybus, v, theta, p_calc, q_calc, mismatch, it)
        if it == max_iter:
            break

        ct = np.cos(theta[:, None] - theta[None, :])
        st = np.sin(theta[:, None] - theta[None, :])
        # dP/dtheta, dP/dV, dQ/dtheta, dQ/dV (standard polar Jacobian)
        h = v[:, None] * v[None, :] * (g * st - b * ct)
        np.fill_diagonal(h, -q_calc - v * v * b.diagonal())
        nmat = v[:, None] * (g * ct + b * st)
        np.fill_diagonal(nmat, p_calc / v + v * g.diagonal())
        j = -v[:, None] * v[None, :] * (g * ct + b * st)
        np.fill_diagonal(j, p_calc - v * v * g.diagonal())
        lmat = v[:, None] * (g * st - b * ct)
        np.fill_diagonal(lmat, q_calc / v - v * b.diagonal())

        top = np.hstack([h[np.ix_(ang_vars, ang_vars)], nmat[np.ix_(ang_vars, mag_vars)]])
        bot = np.hstack([j[np.ix_(mag_vars, ang_vars)], lmat[np.ix_(mag_vars, mag_vars)]])
        jac = np.vstack([top, bot])
        try:
            step = np.linalg.solve(jac, mis)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian at iteration {it}",
                                 mismatch=mismatch, iteration=it) from exc
        if not np.all(np.isfinite(step)):
            raise PowerFlowError(f"power flow diverged at iteration {it}",
                                 mismatch=mismatch, iteration=it)
        theta[ang_vars] += step[:len(ang_vars)]
        v[mag_vars] += step[len(ang_vars):]

    raise PowerFlowError(
        f"power flow did not converge in {max_iter} iterations "
        f"(final mismatch {mismatch:.3e} pu)", mismatch=mismatch, iteration=max_iter)


def _finish(case, ybus, v, theta, p_calc, q_calc, mismatch, n_iter):
    flows = {}
    charging = {}
    idx = case.bus_index()
    vc = v * np.exp(1j * theta)
    for br in case.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        s_from = vc[i] * np.conj(ys * (vc[i] - vc[j]) + ysh * vc[i])
        s_to = vc[j] * np.conj(ys * (vc[j] - vc[i]) + ysh * vc[j])
        flows[br.id] = (s_from.real, s_from.imag, s_to.real, s_to.imag)
        charging[br.id] = br.b
    return PFSolution(
        bus_ids=tuple(b.id for b in case.buses),
        v=v.copy(), theta=theta.copy(),
        p_inj=p_calc.copy(), q_inj=q_calc.copy(),
        residual_norm=mismatch, branch_flows=flows,
        branch_charging=charging, n_iter=n_iter,
    )


def heaviest_loaded_branch(sol: PFSolution) -> str:
    """Branch with the largest apparent-power flow (max over both ends).

    Only transmission lines (branches with shunt charging) are trip
    candidates; transformer branches are skipped unless no line exists.
    Ties break deterministically toward the earlier branch in case order.
    """
    candidates = [bid for bid, b in sol.branch_charging.items() if b > 0]
    if not candidates:
        candidates = list(sol.branch_flows)
    best, best_s = None, -1.0
    for bid in candidates:
        pf, qf, pt, qt = sol.branch_flows[bid]
        s = max(abs(complex(pf, qf)), abs(complex(pt, qt)))
        if s > best_s + 1e-15:
            best, best_s = bid, s
    return best
