"""Stiff time-domain simulation with a scheduled branch-trip event.

Integration uses an implicit adaptive method (Radau by default, BDF as an
option); a trip is stop-apply-restart: the pre-event system integrates to
t_trip, the branch is removed, retained states carry over by name, the
algebraic vector is re-solved for statpi, and integration continues.  Dense
output is sampled on a uniform grid so multi-kHz content remains visible.
"""

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .dae import apply_branch_trip, map_states
from .devices import NetworkSolveError
from .frames import DQ_SCALE
from .loadmodels import VoltageFloorError

DIVERGENCE_LIMIT = 1e6
DEFAULT_T_TRIP = 0.1
DEFAULT_HORIZON = 5.0
DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-8
SAMPLE_HZ = 10000.0

# outcome classification on the trailing window
TAIL_FRACTION = 0.1
TAIL_MIN_S = 0.5
SETTLE_REL_BAND = 1e-3


class NotConvergedError(RuntimeError):
    """Operation needs a Converged result."""


@dataclass
class Outcome:
    kind: str                  # 'converged' | 'diverged' | 'max_time'
    steady: dict = None        # signal -> steady value (converged only)
    t_fail: float = None       # divergence instant (diverged only)

    @property
    def is_converged(self):
        return self.kind == "converged"


@dataclass
class TransientResult:
    t: np.ndarray
    signals: dict
    outcome: Outcome
    metadata: dict
    states: np.ndarray = None       # optional (keep_states)
    state_names: list = field(default_factory=list)

    def signal(self, name):
        return self.signals[name]

    def to_csv(self):
        names = sorted(self.signals)
        lines = ["t," + ",".join(names)]
        cols = [self.signals[n] for n in names]
        for k, tk in enumerate(self.t):
            lines.append(f"{tk:.9g}," + ",".join(f"{c[k]:.9g}" for c in cols))
        return "\n".join(lines) + "\n"


def _signal_extractors(system):
    """Named signal -> f(x, v_bus_complex_array) on one sample."""
    ex = {}
    for k, bid in enumerate(system.bus_ids):
        ex[f"v_mag_bus{bid}"] = (lambda kk: lambda x, v: abs(v[kk]) / DQ_SCALE)(k)
    for gen in system.gens:
        if gen.kind == "GFL":
            sl = gen.sl
            ex[f"bus{gen.bus}_inverter_current_mag"] = (
                lambda s: lambda x, v: math.hypot(x[s.start + 4], x[s.start + 5]) / DQ_SCALE)(sl)
        elif gen.kind in ("SM", "GFM_VSM"):
            sl = gen.sl
            ex[f"gen{gen.bus}_omega"] = (lambda s: lambda x, v: x[s.start + 1])(sl)
    return ex


def _sample(system, xs, extractors):
    """Evaluate all signals on a block of states (n_samples, n_states)."""
    out = {name: np.empty(xs.shape[0]) for name in extractors}
    for k in range(xs.shape[0]):
        x = xs[k]
        try:
            if system.bus_sl is not None:
                v = system.bus_voltages(x)
            else:
                v, _ = system.solve_algebraic(x)
            for name, fn in extractors.items():
                out[name][k] = fn(x, v)
        except (NetworkSolveError, VoltageFloorError):
            # tail of a diverging trajectory; leave the samples undefined
            for name in extractors:
                out[name][k] = np.nan
    return out


def _integrate(system, x0, t_span, t_eval, method, rtol, atol):
    def blowup(_t, x):
        return DIVERGENCE_LIMIT - np.max(np.abs(x))

    blowup.terminal = True
    blowup.direction = -1

    failure = {}

    def rhs(t, x):
        # model-level aborts surface as NaN so the step controller backs off;
        # if the solver cannot recover it stops as a controlled divergence
        try:
            return system.rhs(t, x)
        except (NetworkSolveError, VoltageFloorError) as exc:
            failure.setdefault("why", str(exc))
            failure.setdefault("t", float(t))
            return np.full_like(x, np.nan)

    try:
        sol = solve_ivp(rhs, t_span, x0, method=method, rtol=rtol, atol=atol,
                        t_eval=t_eval, events=blowup, dense_output=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        # non-finite values reached the solver internals; the trajectory up
        # to the first model abort is lost, only the failure time is kept
        t_fail = failure.get("t", t_span[0])
        why = failure.get("why", f"solver breakdown: {exc}")
        return None, float(t_fail), why
    if sol.status == 1:  # terminal event: state magnitude blew up
        return sol, float(sol.t[-1] if sol.t.size else t_span[0]), "state magnitude exceeded limit"
    if sol.status != 0:
        why = failure.get("why", sol.message)
        return sol, float(sol.t[-1] if sol.t.size else t_span[0]), why
    return sol, None, None


def simulate(system, eq, event=None, horizon=DEFAULT_HORIZON, t_trip=None,
             rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, method="Radau",
             sample_hz=SAMPLE_HZ, keep_states=False) -> TransientResult:
    """Integrate from an equilibrium, optionally tripping a branch.

    `event` is (branch_id, t_trip); alternatively pass a bare branch id with
    `t_trip`.  Signals always include the bus-3 style inverter current
    magnitude(s), bus voltage magnitudes, and machine speeds.
    """
    if event is not None and not isinstance(event, (tuple, list)):
        event = (event, t_trip if t_trip is not None else DEFAULT_T_TRIP)
    if event is not None and event[1] >= horizon:
        raise ValueError(f"trip time {event[1]} must precede horizon {horizon}")

    meta = {
        "scenario": system.scenario.label(),
        "family": system.scenario.family,
        "x": system.scenario.x,
        "line_model": system.scenario.line_model,
        "load_scale": system.scenario.load_scale,
        "event": list(event) if event else None,
        "horizon_s": horizon,
        "rtol": rtol,
        "atol": atol,
        "method": method,
        "sample_hz": sample_hz,
        "n_diff": system.n_diff,
        "n_alg": system.n_alg,
    }
    wall0 = _time.perf_counter()
    extractors = _signal_extractors(system)
    dt = 1.0 / sample_hz

    segments = []   # (system, t_array, x_block)
    if event is None:
        t_eval = np.arange(0.0, horizon + 0.5 * dt, dt)
        sol, t_fail, why = _integrate(system, eq.x0, (0.0, horizon), t_eval,
                                      method, rtol, atol)
        segments.append((system, sol.t if sol is not None else np.array([0.0]),
                         sol.y.T if sol is not None else eq.x0[None, :]))
    else:
        branch_id, trip_at = event
        t_eval_a = np.unique(np.append(np.arange(0.0, trip_at, dt), trip_at))
        sol_a, t_fail, why = _integrate(system, eq.x0, (0.0, trip_at), t_eval_a,
                                        method, rtol, atol)
        segments.append((system, sol_a.t if sol_a is not None else np.array([0.0]),
                         sol_a.y.T if sol_a is not None else eq.x0[None, :]))
        if t_fail is None:
            x_end = sol_a.y[:, -1]
            tripped = apply_branch_trip(system, branch_id)
            x_b0 = map_states(system, tripped, x_end)
            if tripped.bus_sl is None:
                try:
                    tripped.solve_algebraic(x_b0)
                except NetworkSolveError as exc:
                    t_fail, why = trip_at, f"post-trip algebraic re-solve failed: {exc}"
            if t_fail is None:
                t_eval_b = np.arange(trip_at + dt, horizon, dt)
                t_eval_b = np.append(t_eval_b[t_eval_b < horizon - 1e-12], horizon)
                sol_b, t_fail, why = _integrate(tripped, x_b0, (trip_at, horizon),
                                                t_eval_b, method, rtol, atol)
                if sol_b is not None and sol_b.t.size:
                    segments.append((tripped, sol_b.t, sol_b.y.T))

    t_all = np.concatenate([seg[1] for seg in segments])
    sig_parts = [_sample(seg[0], seg[2], extractors) for seg in segments]
    signals = {name: np.concatenate([p[name] for p in sig_parts])
               for name in extractors}

    if t_fail is not None:
        outcome = Outcome(kind="diverged", t_fail=t_fail)
        meta["failure"] = why
    else:
        outcome = _classify_tail(t_all, signals, horizon,
                                 event[1] if event else 0.0)
    meta["wall_time_s"] = _time.perf_counter() - wall0

    states = None
    names = []
    if keep_states and len(segments) == 1:
        states = segments[0][2]
        names = segments[0][0].state_names()[:segments[0][0].n_diff]
    elif keep_states:
        states = segments[-1][2]
        names = segments[-1][0].state_names()[:segments[-1][0].n_diff]
    return TransientResult(t=t_all, signals=signals, outcome=outcome,
                           metadata=meta, states=states, state_names=names)


def _classify_tail(t, signals, horizon, t_event):
    if t.size < 4 or t[-1] < horizon - 1e-9:
        return Outcome(kind="max_time")
    window = max(TAIL_MIN_S, TAIL_FRACTION * (horizon - t_event))
    mask = t >= (t[-1] - window)
    steady = {}
    settled = True
    for name, sig in signals.items():
        tail = sig[mask]
        val = float(np.mean(tail))
        steady[name] = val
        scale = max(1.0, abs(val))
        if np.max(np.abs(tail - val)) > SETTLE_REL_BAND * scale:
            settled = False
    if settled:
        return Outcome(kind="converged", steady=steady)
    return Outcome(kind="max_time")


def overshoot(result: TransientResult, signal="bus3_inverter_current_mag"):
    """Peak deviation of a signal from its post-event steady value."""
    if not result.outcome.is_converged:
        raise NotConvergedError("overshoot needs a Converged result")
    t_event = result.metadata["event"][1] if result.metadata.get("event") else 0.0
    sig = result.signals[signal]
    mask = result.t > t_event
    return float(np.max(np.abs(sig[mask] - result.outcome.steady[signal])))


def classify(result: TransientResult, signal="bus3_inverter_current_mag",
             band=0.01):
    """Settling time into a band around steady plus a dominant-frequency
    estimate from zero crossings of the deviation."""
    t_event = result.metadata["event"][1] if result.metadata.get("event") else 0.0
    mask = result.t > t_event
    if np.count_nonzero(mask) < 8:
        raise ValueError("series too short after the event for classification")
    t = result.t[mask]
    if result.outcome.is_converged:
        steady = result.outcome.steady[signal]
    else:
        steady = float(np.mean(result.signals[signal][mask][-8:]))
    dev = result.signals[signal][mask] - steady
    scale = max(1.0, abs(steady))
    outside = np.abs(dev) > band * scale
    settling_time = float(t[np.nonzero(outside)[0][-1]] - t_event) if outside.any() else 0.0

    sign = np.sign(dev)
    sign[sign == 0] = 1.0
    crossings = int(np.count_nonzero(np.diff(sign)))
    span = t[-1] - t[0]
    dominant_hz = 0.5 * crossings / span if span > 0 else 0.0
    return {"settling_time_s": settling_time, "dominant_freq_hz": dominant_hz}
