"""Linearization, algebraic reduction, eigenvalues, and mode classification.

Partial derivatives come from central finite differences of the assembled
residual; the algebraic block is eliminated through g_y, which is exactly
where a statpi network approaching collapse shows up as an explosive
condition number.  The rigid-rotation symmetry of the synchronous frame
contributes one eigenvalue at the origin (the reference mode); it is flagged
and excluded from stability verdicts.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

REFERENCE_MODE_TOL = 1e-6
CONDITION_LIMIT = 1e12


class AlgebraicSingularityError(RuntimeError):
    """g_y is numerically singular: the algebraic network model broke down."""

    def __init__(self, condition):
        super().__init__(f"algebraic singularity: cond(g_y) = {condition:.3e} "
                         f"exceeds {CONDITION_LIMIT:.1e}")
        self.condition = condition


@dataclass
class JacobianBlocks:
    f_x: np.ndarray
    f_y: np.ndarray
    g_x: np.ndarray
    g_y: np.ndarray
    mass_diag: np.ndarray = None  # converts residual rows to state rates


@dataclass
class EigenReport:
    eigenvalues: np.ndarray
    freq_hz: np.ndarray
    damping_ratio: np.ndarray
    max_real_part: float
    stable: bool
    reference_mode_present: bool
    is_reference_mode: np.ndarray
    g_y_condition: float | None = None

    def modes_above(self, freq_hz):
        return self.eigenvalues[self.freq_hz > freq_hz]


def fd_jacobian(fun, x, h=1e-6):
    """Central-difference Jacobian of a vector function, relative step h."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        step = h * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += step
        xm[k] -= step
        jac[:, k] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * step)
    return jac


def jacobian(system, eq, h=1e-6) -> JacobianBlocks:
    """Residual partials (f_x, f_y, g_x, g_y) about an equilibrium."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x0 = np.asarray(eq.x0, dtype=float)
    y0 = np.asarray(eq.y0, dtype=float)
    n, m = x0.size, y0.size

    def f_of_x(x):
        return system.residual(x, y0 if m else None)[0]

    def g_of_x(x):
        return system.residual(x, y0 if m else None)[1]

    f_x = fd_jacobian(f_of_x, x0, h)
    if m == 0:
        empty = np.empty((0, 0))
        return JacobianBlocks(f_x=f_x, f_y=np.empty((n, 0)), g_x=np.empty((0, n)),
                              g_y=empty, mass_diag=system.mass_diag.copy())

    def f_of_y(y):
        return system.residual(x0, y)[0]

    def g_of_y(y):
        return system.residual(x0, y)[1]

    f_y = fd_jacobian(f_of_y, y0, h)
    g_x = fd_jacobian(g_of_x, x0, h)
    g_y = fd_jacobian(g_of_y, y0, h)
    return JacobianBlocks(f_x=f_x, f_y=f_y, g_x=g_x, g_y=g_y,
                          mass_diag=system.mass_diag.copy())


def reduce(blocks: JacobianBlocks):
    """State matrix A = f_x - f_y g_y^{-1} g_x, scaled to state-rate units.

    Returns (A, condition estimate of g_y); raises AlgebraicSingularityError
    when the algebraic block is effectively singular.
    """
    if blocks.g_y.size == 0:
        a_res = blocks.f_x
        cond = None
    else:
        if blocks.g_y.shape[0] != blocks.g_y.shape[1]:
            raise ValueError("g_y must be square")
        cond = float(np.linalg.cond(blocks.g_y))
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise AlgebraicSingularityError(cond if np.isfinite(cond) else np.inf)
        a_res = blocks.f_x - blocks.f_y @ np.linalg.solve(blocks.g_y, blocks.g_x)
    if blocks.mass_diag is not None:
        a_res = a_res / blocks.mass_diag[:, None]
    return a_res, cond


def eigenvalues(a, g_y_condition=None) -> EigenReport:
    """Full spectrum with per-mode frequency/damping and a stability verdict."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("state matrix contains non-finite entries")
    try:
        lam = scipy.linalg.eigvals(a)
    except scipy.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed on {a.shape} matrix: {exc}") from exc
    order = np.lexsort((lam.imag, -lam.real))
    lam = lam[order]
    freq = np.abs(lam.imag) / (2.0 * np.pi)
    mag = np.abs(lam)
    damping = np.where(mag > 0, -lam.real / np.where(mag > 0, mag, 1.0), 0.0)
    is_ref = mag < REFERENCE_MODE_TOL
    rest = lam[~is_ref]
    max_re = float(np.max(rest.real)) if rest.size else -np.inf
    return EigenReport(
        eigenvalues=lam, freq_hz=freq, damping_ratio=damping,
        max_real_part=max_re, stable=bool(max_re < 0.0),
        reference_mode_present=bool(np.any(is_ref)),
        is_reference_mode=is_ref, g_y_condition=g_y_condition,
    )


def participation_factors(a):
    """Normalized |left x right| eigenvector products, one row per mode.

    Rows sum to one; for (near-)defective pencils the normalization guard
    falls back to uniform weights on the affected mode.
    """
    a = np.asarray(a, dtype=float)
    lam, vl, vr = scipy.linalg.eig(a, left=True, right=True)
    order = np.lexsort((lam.imag, -lam.real))
    vl = vl[:, order]
    vr = vr[:, order]
    p = np.abs(vl.conj() * vr).T  # (mode, state)
    sums = p.sum(axis=1, keepdims=True)
    bad = (sums[:, 0] < 1e-14) | ~np.isfinite(sums[:, 0])
    if np.any(bad):
        p[bad] = 1.0 / a.shape[0]
        sums = p.sum(axis=1, keepdims=True)
    return p / sums


def analyze(system, eq, h=1e-6) -> EigenReport:
    """jacobian -> reduce -> eigenvalues in one call."""
    blocks = jacobian(system, eq, h)
    a, cond = reduce(blocks)
    return eigenvalues(a, g_y_condition=cond)
