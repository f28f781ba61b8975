"""Reference-frame and per-unit conventions shared by every model.

All electrical quantities live in a common synchronous dq frame rotating at
nominal speed, packed as complex numbers ``u = u_d + 1j*u_q``.  The dq
magnitude convention is fixed once, here: a balanced operating point with
RMS phasor magnitude ``V`` (the quantity that enters the static load laws)
has ``|u| = sqrt(2)*V``.  With that choice the instantaneous powers are

    P = (v_d*i_d + v_q*i_q) / 2
    Q = (v_q*i_d - v_d*i_q) / 2

i.e. ``S = v * conj(i) / 2``, and the phasor nodal equations ``I = Y V``
carry over to dq unchanged.
"""

import numpy as np

# |dq| of a 1-pu RMS operating point; the single conversion constant.
DQ_SCALE = np.sqrt(2.0)


def phasor_to_dq(v_mag, theta):
    """RMS phasor (magnitude, angle) -> complex dq value."""
    return DQ_SCALE * v_mag * np.exp(1j * np.asarray(theta))


def dq_to_rms(u):
    """Complex dq value -> RMS magnitude (the V of the static load laws)."""
    return np.abs(u) / DQ_SCALE


def dq_power(v, i):
    """Complex power S = P + jQ absorbed for load-convention current i."""
    return 0.5 * v * np.conj(i)


def current_from_power(s, v):
    """Load-convention dq current drawing complex power s at dq voltage v."""
    return np.conj(2.0 * s / v)


def to_local(u, theta):
    """Rotate a system-frame dq value into a frame at angle theta."""
    return u * np.exp(-1j * theta)


def to_global(u, theta):
    """Rotate a local-frame dq value back into the system frame."""
    return u * np.exp(1j * theta)
