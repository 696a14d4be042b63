"""Intelligent Driver Model acceleration and its analytic companions.

All functions broadcast over numpy arrays: the parameter arguments may be an
:class:`~mobilsim.core.IdmParams` or any object whose attributes are arrays
of per-vehicle values (see ``engine.ParamArrays``).
"""

from __future__ import annotations

import numpy as np

from mobilsim.core import IdmParams


def desired_gap(v, dv, params: IdmParams):
    """Dynamic desired gap s*(v, dv); never below ``params.s0``."""
    interaction = v * params.T + v * dv / (2.0 * np.sqrt(params.a * params.b))
    return params.s0 + np.maximum(0.0, interaction)


def free_acceleration(v, params: IdmParams):
    return params.a * (1.0 - (v / params.v0) ** params.delta)


def raw_acceleration(s, v, v_l, params):
    """IDM acceleration without the positive-gap check (engine hot path)."""
    s_star = desired_gap(v, v - v_l, params)
    return params.a * (1.0 - (v / params.v0) ** params.delta - (s_star / s) ** 2)


def acceleration(s, v, v_l, params: IdmParams):
    """IDM acceleration for gap ``s`` to a leader driving at ``v_l``.

    Raises:
        ValueError: if any gap is nonpositive (the vehicles already collided).
    """
    if np.any(np.asarray(s) <= 0):
        raise ValueError(f"IDM needs a positive gap, got s={s}")
    return raw_acceleration(s, v, v_l, params)


def equilibrium_gap(v, params: IdmParams):
    """Gap at which a vehicle following an equally fast leader does not accelerate."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(v >= params.v0):
        raise ValueError(f"equilibrium gap needs 0 <= v < v0, got v={v}")
    out = (params.s0 + v * params.T) / np.sqrt(1.0 - (v / params.v0) ** params.delta)
    return float(out) if out.ndim == 0 else out
