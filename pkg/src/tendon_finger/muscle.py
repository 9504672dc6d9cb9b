"""Artificial-muscle tendon force law.

    F = g*I + exp(kp*(l_des - l)) + (kd1*I + kd2)*(v_des - v) + ks*(l_s - l_m)

with the pennation angle fixed at zero.  ``g`` is the current-to-force gain;
at its default of 1 N/A the expression is used literally, with the current
treated as a force-equivalent signal.  The result is clamped at zero because
a cable cannot push.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MuscleSaturationError, ValidationError

EXP_LIMIT = 700.0


@dataclass(frozen=True)
class MuscleParams:
    kp: float  # 1/m
    kd1: float  # N s / (A m)
    kd2: float  # N s / m
    ks: float  # N / m
    preload_len: float  # m
    current_gain: float = 1.0  # N / A

    def __post_init__(self):
        for name in ("kp", "kd1", "kd2", "ks", "current_gain"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"muscle {name} must be positive, got {v}")
        if not (np.isfinite(self.preload_len) and self.preload_len > 0):
            raise ValidationError("muscle preload_len must be positive")


@dataclass(frozen=True)
class MuscleState:
    cable_len: float
    cable_len_desired: float
    cable_vel: float
    cable_vel_desired: float
    spring_len: float
    current: float

    def __post_init__(self):
        if np.any(np.asarray(self.cable_len) <= 0) or np.any(np.asarray(self.spring_len) <= 0):
            raise ValidationError("cable_len and spring_len must be positive")


def _exp_term(params, length_err):
    arg = params.kp * np.asarray(length_err, dtype=float)
    if np.any(arg > EXP_LIMIT):
        raise MuscleSaturationError(
            f"runaway tracking error: kp*(l_des - l) = {np.max(arg):.3g} exceeds {EXP_LIMIT}"
        )
    return np.exp(arg)


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def force_from_errors(params: MuscleParams, current, length_err, vel_err, spring_stretch):
    """The force law written on tracking errors; ``spring_stretch = l_s - l_m``."""
    i = np.asarray(current, dtype=float)
    force = (
        params.current_gain * i
        + _exp_term(params, length_err)
        + (params.kd1 * i + params.kd2) * np.asarray(vel_err, dtype=float)
        + params.ks * np.asarray(spring_stretch, dtype=float)
    )
    return np.maximum(force, 0.0)


def tendon_force(params: MuscleParams, state: MuscleState):
    """Tendon force in newtons, never negative."""
    force = force_from_errors(
        params,
        state.current,
        np.asarray(state.cable_len_desired, dtype=float) - state.cable_len,
        np.asarray(state.cable_vel_desired, dtype=float) - state.cable_vel,
        np.asarray(state.spring_len, dtype=float) - params.preload_len,
    )
    return _out(force)


def passive_force(params: MuscleParams, stretch):
    """Force with no current and no tracking error, spring stretched by ``stretch``."""
    state = MuscleState(
        cable_len=1.0,
        cable_len_desired=1.0,
        cable_vel=0.0,
        cable_vel_desired=0.0,
        spring_len=params.preload_len + np.asarray(stretch, dtype=float),
        current=0.0,
    )
    return tendon_force(params, state)


def current_for_force(params: MuscleParams, force, length_err, vel_err, spring_stretch):
    """Invert the force law for the current that yields ``force``.

    Used by the motor driver to turn a tendon-force command into a current.
    Requires ``current_gain + kd1*vel_err > 0`` so the law is increasing in
    current; elsewhere the denominator is floored to keep the command finite.
    """
    force = np.asarray(force, dtype=float)
    dv = np.asarray(vel_err, dtype=float)
    rest = _exp_term(params, length_err) + params.kd2 * dv + params.ks * np.asarray(spring_stretch)
    denom = np.maximum(params.current_gain + params.kd1 * dv, 0.05 * params.current_gain)
    return _out((force - rest) / denom)
