"""Joint-space admittance control, PID position loop and contact-stop latch.

The admittance law acts on the deviation ``dq = q - q_desired``:

    M ddq'' + B dq' + K dq = tau_ext - tau_offset

integrated with explicit Euler in the order velocity-then-position, where
the position update uses the *old* velocity.  Matrices are diagonal, so
every parameter may be a scalar or a per-joint array; states broadcast the
same way, which lets one call advance a batch of independent loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnstableIntegrationError, ValidationError

DT_MAX = 0.1


def _arr(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class AdmittanceParams:
    inertia: float | np.ndarray
    damping: float | np.ndarray
    stiffness: float | np.ndarray
    tau_offset: float | np.ndarray = 0.0

    def __post_init__(self):
        for name in ("inertia", "damping", "stiffness"):
            v = _arr(getattr(self, name))
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValidationError(f"admittance {name} must be positive definite (all entries > 0)")

    def stability_limit(self):
        """Largest step accepted: ``2 / omega`` with ``omega^2 = K / M``."""
        return 2.0 * np.sqrt(_arr(self.inertia) / _arr(self.stiffness))

    def euler_spectral_radius(self, dt: float):
        """Spectral radius of the explicit-Euler update matrix (per joint)."""
        m, b, k = np.broadcast_arrays(_arr(self.inertia), _arr(self.damping), _arr(self.stiffness))
        out = np.empty(m.shape)
        for i in np.ndindex(m.shape):
            A = np.array([[1.0, dt], [-k[i] * dt / m[i], 1.0 - b[i] * dt / m[i]]])
            out[i] = np.max(np.abs(np.linalg.eigvals(A)))
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class LoopState:
    """Admittance integrator state in deviation coordinates."""

    dq: float | np.ndarray = 0.0
    dq_dot: float | np.ndarray = 0.0
    dq_ddot: float | np.ndarray = 0.0
    t: float = 0.0

    def command(self, q_desired):
        """Commanded joint angle ``q = q_desired + dq``."""
        return _arr(q_desired) + self.dq

    def lyapunov(self, params: AdmittanceParams):
        return 0.5 * _arr(params.inertia) * _arr(self.dq_dot) ** 2 + 0.5 * _arr(params.stiffness) * _arr(self.dq) ** 2


def admittance_step(params: AdmittanceParams, state: LoopState, q_desired, tau_ext, dt: float) -> LoopState:
    """Advance the admittance dynamics by one Euler step.

    ``q_desired`` only matters through ``state.command``; the deviation
    dynamics are independent of the reference.  Raises
    ``UnstableIntegrationError`` rather than integrating with a step beyond
    ``2 / omega``.
    """
    if not 0.0 < dt <= DT_MAX:
        raise ValidationError(f"dt must lie in (0, {DT_MAX}], got {dt}")
    tau = _arr(tau_ext)
    if not np.all(np.isfinite(tau)):
        raise ValidationError("external torque must be finite")
    if np.any(dt > params.stability_limit()):
        raise UnstableIntegrationError(
            f"dt={dt} exceeds the explicit-Euler limit 2/omega={np.min(params.stability_limit()):.4g}s"
        )
    acc = (tau - params.tau_offset - _arr(params.damping) * state.dq_dot - _arr(params.stiffness) * state.dq) / _arr(
        params.inertia
    )
    new_vel = state.dq_dot + acc * dt
    new_pos = state.dq + state.dq_dot * dt
    if not (np.all(np.isfinite(new_pos)) and np.all(np.isfinite(new_vel))):
        raise UnstableIntegrationError("admittance state diverged to non-finite values")
    return LoopState(new_pos, new_vel, acc, state.t + dt)


@dataclass(frozen=True)
class PidParams:
    kp: float
    ki: float
    kd: float
    integral_limit: float

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValidationError("PID gains must be non-negative")
        if not self.integral_limit > 0:
            raise ValidationError("integral_limit must be positive")


@dataclass(frozen=True)
class PidState:
    integral: float | np.ndarray = 0.0  # integral of error, rad s
    prev_error: float | np.ndarray | None = None


def pid_step(params: PidParams, state: PidState, q, q_desired, dt: float):
    """One PID update; returns ``(torque_command, new_state)``.

    The integral contribution ``ki * integral`` is clamped to
    ``+-integral_limit`` (anti-windup).  The derivative acts on the error and
    is zero on the first call.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    e = _arr(q_desired) - _arr(q)
    integral = _arr(state.integral) + e * dt
    if params.ki > 0:
        cap = params.integral_limit / params.ki
        integral = np.clip(integral, -cap, cap)
    deriv = 0.0 if state.prev_error is None else (e - state.prev_error) / dt
    u = params.kp * e + params.ki * integral + params.kd * deriv
    return u, PidState(integral, e)


@dataclass(frozen=True)
class ContactStopPolicy:
    torque_threshold: float = 0.05
    hysteresis: float = 0.1

    def __post_init__(self):
        if not self.torque_threshold > 0:
            raise ValidationError("torque_threshold must be positive")
        if not 0 <= self.hysteresis < 1:
            raise ValidationError("hysteresis must be in [0, 1)")


class ContactLatch:
    """Freezes the reference while the estimated torque exceeds the threshold.

    Latches when ``|tau| > threshold`` and releases once
    ``|tau| < threshold * (1 - hysteresis)``.  While latched, further
    increases of the reference (closing) are ignored but a reference that
    retreats below the held value passes through, so the finger can still
    open.  Works elementwise on arrays.
    """

    def __init__(self, policy: ContactStopPolicy, shape=()):
        self.policy = policy
        self.latched = np.zeros(shape, dtype=bool)
        self.held = np.zeros(shape)
        self.transitions = np.zeros(shape, dtype=int)

    def __call__(self, tau_est, reference):
        tau = np.abs(_arr(tau_est))
        ref = _arr(reference)
        p = self.policy
        engage = ~self.latched & (tau > p.torque_threshold)
        release = self.latched & (tau < p.torque_threshold * (1.0 - p.hysteresis))
        self.held = np.where(engage, ref, self.held)
        self.latched = (self.latched | engage) & ~release
        self.transitions = self.transitions + engage + release
        out = np.where(self.latched, np.minimum(self.held, ref), ref)
        return out if out.ndim else float(out)


def contact_stop(policy: ContactStopPolicy, latch: ContactLatch | None, tau_est, reference):
    """Functional wrapper: returns ``(reference_out, latch)``."""
    if latch is None:
        latch = ContactLatch(policy, np.shape(reference))
    return latch(tau_est, reference), latch
