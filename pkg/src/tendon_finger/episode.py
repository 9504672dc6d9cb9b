"""Closed-loop episodes: sensors, controller and plant at two rates.

The controller runs at ``control_dt`` (100 Hz by default) and holds its
actuator command (zero-order hold) across ``control_dt / plant_dt`` plant
substeps.  Everything is vectorized over a batch of independent trials;
a batch shares the plant parameters and the contact stiffness but may
differ in reference, load, temperature and engage angle.

Two controller arms are available:

``"pid"``
    PID tracks the reference directly.
``"admittance"``
    Estimated external torque drives the contact-stop latch and the
    admittance law; the PID then tracks ``latched reference + deviation``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .control import (
    AdmittanceParams,
    ContactLatch,
    ContactStopPolicy,
    LoopState,
    PidParams,
    PidState,
    admittance_step,
    pid_step,
)
from .errors import ValidationError
from .plant import ActuatorCommand, ContactObject, Finger, PlantState, contact_torque, weight_torque

VEL_WINDOW = 10  # samples in the velocity finite-difference the noise model assumes


@dataclass(frozen=True)
class NoiseModel:
    current_noise_std: float = 0.05  # A, 1 % of a 5 A full scale
    encoder_noise_std: float = 0.0017  # rad, 0.1 deg encoder resolution
    torque_label_noise_std: float = 0.001  # Nm

    def __post_init__(self):
        if min(self.current_noise_std, self.encoder_noise_std, self.torque_label_noise_std) < 0:
            raise ValidationError("noise standard deviations must be non-negative")

    def velocity_noise_std(self, sample_rate: float) -> float:
        """Noise on a velocity differenced from two encoder readings ``VEL_WINDOW`` samples apart."""
        return self.encoder_noise_std * np.sqrt(2.0) * sample_rate / VEL_WINDOW


@dataclass(frozen=True)
class ControllerConfig:
    pid: PidParams = field(default_factory=lambda: PidParams(kp=2.0, ki=10.0, kd=0.04, integral_limit=0.6))
    admittance: AdmittanceParams = field(
        default_factory=lambda: AdmittanceParams(inertia=0.005, damping=0.14, stiffness=1.0)
    )
    contact_stop: ContactStopPolicy = field(default_factory=ContactStopPolicy)
    control_dt: float = 0.01
    plant_dt: float = 0.001

    def __post_init__(self):
        ratio = self.control_dt / self.plant_dt
        if not (self.plant_dt > 0 and self.control_dt > 0 and abs(ratio - round(ratio)) < 1e-9):
            raise ValidationError("control_dt must be a positive integer multiple of plant_dt")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.plant_dt))


@dataclass
class EpisodeLog:
    """Per-tick records, arrays shaped ``(ticks, batch)``."""

    t: np.ndarray
    features: np.ndarray  # (ticks, batch, 6), as measured
    tau_applied: np.ndarray  # tendon torque averaged over the hold interval
    tau_est: np.ndarray
    tau_truth: np.ndarray  # weight + contact at the tick
    tau_contact: np.ndarray
    q: np.ndarray
    q_d: np.ndarray  # position target handed to the PID
    q_dot: np.ndarray
    flagged: np.ndarray  # (batch,) trials whose state went non-finite


def smoothstep_ramp(t, start, stop, t0, duration):
    """Quintic ramp from ``start`` to ``stop`` over ``[t0, t0 + duration]``."""
    s = np.clip((np.asarray(t)[:, None] - t0) / duration, 0.0, 1.0)
    shape = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    return start + (stop - start) * shape


def triangle_wave(t, lo, hi, speed):
    """Constant-speed sweep lo -> hi -> lo ..., starting at ``lo``."""
    span = hi - lo
    phase = np.mod(np.asarray(t) * speed, 2.0 * span)
    return lo + np.where(phase <= span, phase, 2.0 * span - phase)


def run_episode(
    finger: Finger,
    reference: np.ndarray,
    *,
    kind: str = "pid",
    controllers: ControllerConfig | None = None,
    contact: ContactObject | None = None,
    temperature=20.0,
    load_mass=None,
    noise: NoiseModel | None = None,
    rng: np.random.Generator | None = None,
    estimator=None,
    q0=None,
) -> EpisodeLog:
    """Simulate a batch of trials following ``reference`` (shape ``(ticks, batch)``).

    ``load_mass`` (per trial) overrides the plant's hanging mass.
    ``rng`` is a Generator or one Generator per trial; per-trial streams
    make each trial's sensor noise independent of how trials are batched.
    ``estimator`` maps measured features ``(batch, 6)`` to external-torque
    estimates; it is required for the admittance arm and optional otherwise.
    """
    ctl = controllers or ControllerConfig()
    if kind not in ("pid", "admittance"):
        raise ValidationError(f"unknown controller kind {kind!r}")
    if kind == "admittance" and estimator is None:
        raise ValidationError("the admittance arm needs a torque estimator")
    reference = np.asarray(reference, dtype=float)
    ticks, batch = reference.shape
    noise = noise or NoiseModel(0.0, 0.0, 0.0)

    params = finger.params
    mass = np.broadcast_to(np.asarray(params.weight_mass if load_mass is None else load_mass, float), (batch,))
    temp = np.broadcast_to(np.asarray(temperature, dtype=float), (batch,)).copy()

    q = reference[0].copy() if q0 is None else np.broadcast_to(np.asarray(q0, float), (batch,)).copy()
    v = np.zeros(batch)

    # start holding the load: integral pre-charged with the static torque
    hold = weight_torque(params, q, mass)
    pid_state = PidState(integral=hold / ctl.pid.ki if ctl.pid.ki > 0 else np.zeros(batch))
    takeup = finger.takeup(q)
    state = PlantState(q, v, takeup * finger.motor_per_takeup, np.zeros(batch), temp)
    current = finger.current_for_torque(state, takeup, 0.0, hold)
    cmd = ActuatorCommand(current, takeup, np.zeros(batch))

    adm_state = LoopState(np.zeros(batch), np.zeros(batch), np.zeros(batch))
    latch = ContactLatch(ctl.contact_stop, (batch,))
    prev_target = q.copy()

    sample_rate = 1.0 / ctl.control_dt
    vel_sd = noise.velocity_noise_std(sample_rate)
    draws = _sensor_draws(rng, ticks, batch)

    out = {k: np.empty((ticks, batch)) for k in ("tau_applied", "tau_est", "tau_truth", "tau_contact", "q", "q_d", "q_dot")}
    feats = np.empty((ticks, batch, 6))
    flagged = np.zeros(batch, dtype=bool)
    n_sub = ctl.substeps

    for k in range(ticks):
        z = draws[k]
        meas_q = q + noise.encoder_noise_std * z[0]
        meas_v = v + vel_sd * z[1]
        f = np.stack(
            [
                cmd.current + noise.current_noise_std * z[2],
                state.motor_angle + noise.encoder_noise_std * z[3],
                state.motor_vel + vel_sd * z[4],
                meas_q,
                meas_v,
                temp,
            ],
            axis=1,
        )
        feats[k] = f
        tau_c = contact_torque(params, contact, q, v)
        out["tau_contact"][k] = tau_c
        out["tau_truth"][k] = weight_torque(params, q, mass) + tau_c
        out["q"][k] = q
        out["q_dot"][k] = v

        tau_est = estimator(f) if estimator is not None else np.full(batch, np.nan)
        out["tau_est"][k] = tau_est
        ref = reference[k]
        if kind == "admittance":
            ref = latch(tau_est, ref)
            adm_state = admittance_step(ctl.admittance, adm_state, ref, -tau_est, ctl.control_dt)
            target = adm_state.command(ref)
        else:
            target = ref
        out["q_d"][k] = target

        u, pid_state = pid_step(ctl.pid, pid_state, meas_q, target, ctl.control_dt)
        rate = (target - prev_target) / ctl.control_dt if k else np.zeros(batch)
        prev_target = target
        takeup_des = finger.takeup(target)
        takeup_rate = finger.arm(target) * rate
        sensed = PlantState(meas_q, meas_v, state.motor_angle, state.motor_vel, temp)
        current = finger.current_for_torque(sensed, takeup_des, takeup_rate, u)
        cmd = ActuatorCommand(current, takeup_des, takeup_rate)

        applied = np.zeros(batch)
        for j in range(n_sub):
            state, tau_t = finger.step(state, cmd, contact, ctl.plant_dt, t_in_hold=j * ctl.plant_dt,
                                       load_mass=mass, check=False, with_torque=True)
            applied += tau_t
        q, v = state.joint_angle, state.joint_vel
        out["tau_applied"][k] = applied / n_sub
        bad = ~(np.isfinite(q) & np.isfinite(v))
        if np.any(bad):
            flagged |= bad
            q = np.where(bad, params.joint_min, q)
            v = np.where(bad, 0.0, v)
            state = replace(state, joint_angle=q, joint_vel=v)

    t = np.arange(ticks) * ctl.control_dt
    return EpisodeLog(t, feats, flagged=flagged, **out)


def _sensor_draws(rng, ticks, batch):
    if rng is None:
        rng = np.random.default_rng(0)
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((ticks, 5, batch))
    if len(rng) != batch:
        raise ValidationError(f"got {len(rng)} generators for a batch of {batch}")
    return np.stack([g.standard_normal((ticks, 5)) for g in rng], axis=2)


__all__ = [
    "ControllerConfig",
    "EpisodeLog",
    "NoiseModel",
    "run_episode",
    "smoothstep_ramp",
    "triangle_wave",
    "weight_torque",
]
