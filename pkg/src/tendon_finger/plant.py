"""Single-joint tendon-driven finger plant.

Rotational dynamics of one joint driven by the muscle-law tendon force
acting through the cable moment arm, loaded by an optional hanging weight
and an optional compliant contact object:

    J_eff q'' = F(I, ...) AD(q) - m g a cos(q) - b(T) q' - Fc tanh(q'/eps) - tau_contact

``J_eff`` includes the hanging mass as a point mass ``m a^2``.  Integration
is semi-implicit Euler; the friction terms are solved implicitly in the new
velocity (a bracketed Newton iteration) so the sharp Coulomb smoothing does
not limit the step size.  Every state field may be an array, in which case
one call advances a batch of independent fingers.

Positive external torque resists flexion.  The motor is slaved to the
commanded cable take-up through the capstan and gearbox.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import SimulationDivergedError, ValidationError
from .geometry import CableMap, TendonRouting
from .muscle import MuscleParams, current_for_force, force_from_errors

OBJECT_LABELS = ("wood", "fruit", "bottle", "cup", "tissue", "plush")
CONTACT_BLEND = 1e-5  # m, penetration over which contact damping fades in
NEWTON_ITERS = 8


@dataclass(frozen=True)
class PlantParams:
    inertia: float = 1.0e-3  # kg m^2, link plus reflected motor inertia
    viscous_friction: float = 0.01  # N m s / rad at 20 C
    coulomb_friction: float = 0.003  # N m
    weight_mass: float = 0.0  # kg
    weight_arm: float = 0.05  # m
    gravity: float = 9.81
    motor_gear_ratio: float = 100.0
    capstan_radius: float = 0.005  # m
    contact_lever: float = 0.09  # m, joint axis to fingertip contact point
    joint_min: float = 0.0
    joint_max: float = 1.5
    temp_coeff: float = -0.005  # 1 / C
    coulomb_eps: float = 1e-3  # rad / s
    cable_rest_len: float = 0.2  # m, free cable length at joint_min
    max_current: float = 5.0  # A
    max_tension: float = 150.0  # N

    def __post_init__(self):
        if not self.inertia > 0:
            raise ValidationError("plant inertia must be positive")
        if self.viscous_friction < 0 or self.coulomb_friction < 0:
            raise ValidationError("friction coefficients must be non-negative")
        if self.weight_mass < 0:
            raise ValidationError("weight_mass must be non-negative")
        if not self.joint_min < self.joint_max:
            raise ValidationError("joint_min must be below joint_max")
        for name in ("motor_gear_ratio", "capstan_radius", "coulomb_eps", "cable_rest_len",
                     "max_current", "max_tension"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"plant {name} must be positive")
        if self.contact_lever < 0 or self.weight_arm < 0:
            raise ValidationError("lever arms must be non-negative")

    @property
    def effective_inertia(self) -> float:
        return self.inertia + self.weight_mass * self.weight_arm**2


@dataclass(frozen=True)
class ContactObject:
    stiffness: float  # N/m at the fingertip
    engage_angle: float | np.ndarray  # rad
    damping: float = 0.0  # N s / m
    label: str = "wood"

    def __post_init__(self):
        if not np.all(np.asarray(self.stiffness) > 0):
            raise ValidationError("contact stiffness must be positive")
        if np.any(np.asarray(self.damping) < 0):
            raise ValidationError("contact damping must be non-negative")
        if self.label not in OBJECT_LABELS:
            raise ValidationError(f"unknown object label {self.label!r}; expected one of {OBJECT_LABELS}")


@dataclass(frozen=True)
class PlantState:
    joint_angle: float | np.ndarray
    joint_vel: float | np.ndarray = 0.0
    motor_angle: float | np.ndarray = 0.0
    motor_vel: float | np.ndarray = 0.0
    temperature: float | np.ndarray = 20.0


@dataclass(frozen=True)
class ActuatorCommand:
    """What the motor driver holds between control ticks."""

    current: float | np.ndarray = 0.0  # A
    takeup: float | np.ndarray = 0.0  # desired cable take-up, m
    takeup_rate: float | np.ndarray = 0.0  # m/s


def default_objects(engage_angle: float = 0.7) -> list[ContactObject]:
    """The six grasp objects, hard to soft, stiffness log-spaced 5e4 -> 50 N/m
    (rounded to four significant digits).

    Damping gives roughly 0.6 critical damping against the fingertip's
    reflected mass.
    """
    stiff = [float(f"{k:.4g}") for k in np.logspace(np.log10(5e4), np.log10(50.0), len(OBJECT_LABELS))]
    return [
        ContactObject(k, engage_angle, float(f"{1.2 * np.sqrt(k * 0.12):.4g}"), label)
        for k, label in zip(stiff, OBJECT_LABELS)
    ]


def contact_torque(params: PlantParams, contact: ContactObject | None, q, qd):
    """Torque from the object on the joint; zero before ``engage_angle``.

    Fingertip penetration ``d = lever * (q - q_e)``; normal force
    ``k d + c d' tanh(d / 10um)`` clamped non-negative, so the damping fades
    in continuously from the moment of engagement.
    """
    if contact is None:
        return np.zeros(np.broadcast(np.asarray(q), np.asarray(qd)).shape)
    lever = params.contact_lever
    depth = np.maximum(lever * (np.asarray(q) - contact.engage_angle), 0.0)
    rate = lever * np.asarray(qd)
    force = contact.stiffness * depth + contact.damping * rate * np.tanh(depth / CONTACT_BLEND)
    return np.maximum(force, 0.0) * lever


def contact_force(params: PlantParams, contact: ContactObject | None, q, qd):
    if params.contact_lever == 0:
        return np.zeros(np.shape(q))
    return contact_torque(params, contact, q, qd) / params.contact_lever


def weight_torque(params: PlantParams, q, mass=None):
    mass = params.weight_mass if mass is None else mass
    return mass * params.gravity * params.weight_arm * np.cos(q)


def ground_truth_torque(params: PlantParams, state: PlantState, contact: ContactObject | None = None,
                        load_mass=None):
    """External joint torque (hanging weight plus contact): the estimation label."""
    q = np.asarray(state.joint_angle, dtype=float)
    return weight_torque(params, q, load_mass) + contact_torque(params, contact, q, state.joint_vel)


def viscous_coeff(params: PlantParams, temperature):
    return params.viscous_friction * (1.0 + params.temp_coeff * (np.asarray(temperature) - 20.0))


class Finger:
    """Plant parameters bound to a routing and muscle, with cached cable map."""

    def __init__(self, params: PlantParams, routing: TendonRouting, muscle: MuscleParams):
        self.params = params
        self.routing = routing
        self.muscle = muscle
        self.cable = CableMap(routing, params.joint_min, params.joint_max)
        self.motor_per_takeup = params.motor_gear_ratio / params.capstan_radius

    # -- kinematics of the cable ------------------------------------------
    def takeup(self, q):
        return self.cable.length(q)

    def arm(self, q):
        return self.cable.arm(q)

    def muscle_errors(self, state: PlantState, cmd: ActuatorCommand, t_in_hold: float = 0.0):
        """Length, velocity and spring-stretch errors seen by the muscle law.

        The series spring is stretched by the length tracking error.
        """
        q = np.asarray(state.joint_angle)
        takeup_des = np.asarray(cmd.takeup) + np.asarray(cmd.takeup_rate) * t_in_hold
        dl = takeup_des - self.takeup(q)
        dv = np.asarray(cmd.takeup_rate) - self.arm(q) * np.asarray(state.joint_vel)
        return dl, dv, dl

    def tendon_force(self, state: PlantState, cmd: ActuatorCommand, t_in_hold: float = 0.0):
        dl, dv, stretch = self.muscle_errors(state, cmd, t_in_hold)
        return force_from_errors(self.muscle, cmd.current, dl, dv, stretch)

    def tendon_torque(self, state, cmd, t_in_hold=0.0):
        return self.tendon_force(state, cmd, t_in_hold) * self.arm(state.joint_angle)

    def current_for_torque(self, state: PlantState, cmd_takeup, cmd_rate, torque):
        """Driver: current that makes the tendon deliver ``torque`` right now."""
        p = self.params
        arm = np.maximum(self.arm(state.joint_angle), 1e-6)
        force = np.clip(np.asarray(torque) / arm, 0.0, p.max_tension)
        probe = ActuatorCommand(0.0, cmd_takeup, cmd_rate)
        dl, dv, stretch = self.muscle_errors(state, probe)
        current = current_for_force(self.muscle, force, dl, dv, stretch)
        return np.clip(current, -p.max_current, p.max_current)

    # -- dynamics -----------------------------------------------------------
    def step(self, state: PlantState, cmd: ActuatorCommand, contact=None, dt=1e-3, t_in_hold=0.0,
             load_mass=None, step_index=None, check=True, with_torque=False):
        """Advance one plant step.

        ``load_mass`` overrides the hanging mass (may be per-trial).  With
        ``with_torque`` the tendon torque applied during the step is returned
        alongside the new state.
        """
        p = self.params
        mass = p.weight_mass if load_mass is None else np.asarray(load_mass, dtype=float)
        q = np.asarray(state.joint_angle, dtype=float)
        v0 = np.asarray(state.joint_vel, dtype=float)
        J = p.inertia + mass * p.weight_arm**2
        tau_tendon = self.tendon_torque(state, cmd, t_in_hold)
        tau_drive = tau_tendon - weight_torque(p, q, mass) - contact_torque(p, contact, q, v0)
        b = viscous_coeff(p, state.temperature)
        v = _implicit_velocity(v0, tau_drive, J, b, p.coulomb_friction, p.coulomb_eps, dt)
        q_new = q + dt * v
        low, high = q_new < p.joint_min, q_new > p.joint_max
        q_new = np.clip(q_new, p.joint_min, p.joint_max)
        v = np.where(low, np.maximum(v, 0.0), np.where(high, np.minimum(v, 0.0), v))
        if check and not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(v))):
            raise SimulationDivergedError(f"plant state became non-finite at step {step_index}", step=step_index)
        takeup_des = np.asarray(cmd.takeup) + np.asarray(cmd.takeup_rate) * (t_in_hold + dt)
        new = PlantState(
            joint_angle=q_new,
            joint_vel=v,
            motor_angle=takeup_des * self.motor_per_takeup,
            motor_vel=np.asarray(cmd.takeup_rate) * self.motor_per_takeup,
            temperature=state.temperature,
        )
        return (new, tau_tendon) if with_torque else new

    def energy(self, state: PlantState):
        """Kinetic plus gravitational energy, zero potential at the horizontal."""
        p = self.params
        q = np.asarray(state.joint_angle)
        return 0.5 * p.effective_inertia * np.asarray(state.joint_vel) ** 2 + (
            p.weight_mass * p.gravity * p.weight_arm * np.sin(q)
        )


def _implicit_velocity(v0, tau, J, b, fc, eps, dt):
    """Solve ``v = v0 + dt/J (tau - b v - fc tanh(v/eps))`` for ``v``."""
    h = dt / J
    base = v0 + h * tau
    if fc == 0.0:
        return base / (1.0 + h * b)
    # friction is bounded by fc, which brackets the root
    lo = (base - h * fc) / (1.0 + h * b)
    hi = (base + h * fc) / (1.0 + h * b)
    v = np.clip(v0, lo, hi)
    for _ in range(NEWTON_ITERS):
        th = np.tanh(v / eps)
        g = v - base + h * (b * v + fc * th)
        dg = 1.0 + h * (b + fc / eps * (1.0 - th * th))
        above = g > 0
        hi = np.where(above, v, hi)
        lo = np.where(above, lo, v)
        v = v - g / dg
        v = np.where((v < lo) | (v > hi), 0.5 * (lo + hi), v)
    return v


def plant_step(params: PlantParams, state: PlantState, routing: TendonRouting, muscle: MuscleParams,
               command: ActuatorCommand, contact: ContactObject | None = None, dt: float = 1e-3,
               step_index=None) -> PlantState:
    """One semi-implicit Euler step of the finger (convenience wrapper around :class:`Finger`)."""
    if not 0.0 < dt <= 0.01:
        raise ValidationError(f"plant dt must lie in (0, 0.01], got {dt}")
    return _finger(params, routing, muscle).step(state, command, contact, dt, step_index=step_index)


@lru_cache(maxsize=16)
def _finger(params, routing, muscle) -> Finger:
    return Finger(params, routing, muscle)
