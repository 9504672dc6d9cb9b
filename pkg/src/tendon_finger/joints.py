"""Catalog of the six actuated joints of the simulated hand.

Labels follow the finger/joint naming of the hardware: ``IF`` index finger,
``TF`` thumb; ``PIP``, ``MP`` and ``CM`` joints with a suffix for the
flexion (``P``) or rotation (``R``) axis.  The joints differ in routing,
link inertia and friction so each gets its own torque model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .geometry import TendonRouting
from .muscle import MuscleParams
from .plant import Finger, PlantParams

JOINT_LABELS = ("IF-PIP", "IF-MPR", "TF-MPP", "TF-MPR", "TF-CMR", "TF-CMP")


@dataclass(frozen=True)
class JointSpec:
    label: str
    routing: TendonRouting
    plant: PlantParams
    muscle: MuscleParams

    def finger(self) -> Finger:
        return Finger(self.plant, self.routing, self.muscle)


def default_muscle() -> MuscleParams:
    return MuscleParams(kp=200.0, kd1=0.5, kd2=5.0, ks=2000.0, preload_len=0.01, current_gain=40.0)


def default_routing() -> TendonRouting:
    return TendonRouting(0.014, 0.009, 0.6, 0.9, 0.003)


# (pulley_offset, anchor_offset, anchor_angle, pulley_angle, radius), inertia, viscous, coulomb
_VARIANTS = {
    "IF-PIP": ((0.014, 0.009, 0.6, 0.9, 0.003), 1.0e-3, 0.010, 0.003),
    "IF-MPR": ((0.013, 0.008, 0.5, 0.8, 0.0025), 1.2e-3, 0.012, 0.004),
    "TF-MPP": ((0.015, 0.010, 0.6, 1.0, 0.003), 1.1e-3, 0.009, 0.003),
    "TF-MPR": ((0.012, 0.0075, 0.4, 0.7, 0.0025), 0.9e-3, 0.011, 0.0035),
    "TF-CMR": ((0.016, 0.010, 0.7, 1.0, 0.0035), 1.4e-3, 0.014, 0.005),
    "TF-CMP": ((0.015, 0.0095, 0.5, 0.9, 0.003), 1.3e-3, 0.013, 0.0045),
}


def joint_spec(label: str, plant: PlantParams | None = None, muscle: MuscleParams | None = None) -> JointSpec:
    """The catalog entry for ``label``; ``plant`` fields other than the
    per-joint inertia and friction are taken from ``plant`` if given."""
    if label not in _VARIANTS:
        raise KeyError(f"unknown joint {label!r}; expected one of {JOINT_LABELS}")
    geo, inertia, viscous, coulomb = _VARIANTS[label]
    base = plant or PlantParams()
    return JointSpec(
        label,
        TendonRouting(*geo),
        replace(base, inertia=inertia, viscous_friction=viscous, coulomb_friction=coulomb),
        muscle or default_muscle(),
    )


def joint_catalog(labels=JOINT_LABELS, plant: PlantParams | None = None,
                  muscle: MuscleParams | None = None) -> list[JointSpec]:
    return [joint_spec(lab, plant, muscle) for lab in labels]
