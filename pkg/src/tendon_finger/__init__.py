"""Simulation, torque estimation and admittance control for a tendon-driven finger."""

from .errors import (
    ConfigError,
    DataError,
    DegenerateGeometryError,
    FingerError,
    IllConditionedGramError,
    InfeasibleGeometryError,
    MuscleSaturationError,
    NumericalError,
    SimulationDivergedError,
    UndefinedMetricError,
    UnstableIntegrationError,
    ValidationError,
)
from .geometry import CableMap, JointAngle, MomentArmResult, TendonRouting, chord_length, external_torque, moment_arm
from .muscle import MuscleParams, MuscleState, passive_force, tendon_force
from .plant import ContactObject, Finger, PlantParams, PlantState, default_objects, ground_truth_torque, plant_step

__version__ = "0.1.0"
