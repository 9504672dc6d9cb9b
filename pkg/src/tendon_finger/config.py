"""Run configuration: one YAML document drives every command.

Every section maps onto a dataclass.  Loading is strict: unknown keys and
missing keys both raise :class:`ConfigError` naming the dotted key path, and
values are type-checked before any simulation starts.  ``overrides`` are
``key.path=value`` strings (values parsed as YAML) applied before validation.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass
from importlib import resources

import yaml

from .control import AdmittanceParams, ContactStopPolicy, PidParams
from .datagen import CalibrationProtocol
from .episode import ControllerConfig, NoiseModel
from .errors import ConfigError, FingerError
from .geometry import TendonRouting
from .gpr import FitOptions
from .harness import ComparisonSetup
from .joints import JOINT_LABELS, JointSpec, joint_catalog
from .muscle import MuscleParams
from .plant import ContactObject, Finger, PlantParams

CONFIG_FORMAT_VERSION = 1
DEFAULT_CONFIG = "default_config.yaml"


@dataclass(frozen=True)
class GraspCollection:
    trials: int = 30
    trial_duration: float = 5.0
    temperatures: tuple = (20.0, 30.0, 40.0, 50.0)


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    fit: int = 0
    split: int = 0
    comparison: int = 0


@dataclass(frozen=True)
class RunConfig:
    joint: str
    routing: TendonRouting
    muscle: MuscleParams
    plant: PlantParams
    objects: tuple
    controllers: ControllerConfig
    protocol: CalibrationProtocol
    grasp: GraspCollection
    comparison: ComparisonSetup
    gpr: FitOptions
    noise: NoiseModel
    joints: tuple
    seeds: Seeds
    output_dir: str
    test_fraction: float = 0.2
    max_test: int = 5000

    def finger(self) -> Finger:
        return Finger(self.plant, self.routing, self.muscle)

    def joint_spec(self) -> JointSpec:
        return JointSpec(self.joint, self.routing, self.plant, self.muscle)

    def catalog(self) -> list[JointSpec]:
        return joint_catalog(self.joints, self.plant, self.muscle)


# fields of each section that the file may set; everything else keeps its default
_FIT_KEYS = ("restarts", "max_iter", "tol", "max_rows", "search_rows", "ard")
_CONTROLLER_SCALARS = ("control_dt", "plant_dt")
_OBJECT_KEYS = ("label", "stiffness", "damping", "engage_angle")
_TOP_KEYS = (
    "format_version", "joint", "routing", "muscle", "plant", "objects", "controllers", "protocol",
    "grasp", "comparison", "gpr", "noise", "joints", "seeds", "output_dir", "test_fraction", "max_test",
)


def default_document() -> dict:
    text = resources.files("tendon_finger").joinpath(DEFAULT_CONFIG).read_text(encoding="utf-8")
    return yaml.safe_load(text)


def load_document(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        raise ConfigError(f"not valid YAML: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    return doc


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = doc
        for i, key in enumerate(keys[:-1]):
            if not isinstance(node, dict) or key not in node:
                raise ConfigError("no such section", ".".join(keys[: i + 1]))
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError("no such key", path.strip())
        node[keys[-1]] = yaml.safe_load(raw)
    return doc


def load_config(path=None, overrides=()) -> RunConfig:
    """Load and validate a run configuration (the packaged default if ``path`` is None)."""
    doc = default_document() if path is None else load_document(path)
    return build_config(apply_overrides(doc, overrides))


def _keys(doc, path, expected):
    if not isinstance(doc, dict):
        raise ConfigError("expected a mapping", path)
    for key in doc:
        if key not in expected:
            raise ConfigError(f"unknown key (expected one of {', '.join(expected)})", _join(path, key))
    for key in expected:
        if key not in doc:
            raise ConfigError("missing required key", _join(path, key))


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _value(v, kind, path):
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"expected true/false, got {v!r}", path)
        return v
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}", path)
    if kind is int:
        if not isinstance(v, int):
            raise ConfigError(f"expected an integer, got {v!r}", path)
        return v
    if kind is float:
        if not isinstance(v, (int, float)):
            raise ConfigError(f"expected a number, got {v!r}", path)
        return float(v)
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError(f"expected a string, got {v!r}", path)
        return v
    if kind is tuple:
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(f"expected a list of numbers, got {v!r}", path)
        return tuple(float(x) for x in v)
    raise TypeError(kind)


def _kind(cls, name):
    default = {f.name: f for f in dataclasses.fields(cls)}[name].default
    if default is None:
        return int  # optional integer caps such as max_rows
    return type(default) if default is not dataclasses.MISSING else float


def _section(cls, doc, path, keys=None, nullable=(), **fixed):
    keys = keys or tuple(f.name for f in dataclasses.fields(cls) if f.name not in fixed)
    _keys(doc, path, keys)
    kwargs = {}
    for k in keys:
        p = _join(path, k)
        kwargs[k] = None if (k in nullable and doc[k] is None) else _value(doc[k], _kind(cls, k), p)
    try:
        return cls(**kwargs, **fixed)
    except FingerError as err:
        raise ConfigError(str(err), path) from None


def build_config(doc: dict) -> RunConfig:
    _keys(doc, "", _TOP_KEYS)
    if doc["format_version"] != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {doc['format_version']!r}", "format_version")

    joint = _value(doc["joint"], str, "joint")
    if joint not in JOINT_LABELS:
        raise ConfigError(f"unknown joint {joint!r}", "joint")
    joints = doc["joints"]
    if not isinstance(joints, list) or not joints or any(j not in JOINT_LABELS for j in joints):
        raise ConfigError(f"expected a non-empty list drawn from {JOINT_LABELS}", "joints")

    routing = _section(TendonRouting, doc["routing"], "routing",
                       ("pulley_offset_len", "anchor_offset_len", "anchor_angle", "pulley_angle", "pulley_radius"))
    muscle = _section(MuscleParams, doc["muscle"], "muscle")
    plant = _section(PlantParams, doc["plant"], "plant")

    objs = doc["objects"]
    if not isinstance(objs, list) or not objs:
        raise ConfigError("expected a non-empty list of objects", "objects")
    objects = []
    for i, o in enumerate(objs):
        path = f"objects[{i}]"
        _keys(o, path, _OBJECT_KEYS)
        try:
            objects.append(ContactObject(
                _value(o["stiffness"], float, f"{path}.stiffness"),
                _value(o["engage_angle"], float, f"{path}.engage_angle"),
                _value(o["damping"], float, f"{path}.damping"),
                _value(o["label"], str, f"{path}.label"),
            ))
        except FingerError as err:
            raise ConfigError(str(err), path) from None

    c = doc["controllers"]
    _keys(c, "controllers", ("pid", "admittance", "contact_stop") + _CONTROLLER_SCALARS)
    pid = _section(PidParams, c["pid"], "controllers.pid", ("kp", "ki", "kd", "integral_limit"))
    adm = _section(AdmittanceParams, c["admittance"], "controllers.admittance",
                   ("inertia", "damping", "stiffness", "tau_offset"))
    stop = _section(ContactStopPolicy, c["contact_stop"], "controllers.contact_stop")
    try:
        controllers = ControllerConfig(pid, adm, stop, _value(c["control_dt"], float, "controllers.control_dt"),
                                       _value(c["plant_dt"], float, "controllers.plant_dt"))
    except FingerError as err:
        raise ConfigError(str(err), "controllers") from None

    seeds = _section(Seeds, doc["seeds"], "seeds")
    protocol = _section(CalibrationProtocol, doc["protocol"], "protocol", seed=seeds.data)
    grasp = _section(GraspCollection, doc["grasp"], "grasp")
    comparison = _section(ComparisonSetup, doc["comparison"], "comparison", seed=seeds.comparison)
    gpr = _section(FitOptions, doc["gpr"], "gpr", _FIT_KEYS, nullable=("max_rows",), seed=seeds.fit)
    noise = _section(NoiseModel, doc["noise"], "noise")

    test_fraction = _value(doc["test_fraction"], float, "test_fraction")
    if not 0 < test_fraction < 1:
        raise ConfigError("must lie in (0, 1)", "test_fraction")
    max_test = _value(doc["max_test"], int, "max_test")
    if max_test < 1:
        raise ConfigError("must be positive", "max_test")

    return RunConfig(
        joint, routing, muscle, plant, tuple(objects), controllers, protocol, grasp, comparison, gpr, noise,
        tuple(joints), seeds, _value(doc["output_dir"], str, "output_dir"), test_fraction, max_test,
    )
