"""Cable moment arm of a tendon wrapped over a guide pulley.

Planar layout used throughout: the joint axis A sits at the origin, the
pulley centre B is fixed on the proximal link at distance
``pulley_offset_len`` and the cable anchor C rides on the distal link at
distance ``anchor_offset_len``.  The included angle is

    BAC = joint - anchor_angle + pulley_angle

The cable leaves the pulley circle (radius ``pulley_radius``) at its tangent
point E and runs straight to C.  Of the two tangents from C, the cable uses
the one on the far side of line CB from A, so that the angle between CA and
the cable is ACB + BCE.  The moment arm is the perpendicular distance from
A to the line CE.

Three evaluation routes are provided:

``"vector"`` (default)
    Explicit 2-D construction of the points and the tangent line.
``"triangle"``
    Law-of-cosines chain on the triangles ABC and BCE.
``"literal"``
    A sine-rule chain whose arcsine arguments are inverted with respect to
    the law of sines, so for realistic dimensions (BC > r) it raises
    ``InfeasibleGeometryError``.  Kept for documentation and cross-checking
    only.

All functions accept scalars or numpy arrays for the joint angle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InfeasibleGeometryError, ValidationError

DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class TendonRouting:
    pulley_offset_len: float
    anchor_offset_len: float
    anchor_angle: float
    pulley_angle: float
    pulley_radius: float

    def __post_init__(self):
        lengths = (self.pulley_offset_len, self.anchor_offset_len, self.pulley_radius)
        if not all(np.isfinite(v) and v > 0 for v in lengths):
            raise ValidationError(f"routing lengths must be positive, got {lengths}")
        if not (np.isfinite(self.anchor_angle) and np.isfinite(self.pulley_angle)):
            raise ValidationError("routing angles must be finite")
        if self.pulley_radius >= min(self.pulley_offset_len, self.anchor_offset_len):
            raise ValidationError("pulley_radius must be smaller than both offsets")


@dataclass(frozen=True)
class JointAngle:
    """Joint angle with its admissible range, in radians."""

    value: float
    lo: float = -np.pi
    hi: float = np.pi

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValidationError(f"joint limits must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if not self.lo <= self.value <= self.hi:
            raise ValidationError(f"joint angle {self.value} outside [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class MomentArmResult:
    chord_len: np.ndarray | float
    wrap_angle: np.ndarray | float
    cable_angle: np.ndarray | float
    moment_arm: np.ndarray | float
    inner_angle: np.ndarray | float  # angle BCA at the anchor


def _angle_value(angle):
    if isinstance(angle, JointAngle):
        return angle.value
    return angle


def _scalar_or_array(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _first_bad(mask) -> str:
    idx = np.flatnonzero(np.atleast_1d(mask))
    return "" if np.ndim(mask) == 0 else f" (first offending index {int(idx[0])})"


def included_angle(routing: TendonRouting, angle):
    """Angle BAC between the pulley and anchor rays at the joint axis."""
    q = np.asarray(_angle_value(angle), dtype=float)
    return q - routing.anchor_angle + routing.pulley_angle


def chord_length(routing: TendonRouting, angle):
    """Distance BC from pulley centre to anchor, by the law of cosines."""
    lp, la = routing.pulley_offset_len, routing.anchor_offset_len
    bac = included_angle(routing, angle)
    sq = lp * lp + la * la - 2.0 * lp * la * np.cos(bac)
    bc = np.sqrt(np.maximum(sq, 0.0))
    bad = bc < DEGENERATE_EPS
    if np.any(bad):
        raise DegenerateGeometryError("pulley centre and anchor coincide (BC ~ 0)" + _first_bad(bad))
    return _scalar_or_array(bc)


def _wrap_angle(bc, radius):
    bad = bc <= radius
    if np.any(bad):
        raise InfeasibleGeometryError(
            "anchor lies inside the pulley circle (BC <= r), no tangent exists" + _first_bad(bad),
            equation="wrap angle BCE = arcsin(r / BC)",
        )
    return np.arcsin(radius / bc)


def _points(routing: TendonRouting, angle):
    q = np.asarray(_angle_value(angle), dtype=float)
    phi_b = -routing.pulley_angle
    phi_c = q - routing.anchor_angle
    b = routing.pulley_offset_len * np.array([np.cos(phi_b), np.sin(phi_b)])
    c = routing.anchor_offset_len * np.stack([np.cos(phi_c), np.sin(phi_c)])
    b = np.broadcast_to(b.reshape((2,) + (1,) * q.ndim), c.shape)
    return b, c


def _cross(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _moment_arm_vector(routing, angle) -> MomentArmResult:
    b, c = _points(routing, angle)
    r = routing.pulley_radius
    cb = b - c
    ca = -c
    d = np.hypot(cb[0], cb[1])
    if np.any(d < DEGENERATE_EPS):
        raise DegenerateGeometryError("pulley centre and anchor coincide (BC ~ 0)" + _first_bad(d < DEGENERATE_EPS))
    wrap = _wrap_angle(d, r)

    # tangent direction from C: rotate unit(CB) by +/- wrap, keep the one
    # on the opposite side of CB from A
    u = cb / d
    side = np.sign(_cross(cb, ca))
    side = np.where(side == 0, 1.0, side)
    rot = -side * wrap
    cos_r, sin_r = np.cos(rot), np.sin(rot)
    t = np.stack([u[0] * cos_r - u[1] * sin_r, u[0] * sin_r + u[1] * cos_r])

    arm = np.abs(_cross(t, ca))
    inner = np.arctan2(np.abs(_cross(cb, ca)), cb[0] * ca[0] + cb[1] * ca[1])
    return MomentArmResult(
        chord_len=_scalar_or_array(d),
        wrap_angle=_scalar_or_array(wrap),
        cable_angle=_scalar_or_array(inner + wrap - routing.anchor_angle),
        moment_arm=_scalar_or_array(arm),
        inner_angle=_scalar_or_array(inner),
    )


def _moment_arm_triangle(routing, angle) -> MomentArmResult:
    lp, la = routing.pulley_offset_len, routing.anchor_offset_len
    bc = np.asarray(chord_length(routing, angle), dtype=float)
    wrap = _wrap_angle(bc, routing.pulley_radius)
    # angle at C from side lengths; avoids the obtuse-angle ambiguity of arcsin
    cos_c = (la * la + bc * bc - lp * lp) / (2.0 * la * bc)
    inner = np.arccos(np.clip(cos_c, -1.0, 1.0))
    arm = la * np.abs(np.sin(inner + wrap))
    return MomentArmResult(
        chord_len=_scalar_or_array(bc),
        wrap_angle=_scalar_or_array(wrap),
        cable_angle=_scalar_or_array(inner + wrap - routing.anchor_angle),
        moment_arm=_scalar_or_array(arm),
        inner_angle=_scalar_or_array(inner),
    )


def _checked_arcsin(arg, equation):
    arg = np.asarray(arg, dtype=float)
    bad = np.abs(arg) > 1.0
    if np.any(bad):
        raise InfeasibleGeometryError(
            f"arcsin argument outside [-1, 1] in {equation}" + _first_bad(bad), equation=equation
        )
    return np.arcsin(arg)


def _moment_arm_literal(routing, angle) -> MomentArmResult:
    lp, la, r = routing.pulley_offset_len, routing.anchor_offset_len, routing.pulley_radius
    bac = included_angle(routing, angle)
    bc = np.asarray(chord_length(routing, angle), dtype=float)
    inner = _checked_arcsin(bc * np.sin(bac) / lp, "inner angle BCA = arcsin(BC sin(BAC) / l_pulley)")
    wrap = _checked_arcsin(bc * np.sin(np.pi / 2) / r, "wrap angle BCE = arcsin(BC sin(pi/2) / r)")
    adc = inner + wrap - routing.anchor_angle
    s = np.sin(adc)
    if np.any(np.abs(s) < DEGENERATE_EPS):
        raise DegenerateGeometryError("sin(ADC) vanishes in the moment-arm relation" + _first_bad(np.abs(s) < DEGENERATE_EPS))
    arm = np.abs(np.sin(inner + wrap) * la / s)
    return MomentArmResult(
        chord_len=_scalar_or_array(bc),
        wrap_angle=_scalar_or_array(wrap),
        cable_angle=_scalar_or_array(adc),
        moment_arm=_scalar_or_array(arm),
        inner_angle=_scalar_or_array(inner),
    )


_METHODS = {
    "vector": _moment_arm_vector,
    "triangle": _moment_arm_triangle,
    "literal": _moment_arm_literal,
}


def moment_arm(routing: TendonRouting, angle, method: str = "vector") -> MomentArmResult:
    """Moment arm of the cable about the joint axis.

    Raises ``DegenerateGeometryError`` when B and C coincide and
    ``InfeasibleGeometryError`` (with ``.equation`` naming the failing
    relation) when no tangent from the anchor to the pulley exists.
    """
    try:
        fn = _METHODS[method]
    except KeyError:
        raise ValidationError(f"unknown moment-arm method {method!r}") from None
    return fn(routing, angle)


def external_torque(routing: TendonRouting, angle, cable_tension, method: str = "vector"):
    """Joint torque produced by a cable tension, ``tension * moment_arm``."""
    tension = np.asarray(cable_tension, dtype=float)
    if np.any(tension < 0):
        raise ValidationError("cable tension must be non-negative (cables only pull)")
    arm = moment_arm(routing, angle, method=method).moment_arm
    return _scalar_or_array(tension * arm)


class CableMap:
    """Cable take-up as a function of joint angle.

    The rate of change of the cable path length with joint angle equals the
    moment arm, so the take-up is the running integral of the moment arm
    from ``lo``.  Tabulated once and interpolated, which keeps the plant's
    inner loop cheap.
    """

    def __init__(self, routing: TendonRouting, lo: float, hi: float, n: int = 4001):
        self.routing = routing
        self.grid = np.linspace(lo, hi, n)
        arm = moment_arm(routing, self.grid).moment_arm
        self._arm = arm
        steps = 0.5 * (arm[1:] + arm[:-1]) * np.diff(self.grid)
        self._length = np.concatenate([[0.0], np.cumsum(steps)])

    def length(self, q):
        return np.interp(q, self.grid, self._length)

    def arm(self, q):
        return np.interp(q, self.grid, self._arm)

    def angle(self, length):
        """Inverse of :meth:`length`; valid where the moment arm is positive."""
        return np.interp(length, self._length, self.grid)
