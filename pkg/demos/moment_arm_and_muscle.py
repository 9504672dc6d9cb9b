"""Where the tendon pulls: moment arm, cable take-up and the muscle force law.

Run with ``python demos/moment_arm_and_muscle.py``.
"""

import math

import numpy as np

from tendon_finger.geometry import CableMap, TendonRouting, external_torque, moment_arm
from tendon_finger.joints import default_muscle
from tendon_finger.muscle import force_from_errors

# A routing: pulley offset, anchor offset, their angles and the pulley radius.
routing = TendonRouting(0.012, 0.008, 0.2, 0.1, 0.003)

# Sweep the joint.  The moment arm shrinks to zero where the cable passes
# over the joint axis and grows again on the other side.
q = np.deg2rad(np.arange(0, 91, 10))
res = moment_arm(routing, q)
for deg, ad in zip(np.rad2deg(q), res.moment_arm):
    print(f"q = {deg:5.1f} deg   AD = {1000 * ad:6.3f} mm")

q0 = math.asin(routing.pulley_radius / routing.pulley_offset_len) + routing.anchor_angle - routing.pulley_angle
print(f"cable over the axis at q = {math.degrees(q0):.3f} deg, AD = {moment_arm(routing, q0).moment_arm:.1e} m")

# The three closed forms agree wherever the literal one is defined.
for method in ("vector", "triangle"):
    print(method, f"{moment_arm(routing, 0.9, method=method).moment_arm:.12f}")

# Torque is tension times moment arm.
print(f"50 N at 0.9 rad -> {external_torque(routing, 0.9, 50.0):.4f} Nm")

# Integrating AD over the joint angle gives the cable take-up the motor must reel in.
finger_routing = TendonRouting(0.014, 0.009, 0.6, 0.9, 0.003)
cable = CableMap(finger_routing, 0.0, 1.5)
print("take-up over the full stroke:", f"{1000 * cable.length(1.5):.3f} mm")

# Muscle law: current adds force linearly, a length error adds it exponentially.
muscle = default_muscle()
for current in (0.0, 0.5, 1.0):
    f = force_from_errors(muscle, current, np.array([-0.002, 0.0, 0.002]), 0.0, 0.0)
    print(f"I = {current:.1f} A  ->  F = {np.round(f, 3)} N at length errors -2, 0, +2 mm")
