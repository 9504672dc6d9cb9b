"""Grasping soft and hard objects: admittance control against plain PID.

Both controllers follow the same closing trajectories.  The admittance arm
feeds the GPR torque estimate into a virtual mass-spring-damper, so once the
fingertip meets the object it yields instead of driving into it.  Joint
effort is the time integral of |tendon torque| over the contact phase.

Run with ``python demos/admittance_vs_pid.py`` (about a minute).
"""

from tendon_finger.datagen import CalibrationProtocol
from tendon_finger.gpr import FitOptions
from tendon_finger.harness import ComparisonSetup, format_comparison_table, run_grasp_comparison, train_comparison_model
from tendon_finger.joints import joint_spec
from tendon_finger.plant import default_objects

spec = joint_spec("IF-PIP")
objects = default_objects()
for o in objects:
    print(f"{o.label:<7} stiffness {o.stiffness:>8.1f} N/m, damping {o.damping:>6.2f} N s/m")

# The estimator sees calibration data and a few free and contact grasps.
model = train_comparison_model(
    spec, objects, CalibrationProtocol(load_step=0.1, duration_per_load=10.0), options=FitOptions(max_rows=1000),
    grasp_trials=6, grasp_duration=5.0,
)

report = run_grasp_comparison(spec.finger(), objects, model, ComparisonSetup(trials=8))
print()
print(format_comparison_table(report))

# Stiffer objects build up contact torque faster, so yielding saves more.
reductions = [r["reduction_pct"] for r in report["objects"]]
print("\nordered hard -> soft:", all(a > b for a, b in zip(reductions, reductions[1:])))
