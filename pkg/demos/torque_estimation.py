"""Estimating joint torque from motor signals with a Gaussian process.

A shortened hanging-weight calibration is simulated, a GPR is fitted on six
proprioceptive features, and the held-out error is reported.  The full
protocol (20 loads, 4 temperatures, 30 s each) is what ``tendon-finger eval``
runs; this version finishes in under a minute.

Run with ``python demos/torque_estimation.py``.
"""

import numpy as np

from tendon_finger import gpr
from tendon_finger.datagen import CalibrationProtocol, run_calibration, split
from tendon_finger.episode import NoiseModel
from tendon_finger.joints import joint_spec

finger = joint_spec("IF-PIP").finger()
protocol = CalibrationProtocol(load_step=0.1, duration_per_load=10.0, temperatures=(20.0, 50.0))
print(f"{len(protocol.loads)} loads x {len(protocol.temperatures)} temperatures -> {protocol.expected_rows} rows")

corpus = run_calibration(protocol, finger, NoiseModel())
train, test = split(corpus, 0.2, seed=0)
print("features:", ", ".join(gpr.FEATURES))
print("torque range:", np.round([corpus.y.min(), corpus.y.max()], 3), "Nm")

model = gpr.fit(train.X, train.y, gpr.FitOptions(max_rows=1000))
print("hyperparameters:", {k: round(v, 4) for k, v in model.hyperparams.as_dict().items()})
print(f"log marginal likelihood: {model.lml:.1f}")

metrics = gpr.evaluate(model, test.X, test.y)
print(f"held-out MSE {metrics['mse']:.2e} Nm^2, R^2 {metrics['r2']:.4f}")

# The posterior standard deviation comes for free.
pred = gpr.predict(model, test.X[:5])
for truth, mean, sd in zip(test.y[:5], pred.mean, pred.std):
    print(f"truth {truth:+.4f}  estimate {mean:+.4f} +- {sd:.4f} Nm")

# Without sensor noise the same fit gets much closer.
quiet = run_calibration(protocol, finger, NoiseModel(0.0, 0.0, 0.0))
tr, te = split(quiet, 0.2, seed=0)
print("noiseless R^2:", round(gpr.evaluate(gpr.fit(tr.X, tr.y, gpr.FitOptions(max_rows=1000)), te.X, te.y)["r2"], 5))
