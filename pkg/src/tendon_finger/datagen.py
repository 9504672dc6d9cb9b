"""Calibration and grasp data collection on the simulated finger.

Calibration: for every (load, temperature, repetition) cell the finger
lifts a hanging weight back and forth at constant joint speed under PID
position control, logging one sample per control tick.  Grasp collection:
the finger closes onto each object along seeded random reference
profiles.  Both produce a :class:`Corpus` in the shared 7-column CSV format.

Each cell or trial owns a noise stream spawned from the protocol seed, so
rows are identical however the simulation is batched, and rows are always
emitted cell-major, tick-minor.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .episode import ControllerConfig, NoiseModel, run_episode, smoothstep_ramp, triangle_wave
from .errors import DataError, SimulationDivergedError, ValidationError
from .gpr import FEATURES, TARGET, TEMPERATURE_BAND
from .plant import ContactObject, Finger

CSV_HEADER = FEATURES + (TARGET,)
FORMAT_VERSION = 1


@dataclass(frozen=True)
class CalibrationProtocol:
    load_min: float = 0.05  # kg
    load_max: float = 1.0
    load_step: float = 0.05
    duration_per_load: float = 30.0  # s
    sample_rate: float = 100.0  # Hz
    temperatures: tuple = (20.0, 30.0, 40.0, 50.0)
    repetitions: int = 1
    seed: int = 0
    sweep_lo: float = 0.3  # rad
    sweep_hi: float = 1.2
    sweep_speed: float = 0.15  # rad/s

    def __post_init__(self):
        if not (0 < self.load_min <= self.load_max):
            raise ValidationError("protocol needs 0 < load_min <= load_max")
        if not self.load_step > 0 or not self.sample_rate > 0 or not self.duration_per_load > 0:
            raise ValidationError("load_step, sample_rate and duration must be positive")
        if self.repetitions < 1 or not self.temperatures:
            raise ValidationError("need at least one repetition and one temperature")
        if not self.sweep_lo < self.sweep_hi or not self.sweep_speed > 0:
            raise ValidationError("sweep needs lo < hi and positive speed")

    @property
    def loads(self) -> np.ndarray:
        n = int(math.floor((self.load_max - self.load_min) / self.load_step + 1e-9)) + 1
        return np.round(self.load_min + self.load_step * np.arange(n), 12)

    @property
    def ticks_per_cell(self) -> int:
        return int(round(self.duration_per_load * self.sample_rate))

    @property
    def expected_rows(self) -> int:
        return len(self.loads) * len(self.temperatures) * self.repetitions * self.ticks_per_cell


@dataclass
class Corpus:
    """Feature matrix ``X`` (N, 6) and torque labels ``y`` (N,)."""

    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(FEATURES))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise DataError("feature and label row counts differ")

    def __len__(self):
        return self.y.size

    def subset(self, idx) -> "Corpus":
        return Corpus(self.X[idx], self.y[idx], dict(self.meta))

    @staticmethod
    def concat(parts) -> "Corpus":
        parts = list(parts)
        return Corpus(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]))

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO(newline="")
        buf.write(",".join(CSV_HEADER) + "\n")
        table = np.column_stack([self.X, self.y])
        buf.writelines(",".join(map(repr, row)) + "\n" for row in table.tolist())
        return buf.getvalue().encode("utf-8")

    def to_csv(self, path) -> str:
        """Write the CSV and return its sha256."""
        data = self.to_csv_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def from_csv(cls, path) -> "Corpus":
        """Read a corpus, naming the line of the first malformed row."""
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError("empty corpus file", line=1) from None
            if tuple(h.strip() for h in header) != CSV_HEADER:
                raise DataError(f"expected header {','.join(CSV_HEADER)}", line=1)
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(CSV_HEADER):
                    raise DataError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line=lineno)
                try:
                    vals = [float(v) for v in row]
                except ValueError:
                    raise DataError(f"non-numeric field in {row!r}", line=lineno) from None
                if not all(math.isfinite(v) for v in vals):
                    raise DataError("non-finite value", line=lineno)
                rows.append(vals)
        table = np.array(rows, dtype=float).reshape(-1, len(CSV_HEADER))
        return cls(table[:, :-1], table[:, -1])


def split(corpus: Corpus, test_fraction: float = 0.2, seed: int = 0):
    """Seeded disjoint train/test split."""
    if not 0 < test_fraction < 1:
        raise ValidationError("test_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(corpus))
    n_test = max(1, int(round(test_fraction * len(corpus))))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return corpus.subset(train), corpus.subset(test)


def check_bands(X: np.ndarray, finger: Finger, provenance) -> None:
    """Abort on non-finite or physically implausible rows.

    ``provenance(row) -> str`` describes where a row came from.
    """
    p = finger.params
    lo_t, hi_t = TEMPERATURE_BAND
    ok = np.all(np.isfinite(X), axis=1)
    ok &= np.abs(X[:, 0]) <= 2.0 * p.max_current
    ok &= (X[:, 3] > p.joint_min - 0.1) & (X[:, 3] < p.joint_max + 0.1)
    ok &= (X[:, 5] >= lo_t) & (X[:, 5] <= hi_t)
    if not np.all(ok):
        row = int(np.flatnonzero(~ok)[0])
        raise DataError(f"row {row} out of physical bands ({provenance(row)}): {X[row].tolist()}")


def _emit(log, label_noise, rngs):
    # (ticks, batch) -> cell-major rows
    ticks, batch = log.q.shape
    X = log.features.transpose(1, 0, 2).reshape(-1, len(FEATURES))
    y = log.tau_truth.T.copy()
    if label_noise > 0:
        y += label_noise * np.stack([g.standard_normal(ticks) for g in rngs])
    return X, y.reshape(-1)


def run_calibration(protocol: CalibrationProtocol, finger: Finger, noise: NoiseModel | None = None,
                    controllers: ControllerConfig | None = None) -> Corpus:
    """Hanging-weight calibration over every (load, temperature, repetition) cell."""
    noise = noise or NoiseModel()
    ctl = controllers or ControllerConfig(control_dt=1.0 / protocol.sample_rate)
    loads, temps = protocol.loads, np.asarray(protocol.temperatures, dtype=float)
    cells = [(m, T, rep) for m in loads for T in temps for rep in range(protocol.repetitions)]
    seeds = np.random.SeedSequence(protocol.seed).spawn(len(cells))
    rngs = [np.random.default_rng(s) for s in seeds]

    ticks = protocol.ticks_per_cell
    t = np.arange(ticks) / protocol.sample_rate
    sweep = triangle_wave(t, protocol.sweep_lo, protocol.sweep_hi, protocol.sweep_speed)
    reference = np.repeat(sweep[:, None], len(cells), axis=1)
    log = run_episode(
        finger, reference, kind="pid", controllers=ctl, temperature=[c[1] for c in cells],
        load_mass=[c[0] for c in cells], noise=noise, rng=rngs,
    )
    if np.any(log.flagged):
        bad = int(np.flatnonzero(log.flagged)[0])
        m, T, rep = cells[bad]
        raise SimulationDivergedError(f"calibration cell load={m} kg T={T} C rep={rep} diverged", cell=cells[bad])
    X, y = _emit(log, noise.torque_label_noise_std, rngs)

    def where(row):
        m, T, rep = cells[row // ticks]
        return f"cell load={m} kg T={T} C rep={rep}, tick {row % ticks}"

    check_bands(X, finger, where)
    meta = {
        "kind": "calibration",
        "protocol": _jsonable(asdict(protocol)),
        "noise": asdict(noise),
        "rows": int(y.size),
        "cells": len(cells),
    }
    return Corpus(X, y, meta)


def grasp_references(rng: np.random.Generator, trials: int, ticks: int, dt: float, engage,
                     start=(0.3, 0.5), overshoot=(0.05, 0.25), release=True):
    """Random close(-hold-release) reference profiles, shape ``(ticks, trials)``."""
    t = np.arange(ticks) * dt
    duration = ticks * dt
    q_start = rng.uniform(*start, trials)
    q_goal = np.asarray(engage) + rng.uniform(*overshoot, trials)
    t_close = rng.uniform(0.0, 0.15 * duration, trials)
    d_close = rng.uniform(0.1, 0.3, trials) * duration
    ref = smoothstep_ramp(t, q_start, q_goal, t_close, d_close)
    if release:
        q_open = rng.uniform(*start, trials)
        t_open = rng.uniform(0.6, 0.75, trials) * duration
        d_open = rng.uniform(0.1, 0.2, trials) * duration
        ref = ref + smoothstep_ramp(t, 0.0, q_open - q_goal, t_open, d_open)
    return ref


def run_grasp_collection(objects, trials: int, trial_duration: float, finger: Finger,
                         noise: NoiseModel | None = None, controllers: ControllerConfig | None = None,
                         temperatures=(20.0, 30.0, 40.0, 50.0), seed: int = 0,
                         engage_jitter: float = 0.05) -> Corpus:
    """Close the finger onto each object under PID control along random references.

    ``objects`` may contain ``None`` for a free-air placeholder (no contact).
    Rows are object-major, then trial, then tick.
    """
    if trials < 1:
        raise ValidationError("need at least one trial per object")
    noise = noise or NoiseModel()
    ctl = controllers or ControllerConfig()
    ticks = int(round(trial_duration / ctl.control_dt))
    parts = []
    root = np.random.SeedSequence([seed, 7919])
    for i, (obj, ss) in enumerate(zip(objects, root.spawn(len(objects)))):
        plan, *trial_seeds = ss.spawn(trials + 1)
        plan_rng = np.random.default_rng(plan)
        base_engage = obj.engage_angle if obj is not None else 0.7
        engage = base_engage + plan_rng.uniform(-engage_jitter, engage_jitter, trials)
        temps = plan_rng.choice(np.asarray(temperatures, dtype=float), trials)
        ref = grasp_references(plan_rng, trials, ticks, ctl.control_dt, engage)
        contact = None if obj is None else _with_engage(obj, engage)
        rngs = [np.random.default_rng(s) for s in trial_seeds]
        log = run_episode(finger, ref, kind="pid", controllers=ctl, contact=contact,
                          temperature=temps, noise=noise, rng=rngs)
        if np.any(log.flagged):
            raise SimulationDivergedError(
                f"grasp trial {int(np.flatnonzero(log.flagged)[0])} on object {i} diverged", cell=(i,)
            )
        X, y = _emit(log, noise.torque_label_noise_std, rngs)
        check_bands(X, finger, lambda row, i=i: f"object {i}, trial {row // ticks}, tick {row % ticks}")
        parts.append(Corpus(X, y))
    out = Corpus.concat(parts)
    out.meta = {
        "kind": "grasp",
        "objects": [None if o is None else o.label for o in objects],
        "trials": trials,
        "trial_duration": trial_duration,
        "seed": seed,
        "noise": asdict(noise),
        "rows": len(out),
    }
    return out


def _with_engage(obj: ContactObject, engage) -> ContactObject:
    return ContactObject(obj.stiffness, np.asarray(engage, dtype=float), obj.damping, obj.label)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_corpus(corpus: Corpus, csv_path, manifest_path, extra: dict | None = None) -> dict:
    """Write corpus CSV plus a JSON manifest recording provenance."""
    digest = corpus.to_csv(csv_path)
    manifest = {
        "format_version": FORMAT_VERSION,
        "columns": list(CSV_HEADER),
        "rows": len(corpus),
        "sha256": digest,
        **_jsonable(corpus.meta),
        **(_jsonable(extra) if extra else {}),
    }
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
