"""Experiments: per-joint torque estimation, PID vs admittance grasping,
and fingertip force estimation.

Reports are plain dicts that serialize to JSON deterministically (sorted
keys, no wall-clock fields) so two runs with the same configuration produce
identical bytes.  Grasp traces are written one CSV per trial and carry every
signal needed to recompute the energy metrics.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .datagen import CalibrationProtocol, Corpus, grasp_references, run_calibration, run_grasp_collection, split
from .episode import ControllerConfig, EpisodeLog, NoiseModel, run_episode
from .errors import DataError, FingerError, SimulationDivergedError, UndefinedMetricError, ValidationError
from .gpr import FitOptions, GprModel, evaluate, fit, predict, predict_mean
from .joints import JointSpec
from .plant import ContactObject, Finger

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
TRACE_COLUMNS = ("t", "tau_applied", "tau_est", "tau_truth", "tau_contact", "q", "q_d", "q_dot")
ENERGY_KEYS = ("abs", "sq", "power")  # int |tau| dt, int tau^2 dt, int |tau q'| dt
ARMS = ("pid", "admittance")


# -- torque estimation -----------------------------------------------------


@dataclass
class JointResult:
    label: str
    mse: float
    r2: float
    lml: float
    hyperparams: dict
    n_train: int
    n_test: int
    model: GprModel = field(repr=False)
    trace: dict = field(repr=False, default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "mse": self.mse,
            "r2": self.r2,
            "lml": self.lml,
            "hyperparams": self.hyperparams,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def calibration_corpora(joints, protocol: CalibrationProtocol, noise: NoiseModel | None = None,
                        test_fraction: float = 0.2, split_seed: int = 0) -> dict:
    """Run the calibration protocol on every joint; returns ``{label: (train, test)}``."""
    out = {}
    for spec in joints:
        try:
            corpus = run_calibration(protocol, spec.finger(), noise)
        except SimulationDivergedError as err:
            _relabel(err, spec.label)
            raise
        out[spec.label] = split(corpus, test_fraction, split_seed)
    return out


def _relabel(err: FingerError, label: str):
    err.joint = label
    err.args = (f"joint {label}: {err.args[0] if err.args else err}",) + tuple(err.args[1:])


def run_estimation_experiment(corpora: dict, options: FitOptions | None = None, max_test: int = 5000,
                              trace_rows: int = 500, seed: int = 0) -> list[JointResult]:
    """Fit one GPR per joint and score it on the held-out rows.

    ``corpora`` maps a joint label to ``(train, test)`` corpora.  At most
    ``max_test`` test rows (seeded subsample) are scored; the first
    ``trace_rows`` of them are kept as prediction-vs-truth traces.
    """
    if not corpora:
        raise ValidationError("no joints to evaluate")
    options = options or FitOptions()
    results = []
    for label, (train, test) in corpora.items():
        if len(train) == 0 or len(test) == 0:
            raise DataError(f"joint {label}: empty train or test corpus")
        try:
            model = fit(train.X, train.y, options)
            Xt, yt = test.X, test.y
            if len(test) > max_test:
                idx = np.sort(np.random.default_rng(seed).choice(len(test), max_test, replace=False))
                Xt, yt = Xt[idx], yt[idx]
            metrics = evaluate(model, Xt, yt)
        except FingerError as err:
            _relabel(err, label)
            raise
        pred = predict(model, Xt[:trace_rows])
        results.append(
            JointResult(
                label, metrics["mse"], metrics["r2"], model.lml, model.hyperparams.as_dict(),
                model.n_train, int(yt.size), model,
                {"truth": yt[:trace_rows], "mean": pred.mean, "std": pred.std},
            )
        )
        log.info("%s: mse=%.3g r2=%.4f", label, metrics["mse"], metrics["r2"])
    return results


# -- grasp comparison --------------------------------------------------------


@dataclass(frozen=True)
class ComparisonSetup:
    trials: int = 30
    trial_duration: float = 5.0  # s
    temperature: float = 30.0  # C
    settle_time: float = 0.2  # s excluded at the start of each trial
    contact_threshold: float = 0.005  # Nm of ground-truth contact torque that opens the contact phase
    engage_jitter: float = 0.05  # rad
    seed: int = 0
    max_flagged_fraction: float = 0.1

    def __post_init__(self):
        if self.trials < 1 or not self.trial_duration > 0:
            raise ValidationError("need at least one trial of positive duration")
        if self.settle_time < 0 or not self.contact_threshold > 0:
            raise ValidationError("settle_time must be >= 0 and contact_threshold > 0")


def contact_phase(tau_contact: np.ndarray, t: np.ndarray, threshold: float, settle_time: float) -> np.ndarray:
    """Mask ``(ticks, batch)``: from the first crossing of ``threshold`` to the end,
    never inside the settling window.  Trials with no contact get an empty mask."""
    above = np.asarray(tau_contact) > threshold
    first = np.where(above.any(axis=0), np.argmax(above, axis=0), above.shape[0])
    ticks = np.arange(above.shape[0])[:, None]
    return (ticks >= first[None, :]) & (np.asarray(t)[:, None] >= settle_time)


def energy_metrics(tau, q_dot, mask, dt) -> dict:
    """Per-trial ``{abs, sq, power}`` integrals over ``mask`` (rectangle rule)."""
    tau = np.asarray(tau)
    m = np.asarray(mask, dtype=float)
    return {
        "abs": (np.abs(tau) * m).sum(axis=0) * dt,
        "sq": (tau * tau * m).sum(axis=0) * dt,
        "power": (np.abs(tau * np.asarray(q_dot)) * m).sum(axis=0) * dt,
    }


def reduction_pct(e_pid: float, e_adm: float) -> float:
    if not e_pid > 0:
        raise UndefinedMetricError("baseline energy is zero; reduction undefined")
    return 100.0 * (1.0 - e_adm / e_pid)


def comparison_plan(setup: ComparisonSetup, ticks: int, control_dt: float, engage_angle: float):
    """Reference trajectories, engage angles and per-trial noise seeds.

    The same plan is used for every object and both arms, so object-to-object
    differences come from the physics, not from sampling.
    """
    ss = np.random.SeedSequence([setup.seed, 104729])
    plan_seed, noise_seed = ss.spawn(2)
    rng = np.random.default_rng(plan_seed)
    engage = engage_angle + rng.uniform(-setup.engage_jitter, setup.engage_jitter, setup.trials)
    ref = grasp_references(rng, setup.trials, ticks, control_dt, engage)
    return ref, engage, noise_seed.spawn(setup.trials)


def run_grasp_comparison(finger: Finger, objects, estimator, setup: ComparisonSetup | None = None,
                         controllers: ControllerConfig | None = None, noise: NoiseModel | None = None,
                         arms=ARMS, trace_dir=None) -> dict:
    """Grasp every object under both controller arms and compare joint effort.

    ``estimator`` is a :class:`GprModel` or a callable mapping measured
    features ``(batch, 6)`` to external-torque estimates.  ``arms`` names the
    baseline and the treatment controller (``"pid"`` or ``"admittance"``).
    Returns the report dict; with ``trace_dir`` every trial's trace is written
    there together with ``manifest.json``.
    """
    setup = setup or ComparisonSetup()
    ctl = controllers or ControllerConfig()
    noise = noise or NoiseModel()
    if len(arms) != 2 or any(a not in ARMS for a in arms):
        raise ValidationError(f"arms must be two of {ARMS}")
    if isinstance(estimator, GprModel):
        model = estimator
        estimator = lambda feats: predict_mean(model, feats)  # noqa: E731
    objects = list(objects)
    if not objects:
        raise ValidationError("no objects to grasp")

    ticks = int(round(setup.trial_duration / ctl.control_dt))
    dt = ctl.control_dt
    ref, engage, seeds = comparison_plan(setup, ticks, dt, float(np.mean([o.engage_angle for o in objects])))
    offsets = engage - float(np.mean([o.engage_angle for o in objects]))

    rows, flagged_total = [], 0
    traces = {}
    for obj in objects:
        contact = ContactObject(obj.stiffness, obj.engage_angle + offsets, obj.damping, obj.label)
        logs = {}
        for arm_i, kind in enumerate(arms):
            rngs = [np.random.default_rng(s) for s in seeds]
            logs[arm_i] = run_episode(
                finger, ref, kind=kind, controllers=ctl, contact=contact, temperature=setup.temperature,
                noise=noise, rng=rngs, estimator=estimator,
            )
        flagged = logs[0].flagged | logs[1].flagged
        keep = ~flagged
        flagged_total += int(flagged.sum())
        energies = {}
        for arm_i in (0, 1):
            lg = logs[arm_i]
            mask = contact_phase(lg.tau_contact, lg.t, setup.contact_threshold, setup.settle_time)
            e = energy_metrics(lg.tau_applied, lg.q_dot, mask, dt)
            energies[arm_i] = {k: float(v[keep].mean()) if keep.any() else float("nan") for k, v in e.items()}
        row = {
            "label": obj.label,
            "stiffness": float(obj.stiffness),
            "trials": int(keep.sum()),
            "flagged": int(flagged.sum()),
            "energy_pid": energies[0]["abs"],
            "energy_admittance": energies[1]["abs"],
            "reduction_pct": reduction_pct(energies[0]["abs"], energies[1]["abs"]),
        }
        for k in ENERGY_KEYS[1:]:
            row[f"energy_{k}_pid"] = energies[0][k]
            row[f"energy_{k}_admittance"] = energies[1][k]
            row[f"reduction_{k}_pct"] = reduction_pct(energies[0][k], energies[1][k])
        rows.append(row)
        traces[obj.label] = logs

    n_total = len(objects) * setup.trials
    if flagged_total > setup.max_flagged_fraction * n_total:
        raise SimulationDivergedError(f"{flagged_total} of {n_total} trials diverged (limit "
                                      f"{setup.max_flagged_fraction:.0%})")

    rows.sort(key=lambda r: -r["stiffness"])
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "kind": "grasp_comparison",
        "arms": {"baseline": arms[0], "treatment": arms[1]},
        "objects": rows,
        "aggregate": {
            "mean_reduction_pct": float(np.mean([r["reduction_pct"] for r in rows])),
            **{f"mean_reduction_{k}_pct": float(np.mean([r[f"reduction_{k}_pct"] for r in rows]))
               for k in ENERGY_KEYS[1:]},
            "flagged_trials": flagged_total,
            "total_trials": n_total,
        },
        "metadata": {
            "package_version": __version__,
            "setup": asdict(setup),
            "control_dt": ctl.control_dt,
            "plant_dt": ctl.plant_dt,
            "noise": asdict(noise),
            "energy_definitions": {
                "abs": "integral of |tau_applied| dt",
                "sq": "integral of tau_applied^2 dt",
                "power": "integral of |tau_applied * q_dot| dt",
            },
            "contact_phase": "first tick with ground-truth contact torque above contact_threshold to trial "
                             "end, excluding t < settle_time",
        },
    }
    if trace_dir is not None:
        write_traces(trace_dir, traces, arms, report)
    return report


def trace_table(lg: EpisodeLog, trial: int) -> np.ndarray:
    return np.column_stack([lg.t] + [getattr(lg, c)[:, trial] for c in TRACE_COLUMNS[1:]])


def _write_table(path, header, table):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        fh.writelines(",".join(map(repr, row)) + "\n" for row in table.tolist())


def write_traces(trace_dir, traces: dict, arms, report: dict) -> None:
    os.makedirs(trace_dir, exist_ok=True)
    files = []
    for label, logs in traces.items():
        for arm_i, kind in enumerate(arms):
            lg = logs[arm_i]
            for trial in range(lg.q.shape[1]):
                name = f"{label}_{arm_i}-{kind}_trial{trial:03d}.csv"
                _write_table(os.path.join(trace_dir, name), TRACE_COLUMNS, trace_table(lg, trial))
                files.append({"file": name, "object": label, "arm": arm_i, "controller": kind, "trial": trial,
                              "flagged": bool(lg.flagged[trial])})
    manifest = {
        "format_version": REPORT_FORMAT_VERSION,
        "columns": list(TRACE_COLUMNS),
        "setup": report["metadata"]["setup"],
        "arms": list(arms),
        "traces": files,
    }
    dump_json(manifest, os.path.join(trace_dir, "manifest.json"))


def recompute_from_traces(trace_dir) -> dict:
    """Per-object energies and reductions recomputed from a trace directory."""
    with open(os.path.join(trace_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    setup = manifest["setup"]
    per = {}
    for entry in manifest["traces"]:
        data = np.loadtxt(os.path.join(trace_dir, entry["file"]), delimiter=",", skiprows=1, ndmin=2)
        cols = {c: data[:, i:i + 1] for i, c in enumerate(TRACE_COLUMNS)}
        t = data[:, 0]
        dt = float(t[1] - t[0]) if t.size > 1 else setup["trial_duration"]
        mask = contact_phase(cols["tau_contact"], t, setup["contact_threshold"], setup["settle_time"])
        e = energy_metrics(cols["tau_applied"], cols["q_dot"], mask, dt)
        slot = per.setdefault(entry["object"], {}).setdefault(entry["trial"], {})
        slot[entry["arm"]] = ({k: float(v[0]) for k, v in e.items()}, entry["flagged"])
    out = {}
    for label, trials in per.items():
        kept = [tr for tr in trials.values() if not (tr[0][1] or tr[1][1])]
        mean = {arm: {k: float(np.mean([tr[arm][0][k] for tr in kept])) for k in ENERGY_KEYS} for arm in (0, 1)}
        out[label] = {
            "energy_pid": mean[0]["abs"],
            "energy_admittance": mean[1]["abs"],
            "reduction_pct": reduction_pct(mean[0]["abs"], mean[1]["abs"]),
            **{f"reduction_{k}_pct": reduction_pct(mean[0][k], mean[1][k]) for k in ENERGY_KEYS[1:]},
        }
    return out


# -- fingertip force ---------------------------------------------------------


def run_fingertip_force_experiment(estimator, finger: Finger, objects, setup: ComparisonSetup | None = None,
                                   controllers: ControllerConfig | None = None,
                                   noise: NoiseModel | None = None) -> dict:
    """Fingertip force from estimated joint torque, ``F = tau / lever``, under PID grasps.

    Scored on contact-phase samples.  With a zero contact lever the force is
    undefined: every sample is excluded and the result is flagged.
    """
    setup = setup or ComparisonSetup()
    ctl = controllers or ControllerConfig()
    noise = noise or NoiseModel()
    if isinstance(estimator, GprModel):
        model = estimator
        estimator = lambda feats: predict_mean(model, feats)  # noqa: E731
    lever = finger.params.contact_lever
    ticks = int(round(setup.trial_duration / ctl.control_dt))
    mean_engage = float(np.mean([o.engage_angle for o in objects]))
    ref, engage, seeds = comparison_plan(setup, ticks, ctl.control_dt, mean_engage)
    errs, per_object, excluded = [], [], 0
    for obj in objects:
        contact = ContactObject(obj.stiffness, obj.engage_angle + engage - mean_engage, obj.damping, obj.label)
        lg = run_episode(finger, ref, kind="pid", controllers=ctl, contact=contact, temperature=setup.temperature,
                         noise=noise, rng=[np.random.default_rng(s) for s in seeds], estimator=estimator)
        mask = contact_phase(lg.tau_contact, lg.t, setup.contact_threshold, setup.settle_time)
        mask &= ~lg.flagged[None, :]
        if lever == 0:
            excluded += int(mask.sum())
            continue
        e = (lg.tau_est[mask] - lg.tau_contact[mask]) / lever
        errs.append(e)
        per_object.append({"label": obj.label, **_force_stats(e)})
    result = {"lever": lever, "excluded_samples": excluded, "flagged": lever == 0, "objects": per_object}
    result.update(_force_stats(np.concatenate(errs)) if errs else
                  {"mean_error": float("nan"), "peak_error": float("nan"), "mse": float("nan"), "samples": 0})
    return result


def _force_stats(e):
    a = np.abs(e)
    if a.size == 0:
        return {"mean_error": float("nan"), "peak_error": float("nan"), "mse": float("nan"), "samples": 0}
    return {"mean_error": float(a.mean()), "peak_error": float(a.max()), "mse": float(np.mean(e * e)),
            "samples": int(a.size)}


# -- end-to-end ----------------------------------------------------------------


def train_comparison_model(spec: JointSpec, objects, protocol: CalibrationProtocol | None = None,
                           noise: NoiseModel | None = None, options: FitOptions | None = None,
                           grasp_trials: int = 30, grasp_duration: float = 5.0, seed: int = 0) -> GprModel:
    """Estimator for the grasp comparison: calibration plus grasp-collection data."""
    finger = spec.finger()
    cal = run_calibration(protocol or CalibrationProtocol(seed=seed), finger, noise)
    grasp = run_grasp_collection([None] + list(objects), grasp_trials, grasp_duration, finger, noise, seed=seed + 1)
    corpus = Corpus.concat([cal, grasp])
    return fit(corpus.X, corpus.y, options or FitOptions(seed=seed))


# -- output ------------------------------------------------------------------


def dump_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def format_comparison_table(report: dict) -> str:
    head = f"{'object':<8} {'k [N/m]':>10} {'E_pid':>9} {'E_adm':>9} {'red %':>7} {'red sq %':>9} {'red pow %':>9}"
    lines = [head, "-" * len(head)]
    for r in report["objects"]:
        lines.append(
            f"{r['label']:<8} {r['stiffness']:>10.4g} {r['energy_pid']:>9.4f} {r['energy_admittance']:>9.4f} "
            f"{r['reduction_pct']:>7.2f} {r['reduction_sq_pct']:>9.2f} {r['reduction_power_pct']:>9.2f}"
        )
    agg = report["aggregate"]
    lines.append("-" * len(head))
    lines.append(f"mean reduction {agg['mean_reduction_pct']:.2f} % (|tau|), "
                 f"{agg['mean_reduction_sq_pct']:.2f} % (tau^2), {agg['mean_reduction_power_pct']:.2f} % (|tau q'|); "
                 f"flagged {agg['flagged_trials']}/{agg['total_trials']}")
    return "\n".join(lines)


def format_estimation_table(results) -> str:
    head = f"{'joint':<8} {'mse [Nm^2]':>11} {'r2':>8} {'n_train':>8} {'n_test':>7}"
    lines = [head, "-" * len(head)]
    for r in results:
        lines.append(f"{r.label:<8} {r.mse:>11.3e} {r.r2:>8.4f} {r.n_train:>8d} {r.n_test:>7d}")
    return "\n".join(lines)
