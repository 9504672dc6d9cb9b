import json

import numpy as np
import pytest

import tendon_finger.harness as harness
from tendon_finger.datagen import CalibrationProtocol
from tendon_finger.episode import NoiseModel
from tendon_finger.errors import SimulationDivergedError, UndefinedMetricError, ValidationError
from tendon_finger.gpr import FitOptions
from tendon_finger.harness import (
    ComparisonSetup,
    calibration_corpora,
    comparison_plan,
    contact_phase,
    energy_metrics,
    format_comparison_table,
    recompute_from_traces,
    reduction_pct,
    run_estimation_experiment,
    run_fingertip_force_experiment,
    run_grasp_comparison,
    train_comparison_model,
)
from tendon_finger.joints import JOINT_LABELS, joint_catalog, joint_spec
from tendon_finger.plant import ContactObject, PlantParams, contact_torque, default_objects

QUIET = NoiseModel(0.0, 0.0, 0.0)
SMALL = ComparisonSetup(trials=3, trial_duration=2.5, seed=4)


def exact_estimator(finger, obj, setup, ticks=None, control_dt=0.01):
    """Contact torque from noiseless joint readings, with the plan's per-trial engage angles."""
    ticks = ticks or int(round(setup.trial_duration / control_dt))
    _, engage, _ = comparison_plan(setup, ticks, control_dt, obj.engage_angle)
    contact = ContactObject(obj.stiffness, engage, obj.damping, obj.label)
    return lambda f: contact_torque(finger.params, contact, f[:, 3], f[:, 4])


@pytest.fixture(scope="module")
def finger():
    return joint_spec("IF-PIP").finger()


@pytest.fixture(scope="module")
def small_objects():
    objs = default_objects()
    return [objs[0], objs[3], objs[5]]


@pytest.fixture(scope="module")
def run(finger, small_objects, tmp_path_factory):
    obj = small_objects[1]
    est = exact_estimator(finger, obj, SMALL)
    trace_dir = tmp_path_factory.mktemp("traces")
    report = run_grasp_comparison(finger, [obj], est, SMALL, noise=QUIET, trace_dir=trace_dir)
    return report, trace_dir


class TestMetrics:
    def test_contact_phase_mask(self):
        t = np.arange(6) * 0.1
        tau = np.array([[0, 0], [0, 0], [0, 0.2], [0.3, 0], [0.1, 0], [0, 0]], dtype=float)
        mask = contact_phase(tau, t, 0.05, 0.25)
        assert mask[:, 0].tolist() == [False, False, False, True, True, True]
        assert mask[:, 1].tolist() == [False, False, False, True, True, True]

    def test_no_contact_is_empty(self):
        mask = contact_phase(np.zeros((5, 2)), np.arange(5) * 0.1, 0.01, 0.0)
        assert not mask.any()

    def test_energy_integrals(self):
        tau = np.array([[1.0], [-2.0], [3.0]])
        qd = np.array([[1.0], [1.0], [-1.0]])
        mask = np.array([[False], [True], [True]])
        e = energy_metrics(tau, qd, mask, 0.5)
        assert e["abs"][0] == 2.5 and e["sq"][0] == 6.5 and e["power"][0] == 2.5

    def test_reduction(self):
        assert reduction_pct(2.0, 1.5) == 25.0
        assert reduction_pct(2.0, 2.0) == 0.0
        with pytest.raises(UndefinedMetricError):
            reduction_pct(0.0, 1.0)

    def test_setup_validation(self):
        with pytest.raises(ValidationError):
            ComparisonSetup(trials=0)
        with pytest.raises(ValidationError):
            ComparisonSetup(contact_threshold=0.0)


class TestPlan:
    def test_plan_is_seeded(self):
        a = comparison_plan(SMALL, 250, 0.01, 0.7)
        b = comparison_plan(SMALL, 250, 0.01, 0.7)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert [s.entropy for s in a[2]] == [s.entropy for s in b[2]]

    def test_engage_jitter(self):
        _, engage, seeds = comparison_plan(ComparisonSetup(trials=50), 500, 0.01, 0.7)
        assert len(seeds) == 50
        assert np.all(np.abs(engage - 0.7) <= 0.05)


class TestComparison:
    def test_self_comparison_is_zero(self, finger, small_objects):
        obj = small_objects[1]
        est = exact_estimator(finger, obj, SMALL)
        report = run_grasp_comparison(finger, [obj], est, SMALL, arms=("admittance", "admittance"))
        row = report["objects"][0]
        assert row["energy_pid"] == row["energy_admittance"] > 0
        assert row["reduction_pct"] == 0.0 and row["reduction_sq_pct"] == 0.0

    def test_pid_self_comparison(self, finger, small_objects):
        report = run_grasp_comparison(finger, small_objects[:1], lambda f: np.zeros(len(f)), SMALL,
                                      arms=("pid", "pid"))
        assert report["aggregate"]["mean_reduction_pct"] == 0.0

    def test_report_shape(self, run):
        report, _ = run
        assert report["format_version"] == 1
        row = report["objects"][0]
        assert row["trials"] == SMALL.trials and row["flagged"] == 0
        assert row["reduction_pct"] == pytest.approx(100 * (1 - row["energy_admittance"] / row["energy_pid"]),
                                                     rel=0, abs=1e-12)
        assert all(np.isfinite(v) for k, v in row.items() if k != "label")
        assert "mean reduction" in format_comparison_table(report)

    def test_admittance_reduces_effort(self, run):
        assert run[0]["objects"][0]["reduction_pct"] > 0

    def test_recompute_from_traces(self, run):
        report, trace_dir = run
        again = recompute_from_traces(trace_dir)
        row = report["objects"][0]
        got = again[row["label"]]
        for key in ("energy_pid", "energy_admittance", "reduction_pct", "reduction_sq_pct", "reduction_power_pct"):
            assert got[key] == pytest.approx(row[key], rel=1e-12)

    def test_identical_inputs_in_both_arms(self, finger, small_objects, monkeypatch):
        real, calls = harness.run_episode, []

        def spy(finger, reference, **kw):
            calls.append((reference.copy(), kw["contact"].engage_angle, [g.bit_generator.state for g in kw["rng"]]))
            return real(finger, reference, **kw)

        monkeypatch.setattr(harness, "run_episode", spy)
        run_grasp_comparison(finger, small_objects[:2], lambda f: np.zeros(len(f)), SMALL)
        assert len(calls) == 4
        ref0, eng0, rng0 = calls[0]
        for ref, eng, rng in calls[1:]:
            assert np.array_equal(ref, ref0)
            assert rng == rng0
        assert np.array_equal(calls[1][1], eng0)

    def test_objects_sorted_hard_to_soft(self, finger, small_objects):
        report = run_grasp_comparison(finger, small_objects[::-1], lambda f: np.zeros(len(f)),
                                      ComparisonSetup(trials=1, trial_duration=2.0), arms=("pid", "pid"))
        assert [r["label"] for r in report["objects"]] == ["wood", "cup", "plush"]

    def test_flagged_trials(self, finger, small_objects, monkeypatch):
        real = harness.run_episode

        def flaky(*args, **kw):
            log = real(*args, **kw)
            if kw["kind"] == "pid":
                log.flagged[0] = True
            return log

        monkeypatch.setattr(harness, "run_episode", flaky)
        est = lambda f: np.zeros(len(f))  # noqa: E731
        lenient = ComparisonSetup(**{**SMALL.__dict__, "max_flagged_fraction": 0.5})
        report = run_grasp_comparison(finger, small_objects[:1], est, lenient)
        assert report["objects"][0]["flagged"] == 1 and report["objects"][0]["trials"] == 2
        with pytest.raises(SimulationDivergedError):
            run_grasp_comparison(finger, small_objects[:1], est, SMALL)

    def test_bad_arms(self, finger, small_objects):
        with pytest.raises(ValidationError):
            run_grasp_comparison(finger, small_objects, lambda f: f[:, 0], SMALL, arms=("pid", "mpc"))


class TestEstimation:
    def test_noiseless_fit(self):
        protocol = CalibrationProtocol(load_step=0.19, duration_per_load=6.0, temperatures=(20.0, 40.0))
        corpora = calibration_corpora(joint_catalog(JOINT_LABELS[:2]), protocol, QUIET)
        results = run_estimation_experiment(corpora, FitOptions(restarts=2, max_rows=600))
        assert [r.label for r in results] == list(JOINT_LABELS[:2])
        for r in results:
            assert r.r2 > 0.999
            assert set(r.trace) == {"truth", "mean", "std"}
            assert r.as_dict()["n_train"] == 600

    def test_empty_corpus(self):
        from tendon_finger.datagen import Corpus

        empty = Corpus(np.zeros((0, 6)), np.zeros(0))
        with pytest.raises(Exception) as info:
            run_estimation_experiment({"IF-PIP": (empty, empty)})
        assert "IF-PIP" in str(info.value)


class TestFingertipForce:
    def test_exact_estimator_limit(self):
        spec = joint_spec("IF-PIP", plant=PlantParams(viscous_friction=0.0, coulomb_friction=0.0))
        finger = spec.finger()
        obj = default_objects()[2]
        res = run_fingertip_force_experiment(exact_estimator(finger, obj, SMALL), finger, [obj], SMALL, noise=QUIET)
        assert res["samples"] > 0 and not res["flagged"]
        assert res["mean_error"] < 0.01

    def test_zero_lever_is_flagged(self):
        finger = joint_spec("IF-PIP", plant=PlantParams(contact_lever=0.0)).finger()
        res = run_fingertip_force_experiment(lambda f: np.zeros(len(f)), finger, [default_objects()[2]],
                                             ComparisonSetup(trials=2, trial_duration=2.0))
        assert res["flagged"] and res["samples"] == 0

    def test_friction_heavy_pulses(self):
        spec = joint_spec("IF-PIP", plant=PlantParams(coulomb_friction=0.05))
        objs = default_objects()[2:4]
        model = train_comparison_model(
            spec, objs, CalibrationProtocol(load_step=0.19, duration_per_load=6.0, temperatures=(30.0,)),
            options=FitOptions(restarts=2, max_rows=400), grasp_trials=4, grasp_duration=3.0,
        )
        res = run_fingertip_force_experiment(model, spec.finger(), objs, ComparisonSetup(trials=4, trial_duration=3.0))
        assert res["peak_error"] > 5 * res["mean_error"]
        assert [o["label"] for o in res["objects"]] == ["bottle", "cup"]
