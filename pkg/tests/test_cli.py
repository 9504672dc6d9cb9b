import json
import math

import numpy as np
import pytest

from tendon_finger.cli import main, moment_arm_table
from tendon_finger.datagen import Corpus
from tendon_finger.geometry import TendonRouting

ROUTING = ["0.012", "0.008", "0.2", "0.1", "0.003"]
THROUGH_AXIS_DEG = math.degrees(math.asin(0.003 / 0.012) + 0.2 - 0.1)


def synthetic_csv(path, rows=200, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(0, 2, rows), rng.uniform(0, 30, rows), rng.normal(0, 1, rows),
                         rng.uniform(0.3, 1.2, rows), rng.normal(0, 0.1, rows), rng.choice([20.0, 40.0], rows)])
    y = 0.2 * X[:, 0] - 0.1 * np.cos(X[:, 3]) + 0.001 * rng.standard_normal(rows)
    Corpus(X, y).to_csv(path)
    return path


class TestExitCodes:
    def test_missing_key_exits_2_with_path(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("format_version: 1\n")
        assert main(["datagen", "--config", str(cfg)]) == 2
        assert "missing required key" in capsys.readouterr().err

    def test_nested_missing_key_path(self, tiny_config, capsys):
        text = tiny_config.read_text().replace("  inertia: 0.001\n", "", 1)
        tiny_config.write_text(text)
        assert main(["datagen", "--config", str(tiny_config)]) == 2
        assert "plant.inertia" in capsys.readouterr().err

    def test_bad_override_exits_2(self, capsys):
        assert main(["moment-arm", "--set", "routing.radius=1"]) == 2
        assert "routing.radius" in capsys.readouterr().err

    def test_jobs_must_be_positive(self):
        assert main(["moment-arm", "--jobs", "0"]) == 2

    def test_missing_corpus_exits_4(self, tmp_path):
        assert main(["train", str(tmp_path / "nope.csv"), "--model", str(tmp_path / "m.json")]) == 4

    def test_numerical_failure_exits_3(self, tmp_path, capsys):
        csv = synthetic_csv(tmp_path / "c.csv")
        model = tmp_path / "m.json"
        assert main(["train", str(csv), "--model", str(model)]) == 0
        flat = Corpus.from_csv(csv)
        flat.y[:] = 0.5  # R^2 undefined on constant targets
        flat.to_csv(tmp_path / "flat.csv")
        capsys.readouterr()
        assert main(["eval", "--model", str(model), "--corpus", str(tmp_path / "flat.csv")]) == 3
        assert "numerical failure" in capsys.readouterr().err


class TestDatagen:
    def test_writes_corpus_and_manifest(self, tiny_config, tmp_path):
        out = tmp_path / "d1"
        assert main(["datagen", "--config", str(tiny_config), "--out", str(out), "--kind", "both"]) == 0
        manifest = json.loads((out / "calibration.manifest.json").read_text())
        assert manifest["seed"] == 0 and manifest["rows"] == 1200 and manifest["format_version"] == 1
        grasp = json.loads((out / "grasp.manifest.json").read_text())
        assert grasp["rows"] == 7 * 2 * 200
        assert len(Corpus.from_csv(out / "calibration.csv")) == 1200

    def test_same_config_same_bytes(self, tiny_config, tmp_path):
        for name in ("a", "b"):
            assert main(["datagen", "--config", str(tiny_config), "--out", str(tmp_path / name)]) == 0
        for f in ("calibration.csv", "calibration.manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_seed_override_changes_output(self, tiny_config, tmp_path):
        main(["datagen", "--config", str(tiny_config), "--out", str(tmp_path / "a")])
        main(["datagen", "--config", str(tiny_config), "--out", str(tmp_path / "b"), "--set", "seeds.data=1"])
        assert (tmp_path / "a" / "calibration.csv").read_bytes() != (tmp_path / "b" / "calibration.csv").read_bytes()


class TestTrain:
    def test_round_trip_and_metrics_line(self, tmp_path, capsys):
        csv = synthetic_csv(tmp_path / "c.csv")
        model = tmp_path / "m.json"
        assert main(["train", str(csv), "--model", str(model), "--set", "gpr.restarts=2"]) == 0
        line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert line["n_train"] == 200 and set(line["hyperparams"]) >= {"signal_std", "length_scale", "noise_std"}
        from tendon_finger.gpr import load_model, save_model

        again = tmp_path / "m2.json"
        save_model(load_model(model), again)
        assert again.read_bytes() == model.read_bytes()

    def test_subsample_note(self, tmp_path, capsys):
        csv = synthetic_csv(tmp_path / "c.csv", rows=300)
        main(["train", str(csv), "--model", str(tmp_path / "m.json"), "--set", "gpr.max_rows=150",
              "--set", "gpr.search_rows=100", "--set", "gpr.restarts=2"])
        assert "seeded subsample" in capsys.readouterr().err

    def test_corrupt_line_reported(self, tmp_path, capsys):
        csv = synthetic_csv(tmp_path / "c.csv")
        lines = csv.read_text().splitlines()
        lines[9] = lines[9].replace(",", ";", 1)
        csv.write_text("\n".join(lines) + "\n")
        assert main(["train", str(csv), "--model", str(tmp_path / "m.json")]) == 2
        assert "line 10" in capsys.readouterr().err

    def test_too_small(self, tmp_path, capsys):
        csv = synthetic_csv(tmp_path / "c.csv", rows=1)
        assert main(["train", str(csv), "--model", str(tmp_path / "m.json")]) == 2


class TestExperiments:
    def test_eval_jobs_do_not_change_results(self, tiny_config, tmp_path):
        assert main(["eval", "--config", str(tiny_config), "--out", str(tmp_path / "e1")]) == 0
        assert main(["eval", "--config", str(tiny_config), "--out", str(tmp_path / "e2"), "--jobs", "2"]) == 0
        r1 = (tmp_path / "e1" / "estimation_report.json").read_bytes()
        assert r1 == (tmp_path / "e2" / "estimation_report.json").read_bytes()
        assert [j["label"] for j in json.loads(r1)["joints"]] == ["IF-PIP", "TF-CMP"]
        assert (tmp_path / "e1" / "trace_TF-CMP.csv").exists()

    def test_compare_and_force_with_trained_model(self, tiny_config, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(["datagen", "--config", str(tiny_config), "--out", str(data), "--kind", "both"]) == 0
        model = tmp_path / "m.json"
        assert main(["train", str(data / "calibration.csv"), str(data / "grasp.csv"), "--model", str(model),
                     "--config", str(tiny_config)]) == 0
        out = tmp_path / "cmp"
        assert main(["compare", "--config", str(tiny_config), "--model", str(model), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert [r["label"] for r in report["objects"]] == ["wood", "fruit", "bottle", "cup", "tissue", "plush"]
        assert (out / "traces" / "manifest.json").exists()
        assert "mean reduction" in capsys.readouterr().out
        assert main(["force-exp", "--config", str(tiny_config), "--model", str(model), "--out", str(tmp_path / "f")]) == 0
        force = json.loads((tmp_path / "f" / "force_report.json").read_text())
        assert force["format_version"] == 1 and force["samples"] > 0


class TestMomentArm:
    def test_reaches_zero_at_through_axis_angle(self, capsys):
        start = repr(THROUGH_AXIS_DEG)
        assert main(["moment-arm", "--routing", *ROUTING, "--start", start, "--stop", start]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "angle_deg,angle_rad,moment_arm,torque_per_tension,status"
        assert abs(float(out[1].split(",")[2])) < 1e-15

    def test_sweep_dips_to_zero(self):
        # |AD'| is about 0.012 m/rad, so a 0.001 deg grid lands within ~1e-7 m of zero
        _, rows = moment_arm_table(TendonRouting(0.012, 0.008, 0.2, 0.1, 0.003), np.arange(19.0, 21.0, 0.001))
        arms = np.array([r[2] for r in rows])
        assert np.nanmin(arms) < 2e-7

    def test_verify_columns(self, capsys):
        assert main(["moment-arm", "--routing", *ROUTING, "--start", "30", "--stop", "60", "--step", "10",
                     "--verify"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].endswith("triangle_minus_oracle,literal_minus_oracle")
        for line in lines[1:]:
            fields = line.split(",")
            assert len(fields) == 7 and float(fields[5]) < 1e-9

    def test_deterministic(self, capsys, tmp_path):
        args = ["moment-arm", "--start", "0", "--stop", "85", "--step", "0.5"]
        main(args + ["--out", str(tmp_path / "a.csv")])
        main(args + ["--out", str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_bad_sweep(self):
        assert main(["moment-arm", "--start", "10", "--stop", "5"]) == 2
