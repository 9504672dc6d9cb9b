"""Command-line entry point.

Subcommands: ``datagen``, ``train``, ``eval``, ``compare``, ``force-exp``
and ``moment-arm``.  Every run is driven by a YAML configuration (the
packaged default unless ``--config`` is given); ``--set key.path=value``
overrides single values.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import gpr
from .config import load_config
from .datagen import Corpus, run_calibration, run_grasp_collection, split, write_corpus
from .errors import DataError, NumericalError, ValidationError
from .geometry import TendonRouting, moment_arm
from .harness import (
    dump_json,
    format_comparison_table,
    format_estimation_table,
    run_estimation_experiment,
    run_fingertip_force_experiment,
    run_grasp_comparison,
    train_comparison_model,
)

log = logging.getLogger("tendon_finger")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _config(args):
    return load_config(args.config, args.overrides)


def _out_dir(args, cfg, default_sub):
    path = args.out or os.path.join(cfg.output_dir, default_sub)
    os.makedirs(path, exist_ok=True)
    return path


def cmd_datagen(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, "data")
    finger = cfg.finger()
    extra = {"joint": cfg.joint, "seed": cfg.seeds.data}
    if args.kind in ("calibration", "both"):
        corpus = run_calibration(cfg.protocol, finger, cfg.noise, cfg.controllers)
        m = write_corpus(corpus, os.path.join(out, "calibration.csv"), os.path.join(out, "calibration.manifest.json"),
                         extra)
        print(f"calibration: {m['rows']} rows -> {os.path.join(out, 'calibration.csv')} (sha256 {m['sha256'][:12]})")
    if args.kind in ("grasp", "both"):
        corpus = run_grasp_collection([None] + list(cfg.objects), cfg.grasp.trials, cfg.grasp.trial_duration, finger,
                                      cfg.noise, cfg.controllers, cfg.grasp.temperatures, seed=cfg.seeds.data + 1)
        m = write_corpus(corpus, os.path.join(out, "grasp.csv"), os.path.join(out, "grasp.manifest.json"), extra)
        print(f"grasp: {m['rows']} rows -> {os.path.join(out, 'grasp.csv')} (sha256 {m['sha256'][:12]})")
    return EXIT_OK


def _read_corpora(paths) -> Corpus:
    return Corpus.concat([Corpus.from_csv(p) for p in paths])


def cmd_train(args) -> int:
    cfg = _config(args)
    corpus = _read_corpora(args.corpus)
    if len(corpus) < 2:
        raise DataError(f"corpus has {len(corpus)} rows; at least 2 are needed to fit")
    if cfg.gpr.max_rows is not None and len(corpus) > cfg.gpr.max_rows:
        log.info("note: %d rows exceed the cap of %d; fitting on a seeded subsample (seed %d)",
                 len(corpus), cfg.gpr.max_rows, cfg.gpr.seed)
    model = gpr.fit(corpus.X, corpus.y, cfg.gpr)
    gpr.save_model(model, args.model)
    line = {"joint": args.joint, "rows": len(corpus), "n_train": model.n_train, "lml": model.lml,
            "hyperparams": model.hyperparams.as_dict(), "jitter": model.jitter, "model": args.model}
    print(json.dumps(line, sort_keys=True))
    return EXIT_OK


def _eval_joint(cfg, spec):
    corpus = run_calibration(cfg.protocol, spec.finger(), cfg.noise, cfg.controllers)
    train, test = split(corpus, cfg.test_fraction, cfg.seeds.split)
    return run_estimation_experiment({spec.label: (train, test)}, cfg.gpr, cfg.max_test, seed=cfg.seeds.split)[0]


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.model:
        if not args.corpus:
            raise ValidationError("--model needs at least one --corpus to score")
        model = gpr.load_model(args.model)
        corpus = _read_corpora(args.corpus)
        metrics = gpr.evaluate(model, corpus.X, corpus.y)
        print(json.dumps({"model": args.model, "rows": len(corpus), **metrics}, sort_keys=True))
        return EXIT_OK
    out = _out_dir(args, cfg, "eval")
    specs = cfg.catalog()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_eval_joint, [cfg] * len(specs), specs))
    else:
        results = [_eval_joint(cfg, s) for s in specs]
    report = {"format_version": 1, "kind": "estimation", "joints": [r.as_dict() for r in results]}
    dump_json(report, os.path.join(out, "estimation_report.json"))
    for r in results:
        header = ("truth", "mean", "std")
        table = np.column_stack([r.trace[k] for k in header])
        with open(os.path.join(out, f"trace_{r.label}.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            fh.writelines(",".join(map(repr, row)) + "\n" for row in table.tolist())
    print(format_estimation_table(results))
    return EXIT_OK


def _comparison_model(args, cfg):
    if args.model:
        return gpr.load_model(args.model)
    log.info("no --model given; training the estimator from calibration and grasp data")
    return train_comparison_model(cfg.joint_spec(), cfg.objects, cfg.protocol, cfg.noise, cfg.gpr,
                                  cfg.grasp.trials, cfg.grasp.trial_duration, seed=cfg.seeds.data)


def cmd_compare(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, "compare")
    model = _comparison_model(args, cfg)
    report = run_grasp_comparison(cfg.finger(), cfg.objects, model, cfg.comparison, cfg.controllers, cfg.noise,
                                  trace_dir=os.path.join(out, "traces"))
    dump_json(report, os.path.join(out, "report.json"))
    print(format_comparison_table(report))
    return EXIT_OK


def cmd_force_exp(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, "force")
    model = _comparison_model(args, cfg)
    result = run_fingertip_force_experiment(model, cfg.finger(), cfg.objects, cfg.comparison, cfg.controllers,
                                            cfg.noise)
    result = {"format_version": 1, "kind": "fingertip_force", **result}
    dump_json(result, os.path.join(out, "force_report.json"))
    print(f"fingertip force error: mean {result['mean_error']:.4f} N, peak {result['peak_error']:.4f} N, "
          f"mse {result['mse']:.4g} N^2 over {result['samples']} samples")
    return EXIT_OK


def moment_arm_table(routing: TendonRouting, angles_deg, verify: bool = False):
    """Rows of the moment-arm sweep; infeasible angles get NaNs and a status."""
    header = ["angle_deg", "angle_rad", "moment_arm", "torque_per_tension", "status"]
    if verify:
        header += ["triangle_minus_oracle", "literal_minus_oracle"]
    rows = []
    for deg in angles_deg:
        rad = float(np.deg2rad(deg))
        try:
            arm = float(moment_arm(routing, rad).moment_arm)
            status = "ok"
        except NumericalError as err:
            arm, status = float("nan"), type(err).__name__
        row = [float(deg), rad, arm, arm, status]
        if verify:
            for method in ("triangle", "literal"):
                try:
                    row.append(abs(float(moment_arm(routing, rad, method).moment_arm) - arm))
                except NumericalError:
                    row.append(float("nan"))
        rows.append(row)
    return header, rows


def cmd_moment_arm(args) -> int:
    if args.routing:
        routing = TendonRouting(*args.routing)
    else:
        routing = _config(args).routing
    if not args.step > 0 or args.stop < args.start:
        raise ValidationError("sweep needs step > 0 and stop >= start")
    n = int(np.floor((args.stop - args.start) / args.step + 1e-9)) + 1
    angles = args.start + args.step * np.arange(n)
    header, rows = moment_arm_table(routing, angles, args.verify)
    text = ",".join(header) + "\n" + "".join(",".join(v if isinstance(v, str) else repr(v) for v in r) + "\n"
                                             for r in rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    bad = sum(r[4] != "ok" for r in rows)
    if bad:
        log.warning("%d of %d angles infeasible", bad, len(rows))
    if args.verify:
        diffs = np.array([r[6] for r in rows], dtype=float)
        finite = diffs[np.isfinite(diffs)]
        log.info("max |literal - oracle| = %s over %d feasible angles",
                 repr(float(finite.max())) if finite.size else "n/a (literal path infeasible everywhere)",
                 finite.size)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (default: packaged default)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY.PATH=VALUE",
                        help="override one configuration value (repeatable)")
    common.add_argument("--jobs", type=int, default=1, help="cap on parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tendon-finger", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("datagen", parents=[common], help="simulate calibration and grasp corpora")
    s.add_argument("--out", help="output directory (default: <output_dir>/data)")
    s.add_argument("--kind", choices=("calibration", "grasp", "both"), default="calibration")
    s.set_defaults(func=cmd_datagen)

    s = sub.add_parser("train", parents=[common], help="fit a GPR torque model on corpus CSVs")
    s.add_argument("corpus", nargs="+", help="corpus CSV file(s)")
    s.add_argument("--joint", default="IF-PIP", help="joint label recorded with the model")
    s.add_argument("--model", required=True, help="output model file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="per-joint estimation experiment, or score one model")
    s.add_argument("--model", help="score this model instead of running the experiment")
    s.add_argument("--corpus", nargs="*", default=[], help="corpus CSV(s) to score --model on")
    s.add_argument("--out", help="output directory (default: <output_dir>/eval)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", parents=[common], help="PID vs admittance grasp comparison")
    s.add_argument("--model", help="trained estimator (trained from the config when omitted)")
    s.add_argument("--out", help="output directory (default: <output_dir>/compare)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("force-exp", parents=[common], help="fingertip force estimation error")
    s.add_argument("--model", help="trained estimator (trained from the config when omitted)")
    s.add_argument("--out", help="output directory (default: <output_dir>/force)")
    s.set_defaults(func=cmd_force_exp)

    s = sub.add_parser("moment-arm", parents=[common], help="moment-arm sweep as CSV")
    s.add_argument("--routing", type=float, nargs=5,
                   metavar=("PULLEY_LEN", "ANCHOR_LEN", "ANCHOR_ANGLE", "PULLEY_ANGLE", "RADIUS"),
                   help="routing (lengths in m, angles in rad); default from the config")
    s.add_argument("--start", type=float, default=0.0, help="first joint angle, degrees")
    s.add_argument("--stop", type=float, default=90.0, help="last joint angle, degrees")
    s.add_argument("--step", type=float, default=1.0, help="angle step, degrees")
    s.add_argument("--verify", action="store_true", help="append cross-check columns against the oracle")
    s.add_argument("--out", help="CSV path (default: standard output)")
    s.set_defaults(func=cmd_moment_arm)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s",
                        stream=sys.stderr, force=True)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"I/O failure: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
