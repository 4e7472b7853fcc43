"""Command-line entry point: ``posthoc-uq <command> [flags]``.

Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from posthoc_uq import io
from posthoc_uq.calibrators import (
    VennAbersModel,
    isotonic_predict,
    pava_fit,
    platt_apply,
    platt_fit,
    venn_abers_predict,
)
from posthoc_uq.conformal import ConformalModel, conformal_predict
from posthoc_uq.core import Dataset, InputError, PredictionRecord, UQMethod
from posthoc_uq.dose import (
    DEFAULT_VX_LEVELS,
    dosimetric_features,
    minmax_fit,
    minmax_transform,
    prune_from_correlation,
    spearman_matrix,
)
from posthoc_uq.harness import EXTERNAL, RunConfig, SynthSpec, distort_scores, loocv_run, synth_generate
from posthoc_uq.metrics import DEFAULT_BINS, DEFAULT_CUTOFFS, DEFAULT_LEVELS
from posthoc_uq.report import build_report, write_report

log = logging.getLogger("posthoc_uq")

METHOD_TAGS = {"ps": UQMethod.PS, "ir": UQMethod.IR, "va": UQMethod.VA, "cp": UQMethod.CP}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> None:
    spec = SynthSpec(n=args.n, d=args.d, class_sep=args.class_sep, base_rate=args.base_rate,
                     distortion_gamma=args.gamma, seed=args.seed)
    ds = synth_generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_feature_matrix(out / "features.csv", ds.sample_ids, ds.feature_names, ds.features)
    io.write_csv(out / "labels.csv", ("sample_id", "label"), zip(ds.sample_ids, ds.labels))
    scores = distort_scores(ds.oracle_posterior, spec.distortion_gamma)
    io.write_csv(out / "oracle.csv", ("sample_id", "posterior", "raw_score"),
                 zip(ds.sample_ids, ds.oracle_posterior, scores))
    log.info("wrote %d samples to %s", ds.n, out)


def cmd_features(args) -> None:
    if not args.features and not args.dose:
        raise InputError("give --features and/or --dose")
    ids, names, blocks = None, [], []
    if args.dose:
        rows = []
        dose_ids = []
        for path in args.dose:
            grid = io.read_dose_grid(path, args.n_fractions, args.alpha_beta)
            feats = dosimetric_features(grid, args.vx_levels, args.geud_a,
                                        convert_eqd2=not args.no_eqd2)
            rows.append(list(feats.values()))
            dose_ids.append(Path(path).stem)
        names += list(feats.keys())
        ids = dose_ids
        blocks.append(np.array(rows, dtype=float))
    if args.features:
        f_ids, f_names, f_vals = io.read_feature_matrix(args.features)
        if ids is None:
            ids = f_ids
            blocks.append(f_vals)
        else:
            pos = {s: i for i, s in enumerate(f_ids)}
            missing = [s for s in ids if s not in pos]
            if missing:
                raise InputError(f"{args.features}: no row for dose sample(s) {missing[:5]}")
            blocks.append(f_vals[[pos[s] for s in ids]])
        names += f_names
    if len(set(names)) != len(names):
        raise InputError("duplicate feature names after merging inputs")
    values = np.hstack(blocks)
    params = minmax_fit(values)
    scaled = minmax_transform(values, params)
    if scaled.shape[1] > 1:
        kept, drops = prune_from_correlation(spearman_matrix(scaled), args.threshold)
    else:
        kept, drops = [0], []
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_feature_matrix(out, ids, [names[j] for j in kept], scaled[:, kept])
    sidecar = {
        "threshold": args.threshold,
        "kept": [names[j] for j in kept],
        "dropped": [{"name": names[d.column], "max_abs_rho": d.max_abs_rho,
                     "partner": names[d.partner]} for d in drops],
        "scale_params": {n: {"min": float(lo), "max": float(hi)}
                         for n, (lo, hi) in zip(names, params)},
        "eqd2": bool(args.dose) and not args.no_eqd2,
    }
    io.write_json(out.with_name(out.stem + ".provenance.json"), sidecar)
    log.info("kept %d of %d features", len(kept), len(names))


def _load_dataset(features_path, labels_path) -> Dataset:
    ids, names, values = io.read_feature_matrix(features_path)
    labels = io.read_labels(labels_path)
    missing = [s for s in ids if s not in labels]
    if missing:
        raise InputError(f"{labels_path}: no label for sample(s) {missing[:5]}")
    return Dataset(values, [labels[s] for s in ids], names, ids)


def cmd_run(args) -> None:
    raw = io.read_json(args.config)
    config = RunConfig.from_dict(raw)
    if args.n_jobs is not None:
        config = dataclasses.replace(config, n_jobs=args.n_jobs)
    ds = _load_dataset(args.features, args.labels)
    external = {}
    for spec in config.models:
        if spec.kind == EXTERNAL:
            path = Path(spec.scores)
            if not path.is_absolute():
                path = Path(args.config).parent / path
            s_ids, scores, _ = io.read_scores(path)
            pos = dict(zip(s_ids, scores))
            missing = [s for s in ds.sample_ids if s not in pos]
            if missing:
                raise InputError(f"{path}: no score for sample(s) {missing[:5]}")
            external[spec.name] = np.array([pos[s] for s in ds.sample_ids])
    t0 = time.perf_counter()
    result = loocv_run(ds, config, external)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_predictions(out / "predictions.csv", result.records)
    io.write_json(out / "run_meta.json", {
        "seed": config.seed,
        "n_samples": ds.n,
        "n_records": len(result.records),
        "calibration_mode": config.calibration_mode,
        "warnings": result.warnings,
        "skipped_folds": result.skipped_folds,
        "timings": {"total_seconds": time.perf_counter() - t0, **result.timings},
        "selected_params": result.selected_params,
        "config": config.to_dict(),
    })
    for w in result.warnings:
        log.warning(w)
    log.info("wrote %d records to %s", len(result.records), out / "predictions.csv")


def _report(args, tables: bool) -> None:
    records = io.read_predictions(args.predictions, require_truth=True)
    rep = build_report(records, ace_bins=args.ace_bins, cutoffs=args.cutoffs,
                       levels=args.levels, reliability_mode=args.reliability_mode)
    rep["source"] = {"predictions": str(args.predictions)}
    meta = Path(args.predictions).with_name("run_meta.json")
    if meta.exists():
        rep["source"]["calibration_mode"] = io.read_json(meta).get("calibration_mode")
    for p in write_report(args.out, rep, tables):
        log.info("wrote %s", p)


def cmd_metrics(args) -> None:
    _report(args, tables=False)


def cmd_report(args) -> None:
    _report(args, tables=True)


def cmd_calibrate(args) -> None:
    _, scores, labels = io.read_scores(args.scores, require_labels=True)
    flag = True
    if args.method == "ps":
        model = platt_fit(scores, labels, smooth_targets=args.platt_smoothing)
        flag = model.converged
    elif args.method == "ir":
        model = pava_fit(scores, labels)
    elif args.method == "va":
        model = VennAbersModel(scores, labels)
    else:
        model = ConformalModel.from_scores(scores)
    doc = io.calibrator_to_json(model, n=scores.size, seed=args.seed, convergence_flag=flag)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    io.write_json(args.out, doc)


def cmd_apply(args) -> None:
    doc = io.read_json(args.model)
    method = doc.get("method")
    if method not in METHOD_TAGS:
        raise InputError(f"{args.model}: unknown calibrator method {method!r}")
    if args.mode == "probability" and method == "cp":
        raise InputError("a conformal model outputs p-values, not probabilities")
    if args.mode == "p-value" and method != "cp":
        raise InputError(f"a {method} model outputs probabilities, not p-values")
    model = io.calibrator_from_json(doc)
    ids, scores, labels = io.read_scores(args.scores)
    records = []
    for k, (sid, f) in enumerate(zip(ids, scores)):
        if method == "ps":
            out = platt_apply(model, f)
        elif method == "ir":
            out = isotonic_predict(model, f)
        elif method == "va":
            out = venn_abers_predict(model, f)[2]
        else:
            out = conformal_predict(model, f).p_value
        records.append(PredictionRecord.from_output(
            sample_id=sid, model_name=args.model_name, uq_method=METHOD_TAGS[method], fold=0,
            raw_score=f, output=out, true_label=None if labels is None else labels[k]))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    io.write_predictions(args.out, records)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="posthoc-uq", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a Gaussian dataset with known posteriors")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--d", type=int, default=5)
    s.add_argument("--class-sep", type=float, default=1.0)
    s.add_argument("--base-rate", type=float, default=0.5)
    s.add_argument("--gamma", type=float, default=1.0, help="distortion of oracle.csv raw_score")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("features", help="dose features, 0-1 scaling, correlation pruning")
    f.add_argument("--features", help="CSV sample_id,<features...>")
    f.add_argument("--dose", nargs="+", help="dose grids (.bin or .csv); sample_id = file stem")
    f.add_argument("--n-fractions", type=int, default=1)
    f.add_argument("--alpha-beta", type=float, default=3.0)
    f.add_argument("--no-eqd2", action="store_true", help="use physical dose as given")
    f.add_argument("--vx-levels", type=_floats, default=list(DEFAULT_VX_LEVELS))
    f.add_argument("--geud-a", type=float, default=1.0)
    f.add_argument("--threshold", type=float, default=0.8)
    f.add_argument("--out", required=True, help="output feature CSV")
    f.set_defaults(func=cmd_features)

    r = sub.add_parser("run", help="leave-one-out experiment")
    r.add_argument("--features", required=True)
    r.add_argument("--labels", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--n-jobs", type=int)
    r.set_defaults(func=cmd_run)

    for name, func, helptext in (("metrics", cmd_metrics, "metrics.json only"),
                                 ("report", cmd_report, "metrics.json plus CSV tables")):
        m = sub.add_parser(name, help=helptext)
        m.add_argument("--predictions", required=True)
        m.add_argument("--out", required=True, help="output directory")
        m.add_argument("--ace-bins", type=int, default=DEFAULT_BINS)
        m.add_argument("--cutoffs", type=_floats, default=list(DEFAULT_CUTOFFS))
        m.add_argument("--levels", type=_floats, default=list(DEFAULT_LEVELS))
        m.add_argument("--reliability-mode", choices=("equal-frequency", "equal-width"),
                       default="equal-frequency")
        m.set_defaults(func=func)

    c = sub.add_parser("calibrate", help="fit a calibrator on sample_id,raw_score,label")
    c.add_argument("--scores", required=True)
    c.add_argument("--method", required=True, choices=sorted(METHOD_TAGS))
    c.add_argument("--out", required=True, help="calibrator JSON")
    c.add_argument("--seed", type=int)
    c.add_argument("--platt-smoothing", action="store_true")
    c.set_defaults(func=cmd_calibrate)

    a = sub.add_parser("apply", help="apply a calibrator JSON to sample_id,raw_score")
    a.add_argument("--model", required=True)
    a.add_argument("--scores", required=True)
    a.add_argument("--out", required=True, help="output PredictionRecord CSV")
    a.add_argument("--mode", choices=("probability", "p-value"))
    a.add_argument("--model-name", default=EXTERNAL)
    a.set_defaults(func=cmd_apply)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors exit 1, --help exits 0
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (InputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
