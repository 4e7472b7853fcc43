"""Per-group metric reports and their CSV / JSON emission."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from posthoc_uq.core import InputError, PredictionRecord
from posthoc_uq.harness import group_records
from posthoc_uq.io import write_csv, write_json
from posthoc_uq.metrics import (
    DEFAULT_BINS,
    DEFAULT_CUTOFFS,
    DEFAULT_LEVELS,
    coverage_curve,
    evaluate,
    reliability_bins,
    threshold_table,
)

CP_NOTE = "ACE and reliability bins omitted: conformal outputs are p-values, not probabilities"


def build_report(records: Sequence[PredictionRecord], *, ace_bins: int = DEFAULT_BINS,
                 cutoffs=DEFAULT_CUTOFFS, levels=DEFAULT_LEVELS,
                 reliability_mode: str = "equal-frequency") -> dict:
    if not records:
        raise InputError("no prediction records")
    if any(r.true_label is None for r in records):
        raise InputError("every record needs a true_label to be evaluated")
    groups = []
    for (model, method), recs in group_records(records).items():
        is_cp = recs[0].uq_method.outputs_p_value
        notes = []
        full = evaluate(recs, None if is_cp else ace_bins)
        rel = None
        if is_cp:
            notes.append(CP_NOTE)
        else:
            if full.ace is None:
                notes.append(f"ACE omitted: {len(recs)} records < {ace_bins} ranges")
            rel = [asdict(b) for b in reliability_bins([r.prob for r in recs],
                                                       [r.true_label for r in recs],
                                                       ace_bins, reliability_mode)]
        groups.append({
            "model": model,
            "uq_method": method,
            "full": full.to_dict(),
            "coverage_curve": [asdict(p) for p in coverage_curve(recs, levels)],
            "threshold_table": [asdict(t) for t in threshold_table(recs, cutoffs)],
            "reliability": rel,
            "notes": notes,
        })
    return {
        "settings": {"ace_bins": ace_bins, "cutoffs": list(cutoffs), "levels": list(levels),
                     "reliability_mode": reliability_mode},
        "groups": groups,
    }


def write_report(out_dir, report: dict, tables: bool = True) -> list[Path]:
    """Write ``metrics.json`` and, with ``tables``, the three CSV tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.json"]
    write_json(written[0], report)
    if not tables:
        return written
    g = report["groups"]
    write_csv(out / "coverage_curve.csv", ("model", "uq_method", "level", "n", "auroc", "auprc"),
              ((x["model"], x["uq_method"], p["level"], p["n"], p["auroc"], p["auprc"])
               for x in g for p in x["coverage_curve"]))
    write_csv(out / "threshold_table.csv",
              ("model", "uq_method", "cutoff", "coverage", "auroc", "auprc"),
              ((x["model"], x["uq_method"], t["cutoff"], t["coverage"], t["auroc"], t["auprc"])
               for x in g for t in x["threshold_table"]))
    write_csv(out / "reliability.csv",
              ("model", "uq_method", "lo", "hi", "mean_conf", "frac_positive", "count"),
              ((x["model"], x["uq_method"], b["lo"], b["hi"], b["mean_conf"], b["frac_positive"],
                b["count"]) for x in g for b in (x["reliability"] or ())))
    written += [out / n for n in ("coverage_curve.csv", "threshold_table.csv", "reliability.csv")]
    return written
