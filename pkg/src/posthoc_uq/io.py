"""File formats: CSV tables, JSON documents, calibrator models, dose grids.

Floats are written in shortest round-trip form (``repr``) so repeated runs
produce byte-identical files. Absent optional values are empty CSV cells and
JSON ``null``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from posthoc_uq.calibrators import IsotonicModel, PlattParams, VennAbersModel
from posthoc_uq.conformal import EPSILON_CLIP, ConformalModel
from posthoc_uq.core import InputError, PredictionRecord
from posthoc_uq.dose import DoseGrid

PREDICTION_HEADER = ("sample_id", "model", "uq_method", "fold", "raw_score", "prob", "p_value",
                     "predicted_label", "uncertainty", "true_label")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            raise ValueError(f"refusing to write non-finite value {v!r}")
        return repr(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path, required: Sequence[str] = ()) -> tuple[list, list]:
    """Header and rows of a CSV file, with every row checked for width."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    if not rows:
        raise InputError(f"{path}: empty file, header required")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
        body.append(row)
    return header, body


def _num(path, lineno, col, text, kind=float, optional=False):
    text = text.strip()
    if text == "":
        if optional:
            return None
        raise InputError(f"{path}: row {lineno}, column {col!r}: missing value")
    try:
        v = kind(text)
    except ValueError:
        raise InputError(f"{path}: row {lineno}, column {col!r}: cannot parse {text!r}") from None
    if kind is float and not math.isfinite(v):
        raise InputError(f"{path}: row {lineno}, column {col!r}: non-finite value")
    return v


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n",
                          encoding="utf-8")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from None


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------


def write_predictions(path, records: Sequence[PredictionRecord]) -> None:
    rows = (
        (r.sample_id, r.model_name, r.uq_method.value, r.fold, r.raw_score, r.prob, r.p_value,
         r.predicted_label, r.uncertainty, r.true_label)
        for r in sorted(records, key=PredictionRecord.sort_key)
    )
    write_csv(path, PREDICTION_HEADER, rows)


def read_predictions(path, require_truth: bool = False) -> list[PredictionRecord]:
    header, body = read_csv(path, PREDICTION_HEADER)
    col = {name: header.index(name) for name in PREDICTION_HEADER}
    out = []
    for lineno, row in enumerate(body, start=2):
        get = lambda c: row[col[c]]  # noqa: E731
        truth = _num(path, lineno, "true_label", get("true_label"), int, optional=True)
        if require_truth and truth is None:
            raise InputError(f"{path}: row {lineno}: true_label is required")
        try:
            out.append(PredictionRecord(
                sample_id=get("sample_id"),
                model_name=get("model"),
                uq_method=get("uq_method"),
                fold=_num(path, lineno, "fold", get("fold"), int),
                raw_score=_num(path, lineno, "raw_score", get("raw_score")),
                prob=_num(path, lineno, "prob", get("prob"), optional=True),
                p_value=_num(path, lineno, "p_value", get("p_value"), optional=True),
                predicted_label=_num(path, lineno, "predicted_label", get("predicted_label"), int),
                uncertainty=_num(path, lineno, "uncertainty", get("uncertainty")),
                true_label=truth,
            ))
        except InputError as e:
            raise InputError(f"{path}: row {lineno}: {e}") from None
    return out


# ---------------------------------------------------------------------------
# Features, labels, scores
# ---------------------------------------------------------------------------


def read_feature_matrix(path) -> tuple[list, list, np.ndarray]:
    """``(sample_ids, feature_names, values)`` from a ``sample_id,<features...>`` CSV."""
    header, body = read_csv(path, ("sample_id",))
    if header[0] != "sample_id":
        raise InputError(f"{path}: first column must be sample_id")
    names = header[1:]
    if not names:
        raise InputError(f"{path}: no feature columns")
    ids, values = [], []
    for lineno, row in enumerate(body, start=2):
        ids.append(row[0].strip())
        values.append([_num(path, lineno, names[j], row[j + 1]) for j in range(len(names))])
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate sample_id")
    return ids, names, np.array(values, dtype=float).reshape(len(ids), len(names))


def write_feature_matrix(path, sample_ids, names, values) -> None:
    values = np.asarray(values, dtype=float)
    write_csv(path, ["sample_id", *names],
              ([sid, *map(float, row)] for sid, row in zip(sample_ids, values)))


def read_labels(path) -> dict:
    header, body = read_csv(path, ("sample_id", "label"))
    i, j = header.index("sample_id"), header.index("label")
    out = {}
    for lineno, row in enumerate(body, start=2):
        lab = _num(path, lineno, "label", row[j], int)
        if lab not in (0, 1):
            raise InputError(f"{path}: row {lineno}: label must be 0 or 1")
        out[row[i].strip()] = lab
    return out


def read_scores(path, require_labels: bool = False):
    """``(sample_ids, raw_scores, labels-or-None)`` from ``sample_id,raw_score[,label]``."""
    header, body = read_csv(path, ("sample_id", "raw_score"))
    has_labels = "label" in header
    if require_labels and not has_labels:
        raise InputError(f"{path}: a label column is required")
    i, j = header.index("sample_id"), header.index("raw_score")
    ids, scores, labels = [], [], []
    for lineno, row in enumerate(body, start=2):
        s = _num(path, lineno, "raw_score", row[j])
        if not 0.0 <= s <= 1.0:
            raise InputError(f"{path}: row {lineno}: raw_score must be in [0, 1]")
        ids.append(row[i].strip())
        scores.append(s)
        if has_labels:
            lab = _num(path, lineno, "label", row[header.index("label")], int)
            if lab not in (0, 1):
                raise InputError(f"{path}: row {lineno}: label must be 0 or 1")
            labels.append(lab)
    return ids, np.array(scores, dtype=float), (np.array(labels, dtype=int) if has_labels else None)


# ---------------------------------------------------------------------------
# Dose grids
# ---------------------------------------------------------------------------

# Binary layout: V little-endian float64 doses followed by V mask bytes (0 or 1).
_DOSE_DTYPE = np.dtype("<f8")


def write_dose_binary(path, voxels, mask) -> None:
    v = np.asarray(voxels, dtype=_DOSE_DTYPE).ravel()
    m = np.asarray(mask, dtype=bool).ravel().astype(np.uint8)
    if v.size != m.size:
        raise InputError("voxels and mask differ in length")
    Path(path).write_bytes(v.tobytes() + m.tobytes())


def read_dose_grid(path, n_fractions: int = 1, alpha_beta: float = 3.0) -> DoseGrid:
    """Dose grid from ``.bin`` (see layout above) or CSV ``voxel_index,dose,mask``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        header, body = read_csv(path, ("voxel_index", "dose", "mask"))
        c = {k: header.index(k) for k in ("voxel_index", "dose", "mask")}
        trip = sorted(
            (_num(path, n, "voxel_index", r[c["voxel_index"]], int),
             _num(path, n, "dose", r[c["dose"]]),
             _num(path, n, "mask", r[c["mask"]], int))
            for n, r in enumerate(body, start=2)
        )
        idx = [t[0] for t in trip]
        if idx != list(range(len(idx))):
            raise InputError(f"{path}: voxel_index must cover 0..V-1 exactly once")
        voxels = [t[1] for t in trip]
        mask = [bool(t[2]) for t in trip]
    else:
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise InputError(f"{path}: no such file") from None
        if len(raw) % 9:
            raise InputError(f"{path}: size {len(raw)} is not a multiple of 9 bytes")
        v = len(raw) // 9
        voxels = np.frombuffer(raw[: 8 * v], dtype=_DOSE_DTYPE)
        mask = np.frombuffer(raw[8 * v:], dtype=np.uint8)
        if np.any(mask > 1):
            raise InputError(f"{path}: mask bytes must be 0 or 1")
    return DoseGrid(np.array(voxels, dtype=float), np.array(mask, dtype=bool), n_fractions, alpha_beta)


# ---------------------------------------------------------------------------
# Calibrator documents
# ---------------------------------------------------------------------------

METHODS = ("ps", "ir", "va", "cp")


def calibrator_to_json(model, *, n: int, seed: Optional[int] = None,
                       convergence_flag: bool = True) -> dict:
    meta = {"n": int(n), "seed": seed, "convergence_flag": bool(convergence_flag)}
    if isinstance(model, PlattParams):
        return {"method": "ps", "params": {"a": model.a, "b": model.b}, "fit_metadata": meta}
    if isinstance(model, IsotonicModel):
        knots = [{"score": float(s), "value": float(v), "weight": float(w)}
                 for s, v, w in zip(model.knot_scores, model.knot_values, model.knot_weights)]
        return {"method": "ir", "knots": knots, "fit_metadata": meta}
    if isinstance(model, VennAbersModel):
        pairs = [{"score": float(s), "label": int(y)} for s, y in zip(model.scores, model.labels)]
        return {"method": "va", "calibration_pairs": pairs, "fit_metadata": meta}
    if isinstance(model, ConformalModel):
        return {"method": "cp", "alphas": [float(a) for a in model.alphas],
                "epsilon_clip": model.epsilon_clip, "fit_metadata": meta}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def calibrator_from_json(doc: dict):
    try:
        method = doc["method"]
        if method == "ps":
            return PlattParams(float(doc["params"]["a"]), float(doc["params"]["b"]),
                               bool(doc.get("fit_metadata", {}).get("convergence_flag", True)))
        if method == "ir":
            k = doc["knots"]
            return IsotonicModel([d["score"] for d in k], [d["value"] for d in k],
                                 [d["weight"] for d in k])
        if method == "va":
            p = doc["calibration_pairs"]
            return VennAbersModel([d["score"] for d in p], [d["label"] for d in p])
        if method == "cp":
            return ConformalModel(doc["alphas"], float(doc.get("epsilon_clip", EPSILON_CLIP)))
    except (KeyError, TypeError) as e:
        raise InputError(f"malformed calibrator document: {e}") from None
    raise InputError(f"unknown calibrator method {doc.get('method')!r}")
