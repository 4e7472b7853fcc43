"""Leave-one-out experiment harness and synthetic data with known posteriors."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import jsonschema
import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

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
from posthoc_uq.metrics import DEFAULT_BINS, DEFAULT_CUTOFFS, DEFAULT_LEVELS
from posthoc_uq.models import DEFAULT_GRIDS, LR, MODEL_KINDS, RF, fit_model, grid_search_cv  # noqa: F401

log = logging.getLogger(__name__)

EXTERNAL = "external"
CALIBRATION_MODES = ("oof", "resubstitution")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    n: int = 200
    d: int = 5
    class_sep: float = 1.0
    base_rate: float = 0.5
    distortion_gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 10 or self.d < 1:
            raise InputError("synthetic data needs n >= 10 and d >= 1")
        if not 0.0 < self.base_rate < 1.0:
            raise InputError("base_rate must lie in the open interval (0, 1)")
        if not self.distortion_gamma > 0:
            raise InputError("distortion_gamma must be > 0")


def oracle_posterior(X, class_sep: float, base_rate: float) -> np.ndarray:
    """P(y=1 | x) for unit-covariance Gaussians centred at +-(class_sep/2) e1."""
    X = np.asarray(X, dtype=float)
    logit = np.log(base_rate / (1.0 - base_rate)) + class_sep * X[:, 0]
    return expit(logit)


def synth_generate(spec: SynthSpec) -> Dataset:
    """Gaussian two-class data; labels are drawn from the closed-form posterior."""
    rng = np.random.default_rng(spec.seed)
    component = rng.random(spec.n) < spec.base_rate
    X = rng.standard_normal((spec.n, spec.d))
    X[:, 0] += np.where(component, 0.5, -0.5) * spec.class_sep
    post = oracle_posterior(X, spec.class_sep, spec.base_rate)
    y = (rng.random(spec.n) < post).astype(int)
    ids = tuple(f"s{i:05d}" for i in range(spec.n))
    return Dataset(X, y, tuple(f"x{j}" for j in range(spec.d)), ids, post)


def distort_scores(probs, gamma: float):
    """``p^g / (p^g + (1-p)^g)``: monotone, fixes 0, 0.5 and 1; ``g = 1`` is the identity."""
    if not gamma > 0:
        raise InputError("gamma must be > 0")
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise InputError("probabilities must lie in [0, 1]")
    if gamma == 1:
        return p.copy() if p.ndim else float(p)
    # in log space to stay exact at the endpoints
    with np.errstate(divide="ignore"):
        lp, lq = gamma * np.log(p), gamma * np.log1p(-p)
    out = expit(lp - lq)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["models", "uq_methods"],
    "properties": {
        "models": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": [LR, RF, EXTERNAL]},
                    "name": {"type": "string", "minLength": 1},
                    "grid": {"type": "array", "minItems": 1, "items": {"type": "object"}},
                    "scores": {"type": "string"},
                },
            },
        },
        "uq_methods": {
            "type": "array",
            "minItems": 1,
            "uniqueItems": True,
            "items": {"enum": ["UC", "PS", "IR", "VAs", "CP"]},
        },
        "seed": {"type": "integer"},
        "calibration_folds": {"type": "integer", "minimum": 2},
        "calibration_mode": {"enum": list(CALIBRATION_MODES)},
        "selection_criterion": {"enum": ["auroc", "auprc"]},
        "platt_smoothing": {"type": "boolean"},
        "ace_bins": {"type": "integer", "minimum": 1},
        "cutoffs": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "coverage_levels": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        },
        "n_jobs": {"type": "integer"},
    },
}


def validate_config(raw: dict) -> list[str]:
    """Schema violations as ``path: message`` strings (empty when valid)."""
    v = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = []
    for e in sorted(v.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        errors.append(f"{path}: {e.message}")
    return errors


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    grid: tuple = ()
    name: str = ""
    scores: Optional[str] = None  # path of external out-of-sample scores

    def __post_init__(self):
        if self.kind not in MODEL_KINDS + (EXTERNAL,):
            raise InputError(f"unknown model kind {self.kind!r}")
        if self.kind == EXTERNAL and not self.scores:
            raise InputError("external models need a scores file")
        grid = tuple(dict(g) for g in self.grid) if self.grid else \
            tuple(DEFAULT_GRIDS.get(self.kind, ()))
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "name", self.name or self.kind.upper())


@dataclass(frozen=True)
class RunConfig:
    models: tuple
    uq_methods: tuple = tuple(UQMethod)
    seed: int = 0
    calibration_folds: int = 3
    calibration_mode: str = "oof"
    selection_criterion: str = "auroc"
    platt_smoothing: bool = False
    ace_bins: int = DEFAULT_BINS
    cutoffs: tuple = DEFAULT_CUTOFFS
    coverage_levels: tuple = DEFAULT_LEVELS
    n_jobs: int = 1

    def __post_init__(self):
        if not self.models:
            raise InputError("at least one model is required")
        methods = tuple(UQMethod.parse(m) if isinstance(m, str) else m for m in self.uq_methods)
        if not methods:
            raise InputError("at least one UQ method is required")
        if self.calibration_mode not in CALIBRATION_MODES:
            raise InputError(f"calibration_mode must be one of {CALIBRATION_MODES}")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise InputError("model names must be unique")
        object.__setattr__(self, "uq_methods", methods)
        object.__setattr__(self, "cutoffs", tuple(float(c) for c in self.cutoffs))
        object.__setattr__(self, "coverage_levels", tuple(float(c) for c in self.coverage_levels))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        errors = validate_config(raw)
        if errors:
            raise InputError("invalid run config:\n  " + "\n  ".join(errors))
        kw = dict(raw)
        kw["models"] = tuple(
            ModelSpec(m["kind"], tuple(m.get("grid", ())), m.get("name", ""), m.get("scores"))
            for m in raw["models"]
        )
        for key in ("uq_methods", "cutoffs", "coverage_levels"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["uq_methods"] = [m.value for m in self.uq_methods]
        d["models"] = [
            {k: v for k, v in (("kind", m.kind), ("name", m.name), ("grid", list(m.grid)),
                               ("scores", m.scores)) if v is not None}
            for m in self.models
        ]
        d["cutoffs"] = list(self.cutoffs)
        d["coverage_levels"] = list(self.coverage_levels)
        return d


# ---------------------------------------------------------------------------
# Leave-one-out run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    records: list
    skipped_folds: list = field(default_factory=list)
    selected_params: dict = field(default_factory=dict)  # model name -> per-fold params
    timings: dict = field(default_factory=dict)

    @property
    def warnings(self) -> list[str]:
        return [f"fold {i} skipped: single-class training split" for i in self.skipped_folds]


def fold_seed(seed: int, fold: int) -> int:
    return int(seed) ^ int(fold)


def uq_records(method: UQMethod, cal_scores, cal_labels, test_score: float, *, sample_id,
               model_name, fold, true_label=None, platt_smoothing=False) -> PredictionRecord:
    """Fit one post-hoc method on calibration pairs and apply it to one test score."""
    f = float(test_score)
    if method is UQMethod.UC:
        out = f
    elif method is UQMethod.PS:
        out = platt_apply(platt_fit(cal_scores, cal_labels, smooth_targets=platt_smoothing), f)
    elif method is UQMethod.IR:
        out = isotonic_predict(pava_fit(cal_scores, cal_labels), f)
    elif method is UQMethod.VA:
        out = venn_abers_predict(VennAbersModel(cal_scores, cal_labels), f)[2]
    else:
        out = conformal_predict(ConformalModel.from_scores(cal_scores), f).p_value
    return PredictionRecord.from_output(sample_id=sample_id, model_name=model_name,
                                        uq_method=method, fold=fold, raw_score=f, output=out,
                                        true_label=true_label)


def _run_fold(i: int, dataset: Dataset, config: RunConfig, external: dict):
    X, y = dataset.features, dataset.labels
    train = np.ones(dataset.n, dtype=bool)
    train[i] = False
    ytr = y[train]
    if ytr.min() == ytr.max():
        return i, None, {}
    seed = fold_seed(config.seed, i)
    sid = dataset.sample_ids[i]
    records, params = [], {}
    for spec in config.models:
        if spec.kind == EXTERNAL:
            scores = external[spec.name]
            cal, test = scores[train], float(scores[i])
            params[spec.name] = None
        else:
            gs = grid_search_cv(X[train], ytr, spec.kind, spec.grid, k=config.calibration_folds,
                                seed=seed, criterion=config.selection_criterion)
            model = fit_model(spec.kind, X[train], ytr, gs.best_params, seed)
            test = float(np.clip(model.predict(X[i]), 0.0, 1.0))
            if config.calibration_mode == "oof":
                cal = gs.oof_scores
            else:
                cal = np.clip(model.predict(X[train]), 0.0, 1.0)
            params[spec.name] = gs.best_params
        for method in config.uq_methods:
            records.append(uq_records(method, cal, ytr, test, sample_id=sid,
                                      model_name=spec.name, fold=i, true_label=int(y[i]),
                                      platt_smoothing=config.platt_smoothing))
    return i, records, params


def loocv_run(dataset: Dataset, config: RunConfig, external_scores: Optional[dict] = None) -> RunResult:
    """Leave-one-out evaluation of every (model, UQ method) pair.

    For each held-out row, each model is tuned by inner stratified CV on the
    remaining rows, refit with the winning parameters, and scored on the held-out
    row. Post-hoc methods are fit on calibration pairs from the training split
    (out-of-fold inner-CV scores by default) and applied to that score.

    ``external_scores`` maps external model names to length-N arrays of
    out-of-sample scores aligned with ``dataset``.
    """
    if dataset.n < 4:
        raise InputError("leave-one-out needs at least 4 samples")
    external = {}
    for spec in config.models:
        if spec.kind == EXTERNAL:
            s = None if external_scores is None else external_scores.get(spec.name)
            if s is None:
                raise InputError(f"no scores supplied for external model {spec.name!r}")
            s = np.asarray(s, dtype=float)
            if s.shape != (dataset.n,) or np.any(s < 0) or np.any(s > 1):
                raise InputError(f"external scores for {spec.name!r} must be N values in [0, 1]")
            external[spec.name] = s
    t0 = time.perf_counter()
    if config.n_jobs == 1:
        results = [_run_fold(i, dataset, config, external) for i in range(dataset.n)]
    else:
        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_run_fold)(i, dataset, config, external) for i in range(dataset.n))
    result = RunResult(records=[])
    for i, recs, params in sorted(results, key=lambda r: r[0]):
        if recs is None:
            log.warning("fold %d skipped: single-class training split", i)
            result.skipped_folds.append(i)
            continue
        result.records.extend(recs)
        for name, p in params.items():
            result.selected_params.setdefault(name, {})[dataset.sample_ids[i]] = p
    result.records.sort(key=PredictionRecord.sort_key)
    result.timings["loocv_seconds"] = time.perf_counter() - t0
    return result


def group_records(records: Sequence[PredictionRecord]) -> dict:
    """Records keyed by ``(model_name, uq_method value)``, in sorted key order."""
    groups = {}
    for r in sorted(records, key=PredictionRecord.sort_key):
        groups.setdefault((r.model_name, r.uq_method.value), []).append(r)
    return groups
