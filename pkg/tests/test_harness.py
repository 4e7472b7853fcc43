import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from posthoc_uq.calibrators import pava_fit, platt_apply, platt_fit
from posthoc_uq.core import Dataset, InputError, UQMethod
from posthoc_uq.harness import (
    ModelSpec,
    RunConfig,
    SynthSpec,
    distort_scores,
    fold_seed,
    group_records,
    loocv_run,
    oracle_posterior,
    synth_generate,
    uq_records,
    validate_config,
)
from posthoc_uq.metrics import ace

SMALL_LR = ModelSpec("lr", ({"l2": 0.1}, {"l2": 10.0}))
SMALL_RF = ModelSpec("rf", ({"n_trees": 8, "max_depth": 3},))


def small_config(**kw):
    return RunConfig(models=kw.pop("models", (SMALL_LR, SMALL_RF)), **kw)


@pytest.fixture(scope="module")
def data():
    return synth_generate(SynthSpec(n=24, d=3, class_sep=2.0, seed=5))


@pytest.fixture(scope="module")
def run(data):
    return loocv_run(data, small_config(seed=3))


class TestSynth:
    def test_no_separation_gives_base_rate(self):
        ds = synth_generate(SynthSpec(n=50, class_sep=0.0, base_rate=0.3, seed=1))
        np.testing.assert_allclose(ds.oracle_posterior, 0.3, atol=1e-15)

    def test_hyperplane_is_half(self):
        assert oracle_posterior(np.array([[0.0, 5.0, -3.0]]), 2.5, 0.5)[0] == 0.5

    def test_posterior_against_densities(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 2))
        sep, pi = 1.7, 0.35
        pos = pi * norm.pdf(X[:, 0], sep / 2) * norm.pdf(X[:, 1])
        neg = (1 - pi) * norm.pdf(X[:, 0], -sep / 2) * norm.pdf(X[:, 1])
        np.testing.assert_allclose(oracle_posterior(X, sep, pi), pos / (pos + neg), rtol=1e-12)

    def test_base_rate_within_binomial_bound(self):
        ds = synth_generate(SynthSpec(n=5000, base_rate=0.3, class_sep=1.5, seed=2))
        sigma = math.sqrt(0.3 * 0.7 / 5000)
        assert abs(ds.labels.mean() - 0.3) <= 3 * sigma

    def test_deterministic(self):
        a = synth_generate(SynthSpec(n=30, seed=9))
        b = synth_generate(SynthSpec(n=30, seed=9))
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)

    @pytest.mark.parametrize("kw", [{"n": 9}, {"d": 0}, {"base_rate": 1.0},
                                    {"base_rate": 0.0}, {"distortion_gamma": 0.0}])
    def test_invalid_spec(self, kw):
        with pytest.raises(InputError):
            SynthSpec(**kw)


class TestDistort:
    def test_identity(self):
        p = np.linspace(0, 1, 11)
        np.testing.assert_array_equal(distort_scores(p, 1.0), p)

    def test_fixed_points(self):
        np.testing.assert_allclose(distort_scores([0.0, 0.5, 1.0], 3.7), [0.0, 0.5, 1.0],
                                   atol=1e-15)

    def test_hand_value(self):
        assert distort_scores(0.8, 3.0) == pytest.approx(0.512 / 0.520, rel=1e-12)

    def test_strictly_increasing(self):
        p = np.linspace(0.001, 0.999, 500)
        assert np.all(np.diff(distort_scores(p, 2.5)) > 0)

    def test_isotonic_recovers_distortion(self):
        rng = np.random.default_rng(4)
        p = rng.random(20000)
        y = (rng.random(20000) < p).astype(int)
        d = distort_scores(p, 3.0)
        fixed = pava_fit(d, y)(d)
        assert ace(d, y) > 0.1
        assert ace(fixed, y) < 0.02

    def test_invalid(self):
        with pytest.raises(InputError):
            distort_scores([0.5], -1.0)
        with pytest.raises(InputError):
            distort_scores([1.5], 2.0)


class TestConfig:
    def test_round_trip(self):
        cfg = small_config(seed=4, uq_methods=("UC", "CP"))
        again = RunConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_schema_errors_name_offending_keys(self):
        errs = validate_config({"models": [{"kind": "svm"}], "uq_methods": ["PS"], "sed": 1})
        joined = "\n".join(errs)
        assert "models/0/kind" in joined and "sed" in joined

    def test_from_dict_raises(self):
        with pytest.raises(InputError):
            RunConfig.from_dict({"models": [], "uq_methods": ["UC"]})

    def test_default_grid_and_name(self):
        spec = ModelSpec("rf")
        assert spec.name == "RF" and len(spec.grid) == 12

    def test_external_needs_scores(self):
        with pytest.raises(InputError):
            ModelSpec("external")

    def test_duplicate_names(self):
        with pytest.raises(InputError):
            RunConfig(models=(SMALL_LR, SMALL_LR))


class TestLOOCV:
    def test_record_count(self, data, run):
        assert len(run.records) == 2 * 5 * data.n
        assert not run.skipped_folds

    def test_each_fold_once_per_group(self, data, run):
        groups = group_records(run.records)
        assert len(groups) == 10
        for recs in groups.values():
            assert sorted(r.fold for r in recs) == list(range(data.n))
            assert [r.sample_id for r in recs] == sorted(data.sample_ids)

    def test_sorted(self, run):
        keys = [(r.model_name, r.uq_method.value, r.sample_id) for r in run.records]
        assert keys == sorted(keys)

    def test_raw_score_shared_across_methods(self, run):
        by = {}
        for r in run.records:
            by.setdefault((r.model_name, r.sample_id), set()).add(r.raw_score)
        assert all(len(v) == 1 for v in by.values())

    def test_deterministic_and_parallel_equal(self, data, run):
        again = loocv_run(data, small_config(seed=3, n_jobs=2))
        assert again.records == run.records
        assert again.selected_params == run.selected_params

    def test_seed_changes_forest(self, data, run):
        other = loocv_run(data, small_config(seed=4, models=(SMALL_RF,), uq_methods=("UC",)))
        rf = [r.raw_score for r in run.records if r.model_name == "RF" and r.uq_method.value == "UC"]
        assert [r.raw_score for r in other.records] != rf

    def test_single_class_fold_skipped(self):
        X = np.random.default_rng(0).normal(size=(8, 2))
        y = np.array([1, 0, 0, 0, 0, 0, 0, 0])
        res = loocv_run(Dataset(X, y), small_config(models=(SMALL_LR,), uq_methods=("UC",)))
        assert res.skipped_folds == [0]
        assert len(res.records) == 7 and "fold 0" in res.warnings[0]

    def test_external_scores(self, data):
        s = np.clip(data.oracle_posterior, 0, 1)
        cfg = small_config(models=(ModelSpec("external", scores="x.csv", name="EXT"),))
        res = loocv_run(data, cfg, {"EXT": s})
        uc = [r for r in res.records if r.uq_method is UQMethod.UC]
        assert {r.sample_id: r.raw_score for r in uc} == dict(zip(data.sample_ids, s))
        with pytest.raises(InputError):
            loocv_run(data, cfg)

    def test_resubstitution_mode(self, data):
        cfg = small_config(models=(SMALL_LR,), uq_methods=("PS",), calibration_mode="resubstitution")
        res = loocv_run(data, cfg)
        assert len(res.records) == data.n

    def test_too_small(self):
        with pytest.raises(InputError):
            loocv_run(Dataset(np.zeros((3, 1)), [0, 1, 0]), small_config())

    def test_fold_seed(self):
        assert fold_seed(6, 3) == 5 and fold_seed(0, 7) == 7


class TestUQRecords:
    cal = np.array([0.1, 0.3, 0.35, 0.6, 0.8, 0.9])
    lab = np.array([0, 0, 1, 0, 1, 1])

    def test_platt_preserves_fold_order(self):
        params = platt_fit(self.cal, self.lab)
        p = platt_apply(params, self.cal)
        assert np.all(np.diff(p) > 0)

    @pytest.mark.parametrize("method", list(UQMethod))
    def test_each_method(self, method):
        r = uq_records(method, self.cal, self.lab, 0.7, sample_id="a", model_name="M", fold=2)
        assert r.uq_method is method and r.raw_score == 0.7 and r.fold == 2
        if method is UQMethod.CP:
            assert r.p_value is not None and r.predicted_label == 1
        else:
            assert 0.0 <= r.prob <= 1.0


@pytest.mark.parametrize("name", ["full.json", "quick.json", "external.json"])
def test_shipped_configs_validate(name):
    raw = json.loads((Path(__file__).parents[1] / "configs" / name).read_text())
    assert validate_config(raw) == []
    RunConfig.from_dict(raw)
