import json
import math

import numpy as np
import pytest

from frfsurrogate.config import PipelineConfig
from frfsurrogate.dataset import SelectionMatrix
from frfsurrogate.ga import read_genome
from frfsurrogate.oracle import FrfQuery, MAGNITUDE_FLOOR, build_structure, frf_complex
from frfsurrogate.pipeline import (
    TruthCache,
    compare_random,
    estimate_error,
    no_skill_error,
    random_genome,
    render_text,
    report_json,
    run_pipeline,
    run_seed_stage,
    run_transfer,
    strip_timing,
)

SMALL = {
    "grid_nx": 3, "grid_ny": 2, "grid_nz": 2, "n_modes": 6,
    "target_freqs": (50.0, 100.0, 150.0), "rt_list": (0.8, 0.3),
    "ga_population": 6, "ga_generations": 3, "ga_holdout": 300,
    "fitness_trees": 3, "forest_trees": 5, "random_trials": 3,
}


@pytest.fixture(scope="module")
def small_cfg():
    return PipelineConfig(SMALL)


@pytest.fixture(scope="module")
def small_run(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report = run_pipeline(small_cfg, out)
    return out, report


class TestEstimateError:
    def test_reference_value(self):
        assert estimate_error(0.0138, 50, 100) == pytest.approx(0.0069, rel=1e-12)

    def test_identity_and_linearity(self):
        assert estimate_error(0.04, 100, 100) == 0.04
        assert estimate_error(0.04, 140, 100) == pytest.approx(2 * estimate_error(0.04, 70, 100))
        assert estimate_error(0.02, 150, 100) == pytest.approx(1.5 * 0.02)

    def test_bad_seed_frequency(self):
        with pytest.raises(ValueError):
            estimate_error(0.1, 50, 0)


class TestSeedStage:
    def test_default_table_size(self):
        truth = TruthCache(build_structure(PipelineConfig().oracle()))
        assert len(truth(100.0)) == 57_600

    def test_one_genome_per_tolerance(self, small_cfg):
        cfg = small_cfg.with_overrides(rt_list=(0.9, 0.8, 0.5, 0.3), ga_generations=2)
        stage = run_seed_stage(cfg)
        assert len(stage.genomes) == 4
        assert len(stage.table) == 9 * 12**2
        assert len(stage.benchmark) == 4
        assert stage.rt_scale == pytest.approx(no_skill_error(stage.table))


class TestTransfer:
    def test_random_trials_precondition(self, small_cfg):
        truth = TruthCache(build_structure(small_cfg.oracle()))
        g = SelectionMatrix(np.eye(12, dtype=bool))
        with pytest.raises(ValueError):
            compare_random(g, 50.0, 2, small_cfg, truth=truth)
        mean, std = compare_random(g, 50.0, 3, small_cfg, truth=truth)
        assert mean > 0 and std >= 0

    def test_random_genomes_have_exact_popcount(self):
        rng = np.random.default_rng(0)
        for q in (1, 17, 144):
            assert random_genome(12, q, rng).q == q

    def test_empty_genome_rejected(self, small_cfg):
        truth = TruthCache(build_structure(small_cfg.oracle()))
        with pytest.raises(ValueError):
            run_transfer(SelectionMatrix.zeros(12), 50.0, small_cfg, truth=truth, seed_error=0.1)

    def test_result_fields(self, small_cfg):
        truth = TruthCache(build_structure(small_cfg.oracle()))
        g = random_genome(12, 40, np.random.default_rng(1))
        res, pred = run_transfer(g, 150.0, small_cfg, truth=truth, seed_error=0.02, seed=3)
        assert res.q == 40 and res.reduction == pytest.approx(144 / 40)
        assert res.rmse_r_estimated == pytest.approx(0.03)
        assert res.random_trials == 3 and res.rmse_r >= 0 and res.random_mean >= 0
        assert len(pred) == 9 * 144

    def test_truth_matches_oracle_recomputation(self, small_cfg):
        structure = build_structure(small_cfg.oracle())
        table = TruthCache(structure)(120.0)
        for r in range(0, len(table), 11):
            i, j, d, e = (int(v) for v in table.keys()[r])
            h = frf_complex(structure, FrfQuery(i, d, j, e, 120.0))
            assert table.target[r] == pytest.approx(20 * math.log10(abs(h) + MAGNITUDE_FLOOR), rel=1e-12)

    def test_self_transfer_close_to_ga_error(self, small_run):
        _, report = small_run
        for rt, info in report.seed_errors.items():
            # same rows, different forest seed and size: within retraining noise
            assert info["seed_rmse_r"] == pytest.approx(info["ga_holdout_rmse_r"], rel=0.5)


class TestPipeline:
    def test_report_complete(self, small_run, small_cfg):
        _, report = small_run
        assert len(report.results) == len(small_cfg.rt_list) * len(small_cfg.target_freqs)
        pairs = {(r.rt, r.f_c) for r in report.results}
        assert len(pairs) == len(report.results)
        for r in report.results:
            assert r.reduction >= 1 and r.rmse_r >= 0 and r.rmse_r_estimated >= 0

    def test_files(self, small_run, small_cfg):
        out, report = small_run
        names = sorted(p.name for p in out.iterdir())
        assert "report.json" in names
        assert {"genome_rt0.txt", "genome_rt1.txt", "history_rt0.csv", "history_rt1.csv"} <= set(names)
        assert sum(n.startswith("pred_") for n in names) == 6
        g, meta = read_genome(out / "genome_rt0.txt")
        assert g.q == report.seed_errors[0.8]["q"] and meta["N"] == 12
        doc = json.loads((out / "report.json").read_text())
        assert doc["format"] == "frfsurrogate-report"
        assert len(doc["results"]) == 6
        pred = np.loadtxt(out / "pred_rt0_f0.csv", delimiter=",", skiprows=1)
        assert pred.shape == (9 * 144, 6)

    def test_deterministic_across_threads(self, small_run, small_cfg):
        _, report = small_run
        again = run_pipeline(small_cfg, None, threads=3)
        a = strip_timing(json.loads(report_json(report)))
        b = strip_timing(json.loads(report_json(again)))
        assert a == b

    def test_strip_timing(self):
        doc = {"elapsed_s": 1, "a": [{"wall_time_s": 2, "b": 3}]}
        assert strip_timing(doc) == {"a": [{"b": 3}]}

    def test_render_text(self, small_run):
        _, report = small_run
        text = render_text(json.loads(report_json(report)))
        assert "ExtraTree" in text and "reduction vs random" in text
