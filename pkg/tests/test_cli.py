import json
import time

import numpy as np
import pytest

from latentdag.cli import main, summarize
from latentdag.datagen import GenConfig, gen_model
from latentdag.errors import AssumptionViolation, NumericalFailure
from latentdag.evaluation import CSV_HEADER, TrialResult, append_rows, read_rows
from latentdag.model import LatentCausalModel, validate_assumptions
from latentdag.pipeline import PipelineConfig, derive_seed, exit_code_for, run_pipeline, run_trial


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_generate_writes_valid_model(tmp_path, capsys):
    code = main(["generate", "--m", "2", "--n", "5", "--seed", "7", "--samples", "20",
                 "--output-dir", str(tmp_path)])
    assert code == 0
    model = LatentCausalModel.from_json((tmp_path / "model.json").read_text())
    assert validate_assumptions(model).ok
    assert (tmp_path / "samples.csv").exists()
    assert json.loads(capsys.readouterr().out)["assumptions_ok"]


def test_generate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--m", "2", "--n", "5", "--seed", "3", "--samples", "10",
                     "--output-dir", str(tmp_path / name)]) == 0
    for f in ("model.json", "samples.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_generate_respects_cap(tmp_path):
    for seed in range(5):
        assert main(["generate", "--m", "3", "--n", "6", "--seed", str(seed), "--max-K", "12",
                     "--output-dir", str(tmp_path)]) == 0
        assert LatentCausalModel.from_json((tmp_path / "model.json").read_text()).K <= 12


def test_generate_config_file_and_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"m": 1, "n": 3, "seed": 1}))
    assert main(["generate", "--config", str(cfg), "--n", "4", "--output-dir", str(tmp_path)]) == 0
    assert LatentCausalModel.from_json((tmp_path / "model.json").read_text()).n == 4


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    assert main(["generate", "--config", str(cfg)]) == 4
    assert main(["generate", "--config", str(tmp_path / "missing.json")]) == 4
    assert main(["generate", "--n", "3"]) == 4
    assert "error" in capsys.readouterr().err


def test_pipeline_exact(tmp_path, capsys):
    code = main(["pipeline", "--m", "3", "--n", "6", "--seed", "4", "--oracle", "exact",
                 "--output-dir", str(tmp_path)])
    assert code == 0
    res = read_json(tmp_path / "result.json")
    assert res["gamma_exact"] and res["dims_exact"]
    assert res["joint_tv"] <= 1e-9
    assert res["shd"] is not None
    for stage in ("config", "oracle", "bipartite", "latent", "structure", "result"):
        assert (tmp_path / f"{stage}.json").exists()


def test_pipeline_empirical_small(tmp_path):
    t0 = time.perf_counter()
    code = main(["pipeline", "--m", "1", "--n", "3", "--seed", "0", "--oracle", "empirical",
                 "--samples", "10000", "--output-dir", str(tmp_path)])
    assert time.perf_counter() - t0 < 60
    assert code == 0
    res = read_json(tmp_path / "result.json")
    assert res["gamma_exact"] and res["shd"] == 0


def test_pipeline_from_files(tmp_path):
    assert main(["generate", "--m", "1", "--n", "3", "--seed", "2", "--samples", "3000",
                 "--output-dir", str(tmp_path)]) == 0
    assert main(["pipeline", "--oracle", "empirical", "--model", str(tmp_path / "model.json"),
                 "--data", str(tmp_path / "samples.csv"), "--output-dir", str(tmp_path / "run")]) == 0
    assert read_json(tmp_path / "run" / "result.json")["N"] == 3000


def test_pipeline_corrupt_samples(tmp_path, capsys):
    bad = tmp_path / "samples.csv"
    bad.write_text("x0_0,x0_1\n0.1,oops\n")
    assert main(["pipeline", "--oracle", "empirical", "--data", str(bad)]) == 4
    assert "cannot read samples" in capsys.readouterr().err


def test_pipeline_resume_uses_artifacts(tmp_path):
    args = ["pipeline", "--m", "2", "--n", "5", "--seed", "1", "--oracle", "exact",
            "--output-dir", str(tmp_path)]
    assert main(args) == 0
    first = read_json(tmp_path / "result.json")
    # tamper with a stage artifact: a resumed run must read it rather than recompute
    doc = read_json(tmp_path / "structure.json")
    (tmp_path / "structure.json").write_text(json.dumps({"m": doc["m"], "directed": [], "undirected": []}))
    assert main(args + ["--resume"]) == 0
    again = read_json(tmp_path / "result.json")
    assert again["gamma_exact"] == first["gamma_exact"]
    assert again["joint_tv"] == first["joint_tv"]
    if doc["directed"] or doc["undirected"]:
        assert again["shd"] != first["shd"]


def test_stage_rerun_from_previous_artifact(tmp_path):
    model = gen_model(GenConfig(m=2, n=5, seed=6))
    cfg = PipelineConfig(oracle="exact", seed=6, output_dir=str(tmp_path))
    full = run_pipeline(cfg, model)
    for stage in ("latent", "structure", "result"):
        (tmp_path / f"{stage}.json").unlink()
    cfg.resume = True
    again = run_pipeline(cfg, model)
    assert again.result.shd == full.result.shd
    assert again.result.joint_tv == full.result.joint_tv


def test_bench_rows_resume_and_summary(tmp_path, capsys):
    args = ["bench", "--m", "1", "--n", "3", "--oracle", "exact", "--output-dir", str(tmp_path)]
    assert main(args + ["--trials", "3"]) == 0
    rows = read_rows(tmp_path / "aggregate.csv")
    assert [r.seed for r in rows] == [0, 1, 2]
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["trials"] == 3 and summary["failures"] == 0
    assert main(args + ["--trials", "5", "--resume"]) == 0
    seeds = [r.seed for r in read_rows(tmp_path / "aggregate.csv")]
    assert seeds == [0, 1, 2, 3, 4]


def test_bench_parallel(tmp_path):
    assert main(["bench", "--m", "1", "--n", "3", "--trials", "4", "--oracle", "exact", "--jobs", "2",
                 "--output-dir", str(tmp_path)]) == 0
    assert sorted(r.seed for r in read_rows(tmp_path / "aggregate.csv")) == [0, 1, 2, 3]


def test_bench_empty_suite(tmp_path):
    assert main(["bench", "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "aggregate.csv").read_text().splitlines() == [",".join(CSV_HEADER)]


def test_bench_records_generation_failure(tmp_path):
    cfg = tmp_path / "suite.json"
    cfg.write_text(json.dumps({"cells": [{"m": 4, "n": 3, "N": 100, "trials": 1}], "oracle": "exact"}))
    assert main(["bench", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "aggregate.csv")
    assert [r.failure_stage for r in rows] == ["generate"]


def test_eval(tmp_path, capsys):
    path = tmp_path / "agg.csv"
    append_rows(path, [TrialResult(0, 2, 5, 100, shd=2, uce=0), TrialResult(1, 2, 5, 100, shd=4, uce=2),
                       TrialResult(2, 2, 5, 100, failure_stage="oracle")])
    assert main(["eval", str(path)]) == 0
    cell = json.loads(capsys.readouterr().out)
    assert cell["mean_shd"] == 3.0 and cell["max_shd"] == 4 and cell["failures"] == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("seed,m\n1,2\n")
    assert main(["eval", str(bad)]) == 4
    assert main(["eval", str(tmp_path / "none.csv")]) == 4


def test_summarize_empty():
    assert summarize([]) == []


def test_pipeline_config_checks():
    with pytest.raises(ValueError):
        PipelineConfig(oracle="magic")
    with pytest.raises(ValueError):
        PipelineConfig(oracle="empirical", N=0)
    with pytest.raises(ValueError):
        PipelineConfig(oracle="exact", struct_source="labels")
    with pytest.raises(ValueError):
        PipelineConfig(means_tol=0)
    cfg = PipelineConfig(oracle="empirical", N=500, seed=3)
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})


def test_derive_seed_streams():
    assert derive_seed(1, 10) == derive_seed(1, 10)
    assert len({derive_seed(1, t) for t in (1, 10, 20, 30)}) == 4
    assert derive_seed(1, 10) != derive_seed(2, 10)


def test_exit_codes():
    assert exit_code_for(AssumptionViolation("x")) == 2
    assert exit_code_for(NumericalFailure("x")) == 3
    assert exit_code_for(ValueError("x")) == 4


def test_run_trial_deterministic():
    a = run_trial(1, 3, 5, oracle="empirical", N=2000).result
    b = run_trial(1, 3, 5, oracle="empirical", N=2000).result
    assert (a.shd, a.uce, a.gamma_exact, a.joint_tv) == (b.shd, b.uce, b.gamma_exact, b.joint_tv)
    assert np.isfinite(a.t_oracle)
