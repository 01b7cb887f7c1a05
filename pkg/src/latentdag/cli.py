"""Command line: generate, pipeline, bench, eval.

Exit codes: 0 success, 2 assumption violation, 3 numerical failure,
4 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .datagen import GenConfig, SampleSet, gen_model, sample
from .errors import GenerationError, LatentDagError
from .evaluation import CSV_HEADER, TrialResult, append_rows, read_rows
from .model import LatentCausalModel, validate_assumptions
from .pipeline import PipelineConfig, derive_seed, exit_code_for, run_pipeline, run_trial

log = logging.getLogger("latentdag")

EXIT_OK, EXIT_ASSUMPTION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class ConfigError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _merged(args, keys) -> dict:
    """Config-file values overridden by any flag given on the command line."""
    doc = _load_config(args.config)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    return doc


def _gen_config(doc: dict) -> GenConfig:
    try:
        return GenConfig(
            m=int(doc["m"]), n=int(doc["n"]), seed=int(doc.get("seed", 0)),
            max_K=int(doc.get("max_K", 50)),
            **{k: doc[k] for k in ("d", "p_lambda", "p_gamma", "cov_max_eig") if k in doc},
        )
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_generate(args) -> int:
    doc = _merged(args, ["m", "n", "seed", "samples", "max_K", "output_dir"])
    cfg = _gen_config(doc)
    out = Path(doc.get("output_dir") or ".")
    out.mkdir(parents=True, exist_ok=True)
    model = gen_model(cfg)
    report = validate_assumptions(model)
    (out / "model.json").write_text(model.to_json(), encoding="utf-8")
    (out / "gen_config.json").write_text(json.dumps(cfg.to_dict(), indent=1), encoding="utf-8")
    N = int(doc.get("samples") or 0)
    if N:
        sample(model, N, derive_seed(cfg.seed, 1)).to_csv(out / "samples.csv")
    print(json.dumps({"output_dir": str(out), "dims": list(model.dims.dims), "K": model.K,
                      "assumptions_ok": report.ok}))
    return EXIT_OK if report.ok else EXIT_ASSUMPTION


def _read_model(path) -> LatentCausalModel:
    try:
        return LatentCausalModel.from_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc


def _read_samples(path) -> SampleSet:
    try:
        return SampleSet.from_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read samples {path}: {exc}") from exc


def cmd_pipeline(args) -> int:
    doc = _merged(args, ["m", "n", "seed", "samples", "oracle", "output_dir", "resume", "max_K",
                         "model", "data", "from_table", "strategy"])
    if doc.pop("from_table", None):
        doc["struct_source"] = "table"
    oracle = doc.get("oracle", "exact")
    seed = int(doc.get("seed", 0))
    model = _read_model(doc["model"]) if doc.get("model") else None
    samples = _read_samples(doc["data"]) if doc.get("data") else None
    N = int(doc.get("samples") or (len(samples.data) if samples is not None else 10_000))
    if model is None and samples is None:
        model = gen_model(_gen_config(doc))
    if oracle == "empirical" and samples is None:
        if model is None:
            raise ConfigError("empirical mode needs --data or a model to sample from")
        samples = sample(model, N, derive_seed(seed, 1))
    tuning = ("struct_N", "k_max", "means_tol", "silhouette_sample", "struct_source", "strategy")
    try:
        cfg = PipelineConfig(oracle=oracle, N=N, seed=seed, output_dir=doc.get("output_dir"),
                             resume=bool(doc.get("resume", False)),
                             **{k: doc[k] for k in tuning if k in doc})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = run_pipeline(cfg, model, samples)
    print(json.dumps(out.result.to_dict()))
    if out.error is not None:
        return exit_code_for(out.error) if isinstance(out.error, LatentDagError) else EXIT_NUMERICAL
    return EXIT_OK


def _bench_one(task) -> TrialResult:
    m, n, N, seed, oracle, out_dir = task
    trial_dir = None if out_dir is None else str(Path(out_dir) / f"m{m}_n{n}_N{N}_s{seed}")
    try:
        return run_trial(m, n, seed, oracle=oracle, N=N, output_dir=trial_dir).result
    except GenerationError:
        # matches skipping experiments whose domain product exceeds the cap
        return TrialResult(seed=seed, m=m, n=n, N=N if oracle == "empirical" else 0,
                           failure_stage="generate")


def _cells(doc: dict) -> list[dict]:
    if "cells" in doc:
        return doc["cells"]
    if "m" in doc and "n" in doc:
        return [{"m": doc["m"], "n": doc["n"], "N": doc.get("samples", 10_000),
                 "trials": doc.get("trials", 20), "seed": doc.get("seed", 0)}]
    return []


def summarize(rows: list[TrialResult]) -> list[dict]:
    cells: dict = {}
    for r in rows:
        cells.setdefault((r.m, r.n, r.N), []).append(r)
    out = []
    for (m, n, N), rs in sorted(cells.items()):
        ok = [r for r in rs if not r.failure_stage and r.shd is not None]
        out.append({
            "m": m, "n": n, "N": N, "trials": len(rs), "failures": len(rs) - len(ok),
            "mean_shd": float(np.mean([r.shd for r in ok])) if ok else None,
            "max_shd": max((r.shd for r in ok), default=None),
            "mean_uce": float(np.mean([r.uce for r in ok])) if ok else None,
        })
    return out


def cmd_bench(args) -> int:
    doc = _merged(args, ["m", "n", "seed", "samples", "trials", "oracle", "output_dir", "jobs", "resume"])
    out_dir = Path(doc.get("output_dir") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "aggregate.csv"
    if not doc.get("resume") and csv_path.exists():
        csv_path.unlink()
    done = {(r.m, r.n, r.N, r.seed) for r in read_rows(csv_path)}
    oracle = doc.get("oracle", "empirical")
    tasks = []
    for cell in _cells(doc):
        m, n, N = int(cell["m"]), int(cell["n"]), int(cell.get("N", 10_000))
        # exact-mode rows record N = 0
        row_N = N if oracle == "empirical" else 0
        for seed in range(int(cell.get("seed", 0)), int(cell.get("seed", 0)) + int(cell.get("trials", 20))):
            if (m, n, row_N, seed) not in done:
                tasks.append((m, n, N, seed, oracle, str(out_dir / "trials") if doc.get("keep_artifacts") else None))
    if not csv_path.exists():
        append_rows(csv_path, [])
    jobs = max(1, int(doc.get("jobs") or 1))
    if jobs == 1:
        for task in tasks:
            append_rows(csv_path, [_bench_one(task)])
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_bench_one, tasks):
                append_rows(csv_path, [res])
    for cell in summarize(read_rows(csv_path)):
        print(json.dumps(cell))
    return EXIT_OK


def cmd_eval(args) -> int:
    path = Path(args.input)
    if not path.exists():
        raise ConfigError(f"no such file {path}")
    try:
        rows = read_rows(path)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed results file {path}: {exc}") from exc
    for cell in summarize(rows):
        print(json.dumps(cell))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentdag", description="Latent causal model recovery from mixtures.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with flat keys; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--m", type=int)
        sp.add_argument("--n", type=int)
        sp.add_argument("--samples", type=int, help="number of samples N")
        sp.add_argument("--output-dir", dest="output_dir")

    g = sub.add_parser("generate", help="draw a model (and optionally samples)")
    common(g)
    g.add_argument("--max-K", dest="max_K", type=int)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("pipeline", help="run the recovery pipeline on one model")
    common(r)
    r.add_argument("--oracle", choices=["exact", "empirical"])
    r.add_argument("--model", help="model.json (ground truth; required in exact mode)")
    r.add_argument("--data", help="samples.csv for the empirical oracle")
    r.add_argument("--max-K", dest="max_K", type=int)
    r.add_argument("--resume", action="store_true", default=None)
    r.add_argument("--from-table", dest="from_table", action="store_true", default=None,
                   help="learn the latent DAG from rows drawn from the recovered table")
    r.add_argument("--strategy", choices=["projection", "voting"],
                   help="empirical count estimation (default projection)")
    r.set_defaults(func=cmd_pipeline)

    b = sub.add_parser("bench", help="run many seeded trials and aggregate")
    common(b)
    b.add_argument("--trials", type=int)
    b.add_argument("--oracle", choices=["exact", "empirical"])
    b.add_argument("--jobs", type=int)
    b.add_argument("--resume", action="store_true", default=None)
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eval", help="summarize an aggregate CSV")
    e.add_argument("input", help=f"CSV with header {','.join(CSV_HEADER)}")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LatentDagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
