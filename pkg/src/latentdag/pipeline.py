"""End-to-end recovery: counts, bipartite graph, latent distribution, structure.

Each stage writes a JSON artifact when an output directory is given; with
``resume`` set, a stage whose artifact already exists is loaded instead of
recomputed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bipartite import RecoveredBipartite, build_m3, members, recover, weights_from_counts
from .datagen import GenConfig, SampleSet, gen_model, sample
from .errors import AssumptionViolation, LatentDagError, NumericalFailure
from .evaluation import TrialResult, align_gamma, align_joint, dims_match, graph_shd
from .latentdist import Correspondence, reconstruct
from .mixoracle import MEANS_TOL, EmpiricalOracle, ExactOracle
from .model import JointProbTable, LatentCausalModel, marginal_k
from .structlearn import Cpdag, DiscreteDataset, dag_to_cpdag, dataset_from_pipeline, greedy_search

log = logging.getLogger(__name__)


def derive_seed(seed: int, *tags: int) -> int:
    """Independent 32-bit stream for a (trial seed, purpose) pair."""
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1)[0])


@dataclass
class PipelineConfig:
    oracle: str = "exact"
    N: int = 10_000
    seed: int = 0
    struct_N: int = 100_000
    k_max: int | None = None
    means_tol: float = MEANS_TOL
    silhouette_sample: int = 2000
    struct_source: str = "auto"
    strategy: str = "projection"
    output_dir: str | None = None
    resume: bool = False
    gen: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.oracle not in ("exact", "empirical"):
            raise ValueError(f"unknown oracle mode {self.oracle!r}")
        if self.oracle == "empirical" and self.N < 1:
            raise ValueError("N must be at least 1 in empirical mode")
        if self.struct_source not in ("auto", "labels", "table"):
            raise ValueError(f"unknown structure data source {self.struct_source!r}")
        if self.struct_source == "labels" and self.oracle == "exact":
            raise ValueError("the exact oracle has no sample labels; use the table source")
        if self.means_tol <= 0 or self.struct_N < 1:
            raise ValueError("tolerances and sample sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class PipelineOutput:
    result: TrialResult
    k_table: dict | None = None
    bipartite: RecoveredBipartite | None = None
    joint: JointProbTable | None = None
    correspondence: Correspondence | None = None
    cpdag: Cpdag | None = None
    error: Exception | None = None


class _Stages:
    def __init__(self, cfg: PipelineConfig):
        self.dir = Path(cfg.output_dir) if cfg.output_dir else None
        self.resume = cfg.resume
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def load(self, name: str):
        if self.dir is None or not self.resume:
            return None
        path = self.dir / f"{name}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def save(self, name: str, doc: dict) -> None:
        if self.dir is not None:
            (self.dir / f"{name}.json").write_text(json.dumps(doc, indent=1), encoding="utf-8")


def make_oracle(cfg: PipelineConfig, model: LatentCausalModel | None, samples: SampleSet | None):
    if cfg.oracle == "exact":
        if model is None:
            raise ValueError("exact mode needs the ground-truth model")
        return ExactOracle(model)
    if samples is None:
        raise ValueError("empirical mode needs samples")
    return EmpiricalOracle(samples, seed=derive_seed(cfg.seed, 10), k_max=cfg.k_max,
                           sample_size=cfg.silhouette_sample, tol=cfg.means_tol, strategy=cfg.strategy)


def implied_counts(rb: RecoveredBipartite) -> tuple:
    return tuple(int(np.prod([rb.dims[j] for j in rb.gamma.parents(i)], dtype=np.int64))
                 for i in range(rb.gamma.n))


def run_pipeline(cfg: PipelineConfig, model: LatentCausalModel | None = None,
                 samples: SampleSet | None = None) -> PipelineOutput:
    """Run every stage; stage failures are recorded in ``result.failure_stage``.

    ``model`` is needed in exact mode and for scoring; without it the
    structural metrics stay empty.
    """
    n = model.n if model is not None else samples.n
    m = model.m if model is not None else 0
    res = TrialResult(seed=cfg.seed, m=m, n=n, N=cfg.N if cfg.oracle == "empirical" else 0)
    out = PipelineOutput(result=res)
    st = _Stages(cfg)
    st.save("config", cfg.to_dict())
    oracle = make_oracle(cfg, model, samples)

    t0 = time.perf_counter()
    doc = st.load("oracle")
    try:
        if doc is None:
            k_table = oracle.counts(3)
            estimates = getattr(oracle, "estimates", {})
            doc = {"k_table": {str(k): v for k, v in k_table.items()},
                   "estimates": [e.to_dict() for e in estimates.values()]}
            st.save("oracle", doc)
        out.k_table = {int(k): int(v) for k, v in doc["k_table"].items()}
    except LatentDagError as exc:
        return _fail(out, "oracle", exc)
    finally:
        res.t_oracle = time.perf_counter() - t0

    t0 = time.perf_counter()
    doc = st.load("bipartite")
    try:
        if doc is None:
            W = weights_from_counts(out.k_table, n)
            rb = recover(build_m3(W), derive_seed(cfg.seed, 20), exact=cfg.oracle == "exact")
            st.save("bipartite", rb.to_dict())
        else:
            rb = RecoveredBipartite.from_dict(doc)
        out.bipartite = rb
        res.method = rb.method
    except (LatentDagError, ValueError) as exc:
        return _fail(out, "bipartite", exc)
    finally:
        res.t_bipartite = time.perf_counter() - t0

    sigma = None
    if model is not None:
        sigma = align_gamma(rb, model)
        res.gamma_exact = sigma is not None
        res.dims_exact = dims_match(rb, model, sigma)

    t0 = time.perf_counter()
    doc = st.load("latent")
    try:
        K = rb.dims.K
        if doc is None:
            L = oracle.component_map(K, implied_counts(rb))
            weights = oracle.full_weights(K)
            joint, corr = reconstruct(L, rb.gamma, rb.dims, weights)
            means = oracle.full_means(K)
            doc = {"component_map": L.to_dict(), "weights": weights.tolist(),
                   "joint": joint.flat().tolist(), "correspondence": corr.to_dict(),
                   "means": np.asarray(means).tolist()}
            labels = oracle.full_labels(K)
            if labels is not None:
                doc["labels"] = np.asarray(labels).tolist()
            st.save("latent", doc)
        joint = JointProbTable(rb.dims, np.array(doc["joint"]).reshape(rb.dims.dims))
        corr = Correspondence.from_dict(doc["correspondence"])
        means = np.array(doc["means"])
        labels = doc.get("labels")
        out.joint, out.correspondence = joint, corr
    except LatentDagError as exc:
        return _fail(out, "latent", exc)
    finally:
        res.t_latent = time.perf_counter() - t0

    if model is not None and res.dims_exact:
        res.joint_tv = align_joint(joint, corr, means, model, sigma)

    t0 = time.perf_counter()
    doc = st.load("structure")
    if doc is None:
        from_table = cfg.struct_source == "table" or (cfg.struct_source == "auto" and cfg.oracle == "exact")
        if from_table:
            data = DiscreteDataset.from_table(joint, cfg.struct_N, derive_seed(cfg.seed, 30))
        else:
            data = dataset_from_pipeline(labels, corr)
        cpdag = greedy_search(data)
        st.save("structure", cpdag.to_dict())
    else:
        cpdag = Cpdag.from_dict(doc)
    out.cpdag = cpdag
    res.t_struct = time.perf_counter() - t0

    if model is not None:
        res.shd, res.uce = graph_shd(rb.gamma, cpdag, model.gamma, dag_to_cpdag(model.latent_dag))
    st.save("result", res.to_dict())
    return out


def _fail(out: PipelineOutput, stage: str, exc: Exception) -> PipelineOutput:
    log.warning("stage %s failed: %s", stage, exc)
    out.result.failure_stage = stage
    out.error = exc
    return out


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, AssumptionViolation):
        return 2
    if isinstance(exc, NumericalFailure):
        return 3
    return 4


def run_trial(m: int, n: int, seed: int, oracle: str = "empirical", N: int = 10_000,
              output_dir=None, resume: bool = False, **gen_overrides) -> PipelineOutput:
    """Generate a model for ``seed``, sample it and run the pipeline."""
    model = gen_model(GenConfig(m=m, n=n, seed=seed, **gen_overrides))
    samples = sample(model, N, derive_seed(seed, 1)) if oracle == "empirical" else None
    cfg = PipelineConfig(oracle=oracle, N=N, seed=seed, output_dir=output_dir, resume=resume,
                         gen=GenConfig(m=m, n=n, seed=seed, **gen_overrides).to_dict())
    out = run_pipeline(cfg, model, samples)
    out.result.m = m
    return out


def exact_counts_match(model: LatentCausalModel, k_table: dict) -> bool:
    """Whether an estimated count table equals the model's true counts."""
    return all(marginal_k(model, members(mask)) == k for mask, k in k_table.items())
