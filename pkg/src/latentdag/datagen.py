"""Random ground-truth models and samples from them.

Generation follows the synthetic benchmark protocol: random topological
order for the latent DAG, i.i.d. bipartite edges resampled until the subset
condition and column independence hold, integer-weighted conditional tables,
unit-sphere component means and small diagonally dominant covariances.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError
from .model import (
    BipartiteGraph,
    DomainSpec,
    GaussianComponent,
    JointProbTable,
    LatentCausalModel,
    LatentDag,
    check_independent_columns,
    check_ssc,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenConfig:
    m: int
    n: int
    d: int = 5
    dim_choices: tuple = (2, 3, 4, 5, 6)
    max_K: int = 50
    p_lambda: float = 0.6
    p_gamma: float = 0.5
    cpt_weight_range: tuple = (1, 4)
    cov_max_eig: float = 0.01
    seed: int = 0
    max_rejections: int = 10_000

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if not (0 < self.p_lambda < 1 and 0 < self.p_gamma < 1):
            raise ValueError("edge probabilities must lie strictly between 0 and 1")
        if self.cov_max_eig <= 0:
            raise ValueError("cov_max_eig must be positive")
        lo, hi = self.cpt_weight_range
        if not 1 <= lo <= hi:
            raise ValueError("cpt_weight_range must be a positive integer range")
        object.__setattr__(self, "dim_choices", tuple(self.dim_choices))
        object.__setattr__(self, "cpt_weight_range", tuple(self.cpt_weight_range))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SampleSet:
    """``N x (n*d)`` observations; ``X_i`` occupies columns ``[i*d, (i+1)*d)``."""

    data: np.ndarray
    d: int
    truth_labels: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.data.shape[1] // self.d

    def block(self, i: int) -> np.ndarray:
        return self.data[:, i * self.d:(i + 1) * self.d]

    def columns(self, subset) -> np.ndarray:
        return np.hstack([self.block(i) for i in subset])

    def header(self) -> list[str]:
        return [f"x{i}_{c}" for i in range(self.n) for c in range(self.d)]

    def to_csv(self, path, labels_path=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows([repr(float(v)) for v in row] for row in self.data)
        if self.truth_labels is not None:
            labels_path = Path(labels_path) if labels_path else path.with_name(path.stem + "_labels.csv")
            with labels_path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["label"])
                w.writerows([int(v)] for v in self.truth_labels)

    @classmethod
    def from_csv(cls, path, labels_path=None) -> "SampleSet":
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path} is empty")
        header = rows[0]
        try:
            d = 1 + max(int(h.split("_")[1]) for h in header)
            data = np.array(rows[1:], dtype=float)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path} is not a valid sample file: {exc}") from exc
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(header) or len(header) % d:
            raise ValueError(f"{path} has inconsistent shape")
        labels = None
        labels_path = Path(labels_path) if labels_path else path.with_name(path.stem + "_labels.csv")
        if labels_path.exists():
            with labels_path.open(newline="", encoding="utf-8") as fh:
                labels = np.array([int(r[0]) for r in list(csv.reader(fh))[1:]], dtype=np.int64)
        return cls(data=data, d=d, truth_labels=labels)


def random_covariance(rng: np.random.Generator, d: int, max_eig: float) -> np.ndarray:
    b = rng.uniform(0.0, 1.0, size=(d, d))
    c = (b + b.T) / 2 + (d + 1) * np.eye(d)
    c *= max_eig / np.linalg.eigvalsh(c)[-1]
    return (c + c.T) / 2


def unit_vector(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _sample_dims(cfg: GenConfig, rng) -> tuple:
    for _ in range(cfg.max_rejections):
        dims = tuple(int(x) for x in rng.choice(cfg.dim_choices, size=cfg.m))
        if np.prod(dims) <= cfg.max_K:
            return dims
    raise GenerationError(f"no domain sizes with product <= {cfg.max_K} after {cfg.max_rejections} draws")


def _sample_lambda(cfg: GenConfig, rng) -> LatentDag:
    order = rng.permutation(cfg.m)
    edges = set()
    for a in range(cfg.m):
        for b in range(a + 1, cfg.m):
            if rng.random() < cfg.p_lambda:
                edges.add((int(order[a]), int(order[b])))
    return LatentDag(cfg.m, frozenset(edges))


def _sample_gamma(cfg: GenConfig, rng) -> np.ndarray:
    for _ in range(cfg.max_rejections):
        a = (rng.random((cfg.n, cfg.m)) < cfg.p_gamma).astype(np.int8)
        # every observed variable needs a hidden parent; SSC rules out empty columns
        if a.any(axis=1).all() and check_ssc(a) and check_independent_columns(a):
            return a
    raise GenerationError(
        f"no bipartite graph with SSC and independent columns for m={cfg.m}, n={cfg.n} "
        f"after {cfg.max_rejections} draws"
    )


def _joint_from_cpts(dag: LatentDag, dims: tuple, rng, weight_range) -> np.ndarray:
    lo, hi = weight_range
    cpts = {}
    for v in dag.topological_order():
        pa = dag.parents(v)
        q = int(np.prod([dims[p] for p in pa], dtype=np.int64))
        w = rng.integers(lo, hi + 1, size=(q, dims[v])).astype(float)
        cpts[v] = (pa, w / w.sum(axis=1, keepdims=True))
    spec = DomainSpec(dims)
    states = spec.states()
    joint = np.ones(spec.K)
    for v, (pa, table) in cpts.items():
        if pa:
            rows = np.ravel_multi_index(tuple(states[:, pa].T), [dims[p] for p in pa])
        else:
            rows = np.zeros(spec.K, dtype=np.int64)
        joint *= table[rows, states[:, v]]
    return joint / joint.sum()


def gen_model(cfg: GenConfig) -> LatentCausalModel:
    rng = np.random.default_rng(cfg.seed)
    dims = _sample_dims(cfg, rng)
    dag = _sample_lambda(cfg, rng)
    adjacency = _sample_gamma(cfg, rng)
    joint = _joint_from_cpts(dag, dims, rng, cfg.cpt_weight_range)
    gamma = BipartiteGraph(adjacency)
    obs_law = []
    for i in range(cfg.n):
        q = int(np.prod([dims[j] for j in gamma.parents(i)], dtype=np.int64))
        obs_law.append([
            GaussianComponent(unit_vector(rng, cfg.d), random_covariance(rng, cfg.d, cfg.cov_max_eig))
            for _ in range(q)
        ])
    spec = DomainSpec(dims)
    return LatentCausalModel(
        gamma=gamma,
        latent_dag=dag,
        dims=spec,
        joint=JointProbTable(spec, joint),
        obs_law=obs_law,
        obs_dim=cfg.d,
    )


def sample(model: LatentCausalModel, N: int, seed: int) -> SampleSet:
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(model.K, size=N, p=model.joint.flat())
    states = np.array(np.unravel_index(labels, model.dims.dims)).T.reshape(N, model.m)
    d = model.obs_dim
    data = np.empty((N, model.n * d))
    for i in range(model.n):
        cfg_idx = model.config_index(i, states)
        z = rng.standard_normal((N, d))
        block = np.empty((N, d))
        for c, comp in enumerate(model.obs_law[i]):
            rows = cfg_idx == c
            chol = np.linalg.cholesky(comp.cov)
            block[rows] = comp.mean + z[rows] @ chol.T
        data[:, i * d:(i + 1) * d] = block
    return SampleSet(data=data, d=d, truth_labels=labels)
