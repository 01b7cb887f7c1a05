"""Ground-truth latent causal models and the exact mixture oracle.

A model consists of a bipartite graph from hidden to observed variables, a
DAG among the hidden variables, discrete hidden domains, the joint table of
the hidden variables and, for every observed variable, one Gaussian per
configuration of its hidden parents.

Indexing conventions used throughout the package:

* hidden states ``h`` are flattened in C order, so the lowest hidden index is
  the most significant digit;
* the components of a marginal mixture over ``S`` are indexed the same way,
  by the configuration of ``pa(S)`` with its members in increasing order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from .errors import InconsistentInput

#: Mean-vector distance under which two components count as equal.
COMPONENT_TOL = 1e-9


@dataclass(frozen=True)
class BipartiteGraph:
    """Edges ``H_j -> X_i``, stored as an ``n x m`` 0/1 adjacency matrix."""

    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.int8)
        if a.ndim != 2:
            raise ValueError("adjacency must be a 2-d matrix")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("adjacency must be binary")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def m(self) -> int:
        return self.adjacency.shape[1]

    def children(self, j: int) -> list[int]:
        """Observed neighbourhood of hidden variable ``j``."""
        return np.flatnonzero(self.adjacency[:, j]).tolist()

    def parents(self, i: int) -> list[int]:
        return np.flatnonzero(self.adjacency[i]).tolist()

    def parents_of_set(self, subset: Iterable[int]) -> list[int]:
        rows = list(subset)
        if not rows:
            return []
        return np.flatnonzero(self.adjacency[rows].any(axis=0)).tolist()

    def columns(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in self.adjacency[:, j]) for j in range(self.m)]

    def __eq__(self, other):
        if not isinstance(other, BipartiteGraph):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash(self.adjacency.tobytes()) ^ hash(self.adjacency.shape)


@dataclass(frozen=True)
class LatentDag:
    m: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if not (0 <= i < self.m and 0 <= j < self.m) or i == j:
                raise ValueError(f"invalid edge ({i}, {j}) for m={self.m}")
        object.__setattr__(self, "edges", edges)
        if self.topological_order() is None:
            raise ValueError("latent graph contains a cycle")

    def parents(self, j: int) -> list[int]:
        return sorted(i for i, k in self.edges if k == j)

    def topological_order(self) -> list[int] | None:
        indeg = [0] * self.m
        for _, j in self.edges:
            indeg[j] += 1
        ready = [v for v in range(self.m) if indeg[v] == 0]
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for i, j in sorted(self.edges):
                if i == v:
                    indeg[j] -= 1
                    if indeg[j] == 0:
                        ready.append(j)
        return order if len(order) == self.m else None


@dataclass(frozen=True)
class DomainSpec:
    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if any(d < 2 for d in dims):
            raise ValueError(f"every hidden domain needs at least 2 values, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def K(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1

    def states(self) -> np.ndarray:
        """All hidden states as a ``K x m`` array, in flattened order."""
        return np.array(np.unravel_index(np.arange(self.K), self.dims)).T.reshape(self.K, self.m)

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, i):
        return self.dims[i]

    def __iter__(self):
        return iter(self.dims)


@dataclass(frozen=True)
class JointProbTable:
    dims: DomainSpec
    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float).reshape(self.dims.dims)
        if abs(e.sum() - 1.0) > 1e-12 * max(1, e.size):
            raise ValueError(f"joint table sums to {e.sum()!r}, not 1")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def flat(self) -> np.ndarray:
        return self.entries.reshape(-1)

    def marginal(self, keep: Sequence[int]) -> np.ndarray:
        """Marginal table over the hidden variables ``keep`` (kept in increasing order)."""
        keep = sorted(keep)
        drop = tuple(i for i in range(self.dims.m) if i not in keep)
        return self.entries.sum(axis=drop) if drop else self.entries.copy()


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float).reshape(mean.size, mean.size)
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ValueError("covariance is not symmetric")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class LatentCausalModel:
    gamma: BipartiteGraph
    latent_dag: LatentDag
    dims: DomainSpec
    joint: JointProbTable
    obs_law: tuple  # obs_law[i][c]: component of X_i for parent configuration c
    obs_dim: int = 5

    def __post_init__(self):
        object.__setattr__(self, "obs_law", tuple(tuple(row) for row in self.obs_law))
        if self.gamma.m != self.dims.m or self.latent_dag.m != self.dims.m:
            raise ValueError("gamma, latent_dag and dims disagree on m")
        if len(self.obs_law) != self.gamma.n:
            raise ValueError("obs_law needs one entry per observed variable")
        for i, bank in enumerate(self.obs_law):
            expected = self.parent_dim(i)
            if len(bank) != expected:
                raise ValueError(f"obs_law[{i}] has {len(bank)} components, expected {expected}")
            for comp in bank:
                if comp.mean.size != self.obs_dim:
                    raise ValueError("component dimension differs from obs_dim")

    @property
    def n(self) -> int:
        return self.gamma.n

    @property
    def m(self) -> int:
        return self.gamma.m

    @property
    def K(self) -> int:
        return self.dims.K

    def parent_dim(self, i: int) -> int:
        return int(np.prod([self.dims[j] for j in self.gamma.parents(i)], dtype=np.int64))

    def config_index(self, i: int, states: np.ndarray) -> np.ndarray:
        """Parent-configuration index of ``X_i`` for each row of ``states``."""
        pa = self.gamma.parents(i)
        states = np.atleast_2d(states)
        if not pa:
            return np.zeros(len(states), dtype=np.int64)
        return np.ravel_multi_index(tuple(states[:, pa].T), [self.dims[j] for j in pa])

    def component_means(self) -> np.ndarray:
        """``K x (n*d)`` matrix of full-mixture component means."""
        states = self.dims.states()
        blocks = []
        for i in range(self.n):
            means = np.array([c.mean for c in self.obs_law[i]])
            blocks.append(means[self.config_index(i, states)])
        return np.hstack(blocks)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "d": self.obs_dim,
            "dims": list(self.dims.dims),
            "gamma": self.gamma.adjacency.astype(int).tolist(),
            "lambda": sorted([list(e) for e in self.latent_dag.edges]),
            "joint": self.joint.flat().tolist(),
            "obs_law": [
                [{"mean": c.mean.tolist(), "cov": c.cov.tolist()} for c in bank]
                for bank in self.obs_law
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LatentCausalModel":
        dims = DomainSpec(tuple(doc["dims"]))
        gamma = np.array(doc["gamma"], dtype=int).reshape(doc["n"], doc["m"])
        return cls(
            gamma=BipartiteGraph(gamma),
            latent_dag=LatentDag(doc["m"], frozenset(tuple(e) for e in doc["lambda"])),
            dims=dims,
            joint=JointProbTable(dims, np.array(doc["joint"], dtype=float)),
            obs_law=[
                [GaussianComponent(np.array(c["mean"]), np.array(c["cov"])) for c in bank]
                for bank in doc["obs_law"]
            ],
            obs_dim=int(doc["d"]),
        )

    def to_json(self) -> str:
        # repr-based float encoding is shortest round-trip, so values survive exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LatentCausalModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class MixtureView:
    """Answer of a mixture oracle for the observed subset ``subset``."""

    subset: tuple
    k: int
    weights: np.ndarray
    means: np.ndarray  # k x (|S|*d)
    covs: tuple = ()  # per-component block-diagonal covariance, exact oracle only

    def __post_init__(self):
        if self.k < 1 or len(self.weights) != self.k:
            raise ValueError("mixture view needs k >= 1 weights")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-9:
            raise ValueError("mixture weights do not sum to one")


@dataclass(frozen=True)
class AssumptionReport:
    no_twins: bool
    ssc: bool
    positivity: bool
    distinct_components: bool
    linearly_independent_columns: bool

    @property
    def ok(self) -> bool:
        return all(
            (self.no_twins, self.ssc, self.positivity,
             self.distinct_components, self.linearly_independent_columns)
        )


def check_no_twins(adjacency: np.ndarray) -> bool:
    cols = [tuple(c) for c in np.asarray(adjacency).T]
    return len(set(cols)) == len(cols)


def check_ssc(adjacency: np.ndarray) -> bool:
    """No hidden neighbourhood is contained in another (empty ones included)."""
    a = np.asarray(adjacency, dtype=bool)
    for i, j in permutations(range(a.shape[1]), 2):
        if not (a[:, i] & ~a[:, j]).any():
            return False
    return True


def check_independent_columns(adjacency: np.ndarray) -> bool:
    a = np.asarray(adjacency, dtype=float)
    return a.shape[1] == 0 or np.linalg.matrix_rank(a) == a.shape[1]


def validate_assumptions(model: LatentCausalModel) -> AssumptionReport:
    """Check the algorithmically checkable assumptions; never raises.

    Maximality is a property of how the model was built and is not checked.
    """
    a = model.gamma.adjacency
    distinct = True
    for bank in model.obs_law:
        means = np.array([c.mean for c in bank])
        if len(means) > 1:
            gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
            gaps[np.diag_indices(len(means))] = np.inf
            distinct &= bool(gaps.min() > COMPONENT_TOL)
    return AssumptionReport(
        no_twins=check_no_twins(a),
        ssc=check_ssc(a),
        positivity=bool((model.joint.entries > 0).all()),
        distinct_components=distinct,
        linearly_independent_columns=check_independent_columns(a),
    )


def _as_subset(model: LatentCausalModel, subset: Iterable[int]) -> tuple:
    s = tuple(sorted(set(int(i) for i in subset)))
    if not s:
        raise ValueError("subset must be nonempty")
    if s[0] < 0 or s[-1] >= model.n:
        raise ValueError(f"subset {s} out of range for n={model.n}")
    return s


def marginal_k(model: LatentCausalModel, subset: Iterable[int]) -> int:
    """Number of mixture components of the marginal over ``subset``."""
    s = _as_subset(model, subset)
    return int(np.prod([model.dims[j] for j in model.gamma.parents_of_set(s)], dtype=np.int64))


def exact_oracle(model: LatentCausalModel, subset: Iterable[int]) -> MixtureView:
    s = _as_subset(model, subset)
    d = model.obs_dim
    pa = model.gamma.parents_of_set(s)
    weights = model.joint.marginal(pa).reshape(-1)
    pa_dims = [model.dims[j] for j in pa]
    configs = np.array(np.unravel_index(np.arange(len(weights)), pa_dims)).T.reshape(len(weights), len(pa))
    # lift each pa(S) configuration to a full state so config_index can be reused
    states = np.zeros((len(weights), model.m), dtype=np.int64)
    states[:, pa] = configs
    means = np.zeros((len(weights), len(s) * d))
    covs = []
    cov_blocks = [[None] * len(s) for _ in range(len(weights))]
    for b, i in enumerate(s):
        idx = model.config_index(i, states)
        for r, c in enumerate(idx):
            comp = model.obs_law[i][c]
            means[r, b * d:(b + 1) * d] = comp.mean
            cov_blocks[r][b] = comp.cov
    for blocks in cov_blocks:
        cov = np.zeros((len(s) * d, len(s) * d))
        for b, blk in enumerate(blocks):
            cov[b * d:(b + 1) * d, b * d:(b + 1) * d] = blk
        covs.append(cov)

    # components that coincide numerically merge, as any real oracle would see them
    keep: list[int] = []
    merged_w: list[float] = []
    for r in range(len(weights)):
        for q, kr in enumerate(keep):
            if np.linalg.norm(means[r] - means[kr]) <= COMPONENT_TOL:
                merged_w[q] += weights[r]
                break
        else:
            keep.append(r)
            merged_w.append(float(weights[r]))
    return MixtureView(
        subset=s,
        k=len(keep),
        weights=np.array(merged_w),
        means=means[keep],
        covs=tuple(covs[r] for r in keep),
    )


def exact_component_map(model: LatentCausalModel) -> np.ndarray:
    """``K x n`` integer array: row ``j`` gives ``L(j)`` (0-based component indices).

    Built by projecting each full component onto every ``X_i`` block and
    looking the projection up among the marginal components of ``X_i``.
    """
    d = model.obs_dim
    full = model.component_means()
    rows = np.zeros((model.K, model.n), dtype=np.int64)
    for i in range(model.n):
        marg = exact_oracle(model, [i]).means
        block = full[:, i * d:(i + 1) * d]
        dist = np.linalg.norm(block[:, None, :] - marg[None, :, :], axis=-1)
        nearest = dist.argmin(axis=1)
        if (dist[np.arange(model.K), nearest] > COMPONENT_TOL).any():
            raise InconsistentInput(f"projection onto X_{i} matches no marginal component")
        rows[:, i] = nearest
    return rows
