"""Rebuild the joint table of the hidden variables from the component map.

Two full components that agree on every observed variable outside the
children of ``H_i`` differ only in the value of ``H_i``.  Grouping
components this way gives, for each hidden variable, classes that enumerate
its values.  Anchoring one component at the all-zero state and walking
outwards by Hamming weight then pins every state to exactly one component:
a state is the unique component shared by the ``H_i``-class of one
already-placed neighbour and the ``H_j``-class of another.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .errors import InconsistentInput
from .model import BipartiteGraph, DomainSpec, JointProbTable


@dataclass(frozen=True)
class ComponentMap:
    """``rows[j]`` lists, for full component ``j``, its component index over each ``X_i``."""

    rows: np.ndarray  # K x n, 0-based
    marginal_ks: tuple

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2:
            raise ValueError("component map must be a K x n table")
        ks = tuple(int(k) for k in self.marginal_ks)
        if len(ks) != rows.shape[1]:
            raise ValueError("one marginal count per observed variable required")
        if rows.size and ((rows < 0).any() or (rows >= np.array(ks)).any()):
            raise ValueError("component map entry outside its declared range")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "marginal_ks", ks)

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    def is_injective(self) -> bool:
        return len({tuple(r) for r in self.rows.tolist()}) == self.K

    def to_dict(self) -> dict:
        return {"K": self.K, "rows": self.rows.tolist(), "marginal_ks": list(self.marginal_ks)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ComponentMap":
        rows = np.array(doc["rows"], dtype=np.int64).reshape(doc["K"], len(doc["marginal_ks"]))
        return cls(rows, tuple(doc["marginal_ks"]))


@dataclass(frozen=True)
class DirectionClasses:
    groups: tuple  # groups[i]: tuple of sorted component tuples
    group_of: tuple  # group_of[i][j]: index into groups[i] of the group containing j

    def members(self, i: int, component: int) -> tuple:
        return self.groups[i][self.group_of[i][component]]


@dataclass(frozen=True)
class Correspondence:
    A: np.ndarray  # dims-shaped, entry = full component index
    inverse: tuple  # inverse[j] = hidden state tuple of component j

    def to_dict(self) -> dict:
        return {"dims": list(self.A.shape), "component_of_state": self.A.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Correspondence":
        A = np.array(doc["component_of_state"], dtype=np.int64).reshape(doc["dims"])
        return cls.from_table(A)

    @classmethod
    def from_table(cls, A: np.ndarray) -> "Correspondence":
        inverse = [None] * A.size
        for h in np.ndindex(A.shape):
            inverse[A[h]] = tuple(int(v) for v in h)
        return cls(A, tuple(inverse))


def direction_classes(L: ComponentMap, gamma: BipartiteGraph, dims: DomainSpec) -> DirectionClasses:
    if L.K != dims.K:
        raise InconsistentInput(f"component map has {L.K} rows but the domains give K={dims.K}")
    if gamma.n != L.rows.shape[1] or gamma.m != dims.m:
        raise InconsistentInput("component map, graph and domains disagree on n or m")
    if not L.is_injective():
        raise InconsistentInput("component map is not injective")
    rows = L.rows.tolist()
    groups, group_of = [], []
    for i in range(dims.m):
        outside = [x for x in range(gamma.n) if not gamma.adjacency[x, i]]
        by_key: dict = {}
        for j, row in enumerate(rows):
            by_key.setdefault(tuple(row[x] for x in outside), []).append(j)
        cls = tuple(tuple(g) for g in sorted(by_key.values()))
        bad = [g for g in cls if len(g) != dims[i]]
        if bad:
            raise InconsistentInput(
                f"hidden variable {i}: direction class of size {len(bad[0])}, expected {dims[i]}"
            )
        lookup = np.empty(L.K, dtype=np.int64)
        for gi, g in enumerate(cls):
            lookup[list(g)] = gi
        groups.append(cls)
        group_of.append(lookup)
    return DirectionClasses(tuple(groups), tuple(group_of))


def _states_by_weight(dims: tuple):
    """All states, ordered by Hamming weight and lexicographically within a weight."""
    m = len(dims)
    for w in range(m + 1):
        for support in combinations(range(m), w):
            for values in product(*[range(1, dims[i]) for i in support]):
                h = [0] * m
                for i, v in zip(support, values):
                    h[i] = v
                yield tuple(h)


def reconstruct(L: ComponentMap, gamma: BipartiteGraph, dims: DomainSpec, weights,
                anchor: int = 0) -> tuple[JointProbTable, Correspondence]:
    weights = np.asarray(weights, dtype=float)
    if len(weights) != dims.K:
        raise InconsistentInput(f"{len(weights)} weights for K={dims.K} components")
    if (weights <= 0).any() or abs(weights.sum() - 1) > 1e-9:
        raise InconsistentInput("mixture weights must be positive and sum to one")
    dc = direction_classes(L, gamma, dims)
    m = dims.m
    A = np.full(dims.dims, -1, dtype=np.int64)
    zero = (0,) * m
    A[zero] = anchor
    for i in range(m):
        others = [c for c in dc.members(i, anchor) if c != anchor]
        for v, c in enumerate(others, start=1):
            h = list(zero)
            h[i] = v
            A[tuple(h)] = c
    for h in _states_by_weight(dims.dims):
        nz = [k for k, v in enumerate(h) if v]
        if len(nz) < 2:
            continue
        i, j = nz[0], nz[-1]
        lo_i = list(h)
        lo_i[i] = 0
        lo_j = list(h)
        lo_j[j] = 0
        # h differs from lo_i only in H_i and from lo_j only in H_j
        cand = set(dc.members(i, A[tuple(lo_i)])) & set(dc.members(j, A[tuple(lo_j)]))
        if len(cand) != 1:
            raise InconsistentInput(
                f"state {h}: classes of H_{i} and H_{j} intersect in {len(cand)} components"
            )
        A[h] = cand.pop()
    if len(set(A.reshape(-1).tolist())) != dims.K:
        raise InconsistentInput("state-to-component assignment is not a bijection")
    J = weights[A] / weights.sum()
    return JointProbTable(dims, J), Correspondence.from_table(A)


def dump_result(joint: JointProbTable, corr: Correspondence) -> str:
    return json.dumps({
        "dims": list(joint.dims.dims),
        "entries": joint.flat().tolist(),
        "component_of_state": corr.A.reshape(-1).tolist(),
    })
