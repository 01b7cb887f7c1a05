import numpy as np
import pytest

from latentdag.datagen import random_covariance, unit_vector
from latentdag.model import (
    BipartiteGraph,
    DomainSpec,
    GaussianComponent,
    JointProbTable,
    LatentCausalModel,
    LatentDag,
)

# Three binary hidden variables, each pair sharing one observed child.
TRIANGLE = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]])

# Two ternary hidden variables over four observed variables.
TERNARY = np.array([[1, 1], [1, 0], [1, 0], [0, 1]])

# 1-based component map rows for the two worked examples.
TRIANGLE_L = [(2, 4, 3), (4, 3, 4), (4, 4, 2), (3, 2, 4), (2, 3, 1), (1, 1, 3), (3, 1, 2), (1, 2, 1)]
TERNARY_L = [(1, 2, 1, 3), (3, 3, 3, 1), (4, 1, 2, 2), (2, 2, 1, 1), (7, 2, 1, 2),
             (5, 1, 2, 1), (9, 1, 2, 3), (8, 3, 3, 3), (6, 3, 3, 2)]

# expected 1-based component per hidden state
TRIANGLE_STATES = {(0, 0, 0): 1, (1, 0, 0): 6, (0, 1, 0): 3, (1, 1, 0): 7,
                   (0, 0, 1): 5, (1, 0, 1): 8, (0, 1, 1): 2, (1, 1, 1): 4}
TERNARY_STATES = {(0, 0): 1, (1, 0): 7, (2, 0): 8, (0, 1): 4, (1, 1): 6,
                  (2, 1): 2, (0, 2): 5, (1, 2): 3, (2, 2): 9}


def make_model(adjacency, dims, edges=(), joint=None, seed=0, d=5, cov_max_eig=0.01):
    """Hand-built model with random unit-norm means and small covariances."""
    rng = np.random.default_rng(seed)
    gamma = BipartiteGraph(np.asarray(adjacency))
    spec = DomainSpec(tuple(dims))
    if joint is None:
        joint = np.full(spec.dims, 1.0 / spec.K)
    obs_law = []
    for i in range(gamma.n):
        q = int(np.prod([spec[j] for j in gamma.parents(i)], dtype=np.int64))
        obs_law.append([GaussianComponent(unit_vector(rng, d), random_covariance(rng, d, cov_max_eig))
                        for _ in range(q)])
    return LatentCausalModel(gamma, LatentDag(spec.m, frozenset(edges)), spec,
                             JointProbTable(spec, joint), obs_law, d)


@pytest.fixture
def triangle_model():
    return make_model(TRIANGLE, (2, 2, 2))
