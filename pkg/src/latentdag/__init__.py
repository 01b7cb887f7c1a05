"""Recover latent causal graphical models from observed mixture data."""

from .bipartite import RecoveredBipartite, brute_force_recover, build_m3, jennrich, recover, weights_from_counts
from .datagen import GenConfig, SampleSet, gen_model, sample
from .errors import (
    AssumptionViolation,
    GenerationError,
    IncompleteTableError,
    InconsistentInput,
    JennrichFailure,
    LatentDagError,
    NumericalFailure,
    UnrecoverableTensor,
)
from .evaluation import TrialResult, align_gamma, align_joint, shd, uce
from .latentdist import ComponentMap, Correspondence, reconstruct
from .mixoracle import EmpiricalOracle, ExactOracle
from .model import (
    BipartiteGraph,
    DomainSpec,
    JointProbTable,
    LatentCausalModel,
    LatentDag,
    exact_component_map,
    marginal_k,
    validate_assumptions,
)
from .pipeline import PipelineConfig, run_pipeline, run_trial
from .structlearn import Cpdag, DiscreteDataset, dag_to_cpdag, greedy_search

__version__ = "0.1.0"
