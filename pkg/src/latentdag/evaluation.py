"""Metrics and alignment of recovered models against ground truth."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bipartite import RecoveredBipartite
from .latentdist import Correspondence
from .model import BipartiteGraph, LatentCausalModel
from .structlearn import Cpdag

CSV_HEADER = [
    "seed", "m", "n", "N", "shd", "uce", "gamma_exact", "dims_exact", "joint_tv", "method",
    "t_oracle", "t_bipartite", "t_latent", "t_struct", "failure_stage",
]


@dataclass
class TrialResult:
    seed: int
    m: int
    n: int
    N: int
    shd: int | None = None
    uce: int | None = None
    gamma_exact: bool = False
    dims_exact: bool = False
    joint_tv: float | None = None
    method: str = ""
    t_oracle: float = 0.0
    t_bipartite: float = 0.0
    t_latent: float = 0.0
    t_struct: float = 0.0
    failure_stage: str = ""

    def row(self) -> list:
        d = asdict(self)
        return ["" if d[k] is None else d[k] for k in CSV_HEADER]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_row(cls, row: dict) -> "TrialResult":
        def opt(v, f):
            return None if v in ("", None) else f(v)
        return cls(
            seed=int(row["seed"]), m=int(row["m"]), n=int(row["n"]), N=int(row["N"]),
            shd=opt(row["shd"], int), uce=opt(row["uce"], int),
            gamma_exact=str(row["gamma_exact"]) == "True", dims_exact=str(row["dims_exact"]) == "True",
            joint_tv=opt(row["joint_tv"], float), method=row["method"],
            t_oracle=float(row["t_oracle"]), t_bipartite=float(row["t_bipartite"]),
            t_latent=float(row["t_latent"]), t_struct=float(row["t_struct"]),
            failure_stage=row["failure_stage"] or "",
        )


def append_rows(path, results) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_HEADER)
        for r in results:
            w.writerow(r.row())


def read_rows(path) -> list[TrialResult]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        return [TrialResult.from_row(r) for r in csv.DictReader(fh)]


def shd(a: Cpdag, b: Cpdag) -> int:
    """Number of vertex pairs whose edge status (none, ->, <-, --) differs."""
    if a.m != b.m:
        raise ValueError(f"graphs have different sizes {a.m} and {b.m}")
    return sum(a.status(i, j) != b.status(i, j) for i in range(a.m) for j in range(i + 1, a.m))


def uce(estimated: Cpdag, truth: Cpdag) -> int:
    """Undirected edges of ``estimated`` whose skeleton edge exists in ``truth``."""
    if estimated.m != truth.m:
        raise ValueError(f"graphs have different sizes {estimated.m} and {truth.m}")
    skel = truth.skeleton()
    return sum(1 for e in estimated.undirected if e in skel)


def align_gamma(est: RecoveredBipartite, truth: LatentCausalModel) -> list[int] | None:
    """``sigma[j]`` is the estimated column equal to true column ``j``, or None."""
    if est.gamma.m != truth.m or est.gamma.n != truth.n:
        return None
    cols = {c: j for j, c in enumerate(est.gamma.columns())}
    sigma = []
    for j, col in enumerate(truth.gamma.columns()):
        if col not in cols:
            return None
        sigma.append(cols[col])
    return sigma


def dims_match(est: RecoveredBipartite, truth: LatentCausalModel, sigma) -> bool:
    return sigma is not None and all(est.dims[sigma[j]] == truth.dims[j] for j in range(truth.m))


def _relabel(est_joint: np.ndarray, sigma, perms) -> np.ndarray:
    """Move estimated axes into truth order and apply value maps ``perms[j][v_est] = v_true``."""
    E = np.transpose(est_joint, sigma)
    for j, p in enumerate(perms):
        idx = np.empty(len(p), dtype=np.int64)
        idx[np.asarray(p)] = np.arange(len(p))
        E = np.take(E, idx, axis=j)
    return E


def _tv(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(a - b).sum())


def align_joint(est_joint, est_corr: Correspondence, est_means: np.ndarray,
                truth: LatentCausalModel, sigma) -> float:
    """Total variation between tables after matching hidden values.

    Each estimated state is matched to the true state whose full component
    mean is nearest; per-variable value maps come from an assignment on those
    votes and are then polished by exhaustive search over small domains.
    """
    est = np.asarray(getattr(est_joint, "entries", est_joint), dtype=float)
    true = truth.joint.entries
    if sigma is None or len(sigma) != truth.m:
        raise ValueError("a column alignment is required")
    if tuple(est.shape[s] for s in sigma) != truth.dims.dims:
        raise ValueError("domain sizes differ after alignment")
    truth_means = truth.component_means()
    truth_states = truth.dims.states()
    votes = [np.zeros((d, d)) for d in truth.dims.dims]
    for h in np.ndindex(est.shape):
        mu = est_means[est_corr.A[h]]
        t = truth_states[np.argmin(np.linalg.norm(truth_means - mu, axis=1))]
        for j in range(truth.m):
            votes[j][h[sigma[j]], t[j]] += 1
    perms = []
    for v in votes:
        rows, cols = linear_sum_assignment(-v)
        perms.append(cols[np.argsort(rows)].tolist())
    best = _tv(_relabel(est, sigma, perms), true)
    improved = True
    while improved and best > 0:
        improved = False
        for j, d in enumerate(truth.dims.dims):
            if d > 4:
                continue
            for p in permutations(range(d)):
                trial = perms[:j] + [list(p)] + perms[j + 1:]
                tv = _tv(_relabel(est, sigma, trial), true)
                if tv < best - 1e-15:
                    best, perms, improved = tv, trial, True
    return best


def _match_columns(est: np.ndarray, truth: np.ndarray) -> list[int]:
    """Min-Hamming matching; ``match[j]`` is the estimated column for true column j (or -1)."""
    m_e, m_t = est.shape[1], truth.shape[1]
    size = max(m_e, m_t)
    cost = np.zeros((size, size))
    for j in range(size):
        tcol = truth[:, j] if j < m_t else np.zeros(truth.shape[0])
        for k in range(size):
            ecol = est[:, k] if k < m_e else np.zeros(est.shape[0])
            cost[j, k] = np.abs(tcol - ecol).sum()
    rows, cols = linear_sum_assignment(cost)
    match = [-1] * m_t
    for r, c in zip(rows, cols):
        if r < m_t:
            match[r] = int(c) if c < m_e else -1
    return match


def graph_shd(est_gamma: BipartiteGraph, est_cpdag: Cpdag, truth_gamma: BipartiteGraph,
              truth_cpdag: Cpdag) -> tuple[int, int]:
    """SHD and UCE over the whole graph: latent CPDAG plus hidden-to-observed edges.

    Hidden variables are matched by minimum Hamming distance between columns;
    unmatched variables on either side count as isolated vertices of the other.
    Edges into observed variables are always directed.
    """
    match = _match_columns(est_gamma.adjacency, truth_gamma.adjacency)
    m_t, m_e, n = truth_gamma.m, est_gamma.m, truth_gamma.n
    # est hidden k -> combined index
    est_index = {}
    for j, k in enumerate(match):
        if k >= 0:
            est_index[k] = j
    extra = m_t
    for k in range(m_e):
        if k not in est_index:
            est_index[k] = extra
            extra += 1
    size = extra + n

    def combined(gamma, cp, index):
        directed = {(index[a], index[b]) for a, b in cp.directed}
        undirected = {frozenset((index[a], index[b])) for a, b in map(tuple, cp.undirected)}
        for i in range(gamma.n):
            for j in gamma.parents(i):
                directed.add((index[j], extra + i))
        return Cpdag(size, frozenset(directed), frozenset(undirected))

    truth_c = combined(truth_gamma, truth_cpdag, {j: j for j in range(m_t)})
    est_c = combined(est_gamma, est_cpdag, est_index)
    return shd(est_c, truth_c), uce(est_c, truth_c)
