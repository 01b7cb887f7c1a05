"""Recover the hidden-to-observed graph and hidden domain sizes from component counts.

Subsets of observed variables are integer bitmasks throughout (bit ``i`` set
iff ``X_i`` is a member).  With ``w(H) = ln dim(H)`` the log-count of a
subset is additive over its hidden parents, and inclusion-exclusion turns it
into the total weight of the *common* parents.  Those values, arranged as a
symmetric third-order tensor, have rank-one terms ``w_j a_j (x) a_j (x) a_j``
whose factors are the columns of the adjacency matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .errors import IncompleteTableError, JennrichFailure, UnrecoverableTensor, AssumptionViolation
from .model import BipartiteGraph, DomainSpec

log = logging.getLogger(__name__)


def to_mask(subset: Iterable[int]) -> int:
    mask = 0
    for i in subset:
        mask |= 1 << int(i)
    return mask


def members(mask: int) -> list[int]:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def submasks(mask: int):
    """Nonempty submasks of ``mask``."""
    sub = mask
    while sub:
        yield sub
        sub = (sub - 1) & mask


def subsets_up_to(n: int, t: int) -> list[int]:
    return [to_mask(c) for size in range(1, t + 1) for c in combinations(range(n), size)]


@dataclass
class SubsetWeightTable:
    n: int
    W: dict  # mask -> ln k(S)
    t: int

    def __getitem__(self, mask: int) -> float:
        if mask == 0:
            return 0.0
        try:
            return self.W[mask]
        except KeyError:
            raise IncompleteTableError(f"no weight for subset {members(mask)}") from None


@dataclass(frozen=True)
class SymmetricTensor3:
    n: int
    entries: np.ndarray

    def dump(self, path) -> None:
        """Raw dump for debugging: int64 ``n`` then row-major float64 entries."""
        with open(path, "wb") as fh:
            np.array([self.n], dtype="<i8").tofile(fh)
            np.ascontiguousarray(self.entries, dtype="<f8").tofile(fh)

    @classmethod
    def load(cls, path) -> "SymmetricTensor3":
        with open(path, "rb") as fh:
            n = int(np.fromfile(fh, dtype="<i8", count=1)[0])
            entries = np.fromfile(fh, dtype="<f8", count=n ** 3).reshape(n, n, n)
        return cls(n, entries)


@dataclass
class RecoveredBipartite:
    gamma: BipartiteGraph
    dims: DomainSpec
    raw_columns: np.ndarray
    raw_weights: np.ndarray
    method: str
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.gamma.n,
            "m": self.gamma.m,
            "dims": list(self.dims.dims),
            "gamma": self.gamma.adjacency.astype(int).tolist(),
            "raw_columns": self.raw_columns.tolist(),
            "raw_weights": self.raw_weights.tolist(),
            "method": self.method,
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RecoveredBipartite":
        n, m = doc["n"], doc["m"]
        return cls(
            gamma=BipartiteGraph(np.array(doc["gamma"], dtype=int).reshape(n, m)),
            dims=DomainSpec(tuple(doc["dims"])),
            raw_columns=np.array(doc["raw_columns"], dtype=float).reshape(n, m),
            raw_weights=np.array(doc["raw_weights"], dtype=float),
            method=doc["method"],
            residual=float(doc.get("residual", 0.0)),
        )


def weights_from_counts(k_table: Mapping[int, int], n: int | None = None) -> SubsetWeightTable:
    """Log-transform a table of component counts keyed by subset bitmask."""
    W = {}
    for mask, k in k_table.items():
        if k < 1:
            raise ValueError(f"invalid component count {k} for subset {members(mask)}")
        W[int(mask)] = float(np.log(k))
    if n is None:
        n = max((int(m).bit_length() for m in W), default=0)
    t = max((int(m).bit_count() for m in W), default=0)
    return SubsetWeightTable(n=n, W=W, t=t)


def comw(mask: int, W: SubsetWeightTable) -> float:
    """Total weight of the hidden variables adjacent to every member of ``mask``."""
    total = 0.0
    for sub in submasks(mask):
        sign = 1.0 if sub.bit_count() % 2 else -1.0
        total += sign * W[sub]
    return total


def build_m3(W: SubsetWeightTable) -> SymmetricTensor3:
    n = W.n
    if W.t < min(3, n):
        raise IncompleteTableError("M3 needs counts for every subset of size <= 3")
    T = np.zeros((n, n, n))
    for i in range(n):
        T[i, i, i] = comw(1 << i, W)
    for i, j in combinations(range(n), 2):
        v = comw((1 << i) | (1 << j), W)
        for idx in ((i, i, j), (i, j, i), (j, i, i), (j, j, i), (j, i, j), (i, j, j)):
            T[idx] = v
    for i, j, k in combinations(range(n), 3):
        v = comw((1 << i) | (1 << j) | (1 << k), W)
        for a, b, c in ((i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)):
            T[a, b, c] = v
    return SymmetricTensor3(n=n, entries=T)


def rank_one_terms(columns: np.ndarray) -> np.ndarray:
    """Flattened ``a (x) a (x) a`` for each column, as an ``n^3 x m`` design matrix."""
    n, m = columns.shape
    return np.stack([np.einsum("i,j,k->ijk", columns[:, j], columns[:, j], columns[:, j]).ravel()
                     for j in range(m)], axis=1) if m else np.zeros((n ** 3, 0))


def _normalize_max_entry(v: np.ndarray) -> np.ndarray:
    return v / v[np.argmax(np.abs(v))]


def finalize_columns(T: np.ndarray, raw: np.ndarray, method: str, eps_rel: float,
                     round_tol: float | None) -> RecoveredBipartite:
    """Round raw factor directions to 0/1, refit weights and validate.

    Raises :class:`JennrichFailure` when the rounded decomposition is not a
    valid bipartite graph or does not explain the tensor.
    """
    raw = np.asarray(raw)
    if np.iscomplexobj(raw):
        if np.abs(raw.imag).max(initial=0.0) > 1e-8 * max(np.abs(raw).max(initial=0.0), 1e-300):
            raise JennrichFailure("complex factor directions")
        raw = raw.real
    raw = np.column_stack([_normalize_max_entry(raw[:, j]) for j in range(raw.shape[1])]) \
        if raw.shape[1] else raw
    cols = (raw >= 0.5).astype(np.int8)
    if round_tol is not None:
        err = np.abs(raw - cols).max(initial=0.0)
        if err > round_tol:
            raise JennrichFailure(f"raw column entry {err:.3g} away from 0/1")
    if cols.shape[1] and not cols.any(axis=0).all():
        raise JennrichFailure("rounded column is empty")
    if len({tuple(c) for c in cols.T}) != cols.shape[1]:
        raise JennrichFailure("rounded columns are not distinct")
    design = rank_one_terms(cols.astype(float))
    target = T.ravel()
    w, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = float(np.linalg.norm(design @ w - target))
    norm = float(np.linalg.norm(target))
    if resid > eps_rel * max(norm, 1e-300):
        raise JennrichFailure(f"reconstruction residual {resid:.3g} exceeds {eps_rel:.3g} * {norm:.3g}")
    dims = np.rint(np.exp(w)).astype(int)
    if (dims < 2).any():
        raise JennrichFailure(f"recovered domain sizes {dims.tolist()} include values < 2")
    return RecoveredBipartite(
        gamma=BipartiteGraph(cols),
        dims=DomainSpec(tuple(dims.tolist())),
        raw_columns=raw,
        raw_weights=w,
        method=method,
        residual=resid / max(norm, 1e-300),
    )


def numerical_rank(T: np.ndarray, rank_tol: float) -> int:
    n = T.shape[0]
    s = np.linalg.svd(T.reshape(n, n * n), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int((s > rank_tol * s[0]).sum())


def jennrich(M3: SymmetricTensor3, seed=0, *, rank: int | None = None, eps_rel: float = 1e-6,
             rank_tol: float = 1e-8, round_tol: float | None = 0.05,
             attempts: int = 3, gap_tol: float = 1e-6, pair_tol: float = 1e-2) -> RecoveredBipartite:
    """Simultaneous diagonalization of two random slice contractions.

    The mode-1 unfolding gives the column space of the adjacency matrix; both
    contractions are compressed onto it, so the eigenproblem is ``m x m`` and
    well posed.  Left eigenvectors of ``T_x T_y^+`` and right eigenvectors of
    ``T_y^+ T_x`` are paired by maximal absolute cosine.
    """
    T = M3.entries
    n = M3.n
    if rank is None:
        rank = numerical_rank(T, rank_tol)
    if rank == 0:
        return RecoveredBipartite(BipartiteGraph(np.zeros((n, 0), dtype=int)), DomainSpec(()),
                                  np.zeros((n, 0)), np.zeros(0), "jennrich")
    U, _, _ = np.linalg.svd(T.reshape(n, n * n), full_matrices=False)
    U = U[:, :rank]
    rng = np.random.default_rng(seed)
    last_err = None
    for _ in range(attempts):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        y /= np.linalg.norm(y)
        Tx = U.T @ np.tensordot(T, x, axes=([2], [0])) @ U
        Ty = U.T @ np.tensordot(T, y, axes=([2], [0])) @ U
        try:
            Ty_inv = np.linalg.pinv(Ty)
            lam_l, vec_l = np.linalg.eig(Tx @ Ty_inv)
            lam_r, vec_r = np.linalg.eig((Ty_inv @ Tx).T)
            lam = lam_l
            scale = max(np.abs(lam).max(), 1e-300)
            if np.abs(lam.imag).max() > gap_tol * scale:
                raise JennrichFailure("complex eigenvalues")
            lam_sorted = np.sort(lam.real)
            if rank > 1 and np.diff(lam_sorted).min() < gap_tol * scale:
                raise JennrichFailure("clustered eigenvalues")
            left, right = _real_vectors(vec_l), _real_vectors(vec_r)
            cos = np.abs(_unit_cols(left).T @ _unit_cols(right))
            pair = cos.argmax(axis=1)
            if len(set(pair.tolist())) != rank or cos[np.arange(rank), pair].min() < 1 - pair_tol:
                raise JennrichFailure("left and right eigenvectors do not pair up")
            merged = np.column_stack([
                _normalize_max_entry(left[:, j]) + _normalize_max_entry(right[:, pair[j]])
                for j in range(rank)
            ]) / 2
            return finalize_columns(T, U @ merged, "jennrich", eps_rel, round_tol)
        except (JennrichFailure, np.linalg.LinAlgError) as exc:
            last_err = exc
    raise JennrichFailure(str(last_err))


def _real_vectors(v: np.ndarray) -> np.ndarray:
    # eig may return complex arrays with zero imaginary part; rotate each vector
    # so its largest entry is real before dropping the imaginary part
    if not np.iscomplexobj(v):
        return v
    out = np.empty(v.shape)
    for j in range(v.shape[1]):
        col = v[:, j] / v[np.argmax(np.abs(v[:, j])), j]
        if np.abs(col.imag).max() > 1e-8:
            raise JennrichFailure("complex eigenvectors")
        out[:, j] = col.real
    return out


def _unit_cols(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=0, keepdims=True)


def cp_als(T: np.ndarray, rank: int, rng: np.random.Generator, max_iter: int = 500,
           tol: float = 1e-12) -> tuple[list[np.ndarray], float]:
    """Plain three-way CP-ALS; returns factors and relative fit residual."""
    n = T.shape[0]
    factors = [rng.standard_normal((n, rank)) for _ in range(3)]
    unf = [T.reshape(n, -1), np.moveaxis(T, 1, 0).reshape(n, -1), np.moveaxis(T, 2, 0).reshape(n, -1)]
    norm = np.linalg.norm(T)
    prev = np.inf
    for _ in range(max_iter):
        for mode in range(3):
            a, b = [factors[k] for k in range(3) if k != mode]
            kr = np.einsum("ir,jr->ijr", a, b).reshape(-1, rank)
            gram = (a.T @ a) * (b.T @ b)
            factors[mode] = unf[mode] @ kr @ np.linalg.pinv(gram)
        approx = np.einsum("ir,jr,kr->ijk", *factors)
        res = np.linalg.norm(T - approx) / max(norm, 1e-300)
        if abs(prev - res) < tol:
            break
        prev = res
    return factors, float(res)


def als_fallback(M3: SymmetricTensor3, m_candidates: Iterable[int], seed=0, *,
                 eps_rel: float = 1e-6, restarts: int = 8, round_tol: float | None = None,
                 max_iter: int = 500) -> RecoveredBipartite:
    """Fit CP models of each candidate rank; keep the smallest whose rounded fit passes."""
    cands = sorted(set(int(m) for m in m_candidates))
    if not cands:
        raise ValueError("m_candidates must be nonempty")
    T = M3.entries
    rng = np.random.default_rng(seed)
    report = []
    for m in cands:
        best = None
        for _ in range(restarts):
            factors, res = cp_als(T, m, rng, max_iter=max_iter)
            # the three factors share directions for a symmetric tensor; average them
            raw = np.column_stack([
                sum(_normalize_max_entry(f[:, r]) for f in factors) / 3 for r in range(m)
            ])
            try:
                rec = finalize_columns(T, raw, "als", eps_rel, round_tol)
            except JennrichFailure as exc:
                report.append((m, res, str(exc)))
                continue
            if best is None or rec.residual < best.residual:
                best = rec
        if best is not None:
            return best
    raise UnrecoverableTensor(f"no rank in {cands} fits within {eps_rel}: {report[-3:]}")


def full_weight_table(k_table: Mapping[int, int], n: int) -> SubsetWeightTable:
    W = weights_from_counts(k_table, n)
    missing = [m for m in range(1, 1 << n) if m not in W.W]
    if missing:
        raise IncompleteTableError(f"{len(missing)} subsets missing from the full table")
    return W


def comw_all(W: SubsetWeightTable) -> np.ndarray:
    """comW for every mask at once via a signed zeta transform, ``O(n 2^n)``."""
    n = W.n
    f = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        f[mask] = W[mask] if mask.bit_count() % 2 else -W[mask]
    for i in range(n):
        bit = 1 << i
        idx = np.arange(1 << n)
        hi = idx[(idx & bit) != 0]
        f[hi] += f[hi ^ bit]
    return f


def brute_force_recover(W: SubsetWeightTable, tol: float = 1e-9, max_steps: int | None = None) -> RecoveredBipartite:
    """Peel maximal neighbourhood blocks off a complete weight table.

    Each block ``Y`` (nonzero common weight, zero after adding any outside
    variable) is the neighbourhood of exactly one hidden variable, whose
    weight is the common weight of ``Y``.  Removing that variable means
    subtracting its weight from every subset meeting ``Y``.
    """
    n = W.n
    vals = np.array([0.0] + [W[m] for m in range(1, 1 << n)])
    all_masks = np.arange(1 << n)
    columns, weights = [], []
    steps = max_steps if max_steps is not None else (1 << n)
    while np.abs(vals).max() > tol:
        if len(columns) >= steps:
            raise AssumptionViolation("peeling did not terminate")
        cw = comw_all(SubsetWeightTable(n, {m: vals[m] for m in range(1, 1 << n)}, n))
        block = None
        for mask in sorted(range(1, 1 << n), key=lambda s: (-s.bit_count(), s)):
            if abs(cw[mask]) <= tol:
                continue
            if all(abs(cw[mask | (1 << x)]) <= tol for x in range(n) if not mask >> x & 1):
                block = mask
                break
        if block is None:
            raise AssumptionViolation("weights remain but no maximal neighbourhood block exists")
        w = float(cw[block])
        columns.append([1 if block >> i & 1 else 0 for i in range(n)])
        weights.append(w)
        vals[(all_masks & block) != 0] -= w
    cols = np.array(columns, dtype=np.int8).T.reshape(n, len(columns))
    w = np.array(weights)
    dims = np.rint(np.exp(w)).astype(int)
    if (dims < 2).any():
        raise AssumptionViolation(f"peeled weights give domain sizes {dims.tolist()}")
    if len({tuple(c) for c in cols.T}) != cols.shape[1]:
        raise AssumptionViolation("peeled neighbourhoods are not distinct")
    return RecoveredBipartite(BipartiteGraph(cols), DomainSpec(tuple(dims.tolist())),
                              cols.astype(float), w, "brute_force")


def recover(M3: SymmetricTensor3, seed=0, *, exact: bool = True, m_candidates=None) -> RecoveredBipartite:
    """Jennrich first, ALS over candidate ranks when it fails."""
    eps = 1e-6 if exact else 0.15
    round_tol = 0.05 if exact else None
    rank_tol = 1e-8 if exact else 0.05
    try:
        return jennrich(M3, seed, eps_rel=eps, rank_tol=rank_tol, round_tol=round_tol)
    except JennrichFailure as exc:
        log.info("Jennrich failed (%s); falling back to ALS", exc)
    if m_candidates is None:
        m_candidates = range(1, M3.n + 1)
    return als_fallback(M3, m_candidates, seed, eps_rel=eps)
