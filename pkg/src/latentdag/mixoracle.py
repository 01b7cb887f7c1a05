"""Mixture oracles: exact (from a known model) and empirical (from samples).

The empirical oracle estimates component counts for every subset of at most
three observed variables with K-means followed by agglomerative merging of
the centroids, scoring each merge level by its silhouette.  Singletons and
pairs then vote for each other's counts (divisibility or agreement of the
projected means); triples are warm-started from pairwise-consistent pair
means and restricted to counts divisible by their pairs' counts.

By default the oracle first tries a top-down route: the full mixture is
far better separated than any single block, so its centroids, projected onto
a subset's blocks, show that subset's components as tight groups.  A count
table read off this way is accepted only if a bipartite model recovered from
it reproduces every count and the full K exactly; otherwise the bottom-up
voting procedure above is used.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from .bipartite import build_m3, jennrich, members, to_mask, weights_from_counts
from .errors import LatentDagError
from .datagen import SampleSet
from .latentdist import ComponentMap
from .model import LatentCausalModel, exact_component_map, marginal_k

log = logging.getLogger(__name__)

#: Alignment tolerance for projected means: three standard deviations at the
#: largest generated covariance eigenvalue (0.01).
MEANS_TOL = 0.3

#: Projected full-mixture means closer than this (per observed block, in L2)
#: are taken to be the same subset component: one standard deviation at the
#: largest generated covariance eigenvalue.
PROJ_TOL = 0.1


@dataclass
class ClusterResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float

    @property
    def k(self) -> int:
        return len(self.centroids)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def cluster(data: np.ndarray, k: int, seed=0, init: np.ndarray | None = None,
            n_init: int = 3, restarts: int = 10) -> ClusterResult:
    """Lloyd iterations from k-means++ seeding (or from ``init``)."""
    data = np.asarray(data, dtype=float)
    if k < 1 or len(data) < k:
        raise ValueError(f"cannot form {k} clusters from {len(data)} rows")
    rng = np.random.default_rng(seed)
    for attempt in range(restarts):
        km = KMeans(
            n_clusters=k,
            init="k-means++" if init is None or attempt else init,
            n_init=n_init if init is None or attempt else 1,
            random_state=int(rng.integers(2**31 - 1)),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            km.fit(data)
        labels = km.labels_.astype(np.int64)
        if np.bincount(labels, minlength=k).min() > 0:
            return ClusterResult(km.cluster_centers_, labels, float(km.inertia_))
    log.warning("degenerate clustering: empty cluster after %d restarts", restarts)
    return ClusterResult(km.cluster_centers_, labels, float(km.inertia_))


def silhouette_from_sums(sums: np.ndarray, counts: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette given per-cluster distance sums ``sums[i, c]``.

    Points alone in their cluster score 0, as in the usual definition.
    """
    alive = counts > 0
    if alive.sum() < 2:
        return float("nan")
    n = len(labels)
    own = counts[labels]
    a = sums[np.arange(n), labels] / np.maximum(own - 1, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = np.where(alive, sums / np.where(alive, counts, 1), np.inf)
    means[np.arange(n), labels] = np.inf
    b = means.min(axis=1)
    s = np.where(own > 1, (b - a) / np.maximum(np.maximum(a, b), 1e-300), 0.0)
    return float(s.mean())


@dataclass
class MergePath:
    """Silhouettes and centroids along a greedy centroid-merging path."""

    silhouettes: dict  # t -> silhouette
    centroids: dict  # t -> t x dim array
    assignment: dict  # t -> length-k0 map from initial cluster to merged cluster


class Subsample:
    """Fixed row subsample with its distance matrix, for silhouette scoring."""

    def __init__(self, data: np.ndarray, size: int = 2000, seed=0):
        rng = np.random.default_rng(seed)
        N = len(data)
        self.idx = np.sort(rng.choice(N, size=min(N, size), replace=False))
        sub = data[self.idx]
        self.dist = cdist(sub, sub)

    def silhouette(self, labels: np.ndarray, k: int) -> float:
        lab = np.asarray(labels)[self.idx]
        onehot = np.zeros((len(lab), k))
        onehot[np.arange(len(lab)), lab] = 1.0
        return silhouette_from_sums(self.dist @ onehot, onehot.sum(axis=0), lab)


def merge_path(data: np.ndarray, result: ClusterResult, t_min: int, keep=None,
               sample_size: int = 2000, seed=0, sub: Subsample | None = None) -> MergePath:
    """Merge the two closest centroids repeatedly, from ``k`` down to ``t_min``.

    Silhouettes are computed on a fixed subsample; merging two clusters just
    adds their distance-sum columns, so each level costs ``O(s * k)``.
    ``keep`` limits which levels store centroids (all if None).
    """
    if sub is None:
        sub = Subsample(data, sample_size, seed)
    idx, dist = sub.idx, sub.dist
    k0 = result.k
    lab = result.labels[idx]
    onehot = np.zeros((len(idx), k0))
    onehot[np.arange(len(idx)), lab] = 1.0
    sums = dist @ onehot
    counts = onehot.sum(axis=0)
    cent = result.centroids.astype(float).copy()
    size = result.sizes().astype(float)
    group = np.arange(k0)
    alive = np.ones(k0, dtype=bool)
    sil, cents, assign = {}, {}, {}

    def record(t):
        live = np.flatnonzero(alive)
        relabel = np.full(k0, -1)
        relabel[live] = np.arange(len(live))
        sil[t] = silhouette_from_sums(sums[:, live], counts[live], relabel[group[lab]])
        if keep is None or t in keep:
            cents[t] = cent[live].copy()
            assign[t] = relabel[group].copy()

    t = k0
    if t >= max(t_min, 2):
        record(t)
    cd = cdist(cent, cent)
    np.fill_diagonal(cd, np.inf)
    while t > max(t_min, 1):
        a, b = np.unravel_index(np.argmin(cd), cd.shape)
        a, b = min(a, b), max(a, b)
        w = size[a] + size[b]
        cent[a] = (size[a] * cent[a] + size[b] * cent[b]) / max(w, 1e-300)
        size[a] = w
        sums[:, a] += sums[:, b]
        counts[a] += counts[b]
        sums[:, b] = 0
        counts[b] = 0
        alive[b] = False
        group[group == b] = a
        cd[b, :] = cd[:, b] = np.inf
        row = np.linalg.norm(cent - cent[a], axis=1)
        row[~alive] = np.inf
        row[a] = np.inf
        cd[a, :] = cd[:, a] = row
        t -= 1
        if t >= 2:
            record(t)
        elif keep is None or t in keep:
            cents[t] = cent[alive].copy()
            assign[t] = np.zeros(k0, dtype=np.int64)
    return MergePath(sil, cents, assign)


@dataclass
class KEstimate:
    subset: tuple
    candidates: list  # (k, silhouette), best first
    chosen_k: int
    votes: dict = field(default_factory=dict)
    low_confidence: bool = False
    silhouettes: dict = field(default_factory=dict)  # every scored t
    centroids: dict = field(default_factory=dict)  # candidate t -> centroids

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "candidates": [[int(k), float(s)] for k, s in self.candidates],
            "chosen_k": int(self.chosen_k),
            "votes": {str(k): float(v) for k, v in self.votes.items()},
            "low_confidence": self.low_confidence,
            "silhouettes": {str(k): float(v) for k, v in self.silhouettes.items()},
            "centroids": {str(k): np.asarray(v).tolist() for k, v in self.centroids.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KEstimate":
        return cls(
            subset=tuple(doc["subset"]),
            candidates=[(int(k), float(s)) for k, s in doc["candidates"]],
            chosen_k=int(doc["chosen_k"]),
            votes={int(k): float(v) for k, v in doc.get("votes", {}).items()},
            low_confidence=bool(doc.get("low_confidence", False)),
            silhouettes={int(k): float(v) for k, v in doc.get("silhouettes", {}).items()},
            centroids={int(k): np.array(v) for k, v in doc.get("centroids", {}).items()},
        )


def _top(sil: dict, allowed, count: int = 5) -> list:
    scored = [(t, s) for t, s in sil.items() if t in allowed and not math.isnan(s)]
    scored.sort(key=lambda ts: (-ts[1], ts[0]))
    return scored[:count]


def refine(data: np.ndarray, path: MergePath, ts, sub: Subsample, seed=0, n_init: int = 3) -> None:
    """Re-cluster directly at each ``t`` and keep whichever clustering scores higher.

    Lloyd runs from the merged centroids and from fresh k-means++ seeds; the
    merge path alone inherits any local optimum of its starting clustering.
    """
    for t in ts:
        if t < 2 or t >= len(data):
            continue
        tries = [cluster(data, t, seed + t, n_init=n_init)]
        if t in path.centroids:
            tries.append(cluster(data, t, seed + t, init=path.centroids[t]))
        for res in tries:
            sc = sub.silhouette(res.labels, t)
            if not (sc <= path.silhouettes.get(t, -np.inf)):
                path.silhouettes[t] = sc
                path.centroids[t] = res.centroids


def estimate_k_single(data_i: np.ndarray, k_max: int, seed=0, subset=(0,),
                      sample_size: int = 2000, n_top: int = 5, n_refine: int = 8) -> KEstimate:
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    if len(data_i) <= k_max:
        log.warning("only %d samples; shrinking k_max from %d", len(data_i), k_max)
        k_max = max(2, len(data_i) - 1)
    sub = Subsample(data_i, sample_size, seed)
    res = cluster(data_i, k_max, seed)
    path = merge_path(data_i, res, 2, sub=sub)
    refine(data_i, path, [t for t, _ in _top(path.silhouettes, range(2, k_max + 1), n_refine)], sub, seed)
    top = _top(path.silhouettes, range(2, k_max + 1), n_top)
    return KEstimate(
        subset=tuple(subset), candidates=top, chosen_k=top[0][0],
        silhouettes=path.silhouettes,
        centroids={t: path.centroids[t] for t, _ in top},
    )


def pair_candidates(c1, c2, k_max: int) -> list[int]:
    """Counts divisible by a candidate of each member and at most their product."""
    out = set()
    for a in c1:
        for b in c2:
            step = math.lcm(a, b)
            for t in range(step, min(a * b, k_max) + 1, step):
                out.add(t)
    return sorted(out)


def estimate_k_pair(data: np.ndarray, cands, seed=0, subset=(0, 1), sample_size: int = 2000,
                    n_top: int = 5, n_refine: int = 30) -> KEstimate:
    cands = sorted(set(int(c) for c in cands if c >= 2))
    if not cands:
        raise ValueError("no pair candidates")
    sub = Subsample(data, sample_size, seed)
    k0 = min(max(cands), len(data) - 1)
    res = cluster(data, k0, seed)
    path = merge_path(data, res, min(cands), keep=set(cands), sub=sub)
    refine(data, path, [t for t, _ in _top(path.silhouettes, set(cands), n_refine)], sub, seed)
    top = _top(path.silhouettes, set(cands), n_top)
    return KEstimate(
        subset=tuple(subset), candidates=top, chosen_k=top[0][0], silhouettes=path.silhouettes,
        centroids={t: path.centroids[t] for t, _ in top},
    )


def means_aligned(sub_centroids: np.ndarray, sup_centroids: np.ndarray, block: slice,
                  tol: float = MEANS_TOL) -> bool:
    """Do the superset means, projected onto ``block``, match the subset means both ways?"""
    proj = np.asarray(sup_centroids)[:, block]
    sub = np.asarray(sub_centroids)
    if len(proj) == 0 or len(sub) == 0:
        return False
    dist = cdist(proj, sub)
    return bool(dist.min(axis=1).max() <= tol and dist.min(axis=0).max() <= tol)


def _winner(votes: dict) -> int:
    return min(votes, key=lambda k: (-votes[k], k))


def vote_k(singles: dict, pairs: dict, d: int | None = None, tol: float = MEANS_TOL) -> dict:
    """Resolve singleton and pair counts by silhouette-weighted mutual votes.

    ``singles`` maps ``i -> KEstimate``, ``pairs`` maps ``(i, j) -> KEstimate``.
    A pair candidate and a member's candidate are consistent when the
    member's count divides the pair's, or (given the block width ``d`` and
    stored centroids) when the pair means project onto the member's means.
    Each related subset adds to a candidate the best silhouette among its own
    consistent candidates, and every candidate keeps its own silhouette.
    When the winners violate divisibility, the table is repaired jointly: the
    divisible assignment with the largest summed silhouette wins, and a pair
    with no divisible scored count falls back to the lcm (low-confidence).
    Returns a bitmask-keyed count table.
    """
    def w(s):
        return max(float(s), 0.0)

    for est in list(singles.values()) + list(pairs.values()):
        est.votes = {k: w(s) for k, s in est.candidates}
    for (i, j), pe in pairs.items():
        for pos, x in enumerate((i, j)):
            se = singles[x]
            block = slice(pos * d, (pos + 1) * d) if d is not None else None
            support_p = dict.fromkeys(pe.votes, 0.0)
            support_s = dict.fromkeys(se.votes, 0.0)
            for kp, sp in pe.candidates:
                for ks, ss in se.candidates:
                    ok = kp % ks == 0
                    if not ok and block is not None and ks in se.centroids and kp in pe.centroids:
                        ok = means_aligned(se.centroids[ks], pe.centroids[kp], block, tol)
                    if ok:
                        support_p[kp] = max(support_p[kp], w(ss))
                        support_s[ks] = max(support_s[ks], w(sp))
            # a related subset backs a candidate with its best consistent score, once
            for k, v in support_p.items():
                pe.votes[k] += v
            for k, v in support_s.items():
                se.votes[k] += v
    for est in list(singles.values()) + list(pairs.values()):
        est.chosen_k = _winner(est.votes)
    choice = {i: se.chosen_k for i, se in singles.items()}
    pair_k = {ij: pe.chosen_k for ij, pe in pairs.items()}
    if any(pair_k[(i, j)] % choice[i] or pair_k[(i, j)] % choice[j] for i, j in pairs):
        choice = _consistent_choice(singles, pairs)
        pair_k = {(i, j): _pair_given(pe, choice[i], choice[j])[0] for (i, j), pe in pairs.items()}
    table = {}
    for i, se in singles.items():
        se.chosen_k = choice[i]
        table[1 << i] = se.chosen_k
    for (i, j), pe in pairs.items():
        k = pair_k[(i, j)]
        pe.low_confidence = bool(k % choice[i] or k % choice[j])
        if k not in dict(pe.candidates):
            pe.candidates.append((k, pe.silhouettes.get(k, float("nan"))))
        pe.chosen_k = k
        table[(1 << i) | (1 << j)] = k
    return table


def _sil(est: KEstimate, k: int) -> float:
    s = est.silhouettes.get(k, dict(est.candidates).get(k, float("nan")))
    return 0.0 if math.isnan(s) else max(float(s), 0.0)


def _pair_given(pe: KEstimate, ki: int, kj: int):
    """Best-scoring pair count divisible by ``ki`` and ``kj``: (k, score)."""
    ok = {t for t in set(pe.silhouettes) | set(pe.votes)
          if t % ki == 0 and t % kj == 0 and t <= ki * kj}
    if ok:
        k = max(ok, key=lambda t: (_sil(pe, t), -t))
        return k, _sil(pe, k)
    return math.lcm(ki, kj), -1.0


def _consistent_choice(singles: dict, pairs: dict, exhaustive_limit: int = 50_000) -> dict:
    """Singleton counts maximising the summed silhouettes of a divisible table.

    Each singleton ranges over its candidates; each pair then takes its best
    scoring count divisible by both members.  Exhaustive when the product of
    candidate counts is small, otherwise coordinate ascent from the vote
    winners.
    """
    keys = sorted(singles)
    options = {i: sorted({k for k, _ in singles[i].candidates}) for i in keys}
    cache = {}

    def pair_score(ij, ki, kj):
        key = (ij, ki, kj)
        if key not in cache:
            cache[key] = _pair_given(pairs[ij], ki, kj)[1]
        return cache[key]

    def total(choice):
        score = sum(_sil(singles[i], choice[i]) for i in keys)
        return score + sum(pair_score((i, j), choice[i], choice[j]) for i, j in pairs)

    best = {i: singles[i].chosen_k for i in keys}
    best_score = total(best)
    if math.prod(len(o) for o in options.values()) <= exhaustive_limit:
        for combo in product(*(options[i] for i in keys)):
            choice = dict(zip(keys, combo))
            sc = total(choice)
            if sc > best_score + 1e-12:
                best, best_score = choice, sc
        return best
    improved = True
    while improved:
        improved = False
        for i in keys:
            for k in options[i]:
                trial = dict(best)
                trial[i] = k
                sc = total(trial)
                if sc > best_score + 1e-12:
                    best, best_score, improved = trial, sc, True
    return best


def assemble_triple_means(pair_cents: dict, triple: tuple, d: int, tol: float = MEANS_TOL) -> np.ndarray:
    """Candidate triple means from pair means that agree on shared variables."""
    i, j, k = triple
    cij, cik, cjk = (np.asarray(pair_cents[p]) for p in ((i, j), (i, k), (j, k)))
    b0, b1 = slice(0, d), slice(d, 2 * d)
    out = []
    for a in cij:
        close_ik = cik[np.linalg.norm(cik[:, b0] - a[b0], axis=1) <= tol]
        for b in close_ik:
            ok = (np.linalg.norm(cjk[:, b0] - a[b1], axis=1) <= tol) & \
                 (np.linalg.norm(cjk[:, b1] - b[b1], axis=1) <= tol)
            for c in cjk[ok]:
                out.append(np.concatenate([(a[b0] + b[b0]) / 2, (a[b1] + c[b0]) / 2, (b[b1] + c[b1]) / 2]))
    if not out:
        return np.zeros((0, 3 * d))
    out = np.array(out)
    keep = []
    for r in range(len(out)):
        if all(np.linalg.norm(out[r] - out[q]) > tol for q in keep):
            keep.append(r)
    return out[keep]


def estimate_k_triple(data: np.ndarray, pair_results: dict, singles: dict, triple: tuple, d: int,
                      seed=0, sample_size: int = 2000, tol: float = MEANS_TOL,
                      k_cap: int | None = None) -> KEstimate:
    """Count for a triple, warm-started from assembled pair means.

    ``pair_results`` maps each pair to ``(k, centroids)``; ``singles`` maps
    each variable to its count.  Candidates are multiples of the pairs' lcm no
    larger than any pair count times the remaining single count.
    """
    i, j, k = triple
    kij, kik, kjk = (pair_results[p][0] for p in ((i, j), (i, k), (j, k)))
    lo = math.lcm(kij, kik, kjk)
    hi = min(kij * singles[k], kik * singles[j], kjk * singles[i])
    if k_cap is not None:
        hi = min(hi, k_cap)
    cands = list(range(lo, hi + 1, lo))
    low_conf = not cands
    init = assemble_triple_means({p: pair_results[p][1] for p in ((i, j), (i, k), (j, k))}, triple, d, tol)
    floor = max(kij, kik, kjk)
    if low_conf:
        top = max(hi, floor, len(init))
        cands = list(range(floor, top + 1 if k_cap is None else min(top, k_cap) + 1))
    k0 = max(max(cands), len(init))
    k0 = min(k0, len(data) - 1)
    rng = np.random.default_rng(seed)
    if len(init) < k0:
        extra = data[rng.choice(len(data), size=k0 - len(init), replace=False)]
        init = np.vstack([init, extra]) if len(init) else extra
    res = cluster(data, k0, seed, init=init[:k0])
    path = merge_path(data, res, max(2, min(cands)), keep=set(cands), sample_size=sample_size, seed=seed)
    scored = _top(path.silhouettes, set(cands), len(cands))
    if not scored:
        scored = [(min(cands), float("nan"))]
    return KEstimate(
        subset=tuple(triple), candidates=scored, chosen_k=scored[0][0], low_confidence=low_conf,
        silhouettes=path.silhouettes, centroids={scored[0][0]: path.centroids.get(scored[0][0], np.zeros((0, 3 * d)))},
    )


def nearest_map(full_centroids: np.ndarray, marginal_centroids: list, d: int) -> np.ndarray:
    """``L(j)_i`` = nearest marginal centroid of ``X_i`` to full centroid ``j`` projected on ``X_i``.

    ``argmin`` returns the lowest index among ties.
    """
    K = len(full_centroids)
    rows = np.zeros((K, len(marginal_centroids)), dtype=np.int64)
    for i, cent in enumerate(marginal_centroids):
        proj = full_centroids[:, i * d:(i + 1) * d]
        rows[:, i] = cdist(proj, cent).argmin(axis=1)
    return rows


def build_component_map(data: np.ndarray, K: int, marginal_ks, d: int, seed=0,
                        full: ClusterResult | None = None, n_init: int = 10) -> ComponentMap:
    """Full and per-variable clusterings, then nearest projected centroid.

    Each per-variable clustering is seeded from the full centroids projected
    onto that variable and grouped into ``k_i`` clusters.
    """
    if full is None:
        full = cluster(data, K, seed, n_init=n_init)
    sizes = full.sizes().astype(float)
    marg = []
    for i, k in enumerate(marginal_ks):
        block = data[:, i * d:(i + 1) * d]
        proj = full.centroids[:, i * d:(i + 1) * d]
        init = _group_points(proj, sizes, k, seed + 1 + i)
        marg.append(cluster(block, k, seed + 1 + i, init=init).centroids)
    L = ComponentMap(nearest_map(full.centroids, marg, d), tuple(marginal_ks))
    if not L.is_injective():
        log.warning("estimated component map is not injective")
    return L


def _group_points(points: np.ndarray, weights: np.ndarray, k: int, seed) -> np.ndarray:
    """Weighted k-means of a few points into ``k`` groups; returns group centres."""
    if k >= len(points):
        return points[:k].copy()
    km = KMeans(n_clusters=k, n_init=10, random_state=int(seed) % (2**31 - 1))
    km.fit(points, sample_weight=np.maximum(weights, 1e-12))
    return km.cluster_centers_


def full_weights(data: np.ndarray, K: int, seed=0, full: ClusterResult | None = None) -> np.ndarray:
    if full is None:
        full = cluster(data, K, seed, n_init=10)
    counts = np.bincount(full.labels, minlength=K).astype(float)
    if (counts == 0).any():
        log.warning("%d empty clusters in the full mixture", int((counts == 0).sum()))
    return counts / counts.sum()


def projected_count(centroids: np.ndarray, subset, d: int, tol: float = PROJ_TOL) -> int:
    """Distinct full-mixture means after projecting onto ``subset``'s blocks.

    Single-linkage grouping at ``tol * sqrt(|S|)``.
    """
    cols = np.concatenate([np.arange(i * d, (i + 1) * d) for i in subset])
    P = np.asarray(centroids)[:, cols]
    if len(P) < 2:
        return len(P)
    Z = linkage(P, method="single")
    return int(len(np.unique(fcluster(Z, tol * math.sqrt(len(subset)), criterion="distance"))))


def projected_counts(centroids: np.ndarray, n: int, d: int, t: int = 3, tol: float = PROJ_TOL) -> dict:
    return {to_mask(sub): projected_count(centroids, sub, d, tol)
            for size in range(1, min(t, n) + 1) for sub in combinations(range(n), size)}


def realizable(table: dict, n: int, K: int | None = None, seed=0) -> bool:
    """Does some bipartite model reproduce every count in ``table`` (and K)?"""
    try:
        # a realizable integer table gives an exact tensor, so exact tolerances apply
        rb = jennrich(build_m3(weights_from_counts(table, n)), seed)
    except (LatentDagError, ValueError, np.linalg.LinAlgError):
        return False
    if K is not None and rb.dims.K != K:
        return False
    for mask, k in table.items():
        pa = rb.gamma.parents_of_set(members(mask))
        if math.prod(rb.dims[j] for j in pa) != k:
            return False
    return True


class ExactOracle:
    """Mixture oracle answering from a known ground-truth model."""

    def __init__(self, model: LatentCausalModel):
        self.model = model

    def counts(self, t: int = 3) -> dict:
        n = self.model.n
        return {to_mask(c): marginal_k(self.model, c)
                for size in range(1, min(t, n) + 1) for c in combinations(range(n), size)}

    def component_map(self, K: int, marginal_ks) -> ComponentMap:
        rows = exact_component_map(self.model)
        return ComponentMap(rows, tuple(marginal_ks))

    def full_weights(self, K: int) -> np.ndarray:
        return self.model.joint.flat().copy()

    def full_means(self, K: int) -> np.ndarray:
        return self.model.component_means()

    def full_labels(self, K: int):
        return None


class EmpiricalOracle:
    """Mixture oracle estimated from samples.

    ``strategy`` is ``"projection"`` (top-down, falling back to voting) or
    ``"voting"`` (bottom-up only).
    """

    def __init__(self, samples: SampleSet, seed=0, k_max: int | None = None,
                 sample_size: int = 2000, tol: float = MEANS_TOL, max_dim_choice: int = 6,
                 strategy: str = "projection", proj_tol: float = PROJ_TOL, n_full: int = 5):
        if strategy not in ("projection", "voting"):
            raise ValueError(f"unknown strategy {strategy!r}")
        self.strategy = strategy
        self.proj_tol = proj_tol
        self.n_full = n_full
        self.full_estimate: KEstimate | None = None
        self.samples = samples
        self.d = samples.d
        self.n = samples.n
        self.seed = int(seed)
        N = len(samples.data)
        if k_max is None:
            k_max = min(2 * max_dim_choice ** 2, int(math.isqrt(N)))
        self.k_max = max(2, k_max)
        self.sample_size = sample_size
        self.tol = tol
        self.estimates: dict = {}
        self._full: dict = {}

    def _stream(self, *key) -> int:
        return int(np.random.SeedSequence([self.seed, *key]).generate_state(1)[0])

    def counts(self, t: int = 3) -> dict:
        """Component counts for every subset of at most ``t`` variables."""
        if self.strategy == "projection":
            table = self.projection_counts(t)
            if table is not None:
                return table
            log.info("no full-mixture candidate gave a realizable table; voting instead")
        return self.voting_counts(t)

    def projection_counts(self, t: int = 3) -> dict | None:
        """Scan K downward along the full-data merge path; first realizable table wins.

        Merging true components keeps a table realizable, but splitting one
        cannot (the two halves project together almost everywhere, so the
        counts no longer multiply up to K); hence the largest realizable K.
        """
        data = self.samples.data
        seed = self._stream(0)
        k_top = min(self.k_max, len(data) - 1)
        sub = Subsample(data, self.sample_size, seed)
        path = merge_path(data, cluster(data, k_top, seed), 2, sub=sub)
        top = _top(path.silhouettes, range(2, k_top + 1), self.n_full)
        est = KEstimate(subset=tuple(range(self.n)), candidates=top, chosen_k=top[0][0],
                        silhouettes=path.silhouettes)
        self.full_estimate = est
        self.estimates = {to_mask(est.subset): est}
        for K in range(k_top, 1, -1):
            fit = cluster(data, K, self._stream(5, K), init=path.centroids[K])
            table = projected_counts(fit.centroids, self.n, self.d, t, self.proj_tol)
            if realizable(table, self.n, K, self._stream(7)):
                est.chosen_k = K
                if K not in dict(est.candidates):
                    est.candidates.append((K, path.silhouettes.get(K, float("nan"))))
                est.centroids = {K: fit.centroids}
                self._full[K] = fit
                return table
        return None

    def voting_counts(self, t: int = 3) -> dict:
        n, d = self.n, self.d
        singles = {
            i: estimate_k_single(self.samples.block(i), self.k_max, self._stream(1, i), (i,), self.sample_size)
            for i in range(n)
        }
        pairs = {}
        for i, j in combinations(range(n), 2):
            cands = pair_candidates([k for k, _ in singles[i].candidates],
                                    [k for k, _ in singles[j].candidates], self.k_max)
            if not cands:
                lo = max(singles[i].candidates[0][0], singles[j].candidates[0][0])
                cands = list(range(lo, self.k_max + 1))
            pairs[(i, j)] = estimate_k_pair(self.samples.columns((i, j)), cands, self._stream(2, i, j),
                                            (i, j), self.sample_size)
        table = vote_k(singles, pairs, d, self.tol)
        self.estimates = {to_mask(s.subset): s for s in list(singles.values()) + list(pairs.values())}
        if t >= 3:
            single_k = {i: table[1 << i] for i in range(n)}
            pair_res = {}
            for (i, j), pe in pairs.items():
                kp = table[(1 << i) | (1 << j)]
                cents = pe.centroids.get(kp)
                if cents is None:
                    cents = self._refit_pair((i, j), kp)
                pair_res[(i, j)] = (kp, cents)
            for tri in combinations(range(n), 3):
                est = estimate_k_triple(self.samples.columns(tri), pair_res, single_k, tri, d,
                                        self._stream(3, *tri), self.sample_size, self.tol, self.k_max)
                self.estimates[to_mask(tri)] = est
                table[to_mask(tri)] = est.chosen_k
        return table

    def _refit_pair(self, pair, k) -> np.ndarray:
        return cluster(self.samples.columns(pair), k, self._stream(4, *pair)).centroids

    def full_fit(self, K: int) -> ClusterResult:
        """Full mixture with K clusters, Lloyd-refined from merged centroids when known."""
        if K not in self._full:
            data = self.samples.data
            seed = self._stream(0)
            k0 = min(max(K, self.k_max), len(data) - 1)
            path = merge_path(data, cluster(data, k0, seed), K, keep={K},
                              sub=Subsample(data, self.sample_size, seed))
            fit = cluster(data, K, self._stream(5, K), init=path.centroids[K])
            alt = cluster(data, K, self._stream(5, K), n_init=10)
            self._full[K] = fit if fit.inertia <= alt.inertia else alt
        return self._full[K]

    def component_map(self, K: int, marginal_ks) -> ComponentMap:
        return build_component_map(self.samples.data, K, marginal_ks, self.d, self._stream(6),
                                   full=self.full_fit(K))

    def full_weights(self, K: int) -> np.ndarray:
        return full_weights(self.samples.data, K, full=self.full_fit(K))

    def full_means(self, K: int) -> np.ndarray:
        return self.full_fit(K).centroids

    def full_labels(self, K: int) -> np.ndarray:
        return self.full_fit(K).labels
