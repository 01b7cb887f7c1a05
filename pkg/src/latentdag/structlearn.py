"""Score-based learning of the latent DAG from discrete hidden-state data."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .latentdist import Correspondence
from .model import DomainSpec, JointProbTable, LatentDag


@dataclass(frozen=True)
class DiscreteDataset:
    """Hidden-state data stored as a contingency table over the joint domain."""

    dims: DomainSpec
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts).reshape(self.dims.dims)
        if (c < 0).any() or c.sum() < 1:
            raise ValueError("counts must be nonnegative with at least one row")
        object.__setattr__(self, "counts", c)

    @property
    def N(self) -> float:
        return float(self.counts.sum())

    @property
    def m(self) -> int:
        return self.dims.m

    @classmethod
    def from_rows(cls, dims: DomainSpec, rows) -> "DiscreteDataset":
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, dims.m)
        if (rows < 0).any() or (rows >= np.array(dims.dims)).any():
            raise ValueError("row values outside their domains")
        flat = np.ravel_multi_index(tuple(rows.T), dims.dims)
        return cls(dims, np.bincount(flat, minlength=dims.K).reshape(dims.dims))

    @classmethod
    def from_table(cls, joint: JointProbTable, N: int, seed) -> "DiscreteDataset":
        rng = np.random.default_rng(seed)
        counts = rng.multinomial(N, joint.flat())
        return cls(joint.dims, counts.reshape(joint.dims.dims))


def dataset_from_pipeline(labels, corr: Correspondence) -> DiscreteDataset:
    labels = np.asarray(labels, dtype=np.int64)
    K = len(corr.inverse)
    if labels.size == 0 or (labels < 0).any() or (labels >= K).any():
        raise ValueError("labels must be valid component indices")
    dims = DomainSpec(corr.A.shape)
    flat = _state_index(corr)[labels]
    return DiscreteDataset(dims, np.bincount(flat, minlength=dims.K).reshape(dims.dims))


def _state_index(corr: Correspondence) -> np.ndarray:
    """Flattened state index of each component."""
    out = np.empty(corr.A.size, dtype=np.int64)
    out[corr.A.reshape(-1)] = np.arange(corr.A.size)
    return out


class BicScorer:
    """Decomposable discrete BIC with cached local terms."""

    def __init__(self, data: DiscreteDataset):
        self.data = data
        self.log_n = np.log(data.N)
        self._cache: dict = {}

    def local(self, node: int, parents) -> float:
        key = (node, tuple(sorted(parents)))
        if key not in self._cache:
            self._cache[key] = self._local(node, key[1])
        return self._cache[key]

    def _local(self, node: int, parents: tuple) -> float:
        dims = self.data.dims.dims
        keep = parents + (node,)
        drop = tuple(a for a in range(len(dims)) if a not in keep)
        table = self.data.counts.sum(axis=drop) if drop else self.data.counts
        # axes of the marginal come out in increasing variable order
        order = sorted(keep)
        table = np.transpose(table, [order.index(a) for a in keep])
        r = dims[node]
        q = int(np.prod([dims[p] for p in parents], dtype=np.int64))
        nijk = table.reshape(q, r).astype(float)
        nij = nijk.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = np.where(nijk > 0, nijk * np.log(nijk / nij), 0.0).sum()
        return float(ll - 0.5 * self.log_n * q * (r - 1))

    def score(self, dag: LatentDag) -> float:
        return sum(self.local(v, dag.parents(v)) for v in range(dag.m))


def bic_score(data: DiscreteDataset, dag: LatentDag) -> float:
    return BicScorer(data).score(dag)


@dataclass(frozen=True)
class Cpdag:
    m: int
    directed: frozenset = frozenset()
    undirected: frozenset = frozenset()  # frozensets of size 2

    def __post_init__(self):
        directed = frozenset((int(a), int(b)) for a, b in self.directed)
        undirected = frozenset(frozenset((int(a), int(b))) for a, b in map(tuple, self.undirected))
        if any(frozenset(e) in undirected for e in directed):
            raise ValueError("an edge cannot be both directed and undirected")
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "undirected", undirected)

    def status(self, a: int, b: int) -> str:
        if (a, b) in self.directed:
            return "->"
        if (b, a) in self.directed:
            return "<-"
        if frozenset((a, b)) in self.undirected:
            return "--"
        return ""

    def skeleton(self) -> set:
        return {frozenset(e) for e in self.directed} | set(self.undirected)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "directed": sorted([list(e) for e in self.directed]),
            "undirected": sorted(sorted(e) for e in self.undirected),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Cpdag":
        return cls(doc["m"], frozenset(map(tuple, doc["directed"])), frozenset(map(tuple, doc["undirected"])))

    def to_dot(self) -> str:
        lines = ["digraph cpdag {"]
        lines += [f"  H{i};" for i in range(self.m)]
        lines += [f"  H{a} -> H{b};" for a, b in sorted(self.directed)]
        lines += [f"  H{a} -> H{b} [dir=none];" for a, b in sorted(sorted(e) for e in self.undirected)]
        lines.append("}")
        return "\n".join(lines)


class _Pdag:
    """Mutable partially directed graph used during equivalence-class search."""

    def __init__(self, m: int, directed=(), undirected=()):
        self.m = m
        self.directed = set(directed)
        self.undirected = {frozenset(e) for e in undirected}

    def adjacent(self, a: int, b: int) -> bool:
        return (a, b) in self.directed or (b, a) in self.directed or frozenset((a, b)) in self.undirected

    def neighbors(self, v: int) -> set:
        """Nodes joined to ``v`` by an undirected edge."""
        return {u for e in self.undirected if v in e for u in e if u != v}

    def parents(self, v: int) -> set:
        return {a for a, b in self.directed if b == v}

    def is_clique(self, nodes) -> bool:
        return all(self.adjacent(a, b) for a, b in combinations(sorted(nodes), 2))

    def semi_directed_reachable(self, src: int, dst: int, blocked: set) -> bool:
        """Is there a path src ~> dst along undirected or forward edges avoiding ``blocked``?"""
        stack, seen = [src], {src}
        while stack:
            v = stack.pop()
            nxt = {b for a, b in self.directed if a == v} | self.neighbors(v)
            for u in nxt:
                if u == dst:
                    return True
                if u not in seen and u not in blocked:
                    seen.add(u)
                    stack.append(u)
        return False

    def to_dag(self) -> LatentDag:
        """Consistent DAG extension (Dor and Tarsi)."""
        directed = set(self.directed)
        undirected = set(self.undirected)
        alive = set(range(self.m))
        while alive:
            for x in sorted(alive):
                out = any(a == x and b in alive for a, b in directed)
                if out:
                    continue
                und = {u for e in undirected if x in e for u in e if u != x and u in alive}
                adj = und | {a for a, b in directed if b == x and a in alive}
                if all(all(w == y or _adj(directed, undirected, y, w) for w in adj) for y in und):
                    for y in und:
                        undirected.discard(frozenset((x, y)))
                        directed.add((y, x))
                    alive.discard(x)
                    break
            else:
                raise ValueError("partially directed graph admits no consistent extension")
        return LatentDag(self.m, frozenset(directed))

    def complete(self) -> "_Pdag":
        cp = dag_to_cpdag(self.to_dag())
        return _Pdag(self.m, cp.directed, cp.undirected)


def _adj(directed, undirected, a, b) -> bool:
    return (a, b) in directed or (b, a) in directed or frozenset((a, b)) in undirected


def _subsets(items):
    items = sorted(items)
    for r in range(len(items) + 1):
        yield from combinations(items, r)


def _best_insert(g: _Pdag, scorer: "BicScorer"):
    best, best_gain = None, 0.0
    for x in range(g.m):
        for y in range(g.m):
            if x == y or g.adjacent(x, y):
                continue
            ny = g.neighbors(y)
            na = {t for t in ny if g.adjacent(t, x)}
            pa_y = g.parents(y)
            for T in _subsets(t for t in ny if not g.adjacent(t, x)):
                cond = na | set(T)
                if not g.is_clique(cond):
                    continue
                if g.semi_directed_reachable(y, x, cond):
                    continue
                base = cond | pa_y
                gain = scorer.local(y, base | {x}) - scorer.local(y, base)
                if gain > best_gain:
                    best, best_gain = (x, y, T), gain
    return best, best_gain


def _best_delete(g: _Pdag, scorer: "BicScorer"):
    best, best_gain = None, 0.0
    for x in range(g.m):
        for y in range(g.m):
            if x == y or not ((x, y) in g.directed or frozenset((x, y)) in g.undirected):
                continue
            na = {t for t in g.neighbors(y) if g.adjacent(t, x)}
            pa_y = g.parents(y) - {x}
            for H in _subsets(na):
                rest = na - set(H)
                if not g.is_clique(rest):
                    continue
                base = rest | pa_y
                gain = scorer.local(y, base) - scorer.local(y, base | {x})
                if gain > best_gain:
                    best, best_gain = (x, y, H), gain
    return best, best_gain


def greedy_search(data: DiscreteDataset) -> Cpdag:
    """Greedy equivalence search: forward insertions, then backward deletions.

    Each step applies the operator with the largest positive BIC gain to the
    current equivalence class, then re-completes the class.  Ties go to the
    lexicographically smallest ``(x, y, subset)``.
    """
    scorer = BicScorer(data)
    g = _Pdag(data.m)
    while True:
        op, _ = _best_insert(g, scorer)
        if op is None:
            break
        x, y, T = op
        for t in T:
            g.undirected.discard(frozenset((t, y)))
            g.directed.add((t, y))
        g.directed.add((x, y))
        g = g.complete()
    while True:
        op, _ = _best_delete(g, scorer)
        if op is None:
            break
        x, y, H = op
        g.directed.discard((x, y))
        g.undirected.discard(frozenset((x, y)))
        for h in H:
            g.undirected.discard(frozenset((y, h)))
            g.directed.add((y, h))
            if frozenset((x, h)) in g.undirected:
                g.undirected.discard(frozenset((x, h)))
                g.directed.add((x, h))
        g = g.complete()
    return Cpdag(g.m, frozenset(g.directed), frozenset(g.undirected))


def dag_to_cpdag(dag: LatentDag) -> Cpdag:
    """Orient v-structures, then close under Meek's rules."""
    m = dag.m
    pa = [set(dag.parents(v)) for v in range(m)]
    adj = [set() for _ in range(m)]
    for a, b in dag.edges:
        adj[a].add(b)
        adj[b].add(a)
    directed = set()
    for c in range(m):
        for a, b in combinations(sorted(pa[c]), 2):
            if b not in adj[a]:
                directed.add((a, c))
                directed.add((b, c))
    undirected = {frozenset(e) for e in dag.edges if tuple(e) not in directed}

    def is_dir(a, b):
        return (a, b) in directed

    def is_und(a, b):
        return frozenset((a, b)) in undirected

    def orient(a, b):
        undirected.discard(frozenset((a, b)))
        directed.add((a, b))

    changed = True
    while changed:
        changed = False
        for e in sorted(undirected, key=sorted):
            for a, b in (tuple(sorted(e)), tuple(sorted(e))[::-1]):
                if not is_und(a, b):
                    break
                # R1: c -> a - b, c and b nonadjacent
                if any(is_dir(c, a) and b not in adj[c] for c in range(m) if c != b):
                    orient(a, b)
                    changed = True
                    break
                # R2: a -> c -> b with a - b
                if any(is_dir(a, c) and is_dir(c, b) for c in range(m)):
                    orient(a, b)
                    changed = True
                    break
                # R3: a - c -> b, a - d -> b, c and d nonadjacent
                mids = [c for c in range(m) if is_und(a, c) and is_dir(c, b)]
                if any(d not in adj[c] for c, d in combinations(mids, 2)):
                    orient(a, b)
                    changed = True
                    break
                # R4: a - d -> c -> b with d, b nonadjacent and a adjacent to c
                if any(is_und(a, d) and is_dir(d, c) and is_dir(c, b) and b not in adj[d] and c in adj[a]
                       for c in range(m) for d in range(m) if len({a, b, c, d}) == 4):
                    orient(a, b)
                    changed = True
                    break
    return Cpdag(m, frozenset(directed), frozenset(undirected))


def cpdag_json(cpdag: Cpdag) -> str:
    return json.dumps(cpdag.to_dict())
