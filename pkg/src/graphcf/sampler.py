"""Transaction-seeded random-walk subgraph extraction.

The walk runs on the undirected simple graph formed by the union of all
interaction types. Each of the ``k`` iterations either moves to a uniformly
chosen unvisited neighbour or, when none is left, teleports to a uniformly
chosen visited node (the teleport uses up the iteration). In transactional
mode the walk starts at one endpoint of a transaction pair and the partner
endpoint is visited as a forced first step that does not consume budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import InteractionGraph


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class WalkConfig:
    k: int = 30
    seed: int = 0
    force_transactional: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"walk budget k must be >= 1, got {self.k}")


class WalkGraph:
    """CSR neighbour lists over nodes ``[users..., listings...]``; build once per source."""

    def __init__(self, source: InteractionGraph):
        nu = source.num_users
        n = source.num_nodes
        edges = np.concatenate([e for e in source.interactions if len(e)] or [np.zeros((0, 2), dtype=np.int64)])
        src = np.concatenate([edges[:, 0], edges[:, 1] + nu])
        dst = np.concatenate([edges[:, 1] + nu, edges[:, 0]])
        key = np.unique(src * n + dst)
        src, dst = key // n, key % n
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n))])
        self.indices = dst
        self.num_users = nu
        self.num_nodes = n
        self.source = source
        pairs = source.transaction_pairs
        self.pair_keys = set(int(u) * source.num_listings + int(l) for u, l in pairs)

    def neighbours(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def contains_pair(self, visited) -> bool:
        """True iff both endpoints of some transaction pair were visited."""
        if not self.pair_keys:
            return False
        nl = self.source.num_listings
        users = [v for v in visited if v < self.num_users]
        listings = [v - self.num_users for v in visited if v >= self.num_users]
        return any(u * nl + l in self.pair_keys for u in users for l in listings)


def walk(wg: WalkGraph, k: int, rng, seed_pair=None) -> list[int]:
    """Visited node list ``P``; ``seed_pair`` is a ``(user, listing)`` to start at."""
    nu = wg.num_users
    if seed_pair is not None:
        u, l = int(seed_pair[0]), int(seed_pair[1])
        ends = [u, nu + l]
        first = int(rng.integers(2))
        v = ends[first]
        visited = [v]
        # the partner makes the pair fully contained; free extra step
        v = ends[1 - first]
        visited.append(v)
    else:
        v = int(rng.integers(wg.num_nodes))
        visited = [v]
    seen = set(visited)
    for _ in range(k):
        nb = [x for x in wg.neighbours(v).tolist() if x not in seen]
        if not nb:
            v = visited[int(rng.integers(len(visited)))]
        else:
            v = nb[int(rng.integers(len(nb)))]
            visited.append(v)
            seen.add(v)
    return visited


def _two_sided(visited, num_users: int) -> bool:
    return any(v < num_users for v in visited) and any(v >= num_users for v in visited)


def induced(wg: WalkGraph, visited) -> InteractionGraph:
    nu = wg.num_users
    users = [v for v in visited if v < nu]
    listings = [v - nu for v in visited if v >= nu]
    return wg.source.induced_subgraph(users, listings)


def random_walk_subgraph(source: InteractionGraph, cfg: WalkConfig, walk_graph: WalkGraph | None = None) -> InteractionGraph:
    wg = walk_graph or WalkGraph(source)
    rng = np.random.default_rng(cfg.seed)
    seed_pair = None
    if cfg.force_transactional:
        pairs = source.transaction_pairs
        if len(pairs) == 0:
            raise SamplingError("force_transactional needs at least one transaction pair in the source")
        seed_pair = pairs[int(rng.integers(len(pairs)))]
    return induced(wg, walk(wg, cfg.k, rng, seed_pair))


@dataclass(frozen=True)
class SplitIndices:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def to_dict(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d) -> "SplitIndices":
        return cls(tuple(d["train"]), tuple(d["validation"]), tuple(d["test"]))


def default_split_sizes(n: int) -> tuple[int, int]:
    """Validation and test sizes: 500 each at 7946 graphs, 250 at 2583, ~10% otherwise."""
    if n == 7946:
        return 500, 500
    if n == 2583:
        return 250, 250
    each = max(1, round(0.1 * n)) if n >= 3 else 0
    return each, each


def split_indices(n: int, n_val: int, n_test: int, seed: int) -> SplitIndices:
    if n_val < 0 or n_test < 0 or n_val + n_test > n:
        raise ValueError(f"cannot split {n} items into validation={n_val}, test={n_test}")
    perm = np.random.default_rng(seed).permutation(n).tolist()
    test = tuple(sorted(perm[:n_test]))
    val = tuple(sorted(perm[n_test : n_test + n_val]))
    train = tuple(sorted(perm[n_test + n_val :]))
    return SplitIndices(train, val, test)


@dataclass
class LabeledDataset:
    graphs: list[InteractionGraph]
    splits: SplitIndices

    def split(self, name: str) -> list[InteractionGraph]:
        return [self.graphs[i] for i in getattr(self.splits, name)]


def build_labeled_dataset(
    source: InteractionGraph,
    n_pos: int,
    n_neg: int,
    cfg: WalkConfig,
    splits: tuple[int, int] | None = None,
    max_retries_per_graph: int = 50,
    walk_graph: WalkGraph | None = None,
) -> LabeledDataset:
    """Balanced labeled subgraphs: ``n_pos`` pair-seeded walks and ``n_neg`` transaction-free ones.

    Positives are seeded at distinct transaction pairs. A negative walk that
    happens to contain a full transaction pair, or that never reaches the
    other side of the bipartite graph, is discarded and re-drawn.
    """
    wg = walk_graph or WalkGraph(source)
    pairs = source.transaction_pairs
    if n_pos > len(pairs):
        raise SamplingError(f"need {n_pos} distinct transaction pairs, source has {len(pairs)}")
    rng = np.random.default_rng(cfg.seed)
    chosen = rng.choice(len(pairs), size=n_pos, replace=False) if n_pos else np.zeros(0, dtype=np.int64)
    graphs = []
    for i in chosen:
        graphs.append(induced(wg, walk(wg, cfg.k, rng, pairs[int(i)])))

    budget = max_retries_per_graph * max(n_neg, 1)
    attempts = 0
    negatives = 0
    while negatives < n_neg:
        if attempts >= budget:
            raise SamplingError(
                f"retry budget exhausted: {n_pos} positives and {negatives}/{n_neg} negatives after {attempts} walks"
            )
        attempts += 1
        visited = walk(wg, cfg.k, rng)
        # one-sided walks (isolated start node) are not valid graphs
        if wg.contains_pair(visited) or not _two_sided(visited, wg.num_users):
            continue
        graphs.append(induced(wg, visited))
        negatives += 1

    order = rng.permutation(len(graphs))
    graphs = [graphs[i] for i in order]
    n_val, n_test = splits if splits is not None else default_split_sizes(len(graphs))
    return LabeledDataset(graphs, split_indices(len(graphs), n_val, n_test, cfg.seed + 1))
