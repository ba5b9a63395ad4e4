"""Bipartite user/listing interaction graphs and their adjacency algebra.

Node order in every dense matrix is ``[users..., listings...]``: user ``u``
is row ``u`` and listing ``l`` is row ``n_users + l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INTERACTION_TYPES = ("views", "saves", "submits")
NUM_TYPES = len(INTERACTION_TYPES)
HIST_TOL = 1e-6


class GraphError(ValueError):
    """A graph, schema or adjacency violates its invariants."""


@dataclass(frozen=True)
class Attribute:
    name: str
    size: int
    bin_edges: tuple[float, ...] | None = None

    def bin(self, value: float) -> int:
        """Map a continuous value to its bin (``size == len(bin_edges) + 1``)."""
        if self.bin_edges is None:
            raise GraphError(f"attribute {self.name!r} is categorical, not binned")
        return int(np.searchsorted(self.bin_edges, value, side="right"))


@dataclass(frozen=True)
class AttributeSchema:
    """Listing attribute vocabularies plus the frozen price normalization."""

    attributes: tuple[Attribute, ...]
    activity_dim: int = 3
    price_log_mean: float = 0.0
    price_log_std: float = 1.0

    def __post_init__(self):
        if not self.attributes:
            raise GraphError("schema needs at least one attribute")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise GraphError(f"duplicate attribute names in {names}")
        for a in self.attributes:
            if a.size < 2:
                raise GraphError(f"attribute {a.name!r}: vocabulary size must be >= 2, got {a.size}")
            if a.bin_edges is not None:
                edges = np.asarray(a.bin_edges, dtype=np.float64)
                if np.any(np.diff(edges) <= 0):
                    raise GraphError(f"attribute {a.name!r}: bin boundaries must be strictly increasing")
                if len(edges) + 1 != a.size:
                    raise GraphError(f"attribute {a.name!r}: {len(edges)} boundaries for {a.size} bins")
        if self.activity_dim < 0:
            raise GraphError("activity_dim must be >= 0")
        if not (self.price_log_std > 0 and math.isfinite(self.price_log_std)):
            raise GraphError("price_log_std must be positive")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.attributes)

    @property
    def num_attributes(self) -> int:
        return len(self.attributes)

    @property
    def total_vocab(self) -> int:
        return int(sum(self.sizes))

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.cumsum((0,) + self.sizes)[:-1])

    def block(self, a: int) -> tuple[int, int]:
        lo = self.offsets[a]
        return lo, lo + self.attributes[a].size

    def normalize_price(self, price):
        return (np.log(price) - self.price_log_mean) / self.price_log_std

    def denormalize_price(self, z):
        return np.exp(np.asarray(z) * self.price_log_std + self.price_log_mean)

    def with_price_stats(self, prices) -> "AttributeSchema":
        logp = np.log(np.asarray(prices, dtype=np.float64))
        std = float(logp.std()) if logp.size > 1 and logp.std() > 0 else 1.0
        return AttributeSchema(self.attributes, self.activity_dim, float(logp.mean()), std)


@dataclass(frozen=True)
class PreferenceHistogram:
    """Sparse ``value -> probability`` map for one attribute."""

    values: tuple[int, ...] = ()
    probs: tuple[float, ...] = ()

    @classmethod
    def from_dense(cls, row) -> "PreferenceHistogram":
        row = np.asarray(row, dtype=np.float64)
        nz = np.flatnonzero(row)
        return cls(tuple(int(v) for v in nz), tuple(float(row[v]) for v in nz))

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.values, self.probs))

    def dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        for v, p in zip(self.values, self.probs):
            out[v] += p
        return out


@dataclass(frozen=True)
class UserFeatures:
    histograms: tuple[PreferenceHistogram, ...]
    activity: tuple[float, ...]


@dataclass(frozen=True)
class ListingFeatures:
    categorical: tuple[int, ...]
    price: float


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _edge_array(edges) -> np.ndarray:
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    return arr[order]


class InteractionGraph:
    """Immutable bipartite interaction graph with node features and a label.

    ``user_hist`` is the dense ``n_users x C`` stack of preference
    histograms (attribute blocks laid out per ``schema.offsets``);
    ``listing_cat`` holds per-attribute vocabulary indices.
    """

    __slots__ = (
        "schema",
        "user_ids",
        "listing_ids",
        "interactions",
        "user_hist",
        "activity",
        "listing_cat",
        "price",
        "transaction_pairs",
        "label",
        "_sealed",
    )

    def __init__(
        self,
        schema: AttributeSchema,
        user_ids,
        listing_ids,
        interactions: Sequence,
        user_hist,
        activity,
        listing_cat,
        price,
        transaction_pairs=(),
        label: int | None = None,
        validate: bool = True,
    ):
        self.schema = schema
        self.user_ids = _frozen(user_ids, np.int64).reshape(-1)
        self.listing_ids = _frozen(listing_ids, np.int64).reshape(-1)
        if len(interactions) != NUM_TYPES:
            raise GraphError(f"expected {NUM_TYPES} interaction types, got {len(interactions)}")
        self.interactions = tuple(_frozen(_edge_array(e), np.int64) for e in interactions)
        nu, nl = len(self.user_ids), len(self.listing_ids)
        self.user_hist = _frozen(np.asarray(user_hist, dtype=np.float64).reshape(nu, schema.total_vocab), np.float64)
        self.activity = _frozen(np.asarray(activity, dtype=np.float64).reshape(nu, schema.activity_dim), np.float64)
        self.listing_cat = _frozen(np.asarray(listing_cat, dtype=np.int64).reshape(nl, schema.num_attributes), np.int64)
        self.price = _frozen(np.asarray(price, dtype=np.float64).reshape(nl), np.float64)
        self.transaction_pairs = _frozen(_edge_array(transaction_pairs), np.int64)
        derived = int(len(self.transaction_pairs) > 0)
        if label is not None and int(label) != derived:
            raise GraphError(f"label {label} disagrees with {len(self.transaction_pairs)} transaction pairs")
        self.label = derived
        if validate:
            self.validate()
        self._sealed = True

    def __setattr__(self, name, value):
        if getattr(self, "_sealed", False):
            raise AttributeError(f"InteractionGraph is immutable; use replace() to change {name!r}")
        object.__setattr__(self, name, value)

    # invariants ------------------------------------------------------------
    def validate(self):
        nu, nl = self.num_users, self.num_listings
        if nu < 1 or nl < 1:
            raise GraphError(f"both sides must be non-empty (users={nu}, listings={nl})")
        for name, edges in zip(INTERACTION_TYPES, self.interactions):
            _check_edges(edges, nu, nl, name)
        _check_edges(self.transaction_pairs, nu, nl, "transaction_pairs")
        s = self.schema
        for a, attr in enumerate(s.attributes):
            lo, hi = s.block(a)
            blk = self.user_hist[:, lo:hi]
            if np.any(blk < 0) or not np.all(np.isfinite(blk)):
                raise GraphError(f"attribute {attr.name!r}: negative or non-finite histogram entry")
            sums = blk.sum(axis=1)
            bad = (np.abs(sums - 1.0) > HIST_TOL) & (sums != 0.0)
            if np.any(bad):
                u = int(np.flatnonzero(bad)[0])
                raise GraphError(f"user {u} attribute {attr.name!r}: histogram sums to {sums[u]:.9g}")
            col = self.listing_cat[:, a]
            if np.any(col < 0) or np.any(col >= attr.size):
                raise GraphError(f"attribute {attr.name!r}: listing category outside vocabulary")
        if np.any(self.activity < 0) or not np.all(np.isfinite(self.activity)):
            raise GraphError("activity features must be finite and non-negative")
        if np.any(~(self.price > 0)) or not np.all(np.isfinite(self.price)):
            raise GraphError("listing prices must be positive")

    # shape -----------------------------------------------------------------
    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_listings(self) -> int:
        return len(self.listing_ids)

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_listings

    def edge_set(self, type_index: int) -> set[tuple[int, int]]:
        _check_type(type_index)
        return {(int(u), int(l)) for u, l in self.interactions[type_index - 1]}

    def bipartite_matrix(self, type_index: int) -> np.ndarray:
        """``n_users x n_listings`` 0/1 matrix of one interaction type."""
        _check_type(type_index)
        m = np.zeros((self.num_users, self.num_listings))
        e = self.interactions[type_index - 1]
        if len(e):
            m[e[:, 0], e[:, 1]] = 1.0
        return m

    # feature views ---------------------------------------------------------
    def user_features(self, u: int) -> UserFeatures:
        hists = []
        for a in range(self.schema.num_attributes):
            lo, hi = self.schema.block(a)
            hists.append(PreferenceHistogram.from_dense(self.user_hist[u, lo:hi]))
        return UserFeatures(tuple(hists), tuple(float(x) for x in self.activity[u]))

    def listing_features(self, l: int) -> ListingFeatures:
        return ListingFeatures(tuple(int(x) for x in self.listing_cat[l]), float(self.price[l]))

    def normalized_price(self) -> np.ndarray:
        return self.schema.normalize_price(self.price)

    # derivation ------------------------------------------------------------
    def replace(self, **changes) -> "InteractionGraph":
        fields = {
            "user_ids": self.user_ids,
            "listing_ids": self.listing_ids,
            "interactions": self.interactions,
            "user_hist": self.user_hist,
            "activity": self.activity,
            "listing_cat": self.listing_cat,
            "price": self.price,
            "transaction_pairs": self.transaction_pairs,
        }
        fields.update(changes)
        validate = fields.pop("validate", True)
        return InteractionGraph(self.schema, validate=validate, **fields)

    def induced_subgraph(self, users: Iterable[int], listings: Iterable[int]) -> "InteractionGraph":
        """Restrict to the given users/listings (kept in ascending source order)."""
        users = np.unique(np.asarray(list(users), dtype=np.int64))
        listings = np.unique(np.asarray(list(listings), dtype=np.int64))
        umap = np.full(self.num_users, -1, dtype=np.int64)
        lmap = np.full(self.num_listings, -1, dtype=np.int64)
        umap[users] = np.arange(len(users))
        lmap[listings] = np.arange(len(listings))

        def restrict(edges):
            if len(edges) == 0:
                return np.zeros((0, 2), dtype=np.int64)
            nu, nl = umap[edges[:, 0]], lmap[edges[:, 1]]
            keep = (nu >= 0) & (nl >= 0)
            return np.stack([nu[keep], nl[keep]], axis=1)

        return InteractionGraph(
            self.schema,
            user_ids=self.user_ids[users],
            listing_ids=self.listing_ids[listings],
            interactions=[restrict(e) for e in self.interactions],
            user_hist=self.user_hist[users],
            activity=self.activity[users],
            listing_cat=self.listing_cat[listings],
            price=self.price[listings],
            transaction_pairs=restrict(self.transaction_pairs),
            validate=False,
        )

    def __eq__(self, other):
        if not isinstance(other, InteractionGraph):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.label == other.label
            and np.array_equal(self.user_ids, other.user_ids)
            and np.array_equal(self.listing_ids, other.listing_ids)
            and all(np.array_equal(a, b) for a, b in zip(self.interactions, other.interactions))
            and np.array_equal(self.user_hist, other.user_hist)
            and np.array_equal(self.activity, other.activity)
            and np.array_equal(self.listing_cat, other.listing_cat)
            and np.array_equal(self.price, other.price)
            and np.array_equal(self.transaction_pairs, other.transaction_pairs)
        )

    __hash__ = None

    def __repr__(self):
        counts = ", ".join(f"{n}={len(e)}" for n, e in zip(INTERACTION_TYPES, self.interactions))
        return f"InteractionGraph(users={self.num_users}, listings={self.num_listings}, {counts}, label={self.label})"


def _check_type(type_index):
    if not isinstance(type_index, (int, np.integer)) or not 1 <= type_index <= NUM_TYPES:
        raise GraphError(f"type_index must be in 1..{NUM_TYPES}, got {type_index!r}")


def _check_edges(edges, nu, nl, name):
    if len(edges) == 0:
        return
    if edges[:, 0].min() < 0 or edges[:, 0].max() >= nu or edges[:, 1].min() < 0 or edges[:, 1].max() >= nl:
        raise GraphError(f"{name}: edge references a node outside the graph")
    if len(np.unique(edges[:, 0] * nl + edges[:, 1])) != len(edges):
        raise GraphError(f"{name}: duplicate edges")


# adjacency algebra -----------------------------------------------------------

def embed_bipartite(block) -> np.ndarray:
    """Mirror an ``n_users x n_listings`` block into a symmetric n x n matrix."""
    block = np.asarray(block, dtype=np.float64)
    nu, nl = block.shape
    out = np.zeros((nu + nl, nu + nl))
    out[:nu, nu:] = block
    out[nu:, :nu] = block.T
    return out


def to_dense_adjacency(g: InteractionGraph, type_index: int) -> np.ndarray:
    return embed_bipartite(g.bipartite_matrix(type_index))


def dense_edge_set(adj, num_users: int) -> set[tuple[int, int]]:
    """Recover ``(user, listing)`` pairs from the bipartite block of a dense matrix."""
    adj = np.asarray(adj)
    us, ls = np.nonzero(adj[:num_users, num_users:] > 0)
    return {(int(u), int(l)) for u, l in zip(us, ls)}


def normalize_adjacency(a) -> np.ndarray:
    """Symmetric GCN normalization ``D^-1/2 (A + I) D^-1/2``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"adjacency must be square, got {a.shape}")
    aug = a + np.eye(a.shape[0])
    s = 1.0 / np.sqrt(aug.sum(axis=1))
    return aug * s[:, None] * s[None, :]


def densify(views) -> np.ndarray:
    """Binarized ``A + A @ A`` with the diagonal zeroed."""
    a = np.asarray(views, dtype=np.float64)
    out = ((a + a @ a) > 0).astype(np.float64)
    np.fill_diagonal(out, 0.0)
    return out


def relational_adjacencies(g: InteractionGraph) -> list[np.ndarray]:
    """The m base types followed by the densified views, all 0/1 and n x n."""
    mats = [to_dense_adjacency(g, t) for t in range(1, NUM_TYPES + 1)]
    mats.append(densify(mats[0]))
    return mats
