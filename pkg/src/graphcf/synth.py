"""Synthetic user/listing marketplace with a planted transaction signal.

Users carry Dirichlet preference histograms concentrated on a prototype value
per attribute. ``affinity(u, l)`` is the user's histogram mass at the
listing's value, averaged over attributes. Views, saves, submits and
transactions are nested Bernoulli draws whose probabilities are logistic in
affinity, so ``submits <= saves <= views`` holds by construction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .graph import Attribute, AttributeSchema, GraphError, InteractionGraph

ATTRIBUTE_NAMES = ("zip_code", "beds", "baths", "sqft", "property_type", "year_built")

BEDS_EDGES = (1.5, 2.5, 3.5, 4.5)
BATHS_EDGES = (1.5, 2.5, 3.5)
SQFT_EDGES = (1100.0, 1500.0, 2000.0, 2700.0)
YEAR_EDGES = (1950.0, 1975.0, 1995.0, 2010.0)


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 3000
    num_listings: int = 3000
    num_zip_codes: int = 8
    num_property_types: int = 4
    prototype_concentration: float = 6.0
    background_concentration: float = 0.1
    # logit(P) = slope * affinity + intercept at each stage of the funnel
    view_slope: float = 9.0
    view_intercept: float = -7.3
    save_slope: float = 6.0
    save_intercept: float = -4.0
    submit_slope: float = 6.0
    submit_intercept: float = -3.8
    # roughly one submit in four converts, so many non-transactional
    # subgraphs still carry submits and the label is not a lookup on them
    transaction_slope: float = 8.0
    transaction_intercept: float = -6.5
    activity_noise: float = 1.0
    seed: int = 0

    def validate(self):
        if self.num_users < 1 or self.num_listings < 1:
            raise GraphError(f"degenerate config: {self.num_users} users, {self.num_listings} listings")
        if self.num_zip_codes < 2 or self.num_property_types < 2:
            raise GraphError("categorical vocabularies need at least 2 values")
        if self.prototype_concentration < 0 or self.background_concentration <= 0:
            raise GraphError("Dirichlet concentrations must be positive")
        for stage in ("view", "save", "submit", "transaction"):
            if getattr(self, f"{stage}_slope") < 0:
                raise GraphError(f"{stage}_slope must be >= 0 so rates are monotone in affinity")
        if self.activity_noise < 0:
            raise GraphError("activity_noise must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def marketplace_schema(cfg: SynthConfig) -> AttributeSchema:
    return AttributeSchema(
        (
            Attribute("zip_code", cfg.num_zip_codes),
            Attribute("beds", len(BEDS_EDGES) + 1, BEDS_EDGES),
            Attribute("baths", len(BATHS_EDGES) + 1, BATHS_EDGES),
            Attribute("sqft", len(SQFT_EDGES) + 1, SQFT_EDGES),
            Attribute("property_type", cfg.num_property_types),
            Attribute("year_built", len(YEAR_EDGES) + 1, YEAR_EDGES),
        ),
        activity_dim=3,
    )


def _generate_listings(cfg, schema, rng):
    n = cfg.num_listings
    attrs = schema.attributes
    zips = rng.integers(0, cfg.num_zip_codes, size=n)
    sqft = np.exp(rng.normal(math.log(1800.0), 0.35, size=n))
    beds = np.clip(np.round(sqft / 600.0 + rng.normal(0.0, 0.6, size=n)), 1, 7)
    baths = np.clip(np.round(beds * 0.6 + rng.normal(0.0, 0.5, size=n)), 1, 5)
    ptype = rng.integers(0, cfg.num_property_types, size=n)
    year = rng.uniform(1900.0, 2024.0, size=n)
    zip_effect = rng.normal(0.0, 0.35, size=cfg.num_zip_codes)
    log_price = 12.6 + zip_effect[zips] + 0.9 * (np.log(sqft) - math.log(1800.0)) + rng.normal(0.0, 0.15, size=n)
    cat = np.stack(
        [
            zips,
            np.searchsorted(attrs[1].bin_edges, beds, side="right"),
            np.searchsorted(attrs[2].bin_edges, baths, side="right"),
            np.searchsorted(attrs[3].bin_edges, sqft, side="right"),
            ptype,
            np.searchsorted(attrs[5].bin_edges, year, side="right"),
        ],
        axis=1,
    ).astype(np.int64)
    return cat, np.exp(log_price)


def _generate_users(cfg, schema, rng):
    n = cfg.num_users
    hist = np.zeros((n, schema.total_vocab))
    for a, attr in enumerate(schema.attributes):
        lo, hi = schema.block(a)
        proto = rng.integers(0, attr.size, size=n)
        alpha = np.full((n, attr.size), cfg.background_concentration)
        alpha[np.arange(n), proto] += cfg.prototype_concentration
        block = rng.gamma(alpha)
        block /= block.sum(axis=1, keepdims=True)
        hist[:, lo:hi] = block
    return hist


def affinity_matrix(user_hist, listing_cat, schema: AttributeSchema) -> np.ndarray:
    """``affinity[u, l]`` = mean over attributes of ``hist_u[a][listing_l[a]]``."""
    user_hist = np.asarray(user_hist)
    out = np.zeros((user_hist.shape[0], listing_cat.shape[0]))
    for a in range(schema.num_attributes):
        lo, _ = schema.block(a)
        out += user_hist[:, lo + listing_cat[:, a]]
    return out / schema.num_attributes


def pair_affinity(g: InteractionGraph, pairs) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros(0)
    s = g.schema
    total = np.zeros(len(pairs))
    for a in range(s.num_attributes):
        lo, _ = s.block(a)
        total += g.user_hist[pairs[:, 0], lo + g.listing_cat[pairs[:, 1], a]]
    return total / s.num_attributes


def generate_marketplace(cfg: SynthConfig | None = None) -> InteractionGraph:
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    schema = marketplace_schema(cfg)
    cat, price = _generate_listings(cfg, schema, rng)
    hist = _generate_users(cfg, schema, rng)

    edges = {"views": [], "saves": [], "submits": [], "tx": []}
    counts = np.zeros((cfg.num_users, 3))
    chunk = 256
    for start in range(0, cfg.num_users, chunk):
        stop = min(start + chunk, cfg.num_users)
        aff = affinity_matrix(hist[start:stop], cat, schema)
        viewed = rng.random(aff.shape) < expit(cfg.view_slope * aff + cfg.view_intercept)
        saved = viewed & (rng.random(aff.shape) < expit(cfg.save_slope * aff + cfg.save_intercept))
        submitted = saved & (rng.random(aff.shape) < expit(cfg.submit_slope * aff + cfg.submit_intercept))
        bought = submitted & (rng.random(aff.shape) < expit(cfg.transaction_slope * aff + cfg.transaction_intercept))
        for key, mask in (("views", viewed), ("saves", saved), ("submits", submitted), ("tx", bought)):
            u, l = np.nonzero(mask)
            edges[key].append(np.stack([u + start, l], axis=1))
        counts[start:stop] = np.stack([viewed.sum(1), saved.sum(1), submitted.sum(1)], axis=1)

    cat_edges = {k: np.concatenate(v) if v else np.zeros((0, 2), dtype=np.int64) for k, v in edges.items()}
    noise = rng.poisson(cfg.activity_noise, size=counts.shape) if cfg.activity_noise > 0 else 0
    activity = np.log1p(counts + noise)

    schema = schema.with_price_stats(price)
    return InteractionGraph(
        schema,
        user_ids=np.arange(cfg.num_users),
        listing_ids=np.arange(cfg.num_listings),
        interactions=[cat_edges["views"], cat_edges["saves"], cat_edges["submits"]],
        user_hist=hist,
        activity=activity,
        listing_cat=cat,
        price=price,
        transaction_pairs=cat_edges["tx"],
    )
