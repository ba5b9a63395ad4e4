"""Materialized counterfactual graphs and the matched random baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .classifier import ClassifierModel
from .generator import MODES, GeneratorModel, Thresholds
from .graph import INTERACTION_TYPES, NUM_TYPES, InteractionGraph


@dataclass
class CounterfactualResult:
    original: InteractionGraph
    counterfactual: InteractionGraph
    added: tuple  # per type: (k, 2) int arrays of (user, listing)
    removed: tuple
    score_original: float
    score_counterfactual: float
    decoded_user_hist: np.ndarray | None = None
    decoded_price: np.ndarray | None = None
    mode: str = "unconstrained"

    @property
    def lift(self) -> float:
        """Relative change in predicted transaction probability."""
        return (self.score_counterfactual - self.score_original) / self.score_original

    def added_counts(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.added)

    def removed_counts(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.removed)

    def to_record(self, index: int | None = None) -> dict:
        rec = {
            "mode": self.mode,
            "user_ids": [int(x) for x in self.original.user_ids],
            "listing_ids": [int(x) for x in self.original.listing_ids],
            "added": {n: np.asarray(a).tolist() for n, a in zip(INTERACTION_TYPES, self.added)},
            "removed": {n: np.asarray(r).tolist() for n, r in zip(INTERACTION_TYPES, self.removed)},
            "score_original": self.score_original,
            "score_counterfactual": self.score_counterfactual,
            "lift": self.lift,
        }
        if index is not None:
            rec = {"index": index, **rec}
        if self.mode == "unconstrained" and self.decoded_price is not None:
            rec["price"] = [float(x) for x in self.counterfactual.price]
            rec["user_hist"] = np.asarray(self.counterfactual.user_hist).tolist()
        return rec


def result_from_record(rec: dict, original: InteractionGraph) -> CounterfactualResult:
    """Rebuild a result from its record and the factual graph it was made from."""
    if [int(x) for x in original.user_ids] != rec["user_ids"] or [int(x) for x in original.listing_ids] != rec["listing_ids"]:
        raise ValueError("record node ids do not match the supplied original graph")
    added = tuple(np.asarray(rec["added"][n], dtype=np.int64).reshape(-1, 2) for n in INTERACTION_TYPES)
    removed = tuple(np.asarray(rec["removed"][n], dtype=np.int64).reshape(-1, 2) for n in INTERACTION_TYPES)
    hist = np.asarray(rec["user_hist"], dtype=float) if "user_hist" in rec else None
    price = np.asarray(rec["price"], dtype=float) if "price" in rec else None
    cf = apply_changes(original, added, removed, user_hist=hist, price=price)
    return CounterfactualResult(
        original, cf, added, removed, float(rec["score_original"]), float(rec["score_counterfactual"]),
        decoded_user_hist=hist, decoded_price=price, mode=rec["mode"],
    )


def _as_pairs(mask) -> np.ndarray:
    u, l = np.nonzero(mask)
    return np.stack([u, l], axis=1).astype(np.int64) if len(u) else np.zeros((0, 2), dtype=np.int64)


def apply_changes(g: InteractionGraph, added, removed, user_hist=None, price=None) -> InteractionGraph:
    """New graph with per-type edge additions/removals and optional feature swaps."""
    new_edges = []
    for t in range(NUM_TYPES):
        m = g.bipartite_matrix(t + 1).astype(bool)
        a, r = np.asarray(added[t]).reshape(-1, 2), np.asarray(removed[t]).reshape(-1, 2)
        if len(a):
            m[a[:, 0], a[:, 1]] = True
        if len(r):
            m[r[:, 0], r[:, 1]] = False
        new_edges.append(_as_pairs(m))
    changes = {"interactions": new_edges}
    if user_hist is not None:
        changes["user_hist"] = user_hist
    if price is not None:
        changes["price"] = price
    return g.replace(**changes)


def _decode_once(g, model: GeneratorModel, rng):
    mu, sigma = model.encode(g)
    z = ad.reparameterize(mu, sigma, rng)
    dec = model.decode(z, g.num_users)
    return [p.data for p in dec.edge_probs], dec.user_hist.data, dec.price.data[:, 0]


def materialize_from_probs(
    g: InteractionGraph,
    edge_probs,
    user_hist,
    price_norm,
    classifier: ClassifierModel,
    t: Thresholds,
    mode: str,
    feasible=None,
    score_original: float | None = None,
) -> CounterfactualResult:
    """Threshold decoded probabilities into a concrete counterfactual and score it."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    types = range(NUM_TYPES) if mode == "unconstrained" else (0,)
    added, removed = [], []
    for i in range(NUM_TYPES):
        if i not in types:
            added.append(np.zeros((0, 2), dtype=np.int64))
            removed.append(np.zeros((0, 2), dtype=np.int64))
            continue
        present = g.bipartite_matrix(i + 1).astype(bool)
        p = np.asarray(edge_probs[i])
        add = (p > t.tau_add) & ~present
        if feasible is not None:
            add &= np.asarray(feasible, dtype=bool)
        added.append(_as_pairs(add))
        removed.append(_as_pairs((p < t.tau_rem) & present))
    if mode == "unconstrained":
        cf = apply_changes(g, added, removed, user_hist=user_hist, price=g.schema.denormalize_price(price_norm))
    else:
        cf = apply_changes(g, added, removed)
    s0 = classifier.forward(g) if score_original is None else score_original
    return CounterfactualResult(
        original=g,
        counterfactual=cf,
        added=tuple(added),
        removed=tuple(removed),
        score_original=s0,
        score_counterfactual=classifier.forward(cf),
        decoded_user_hist=np.asarray(user_hist),
        decoded_price=np.asarray(price_norm),
        mode=mode,
    )


def materialize(
    g: InteractionGraph,
    model: GeneratorModel,
    classifier: ClassifierModel,
    t: Thresholds,
    mode: str = "views_only",
    rng=None,
    feasible=None,
    best_of: int = 1,
) -> CounterfactualResult:
    """Sample a latent, decode, threshold; with ``best_of > 1`` keep the highest lift."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if best_of < 1:
        raise ValueError("best_of must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    s0 = classifier.forward(g)
    best = None
    for _ in range(best_of):
        probs, hist, price = _decode_once(g, model, rng)
        res = materialize_from_probs(g, probs, hist, price, classifier, t, mode, feasible, s0)
        if best is None or res.lift > best.lift:
            best = res
    return best


def random_baseline(
    g: InteractionGraph,
    n_add,
    n_rem,
    classifier: ClassifierModel,
    rng,
    score_original: float | None = None,
    mode: str = "views_only",
) -> CounterfactualResult:
    """Uniformly add ``n_add[i]`` absent pairs and drop ``n_rem[i]`` present edges per type."""
    added, removed = [], []
    for i in range(NUM_TYPES):
        present = g.bipartite_matrix(i + 1).astype(bool)
        absent_idx = np.flatnonzero(~present.reshape(-1))
        present_idx = np.flatnonzero(present.reshape(-1))
        ka, kr = min(int(n_add[i]), len(absent_idx)), min(int(n_rem[i]), len(present_idx))
        pick_a = np.sort(rng.choice(absent_idx, size=ka, replace=False)) if ka else np.zeros(0, dtype=np.int64)
        pick_r = np.sort(rng.choice(present_idx, size=kr, replace=False)) if kr else np.zeros(0, dtype=np.int64)
        nl = g.num_listings
        added.append(np.stack([pick_a // nl, pick_a % nl], axis=1).astype(np.int64))
        removed.append(np.stack([pick_r // nl, pick_r % nl], axis=1).astype(np.int64))
    cf = apply_changes(g, added, removed)
    s0 = classifier.forward(g) if score_original is None else score_original
    return CounterfactualResult(g, cf, tuple(added), tuple(removed), s0, classifier.forward(cf), mode=mode)


def matched_baseline(res: CounterfactualResult, classifier: ClassifierModel, rng) -> CounterfactualResult:
    return random_baseline(
        res.original, res.added_counts(), res.removed_counts(), classifier, rng, res.score_original, res.mode
    )


def generate_all(graphs, model, classifier, t: Thresholds, mode: str, seed: int, best_of: int = 1):
    """CF results and matched random baselines; each graph owns its RNG stream."""
    results, baselines = [], []
    for i, g in enumerate(graphs):
        rng = np.random.default_rng([seed, i])
        res = materialize(g, model, classifier, t, mode, rng, best_of=best_of)
        results.append(res)
        baselines.append(matched_baseline(res, classifier, rng))
    return results, baselines


def write_results(results, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, r in enumerate(results):
            fh.write(json.dumps(r.to_record(i)) + "\n")


def read_result_records(path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
