"""Line-delimited JSON dataset files.

Line 1 is the schema record; every following line is one graph. Floats are
written with ``repr`` precision (17 significant digits) so reading back a
written dataset reproduces it exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import HIST_TOL, INTERACTION_TYPES, Attribute, AttributeSchema, GraphError, InteractionGraph

SCHEMA_VERSION = 1


class DatasetError(ValueError):
    pass


def schema_to_record(schema: AttributeSchema) -> dict:
    return {
        "kind": "schema",
        "version": SCHEMA_VERSION,
        "attributes": [
            {"name": a.name, "size": a.size, "bin_edges": None if a.bin_edges is None else list(a.bin_edges)}
            for a in schema.attributes
        ],
        "activity_dim": schema.activity_dim,
        "price_log_mean": schema.price_log_mean,
        "price_log_std": schema.price_log_std,
    }


def schema_from_record(rec: dict, lineno: int = 1) -> AttributeSchema:
    if not isinstance(rec, dict) or rec.get("kind") != "schema":
        raise DatasetError(f"line {lineno}: field 'kind': expected a schema header record")
    if rec.get("version") != SCHEMA_VERSION:
        raise DatasetError(f"line {lineno}: field 'version': unsupported schema version {rec.get('version')!r}")
    try:
        attrs = tuple(
            Attribute(a["name"], int(a["size"]), None if a.get("bin_edges") is None else tuple(map(float, a["bin_edges"])))
            for a in rec["attributes"]
        )
        return AttributeSchema(attrs, int(rec["activity_dim"]), float(rec["price_log_mean"]), float(rec["price_log_std"]))
    except KeyError as exc:
        raise DatasetError(f"line {lineno}: field {exc.args[0]!r}: missing") from exc
    except GraphError as exc:
        raise DatasetError(f"line {lineno}: field 'attributes': {exc}") from exc


def graph_to_record(g: InteractionGraph) -> dict:
    s = g.schema
    users = []
    for u in range(g.num_users):
        hists = []
        for a in range(s.num_attributes):
            lo, hi = s.block(a)
            row = g.user_hist[u, lo:hi]
            nz = np.flatnonzero(row)
            hists.append([[int(v), float(row[v])] for v in nz])
        users.append({"histograms": hists, "activity": [float(x) for x in g.activity[u]]})
    listings = [
        {"categorical": [int(x) for x in g.listing_cat[l]], "price": float(g.price[l])} for l in range(g.num_listings)
    ]
    return {
        "user_ids": [int(x) for x in g.user_ids],
        "listing_ids": [int(x) for x in g.listing_ids],
        "edges": {name: e.tolist() for name, e in zip(INTERACTION_TYPES, g.interactions)},
        "users": users,
        "listings": listings,
        "label": g.label,
        "transaction_pairs": g.transaction_pairs.tolist(),
    }


def _field(rec, key, lineno):
    if key not in rec:
        raise DatasetError(f"line {lineno}: field {key!r}: missing")
    return rec[key]


def graph_from_record(rec: dict, schema: AttributeSchema, lineno: int) -> InteractionGraph:
    if not isinstance(rec, dict):
        raise DatasetError(f"line {lineno}: field '<record>': expected an object")
    user_ids = _field(rec, "user_ids", lineno)
    listing_ids = _field(rec, "listing_ids", lineno)
    edges = _field(rec, "edges", lineno)
    users = _field(rec, "users", lineno)
    listings = _field(rec, "listings", lineno)
    label = _field(rec, "label", lineno)
    pairs = _field(rec, "transaction_pairs", lineno)
    if len(users) != len(user_ids):
        raise DatasetError(f"line {lineno}: field 'users': {len(users)} entries for {len(user_ids)} ids")
    if len(listings) != len(listing_ids):
        raise DatasetError(f"line {lineno}: field 'listings': {len(listings)} entries for {len(listing_ids)} ids")

    hist = np.zeros((len(users), schema.total_vocab))
    activity = np.zeros((len(users), schema.activity_dim))
    for u, urec in enumerate(users):
        hists = _field(urec, "histograms", lineno)
        if len(hists) != schema.num_attributes:
            raise DatasetError(f"line {lineno}: field 'users[{u}].histograms': expected {schema.num_attributes} attributes")
        for a, h in enumerate(hists):
            lo, hi = schema.block(a)
            total = 0.0
            for v, p in h:
                if not 0 <= int(v) < hi - lo:
                    raise DatasetError(f"line {lineno}: field 'users[{u}].histograms[{a}]': value {v} outside vocabulary")
                if p < 0:
                    raise DatasetError(f"line {lineno}: field 'users[{u}].histograms[{a}]': negative probability")
                hist[u, lo + int(v)] += float(p)
                total += float(p)
            if h and abs(total - 1.0) > HIST_TOL:
                raise DatasetError(
                    f"line {lineno}: field 'users[{u}].histograms[{a}]': probabilities sum to {total:.9g}, not 1"
                )
            # re-normalize only genuine drift; float-sum noise must round-trip
            if h and abs(total - 1.0) > 1e-12:
                hist[u, lo:hi] /= total
        act = _field(urec, "activity", lineno)
        if len(act) != schema.activity_dim:
            raise DatasetError(f"line {lineno}: field 'users[{u}].activity': expected {schema.activity_dim} values")
        activity[u] = act

    cat = np.zeros((len(listings), schema.num_attributes), dtype=np.int64)
    price = np.zeros(len(listings))
    for l, lrec in enumerate(listings):
        c = _field(lrec, "categorical", lineno)
        if len(c) != schema.num_attributes:
            raise DatasetError(f"line {lineno}: field 'listings[{l}].categorical': expected {schema.num_attributes} values")
        cat[l] = c
        price[l] = _field(lrec, "price", lineno)

    interactions = []
    for name in INTERACTION_TYPES:
        if name not in edges:
            raise DatasetError(f"line {lineno}: field 'edges.{name}': missing")
        interactions.append(np.asarray(edges[name], dtype=np.int64).reshape(-1, 2))
    try:
        return InteractionGraph(schema, user_ids, listing_ids, interactions, hist, activity, cat, price, pairs, label=label)
    except GraphError as exc:
        raise DatasetError(f"line {lineno}: field 'graph': {exc}") from exc


def write_dataset(graphs, path, schema: AttributeSchema | None = None):
    graphs = list(graphs)
    if schema is None:
        if not graphs:
            raise DatasetError("writing an empty dataset needs an explicit schema")
        schema = graphs[0].schema
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(schema_to_record(schema)) + "\n")
        for i, g in enumerate(graphs):
            if g.schema != schema:
                raise DatasetError(f"graph {i}: schema differs from the dataset schema")
            fh.write(json.dumps(graph_to_record(g)) + "\n")


def load_dataset(path) -> tuple[AttributeSchema, list[InteractionGraph]]:
    path = Path(path)
    graphs = []
    schema = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: field '<json>': {exc.msg}") from exc
            if schema is None:
                schema = schema_from_record(rec, lineno)
                continue
            graphs.append(graph_from_record(rec, schema, lineno))
    if schema is None:
        raise DatasetError(f"{path}: missing schema header")
    return schema, graphs


def read_dataset(path) -> list[InteractionGraph]:
    return load_dataset(path)[1]


def write_pairs(pairs, path):
    """Transaction-pair side file: one ``user_id,listing_id`` CSV row per pair."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("user_id,listing_id\n")
        for u, l in pairs:
            fh.write(f"{int(u)},{int(l)}\n")


def read_pairs(path) -> list[tuple[int, int]]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    if not rows or rows[0].strip() != "user_id,listing_id":
        raise DatasetError(f"{path}: line 1: missing header")
    out = []
    for i, r in enumerate(rows[1:], start=2):
        if r.strip():
            a, b = r.split(",")
            out.append((int(a), int(b)))
    return out
