"""Relational GCN graph classifier predicting transaction probability.

Pipeline per graph: embed users (probability-weighted embedding rows per
attribute, plus activity features) and listings (embedding row per attribute,
plus normalized price); project each side into a shared width; run ``L``
relational layers ``Z <- relu(sum_j J_j Z W_j)`` over the three interaction
types and the densified views; mean-pool nodes; readout MLP; sigmoid.

Several graphs are processed at once by stacking them block-diagonally.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import MLP, Linear, ParameterStore, Tensor
from .graph import NUM_TYPES, AttributeSchema, GraphError, InteractionGraph, normalize_adjacency, relational_adjacencies

log = logging.getLogger(__name__)

NUM_RELATIONS = NUM_TYPES + 1


class SchemaMismatch(GraphError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_emb: int = 16
    d: int = 32
    num_layers: int = 2
    readout_hidden: int = 32
    dropout: float = 0.2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 3e-3
    patience: int = 10
    seed: int = 0
    weight_decay: float = 0.0


# batch preparation -----------------------------------------------------------

@dataclass
class GraphInputs:
    """Model-ready arrays for one graph or a block-diagonal batch of graphs.

    ``adjs`` are the normalized relation matrices in block order; ``order``
    maps block rows to rows of ``[all users; all listings]``.
    """

    user_hist: object
    activity: np.ndarray
    listing_rows: np.ndarray
    price: object
    adjs: list
    pool: object
    order: np.ndarray | None
    labels: np.ndarray
    sizes: list = field(default_factory=list)


def listing_rows(schema: AttributeSchema, listing_cat) -> np.ndarray:
    return np.asarray(listing_cat, dtype=np.int64) + np.asarray(schema.offsets, dtype=np.int64)[None, :]


def graph_inputs(g: InteractionGraph) -> GraphInputs:
    adjs = [sp.csr_matrix(normalize_adjacency(a)) for a in relational_adjacencies(g)]
    n = g.num_nodes
    return GraphInputs(
        user_hist=np.asarray(g.user_hist),
        activity=np.asarray(g.activity),
        listing_rows=listing_rows(g.schema, g.listing_cat),
        price=g.normalized_price().reshape(-1, 1),
        adjs=adjs,
        pool=sp.csr_matrix(np.full((1, n), 1.0 / n)),
        order=None,
        labels=np.array([float(g.label)]),
        sizes=[(g.num_users, g.num_listings)],
    )


def collate(items: list[GraphInputs]) -> GraphInputs:
    if len(items) == 1:
        return items[0]
    nu_tot = sum(it.user_hist.shape[0] for it in items)
    order, pool_rows, pool_cols, pool_vals = [], [], [], []
    u_off = l_off = blk = 0
    for b, it in enumerate(items):
        nu, nl = it.user_hist.shape[0], it.listing_rows.shape[0]
        order.extend(range(u_off, u_off + nu))
        order.extend(range(nu_tot + l_off, nu_tot + l_off + nl))
        n = nu + nl
        pool_rows.extend([b] * n)
        pool_cols.extend(range(blk, blk + n))
        pool_vals.extend([1.0 / n] * n)
        u_off += nu
        l_off += nl
        blk += n
    adjs = [sp.block_diag([it.adjs[j] for it in items], format="csr") for j in range(NUM_RELATIONS)]
    return GraphInputs(
        user_hist=np.concatenate([it.user_hist for it in items]),
        activity=np.concatenate([it.activity for it in items]),
        listing_rows=np.concatenate([it.listing_rows for it in items]),
        price=np.concatenate([it.price for it in items]),
        adjs=adjs,
        pool=sp.csr_matrix((pool_vals, (pool_rows, pool_cols)), shape=(len(items), blk)),
        order=np.asarray(order, dtype=np.int64),
        labels=np.concatenate([it.labels for it in items]),
        sizes=[s for it in items for s in it.sizes],
    )


def _propagate(adj, z):
    if isinstance(adj, Tensor):
        return ad.matmul(adj, z)
    return ad.spmm(adj, z)


# model -----------------------------------------------------------------------

class Backbone:
    """Node embedding, side projections and relational message passing."""

    def __init__(self, store: ParameterStore, prefix: str, schema: AttributeSchema, cfg: ModelConfig, rng):
        self.schema = schema
        self.cfg = cfg
        self.prefix = prefix
        na = schema.num_attributes
        self.embedding = store.add(f"{prefix}.embedding", rng.normal(0.0, 0.3, size=(schema.total_vocab, cfg.d_emb)))
        self.proj_user = Linear(store, f"{prefix}.proj_user", na * cfg.d_emb + schema.activity_dim, cfg.d, rng)
        self.proj_listing = Linear(store, f"{prefix}.proj_listing", na * cfg.d_emb + 1, cfg.d, rng)
        self.weights = [
            [store.add(f"{prefix}.layer{l}.rel{j}", ad.glorot(rng, cfg.d, cfg.d)) for j in range(NUM_RELATIONS)]
            for l in range(cfg.num_layers)
        ]

    def embed_users(self, user_hist, activity) -> Tensor:
        parts = []
        for a in range(self.schema.num_attributes):
            lo, hi = self.schema.block(a)
            rows = ad.row_select(self.embedding, np.arange(lo, hi))
            parts.append(ad.matmul(ad.col_slice(user_hist, lo, hi), rows))
        if self.schema.activity_dim:
            parts.append(ad.as_tensor(activity))
        return ad.concat(parts, axis=1)

    def embed_listings(self, rows, price) -> Tensor:
        parts = [ad.row_select(self.embedding, rows[:, a]) for a in range(rows.shape[1])]
        parts.append(ad.as_tensor(price))
        return ad.concat(parts, axis=1)

    def initial(self, inp: GraphInputs) -> Tensor:
        zu = self.proj_user(self.embed_users(inp.user_hist, inp.activity))
        zl = self.proj_listing(self.embed_listings(inp.listing_rows, inp.price))
        z = ad.concat([zu, zl], axis=0)
        return z if inp.order is None else ad.row_select(z, inp.order)

    def __call__(self, inp: GraphInputs, training: bool = False, rng=None) -> Tensor:
        z = self.initial(inp)
        for layer in self.weights:
            total = None
            for adj, w in zip(inp.adjs, layer):
                term = _propagate(adj, ad.matmul(z, w))
                total = term if total is None else ad.add(total, term)
            z = ad.relu(total)
            z = ad.dropout(z, self.cfg.dropout, rng, training)
        return z


class ClassifierModel:
    def __init__(self, schema: AttributeSchema, cfg: ModelConfig | None = None, seed: int = 0):
        self.schema = schema
        self.cfg = cfg or ModelConfig()
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = ParameterStore()
        self.backbone = Backbone(self.params, "gnn", schema, self.cfg, rng)
        self.readout = MLP(self.params, "readout", [self.cfg.d, self.cfg.readout_hidden, 1], rng)

    def check_schema(self, g: InteractionGraph):
        if g.schema.attributes != self.schema.attributes or g.schema.activity_dim != self.schema.activity_dim:
            raise SchemaMismatch("graph schema does not match the model schema")

    def logits(self, inp: GraphInputs, training: bool = False, rng=None) -> Tensor:
        z = self.backbone(inp, training, rng)
        pooled = _propagate(inp.pool, z) if not isinstance(inp.pool, Tensor) else ad.matmul(inp.pool, z)
        h = ad.relu(self.readout.layers[0](pooled))
        h = ad.dropout(h, self.cfg.dropout, rng, training)
        return self.readout.layers[1](h)

    def predict_inputs(self, inp: GraphInputs, training: bool = False, rng=None) -> Tensor:
        """``(B, 1)`` transaction probabilities."""
        return ad.sigmoid(self.logits(inp, training, rng))

    def forward(self, g: InteractionGraph) -> float:
        self.check_schema(g)
        return float(self.predict_inputs(graph_inputs(g)).data[0, 0])

    def predict(self, graphs, batch_size: int = 64, prepared=None) -> np.ndarray:
        prepared = prepared if prepared is not None else [graph_inputs(g) for g in graphs]
        out = []
        for i in range(0, len(prepared), batch_size):
            out.append(self.predict_inputs(collate(prepared[i : i + batch_size])).data[:, 0])
        return np.concatenate(out) if out else np.zeros(0)

    # checkpoints
    def save(self, path):
        meta = {"kind": "classifier", "model": asdict(self.cfg), "seed": self.seed}
        ad.save_tensors(path, self.params.state(), meta)

    @classmethod
    def load(cls, path, schema: AttributeSchema) -> "ClassifierModel":
        state, meta = ad.load_tensors(path)
        if meta.get("kind") != "classifier":
            raise ValueError(f"{path}: not a classifier checkpoint")
        model = cls(schema, ModelConfig(**meta["model"]), seed=meta.get("seed", 0))
        model.params.load_state(state)
        return model


# metrics / training ----------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_auc: float = float("nan")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_bce", "val_auc"])
            for r in self.rows:
                w.writerow([r["epoch"], f"{r['train_bce']:.9g}", f"{r['val_auc']:.9g}"])


class NonFiniteLoss(FloatingPointError):
    pass


def bce_loss(model: ClassifierModel, inp: GraphInputs, training: bool, rng) -> Tensor:
    y_hat = model.predict_inputs(inp, training, rng)
    return ad.bce(y_hat, inp.labels.reshape(-1, 1))


def train(
    train_graphs,
    val_graphs,
    cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    schema: AttributeSchema | None = None,
) -> tuple[ClassifierModel, TrainLog]:
    """Minibatch Adam on mean BCE; keeps the best-validation-AUC weights."""
    cfg = cfg or TrainConfig()
    if not train_graphs:
        raise ValueError("empty training split")
    if not val_graphs:
        raise ValueError("empty validation split")
    schema = schema or train_graphs[0].schema
    model = ClassifierModel(schema, model_cfg, seed=cfg.seed)
    for g in list(train_graphs) + list(val_graphs):
        model.check_schema(g)
    rng = np.random.default_rng(cfg.seed + 7919)
    tr = [graph_inputs(g) for g in train_graphs]
    va = [graph_inputs(g) for g in val_graphs]
    va_labels = np.array([g.label for g in val_graphs])
    opt = ad.Adam(list(model.params), lr=cfg.lr)
    log_ = TrainLog()
    best_state, stale = model.params.state(), 0
    has_both = 0 < va_labels.sum() < len(va_labels)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(tr))
        total, count = 0.0, 0
        for i in range(0, len(perm), cfg.batch_size):
            batch = collate([tr[j] for j in perm[i : i + cfg.batch_size]])
            opt.zero_grad()
            loss = bce_loss(model, batch, True, rng)
            if cfg.weight_decay:
                for p in model.params:
                    loss = ad.add(loss, ad.scale(ad.sum(ad.square(p)), cfg.weight_decay))
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            n = len(batch.labels)
            total += float(loss.data) * n
            count += n
        val_auc = roc_auc(model.predict(None, prepared=va), va_labels) if has_both else float("nan")
        log_.rows.append({"epoch": epoch, "train_bce": total / count, "val_auc": val_auc})
        log.info("epoch %d train_bce=%.4f val_auc=%.4f", epoch, total / count, val_auc)
        # single-class validation cannot rank; fall back to the latest weights
        improved = not has_both or np.isnan(log_.best_val_auc) or val_auc > log_.best_val_auc
        if improved:
            log_.best_val_auc, log_.best_epoch = val_auc, epoch
            best_state, stale = model.params.state(), 0
        else:
            stale += 1
        if stale >= cfg.patience:
            break
    model.params.load_state(best_state)
    return model, log_
