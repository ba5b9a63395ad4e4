"""Graph-VAE counterfactual generator.

The encoder reuses the classifier backbone to produce per-node Gaussians.
A latent sample per node is decoded into user preference histograms
(softmax per attribute block), a normalized price per listing, and for each
interaction type an edge probability ``sigmoid(<g_i(z_u), g_i(z_l)> + b_i)`` for
every user/listing pair, with ``b_i`` a learned per-type offset.

Training minimizes ``zeta*L_I + beta*L_X + eta*L_CF + lam*L_KL`` against a
frozen classifier. The counterfactual term scores a *relaxed* graph whose
adjacency holds the decoded probabilities themselves; thresholds are applied
only when a counterfactual is materialized.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, ParameterStore, Tensor
from .classifier import (
    Backbone,
    ClassifierModel,
    GraphInputs,
    ModelConfig,
    NonFiniteLoss,
    SchemaMismatch,
    graph_inputs,
)
from .graph import NUM_TYPES, InteractionGraph

log = logging.getLogger(__name__)

MODES = ("unconstrained", "views_only")


@dataclass(frozen=True)
class LossWeights:
    alpha: tuple[float, ...] = (1.0, 2.0, 4.0)
    gamma: float = 0.2
    zeta: float = 1.0
    beta: float = 1.0
    eta: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if len(self.alpha) != NUM_TYPES:
            raise ValueError(f"alpha needs {NUM_TYPES} entries, got {len(self.alpha)}")
        if min(self.alpha) < 0 or min(self.zeta, self.beta, self.eta, self.lam) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"margin gamma must lie in [0, 1), got {self.gamma}")

    @property
    def tuple4(self) -> tuple[float, float, float, float]:
        return (self.gamma, self.zeta, self.beta, self.eta)


@dataclass(frozen=True)
class Thresholds:
    tau_add: float = 0.9
    tau_rem: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.tau_add <= 1.0:
            raise ValueError(f"tau_add must lie in (0, 1], got {self.tau_add}")
        if not 0.0 <= self.tau_rem < 1.0:
            raise ValueError(f"tau_rem must lie in [0, 1), got {self.tau_rem}")
        if self.tau_rem > self.tau_add:
            raise ValueError(f"tau_rem ({self.tau_rem}) must not exceed tau_add ({self.tau_add})")


@dataclass(frozen=True)
class GeneratorConfig:
    d_z: int = 32
    edge_dim: int = 16
    hidden: int = 32
    mode: str = "unconstrained"
    # copying the classifier backbone is optional; from scratch the edge
    # reconstruction leaves its all-0.5 plateau several epochs sooner
    transfer_init: bool = False
    epochs: int = 15
    batch_size: int = 8
    lr: float = 3e-3
    patience: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class Decoded:
    edge_probs: list  # NUM_TYPES tensors, n_users x n_listings
    user_hist: Tensor
    price: Tensor


class GeneratorModel:
    def __init__(self, schema, model_cfg: ModelConfig | None = None, cfg: GeneratorConfig | None = None, seed: int = 0):
        self.schema = schema
        self.cfg = cfg or GeneratorConfig()
        # dropout regularizes the classifier only
        base = model_cfg or ModelConfig()
        self.model_cfg = ModelConfig(base.d_emb, base.d, base.num_layers, base.readout_hidden, 0.0)
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.loss_weights: LossWeights | None = None
        c, d = self.cfg, self.model_cfg.d
        self.params = ParameterStore()
        self.encoder = Backbone(self.params, "encoder", schema, self.model_cfg, rng)
        self.mu_head = MLP(self.params, "mu_head", [d, d, c.d_z], rng)
        self.logvar_head = MLP(self.params, "logvar_head", [d, d, c.d_z], rng)
        self.user_head = MLP(self.params, "user_head", [c.d_z, c.hidden, schema.total_vocab], rng)
        self.price_head = MLP(self.params, "price_head", [c.d_z, c.hidden, 1], rng)
        self.edge_heads = [MLP(self.params, f"edge_head{i}", [c.d_z, c.hidden, c.edge_dim], rng) for i in range(NUM_TYPES)]
        # per-type logit offset: lets the decoder express sparse edge sets without
        # first having to push users and listings to opposite sides of the space
        self.edge_bias = [self.params.add(f"edge_bias{i}", np.zeros((1, 1))) for i in range(NUM_TYPES)]
        # start near the prior so early samples stay informative
        self.logvar_head.last.weight.data *= 0.1
        self.logvar_head.last.bias.data[...] = -2.0

    def init_from_classifier(self, clf: ClassifierModel):
        """Copy the classifier backbone (embedding, projections, GNN layers) into the encoder."""
        ours = (self.model_cfg.d_emb, self.model_cfg.d, self.model_cfg.num_layers)
        if (clf.cfg.d_emb, clf.cfg.d, clf.cfg.num_layers) != ours:
            raise SchemaMismatch("classifier backbone shape differs from the encoder")
        state = clf.params.state()
        for name in self.params.names():
            if name.startswith("encoder."):
                src = "gnn." + name[len("encoder.") :]
                self.params[name].data = state[src].copy()

    def check_schema(self, g: InteractionGraph):
        if g.schema.attributes != self.schema.attributes or g.schema.activity_dim != self.schema.activity_dim:
            raise SchemaMismatch("graph schema does not match the generator schema")

    # encoder / decoder -------------------------------------------------------
    def encode(self, g_or_inputs) -> tuple[Tensor, Tensor]:
        inp = g_or_inputs if isinstance(g_or_inputs, GraphInputs) else graph_inputs(self._checked(g_or_inputs))
        z = self.encoder(inp)
        mu = self.mu_head(z)
        sigma = ad.sigma_from_logvar(self.logvar_head(z))
        return mu, sigma

    def _checked(self, g):
        self.check_schema(g)
        return g

    def decode(self, z, num_users: int) -> Decoded:
        z = ad.as_tensor(z)
        n = z.shape[0]
        users = np.arange(num_users)
        listings = np.arange(num_users, n)
        probs = []
        for head, bias in zip(self.edge_heads, self.edge_bias):
            e = head(z)
            eu, el = ad.row_select(e, users), ad.row_select(e, listings)
            probs.append(ad.sigmoid(ad.add(ad.matmul(eu, ad.transpose(el)), bias)))
        zu, zl = ad.row_select(z, users), ad.row_select(z, listings)
        logits = self.user_head(zu)
        blocks = []
        for a in range(self.schema.num_attributes):
            lo, hi = self.schema.block(a)
            blocks.append(ad.softmax(ad.col_slice(logits, lo, hi)))
        hist = ad.concat(blocks, axis=1)
        price = self.price_head(zl)
        return Decoded(probs, hist, price)

    def save(self, path):
        meta = {
            "kind": "generator",
            "model": asdict(self.model_cfg),
            "generator": asdict(self.cfg),
            "seed": self.seed,
        }
        if self.loss_weights is not None:
            meta["loss"] = asdict(self.loss_weights)
        ad.save_tensors(path, self.params.state(), meta)

    @classmethod
    def load(cls, path, schema) -> "GeneratorModel":
        state, meta = ad.load_tensors(path)
        if meta.get("kind") != "generator":
            raise ValueError(f"{path}: not a generator checkpoint")
        model = cls(schema, ModelConfig(**meta["model"]), GeneratorConfig(**meta["generator"]), seed=meta.get("seed", 0))
        model.params.load_state(state)
        if "loss" in meta:
            lw = dict(meta["loss"])
            lw["alpha"] = tuple(lw["alpha"])
            model.loss_weights = LossWeights(**lw)
        return model


# relaxed graph -----------------------------------------------------------------

def normalize_soft(a: Tensor) -> Tensor:
    """Differentiable ``D^-1/2 (A + I) D^-1/2`` for a weighted adjacency."""
    n = a.shape[0]
    aug = ad.add(a, np.eye(n))
    s = ad.power(ad.sum(aug, axis=1, keepdims=True), -0.5)
    return ad.mul(aug, ad.matmul(s, ad.transpose(s)))


def soft_adjacency(block: Tensor) -> Tensor:
    """Symmetric n x n adjacency with ``block`` in the user/listing quadrant."""
    nu, nl = block.shape
    top = ad.concat([np.zeros((nu, nu)), block], axis=1)
    bottom = ad.concat([ad.transpose(block), np.zeros((nl, nl))], axis=1)
    return ad.concat([top, bottom], axis=0)


def relaxed_inputs(g: InteractionGraph, dec: Decoded, mode: str, factual: GraphInputs | None = None) -> GraphInputs:
    """Classifier inputs for the relaxed counterfactual graph."""
    factual = factual or graph_inputs(g)
    views = soft_adjacency(dec.edge_probs[0])
    adjs = [normalize_soft(views)]
    if mode == "views_only":
        adjs.extend(factual.adjs[1:NUM_TYPES])
        hist, price = factual.user_hist, factual.price
    else:
        adjs.extend(normalize_soft(soft_adjacency(p)) for p in dec.edge_probs[1:])
        hist, price = dec.user_hist, dec.price
    adjs.append(normalize_soft(ad.noisy_or_two_hop(views)))
    return GraphInputs(
        user_hist=hist,
        activity=factual.activity,
        listing_rows=factual.listing_rows,
        price=price,
        adjs=adjs,
        pool=factual.pool,
        order=None,
        labels=factual.labels,
        sizes=factual.sizes,
    )


# loss ----------------------------------------------------------------------------

@dataclass
class LossTerms:
    total: Tensor
    edge: float
    feature: float
    counterfactual: float
    kl: float
    score_original: float
    score_relaxed: float

    def as_dict(self) -> dict:
        return {
            "total": float(self.total.data),
            "edge": self.edge,
            "feature": self.feature,
            "counterfactual": self.counterfactual,
            "kl": self.kl,
        }


@dataclass
class Prepared:
    graph: InteractionGraph
    inputs: GraphInputs
    edges: list
    score: float


def prepare(g: InteractionGraph, classifier: ClassifierModel) -> Prepared:
    classifier.check_schema(g)
    inp = graph_inputs(g)
    score = float(classifier.predict_inputs(inp).data[0, 0])
    return Prepared(g, inp, [g.bipartite_matrix(t) for t in range(1, NUM_TYPES + 1)], score)


def generator_loss(
    g,
    model: GeneratorModel,
    classifier: ClassifierModel,
    w: LossWeights,
    rng,
    mode: str | None = None,
    noise=None,
) -> LossTerms:
    """Full generator objective on one graph (``g`` may be pre-``prepare``d)."""
    prep = g if isinstance(g, Prepared) else prepare(g, classifier)
    graph = prep.graph
    model.check_schema(graph)
    classifier.check_schema(graph)
    mode = mode or model.cfg.mode
    inp = prep.inputs
    mu, sigma = model.encode(inp)
    z = ad.reparameterize(mu, sigma, rng, noise=noise)
    dec = model.decode(z, graph.num_users)

    edge_terms = [ad.scale(ad.bce(p, target, reduction="sum"), a) for p, target, a in zip(dec.edge_probs, prep.edges, w.alpha)]
    l_edge = edge_terms[0]
    for t in edge_terms[1:]:
        l_edge = ad.add(l_edge, t)
    l_feat = ad.add(
        ad.sum(ad.square(ad.sub(dec.price, inp.price))),
        ad.sum(ad.square(ad.sub(dec.user_hist, inp.user_hist))),
    )
    l_kl = ad.scale(ad.kl_diag_gaussian(mu, sigma), 1.0 / graph.num_nodes)

    total = ad.add(ad.scale(l_edge, w.zeta), ad.add(ad.scale(l_feat, w.beta), ad.scale(l_kl, w.lam)))
    score_relaxed = float("nan")
    l_cf_val = 0.0
    if graph.label == 0 and w.eta > 0:
        relaxed = relaxed_inputs(graph, dec, mode, inp)
        f_soft = classifier.predict_inputs(relaxed)
        score_relaxed = float(f_soft.data[0, 0])
        l_cf = ad.relu(ad.add(ad.scale(f_soft, -1.0), prep.score + w.gamma))
        l_cf_val = float(l_cf.data[0, 0])
        total = ad.add(total, ad.scale(ad.sum(l_cf), w.eta))
    return LossTerms(
        total=total,
        edge=float(l_edge.data),
        feature=float(l_feat.data),
        counterfactual=l_cf_val,
        kl=float(l_kl.data),
        score_original=prep.score,
        score_relaxed=score_relaxed,
    )


def counterfactual_hinge(score_original: float, score_cf: float, gamma: float, label: int) -> float:
    """Margin ranking term on plain scores; zero for transactional graphs."""
    if label == 1:
        return 0.0
    return max(0.0, score_original - score_cf + gamma)


# training --------------------------------------------------------------------------

@dataclass
class GeneratorLog:
    rows: list = field(default_factory=list)
    best_epoch: int = -1

    def write_csv(self, path):
        keys = ["epoch", "train_total", "train_edge", "train_feature", "train_counterfactual", "train_kl", "val_total"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(keys)
            for r in self.rows:
                wr.writerow([r["epoch"]] + [f"{r[k]:.9g}" for k in keys[1:]])


def train_generator(
    train_graphs,
    val_graphs,
    classifier: ClassifierModel,
    w: LossWeights | None = None,
    cfg: GeneratorConfig | None = None,
) -> tuple[GeneratorModel, GeneratorLog]:
    """Minibatch Adam on the generator objective; keeps the best-validation weights."""
    w = w or LossWeights()
    cfg = cfg or GeneratorConfig()
    if not train_graphs:
        raise ValueError("empty training split")
    schema = train_graphs[0].schema
    model = GeneratorModel(schema, classifier.cfg, cfg, seed=cfg.seed)
    model.loss_weights = w
    if cfg.transfer_init:
        model.init_from_classifier(classifier)
    rng = np.random.default_rng(cfg.seed + 104729)
    was_trainable = [p.requires_grad for p in classifier.params]
    classifier.params.set_trainable(False)
    try:
        tr = [prepare(g, classifier) for g in train_graphs]
        va = [prepare(g, classifier) for g in val_graphs]
        opt = ad.Adam(list(model.params), lr=cfg.lr)
        glog = GeneratorLog()
        best_state, best_val, stale = model.params.state(), float("inf"), 0
        for epoch in range(cfg.epochs):
            perm = rng.permutation(len(tr))
            sums = {"total": 0.0, "edge": 0.0, "feature": 0.0, "counterfactual": 0.0, "kl": 0.0}
            for i in range(0, len(perm), cfg.batch_size):
                idx = perm[i : i + cfg.batch_size]
                opt.zero_grad()
                for j in idx:
                    terms = generator_loss(tr[j], model, classifier, w, rng, cfg.mode)
                    if not np.isfinite(terms.total.data):
                        raise NonFiniteLoss(f"non-finite generator loss at epoch {epoch}")
                    ad.scale(terms.total, 1.0 / len(idx)).backward()
                    for k, v in terms.as_dict().items():
                        sums[k] += v
                opt.step()
            row = {"epoch": epoch, **{f"train_{k}": v / len(tr) for k, v in sums.items()}}
            val_rng = np.random.default_rng(cfg.seed + 1)
            row["val_total"] = (
                float(np.mean([float(generator_loss(p, model, classifier, w, val_rng, cfg.mode).total.data) for p in va]))
                if va
                else row["train_total"]
            )
            glog.rows.append(row)
            log.info("generator epoch %d %s", epoch, {k: round(v, 4) for k, v in row.items() if k != "epoch"})
            if row["val_total"] < best_val:
                best_val, best_state, stale = row["val_total"], model.params.state(), 0
                glog.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        model.params.load_state(best_state)
    finally:
        for p, flag in zip(classifier.params, was_trainable):
            p.requires_grad = flag
    return model, glog
