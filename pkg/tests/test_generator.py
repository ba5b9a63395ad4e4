import numpy as np
import pytest

from graphcf import autodiff as ad
from graphcf.autodiff.gradcheck import check_gradients
from graphcf.classifier import ClassifierModel, ModelConfig, SchemaMismatch, graph_inputs
from graphcf.generator import (
    GeneratorConfig,
    GeneratorModel,
    LossWeights,
    Thresholds,
    counterfactual_hinge,
    generator_loss,
    normalize_soft,
    prepare,
    relaxed_inputs,
    train_generator,
)
from graphcf.graph import Attribute, AttributeSchema, normalize_adjacency

from conftest import permuted, random_graph, tiny_schema

SMALL = ModelConfig(d_emb=3, d=4, num_layers=2, readout_hidden=3, dropout=0.0)
SMALL_GEN = GeneratorConfig(d_z=3, edge_dim=3, hidden=3)


def models(seed=0, mode="unconstrained"):
    clf = ClassifierModel(tiny_schema(), SMALL, seed=seed)
    gen = GeneratorModel(tiny_schema(), SMALL, GeneratorConfig(d_z=3, edge_dim=3, hidden=3, mode=mode), seed=seed + 1)
    return clf, gen


def test_hinge_examples():
    assert counterfactual_hinge(0.5, 0.55, 0.2, 0) == pytest.approx(0.15, abs=1e-15)
    assert counterfactual_hinge(0.5, 0.95, 0.2, 0) == 0.0
    assert counterfactual_hinge(0.9, 0.1, 0.2, 1) == 0.0


def test_weights_and_thresholds_validation():
    with pytest.raises(ValueError):
        LossWeights(gamma=1.0)
    with pytest.raises(ValueError):
        LossWeights(eta=-1.0)
    with pytest.raises(ValueError):
        LossWeights(alpha=(1.0, 2.0))
    with pytest.raises(ValueError):
        Thresholds(tau_add=0.3, tau_rem=0.5)
    with pytest.raises(ValueError):
        Thresholds(tau_add=0.0)
    with pytest.raises(ValueError):
        GeneratorConfig(mode="saves_only")
    assert LossWeights().tuple4 == (0.2, 1.0, 1.0, 1.0)


def test_cf_term_vanishes_for_transactional_graphs():
    clf, gen = models()
    g = random_graph(np.random.default_rng(0), 2, 3, density=(1, 1, 1), transactions=1)
    terms = generator_loss(g, gen, clf, LossWeights(gamma=0.9), np.random.default_rng(0))
    assert terms.counterfactual == 0.0


def test_cf_term_matches_relaxed_score():
    clf, gen = models()
    g = random_graph(np.random.default_rng(1), 3, 2)
    w = LossWeights(gamma=0.5)
    terms = generator_loss(g, gen, clf, w, np.random.default_rng(0))
    assert terms.counterfactual == pytest.approx(max(0.0, terms.score_original - terms.score_relaxed + 0.5), abs=1e-15)
    assert 0.0 <= terms.counterfactual <= w.gamma + 1


def test_total_is_weighted_sum_of_terms():
    clf, gen = models()
    g = random_graph(np.random.default_rng(2), 3, 3)
    w = LossWeights(gamma=0.4, zeta=0.5, beta=2.0, eta=3.0, lam=0.7)
    noise = np.random.default_rng(5).normal(size=(6, 3))
    t = generator_loss(g, gen, clf, w, None, noise=noise)
    expect = 0.5 * t.edge + 2.0 * t.feature + 3.0 * t.counterfactual + 0.7 * t.kl
    assert float(t.total.data) == pytest.approx(expect, rel=1e-12)


def test_edge_term_is_alpha_weighted_bce_sum():
    clf, gen = models()
    g = random_graph(np.random.default_rng(3), 2, 3)
    noise = np.zeros((5, 3))
    t = generator_loss(g, gen, clf, LossWeights(), None, noise=noise)
    mu, sigma = gen.encode(g)
    dec = gen.decode(mu, g.num_users)
    expect = 0.0
    for i, a in enumerate((1.0, 2.0, 4.0)):
        p = np.clip(dec.edge_probs[i].data, ad.BCE_EPS, 1 - ad.BCE_EPS)
        y = g.bipartite_matrix(i + 1)
        expect += a * -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum()
    assert t.edge == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_full_loss_matches_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    nu = int(rng.integers(1, 4))
    nl = int(rng.integers(max(1, 3 - nu), 7 - nu))
    g = random_graph(rng, nu, nl)
    clf, gen = models(seed, mode="unconstrained" if seed % 2 else "views_only")
    clf.params.set_trainable(False)
    # zero biases put dead-relu rows exactly on the kink; move off it
    for name, p in gen.params.items():
        if name.endswith("bias"):
            p.data += rng.normal(0.0, 0.1, size=p.shape)
    noise = rng.normal(size=(g.num_nodes, 3))
    prep = prepare(g, clf)
    # margin 0.9 keeps the hinge active so its branch is exercised
    w = LossWeights(gamma=0.9, zeta=0.7, beta=1.3, eta=2.0, lam=0.5)
    err = check_gradients(lambda: generator_loss(prep, gen, clf, w, None, noise=noise).total, list(gen.params))
    assert err < 1e-4
    assert all(p.grad is None for p in clf.params)


def test_zero_heads_give_standard_normal():
    _, gen = models()
    gen.mu_head.last.zero_()
    gen.logvar_head.last.zero_()
    mu, sigma = gen.encode(random_graph(np.random.default_rng(0), 3, 2))
    np.testing.assert_array_equal(mu.data, 0.0)
    np.testing.assert_array_equal(sigma.data, 1.0)


def test_encode_is_permutation_equivariant():
    _, gen = models()
    g = random_graph(np.random.default_rng(4), 3, 4)
    h = permuted(g, np.random.default_rng(9))
    mu, sigma = gen.encode(g)
    mu2, sigma2 = gen.encode(h)
    # node ids are unique, so they recover where each row moved
    order = np.concatenate([[list(g.user_ids).index(u) for u in h.user_ids],
                            [g.num_users + list(g.listing_ids).index(l) for l in h.listing_ids]])
    np.testing.assert_allclose(mu2.data, mu.data[order], atol=1e-12)
    np.testing.assert_allclose(sigma2.data, sigma.data[order], atol=1e-12)


def test_transfer_init_reproduces_classifier_backbone():
    clf = ClassifierModel(tiny_schema(), ModelConfig(dropout=0.3), seed=5)
    gen = GeneratorModel(tiny_schema(), clf.cfg, GeneratorConfig(), seed=6)
    g = random_graph(np.random.default_rng(5), 3, 3)
    inp = graph_inputs(g)
    assert not np.allclose(gen.encoder(inp).data, clf.backbone(inp).data)
    gen.init_from_classifier(clf)
    np.testing.assert_array_equal(gen.encoder(inp).data, clf.backbone(inp).data)


def test_transfer_init_rejects_other_shapes():
    clf = ClassifierModel(tiny_schema(), SMALL, seed=0)
    gen = GeneratorModel(tiny_schema(), ModelConfig(), GeneratorConfig(), seed=0)
    with pytest.raises(SchemaMismatch):
        gen.init_from_classifier(clf)


def test_decode_properties():
    _, gen = models()
    rng = np.random.default_rng(6)
    for _ in range(10):
        z = rng.normal(size=(7, 3))
        dec = gen.decode(z, 3)
        assert all(p.shape == (3, 4) for p in dec.edge_probs)
        s = tiny_schema()
        for a in range(s.num_attributes):
            np.testing.assert_allclose(dec.user_hist.data[:, slice(*s.block(a))].sum(1), 1.0, atol=1e-12)
        assert dec.price.shape == (4, 1)
    # identical latent rows give a symmetric map for the shared users/listings
    z = np.tile(rng.normal(size=(1, 3)), (4, 1))
    p = gen.decode(z, 2).edge_probs[0].data
    np.testing.assert_allclose(p, p.T, atol=1e-15)


def test_orthogonal_edge_embeddings_give_half():
    _, gen = models()
    head = gen.edge_heads[0]
    head.last.zero_()
    head.last.bias.data[...] = 0.0
    p = gen.decode(np.random.default_rng(0).normal(size=(3, 3)), 1).edge_probs[0].data
    np.testing.assert_array_equal(p, 0.5)


def test_edge_bias_shifts_every_logit_of_its_type():
    _, gen = models()
    z = np.random.default_rng(1).normal(size=(5, 3))
    before = [p.data for p in gen.decode(z, 2).edge_probs]
    gen.edge_bias[1].data[...] = -1.5
    after = [p.data for p in gen.decode(z, 2).edge_probs]
    logit = lambda p: np.log(p / (1 - p))
    np.testing.assert_allclose(logit(after[1]) - logit(before[1]), -1.5, atol=1e-9)
    np.testing.assert_array_equal(after[0], before[0])
    np.testing.assert_array_equal(after[2], before[2])


def test_normalize_soft_agrees_on_binary_input():
    a = np.zeros((4, 4))
    a[0, 2] = a[2, 0] = a[1, 3] = a[3, 1] = a[0, 3] = a[3, 0] = 1
    np.testing.assert_allclose(normalize_soft(ad.Tensor(a)).data, normalize_adjacency(a), atol=1e-15)


def test_relaxed_inputs_on_factual_probabilities_reproduce_score():
    clf, gen = models()
    g = random_graph(np.random.default_rng(7), 3, 3)
    mu, _ = gen.encode(g)
    dec = gen.decode(mu, g.num_users)
    dec.edge_probs = [ad.Tensor(g.bipartite_matrix(t)) for t in (1, 2, 3)]
    fact = graph_inputs(g)
    dec.user_hist, dec.price = ad.Tensor(fact.user_hist), ad.Tensor(fact.price)
    for mode in ("views_only", "unconstrained"):
        relaxed = relaxed_inputs(g, dec, mode, fact)
        assert float(clf.predict_inputs(relaxed).data[0, 0]) == pytest.approx(clf.forward(g), abs=1e-12)


def test_schema_mismatch_in_loss():
    clf, gen = models()
    other = AttributeSchema((Attribute("zip_code", 5), Attribute("beds", 3, (1.5, 2.5))), activity_dim=2)
    g = random_graph(np.random.default_rng(0), 2, 2, schema=other)
    with pytest.raises(SchemaMismatch):
        generator_loss(g, gen, clf, LossWeights(), np.random.default_rng(0))


def _toy_graphs():
    rng = np.random.default_rng(8)
    return [random_graph(rng, 3, 3, density=(0.7, 0.3, 0.1), transactions=i % 3 == 0) for i in range(12)]


def test_training_reduces_loss_and_leaves_classifier_untouched():
    clf, _ = models()
    before = clf.params.state()
    graphs = _toy_graphs()
    cfg = GeneratorConfig(d_z=3, edge_dim=3, hidden=3, epochs=8, batch_size=4, lr=1e-2, patience=8)
    gen, glog = train_generator(graphs[:9], graphs[9:], clf, LossWeights(), cfg)
    totals = [r["train_total"] for r in glog.rows]
    assert np.mean(totals[-3:]) < np.mean(totals[:3])
    for name, value in clf.params.state().items():
        np.testing.assert_array_equal(value, before[name])
    assert all(p.requires_grad for p in clf.params)
    assert gen.loss_weights == LossWeights()


def test_training_is_deterministic(tmp_path):
    clf, _ = models()
    graphs = _toy_graphs()
    cfg = GeneratorConfig(d_z=3, edge_dim=3, hidden=3, epochs=2, batch_size=4)
    for name in ("a", "b"):
        gen, _ = train_generator(graphs[:9], graphs[9:], clf, LossWeights(), cfg)
        gen.save(tmp_path / f"{name}.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back = GeneratorModel.load(tmp_path / "a.ckpt", tiny_schema())
    assert back.loss_weights == LossWeights()
    for name, value in back.params.state().items():
        np.testing.assert_array_equal(value, gen.params.state()[name])
