import numpy as np
import pytest

from graphcf.graph import Attribute, AttributeSchema, InteractionGraph


def tiny_schema():
    return AttributeSchema(
        (Attribute("zip_code", 3), Attribute("beds", 3, (1.5, 2.5))),
        activity_dim=2,
        price_log_mean=12.0,
        price_log_std=0.5,
    )


def random_graph(rng, nu, nl, schema=None, density=(0.6, 0.3, 0.15), transactions=0):
    """Random valid graph; nested views >= saves >= submits, transactions among submits."""
    schema = schema or tiny_schema()
    hist = np.zeros((nu, schema.total_vocab))
    for a in range(schema.num_attributes):
        lo, hi = schema.block(a)
        hist[:, lo:hi] = rng.dirichlet(np.ones(hi - lo), size=nu)
    cond = lambda a, b: a / b if b else 0.0
    views = rng.random((nu, nl)) < density[0]
    saves = views & (rng.random((nu, nl)) < cond(density[1], density[0]))
    subs = saves & (rng.random((nu, nl)) < cond(density[2], density[1]))
    pairs = lambda m: np.argwhere(m)
    tx = pairs(subs)[:transactions] if transactions else np.zeros((0, 2), dtype=np.int64)
    return InteractionGraph(
        schema,
        user_ids=np.arange(nu),
        listing_ids=100 + np.arange(nl),
        interactions=[pairs(views), pairs(saves), pairs(subs)],
        user_hist=hist,
        activity=rng.random((nu, schema.activity_dim)),
        listing_cat=np.stack([rng.integers(0, s, size=nl) for s in schema.sizes], axis=1),
        price=np.exp(rng.normal(12.0, 0.5, size=nl)),
        transaction_pairs=tx,
    )


def permuted(g, rng):
    """Same graph with users and listings shuffled within each side."""
    pu, pl = rng.permutation(g.num_users), rng.permutation(g.num_listings)
    inv_u, inv_l = np.argsort(pu), np.argsort(pl)

    def remap(e):
        return np.stack([inv_u[e[:, 0]], inv_l[e[:, 1]]], axis=1) if len(e) else e

    return InteractionGraph(
        g.schema, g.user_ids[pu], g.listing_ids[pl], [remap(e) for e in g.interactions],
        g.user_hist[pu], g.activity[pu], g.listing_cat[pl], g.price[pl], remap(g.transaction_pairs),
    )


@pytest.fixture
def schema():
    return tiny_schema()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
