import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from socialfl.rng import derive_rng
from socialfl.social_graph import (
    Interaction,
    InvalidInputError,
    SocialGraph,
    TrustParams,
    blend,
    combined_trust,
    combined_trust_table,
    direct_trust,
    indirect_trust,
    random_graph,
    shortest_trust_path,
    social_impact,
)

# Frozen from a by-hand evaluation:
# 0.5 * (1 - e^-2) * e^-0.5 + 1.0 * (1 - e^-1) * e^0
TWO_INTERACTIONS = 0.5 * (1 - math.exp(-2)) * math.exp(-0.5) + (1 - math.exp(-1))


def saturated(e, ts=0.0):
    return Interaction(e, 1000.0, ts)


def graph_from(ties: dict, n: int, params=TrustParams()) -> SocialGraph:
    return SocialGraph.build(range(n), {k: [saturated(v)] for k, v in ties.items()}, 0.0, params)


interactions = st.builds(
    Interaction,
    st.floats(0, 1),
    st.floats(0, 50),
    st.floats(0, 20),
)


class TestDirectTrust:
    def test_empty_history(self):
        assert direct_trust([], 5.0) == 0.0

    def test_fresh_saturated_interaction_is_one(self):
        assert direct_trust([saturated(1.0, 3.0)], 3.0) == 1.0

    def test_two_interactions_frozen(self):
        hist = [Interaction(0.5, 2.0, 0.0), Interaction(1.0, 1.0, 5.0)]
        got = direct_trust(hist, 5.0, TrustParams(lambda_decay=0.1, tau_duration=1.0))
        assert got == pytest.approx(TWO_INTERACTIONS, abs=1e-12)
        assert got == pytest.approx(0.8943, abs=1e-4)

    def test_future_interaction_rejected(self):
        with pytest.raises(InvalidInputError):
            direct_trust([Interaction(0.5, 1.0, 10.0)], 2.0)

    def test_field_validation(self):
        with pytest.raises(InvalidInputError):
            Interaction(1.5, 1.0, 0.0)
        with pytest.raises(InvalidInputError):
            Interaction(0.5, -1.0, 0.0)
        with pytest.raises(InvalidInputError):
            TrustParams(tau_duration=0)

    @given(st.lists(interactions, max_size=8), st.floats(0, 30))
    def test_bounded(self, hist, extra):
        now = max([h.timestamp for h in hist], default=0.0) + extra
        assert 0.0 <= direct_trust(hist, now) <= 1.0

    @given(st.lists(interactions, max_size=8), st.floats(0, 10), st.floats(0, 10))
    def test_non_increasing_in_time(self, hist, a, b):
        t0 = max([h.timestamp for h in hist], default=0.0)
        lo, hi = sorted([a, b])
        assert direct_trust(hist, t0 + hi) <= direct_trust(hist, t0 + lo) + 1e-15

    @given(st.lists(interactions, max_size=8), st.floats(0, 50), st.floats(0, 20))
    def test_zero_experience_is_inert(self, hist, dur, ts):
        now = max([h.timestamp for h in hist] + [ts])
        assert direct_trust(hist + [Interaction(0.0, dur, ts)], now) == direct_trust(hist, now)


class TestIndirectTrust:
    def test_identity(self):
        g = graph_from({}, 3)
        assert indirect_trust(g, 1, 1) == 1.0

    def test_disconnected(self):
        g = graph_from({(0, 1): 0.9}, 3)
        assert indirect_trust(g, 0, 2) == 0.0
        assert shortest_trust_path(g, 0, 2) == ()

    def test_chain_product(self):
        g = graph_from({(0, 1): 0.8, (1, 2): 0.5}, 3)
        assert indirect_trust(g, 0, 2) == pytest.approx(0.4)
        assert shortest_trust_path(g, 0, 2) == (0, 1, 2)

    def test_equal_hops_prefer_larger_product(self):
        g = graph_from({(0, 1): 0.3, (1, 3): 0.9, (0, 2): 0.6, (2, 3): 0.6}, 4)
        assert shortest_trust_path(g, 0, 3) == (0, 2, 3)
        assert indirect_trust(g, 0, 3) == pytest.approx(0.36)

    def test_equal_product_lexicographic(self):
        g = graph_from({(0, 2): 0.5, (2, 3): 0.5, (0, 1): 0.5, (1, 3): 0.5}, 4)
        assert shortest_trust_path(g, 0, 3) == (0, 1, 3)

    def test_fewer_hops_beat_stronger_longer_path(self):
        g = graph_from({(0, 3): 0.1, (0, 1): 1.0, (1, 3): 1.0}, 4)
        assert indirect_trust(g, 0, 3) == pytest.approx(0.1)

    def test_unknown_avatar(self):
        g = graph_from({}, 2)
        with pytest.raises(InvalidInputError):
            indirect_trust(g, 0, 7)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.floats(0, 1))
    def test_two_hop_bounded_by_first_factor(self, seed, n, density):
        g = random_graph(n, density, seed)
        for i in g.avatar_ids:
            for j in g.avatar_ids:
                path = shortest_trust_path(g, i, j)
                if len(path) == 3:
                    best = max(g.tie_strength(i, k) for k in g.neighbors(i))
                    assert indirect_trust(g, i, j) <= best + 1e-15


class TestCombinedTrust:
    def test_pure_direct(self):
        g = graph_from({(0, 1): 0.6}, 2, TrustParams(alpha_mix=1.0))
        assert combined_trust(g, 0, 1) == pytest.approx(0.6)

    def test_pure_indirect(self):
        g = graph_from({(0, 1): 0.8, (1, 2): 0.5}, 3, TrustParams(alpha_mix=0.0))
        assert combined_trust(g, 0, 2) == pytest.approx(0.4)

    def test_blend(self):
        assert blend(0.6, 0.4, 0.7) == pytest.approx(0.54)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 0.5))
    def test_monotone(self, d, i, a, dd, di):
        assert blend(min(1, d + dd), min(1, i + di), a) >= blend(d, i, a) - 1e-15

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 10), st.floats(0, 1))
    def test_table_matches_pointwise_and_bounded(self, seed, n, density):
        g = random_graph(n, density, seed)
        table = combined_trust_table(g)
        for (i, j), v in table.items():
            assert 0.0 <= v <= 1.0
            assert v == pytest.approx(combined_trust(g, i, j), abs=1e-15)
            assert v == pytest.approx(table[(j, i)], abs=1e-12)


class TestSocialImpact:
    def test_isolated(self):
        assert social_impact(graph_from({}, 2), 0) == 0.0

    def test_weighted_degree(self):
        g = graph_from({(0, 1): 0.2, (0, 2): 0.5, (0, 3): 0.9}, 4)
        assert social_impact(g, 0) == pytest.approx(1.6)

    def test_unit_ties_give_degree(self):
        g = graph_from({(0, k): 1.0 for k in range(1, 6)}, 6)
        assert social_impact(g, 0) == 5.0


class TestGraph:
    def test_single_node(self):
        g = random_graph(1, 0.7, 3)
        assert len(g) == 1 and not g.edges

    def test_zero_density(self):
        assert not random_graph(30, 0.0, 3).edges

    def test_deterministic(self):
        a, b = random_graph(100, 0.1, 42), random_graph(100, 0.1, 42)
        assert a.to_dict() == b.to_dict()
        assert random_graph(100, 0.1, 43).to_dict() != a.to_dict()

    def test_tie_strengths_uniform(self):
        g = random_graph(100, 1.0, 5)
        ties = [e.tie_strength for e in g.edges.values()]
        assert len(ties) == 100 * 99 // 2
        assert sum(ties) / len(ties) == pytest.approx(0.5, abs=0.02)
        assert min(ties) >= 0 and max(ties) <= 1

    def test_rejects_self_loop_and_duplicates(self):
        with pytest.raises(InvalidInputError):
            SocialGraph.build([0, 1], {(1, 1): []})
        with pytest.raises(InvalidInputError):
            SocialGraph.build([0, 1], {(0, 1): [], (1, 0): []})
        with pytest.raises(InvalidInputError):
            SocialGraph.build([0, 1], {(0, 5): []})

    def test_undirected(self):
        g = graph_from({(2, 0): 0.3}, 3)
        assert g.tie_strength(0, 2) == g.tie_strength(2, 0) == pytest.approx(0.3)

    def test_refresh_matches_direct_trust(self):
        hist = {(0, 1): [Interaction(0.7, 2.0, 1.0)]}
        g = SocialGraph.build([0, 1], hist, 1.0).refreshed(4.0)
        assert g.tie_strength(0, 1) == direct_trust(hist[(0, 1)], 4.0)

    def test_file_round_trip(self, tmp_path):
        g = random_graph(12, 0.4, 9)
        g.save(tmp_path / "g.json")
        h = SocialGraph.load(tmp_path / "g.json")
        assert h.to_dict() == g.to_dict()
        assert combined_trust_table(h) == combined_trust_table(g)


def test_rng_streams_independent():
    a = derive_rng(1, "x", 3).random(4)
    assert (derive_rng(1, "x", 3).random(4) == a).all()
    assert not (derive_rng(1, "y", 3).random(4) == a).any()
    assert not (derive_rng(1, "x", 4).random(4) == a).any()
    with pytest.raises(ValueError):
        derive_rng(1, "x", -1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.floats(0.1, 0.8))
def test_indirect_matches_exhaustive_paths(seed, n, density):
    g = random_graph(n, density, seed)
    ties = {k: e.tie_strength for k, e in g.edges.items()}
    for i in range(n):
        for j in range(n):
            assert indirect_trust(g, i, j) == pytest.approx(oracles.indirect(ties, n, i, j), abs=1e-15)
