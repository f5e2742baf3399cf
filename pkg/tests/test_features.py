import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netchoice.clogit import fit
from netchoice.features import (
    ChoiceData, EventFilter, FeatureError, FeatureSpec, concat, extract_choices,
    negative_sample, parse_extractor, safe_log,
)
from netchoice.generators import GrowthConfig, generate
from netchoice.graph import TemporalGraph

from oracles import random_choice_data


def graph(n, arcs, directed=False, timestamps=None):
    g = TemporalGraph(directed=directed)
    for _ in range(n):
        g.add_node(arrival=0)
    for k, (a, b) in enumerate(arcs):
        g.add_edge(a, b, timestamp=None if timestamps is None else timestamps[k])
    return g


def test_safe_log():
    assert safe_log([0.0, 1.0, np.e]).tolist() == [0.0, 0.0, 1.0]


def test_triangle_closing_fof_flag():
    g = graph(4, [(0, 1), (1, 2), (2, 0)])
    data = extract_choices(g, "fof", filters=EventFilter(min_event=2))
    ev = data[0]
    assert ev.chooser == 2 and ev.alternatives.tolist() == [0, 3]
    assert ev.features[:, 0].tolist() == [1.0, 0.0]
    assert ev.chosen_node == 0


def test_zero_safe_degree_pairs():
    # at the last event node 1 has degree 0, node 2 degree 1, node 3 degree 3
    arcs = [(4, 2), (4, 3), (5, 3), (6, 3), (0, 1)]
    g = graph(7, arcs, directed=True)
    data = extract_choices(g, "hasdeg,logdeg,deg", filters=EventFilter(min_event=4))
    ev = data[0]
    rows = {int(a): ev.features[p].tolist() for p, a in enumerate(ev.alternatives)}
    assert rows[1] == [0.0, 0.0, 0.0]
    assert rows[2] == [1.0, 0.0, 1.0]
    assert rows[3] == pytest.approx([1.0, np.log(3), 3.0])


def test_reciprocal_and_hops():
    g = graph(4, [(1, 0), (0, 2), (2, 3), (0, 1)], directed=True)
    data = extract_choices(g, "recip,hops:3", filters=EventFilter(min_event=3))
    ev = data[0]
    assert list(data.names) == ["reciprocal", "hop_2", "hop_ge3"]
    rows = {int(a): ev.features[p].tolist() for p, a in enumerate(ev.alternatives)}
    assert rows[1] == [1.0, 0.0, 0.0]  # points at 0; 0 cannot reach it yet
    assert rows[3] == [0.0, 1.0, 0.0]  # 0 -> 2 -> 3


def test_hop_one_only_for_undirected_walks_of_directed_graphs():
    g = graph(3, [(0, 1), (1, 2)], directed=True)
    spec = FeatureSpec([parse_extractor("hops:4")])
    assert spec.bind(g) == ["hop_2", "hop_3", "hop_ge4"]
    spec.extractors[0].undirected = True
    assert spec.bind(g)[0] == "hop_1"


def test_unknown_and_duplicate_features():
    with pytest.raises(FeatureError):
        parse_extractor("nonsense")
    with pytest.raises(FeatureError):
        FeatureSpec.parse("logdeg,log_degree").bind(graph(2, [(0, 1)]))


def test_chooser_and_existing_links_excluded():
    g, _ = generate(GrowthConfig(n=150, m=3, model="pa", seed=1, directed=True))
    data = extract_choices(g, "logdeg", filters=EventFilter(min_event=g.meta["bootstrap_edges"]))
    for k in range(0, data.n_events, 7):
        ev = data[k]
        t = data.event[k]
        assert ev.chooser not in ev.alternatives
        linked = {b for a, b, tt, _ in g.edges() if a == ev.chooser and tt < t}
        assert not linked & set(ev.alternatives.tolist())


def test_prefix_recount_no_leakage():
    g, _ = generate(GrowthConfig(n=120, m=2, model="pa", alpha=1.0, seed=11))
    flt = EventFilter(min_event=g.meta["bootstrap_edges"], max_events=30, seed=3)
    data = extract_choices(g, "deg,logdeg,hasdeg,logcn,fof,hops:4", filters=flt)
    for k in range(data.n_events):
        ev, t = data[k], int(data.event[k])
        i = ev.chooser
        fof = g.friends_of_friends(i, t)
        for p, a in enumerate(ev.alternatives.tolist()):
            d = g.in_degree(a, t)
            cn = g.common_neighbors(i, a, t)
            hop = g.hop_distance(i, a, t, cap=None)
            want = [d, safe_log([d])[0], float(d > 0), safe_log([cn])[0], float(a in fof),
                    float(hop == 2), float(hop == 3), float(hop is not None and hop >= 4)]
            assert ev.features[p].tolist() == want


def test_fof_rule_flags_outside_choices():
    # 0-1, 1-2, then 0 links to 3, which is not a friend of a friend
    g = graph(4, [(0, 1), (1, 2), (0, 3)])
    data = extract_choices(g, "logdeg", choice_set="fof", filters=EventFilter(min_event=2))
    assert data.n_events == 1 and not data.valid[0]
    assert data[0].alternatives.tolist() == [2, 3]
    assert data.meta["outside_choice_set"] == 1


def test_empty_choice_sets_dropped_and_counted():
    # only the last edge has a friend-of-friend to choose from
    g = graph(3, [(0, 1), (1, 2), (0, 2)])
    data = extract_choices(g, "logdeg", choice_set="fof")
    assert data.meta["dropped_empty"] == 2 and data.event.tolist() == [2]


def test_filters():
    ts = [0.0, 86400.0, 2 * 86400.0, 3 * 86400.0]
    g = graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], timestamps=ts)
    d = extract_choices(g, "logdeg", filters=EventFilter(start=86400.0, end=3 * 86400.0))
    assert d.event.tolist() == [1, 2]
    d = extract_choices(g, "logdeg", filters=EventFilter(max_events=2, seed=0))
    assert d.n_events == 2
    d = extract_choices(g, "logdeg", filters=EventFilter(exclude_first_seen="edge"))
    assert d.event.tolist() == [1, 2, 3]
    d2 = extract_choices(g, "logdeg", filters=EventFilter(exclude_first_seen="day"))
    assert 0 not in d2.event.tolist()
    with pytest.raises(FeatureError):
        extract_choices(graph(3, [(0, 1)]), "logdeg", filters=EventFilter(start=0.0))


def test_require_fof_drops_events():
    g = graph(4, [(0, 1), (1, 2), (2, 0)])
    d = extract_choices(g, "fof", filters=EventFilter(require_fof=True))
    assert d.meta["dropped_no_fof"] == 2 and d.event.tolist() == [2]


def test_jsonl_round_trip(tmp_path):
    g, _ = generate(GrowthConfig(n=60, m=2, model="pa", seed=2))
    data = extract_choices(g, "logdeg,hasdeg,fof", neg_samples=5, seed=1)
    data = data.with_weights(np.linspace(1, 2, data.n_events))
    buf = io.StringIO()
    data.to_jsonl(buf)
    buf.seek(0)
    back = ChoiceData.from_jsonl(buf)
    assert back.names == data.names
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.offsets, data.offsets)
    np.testing.assert_array_equal(back.chosen, data.chosen)
    np.testing.assert_array_equal(back.alts, data.alts)
    np.testing.assert_array_equal(back.weight, data.weight)
    assert back.meta == data.meta
    path = tmp_path / "c.jsonl"
    data.to_jsonl(str(path))
    assert ChoiceData.from_jsonl(str(path)).n_events == data.n_events


def test_concat_and_subset():
    rng = np.random.default_rng(0)
    a = random_choice_data(rng, 5, 2)
    b = random_choice_data(rng, 4, 2)
    c = concat([a, b])
    assert c.n_events == 9
    np.testing.assert_array_equal(c.subset(np.arange(5, 9)).X, b.X)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12))
def test_negative_sampling_properties(seed, s):
    rng = np.random.default_rng(seed)
    data = random_choice_data(rng, 20, 2, size_range=(2, 15))
    out = negative_sample(data, s, np.random.default_rng(seed))
    again = negative_sample(data, s, np.random.default_rng(seed))
    np.testing.assert_array_equal(out.X, again.X)
    for k in range(data.n_events):
        full, red = data[k], out[k]
        np.testing.assert_array_equal(red.features[red.chosen], full.features[full.chosen])
        assert len(red) == min(s, len(full) - 1) + 1
        if s >= len(full) - 1:
            np.testing.assert_array_equal(red.features, full.features)
        # rows are a subset in the original order
        idx = [np.flatnonzero((full.features == r).all(axis=1))[0] for r in red.features]
        assert idx == sorted(idx)


def test_ten_negative_samples_give_eleven_alternatives():
    g, _ = generate(GrowthConfig(n=400, m=4, model="copy", p=0.5, seed=0))
    data = extract_choices(g, "logdeg", filters=EventFilter(min_event=g.meta["bootstrap_edges"]),
                           neg_samples=10, seed=0)
    full = data.sizes[data.sizes < 11]
    assert np.all(data.sizes[data.event >= 200 * 4] == 11)
    assert len(full) < data.n_events


def test_sampled_fit_close_to_full_fit():
    g, _ = generate(GrowthConfig(n=1500, m=1, model="pa", alpha=1.0, seed=4))
    flt = EventFilter(min_event=g.meta["bootstrap_edges"])
    full = fit(extract_choices(g, "logdeg", filters=flt), ["log_degree"])
    samp = fit(extract_choices(g, "logdeg", filters=flt, neg_samples=10, seed=4), ["log_degree"])
    se = np.hypot(full.se_of("log_degree"), samp.se_of("log_degree"))
    assert abs(full["log_degree"] - samp["log_degree"]) < 2 * se
