"""Sectoring, KDE priors, candidate selection and sub-graph decomposition."""

from __future__ import annotations

import math
import random

import numpy as np
import pytest

from qubotrack.event_model import GeneratorConfig, generate_event, true_edges
from qubotrack.preprocess import (SECTOR_COUNT, SECTOR_STRIDE, SECTOR_WIDTH,
                                  Edge, KdeModel, calibrate_threshold,
                                  edge_prior, pair_visits,
                                  read_candidates_csv, reset_pair_visits,
                                  sectorize, segment_features,
                                  select_candidates, subgraph, train_kde,
                                  write_candidates_csv)


@pytest.fixture(scope="module")
def event():
    return generate_event(GeneratorConfig(n_particles=60, seed=4))


@pytest.fixture(scope="module")
def kde():
    events = [generate_event(GeneratorConfig(n_particles=60, noise_fraction=0.0,
                                             seed=s)) for s in (100, 101)]
    model = train_kde(events)
    calibrate_threshold(model, events, 0.93)
    return model


# -- sectorize ---------------------------------------------------------------


def test_sector_geometry(event):
    sectors = sectorize(event)
    assert len(sectors) == SECTOR_COUNT
    for s in sectors:
        assert s.phi_max - s.phi_min == pytest.approx(SECTOR_WIDTH)
    for a, b in zip(sectors, sectors[1:]):
        assert b.phi_min - a.phi_min == pytest.approx(SECTOR_STRIDE)


def test_every_hit_in_exactly_two_sectors(event):
    sectors = sectorize(event)
    counts: dict[int, int] = {}
    for s in sectors:
        for hid in s.hit_ids:
            counts[hid] = counts.get(hid, 0) + 1
    assert set(counts) == {h.id for h in event.hits}
    assert all(c == 2 for c in counts.values())


def test_hit_at_phi_zero_lands_in_covering_sectors(event):
    sectors = sectorize(event)
    hit = event.hits[0]
    member = [s.index for s in sectors if hit.id in set(s.hit_ids)]
    assert len(member) == 2
    for k in member:
        s = sectors[k]
        # Interval containment modulo the 2*pi wrap.
        shifted = (hit.phi - s.phi_min) % (2.0 * math.pi)
        assert shifted <= SECTOR_WIDTH + 1e-12


def test_true_edges_mostly_sector_contained(event):
    sectors = sectorize(event)
    membership: dict[int, set[int]] = {}
    for s in sectors:
        for hid in s.hit_ids:
            membership.setdefault(hid, set()).add(s.index)
    edges = true_edges(event)
    contained = sum(1 for a, b in edges if membership[a] & membership[b])
    assert contained / len(edges) > 0.99


# -- KDE ---------------------------------------------------------------------


def test_train_kde_requires_enough_segments():
    tiny = generate_event(GeneratorConfig(n_particles=2, noise_fraction=0.0,
                                          seed=1))
    with pytest.raises(ValueError, match="100"):
        train_kde([tiny])


def test_density_nonnegative_and_normalized_prior(kde):
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.normal(0, 30, 200), rng.uniform(-1.5, 1.5, 200)])
    dens = kde.density(pts)
    assert np.all(dens >= 0)
    priors = kde.prior(pts)
    assert np.all((priors >= 0) & (priors <= 1))
    # Peak normalization: the densest training point maps to prior 1.
    assert kde.prior(kde.samples).max() == pytest.approx(1.0)


def test_density_integrates_to_one(kde):
    lo = kde.samples.min(axis=0) - 8 * kde.bandwidths
    hi = kde.samples.max(axis=0) + 8 * kde.bandwidths
    xs = np.linspace(lo[0], hi[0], 301)
    ys = np.linspace(lo[1], hi[1], 301)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    dens = kde.density(np.column_stack([gx.ravel(), gy.ravel()]))
    total = np.trapezoid(np.trapezoid(dens.reshape(gx.shape), ys, axis=1), xs)
    assert total == pytest.approx(1.0, rel=0.01)


def test_density_far_from_samples_is_negligible(kde):
    far = kde.samples.max(axis=0) + 10 * kde.bandwidths
    d = kde.density(far[None, :])[0]
    assert d < 1e-6 * kde.peak_density


def test_kde_mode_at_origin_for_pointing_segments():
    # Beamspot width 0 and no smearing: every true segment extrapolates to
    # z = 0 exactly, so the density is maximal on the z0 = 0 axis.
    events = [generate_event(GeneratorConfig(n_particles=40, noise_fraction=0.0,
                                             beamspot_sigma_z=0.0,
                                             smear_sigma=0.0, seed=s))
              for s in (5, 6)]
    model = train_kde(events)
    ang = float(np.median(model.samples[:, 1]))
    d_on = model.density(np.array([[0.0, ang]]))[0]
    d_off = model.density(np.array([[0.5, ang]]))[0]
    assert d_on > d_off


def test_edge_prior_pure_and_ordered(event, kde):
    hits = sorted(event.hits, key=lambda h: h.r)
    a, b = hits[0], hits[-1]
    assert edge_prior(kde, a, b) == edge_prior(kde, a, b)
    with pytest.raises(ValueError, match="r_a < r_b"):
        edge_prior(kde, b, a)


def test_prior_prefers_beamspot_segments(kde):
    # Oracle: direct density comparison of a training-like segment against
    # one extrapolating 500 mm from the beamline.
    z0, ang = kde.samples[0]
    near = kde.prior(np.array([[z0, ang]]))[0]
    far = kde.prior(np.array([[500.0, ang]]))[0]
    assert near > far


def test_kde_save_load_round_trip(kde, tmp_path):
    path = str(tmp_path / "model.json")
    kde.save(path)
    back = KdeModel.load(path)
    assert np.array_equal(back.samples, kde.samples)
    assert np.array_equal(back.bandwidths, kde.bandwidths)
    assert back.peak_density == kde.peak_density
    assert back.threshold == kde.threshold
    assert back.threshold_recall == kde.threshold_recall


def test_kde_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "model.json"
    path.write_text('{"version": 99}')
    with pytest.raises(ValueError, match="version"):
        KdeModel.load(str(path))


def test_segment_features_matches_line_algebra():
    z0, ang = segment_features(1.0, 2.0, 2.0, 4.0)
    assert z0 == pytest.approx(0.0)
    assert ang == pytest.approx(math.atan2(2.0, 1.0))


# -- calibration and candidate selection -------------------------------------


def test_calibrated_threshold_hits_target_recall(kde):
    events = [generate_event(GeneratorConfig(n_particles=60, noise_fraction=0.0,
                                             seed=s)) for s in (100, 101)]
    threshold, recall = calibrate_threshold(kde, events, 0.93)
    assert recall >= 0.93
    assert threshold == kde.threshold
    with pytest.raises(ValueError):
        calibrate_threshold(kde, events, 0.0)


def test_select_candidates_requires_frozen_threshold(event):
    events = [generate_event(GeneratorConfig(n_particles=60, noise_fraction=0.0,
                                             seed=s)) for s in (100, 101)]
    fresh = train_kde(events)
    sector = sectorize(event)[0]
    with pytest.raises(ValueError, match="threshold"):
        select_candidates(sector, event, fresh)


def test_select_candidates_r_ordered_and_unique_ids(event, kde):
    sectors = sectorize(event)
    index = event.hit_index
    seen: set[int] = set()
    for sector in sectors[:4]:
        edges = select_candidates(sector, event, kde)
        for e in edges:
            assert index[e.a].r < index[e.b].r
            assert 0.0 <= e.prior <= 1.0
            assert e.prior >= kde.threshold
            assert e.id not in seen
            seen.add(e.id)
            assert e.id // 10_000_000 == sector.index


def test_threshold_zero_keeps_all_ordered_pairs(event, kde):
    free = KdeModel(samples=kde.samples, bandwidths=kde.bandwidths,
                    peak_density=kde.peak_density, threshold=0.0,
                    threshold_recall=1.0)
    sector = sectorize(event)[0]
    edges = select_candidates(sector, event, free, target_recall=1.0)
    hits = sorted((event.hit_index[i] for i in sector.hit_ids),
                  key=lambda h: (h.r, h.id))
    n_pairs = sum(1 for i in range(len(hits)) for j in range(i + 1, len(hits))
                  if hits[i].r < hits[j].r)
    assert len(edges) == n_pairs


def test_pair_visit_counter_is_quadratic(event, kde):
    sector = sectorize(event)[1]
    n = len(sector.hit_ids)
    reset_pair_visits()
    select_candidates(sector, event, kde)
    assert pair_visits() == n * (n - 1) // 2


def test_candidates_csv_round_trip(tmp_path, event, kde):
    sector = sectorize(event)[2]
    edges = select_candidates(sector, event, kde)
    path = str(tmp_path / "cand.csv")
    write_candidates_csv(edges, path)
    assert read_candidates_csv(path) == edges


# -- subgraph ----------------------------------------------------------------


def _chain(ids, start_hit, bias=1.0):
    """Edges start_hit -> start_hit+1 -> ... with the given edge ids."""
    edges = []
    for k, eid in enumerate(ids):
        edges.append(Edge(id=eid, a=start_hit + k, b=start_hit + k + 1,
                          prior=0.5))
    return edges


def test_two_disjoint_chains_give_two_subgraphs():
    edges = _chain([0, 1], 10) + _chain([2, 3, 4], 20)
    bias = {e.id: 1.0 for e in edges}
    graphs = subgraph(edges, bias, max_degree=5)
    assert len(graphs) == 2
    assert graphs[0].edge_ids == (2, 3, 4)  # larger component first
    assert graphs[1].edge_ids == (0, 1)
    assert graphs[0].m == 3


def test_single_chain_is_one_subgraph():
    edges = _chain([5, 6, 7, 8], 1)
    graphs = subgraph(edges, {e.id: 1.0 for e in edges}, max_degree=5)
    assert len(graphs) == 1
    assert graphs[0].m == 4


def test_star_degree_cap_keeps_top_biases():
    # Central hit 0 with 8 outgoing edges; the cap keeps the 5 best biases.
    edges = [Edge(id=k, a=0, b=k + 1, prior=0.5) for k in range(8)]
    bias = {0: 0.3, 1: 0.9, 2: 0.1, 3: 0.7, 4: 0.5, 5: 0.8, 6: 0.2, 7: 0.6}
    expected = set(sorted(bias, key=lambda i: (-bias[i], i))[:5])
    graphs = subgraph(edges, bias, max_degree=5)
    survivors = {eid for g in graphs for eid in g.edge_ids}
    assert survivors == expected == {1, 5, 3, 7, 4}


def test_degree_cap_ties_break_by_edge_id():
    edges = [Edge(id=k, a=0, b=k + 1, prior=0.5) for k in range(4)]
    bias = {k: 1.0 for k in range(4)}
    graphs = subgraph(edges, bias, max_degree=2)
    survivors = {eid for g in graphs for eid in g.edge_ids}
    assert survivors == {0, 1}


def test_edge_survives_only_if_kept_at_both_hits():
    # Hits 1 and 2 both rank their shared edge last; it must not survive
    # even though each endpoint alone would keep its other edges.
    edges = [
        Edge(id=0, a=1, b=2, prior=0.5),   # the shared, low-bias edge
        Edge(id=1, a=1, b=3, prior=0.5),
        Edge(id=2, a=0, b=2, prior=0.5),
    ]
    bias = {0: 0.1, 1: 0.9, 2: 0.9}
    graphs = subgraph(edges, bias, max_degree=1)
    survivors = {eid for g in graphs for eid in g.edge_ids}
    assert survivors == {1, 2}


def test_subgraphs_partition_surviving_edges(event, kde):
    sector = sectorize(event)[0]
    edges = select_candidates(sector, event, kde)
    bias = {e.id: e.prior for e in edges}
    graphs = subgraph(edges, bias, max_degree=5)
    all_ids = [eid for g in graphs for eid in g.edge_ids]
    assert len(all_ids) == len(set(all_ids))
    assert set(all_ids) <= {e.id for e in edges}
    sizes = [g.m for g in graphs]
    assert sizes == sorted(sizes, reverse=True)
    assert [g.index for g in graphs] == list(range(len(graphs)))


def test_subgraph_output_independent_of_input_order(event, kde):
    sector = sectorize(event)[3]
    edges = select_candidates(sector, event, kde)
    bias = {e.id: e.prior for e in edges}
    ref = [g.edge_ids for g in subgraph(edges, bias, max_degree=5)]
    shuffled = list(edges)
    random.Random(7).shuffle(shuffled)
    assert [g.edge_ids for g in subgraph(shuffled, bias, max_degree=5)] == ref


def test_subgraph_rejects_duplicates_and_bad_degree():
    e = Edge(id=1, a=0, b=1, prior=0.5)
    with pytest.raises(ValueError, match="duplicate"):
        subgraph([e, e], {1: 1.0})
    with pytest.raises(ValueError, match="max_degree"):
        subgraph([e], {1: 1.0}, max_degree=0)
