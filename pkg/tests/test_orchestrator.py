from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcohort.config import build_config
from fedcohort.errors import ConfigError
from fedcohort.orchestrator import (
    derive_seed,
    emd_curve,
    experiment_grid,
    fl_view,
    incremental_train,
    measure_distances,
    prepare,
    run_federation,
    select_peers,
    threshold_select,
)

SMALL = {
    "seed": 3,
    "dataset.n_clusters": 6,
    "dataset.dim": 16,
    "dataset.samples_per_cluster": 300,
    "dataset.n_classes": 4,
    "partition.per_cluster_train": 50,
    "partition.test_size": 60,
    "partition.rates": [0.0, 0.5, 1.0],
    "pca.n_components": 8,
    "pca.public_size": 200,
    "clustering.k": 6,
    "clustering.n_init": 3,
    "fl.rounds": 2,
    "fl.learning_rate": 0.05,
    "fl.hidden": 16,
}


def small(**extra):
    return build_config({**SMALL, **{k.replace("__", "."): v for k, v in extra.items()}})


@pytest.fixture(scope="module")
def prep():
    return prepare(small())


# --------------------------------------------------------------------------
# thresholding


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=12),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_threshold_policy_monotone_and_prefix(ds, f1, f2):
    lo, hi = sorted((f1, f2))
    dists = list(enumerate(ds))
    a, _ = threshold_select(dists, lo)
    b, _ = threshold_select(dists, hi)
    assert set(a) <= set(b)
    # the selection is a prefix of the peers ranked by distance
    picked = [d for c, d in dists if c in b]
    rest = [d for c, d in dists if c not in b]
    assert not rest or max(picked, default=-1.0) < min(rest)


def test_threshold_examples():
    dists = [(1, 0.0), (2, 3.0), (3, 10.0)]
    assert threshold_select(dists, 1.0) == ([1, 2, 3], 10.0)
    assert threshold_select(dists, 0.3) == ([1, 2], 3.0)  # boundary is inclusive
    assert threshold_select(dists, 0.29)[0] == [1]
    assert threshold_select([], 0.3) == ([], 0.0)


# --------------------------------------------------------------------------
# preparation and selection


def test_prepare_builds_cohort(prep):
    assert len(prep.peers) == 3
    assert [p.rate for p in prep.peers] == [0.0, 0.5, 1.0]
    assert len(prep.target) == 150 and len(prep.target.test_y) == 60
    assert np.all(prep.assignments[prep.public_index] == -1)
    assert prep.pool_model is not None


def test_missing_seed_and_bad_sizes():
    with pytest.raises(ConfigError, match="seed"):
        prepare(build_config({k: v for k, v in SMALL.items() if k != "seed"}))
    with pytest.raises(ConfigError):
        prepare(small(pca__public_size=6 * 300))
    with pytest.raises(ConfigError):
        experiment_grid(small(), "fig9")


def test_noiseless_selection_keeps_similar_peer(prep):
    sel = select_peers(small(ldp__epsilon="inf"), prep)
    rate = {p.client_id: p.rate for p in prep.peers}
    d = dict(sel.distances)
    by_rate = sorted(d, key=lambda c: rate[c])
    assert d[by_rate[0]] < d[by_rate[1]] < d[by_rate[2]]
    assert by_rate[0] in sel.collaborators
    assert by_rate[2] not in sel.collaborators
    assert sel.threshold == pytest.approx(0.3 * max(d.values()))


def test_selection_deterministic(prep):
    cfg = small()
    a = select_peers(cfg, prep)
    b = select_peers(cfg, prepare(cfg))
    assert a.distances == b.distances and a.collaborators == b.collaborators


def test_fraction_one_selects_everyone(prep):
    sel = select_peers(small(policy__fraction=1.0), prep)
    assert sorted(sel.collaborators) == sorted(p.client_id for p in prep.peers)


@pytest.mark.parametrize("fit_on", ["public", "noisy"])
def test_alternative_server_models(fit_on):
    cfg = small(clustering__fit_on=fit_on, partition__cluster_source="generator")
    p = prepare(cfg)
    assert p.pool_model is None
    dists, model, hists = measure_distances(cfg, p, 10.0)
    assert len(dists) == 3 and model.centroids.shape == (6, 8)
    assert all(abs(h.weights.sum() - 1) < 1e-9 for h in hists.values())


def test_epsilon_changes_distances_but_not_cohort(prep):
    cfg = small()
    a, _, _ = measure_distances(cfg, prep, 0.1)
    b, _, _ = measure_distances(cfg, prep, None)
    assert [c for c, _ in a] == [c for c, _ in b]
    assert a != b


def test_derive_seed_is_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)


# --------------------------------------------------------------------------
# training


def test_zero_rounds_returns_initial_model(prep):
    cfg = small(fl__rounds=0)
    res = run_federation(cfg, [prep.target], prep.target)
    assert len(res) == 1 and res[0].round == 0


def test_federation_deterministic(prep):
    cfg = small()
    members = [prep.target, *prep.peers[:1]]
    a = run_federation(cfg, members, prep.target)
    b = run_federation(cfg, members, prep.target)
    assert np.array_equal(a[-1].global_params.values, b[-1].global_params.values)


def test_incremental_single_peer_and_ordering(prep):
    cfg = small()
    inc = incremental_train(cfg, prep.target, [(prep.peers[0], 0.1)])
    assert inc.stop_round <= 1 and len(inc.accuracies) == 1
    with pytest.raises(ValueError, match="ascending"):
        incremental_train(cfg, prep.target, [(prep.peers[0], 0.5), (prep.peers[1], 0.1)])
    with pytest.raises(ConfigError):
        incremental_train(small(fl__algorithm="ifca"), prep.target, [(prep.peers[0], 0.1)])
    alone = incremental_train(cfg, prep.target, [])
    assert alone.stop_round == 0 and not alone.stopped_early


def test_incremental_stops_at_first_drop(prep):
    cfg = small()
    ordered = [(p, float(i)) for i, p in enumerate(prep.peers)]
    inc = incremental_train(cfg, prep.target, ordered)
    accs = inc.accuracies
    if inc.stopped_early:
        assert inc.stop_round == len(accs) - 1
        assert accs[-1] < inc.best_accuracy
        assert accs[:-1] == sorted(accs[:-1])
    else:
        assert accs == sorted(accs) and inc.stop_round == len(ordered)
    if inc.stop_round:
        assert inc.best_accuracy == accs[inc.stop_round - 1]


def test_pca_feature_view(prep):
    view = fl_view(small(fl__features="pca"), prep, prep.target)
    assert view.train_x.shape == (150, 8) and view.test_x.shape == (60, 8)


# --------------------------------------------------------------------------
# grids


def test_empty_rate_list_gives_empty_curve():
    assert emd_curve(small(partition__rates=[])) == []


def test_emd_curve_rows(prep):
    rows = emd_curve(small(grid__epsilons=[1.0, "inf"]))
    assert len(rows) == 2 * 3
    assert {r["epsilon"] for r in rows} == {1.0, "inf"}
    assert all(r["emd"] >= 0 for r in rows)
