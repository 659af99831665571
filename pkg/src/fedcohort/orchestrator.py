"""End-to-end pipeline: cohort construction, private similarity, selection, training, grids."""
from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, replace
from itertools import pairwise

import numpy as np

from . import data as D
from .config import LENIENT, STRICT, ExperimentConfig, with_defaults
from .errors import ConfigError
from .features import PcaModel, pca_fit, pca_project
from .fl import (
    Algorithm,
    LocalSpec,
    ModelParams,
    RoundResult,
    evaluate,
    federate,
    model_init,
)
from .kernels import nearest_centroid
from .privacy import LdpConfig, mia_power_curve, privatize
from .similarity import (
    ClusterHistogram,
    ClusterModel,
    assign_histogram,
    client_distances,
    kmeans_fit,
)

log = logging.getLogger(__name__)

# spawn-key tags, one per pipeline stage
_DATA, _PUBLIC, _POOL_KMEANS, _PARTITION, _LDP, _SERVER_KMEANS, _INIT, _TRAIN, _ATTACK, _REPEAT, _INCR = range(1, 12)


def derive_seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint32)[0])


def _require_seed(cfg: ExperimentConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("config key 'seed' is required")
    return cfg.seed


# --------------------------------------------------------------------------
# data preparation


@dataclass
class Prepared:
    x: np.ndarray
    y: np.ndarray
    public_index: np.ndarray
    pca: PcaModel
    assignments: np.ndarray
    plan: D.PartitionPlan
    target: D.ClientDataset
    peers: list[D.ClientDataset]
    # K-means on clean projected private pool features (None unless cluster_source=kmeans or fit_on=pool)
    pool_model: ClusterModel | None = None

    @property
    def clients(self) -> list[D.ClientDataset]:
        return [self.target, *self.peers]


def load_pool(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    ds = cfg.dataset
    if ds.source == "synthetic":
        seed = derive_seed(_require_seed(cfg), _DATA)
        return D.generate_synthetic(ds.n_clusters, ds.dim, ds.samples_per_cluster, ds.spread, seed,
                                    ds.n_classes, ds.classes_per_cluster, ds.separation)
    if ds.source == "idx":
        x, y = D.load_mnist(ds.path, ds.labels_path)
    elif ds.source == "cifar":
        x, y = D.load_cifar_binary(ds.path)
    else:
        x, y = D.read_synthetic_csv(ds.path)
    return x, y, None


def prepare(cfg: ExperimentConfig, rates: Sequence[float] | None = None) -> Prepared:
    """Public PCA anchor, pool clustering, and the target + peer cohort."""
    seed = _require_seed(cfg)
    x, y, true_clusters = load_pool(cfg)
    n = len(x)
    if cfg.pca.public_size >= n:
        raise ConfigError(f"pca.public_size={cfg.pca.public_size} leaves no data for clients (pool has {n})")
    rng = np.random.default_rng(derive_seed(seed, _PUBLIC))
    public = np.sort(rng.choice(n, size=cfg.pca.public_size, replace=False))
    n_comp = min(cfg.pca.n_components, x.shape[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pca = pca_fit(x[public], n_comp)

    private = np.setdiff1d(np.arange(n), public)
    assignments = np.full(n, -1, dtype=np.int64)
    model = None
    if cfg.partition.cluster_source == "kmeans" or cfg.clustering.fit_on == "pool":
        projected = pca_project(pca, x[private])
        cl = cfg.clustering
        model = kmeans_fit(projected, cl.k, cl.max_iter, derive_seed(seed, _POOL_KMEANS), cl.tol, cl.n_init)
    if cfg.partition.cluster_source == "generator":
        if true_clusters is None:
            raise ConfigError("partition.cluster_source=generator needs a synthetic dataset")
        assignments[private] = true_clusters[private]
        n_clusters = int(true_clusters.max()) + 1
    else:
        labels, _ = nearest_centroid(projected, model.centroids)
        assignments[private] = labels
        n_clusters = cfg.clustering.k

    part_seed = derive_seed(seed, _PARTITION)
    plan = D.PartitionPlan(
        target_clusters=D.choose_target_clusters(n_clusters, part_seed),
        per_cluster_train=cfg.partition.per_cluster_train,
        dissimilarity_rates=tuple(cfg.partition.rates if rates is None else rates),
        test_size=cfg.partition.test_size,
        seed=part_seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        target, peers = D.build_cohort(x, y, assignments, plan)
    return Prepared(x, y, public, pca, assignments, plan, target, peers, model)


# --------------------------------------------------------------------------
# private similarity and selection


@dataclass
class Selection:
    collaborators: list[int]
    distances: list[tuple[int, float]]
    threshold: float
    fraction: float
    cluster_model: ClusterModel
    histograms: dict[int, ClusterHistogram]


def noisy_representations(
    pca: PcaModel,
    clients: Sequence[D.ClientDataset],
    epsilon: float | None,
    seed: int,
    sensitivity: str = "coordinate",
) -> dict[int, np.ndarray]:
    """Each client projects its own training data and perturbs it with its own noise stream."""
    ldp = LdpConfig(epsilon, derive_seed(seed, _LDP), sensitivity)
    return {c.client_id: privatize(pca_project(pca, c.train_x), ldp, c.client_id) for c in clients}


def server_model(cfg: ExperimentConfig, prep: Prepared, reps: dict[int, np.ndarray]) -> ClusterModel:
    """The K-means model histograms are taken against, per ``clustering.fit_on``."""
    cl = cfg.clustering
    if cl.fit_on == "pool":
        if prep.pool_model is None:
            raise ConfigError("clustering.fit_on=pool needs the pool model from prepare()")
        return prep.pool_model
    seed = derive_seed(_require_seed(cfg), _SERVER_KMEANS)
    if cl.fit_on == "public":
        data = pca_project(prep.pca, prep.x[prep.public_index])
    else:
        data = np.concatenate([reps[c.client_id] for c in prep.clients])
    return kmeans_fit(data, cl.k, cl.max_iter, seed, cl.tol, cl.n_init)


def measure_distances(
    cfg: ExperimentConfig,
    prep: Prepared,
    epsilon: float | None,
) -> tuple[list[tuple[int, float]], ClusterModel, dict[int, ClusterHistogram]]:
    """Server side: histograms of every client's noisy upload, then EMD of each peer to the target."""
    seed = _require_seed(cfg)
    reps = noisy_representations(prep.pca, prep.clients, epsilon, seed, cfg.ldp.sensitivity)
    model = server_model(cfg, prep, reps)
    hists = {cid: assign_histogram(model, f) for cid, f in reps.items()}
    target = prep.target.client_id
    dists = client_distances(hists[target], [(p.client_id, hists[p.client_id]) for p in prep.peers], model)
    return dists, model, hists


def threshold_select(distances: Sequence[tuple[int, float]], fraction: float) -> tuple[list[int], float]:
    """Peers with ``d <= fraction * max(d)``; the boundary is inclusive."""
    if not distances:
        return [], 0.0
    tau = fraction * max(d for _, d in distances)
    return [cid for cid, d in distances if d <= tau], tau


def select_peers(cfg: ExperimentConfig, prep: Prepared | None = None) -> Selection:
    _require_seed(cfg)
    prep = prep or prepare(cfg)
    if not prep.peers:
        raise ConfigError("selection needs at least one peer client")
    dists, model, hists = measure_distances(cfg, prep, cfg.ldp.epsilon)
    chosen, tau = threshold_select(dists, cfg.policy.fraction)
    if not chosen:
        warnings.warn("no peer passed the threshold; the target will train alone", stacklevel=2)
    return Selection(chosen, dists, tau, cfg.policy.fraction, model, hists)


# --------------------------------------------------------------------------
# training


def local_spec(cfg: ExperimentConfig, salt: int = 0) -> LocalSpec:
    return LocalSpec(cfg.fl.learning_rate, cfg.fl.batch_size, cfg.fl.epochs,
                     derive_seed(_require_seed(cfg), _TRAIN, salt))


def algorithm_of(cfg: ExperimentConfig, name: str | None = None) -> Algorithm:
    return Algorithm(name or cfg.fl.algorithm, cfg.fl.mu, cfg.fl.lam, cfg.fl.k)


def fl_view(cfg: ExperimentConfig, prep: Prepared, client: D.ClientDataset) -> D.ClientDataset:
    """The client as the model sees it: raw features or PCA scores."""
    if cfg.fl.features == "raw":
        return client
    test_x = pca_project(prep.pca, client.test_x) if len(client.test_y) else np.zeros((0, prep.pca.n_components))
    return replace(client, train_x=pca_project(prep.pca, client.train_x), test_x=test_x)


def initial_model(cfg: ExperimentConfig, in_dim: int, n_classes: int, algorithm: Algorithm | None = None):
    seed = derive_seed(_require_seed(cfg), _INIT)
    widths = [in_dim, cfg.fl.hidden, n_classes]
    algorithm = algorithm or algorithm_of(cfg)
    if algorithm.name == "ifca":
        return [model_init(widths, derive_seed(seed, j)) for j in range(algorithm.k)]
    return model_init(widths, seed)


def _n_classes(prep_or_clients) -> int:
    ys = [c.train_y for c in prep_or_clients] + [c.test_y for c in prep_or_clients]
    return int(max(int(v.max()) for v in ys if len(v))) + 1


def run_federation(
    cfg: ExperimentConfig,
    participants: Sequence[D.ClientDataset],
    target: D.ClientDataset,
    init: ModelParams | list[ModelParams] | None = None,
    algorithm: Algorithm | None = None,
    n_classes: int | None = None,
    salt: int = 0,
) -> list[RoundResult]:
    """``cfg.fl.rounds`` rounds among ``participants``; round 0 is the initial model."""
    algorithm = algorithm or algorithm_of(cfg)
    if init is None:
        n_classes = n_classes or max(_n_classes(participants), cfg.dataset.n_classes)
        init = initial_model(cfg, target.train_x.shape[1], n_classes, algorithm)
    return federate(init, list(participants), target, algorithm, local_spec(cfg, salt), cfg.fl.rounds)


@dataclass
class IncrementalResult:
    params: ModelParams
    stop_round: int
    accuracies: list[float]
    best_accuracy: float
    stopped_early: bool


def incremental_train(
    cfg: ExperimentConfig,
    target: D.ClientDataset,
    ordered_peers: Sequence[tuple[D.ClientDataset, float]],
    init: ModelParams | None = None,
    algorithm: Algorithm | None = None,
    n_classes: int | None = None,
) -> IncrementalResult:
    """Warm-started two-party federations with peers in ascending distance.

    Stops at the first peer that lowers target test accuracy and returns the
    model from the last iteration that did not.
    """
    algorithm = algorithm or algorithm_of(cfg)
    if algorithm.name == "ifca":
        raise ConfigError("incremental training supports fedavg, fedprox and feddyn")
    dists = [d for _, d in ordered_peers]
    if any(b < a for a, b in pairwise(dists)):
        raise ValueError("peers must be sorted by ascending distance")
    clients = [target] + [p for p, _ in ordered_peers]
    n_classes = n_classes or max(_n_classes(clients), cfg.dataset.n_classes)
    model = init or initial_model(cfg, target.train_x.shape[1], n_classes, algorithm)
    if not ordered_peers:
        res = run_federation(cfg, [target], target, model, algorithm, salt=0)
        return IncrementalResult(res[-1].global_params, 0, [res[-1].target_test_accuracy],
                                 res[-1].target_test_accuracy, False)
    best, accs, stop, early = 0.0, [], 0, False
    for i, (peer, _) in enumerate(ordered_peers, start=1):
        res = run_federation(cfg, [target, peer], target, model, algorithm, salt=_INCR * 1000 + i)
        acc = res[-1].target_test_accuracy
        accs.append(acc)
        if acc < best:
            early = True
            break
        best, model, stop = acc, res[-1].global_params, i
    return IncrementalResult(model, stop, accs, best, early)


# --------------------------------------------------------------------------
# experiment grids

# desk-scale analogues; keys the user sets explicitly always win
PRESETS: dict[str, dict] = {
    "fig3": {
        "partition.per_cluster_train": 400,
        "partition.rates": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "grid.epsilons": [0.1, 1.0, 10.0, "inf"],
        "grid.repeats": 1,
    },
    "fig5": {
        "partition.per_cluster_train": 400,
        "partition.rates": [],
        "attack.epsilons": [0.1, 1.0, 10.0, 100.0, 1000.0],
        "attack.rounds": 50,
        "attack.n": 200,
        "attack.alpha": 0.05,
    },
    "tableII": {
        "partition.per_cluster_train": 100,
        "partition.test_size": 600,
        "fl.learning_rate": 0.05,
        "fl.batch_size": 16,
        "fl.rounds": 20,
        "grid.repeats": 3,
        "grid.algorithms": ["fedavg", "fedprox", "feddyn"],
    },
    "tableIII": {
        "partition.per_cluster_train": 100,
        "partition.test_size": 600,
        "partition.rates": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "fl.learning_rate": 0.05,
        "fl.batch_size": 16,
        "fl.rounds": 20,
        "ldp.epsilon": 10.0,
        "grid.repeats": 3,
        "grid.algorithms": ["fedavg", "fedprox", "feddyn"],
    },
}

GRID_KINDS = ("fig3", "fig5", "tableII", "tableIII")


def repeat_config(cfg: ExperimentConfig, i: int) -> ExperimentConfig:
    return replace(cfg, seed=derive_seed(_require_seed(cfg), _REPEAT, i))


def emd_curve(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for rep in range(cfg.grid.repeats):
        rc = repeat_config(cfg, rep)
        prep = prepare(rc)
        rate_of = {p.client_id: p.rate for p in prep.peers}
        for eps in cfg.grid.epsilons:
            dists, _, _ = measure_distances(rc, prep, eps)
            for cid, d in dists:
                rows.append({"repeat": rep, "epsilon": "inf" if eps is None else eps,
                             "client_id": cid, "r": rate_of[cid], "emd": d})
    return rows


def attack_grid(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for rep in range(cfg.grid.repeats):
        rc = repeat_config(cfg, rep)
        prep = prepare(rc, rates=())
        X = pca_project(prep.pca, prep.target.train_x)
        for rpt in mia_power_curve(X, cfg.attack.n, cfg.attack.alpha, list(cfg.attack.epsilons),
                                   cfg.attack.rounds, derive_seed(rc.seed, _ATTACK), cfg.ldp.sensitivity,
                                   cfg.attack.noise):
            rows.append({"repeat": rep, **rpt.row()})
    return rows


TABLE_II_CELLS = (
    ("local", 0, 0),
    ("similar4", 4, 0),
    ("dissimilar4", 0, 4),
    ("similar4_dissimilar5", 4, 5),
    ("similar4_dissimilar15", 4, 15),
)


def composition_grid(cfg: ExperimentConfig) -> list[dict]:
    """Target with fixed numbers of r=0 and r=1 peers."""
    rows = []
    n_sim = max(c[1] for c in TABLE_II_CELLS)
    n_dis = max(c[2] for c in TABLE_II_CELLS)
    for rep in range(cfg.grid.repeats):
        rc = repeat_config(cfg, rep)
        prep = prepare(rc, rates=[0.0] * n_sim + [1.0] * n_dis)
        target = fl_view(rc, prep, prep.target)
        peers = [fl_view(rc, prep, p) for p in prep.peers]
        sim, dis = peers[:n_sim], peers[n_sim:]
        n_classes = max(_n_classes(prep.clients), rc.dataset.n_classes)
        for algo in cfg.grid.algorithms:
            algorithm = algorithm_of(rc, algo)
            init = initial_model(rc, target.train_x.shape[1], n_classes, algorithm)
            for name, a, b in TABLE_II_CELLS:
                members = [target, *sim[:a], *dis[:b]]
                res = run_federation(rc, members, target, init, algorithm)
                rows.append({"repeat": rep, "experiment": name, "algorithm": algo,
                             "n_clients": len(members), "target_accuracy": res[-1].target_test_accuracy})
    return rows


def cohort_grid(cfg: ExperimentConfig) -> list[dict]:
    """Cumulative cohorts by dissimilarity, threshold selections, and incremental training."""
    rows = []
    for rep in range(cfg.grid.repeats):
        rc = repeat_config(cfg, rep)
        prep = prepare(rc)
        order = sorted(prep.peers, key=lambda p: (p.rate, p.client_id))
        dists, _, _ = measure_distances(rc, prep, rc.ldp.epsilon)
        dist_of = dict(dists)
        views = {c.client_id: fl_view(rc, prep, c) for c in prep.clients}
        target = views[prep.target.client_id]
        n_classes = max(_n_classes(prep.clients), rc.dataset.n_classes)
        cohorts = [(f"r<={p.rate:g}", [views[q.client_id] for q in order[:i + 1]], p.rate)
                   for i, p in enumerate(order)]
        for label, fraction in (("strict", STRICT), ("lenient", LENIENT)):
            chosen, _ = threshold_select(dists, fraction)
            members = [views[cid] for cid in chosen]
            max_r = max((views[c].rate for c in chosen), default=0.0)
            cohorts.append((label, members, max_r))
        for algo in cfg.grid.algorithms:
            algorithm = algorithm_of(rc, algo)
            init = initial_model(rc, target.train_x.shape[1], n_classes, algorithm)
            for label, members, max_r in cohorts:
                res = run_federation(rc, [target, *members], target, init, algorithm)
                rows.append({"repeat": rep, "setting": label, "algorithm": algo, "n_clients": 1 + len(members),
                             "max_r": max_r, "target_accuracy": res[-1].target_test_accuracy, "stop_round": ""})
            if algo != "ifca":
                ranked = sorted(prep.peers, key=lambda p: (dist_of[p.client_id], p.client_id))
                inc = incremental_train(rc, target, [(views[p.client_id], dist_of[p.client_id]) for p in ranked],
                                        init, algorithm, n_classes)
                rows.append({"repeat": rep, "setting": "incremental", "algorithm": algo,
                             "n_clients": 1 + inc.stop_round,
                             "max_r": max((views[p.client_id].rate for p in ranked[:inc.stop_round]), default=0.0),
                             "target_accuracy": evaluate(inc.params, target.test_x, target.test_y),
                             "stop_round": inc.stop_round})
    return rows


def experiment_grid(cfg: ExperimentConfig, kind: str) -> list[dict]:
    if kind not in GRID_KINDS:
        raise ConfigError(f"unknown grid {kind!r}; expected one of {', '.join(GRID_KINDS)}")
    cfg = with_defaults(cfg, PRESETS[kind])
    if kind == "fig3":
        return emd_curve(cfg)
    if kind == "fig5":
        return attack_grid(cfg)
    if kind == "tableII":
        return composition_grid(cfg)
    return cohort_grid(cfg)
