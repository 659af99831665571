"""Command-line front end.

Every subcommand recomputes its upstream stages from the config (all of them
are deterministic in ``seed``), writes CSV artifacts into ``--out`` and a
``manifest.json`` describing the run.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import orchestrator as O
from ._accel import backend
from .config import (
    ExperimentConfig,
    build_config,
    config_hash,
    parse_config,
    parse_overrides,
    serialize_config,
)
from .errors import ConfigError, DataError
from .features import pca_project, save_pca
from .fl import save_params
from .privacy import mia_power_curve
from .report import RunManifest, render_report, write_table

log = logging.getLogger("fedcohort")

EXIT_CONFIG, EXIT_DATA = 2, 3


# --------------------------------------------------------------------------
# helpers


def load_config(args) -> ExperimentConfig:
    if args.config:
        return parse_config(args.config, args.set)
    return build_config(parse_overrides(args.set))


def _matrix_rows(ids: list[int], mat: np.ndarray, prefix: str, id_col: str = "client_id") -> list[dict]:
    rows = []
    for cid, vec in zip(ids, mat):
        row = {id_col: cid}
        row.update({f"{prefix}{j}": float(v) for j, v in enumerate(vec)})
        rows.append(row)
    return rows


def _client_rows(prep: O.Prepared) -> list[dict]:
    return [{"client_id": c.client_id, "role": "target" if c.client_id == prep.target.client_id else "peer",
             "rate": c.rate, "n_train": len(c.train_y), "n_test": len(c.test_y)} for c in prep.clients]


def _provenance_rows(prep: O.Prepared) -> list[dict]:
    return [{"client_id": c.client_id, "cluster": cl, "count": n}
            for c in prep.clients for cl, n in c.provenance]


def _prepare(cfg: ExperimentConfig, man: RunManifest, rates=None) -> O.Prepared:
    with man.stage("prepare"):
        prep = O.prepare(cfg, rates)
    for p in (cfg.dataset.path, cfg.dataset.labels_path):
        if p:
            man.add_data_file(p)
    return prep


# --------------------------------------------------------------------------
# subcommands; each returns the artifact paths it wrote


def cmd_partition(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man)
    return [write_table(out / "clients.csv", _client_rows(prep)),
            write_table(out / "provenance.csv", _provenance_rows(prep))]


def cmd_extract(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man)
    paths = save_pca(prep.pca, out / "pca")
    with man.stage("extract"):
        for c in prep.clients:
            feats = pca_project(prep.pca, c.train_x)
            paths.append(write_table(out / "features" / f"client_{c.client_id}.csv",
                                     _matrix_rows(list(range(len(feats))), feats, "pc", "row")))
    return paths


def cmd_noise(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man)
    with man.stage("noise"):
        reps = O.noisy_representations(prep.pca, prep.clients, cfg.ldp.epsilon, O._require_seed(cfg),
                                       cfg.ldp.sensitivity)
    return [write_table(out / "noisy" / f"client_{cid}.csv", _matrix_rows(list(range(len(f))), f, "pc", "row"))
            for cid, f in reps.items()]


def cmd_cluster(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man)
    with man.stage("cluster"):
        _, model, hists = O.measure_distances(cfg, prep, cfg.ldp.epsilon)
    ids = sorted(hists)
    return [
        write_table(out / "centroids.csv", _matrix_rows(list(range(model.k)), model.centroids, "pc", "cluster")),
        write_table(out / "histograms.csv", _matrix_rows(ids, np.array([hists[i].weights for i in ids]), "h")),
        write_table(out / "inertia.csv", [{"iteration": i, "inertia": v} for i, v in enumerate(model.inertia_history)]),
    ]


def cmd_distances(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man)
    with man.stage("distances"):
        dists, _, _ = O.measure_distances(cfg, prep, cfg.ldp.epsilon)
    return [write_table(out / "distances.csv", [{"client_id": c, "emd": d} for c, d in dists])]


def cmd_select(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man)
    with man.stage("select"):
        sel = O.select_peers(cfg, prep)
    chosen = set(sel.collaborators)
    rows = [{"client_id": c, "emd": d, "threshold": sel.threshold, "selected": c in chosen} for c, d in sel.distances]
    return [write_table(out / "selection.csv", rows)]


def _training_rows(results, algorithm: str, n_clients: int) -> list[dict]:
    return [{"round": r.round, "algorithm": algorithm, "n_clients": n_clients,
             "target_accuracy": r.target_test_accuracy} for r in results]


def cmd_train(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man)
    views = {c.client_id: O.fl_view(cfg, prep, c) for c in prep.clients}
    target = views[prep.target.client_id]
    if args.participants == "selected":
        with man.stage("select"):
            sel = O.select_peers(cfg, prep)
        peer_ids = sel.collaborators
    elif args.participants == "all":
        peer_ids = [p.client_id for p in prep.peers]
    else:
        peer_ids = []
    members = [target] + [views[i] for i in peer_ids]
    n_classes = max(O._n_classes(prep.clients), cfg.dataset.n_classes)
    with man.stage("train"):
        results = O.run_federation(cfg, members, target, n_classes=n_classes)
    return [write_table(out / "training.csv", _training_rows(results, cfg.fl.algorithm, len(members))),
            write_table(out / "participants.csv", [{"client_id": c.client_id} for c in members]),
            *save_params(results[-1].global_params, out / "model")]


def cmd_incremental(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man)
    with man.stage("distances"):
        dists, _, _ = O.measure_distances(cfg, prep, cfg.ldp.epsilon)
    dist_of = dict(dists)
    views = {c.client_id: O.fl_view(cfg, prep, c) for c in prep.clients}
    ranked = sorted(prep.peers, key=lambda p: (dist_of[p.client_id], p.client_id))
    n_classes = max(O._n_classes(prep.clients), cfg.dataset.n_classes)
    with man.stage("incremental"):
        res = O.incremental_train(cfg, views[prep.target.client_id],
                                  [(views[p.client_id], dist_of[p.client_id]) for p in ranked],
                                  n_classes=n_classes)
    rows = [{"step": i + 1, "client_id": p.client_id, "emd": dist_of[p.client_id], "target_accuracy": acc,
             "kept": i < res.stop_round} for i, (p, acc) in enumerate(zip(ranked, res.accuracies))]
    if not rows:
        rows = [{"step": 0, "client_id": prep.target.client_id, "emd": 0.0,
                 "target_accuracy": res.best_accuracy, "kept": True}]
    summary = [{"algorithm": cfg.fl.algorithm, "stop_round": res.stop_round, "stopped_early": res.stopped_early,
                "best_accuracy": res.best_accuracy}]
    return [write_table(out / "incremental.csv", rows), write_table(out / "incremental_summary.csv", summary)]


def cmd_attack(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    prep = _prepare(cfg, man, rates=())
    X = pca_project(prep.pca, prep.target.train_x)
    with man.stage("attack"):
        reports = mia_power_curve(X, cfg.attack.n, cfg.attack.alpha, list(cfg.attack.epsilons), cfg.attack.rounds,
                                  O.derive_seed(O._require_seed(cfg), O._ATTACK), cfg.ldp.sensitivity,
                                  cfg.attack.noise)
    paths = [write_table(out / "attack.csv", [r.row() for r in reports])]
    if args.dump_raw:
        raw = []
        for rep in reports:
            for t, rnd in enumerate(rep.raw):
                eps = "inf" if rep.epsilon is None else rep.epsilon
                raw += [{"epsilon": eps, "round": t, "group": "case", "distance": float(d)}
                        for d in rnd.member_distances]
                raw += [{"epsilon": eps, "round": t, "group": "control", "distance": float(d)}
                        for d in rnd.control_distances]
        paths.append(write_table(out / "attack_raw.csv", raw))
    return paths


def cmd_grid(cfg, out: Path, man: RunManifest, args) -> list[Path]:
    O._require_seed(cfg)
    with man.stage(f"grid:{args.repro}"):
        rows = O.experiment_grid(cfg, args.repro)
    if not rows:
        path = out / f"{args.repro}.csv"
        path.write_text("")
        return [path]
    return render_report({args.repro: rows}, out)


COMMANDS = {
    "partition": (cmd_partition, "build the target and peer clients"),
    "extract": (cmd_extract, "fit the public PCA anchor and project every client"),
    "noise": (cmd_noise, "per-client Laplace-perturbed representations"),
    "cluster": (cmd_cluster, "server K-means model and client cluster histograms"),
    "distances": (cmd_distances, "EMD of every peer to the target"),
    "select": (cmd_select, "threshold-policy collaborator selection"),
    "train": (cmd_train, "federated training of the target with its collaborators"),
    "incremental": (cmd_incremental, "add peers by ascending distance until accuracy drops"),
    "attack": (cmd_attack, "distance-based membership inference against noisy features"),
    "grid": (cmd_grid, "desk-scale experiment grids"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcohort", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="YAML config file (defaults apply when omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="override one config key; repeatable, last one wins")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "grid":
            p.add_argument("--repro", required=True, choices=O.GRID_KINDS, help="experiment preset")
        if name == "train":
            p.add_argument("--participants", choices=("selected", "all", "local"), default="selected",
                           help="who trains with the target (default: selected)")
        if name == "attack":
            p.add_argument("--dump-raw", action="store_true", help="also write per-round distances")
    return parser


def run(args) -> int:
    cfg = load_config(args)
    fn, _ = COMMANDS[args.command]
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(args.command, config_hash(cfg),
                      versions={"fedcohort": __version__, "numpy": np.__version__, "backend": backend()})
    (out / "config.yaml").write_text(serialize_config(cfg))
    paths = fn(cfg, out, man, args)
    man.add([out / "config.yaml", *paths])
    man.write(out / "manifest.json")
    log.info("wrote %d artifacts to %s", len(man.artifacts), out)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
