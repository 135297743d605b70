"""Command-line entry point.

Subcommands mirror the pipeline stages: ``ingest`` normalizes a raw CSV,
``train-embeddings`` fits (or grid-searches) a factor model snapshot,
``tune`` grid-searches the exploration parameter, ``run`` executes one
experiment cell, ``matrix`` sweeps embeddings x states x policies,
``stats`` runs the Friedman/Nemenyi analysis over a ledger, and ``plot``
renders cumulative-NDCG charts.  All but ``plot`` take ``--config``.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import evaluation, results
from .config import Config, build_experiment, load_grid, load_plan, load_schema
from .embeddings import ALS, BPR, grid_search_embeddings, save_space, train_als, train_bpr
from .errors import ConfigError, SchemaError
from .evaluation import run_experiment, tune_bandit
from .ingest import clean, load_csv, load_log, save_log, split
from .plots import emit_plot

_logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statebench")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="dotted-key config file")
    common.add_argument("--out", help="override out.dir")
    common.add_argument("--seed-override", type=int, default=None,
                        help="replace both mf.seed and bandit.seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel processes (matrix)")
    common.add_argument("--quiet", action="store_true")

    for name, help_ in [
        ("ingest", "load, clean, and persist a dataset"),
        ("train-embeddings", "train or grid-search a factor model snapshot"),
        ("tune", "grid-search bandit hyperparameters on the warm half"),
        ("run", "run one experiment cell"),
        ("matrix", "run the embeddings x states x policies sweep"),
        ("stats", "Friedman/Nemenyi analysis over a ledger or fixture"),
    ]:
        sub.add_parser(name, parents=[common], help=help_)

    plot = sub.add_parser("plot", help="render cumulative-NDCG SVG from windows.csv files")
    plot.add_argument("--out", required=True, help="output SVG path")
    plot.add_argument("files", nargs="+", help="windows.csv inputs (one dataset)")
    plot.add_argument("--quiet", action="store_true")
    return parser


def _load_dataset(cfg: Config):
    path = cfg.require("data.path")
    if not Path(path).exists():
        raise ConfigError(f"data.path does not exist: {path}")
    if path.endswith(".ilog"):
        log = load_log(path)
    else:
        log = load_csv(path, load_schema(cfg))
    return clean(log)


def _out_dir(cfg: Config, args) -> Path:
    out = args.out or cfg.get("out.dir", "out")
    return Path(out)


def cmd_ingest(cfg: Config, args) -> int:
    log = _load_dataset(cfg)
    dataset = cfg.get("data.name", Path(cfg.require("data.path")).stem)
    out = _out_dir(cfg, args) / dataset
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{dataset}.ilog"
    save_log(log, target)
    print(f"{dataset}: {len(log)} events, {log.n_users} users, {log.n_items} items -> {target}")
    return 0


def _train_snapshot(cfg: Config, args, model: str):
    log = _load_dataset(cfg)
    parts = split(log, load_plan(cfg))
    seed = args.seed_override if args.seed_override is not None else cfg.get_int("mf.seed", 0)
    conf_weight = cfg.get_float("als.conf_weight", 40.0)
    k = cfg.get_int("eval.k", 20)
    if cfg.get_bool("mf.grid", False):
        grid = load_grid(cfg, model)
        space, report = grid_search_embeddings(
            model, grid, parts.warm_train, parts.warm_valid,
            conf_weight=conf_weight, seed=seed, k=k)
    else:
        full = evaluation._concat(parts.warm_train, parts.warm_valid)
        if model == ALS:
            space = train_als(full, cfg.get_int("mf.d", 16), cfg.get_float("mf.reg", 0.01),
                              cfg.get_int("mf.epochs", 15), conf_weight, seed)
        else:
            space = train_bpr(full, cfg.get_int("mf.d", 16), cfg.get_float("mf.lr", 0.01),
                              cfg.get_float("mf.reg", 0.01), cfg.get_int("mf.epochs", 100), seed)
        report = [{**space.params, "model": model, "valid_ndcg": float("nan")}]
    return space, report


def cmd_train_embeddings(cfg: Config, args) -> int:
    model = cfg.get("mf.model", ALS)
    if model not in (ALS, BPR):
        raise ConfigError(f"mf.model must be als or bpr, got {model!r}")
    dataset = cfg.get("data.name", Path(cfg.require("data.path")).stem)
    out = _out_dir(cfg, args) / dataset
    out.mkdir(parents=True, exist_ok=True)
    space, report = _train_snapshot(cfg, args, model)
    snap = out / f"{model}.emb"
    save_space(space, snap)
    with open(out / f"{model}-grid.txt", "w", encoding="utf-8") as fh:
        fh.write(f"# model = {model}\n# seed = {space.seed}\n")
        for row in report:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"{model} snapshot -> {snap} (winner {space.params})")
    return 0


def cmd_tune(cfg: Config, args) -> int:
    log = _load_dataset(cfg)
    parts = split(log, load_plan(cfg))
    seed = args.seed_override if args.seed_override is not None else cfg.get_int("bandit.seed", 0)
    mf_seed = args.seed_override if args.seed_override is not None else cfg.get_int("mf.seed", 0)
    model = cfg.get("mf.model", ALS)
    conf_weight = cfg.get_float("als.conf_weight", 40.0)
    # tuning must not see warm_valid through the embeddings: train on warm_train only
    if model == ALS:
        space = train_als(parts.warm_train, cfg.get_int("mf.d", 16),
                          cfg.get_float("mf.reg", 0.01), cfg.get_int("mf.epochs", 15),
                          conf_weight, mf_seed)
    else:
        space = train_bpr(parts.warm_train, cfg.get_int("mf.d", 16),
                          cfg.get_float("mf.lr", 0.01), cfg.get_float("mf.reg", 0.01),
                          cfg.get_int("mf.epochs", 100), mf_seed)
    kind = cfg.get("bandit.policy", "linucb")
    state_kind = cfg.get("state.kind", "user")
    grids = {
        "linucb": cfg.get_floats("tune.alphas", "0.1,0.5,1.0"),
        "lingreedy": cfg.get_floats("tune.epsilons", "0.05,0.1,0.2"),
        "lints": cfg.get_floats("tune.vs", "0.1,0.5,1.0"),
    }
    hs = cfg.get_ints("tune.hs", "3,5,10")
    policy, spec, report = tune_bandit(
        space, parts.warm_train, parts.warm_valid, state_kind, kind,
        lambda_ridge=cfg.get_float("bandit.lambda", 1.0), k=cfg.get_int("eval.k", 20),
        exclude_seen=cfg.get_bool("eval.exclude_seen", True), seed=seed,
        param_values=grids[kind], h_values=hs)
    dataset = cfg.get("data.name", Path(cfg.require("data.path")).stem)
    out = _out_dir(cfg, args) / dataset
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"tune-{model}-{state_kind}-{kind}.txt", "w", encoding="utf-8") as fh:
        for row in report:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"best: {kind} {policy.param():g} h={spec.h} "
          f"(validation rows in {out / f'tune-{model}-{state_kind}-{kind}.txt'})")
    return 0


def cmd_run(cfg: Config, args) -> int:
    exp = build_experiment(cfg, out_override=args.out, seed_override=args.seed_override)
    summary = run_experiment(exp)
    print(f"{summary.dataset} {summary.embedding}-{summary.state_kind}-{summary.policy_kind}: "
          f"events={summary.events} ndcg@{exp.k}={summary.final_ndcg:.5f} "
          f"({summary.wall_seconds:.1f}s)")
    return 0


def _matrix_cell(exp_cfg):
    return run_experiment(exp_cfg)


def cmd_matrix(cfg: Config, args) -> int:
    embeddings_list = cfg.get_list("matrix.embeddings", "als,bpr")
    states = cfg.get_list("matrix.states", "user,item_mean,item_concat")
    policies = cfg.get_list("matrix.policies", "linucb,lingreedy,lints")
    out = _out_dir(cfg, args)
    dataset = cfg.get("data.name", Path(cfg.require("data.path")).stem)

    # one snapshot per embedding model, shared across its cells
    snapshots = {}
    for model in embeddings_list:
        if model not in (ALS, BPR):
            raise ConfigError(f"matrix.embeddings: unknown model {model!r}")
        snap_dir = out / dataset
        snap_dir.mkdir(parents=True, exist_ok=True)
        sub_cfg = Config(dict(cfg.values), cfg.source)
        sub_cfg.values["mf.model"] = model
        space, report = _train_snapshot(sub_cfg, args, model)
        snap = snap_dir / f"{model}.emb"
        save_space(space, snap)
        with open(snap_dir / f"{model}-grid.txt", "w", encoding="utf-8") as fh:
            for row in report:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        snapshots[model] = snap
        _logger.info("matrix: %s snapshot ready (%s)", model, space.params)

    cells = []
    for model in embeddings_list:
        for state in states:
            for pol in policies:
                sub = Config(dict(cfg.values), cfg.source)
                sub.values["mf.model"] = model
                sub.values["state.kind"] = state
                sub.values["bandit.policy"] = pol
                sub.values["mf.snapshot"] = str(snapshots[model])
                exp = build_experiment(sub, out_override=str(out),
                                       seed_override=args.seed_override)
                exp.append_ledger = False
                cells.append(exp)

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_matrix_cell, cells))
    else:
        summaries = [_matrix_cell(c) for c in cells]

    ledger = out / "summary.csv"
    for exp, summary in zip(cells, summaries):
        results.append_summary(ledger, summary, exp.stamp())
        print(f"{summary.embedding}-{summary.state_kind}-{summary.policy_kind}: "
              f"ndcg={summary.final_ndcg:.5f}")
    print(f"{len(summaries)} runs -> {ledger}")
    return 0


def paper_fixture_path() -> Path:
    """Checked-in fixture of the published per-cell NDCG@20 results."""
    return Path(str(resources.files("statebench") / "fixtures" / "paper_ndcg.csv"))


def cmd_stats(cfg: Config, args) -> int:
    from .stats import analyze

    source = cfg.get("stats.input", "paper")
    if source == "paper":
        path = paper_fixture_path()
        default_score = "ndcg"
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"stats.input does not exist: {path}")
        default_score = "ndcg_cumulative"
    rows = results.read_rows(path)
    treatment = cfg.get("stats.treatment", "state")
    blocks = cfg.get_list("stats.blocks", "dataset,embedding,policy")
    score_col = cfg.get("stats.score", default_score)
    alpha = cfg.get_float("stats.alpha", 0.05)
    table = results.build_result_table(rows, treatment, blocks, score_col)
    report = analyze(table, alpha)

    out = _out_dir(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"stats-{treatment}.csv"
    stamp = dict(cfg.resolved)
    stamp["stats.input"] = str(path)
    results.write_report_csv(report_path, report, stamp)

    ranks = ", ".join(f"{t}={r:.4f}" for t, r in report.mean_ranks.items())
    print(f"friedman over {report.n_blocks} blocks x {len(report.mean_ranks)} treatments: "
          f"chi2_r={report.chi2_r:.4f} p={report.p_value:.6f}")
    print(f"mean ranks: {ranks}")
    print(f"nemenyi cd(alpha={report.alpha:g}) = {report.cd:.4f}")
    for (a, b), sig in report.significant.items():
        print(f"  {a} vs {b}: {'significant' if sig else 'not significant'}")
    print(f"report -> {report_path}")
    return 0


def cmd_plot(args) -> int:
    emit_plot(args.files, args.out)
    print(f"chart -> {args.out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "plot":
            return cmd_plot(args)
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            print(f"error: config file not found: {cfg_path}", file=sys.stderr)
            return 2
        cfg = Config.from_file(cfg_path)
        handler = {
            "ingest": cmd_ingest,
            "train-embeddings": cmd_train_embeddings,
            "tune": cmd_tune,
            "run": cmd_run,
            "matrix": cmd_matrix,
            "stats": cmd_stats,
        }[args.command]
        return handler(cfg, args)
    except (ConfigError, SchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - defensive top level
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
