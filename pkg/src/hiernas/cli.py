"""Command-line entry point: cluster | confusion | search | train | export-dot.

Every run writes its fully resolved configuration and all outputs into one run
directory (``<out-root>/<command>-<timestamp>-seed<seed>`` unless ``--run-dir``
is given). Settings resolve as: command defaults, then preset, then the
``--config`` JSON file, then explicit flags.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from typing import Dict, List, Optional

import numpy as np

from . import kernels
from .clustering import (
    ClusterAssignment,
    CorrelationMatrix,
    cluster,
    correlation_pipeline,
    reference_groups,
    reference_matrix,
    select_representatives,
)
from .confusion import NetConfig, confusion_table, match_depth, profile
from .data import Dataset, load_dataset, texture_splits
from .genotype import Genotype, GenotypeError, count_skip, to_dot
from .operators import space as get_space
from .search import PRESETS, SearchConfig, preset, run_search, train_final
from .training import NumericError, TrainConfig, evaluate

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


DATA_DEFAULTS = {"data": None, "test_data": None, "n_train": 1024, "n_test": 512, "hw": 16, "noise": 0.1, "data_seed": 0}


# -- config plumbing ------------------------------------------------------------


def resolve(defaults: dict, args: argparse.Namespace, keys) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
        if not isinstance(from_file, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        unknown = sorted(set(from_file) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys in {args.config}: {', '.join(unknown)}")
        cfg.update(from_file)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def make_run_dir(args, command: str, seed: int) -> str:
    if args.run_dir:
        path = args.run_dir
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = os.path.join(args.out_root, f"{command}-{stamp}-seed{seed}")
    os.makedirs(path, exist_ok=True)
    return path


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def say(msg: str) -> None:
    print(msg, flush=True)


def search_config(cfg: dict) -> SearchConfig:
    fields = SearchConfig.__dataclass_fields__
    return SearchConfig(**{k: v for k, v in cfg.items() if k in fields})


def load_data(cfg: dict):
    """Train/test datasets from HT1 prefixes, or the synthetic texture task."""
    if cfg["data"]:
        train = load_dataset(cfg["data"], "train")
        if cfg["test_data"]:
            test = load_dataset(cfg["test_data"], "test", train.n_classes)
        else:
            cut = int(0.8 * len(train))
            test = Dataset(train.images[cut:], train.labels[cut:], "test", train.n_classes)
            train = Dataset(train.images[:cut], train.labels[:cut], "train", train.n_classes)
        return train, test
    return texture_splits(cfg["n_train"], cfg["n_test"], cfg["hw"], cfg["noise"], cfg["data_seed"])


# -- commands -------------------------------------------------------------------


def cmd_cluster(args) -> int:
    defaults = {"space": "S1", "matrix": None, "live": False, "tau": 0.2, "epochs": 5, "cells": 3, "channels": 8,
                "n_nodes": 2, "n_capture": 512, "seed": 0, **DATA_DEFAULTS}
    cfg = resolve(defaults, args, list(defaults))
    sp = get_space(cfg["space"])
    if cfg["matrix"]:
        if not os.path.exists(cfg["matrix"]):
            raise UsageError(f"matrix file not found: {cfg['matrix']}")
        corr, source = CorrelationMatrix.load(cfg["matrix"]), "matrix"
    elif cfg["live"] or cfg["data"]:
        corr, source = None, "live"
    else:
        corr, source = reference_matrix(sp.id), "fixture"
    if source == "live":
        train, _ = load_data(cfg)
    run_dir = make_run_dir(args, "cluster", cfg["seed"])
    write_json(os.path.join(run_dir, "config.json"), {**cfg, "source": source})
    if source == "live":
        tcfg = TrainConfig(epochs=cfg["epochs"], seed=cfg["seed"])
        dump_dir = os.path.join(run_dir, "feature_maps")
        os.makedirs(dump_dir, exist_ok=True)
        corr = correlation_pipeline(sp, train, tcfg, cfg["cells"], cfg["channels"], cfg["n_nodes"],
                                    cfg["n_capture"], out_dir=dump_dir, log=say)
    assignment = select_representatives(cluster(corr, cfg["tau"], sp), sp)
    with open(os.path.join(run_dir, "correlation.csv"), "w") as fh:
        fh.write(corr.to_csv())
    out = {
        "space": sp.id,
        **assignment.to_dict(),
        "matrix": {"labels": [str(l) for l in corr.labels], "values": np.round(corr.values, 6).tolist()},
    }
    write_json(os.path.join(run_dir, "cluster.json"), out)
    say(json.dumps({"space": sp.id, **assignment.to_dict()}))
    say(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_confusion(args) -> int:
    defaults = {"kind": "toy", "candidates": [4, 8, 12], "target": 12, "target_kind": "toy-skip", "target_genotype": None,
                "channels": 8, "space": "S1", "n_nodes": 2, "epochs": 2, "n_iters": 10, "m": 8, "batch_size": 16,
                "seed": 0, **DATA_DEFAULTS}
    cfg = resolve(defaults, args, list(defaults))
    cands = cfg["candidates"]
    if isinstance(cands, str):
        cands = [int(c) for c in cands.split(",") if c.strip()]
    cands = [c if isinstance(c, dict) else {"cells": int(c), "channels": cfg["channels"]} for c in cands]
    if not cands:
        raise UsageError("need at least one candidate configuration")
    cfg["candidates"] = cands
    target = cfg["target"] if isinstance(cfg["target"], dict) else {"cells": int(cfg["target"]), "channels": cfg["channels"]}
    cfg["target"] = target
    genotype = Genotype.load(cfg["target_genotype"]) if cfg["target_genotype"] else None
    train, _ = load_data(cfg)
    run_dir = make_run_dir(args, "confusion", cfg["seed"])
    write_json(os.path.join(run_dir, "config.json"), cfg)

    def run(spec, kind, tag, geno=None):
        nc = NetConfig(kind, int(spec["cells"]), int(spec.get("channels", cfg["channels"])), cfg["n_nodes"], cfg["space"],
                       geno, tag)
        rep = profile(nc, train, cfg["epochs"], cfg["n_iters"], cfg["m"], cfg["batch_size"], seed=cfg["seed"])
        say(f"{tag} cells={nc.n_cells} channels={nc.channels}: confusion {rep.normalized:.6g} (M={rep.param_count})")
        return rep

    reports = [run(c, cfg["kind"], "candidate") for c in cands]
    target_rep = run(target, "genotype" if genotype else cfg["target_kind"], "target", genotype)
    depth = match_depth(reports, target_rep)
    rows = confusion_table(reports, target_rep)
    with open(os.path.join(run_dir, "confusion.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tag", "n_cells", "channels", "params", "zeta_mean", "confusion"])
        for r in rows:
            w.writerow([r["tag"], r["n_cells"], r["channels"], r["params"], f"{r['zeta_mean']:.8g}", f"{r['confusion']:.8g}"])
        w.writerow(["matched_depth", depth, "", "", "", ""])
    write_json(os.path.join(run_dir, "confusion.json"),
               {"candidates": [r.to_dict() for r in reports], "target": target_rep.to_dict(), "matched_depth": depth})
    say(f"matched depth: {depth}")
    say(f"run directory: {run_dir}")
    return EXIT_OK


def _search_defaults(args) -> dict:
    base = preset(args.preset or "desk").to_dict()
    return {"space": "S1", "groups": None, "matrix": None, "preset": args.preset or "desk", **base, **DATA_DEFAULTS}


def cmd_search(args) -> int:
    defaults = _search_defaults(args)
    cfg = resolve(defaults, args, list(defaults))
    if args.epochs is not None:
        cfg["stage1_epochs"] = cfg["stage2_epochs"] = args.epochs
    sp = get_space(cfg["space"])
    scfg = search_config(cfg)
    if cfg["groups"]:
        if not os.path.exists(cfg["groups"]):
            raise UsageError(f"groups file not found: {cfg['groups']}")
        assignment = ClusterAssignment.load(cfg["groups"])
        if not assignment.representatives:
            assignment = select_representatives(assignment, sp)
    elif cfg["matrix"]:
        if not os.path.exists(cfg["matrix"]):
            raise UsageError(f"matrix file not found: {cfg['matrix']}")
        assignment = select_representatives(cluster(CorrelationMatrix.load(cfg["matrix"]), scfg.tau, sp), sp)
    else:
        assignment = reference_groups(sp.id)
    train, _ = load_data(cfg)
    run_dir = make_run_dir(args, "search", scfg.seed)
    write_json(os.path.join(run_dir, "config.json"), cfg)
    write_json(os.path.join(run_dir, "groups.json"), {"space": sp.id, **assignment.to_dict()})
    r1, r2, geno = run_search(sp, assignment, scfg, train, out_dir=run_dir, log=say)
    for r in (r1, r2):
        write_json(os.path.join(run_dir, f"stage{r.stage}.json"), {
            **r.summary(),
            "log": list(r.log),
            "candidates": {t: [[k.value for k in row] for row in rows] for t, rows in r.candidates.items()},
            "alpha": {t: [np.round(a, 8).tolist() for a in r.alpha(t)] for t in r.candidates},
        })
    geno.save(os.path.join(run_dir, "genotype.json"))
    for t in ("normal", "reduce"):
        with open(os.path.join(run_dir, f"{t}.dot"), "w") as fh:
            fh.write(to_dot(geno, t))
    say(f"genotype normal: {[[(s, o.value) for s, o in n] for n in geno.normal]}")
    say(f"genotype reduce: {[[(s, o.value) for s, o in n] for n in geno.reduce]}")
    say(f"skip connections in normal cell: {count_skip(geno, 'normal')}")
    say(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    defaults = {"genotype": None, "preset": args.preset or "desk", **preset(args.preset or "desk").to_dict(), **DATA_DEFAULTS}
    cfg = resolve(defaults, args, list(defaults))
    if args.epochs is not None:
        cfg["final_epochs"] = args.epochs
    if not cfg["genotype"]:
        raise UsageError("train needs --genotype PATH")
    if not os.path.exists(cfg["genotype"]):
        raise UsageError(f"genotype file not found: {cfg['genotype']}")
    geno = Genotype.load(cfg["genotype"])
    scfg = search_config(cfg)
    train, test = load_data(cfg)
    run_dir = make_run_dir(args, "train", scfg.seed)
    write_json(os.path.join(run_dir, "config.json"), cfg)
    rows = []

    def on_epoch(epoch, row):
        say(f"epoch {epoch}: loss {row['loss']:.4f} lr {row['lr']:.4g}")
        rows.append(row)

    net, test_acc, _ = train_final(geno, train, scfg, test, on_epoch)
    train_acc = evaluate(net, train)
    with open(os.path.join(run_dir, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "loss"])
        for r in rows:
            w.writerow([r["epoch"], f"{r['lr']:.6g}", f"{r['loss']:.6f}"])
        w.writerow([])
        w.writerow(["train_acc", f"{train_acc:.6f}"])
        w.writerow(["test_acc", f"{test_acc:.6f}"])
    say(f"train accuracy: {train_acc:.4f}")
    say(f"test accuracy: {test_acc:.4f}")
    say(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_export_dot(args) -> int:
    defaults = {"genotype": None, "cell": "both", "seed": 0}
    cfg = resolve(defaults, args, list(defaults))
    if not cfg["genotype"]:
        raise UsageError("export-dot needs --genotype PATH")
    if not os.path.exists(cfg["genotype"]):
        raise UsageError(f"genotype file not found: {cfg['genotype']}")
    geno = Genotype.load(cfg["genotype"])
    types = ("normal", "reduce") if cfg["cell"] == "both" else (cfg["cell"],)
    run_dir = make_run_dir(args, "export-dot", cfg["seed"])
    write_json(os.path.join(run_dir, "config.json"), cfg)
    for t in types:
        text = to_dot(geno, t)
        with open(os.path.join(run_dir, f"{t}.dot"), "w") as fh:
            fh.write(text)
        sys.stdout.write(text)
    say(f"run directory: {run_dir}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of settings; explicit flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-root", default="runs", help="parent of the per-run directory (default: runs)")
    p.add_argument("--run-dir", help="exact output directory (overrides --out-root naming)")


def _data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="HT1 dataset prefix (<prefix>images.ht1, <prefix>labels.ht1)")
    p.add_argument("--test-data", help="HT1 prefix of a separate test split")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--hw", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--data-seed", type=int)


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--epochs", type=int, help="epochs per stage (search) or of final training (train)")
    p.add_argument("--channels", type=int)
    p.add_argument("--n-nodes", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--final-cells", type=int)
    p.add_argument("--final-channels", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiernas", description=__doc__.splitlines()[0])
    parser.add_argument("--kernels", choices=kernels.available(), help="kernel backend (default from HIERNAS_KERNELS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="group operators by feature-map correlation")
    _common(p)
    _data(p)
    p.add_argument("--space")
    p.add_argument("--matrix", help="correlation CSV; skips training")
    p.add_argument("--live", action="store_const", const=True, help="train a supernet and measure correlations")
    p.add_argument("--tau", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--cells", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--n-capture", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS), help="accepted for symmetry; cluster uses its own defaults")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("confusion", help="profile gradient confusion and match depth")
    _common(p)
    _data(p)
    p.add_argument("--kind", choices=["toy", "toy-skip", "supernet"])
    p.add_argument("--candidates", help="comma-separated cell counts, e.g. 4,8,12")
    p.add_argument("--target", type=int, help="cell count of the target network")
    p.add_argument("--target-kind", choices=["toy", "toy-skip", "supernet"])
    p.add_argument("--target-genotype", help="profile this genotype as the target")
    p.add_argument("--channels", type=int)
    p.add_argument("--space")
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-iters", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser("search", help="run the two-stage search and derive a genotype")
    _common(p)
    _data(p)
    _search_flags(p)
    p.add_argument("--space")
    p.add_argument("--groups", help="cluster JSON with groups (and optionally representatives); skips clustering")
    p.add_argument("--matrix", help="correlation CSV to cluster before searching")
    p.add_argument("--stage1-cells", type=int)
    p.add_argument("--stage2-cells", type=int)
    p.add_argument("--warm-start", action="store_const", const=True, help="stage 2 reuses stage-1 weights")
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="train a genotype and report accuracy")
    _common(p)
    _data(p)
    _search_flags(p)
    p.add_argument("--genotype", help="genotype JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export-dot", help="write Graphviz DOT for a genotype's cells")
    _common(p)
    p.add_argument("--genotype", help="genotype JSON")
    p.add_argument("--cell", choices=["normal", "reduce", "both"])
    p.set_defaults(func=cmd_export_dot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.kernels:
        kernels.use(args.kernels)
    try:
        return args.func(args)
    except GenotypeError as exc:
        print(f"error: malformed genotype at {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
