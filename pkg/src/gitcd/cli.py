"""Command-line entry point: ``gitcd {generate,train,evaluate,embed,verify}``.

Exit codes: 0 success, 1 a verify check failed, 2 invalid input or config,
3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__, trainer, verify
from .autodiff import ContractError, NumericError
from .graph import GraphFormatError, HsbmSpec, generate_hsbm, load_graph, save_graph

EXIT_OK, EXIT_CHECK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4

CHECKPOINT = "model.npz"
HISTORY = "history.csv"
METRICS = "metrics.json"
MANIFEST = "manifest.json"

log = logging.getLogger("gitcd")


class UsageError(ValueError):
    pass


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path: str | None, overrides: list[str]) -> trainer.TrainConfig:
    data = trainer.TrainConfig().to_dict()
    if path is not None:
        try:
            given = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(given, dict):
            raise UsageError("config must be a JSON object")
        loss = given.pop("loss", None)
        data.update(given)
        if loss is not None:
            data["loss"].update(loss)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects path=value, got {item!r}")
        trainer.apply_override(data, key, _parse_value(value))
    return trainer.TrainConfig.from_dict(data)


# ----------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    spec = HsbmSpec(
        target_type=args.target_type,
        target_count=args.target_nodes,
        aux_types=tuple(f"aux{i + 1}" for i in range(args.aux_types)),
        aux_counts=tuple([args.aux_nodes] * args.aux_types),
        communities=args.communities,
        p_in=args.p_in,
        p_out=args.p_out,
        feature_dim=args.feature_dim,
        feature_separation=args.feature_separation,
        feature_noise=args.feature_noise,
        aux_feature_dim=args.aux_feature_dim,
        seed=args.seed,
    )
    spec.validate()
    graph = generate_hsbm(spec)
    save_graph(graph, args.out)
    for nt in graph.node_types:
        print(f"nodes {nt.name}: {nt.count}")
    for et in graph.edge_types:
        print(f"edges {et.src}-{et.rel}-{et.dst}: {len(et.edges)}")
    print(f"communities: {graph.num_classes}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set)
    graph = load_graph(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    tic = time.perf_counter()
    state, history, report = trainer.run_repeats(graph, cfg, args.repeats, args.split)
    took = time.perf_counter() - tic
    paths = {
        "checkpoint": str(out / CHECKPOINT),
        "history": str(out / HISTORY),
        "metrics": str(out / METRICS),
        "manifest": str(out / MANIFEST),
    }
    trainer.save_checkpoint(state, paths["checkpoint"])
    _write_atomic(out / HISTORY, trainer.history_csv(history))
    _write_atomic(out / METRICS, _dump(report))
    manifest = {
        "tool": "gitcd",
        "version": __version__,
        "config": cfg.to_dict(),
        "data": str(Path(args.data).resolve()),
        "seeds": [cfg.seed + r for r in range(args.repeats)],
        "split": args.split,
        "started_unix": started,
        "train_seconds": took,
        "epochs_run": len(history),
        "best_epoch": state.epoch,
        "outputs": paths,
    }
    _write_atomic(out / MANIFEST, _dump(manifest))
    print(_dump({k: report[k] for k in trainer.METRIC_KEYS}), end="")
    return EXIT_OK


def _load_pair(args):
    state = trainer.load_checkpoint(args.checkpoint)
    graph = load_graph(args.data)
    trainer.check_compatible(state, graph)
    return state, graph


def cmd_evaluate(args) -> int:
    state, graph = _load_pair(args)
    report = trainer.evaluate(state, graph, args.split)
    text = _dump(report)
    if args.out:
        _write_atomic(Path(args.out), text)
    print(text, end="")
    return EXIT_OK


def cmd_embed(args) -> int:
    state, graph = _load_pair(args)
    z, _ = trainer.embed_all(state, graph)
    comm = trainer.community_predictions(state, z)
    header = ["node_id", "pred_community", "true_label"] + [f"e_{j}" for j in range(z.shape[1])]
    lines = [",".join(header)]
    for i in range(z.shape[0]):
        lines.append(",".join([str(i), str(int(comm[i])), str(int(graph.labels[i]))] + [repr(float(v)) for v in z[i]]))
    _write_atomic(Path(args.out), "\n".join(lines) + "\n")
    print(f"wrote {z.shape[0]} rows x {z.shape[1]} dims to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_checks(args.inject)
    print(verify.report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gitcd", description="Heterogeneous graph community detection.")
    parser.add_argument("--version", action="version", version=f"gitcd {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic heterogeneous SBM graph")
    g.add_argument("--out", required=True)
    g.add_argument("--communities", type=int, default=4)
    g.add_argument("--target-nodes", type=int, default=600)
    g.add_argument("--target-type", default="target")
    g.add_argument("--aux-types", type=int, default=2)
    g.add_argument("--aux-nodes", type=int, default=300)
    g.add_argument("--p-in", type=float, default=0.1)
    g.add_argument("--p-out", type=float, default=0.005)
    g.add_argument("--feature-dim", type=int, default=16)
    g.add_argument("--feature-separation", type=float, default=1.0)
    g.add_argument("--feature-noise", type=float, default=1.0)
    g.add_argument("--aux-feature-dim", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write checkpoint, history and metrics")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON document with TrainConfig fields")
    t.add_argument("--out", required=True)
    t.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a config field")
    t.add_argument("--repeats", type=int, default=1, help="independent runs with seeds seed, seed+1, ...")
    t.add_argument("--split", default="test", choices=["train", "val", "test"])
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("evaluate", cmd_evaluate, "report metrics for a checkpoint"),
        ("embed", cmd_embed, "export embeddings and community predictions"),
    ):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--data", required=True)
        if name == "evaluate":
            e.add_argument("--split", default="test", choices=["train", "val", "test"])
            e.add_argument("--out", help="also write the report to this JSON file")
        else:
            e.add_argument("--out", required=True, help="CSV destination")
        e.set_defaults(func=func)

    v = sub.add_parser("verify", help="run gradient, oracle and worked-example checks")
    v.add_argument("--inject", choices=verify.INJECTIONS, help="deliberately break a component (self-test)")
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "repeats", 1) < 1:
        print("error: --repeats must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (trainer.TrainingDivergedError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError, ContractError, GraphFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
