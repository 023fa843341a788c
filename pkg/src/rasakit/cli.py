"""Command-line entry point: ``rasakit <command> [flags]``.

Every command resolves its settings as built-in defaults, then an optional
JSON ``--config`` file, then explicit flags, and writes ``manifest.json`` into
its output directory before doing any work. ``rasakit replay manifest.json``
re-runs a command from the resolved settings recorded there.

Exit codes: 0 success, 2 usage, 3 generation, 4 artifact mismatch, 5 parse.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from . import __version__
from .data import SyntheticSpec, gen_khop_dataset, load_dataset, load_metaqa_kb, load_metaqa_questions, save_dataset
from .data.synthetic import Dataset
from .errors import ArtifactMismatch, RasaError, UsageError
from .graph import load_triples, search_space, write_id_map
from .model import ModelConfig, build_model, load_model, save_model
from .training import (
    TrainConfig,
    depth_ablation,
    entropy_report,
    evaluate,
    train,
    write_entropy_table,
)
from .attention import write_entropy_csv

log = logging.getLogger("rasakit")

DEFAULTS: dict[str, dict] = {
    "gen-data": {"entities": 32, "degree": 3.0, "relations": 4, "hops": 1, "count": 1000, "seed": 0,
                 "examples_per_graph": 10},
    "train": {"data": None, "layers": 3, "variant": "rasa", "seed": 0, "dim": 256, "heads": 8, "dropout": 0.2,
              "ff_dim": None, "direction": "symmetric", "lr": 2e-5, "batch_size": 32, "epochs": 15,
              "patience": 3, "warmup": 500},
    "eval": {"data": None, "checkpoint": None, "split": "test"},
    "ablate": {"layers_list": [1, 3], "hops_list": [1, 3], "variants": ["rasa", "dense"], "seeds": [0, 1, 2],
               "entities": 32, "degree": 3.0, "relations": 4, "count": 2858, "data_seed": 0,
               "examples_per_graph": 10, "dim": 32, "heads": 4, "dropout": 0.0, "lr": 3e-3, "batch_size": 32,
               "epochs": 60, "patience": 15, "warmup": 100, "jobs": 1},
    "entropy": {"data": None, "checkpoint": [], "split": "test"},
    "search-space": {"triples": None, "delimiter": "\t"},
    "metaqa-stats": {"kb": None, "delimiter": "|", "questions": []},
}


def _fmt(x) -> str:
    return f"{x:.4g}" if isinstance(x, float) else str(x)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rasakit", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"rasakit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of settings; flags override it")
        p.add_argument("--out", help="output directory (default: $RASA_OUT_DIR/<command>)")
        return p

    p = cmd("gen-data", "generate a synthetic k-hop dataset")
    p.add_argument("--entities", type=int)
    p.add_argument("--degree", type=float)
    p.add_argument("--relations", type=int)
    p.add_argument("--hops", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--examples-per-graph", type=int)

    def model_flags(p):
        p.add_argument("--layers", type=int)
        p.add_argument("--variant", choices=["rasa", "dense"])
        p.add_argument("--seed", type=int)
        p.add_argument("--dim", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--ff-dim", type=int)
        p.add_argument("--direction", choices=["symmetric", "directed"])

    def train_flags(p):
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--warmup", type=int)

    p = cmd("train", "train a model on a dataset directory")
    p.add_argument("--data")
    model_flags(p)
    train_flags(p)

    p = cmd("eval", "evaluate a checkpoint")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=["train", "dev", "test"])

    p = cmd("ablate", "depth ablation grid over hops x layers x variants x seeds")
    p.add_argument("--layers-list", type=_int_list)
    p.add_argument("--hops-list", type=_int_list)
    p.add_argument("--variants", type=_str_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--entities", type=int)
    p.add_argument("--degree", type=float)
    p.add_argument("--relations", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--examples-per-graph", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    train_flags(p)
    p.add_argument("--jobs", type=int)

    p = cmd("entropy", "attention entropy table for one or more checkpoints")
    p.add_argument("--data")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--split", choices=["train", "dev", "test"])

    p = cmd("search-space", "attention-pattern counts for a triple file")
    p.add_argument("triples", nargs="?")
    p.add_argument("--triples", dest="triples")
    p.add_argument("--delimiter")

    p = cmd("metaqa-stats", "entity/edge/relation/question counts of MetaQA files")
    p.add_argument("--kb")
    p.add_argument("--delimiter")
    p.add_argument("--questions", action="append", metavar="HOP=PATH")

    p = sub.add_parser("replay", help="re-run a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out")
    return parser


def resolve(command: str, explicit: dict, config_path: str | None) -> dict:
    cfg = dict(DEFAULTS[command])
    if config_path:
        try:
            from_file = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(from_file)
    cfg.update(explicit)
    return cfg


def default_out(command: str) -> Path:
    return Path(os.environ.get("RASA_OUT_DIR", "runs")) / command


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _input_files(cfg: dict) -> list[Path]:
    files: list[Path] = []
    if cfg.get("data"):
        files += [Path(cfg["data"]) / f"{s}.json" for s in ("train", "dev", "test")]
    ckpts = cfg.get("checkpoint") or []
    for c in [ckpts] if isinstance(ckpts, str) else ckpts:
        files += [Path(c) / "checkpoint.bin", Path(c) / "model.json"]
    for key in ("triples", "kb"):
        if cfg.get(key):
            files.append(Path(cfg[key]))
    files += [Path(q.partition("=")[2]) for q in cfg.get("questions", [])]
    return [f for f in files if f.is_file()]


def input_hashes(cfg: dict) -> dict[str, str]:
    """sha256 of every input file the command reads, keyed by path."""
    return {str(f): hashlib.sha256(f.read_bytes()).hexdigest() for f in _input_files(cfg)}


def write_manifest(out: Path, command: str, cfg: dict, config_path: str | None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "inputs_sha256": input_hashes(cfg),
        "command": command,
        "config_path": config_path,
        "config": cfg,
        "seed": cfg.get("seed", cfg.get("seeds")),
        "output_dir": str(out),
        "started_at": _now(),
        "version": __version__,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _finish_manifest(path: Path) -> None:
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc["finished_at"] = _now()
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_metrics_csv(path: Path, record) -> None:
    row = asdict(record)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# --- commands --------------------------------------------------------------

def run_gen_data(cfg: dict, out: Path) -> int:
    spec = SyntheticSpec(num_entities=cfg["entities"], avg_out_degree=cfg["degree"], num_relations=cfg["relations"],
                         hop_count=cfg["hops"], num_examples=cfg["count"], seed=cfg["seed"],
                         examples_per_graph=cfg["examples_per_graph"])
    splits = gen_khop_dataset(spec)
    save_dataset(out, splits)
    sizes = {s: len(d) for s, d in splits.items()}
    graphs = len({g for d in splits.values() for g in d.graphs})
    print(f"wrote {sum(sizes.values())} examples over {graphs} graphs to {out} "
          f"(train {sizes['train']}, dev {sizes['dev']}, test {sizes['test']}); all answers oracle-verified")
    return 0


def _dataset_shape(splits: dict[str, Dataset]) -> tuple[int, int]:
    graphs = [g for d in splits.values() for g in d.graphs.values()]
    return max(g.num_entities for g in graphs), max(g.num_relations for g in graphs)


def run_train(cfg: dict, out: Path) -> int:
    if not cfg["data"]:
        raise UsageError("train needs --data")
    ModelConfig(model_dim=cfg["dim"], head_count=cfg["heads"], dropout=cfg["dropout"], variant=cfg["variant"],
                ff_dim=cfg["ff_dim"], direction_policy=cfg["direction"], layer_count=cfg["layers"]).validate()
    splits = load_dataset(cfg["data"])
    n_max, R = _dataset_shape(splits)
    mcfg = ModelConfig(layer_count=cfg["layers"], model_dim=cfg["dim"], head_count=cfg["heads"], relation_count=R,
                       dropout=cfg["dropout"], variant=cfg["variant"], max_entities=n_max, ff_dim=cfg["ff_dim"],
                       direction_policy=cfg["direction"])
    tcfg = TrainConfig(learning_rate=cfg["lr"], batch_size=cfg["batch_size"], max_epochs=cfg["epochs"],
                       patience=min(cfg["patience"], cfg["epochs"]), warmup_steps=cfg["warmup"], seed=cfg["seed"])
    model = build_model(mcfg, cfg["seed"])
    model, history = train(model, splits, tcfg)
    save_model(out, model)
    history.write_csv(out / "history.csv")
    best = history.rows[history.best_epoch - 1]
    print(f"trained {mcfg.variant} L={mcfg.layer_count} for {len(history.rows)} epochs; "
          f"best dev hits@1 {_fmt(best['dev_hits_at_1'])} at epoch {history.best_epoch}; checkpoint in {out}")
    return 0


def _check_compatible(model, splits: dict[str, Dataset]) -> None:
    n_max, R = _dataset_shape(splits)
    if R != model.cfg.relation_count:
        raise ArtifactMismatch(f"dataset has {R} relations, checkpoint expects {model.cfg.relation_count}")
    if n_max > model.cfg.max_entities:
        raise ArtifactMismatch(f"dataset graphs have up to {n_max} entities, checkpoint supports "
                               f"{model.cfg.max_entities}")


def _load_checkpoint(path) -> object:
    try:
        return load_model(path)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ArtifactMismatch(f"cannot load checkpoint {path}: {exc}") from exc


def run_eval(cfg: dict, out: Path) -> int:
    if not cfg["data"] or not cfg["checkpoint"]:
        raise UsageError("eval needs --data and --checkpoint")
    splits = load_dataset(cfg["data"])
    model = _load_checkpoint(cfg["checkpoint"])
    _check_compatible(model, splits)
    if cfg["split"] not in splits:
        raise UsageError(f"split {cfg['split']!r} not found in {cfg['data']}")
    rec = evaluate(model, splits, cfg["split"])
    _write_metrics_csv(out / "metrics.csv", rec)
    print(" ".join(f"{k}={_fmt(v)}" for k, v in asdict(rec).items()))
    return 0


def run_ablate(cfg: dict, out: Path) -> int:
    base = SyntheticSpec(num_entities=cfg["entities"], avg_out_degree=cfg["degree"], num_relations=cfg["relations"],
                         num_examples=cfg["count"], seed=cfg["data_seed"],
                         examples_per_graph=cfg["examples_per_graph"])
    template = ModelConfig(model_dim=cfg["dim"], head_count=cfg["heads"], dropout=cfg["dropout"])
    tcfg = TrainConfig(learning_rate=cfg["lr"], batch_size=cfg["batch_size"], max_epochs=cfg["epochs"],
                       patience=min(cfg["patience"], cfg["epochs"]), warmup_steps=cfg["warmup"])
    report = depth_ablation(base, cfg["layers_list"], cfg["hops_list"], cfg["variants"], cfg["seeds"],
                            template, tcfg, jobs=cfg["jobs"])
    report.write_csv(out / "ablation.csv")
    print("k  L  variant  seed  test_hits@1  chance")
    for r, flag in zip(report.grid, report.outliers()):
        mark = "  (outlier)" if flag else ""
        print(f"{r['k']}  {r['L']}  {r['variant']:<7}  {r['seed']}  {_fmt(r['test_hits_at_1'])}  {_fmt(r['chance'])}{mark}")
    cells = sorted({(r["k"], r["L"], r["variant"]) for r in report.grid})
    for k, L, v in cells:
        print(f"median k={k} L={L} {v}: {_fmt(report.median(k, L, v))}")
    return 0


def run_entropy(cfg: dict, out: Path) -> int:
    if not cfg["data"] or not cfg["checkpoint"]:
        raise UsageError("entropy needs --data and at least one --checkpoint")
    splits = load_dataset(cfg["data"])
    if cfg["split"] not in splits:
        raise UsageError(f"split {cfg['split']!r} not found in {cfg['data']}")
    reports = {}
    for ckpt in cfg["checkpoint"]:
        model = _load_checkpoint(ckpt)
        _check_compatible(model, splits)
        name = model.cfg.variant
        if name in reports:
            name = f"{name}_{len(reports)}"
        reports[name] = entropy_report(model, splits, cfg["split"])
        write_entropy_csv(out / f"entropy_{name}.csv", reports[name])
    write_entropy_table(out / "entropy_table.csv", reports)
    for name, r in reports.items():
        layers = " ".join(f"L{i}={_fmt(h)}" for i, h in enumerate(r.per_layer_nats))
        print(f"{name}: {layers} normalized={_fmt(r.normalized)} n={r.n}")
    return 0


def run_search_space(cfg: dict, out: Path) -> int:
    if not cfg["triples"]:
        raise UsageError("search-space needs a triple file")
    named = load_triples(cfg["triples"], delimiter=cfg["delimiter"])
    report = search_space(named.graph)
    _write_json(out / "search_space.json", report.to_dict())
    write_id_map(out / "entities.tsv", named.entities)
    write_id_map(out / "relations.tsv", named.relations)
    for k, v in report.to_dict().items():
        print(f"{k}: {v}")
    return 0


def run_metaqa_stats(cfg: dict, out: Path) -> int:
    if not cfg["kb"]:
        raise UsageError("metaqa-stats needs --kb")
    kb = load_metaqa_kb(cfg["kb"], delimiter=cfg["delimiter"])
    stats = {"entities": kb.graph.num_entities, "edges": kb.graph.m, "relations": kb.graph.num_relations,
             "duplicate_lines": kb.duplicate_lines, "questions": {}}
    for item in cfg["questions"]:
        hop, _, path = item.partition("=")
        if not path or hop not in ("1", "2", "3"):
            raise UsageError(f"--questions expects HOP=PATH with HOP in 1..3, got {item!r}")
        qs = load_metaqa_questions(path, int(hop), kb)
        stats["questions"][f"{hop}-hop:{Path(path).name}"] = {
            "count": len(qs), "unresolved_answers": sum(len(q.unresolved) for q in qs)}
    _write_json(out / "metaqa_stats.json", stats)
    print(f"entities: {stats['entities']}\nedges: {stats['edges']}\nrelations: {stats['relations']}")
    for name, q in stats["questions"].items():
        print(f"{name}: {q['count']} questions")
    return 0


RUNNERS: dict[str, Callable[[dict, Path], int]] = {
    "gen-data": run_gen_data,
    "train": run_train,
    "eval": run_eval,
    "ablate": run_ablate,
    "entropy": run_entropy,
    "search-space": run_search_space,
    "metaqa-stats": run_metaqa_stats,
}


def execute(command: str, cfg: dict, out: Path, config_path: str | None = None) -> int:
    manifest = write_manifest(out, command, cfg, config_path)
    code = RUNNERS[command](cfg, out)
    _finish_manifest(manifest)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.pop("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.pop("command")
    try:
        if command == "replay":
            doc = json.loads(Path(args["manifest"]).read_text(encoding="utf-8"))
            out = Path(args["out"]) if args.get("out") else Path(doc["output_dir"])
            return execute(doc["command"], doc["config"], out, doc.get("config_path"))
        config_path = args.pop("config", None)
        out = Path(args.pop("out")) if "out" in args else default_out(command)
        cfg = resolve(command, args, config_path)
        return execute(command, cfg, out, config_path)
    except RasaError as exc:
        print(f"rasakit {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"rasakit {command}: {exc}", file=sys.stderr)
        return UsageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
