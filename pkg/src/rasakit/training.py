"""Adam training loop with early stopping, ranking metrics, and the two experiments:
the depth ablation grid and the attention-entropy report."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .attention import EntropyReport, attention_entropy
from .data.synthetic import Dataset, SyntheticSpec, gen_khop_dataset
from .errors import EmptySplit, InvalidConfig, ShapeMismatch
from .model import KHopExample, ModelConfig, RasaModel, build_model, forward_batch, loss
from .numerics import GradientTape, Parameter, add, scale
from .numerics.ops import _sigmoid

log = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    batch_size: int = 32
    max_epochs: int = 15
    patience: int = 3
    warmup_steps: int = 500
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidConfig("learning_rate, batch_size, max_epochs and patience must be positive")
        if self.warmup_steps < 0:
            raise InvalidConfig("warmup_steps must be non-negative")
        if self.patience > self.max_epochs:
            raise InvalidConfig("patience cannot exceed max_epochs")


@dataclass(frozen=True)
class MetricsRecord:
    split: str
    hits_at_1: float
    hits_at_10: float
    set_f1: float
    loss: float
    epoch: int = 0


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear ramp to ``base_lr`` over ``warmup_steps`` (1-based step), then constant."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState, lr_t: float) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeMismatch(f"{p.name}: grad {g.shape} vs param {p.shape}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p.data = p.data - lr_t * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return state


class EarlyStopping:
    """Tracks the best dev metric; ties keep the earliest epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best: float = -math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record ``metric`` for ``epoch``; returns True when training should stop."""
        if metric > self.best:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved_at(self) -> int:
        return self.best_epoch


def _groups(examples: Sequence[KHopExample], ds: Dataset, idx: Iterable[int]) -> dict[tuple[int, int], list[int]]:
    out: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i in idx:
        e = examples[i]
        out[(ds.graph_of(e).num_entities, len(e.path))].append(i)
    return out


def predict_logits(model: RasaModel, ds: Dataset, chunk: int = 256) -> list[np.ndarray]:
    """Logit vector for every example of ``ds`` (no gradient tracking)."""
    out: list[np.ndarray | None] = [None] * len(ds.examples)
    for idx in _groups(ds.examples, ds, range(len(ds.examples))).values():
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            exs = [ds.examples[i] for i in part]
            logits, _ = forward_batch(model, [ds.graph_of(e) for e in exs], [e.source for e in exs],
                                      [e.path for e in exs])
            for row, i in zip(logits.data, part):
                out[i] = row
    return out  # type: ignore[return-value]


def _bce(x: np.ndarray, gold: Sequence[int]) -> float:
    y = np.zeros_like(x)
    y[list(gold)] = 1.0
    return float(np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))))


def metrics_from_logits(logits: Sequence[np.ndarray], golds: Sequence[Sequence[int]], split: str = "",
                        epoch: int = 0, tau: float = 0.5) -> MetricsRecord:
    if not logits:
        raise EmptySplit(f"split {split!r} has no examples")
    h1 = h10 = f1 = ls = 0.0
    for x, gold in zip(logits, golds):
        gold_set = set(gold)
        order = np.argsort(-x, kind="stable")
        h1 += int(order[0]) in gold_set
        h10 += bool(gold_set.intersection(int(i) for i in order[:10]))
        pred = set(np.nonzero(_sigmoid(x) > tau)[0].tolist())
        tp = len(pred & gold_set)
        f1 += 2 * tp / (len(pred) + len(gold_set)) if pred else 0.0
        ls += _bce(x, gold)
    n = len(logits)
    return MetricsRecord(split, h1 / n, h10 / n, f1 / n, ls / n, epoch)


def evaluate(model: RasaModel, dataset: dict[str, Dataset] | Dataset, split: str = "test", epoch: int = 0) -> MetricsRecord:
    ds = dataset[split] if isinstance(dataset, dict) else dataset
    if not ds.examples:
        raise EmptySplit(f"split {split!r} has no examples")
    return metrics_from_logits(predict_logits(model, ds), [e.answers for e in ds.examples], ds.split, epoch)


def chance_baseline(train: Dataset, test: Dataset) -> float:
    """Hits@1 of always answering the most frequent train answer (ties: lowest id)."""
    if not train.examples or not test.examples:
        raise EmptySplit("chance baseline needs non-empty train and test splits")
    counts = Counter(a for e in train.examples for a in e.answers)
    top = min(counts, key=lambda a: (-counts[a], a))
    return sum(top in e.answers for e in test.examples) / len(test.examples)


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def write_csv(self, path: str | Path) -> None:
        if not self.rows:
            return
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.rows[0]), lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def train(model: RasaModel, dataset: dict[str, Dataset], cfg: TrainConfig,
          evaluate_fn: Callable[[RasaModel, Dataset, int], MetricsRecord] | None = None) -> tuple[RasaModel, History]:
    """Mini-batch Adam with linear warmup; early stopping on dev Hits@1.

    The model is updated in place and finally reset to its best-dev parameters.
    """
    cfg.validate()
    for split in ("train", "dev"):
        if split not in dataset or not dataset[split].examples:
            raise EmptySplit(f"training needs a non-empty {split!r} split")
    evaluate_fn = evaluate_fn or (lambda m, ds, ep: evaluate(m, ds, "dev", ep))
    tr = dataset["train"]
    params = model.parameters()
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    drop_rng = np.random.default_rng([cfg.seed, 3])
    best = [p.data.copy() for p in params]
    history = History()

    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, 4, epoch]).permutation(len(tr.examples))
        total, seen = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            batch = order[s:s + cfg.batch_size]
            model.zero_grad()
            with GradientTape() as tape:
                terms = []
                for idx in _groups(tr.examples, tr, batch).values():
                    exs = [tr.examples[i] for i in idx]
                    logits, _ = forward_batch(model, [tr.graph_of(e) for e in exs], [e.source for e in exs],
                                              [e.path for e in exs], training=True, rng=drop_rng)
                    terms.append(scale(loss(logits, [e.answers for e in exs]), len(idx) / len(batch)))
                batch_loss = terms[0]
                for t in terms[1:]:
                    batch_loss = add(batch_loss, t)
            tape.backward(batch_loss)
            lr_t = warmup_lr(cfg.learning_rate, state.step + 1, cfg.warmup_steps)
            adam_step(params, [p.grad for p in params], state, lr_t)
            total += batch_loss.item() * len(batch)
            seen += len(batch)

        dev = evaluate_fn(model, dataset["dev"], epoch)
        stop = stopper.update(epoch, dev.hits_at_1)
        if stopper.best_epoch == epoch:
            best = [p.data.copy() for p in params]
        history.rows.append({
            "epoch": epoch,
            "train_loss": total / seen,
            "dev_loss": dev.loss,
            "dev_hits_at_1": dev.hits_at_1,
            "dev_hits_at_10": dev.hits_at_10,
            "dev_set_f1": dev.set_f1,
            "lr": lr_t,
        })
        log.info("epoch %d train_loss=%.4g dev_hits@1=%.4g", epoch, total / seen, dev.hits_at_1)
        if stop:
            break

    for p, data in zip(params, best):
        p.data = data
    history.best_epoch = stopper.best_epoch
    return model, history


# --- experiments -----------------------------------------------------------

ABLATION_FIELDS = ["k", "L", "variant", "seed", "test_hits_at_1", "test_hits_at_10", "chance",
                   "dev_hits_at_1", "best_epoch", "epochs_run", "train_examples", "outlier"]

# A seed is flagged (never dropped) when its test Hits@1 is this far from its cell median.
OUTLIER_GAP = 0.25


@dataclass
class AblationReport:
    grid: list[dict] = field(default_factory=list)

    def outliers(self) -> list[bool]:
        """Per row: is its test Hits@1 more than OUTLIER_GAP from the median of its (k, L, variant) cell?"""
        return [abs(r["test_hits_at_1"] - self.median(r["k"], r["L"], r["variant"])) > OUTLIER_GAP for r in self.grid]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS, lineterminator="\n")
            w.writeheader()
            for r, flag in zip(self.grid, self.outliers()):
                row = {k: repr(v) if isinstance(v, float) else v for k, v in r.items()}
                w.writerow({**row, "outlier": int(flag)})

    def median(self, k: int, L: int, variant: str, key: str = "test_hits_at_1") -> float:
        vals = [r[key] for r in self.grid if (r["k"], r["L"], r["variant"]) == (k, L, variant)]
        if not vals:
            raise KeyError((k, L, variant))
        return float(np.median(vals))


def cell_data_spec(base: SyntheticSpec, k: int, seed: int) -> SyntheticSpec:
    data_seed = int(np.random.SeedSequence([base.seed, k, seed]).generate_state(1)[0])
    return replace(base, hop_count=k, seed=data_seed)


def run_cell(base_spec: SyntheticSpec, k: int, L: int, variant: str, seed: int,
             model_template: ModelConfig, train_cfg: TrainConfig) -> tuple[dict, RasaModel, dict[str, Dataset]]:
    """Generate data for one grid cell, train a fresh model, and score it on test."""
    splits = gen_khop_dataset(cell_data_spec(base_spec, k, seed))
    mcfg = replace(model_template, layer_count=L, variant=variant, relation_count=base_spec.num_relations,
                   max_entities=base_spec.num_entities)
    model = build_model(mcfg, seed)
    model, hist = train(model, splits, replace(train_cfg, seed=seed))
    test = evaluate(model, splits, "test")
    row = {
        "k": k, "L": L, "variant": variant, "seed": seed,
        "test_hits_at_1": test.hits_at_1, "test_hits_at_10": test.hits_at_10,
        "chance": chance_baseline(splits["train"], splits["test"]),
        "dev_hits_at_1": max(r["dev_hits_at_1"] for r in hist.rows),
        "best_epoch": hist.best_epoch, "epochs_run": len(hist.rows),
        "train_examples": len(splits["train"].examples),
    }
    log.info("cell k=%d L=%d %s seed=%d: test hits@1=%.4g (chance %.4g)", k, L, variant, seed,
             row["test_hits_at_1"], row["chance"])
    return row, model, splits


def _cell_row(args) -> dict:
    return run_cell(*args)[0]


def depth_ablation(base_spec: SyntheticSpec, L_values: Sequence[int], k_values: Sequence[int],
                   variants: Sequence[str], seeds: Sequence[int], model_template: ModelConfig | None = None,
                   train_cfg: TrainConfig | None = None, jobs: int = 1) -> AblationReport:
    """Train one model per (k, L, variant, seed) cell on freshly generated data.

    Cells sharing (k, seed) see identical data, so variants and depths are
    compared on the same queries. Each cell is independent; ``jobs > 1`` runs
    them in worker processes with the same per-cell results.
    """
    if not (L_values and k_values and variants and seeds):
        raise InvalidConfig("ablation grid must be non-empty")
    model_template = model_template or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    cells = [(base_spec, k, L, v, s, model_template, train_cfg)
             for k in k_values for L in L_values for v in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell_row, cells))
    else:
        rows = [_cell_row(c) for c in cells]
    return AblationReport(rows)


def entropy_by_example(model: RasaModel, ds: Dataset, chunk: int = 128) -> list[EntropyReport]:
    """One EntropyReport per example of ``ds``, in example order."""
    out: list[EntropyReport | None] = [None] * len(ds.examples)
    for idx in _groups(ds.examples, ds, range(len(ds.examples))).values():
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            exs = [ds.examples[i] for i in part]
            _, traces = forward_batch(model, [ds.graph_of(e) for e in exs], [e.source for e in exs],
                                      [e.path for e in exs])
            n = ds.graph_of(exs[0]).num_entities
            for b, i in enumerate(part):
                per = [type(t)(t.weights[b], t.layer_index) for t in traces]
                out[i] = attention_entropy(per, n)
    return out  # type: ignore[return-value]


def aggregate_entropy(reports: Sequence[EntropyReport]) -> EntropyReport:
    """Uniform mean over examples of per-layer nats and of normalized entropy."""
    if not reports:
        raise EmptySplit("no examples to aggregate")
    per_layer = np.mean([r.per_layer_nats for r in reports], axis=0)
    normalized = float(np.mean([r.normalized for r in reports]))
    n = int(round(float(np.mean([r.n for r in reports]))))
    return EntropyReport(tuple(float(x) for x in per_layer), normalized, n)


def entropy_report(model: RasaModel, dataset: dict[str, Dataset] | Dataset, split: str = "test") -> EntropyReport:
    ds = dataset[split] if isinstance(dataset, dict) else dataset
    if not ds.examples:
        raise EmptySplit(f"split {split!r} has no examples")
    return aggregate_entropy(entropy_by_example(model, ds))


def write_entropy_table(path: str | Path, reports: dict[str, EntropyReport]) -> None:
    """Side-by-side table: one row per variant, one column per layer, then normalized."""
    layers = max(len(r.per_layer_nats) for r in reports.values())
    fields = ["variant"] + [f"L{i}" for i in range(layers)] + ["normalized", "n"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for variant, r in reports.items():
            row = {"variant": variant, "normalized": repr(r.normalized), "n": r.n}
            row.update({f"L{i}": repr(h) for i, h in enumerate(r.per_layer_nats)})
            w.writerow(row)
