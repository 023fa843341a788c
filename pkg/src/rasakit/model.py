"""k-hop reasoner: entity embeddings, L stacked RASA (or dense) blocks, per-node readout."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .attention import AttentionConfig, AttentionParams, AttentionTrace, attend
from .errors import EmptyGoldSet, IndexOutOfRange, InvalidConfig, ShapeMismatch
from .graph import KnowledgeGraph, relation_incidence
from .numerics import (
    Parameter,
    Tensor,
    add,
    assign_parameters,
    binary_cross_entropy_with_logits,
    glorot,
    layer_norm,
    load_parameters,
    matmul,
    mul,
    relu,
    reshape,
    save_parameters,
    take_rows,
)
from .numerics.ops import _sigmoid

Variant = Literal["rasa", "dense"]


@dataclass(frozen=True)
class ModelConfig:
    layer_count: int = 3
    model_dim: int = 256
    head_count: int = 8
    relation_count: int = 9
    dropout: float = 0.2
    variant: Variant = "rasa"
    max_entities: int = 750
    ff_dim: int | None = None
    direction_policy: str = "symmetric"

    def validate(self) -> None:
        if self.layer_count < 1:
            raise InvalidConfig("layer_count must be >= 1")
        if self.relation_count < 1 or self.max_entities < 1:
            raise InvalidConfig("relation_count and max_entities must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")
        if self.variant not in ("rasa", "dense"):
            raise InvalidConfig(f"unknown variant {self.variant!r}")
        if self.direction_policy not in ("directed", "symmetric"):
            raise InvalidConfig(f"unknown direction policy {self.direction_policy!r}")
        if self.ff_dim is not None and self.ff_dim < 1:
            raise InvalidConfig("ff_dim must be >= 1")
        AttentionConfig(self.model_dim, self.head_count)

    @property
    def hidden_dim(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 2 * self.model_dim

    @property
    def bias_slots(self) -> int:
        # incoming r, outgoing r, self
        return 2 * self.relation_count + 1


@dataclass(frozen=True)
class KHopExample:
    graph_id: int
    source: int
    path: tuple[int, ...]
    answers: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"graph_id": self.graph_id, "source": self.source, "path": list(self.path),
                "answers": list(self.answers)}

    @classmethod
    def from_dict(cls, d: dict) -> "KHopExample":
        return cls(int(d["graph_id"]), int(d["source"]), tuple(d["path"]), tuple(sorted(d["answers"])))


@dataclass
class Block:
    attn: AttentionParams
    ln1_gain: Parameter
    ln1_shift: Parameter
    ln2_gain: Parameter
    ln2_shift: Parameter
    ff1: Parameter
    ff1_bias: Parameter
    ff2: Parameter
    ff2_bias: Parameter

    def parameters(self) -> list[Parameter]:
        return self.attn.parameters() + [self.ln1_gain, self.ln1_shift, self.ln2_gain, self.ln2_shift,
                                         self.ff1, self.ff1_bias, self.ff2, self.ff2_bias]


@dataclass
class RasaModel:
    cfg: ModelConfig
    seed: int
    entity_embeddings: Parameter
    relation_embeddings: Parameter
    source_flag_embedding: Parameter
    bias_table: Parameter
    hop_bias: Parameter
    blocks: list[Block]
    final_gain: Parameter
    final_shift: Parameter
    readout: Parameter
    readout_bias: Parameter
    attn_cfg: AttentionConfig = field(init=False)

    def __post_init__(self):
        self.attn_cfg = AttentionConfig(self.cfg.model_dim, self.cfg.head_count)

    def parameters(self) -> list[Parameter]:
        ps = [self.entity_embeddings, self.relation_embeddings, self.source_flag_embedding,
              self.bias_table, self.hop_bias]
        for b in self.blocks:
            ps.extend(b.parameters())
        return ps + [self.final_gain, self.final_shift, self.readout, self.readout_bias]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "RasaModel":
        clone = build_model(self.cfg, self.seed)
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst.data = src.data.copy()
        return clone


def parameter_count(cfg: ModelConfig) -> int:
    d, f, R, L = cfg.model_dim, cfg.hidden_dim, cfg.relation_count, cfg.layer_count
    T = cfg.bias_slots
    per_block = 4 * d * d + 4 * d + (d * f + f) + (f * d + d)
    return cfg.max_entities * d + R * d + d + T + R * T + L * per_block + 2 * d + d + 1


def build_model(cfg: ModelConfig, seed: int) -> RasaModel:
    """Deterministic initialization from ``seed``; both edge-bias tables start at zero."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    d, f, R = cfg.model_dim, cfg.hidden_dim, cfg.relation_count
    acfg = AttentionConfig(d, cfg.head_count)
    entity = Parameter("entity_embeddings", glorot(rng, (cfg.max_entities, d)))
    relation = Parameter("relation_embeddings", glorot(rng, (R, d)))
    flag = Parameter("source_flag_embedding", glorot(rng, (d,), fan_in=1, fan_out=d))
    blocks = []
    for i in range(cfg.layer_count):
        p = f"block{i}"
        blocks.append(Block(
            attn=AttentionParams.init(acfg, rng, prefix=f"{p}.attn"),
            ln1_gain=Parameter(f"{p}.ln1.gain", np.ones(d)),
            ln1_shift=Parameter(f"{p}.ln1.shift", np.zeros(d)),
            ln2_gain=Parameter(f"{p}.ln2.gain", np.ones(d)),
            ln2_shift=Parameter(f"{p}.ln2.shift", np.zeros(d)),
            ff1=Parameter(f"{p}.ff1", glorot(rng, (d, f))),
            ff1_bias=Parameter(f"{p}.ff1.bias", np.zeros(f)),
            ff2=Parameter(f"{p}.ff2", glorot(rng, (f, d))),
            ff2_bias=Parameter(f"{p}.ff2.bias", np.zeros(d)),
        ))
    return RasaModel(
        cfg=cfg,
        seed=seed,
        entity_embeddings=entity,
        relation_embeddings=relation,
        source_flag_embedding=flag,
        bias_table=Parameter("bias_table", np.zeros(cfg.bias_slots)),
        hop_bias=Parameter("hop_bias", np.zeros((R, cfg.bias_slots))),
        blocks=blocks,
        final_gain=Parameter("final.gain", np.ones(d)),
        final_shift=Parameter("final.shift", np.zeros(d)),
        readout=Parameter("readout", glorot(rng, (d, 1))),
        readout_bias=Parameter("readout.bias", np.zeros(1)),
    )


@lru_cache(maxsize=4096)
def _incidence(g: KnowledgeGraph, policy: str, num_relations: int) -> np.ndarray:
    inc = relation_incidence(g, policy, num_relations)
    inc.flags.writeable = False
    return inc


def forward_batch(model: RasaModel, graphs: Sequence[KnowledgeGraph], sources: Sequence[int],
                  paths: Sequence[Sequence[int]], training: bool = False,
                  rng: np.random.Generator | None = None) -> tuple[Tensor, list[AttentionTrace]]:
    """Logits of shape (B, n) for B queries over same-size graphs with equal-length paths."""
    cfg = model.cfg
    B = len(graphs)
    n = graphs[0].num_entities
    if any(g.num_entities != n for g in graphs):
        raise ShapeMismatch("all graphs in a batch must have the same number of entities")
    if n > cfg.max_entities:
        raise IndexOutOfRange(f"graph has {n} entities, model supports {cfg.max_entities}")
    if any(g.num_relations > cfg.relation_count for g in graphs):
        raise IndexOutOfRange(f"graph relations exceed the model's {cfg.relation_count}")
    path_arr = np.asarray(paths, dtype=np.int64)
    if path_arr.ndim != 2 or path_arr.shape[0] != B or path_arr.shape[1] < 1:
        raise ShapeMismatch("paths must be non-empty and of equal length within a batch")
    if path_arr.min() < 0 or path_arr.max() >= cfg.relation_count:
        raise IndexOutOfRange("relation index outside the model's relation vocabulary")
    src = np.asarray(sources, dtype=np.int64)
    if src.min() < 0 or src.max() >= n:
        raise IndexOutOfRange("source entity out of range")
    k = path_arr.shape[1]
    d = cfg.model_dim
    drop = cfg.dropout if training else 0.0

    onehot = np.zeros((B, n, 1))
    onehot[np.arange(B), src, 0] = 1.0
    h = add(take_rows(model.entity_embeddings, np.arange(n)), mul(Tensor(onehot), model.source_flag_embedding))

    rasa = cfg.variant == "rasa"
    if rasa:
        inc = np.stack([_incidence(g, cfg.direction_policy, cfg.relation_count) for g in graphs])
        allowed = inc.any(axis=-1)[:, None, :, :]
        inc_flat = Tensor(inc.reshape(B, n * n, cfg.bias_slots))

    traces = []
    for layer, block in enumerate(model.blocks):
        x = h
        bias = None
        if layer < k:
            rel = take_rows(model.relation_embeddings, path_arr[:, layer])
            x = add(h, reshape(rel, (B, 1, d)))
        if rasa:
            if layer < k:
                slot_bias = add(take_rows(model.hop_bias, path_arr[:, layer]), model.bias_table)
                slot_bias = reshape(slot_bias, (B, cfg.bias_slots, 1))
            else:
                slot_bias = reshape(model.bias_table, (cfg.bias_slots, 1))
            bias = reshape(matmul(inc_flat, slot_bias), (B, 1, n, n))
        a, w = attend(layer_norm(x, block.ln1_gain, block.ln1_shift), block.attn, model.attn_cfg,
                      mask=allowed if rasa else None, bias=bias, dropout_p=drop, rng=rng)
        traces.append(AttentionTrace(w.data, layer))
        h = add(x, a)
        z = relu(add(matmul(layer_norm(h, block.ln2_gain, block.ln2_shift), block.ff1), block.ff1_bias))
        h = add(h, add(matmul(z, block.ff2), block.ff2_bias))

    out = matmul(layer_norm(h, model.final_gain, model.final_shift), model.readout)
    logits = reshape(add(out, model.readout_bias), (B, n))
    return logits, traces


def forward(model: RasaModel, g: KnowledgeGraph, example: KHopExample, training: bool = False,
            rng: np.random.Generator | None = None) -> tuple[Tensor, list[AttentionTrace]]:
    """Per-node logits (n,) for one query, plus one attention trace per layer."""
    if len(example.path) < 1:
        raise IndexOutOfRange("example path must have at least one hop")
    logits, traces = forward_batch(model, [g], [example.source], [example.path], training, rng)
    logits = reshape(logits, (g.num_entities,))
    return logits, [AttentionTrace(t.weights[0], t.layer_index) for t in traces]


def predict_answers(logits, mode: str = "top1", tau: float = 0.5) -> set[int]:
    x = np.asarray(getattr(logits, "data", logits), dtype=np.float64).reshape(-1)
    if mode == "top1":
        return {int(np.argmax(x))}
    if mode == "threshold":
        return {int(i) for i in np.nonzero(_sigmoid(x) > tau)[0]}
    raise ValueError(f"unknown prediction mode {mode!r}")


def gold_vector(n: int, gold: Sequence[int] | set[int]) -> np.ndarray:
    y = np.zeros(n)
    y[list(gold)] = 1.0
    return y


def loss(logits: Tensor, gold) -> Tensor:
    """Mean BCE over all nodes against the multi-hot gold set.

    ``gold`` is one answer set for logits of shape (n,), or a list of sets for (B, n).
    """
    if logits.data.ndim == 1:
        gold = [gold]
    if any(len(g) == 0 for g in gold):
        raise EmptyGoldSet("gold answer set is empty")
    n = logits.shape[-1]
    y = np.stack([gold_vector(n, g) for g in gold]).reshape(logits.shape)
    return binary_cross_entropy_with_logits(logits, y)


def save_model(directory: str | Path, model: RasaModel) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_parameters(directory / "checkpoint.bin", model.parameters())
    meta = {"config": asdict(model.cfg), "seed": model.seed, "variant": model.cfg.variant}
    (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(directory: str | Path) -> RasaModel:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text(encoding="utf-8"))
    model = build_model(ModelConfig(**meta["config"]), int(meta["seed"]))
    assign_parameters(model.named_parameters(), load_parameters(directory / "checkpoint.bin"))
    return model
