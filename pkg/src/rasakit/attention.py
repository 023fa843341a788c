"""Dense and relation-aware sparse multi-head attention, plus an entropy probe.

All functions accept node states of shape ``(n, d)`` or batched ``(B, n, d)``;
masks and bias grids broadcast over the batch and head axes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyTraceList, InvalidConfig, ShapeMismatch
from .graph import AttentionMask, EdgeTypeMap
from .numerics import (
    Parameter,
    Tensor,
    dropout,
    gather_bias,
    glorot,
    masked_fill,
    masked_softmax_rows,
    matmul,
    reshape,
    scale,
    transpose,
    add,
)
from .numerics.tensor import MASK_NEG


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    head_count: int

    def __post_init__(self):
        if self.model_dim <= 0 or self.head_count <= 0:
            raise InvalidConfig("model_dim and head_count must be positive")
        if self.model_dim % self.head_count:
            raise InvalidConfig(f"model_dim {self.model_dim} not divisible by head_count {self.head_count}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.head_count


@dataclass
class AttentionParams:
    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter
    bias_table: Parameter | None = None

    @classmethod
    def init(cls, cfg: AttentionConfig, rng: np.random.Generator, num_relations: int | None = None,
             prefix: str = "attn") -> "AttentionParams":
        d = cfg.model_dim
        mats = [Parameter(f"{prefix}.{name}", glorot(rng, (d, d))) for name in ("wq", "wk", "wv", "wo")]
        bias = None
        if num_relations is not None:
            bias = Parameter(f"{prefix}.bias_table", np.zeros(num_relations + 1))
        return cls(*mats, bias_table=bias)

    def parameters(self) -> list[Parameter]:
        ps = [self.wq, self.wk, self.wv, self.wo]
        return ps + ([self.bias_table] if self.bias_table is not None else [])


@dataclass(frozen=True)
class AttentionTrace:
    """Post-softmax weights of one layer, shape (..., heads, n, n)."""

    weights: np.ndarray
    layer_index: int


@dataclass(frozen=True)
class EntropyReport:
    per_layer_nats: tuple[float, ...]
    normalized: float
    n: int

    def rows(self) -> list[dict]:
        log_n = math.log(self.n) if self.n > 1 else 0.0
        out = []
        for i, h in enumerate(self.per_layer_nats):
            out.append({"layer": f"L{i}", "entropy_nats": h, "normalized": h / log_n if log_n else 0.0, "n": self.n})
        mean_h = float(np.mean(self.per_layer_nats))
        out.append({"layer": "mean", "entropy_nats": mean_h, "normalized": self.normalized, "n": self.n})
        return out


def _split_heads(t: Tensor, h: int) -> Tensor:
    *lead, n, d = t.shape
    t = reshape(t, (*lead, n, h, d // h))
    k = len(lead)
    return transpose(t, (*range(k), k + 1, k, k + 2))


def _merge_heads(t: Tensor) -> Tensor:
    *lead, h, n, dk = t.shape
    k = len(lead)
    t = transpose(t, (*range(k), k + 1, k, k + 2))
    return reshape(t, (*lead, n, h * dk))


def _check_input(x: Tensor, cfg: AttentionConfig) -> None:
    if x.data.ndim < 2 or x.shape[-1] != cfg.model_dim:
        raise ShapeMismatch(f"expected (..., n, {cfg.model_dim}) input, got {x.shape}")


def head_scores(x: Tensor, wq: Tensor, wk: Tensor, cfg: AttentionConfig) -> Tensor:
    """Scaled dot-product scores per head, shape (..., h, n, n)."""
    _check_input(x, cfg)
    q = _split_heads(matmul(x, wq), cfg.head_count)
    k = _split_heads(matmul(x, wk), cfg.head_count)
    kt = transpose(k, (*range(k.data.ndim - 2), k.data.ndim - 1, k.data.ndim - 2))
    return scale(matmul(q, kt), 1.0 / math.sqrt(cfg.head_dim))


def _check_grid(n: int, *grids) -> None:
    for g in grids:
        arr = getattr(g, "allowed", None)
        arr = getattr(g, "type_of", arr) if arr is None else arr
        if arr is not None and arr.shape[-2:] != (n, n):
            raise ShapeMismatch(f"grid of shape {arr.shape} does not match n={n}")


def rasa_scores(x: Tensor, wq: Tensor, wk: Tensor, cfg: AttentionConfig, mask: AttentionMask,
                etypes: EdgeTypeMap, bias_table: Tensor) -> Tensor:
    """Per-head scores plus the relation bias, with MASK_NEG on disallowed pairs."""
    n = x.shape[-2]
    _check_grid(n, mask, etypes)
    if bias_table.shape != (etypes.num_relations + 1,):
        raise ShapeMismatch(f"bias table needs {etypes.num_relations + 1} slots, got {bias_table.shape}")
    s = add(head_scores(x, wq, wk, cfg), gather_bias(bias_table, etypes))
    return masked_fill(s, mask, MASK_NEG)


def attend(x: Tensor, params: AttentionParams, cfg: AttentionConfig, mask=None, bias: Tensor | None = None,
           dropout_p: float = 0.0, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Multi-head attention with an optional additive score bias and boolean mask.

    Returns the projected output and the post-softmax weights (before dropout).
    ``mask=None`` allows every pair; ``bias`` broadcasts against (..., h, n, n).
    """
    scores = head_scores(x, params.wq, params.wk, cfg)
    if bias is not None:
        scores = add(scores, bias)
    n = x.shape[-2]
    allowed = np.ones((n, n), dtype=bool) if mask is None else getattr(mask, "allowed", mask)
    weights = masked_softmax_rows(scores, allowed)
    v = _split_heads(matmul(x, params.wv), cfg.head_count)
    ctx = matmul(dropout(weights, dropout_p, rng), v)
    return matmul(_merge_heads(ctx), params.wo), weights


def rasa_attention(x: Tensor, params: AttentionParams, cfg: AttentionConfig, mask: AttentionMask,
                   etypes: EdgeTypeMap, layer_index: int = 0) -> tuple[Tensor, AttentionTrace]:
    if params.bias_table is None:
        raise ShapeMismatch("RASA attention needs a bias table")
    n = x.shape[-2]
    _check_grid(n, mask, etypes)
    if params.bias_table.shape != (etypes.num_relations + 1,):
        raise ShapeMismatch(f"bias table needs {etypes.num_relations + 1} slots, got {params.bias_table.shape}")
    out, w = attend(x, params, cfg, mask=mask, bias=gather_bias(params.bias_table, etypes))
    return out, AttentionTrace(w.data, layer_index)


def standard_attention(x: Tensor, params: AttentionParams, cfg: AttentionConfig,
                       layer_index: int = 0) -> tuple[Tensor, AttentionTrace]:
    out, w = attend(x, params, cfg)
    return out, AttentionTrace(w.data, layer_index)


def row_entropy(weights: np.ndarray) -> np.ndarray:
    """-sum_j w_ij ln w_ij over the last axis, with 0 ln 0 = 0."""
    w = np.asarray(weights, dtype=np.float64)
    safe = np.where(w > 0, w, 1.0)
    return -(w * np.log(safe)).sum(axis=-1)


def attention_entropy(traces: Sequence[AttentionTrace], valid_nodes: int) -> EntropyReport:
    """Mean row entropy per layer over heads and the first ``valid_nodes`` query rows."""
    if not traces:
        raise EmptyTraceList("no attention traces given")
    if valid_nodes < 1:
        raise ValueError("valid_nodes must be >= 1")
    per_layer = []
    for tr in sorted(traces, key=lambda t: t.layer_index):
        rows = row_entropy(tr.weights[..., :valid_nodes, :])
        per_layer.append(float(rows.mean()))
    normalized = float(np.mean(per_layer)) / math.log(valid_nodes) if valid_nodes > 1 else 0.0
    return EntropyReport(tuple(per_layer), normalized, valid_nodes)


def write_entropy_csv(path: str | Path, report: EntropyReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["layer", "entropy_nats", "normalized", "n"], lineterminator="\n")
        w.writeheader()
        for row in report.rows():
            w.writerow({**row, "entropy_nats": repr(row["entropy_nats"]), "normalized": repr(row["normalized"])})
