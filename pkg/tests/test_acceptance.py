"""Acceptance criteria, one test each. Every test records a PASS/FAIL line that
is printed in the pytest terminal summary, then asserts on the same result.

The depth-ablation grid trains 12 small models (about 15 minutes on one CPU
core) and is shared with the entropy comparison through a module fixture.
MetaQA checks read the official files from ``$RASA_METAQA_DIR`` and are
skipped when it is unset.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_graph, record_criterion
from rasakit.attention import (
    AttentionConfig,
    AttentionParams,
    AttentionTrace,
    attention_entropy,
    rasa_attention,
    standard_attention,
)
from rasakit.cli import main
from rasakit.data import SyntheticSpec, load_metaqa_kb, load_metaqa_questions
from rasakit.graph import build_graph, derive_mask, exact_k_reachable, layered_connectivity, search_space_counts
from rasakit.model import KHopExample, ModelConfig, build_model, forward, loss
from rasakit.numerics import Tensor, finite_diff_check
from rasakit.training import TrainConfig, entropy_by_example, entropy_report, run_cell

from test_model import undirected_distances

ABLATION_SPEC = SyntheticSpec(num_entities=32, avg_out_degree=3.0, num_relations=4, num_examples=2858, seed=0)
ABLATION_MODEL = ModelConfig(model_dim=32, head_count=4, dropout=0.0)
ABLATION_TRAIN = TrainConfig(learning_rate=3e-3, batch_size=32, max_epochs=60, patience=15, warmup_steps=100)
ABLATION_SEEDS = (0, 1, 2)
ABLATION_CELLS = [(1, 1, "rasa"), (3, 1, "rasa"), (3, 3, "rasa"), (3, 3, "dense")]


def _attention_instance(rng, n, d=8, h=2, R=3):
    g = random_graph(rng, n, int(rng.integers(0, 3 * n + 1)), R)
    cfg = AttentionConfig(d, h)
    params = AttentionParams.init(cfg, rng, num_relations=R)
    params.bias_table.data[:] = rng.normal(size=R + 1)
    return g, cfg, params, Tensor(rng.normal(size=(n, d)) * 2)


def test_mask_semantics():
    rng = np.random.default_rng(100)
    start = time.perf_counter()
    zero_ok = sum_ok = 0
    worst = 0.0
    for i in range(1000):
        n = int(rng.integers(1, 13))
        g, cfg, params, x = _attention_instance(rng, n)
        mask, types = derive_mask(g, "directed" if i % 2 else "symmetric")
        _, trace = rasa_attention(x, params, cfg, mask, types)
        zero_ok += bool(np.all(trace.weights[:, ~mask.allowed] == 0.0))
        dev = float(np.max(np.abs(trace.weights.sum(-1) - 1.0)))
        worst = max(worst, dev)
        sum_ok += dev <= 1e-9
    elapsed = time.perf_counter() - start
    ok = zero_ok == 1000 and sum_ok == 1000 and elapsed < 60
    record_criterion("mask semantics", ok, f"{zero_ok}/1000 exact zeros, max |row sum - 1| = {worst:.1e}, {elapsed:.1f}s")
    assert ok


def test_gradient_suite():
    start = time.perf_counter()
    worst, worst_name, checked = 0.0, "", 0
    cases = [
        (build_graph([(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 0, 4), (4, 1, 5), (5, 2, 0), (1, 0, 4)], 6, 3), (0, 1), 0),
        (build_graph([(0, 2, 3), (3, 1, 1), (1, 0, 5), (2, 1, 4)], 6, 3), (2,), 3),
    ]
    for g, path, source in cases:
        model = build_model(ModelConfig(layer_count=2, model_dim=8, head_count=2, relation_count=3, max_entities=6,
                                        dropout=0.0), 11)
        rng = np.random.default_rng(5)
        model.bias_table.data[:] = rng.normal(size=model.bias_table.shape)
        model.hop_bias.data[:] = rng.normal(size=model.hop_bias.shape)
        ex = KHopExample(0, source, path, (1, 4))

        def f():
            logits, _ = forward(model, g, ex)
            return loss(logits, set(ex.answers))

        for p in model.parameters():
            err = finite_diff_check(f, p, 1e-5)
            checked += 1
            if err > worst:
                worst, worst_name = err, p.name
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 300
    record_criterion("gradient suite", ok, f"{checked} parameter checks, worst rel err {worst:.2e} ({worst_name}), {elapsed:.1f}s")
    assert ok


def test_oracle_equivalence():
    rng = np.random.default_rng(200)
    start = time.perf_counter()
    agree = total = 0
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        g = random_graph(rng, n, int(rng.integers(0, 3 * n + 1)), int(rng.integers(1, 4)), allow_self_loops=True)
        for k in range(5):
            for s in range(n):
                for t in range(n):
                    total += 1
                    agree += exact_k_reachable(g, s, t, k) == layered_connectivity(g, s, t, k)
    elapsed = time.perf_counter() - start
    ok = agree == total and elapsed < 120
    record_criterion("oracle equivalence", ok, f"{agree}/{total} (graph, s, t, k) agree, {elapsed:.1f}s")
    assert ok


def test_dense_reduction():
    rng = np.random.default_rng(300)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 11))
        _, cfg, params, x = _attention_instance(rng, n)
        full = build_graph([(i, int(rng.integers(3)), j) for i in range(n) for j in range(n) if i != j], n, 3)
        mask, types = derive_mask(full)
        params.bias_table.data[:] = 0.0
        a, _ = rasa_attention(x, params, cfg, mask, types)
        b, _ = standard_attention(x, params, cfg)
        worst = max(worst, float(np.max(np.abs(a.data - b.data))))
    ok = worst <= 1e-12
    record_criterion("dense reduction", ok, f"max |rasa - standard| = {worst:.1e} over 100 instances")
    assert ok


def test_locality_ceiling():
    rng = np.random.default_rng(400)
    exact = tested_far = 0
    for i in range(100):
        L = i % 3 + 1
        n = int(rng.integers(4, 16))
        R = 3
        g = random_graph(rng, n, int(rng.integers(n // 2, 2 * n)), R)
        model = build_model(ModelConfig(layer_count=L, model_dim=8, head_count=2, relation_count=R, max_entities=n,
                                        dropout=0.0), i)
        model.bias_table.data[:] = rng.normal(size=model.bias_table.shape)
        model.hop_bias.data[:] = rng.normal(size=model.hop_bias.shape)
        t = int(rng.integers(n))
        dist = undirected_distances(g, t)
        far = [v for v in range(n) if dist.get(v, n + 1) > L]
        ex = KHopExample(0, int(rng.integers(n)), tuple(int(r) for r in rng.integers(R, size=int(rng.integers(1, L + 1)))), ())
        base, _ = forward(model, g, ex)
        model.entity_embeddings.data[far] += rng.normal(size=(len(far), 8)) * 5
        moved, _ = forward(model, g, ex)
        exact += moved.data[t].tobytes() == base.data[t].tobytes()
        tested_far += bool(far)
    ok = exact == 100
    record_criterion("locality ceiling", ok, f"{exact}/100 bitwise unchanged ({tested_far} with far nodes perturbed)")
    assert ok


def test_search_space_accounting():
    toy = search_space_counts(5, 6)
    big = search_space_counts(43_234, 186_213)
    ok = (toy.standard_log2_patterns, toy.rasa_log2_patterns) == (25, 6) and \
        (big.standard_log2_patterns, big.rasa_log2_patterns) == (1_869_178_756, 186_213) and \
        all(isinstance(v, int) for v in big.to_dict().values())
    record_criterion("search-space accounting", ok, f"toy {toy.standard_log2_patterns} vs {toy.rasa_log2_patterns}; "
                     f"MetaQA scale {big.standard_log2_patterns:,} vs {big.rasa_log2_patterns:,}")
    assert ok


@pytest.fixture(scope="module")
def ablation():
    """Train every required (k, L, variant) cell for each seed once."""
    start = time.perf_counter()
    rows, keep = [], {}
    for k, L, variant in ABLATION_CELLS:
        for seed in ABLATION_SEEDS:
            row, model, splits = run_cell(ABLATION_SPEC, k, L, variant, seed, ABLATION_MODEL, ABLATION_TRAIN)
            rows.append(row)
            if (k, L) == (3, 3):
                keep[(variant, seed)] = (model, splits)
    return rows, keep, time.perf_counter() - start


def _median(rows, k, L, variant, key="test_hits_at_1"):
    return float(np.median([r[key] for r in rows if (r["k"], r["L"], r["variant"]) == (k, L, variant)]))


@pytest.mark.slow
def test_entropy_extremes_and_ordering(ablation):
    uniform = attention_entropy([AttentionTrace(np.full((4, 4), 0.25), 0)], 4)
    one_hot = attention_entropy([AttentionTrace(np.eye(6), 0)], 6)
    extremes = abs(uniform.per_layer_nats[0] - math.log(4)) <= 1e-9 and abs(uniform.normalized - 1.0) <= 1e-9 \
        and one_hot.per_layer_nats[0] == 0.0

    _, keep, _ = ablation
    bound_ok, measured = True, 0
    rasa_vals, dense_vals = [], []
    for seed in ABLATION_SEEDS:
        model, splits = keep[("rasa", seed)]
        test = splits["test"]
        for e, rep in zip(test.examples, entropy_by_example(model, test)):
            g = test.graph_of(e)
            support = derive_mask(g, model.cfg.direction_policy)[0].allowed.sum(-1)
            bound = math.log(int(support.max())) / math.log(g.num_entities)
            bound_ok &= rep.normalized <= bound + 1e-12
            measured += 1
        rasa_vals.append(entropy_report(model, splits, "test").normalized)
        dense_model, dense_splits = keep[("dense", seed)]
        dense_vals.append(entropy_report(dense_model, dense_splits, "test").normalized)
    rasa_med, dense_med = float(np.median(rasa_vals)), float(np.median(dense_vals))
    ordering = rasa_med < 0.6 < 0.7 < dense_med
    ok = extremes and bound_ok and ordering
    record_criterion("entropy extremes and ordering", ok,
                     f"uniform H={uniform.per_layer_nats[0]:.6f}, support bound on {measured} examples: {bound_ok}, "
                     f"trained normalized rasa {rasa_med:.3f} vs dense {dense_med:.3f} "
                     f"(per seed rasa {[round(v, 3) for v in rasa_vals]}, dense {[round(v, 3) for v in dense_vals]})")
    assert ok


@pytest.mark.slow
def test_depth_ablation_cliff(ablation):
    rows, _, elapsed = ablation
    k1 = _median(rows, 1, 1, "rasa")
    k3_l1 = _median(rows, 3, 1, "rasa")
    chance = _median(rows, 3, 1, "rasa", "chance")
    k3_rasa = _median(rows, 3, 3, "rasa")
    k3_dense = _median(rows, 3, 3, "dense")
    checks = {
        "k1L1>=0.95": k1 >= 0.95,
        "k3L1~chance": abs(k3_l1 - chance) <= 0.10,
        "k3L3 rasa>=0.90": k3_rasa >= 0.90,
        "rasa>=dense": k3_rasa >= k3_dense,
        "runtime<=45min": elapsed <= 45 * 60,
    }
    ok = all(checks.values())
    failed = [name for name, passed in checks.items() if not passed]
    record_criterion("depth-ablation cliff", ok,
                     f"median test hits@1: k1L1 {k1:.3f}, k3L1 {k3_l1:.3f} (chance {chance:.3f}), "
                     f"k3L3 rasa {k3_rasa:.3f}, k3L3 dense {k3_dense:.3f}; {elapsed / 60:.1f} min"
                     + (f"; failed: {failed}" if failed else ""))
    assert ok


def _metaqa_paths():
    root = os.environ.get("RASA_METAQA_DIR")
    if not root:
        return None
    root = Path(root)
    questions = {}
    for hop in (1, 2, 3):
        for cand in (root / f"{hop}-hop" / "vanilla" / "qa_test.txt", root / f"{hop}-hop" / "qa_test.txt",
                     root / f"qa_test_{hop}hop.txt"):
            if cand.exists():
                questions[hop] = cand
                break
    kb = root / "kb.txt"
    return (kb, questions) if kb.exists() and len(questions) == 3 else None


def test_metaqa_ingestion():
    paths = _metaqa_paths()
    if paths is None:
        record_criterion("MetaQA ingestion", True, "official files absent; set RASA_METAQA_DIR", status="SKIP")
        pytest.skip("MetaQA files not supplied (set RASA_METAQA_DIR)")
    kb_path, questions = paths
    kb = load_metaqa_kb(kb_path)
    g = kb.graph
    counts = {hop: len(load_metaqa_questions(p, hop, kb)) for hop, p in questions.items()}
    ok = (g.num_entities, g.m, g.num_relations) == (43_234, 186_213, 9) and counts == {1: 13_015, 2: 14_872, 3: 14_274}
    record_criterion("MetaQA ingestion", ok, f"n={g.num_entities}, m={g.m}, |R|={g.num_relations}, test questions {counts}")
    assert ok


def _outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir()) if p.name != "manifest.json"}


def test_cli_determinism(tmp_path):
    kb = tmp_path / "toy.tsv"
    kb.write_text("".join(f"e{h}\tr{h % 2}\te{t}\n" for h, t in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]))
    mq = tmp_path / "kb.txt"
    mq.write_text("Film|starred_actors|Tom\nFilm|directed_by|Ann\n")
    qs = tmp_path / "qa.txt"
    qs.write_text("what films star [Tom]\tFilm\n")
    data, model = tmp_path / "data", tmp_path / "model"
    small = ["--layers", "1", "--dim", "8", "--heads", "2", "--epochs", "2", "--patience", "2", "--lr", "1e-2",
             "--dropout", "0.1"]
    commands = [
        ["gen-data", "--entities", "10", "--degree", "2", "--relations", "2", "--hops", "2", "--count", "60", "--out", str(data)],
        ["train", "--data", str(data), *small, "--out", str(model)],
        ["eval", "--data", str(data), "--checkpoint", str(model), "--out", str(tmp_path / "eval")],
        ["entropy", "--data", str(data), "--checkpoint", str(model), "--out", str(tmp_path / "entropy")],
        ["ablate", "--layers-list", "1", "--hops-list", "1", "--variants", "rasa,dense", "--seeds", "0", "--entities", "10",
         "--degree", "2", "--relations", "2", "--count", "60", "--dim", "8", "--heads", "2", "--epochs", "2",
         "--patience", "2", "--out", str(tmp_path / "ablate")],
        ["search-space", str(kb), "--out", str(tmp_path / "search")],
        ["metaqa-stats", "--kb", str(mq), "--questions", f"1={qs}", "--out", str(tmp_path / "metaqa")],
    ]
    identical = []
    for argv in commands:
        first = Path(argv[-1])
        assert main(argv) == 0
        replay = tmp_path / f"replay-{argv[0]}"
        assert main(["replay", str(first / "manifest.json"), "--out", str(replay)]) == 0
        a, b = _outputs(first), _outputs(replay)
        identical.append(bool(a) and a == b)
    ok = all(identical)
    record_criterion("CLI determinism", ok, f"{sum(identical)}/{len(commands)} commands byte-identical on replay")
    assert ok
