from collections import deque

import numpy as np
import pytest

from conftest import random_graph
from rasakit.errors import EmptyGoldSet, IndexOutOfRange, InvalidConfig
from rasakit.graph import build_graph
from rasakit.model import (
    KHopExample,
    ModelConfig,
    build_model,
    forward,
    forward_batch,
    load_model,
    loss,
    parameter_count,
    predict_answers,
    save_model,
)
from rasakit.numerics import GradientTape, Parameter, Tensor, finite_diff_check

SMALL = dict(model_dim=8, head_count=2, relation_count=3, max_entities=12, dropout=0.0)


def undirected_distances(g, t):
    dist = {t: 0}
    queue = deque([t])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def test_build_model_deterministic():
    cfg = ModelConfig(layer_count=3, model_dim=16, head_count=4, relation_count=3)
    a, b = build_model(cfg, 7), build_model(cfg, 7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.name == pb.name and pa.data.tobytes() == pb.data.tobytes()
    c = build_model(cfg, 8)
    assert c.entity_embeddings.data.tobytes() != a.entity_embeddings.data.tobytes()


@pytest.mark.parametrize("kwargs", [dict(model_dim=15, head_count=4), dict(layer_count=0), dict(variant="sparse"),
                                    dict(dropout=1.0), dict(relation_count=0)])
def test_build_model_invalid(kwargs):
    with pytest.raises(InvalidConfig):
        build_model(ModelConfig(**kwargs), 0)


@pytest.mark.parametrize("kwargs", [dict(), dict(layer_count=1, model_dim=16, head_count=4, relation_count=4, max_entities=32),
                                    dict(ff_dim=5, **SMALL)])
def test_parameter_count_by_enumeration(kwargs):
    cfg = ModelConfig(**kwargs)
    model = build_model(cfg, 0)
    assert sum(p.data.size for p in model.parameters()) == parameter_count(cfg)
    assert len(model.named_parameters()) == len(model.parameters())


def test_dense_equals_rasa_on_full_graph_with_zero_bias():
    rng = np.random.default_rng(0)
    n = 6
    g = build_graph([(i, int(rng.integers(3)), j) for i in range(n) for j in range(n) if i != j], n, 3)
    ex = KHopExample(0, 2, (1, 0), ())
    rasa = build_model(ModelConfig(layer_count=2, **SMALL), 4)
    dense = build_model(ModelConfig(layer_count=2, variant="dense", **SMALL), 4)
    a, _ = forward(rasa, g, ex)
    b, _ = forward(dense, g, ex)
    assert np.array_equal(a.data, b.data)


def test_self_loops_only_isolation():
    g = build_graph([], 5, 3)
    model = build_model(ModelConfig(layer_count=2, **SMALL), 1)
    ex = KHopExample(0, 1, (2,), ())
    base, _ = forward(model, g, ex)
    model.entity_embeddings.data[[0, 2, 3, 4]] += 10.0
    moved, _ = forward(model, g, ex)
    assert moved.data[1] == base.data[1]
    assert np.all(moved.data[[0, 2, 3, 4]] != base.data[[0, 2, 3, 4]])


@pytest.mark.parametrize("seed", range(12))
def test_locality_ceiling(seed):
    rng = np.random.default_rng(seed)
    L = seed % 3 + 1
    n = 10
    g = random_graph(rng, n, 9, 3)
    model = build_model(ModelConfig(layer_count=L, **SMALL), seed)
    path = tuple(int(r) for r in rng.integers(3, size=L))
    t = int(rng.integers(n))
    far = [v for v in range(n) if undirected_distances(g, t).get(v, n + 1) > L]
    ex = KHopExample(0, int(rng.integers(n)), path, ())
    base, _ = forward(model, g, ex)
    model.entity_embeddings.data[far] += rng.normal(size=(len(far), 8)) * 3
    moved, _ = forward(model, g, ex)
    assert moved.data[t] == base.data[t]


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    n = 7
    g = random_graph(rng, n, 14, 3)
    perm = rng.permutation(n)
    pg = build_graph([(int(perm[h]), r, int(perm[t])) for h, r, t in g.edges], n, 3)
    model = build_model(ModelConfig(layer_count=2, **SMALL), 2)
    base, _ = forward(model, g, KHopExample(0, 3, (0, 2), ()))
    # move the entity embeddings along with the nodes
    emb = model.entity_embeddings.data.copy()
    model.entity_embeddings.data[perm] = emb[:n]
    moved, _ = forward(model, pg, KHopExample(0, int(perm[3]), (0, 2), ()))
    np.testing.assert_allclose(moved.data[perm], base.data, atol=1e-12)


def test_forward_shapes_and_traces(chain):
    model = build_model(ModelConfig(layer_count=3, **SMALL), 0)
    logits, traces = forward(model, chain, KHopExample(0, 0, (0,), ()))
    assert logits.shape == (3,)
    assert [t.layer_index for t in traces] == [0, 1, 2]
    assert traces[0].weights.shape == (2, 3, 3)
    assert np.all(traces[0].weights[:, 0, 2] == 0.0)


def test_forward_errors(chain):
    model = build_model(ModelConfig(layer_count=1, **SMALL), 0)
    with pytest.raises(IndexOutOfRange):
        forward(model, chain, KHopExample(0, 5, (0,), ()))
    with pytest.raises(IndexOutOfRange):
        forward(model, chain, KHopExample(0, 0, (7,), ()))
    with pytest.raises(IndexOutOfRange):
        forward(model, chain, KHopExample(0, 0, (), ()))
    with pytest.raises(IndexOutOfRange):
        forward(model, build_graph([], 13, 1), KHopExample(0, 0, (0,), ()))


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    graphs = [random_graph(rng, 6, 10, 3) for _ in range(3)]
    model = build_model(ModelConfig(layer_count=2, **SMALL), 0)
    paths = [(0, 1), (2, 2), (1, 0)]
    batch, _ = forward_batch(model, graphs, [0, 3, 5], paths)
    for b, (g, s, p) in enumerate(zip(graphs, [0, 3, 5], paths)):
        single, _ = forward(model, g, KHopExample(0, s, p, ()))
        np.testing.assert_allclose(batch.data[b], single.data, atol=1e-12)


def test_predict_answers():
    assert predict_answers(Tensor([0.1, 2.0, -1.0]), "top1") == {1}
    assert predict_answers(np.zeros(4), "top1") == {0}
    assert predict_answers(np.array([3.0, -3.0, 0.0001]), "threshold", 0.5) == {0, 2}


def test_loss_values():
    assert loss(Tensor([20.0, -20.0, 20.0]), {0, 2}).item() < 1e-6
    assert loss(Tensor(np.zeros(4)), {1}).item() == pytest.approx(np.log(2), abs=1e-15)
    with pytest.raises(EmptyGoldSet):
        loss(Tensor(np.zeros(3)), set())


def test_loss_gradient():
    p = Parameter("logits", np.random.default_rng(0).normal(size=6))
    assert finite_diff_check(lambda: loss(p, {1, 4}), p) <= 1e-4


def test_gradient_flow(chain):
    model = build_model(ModelConfig(layer_count=2, **SMALL), 0)
    seen = {p.name: False for p in model.parameters()}
    for ex in [KHopExample(0, 0, (0, 0), (2,)), KHopExample(0, 1, (0,), (2,)), KHopExample(0, 0, (1, 2), (1,))]:
        model.zero_grad()
        with GradientTape() as tape:
            logits, _ = forward(model, chain, ex)
            value = loss(logits, set(ex.answers))
        tape.backward(value)
        for p in model.parameters():
            seen[p.name] |= bool(np.any(p.grad != 0))
    # only the three chain entities are used; unused rows stay at zero gradient
    missing = [name for name, hit in seen.items() if not hit]
    assert missing == []


def test_dropout_only_in_training(chain):
    model = build_model(ModelConfig(layer_count=1, **{**SMALL, "dropout": 0.5}), 0)
    ex = KHopExample(0, 0, (0,), ())
    a, _ = forward(model, chain, ex)
    b, _ = forward(model, chain, ex, training=False, rng=np.random.default_rng(0))
    c, _ = forward(model, chain, ex, training=True, rng=np.random.default_rng(0))
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_save_load_roundtrip(tmp_path, chain):
    model = build_model(ModelConfig(layer_count=2, **SMALL), 5)
    model.bias_table.data[:] = np.arange(7.0)
    save_model(tmp_path, model)
    again = load_model(tmp_path)
    assert again.cfg == model.cfg
    for a, b in zip(model.parameters(), again.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
