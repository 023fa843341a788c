import itertools

import numpy as np
import pytest

from rasakit.graph import build_graph


def random_graph(rng, n, m, num_relations=1, allow_self_loops=False):
    """Up to m distinct random typed edges on n nodes."""
    edges = set()
    for _ in range(4 * m):
        if len(edges) >= m:
            break
        h, t = int(rng.integers(n)), int(rng.integers(n))
        if h == t and not allow_self_loops:
            continue
        edges.add((h, int(rng.integers(num_relations)), t))
    return build_graph(sorted(edges), n, num_relations)


def brute_force_typed_walks(g, source, path):
    """End points of every node sequence that matches ``path`` edge by edge."""
    edges = set(g.edges)
    ends = set()
    for seq in itertools.product(range(g.num_entities), repeat=len(path)):
        nodes = (source,) + seq
        if all((nodes[i], r, nodes[i + 1]) in edges for i, r in enumerate(path)):
            ends.add(seq[-1])
    return ends


@pytest.fixture
def chain():
    # 0 -r0-> 1 -r0-> 2
    return build_graph([(0, 0, 1), (1, 0, 2)], 3, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str = "", status: str | None = None) -> bool:
    status = status or ("PASS" if ok else "FAIL")
    ACCEPTANCE_LINES.append(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
