"""Shared generators for solver tests: random instances, random small graphs,
and the pinned fixture where the greedy heuristic strictly trails the exact
solver."""
from __future__ import annotations

import numpy as np

from lineage_ilp.geometry import Mask
from lineage_ilp.graph import (
    Edge,
    MitosisSet,
    TrackingGraph,
    build_graph,
    enumerate_mitoses,
    enumerate_moves,
)
from lineage_ilp.proposals import Proposal
from lineage_ilp.solve import IlpInstance, LinearConstraint


def random_instance(rng: np.random.Generator, max_vars: int = 20) -> IlpInstance:
    """Random selection problem; the all-zeros point is always feasible."""
    n = int(rng.integers(4, max_vars + 1))
    costs = rng.uniform(-2.0, 2.0, size=n)
    cons: list[LinearConstraint] = []
    for _ in range(int(rng.integers(0, n))):
        i, j = rng.choice(n, size=2, replace=False)
        cons.append(LinearConstraint((int(min(i, j)), int(max(i, j))), (1, 1), "<=", 1))
    for _ in range(int(rng.integers(0, max(2, n // 3)))):
        size = int(rng.integers(1, 4))
        chosen = rng.choice(n, size=size + 1, replace=False)
        members, target = chosen[:-1], int(chosen[-1])
        cons.append(
            LinearConstraint(
                tuple(int(v) for v in members) + (target,),
                (1,) * size + (-1,),
                "==",
                0,
            )
        )
    for _ in range(int(rng.integers(0, 3))):
        k = int(rng.integers(2, 5))
        chosen = rng.choice(n, size=k, replace=False)
        split = int(rng.integers(1, k))
        cons.append(
            LinearConstraint(
                tuple(int(v) for v in chosen),
                (1,) * split + (-1,) * (k - split),
                "==",
                0,
            )
        )
    return IlpInstance(costs=costs, constraints=cons)


def _square(pid: int, t: int, x: int, y: int, size: int) -> Proposal:
    return Proposal(
        id=pid, t=t, mask=Mask(x, y, np.ones((size, size), bool)), raw_score=0.5
    )


def random_graph(rng: np.random.Generator) -> TrackingGraph:
    """Small two-frame graph whose instance stays within brute-force range."""
    shapes = [(2, 2), (1, 3), (3, 1), (2, 1)]
    n0, n1 = shapes[int(rng.integers(0, len(shapes)))]
    frames: list[list[Proposal]] = [[], []]
    pid = 0
    for t, count in ((0, n0), (1, n1)):
        for _ in range(count):
            x = int(rng.integers(0, 25))
            y = int(rng.integers(0, 25))
            size = int(rng.integers(1, 4))
            frames[t].append(_square(pid, t, x, y, size))
            pid += 1
    node_probs = {p.id: float(rng.uniform(0.05, 0.95)) for f in frames for p in f}
    moves = enumerate_moves(frames, gating_radius=100.0)
    move_probs = {
        (a.id, b.id): float(rng.uniform(0.05, 0.95)) for a, b in moves
    }
    triples = enumerate_mitoses(frames, mitosis_radius=100.0, n_neighbors=3)
    mitosis_probs = {
        (p.id, a.id, b.id): float(rng.uniform(0.05, 0.95)) for p, a, b in triples
    }
    return build_graph(
        frames,
        node_probs,
        move_probs,
        mitosis_probs,
        p_enter=float(rng.uniform(0.05, 0.5)),
        p_exit=float(rng.uniform(0.05, 0.5)),
    )


def strict_gap_graph() -> TrackingGraph:
    """One parent, two daughters.  The greedy pass commits the parent to the
    cheap move chain and can never recover the division, which the exact
    solver prefers: greedy lands at -12.6, the optimum is -15.7."""
    p = _square(0, 0, 5, 5, 1)
    d1 = _square(1, 1, 3, 8, 1)
    d2 = _square(2, 1, 8, 8, 1)
    edges = [
        Edge("enter", None, 0, 0.5, 0.1),
        Edge("enter", None, 1, 0.5, 0.1),
        Edge("enter", None, 2, 0.5, 0.1),
        Edge("move", 0, 1, 0.5, -1.0),
        Edge("exit", 0, None, 0.5, 0.1),
        Edge("exit", 1, None, 0.5, 0.1),
        Edge("exit", 2, None, 0.5, 0.1),
        Edge("mitosis", 0, 1, 0.5, -2.0, set_id=0, k=1),
        Edge("mitosis", 0, 2, 0.5, -2.0, set_id=0, k=2),
    ]
    return TrackingGraph(
        proposals=[p, d1, d2],
        node_prob={0: 0.5, 1: 0.5, 2: 0.5},
        node_cost={0: -4.0, 1: -4.0, 2: -4.0},
        edges=edges,
        conflicts=[],
        mitosis_sets=[MitosisSet(0, 0, 1, 2, 0.5)],
        n_frames=2,
    )
