"""Shared random-instance builders for the test suite."""

from __future__ import annotations

import numpy as np

from robustfsc.model import Fsc, Interval, RobustPomdp, prune_unreachable_nodes


def random_rpomdp(
    rng: np.random.Generator,
    num_states: int | None = None,
    num_actions: int | None = None,
    degenerate: bool = False,
    max_width: float = 0.5,
) -> RobustPomdp:
    """Dense random interval model with one absorbing goal state.

    Every non-goal row supports all states with positive lower bounds, so
    goals are reachable from everywhere and every member is proper.
    """
    ns = int(num_states if num_states is not None else rng.integers(2, 5))
    na = int(num_actions if num_actions is not None else rng.integers(1, 4))
    nz = int(rng.integers(1, ns + 1))
    goal = ns - 1
    obs_of = rng.integers(0, nz, size=ns)

    transitions = {}
    cost = {}
    for s in range(ns):
        for a in range(na):
            if s == goal:
                transitions[(s, a)] = {s: Interval(1.0, 1.0)}
                cost[(s, a)] = 0.0
                continue
            base = rng.dirichlet(np.ones(ns))
            base = np.maximum(base, 1e-3)
            base /= base.sum()
            row = {}
            for sp in range(ns):
                if degenerate:
                    row[sp] = Interval(float(base[sp]), float(base[sp]))
                else:
                    down = float(rng.uniform(0.0, max_width))
                    up = float(rng.uniform(0.0, max_width))
                    row[sp] = Interval(float(base[sp] * (1.0 - down)),
                                       float(min(1.0, base[sp] * (1.0 + up))))
            transitions[(s, a)] = row
            cost[(s, a)] = float(rng.uniform(0.5, 2.0))

    belief = rng.dirichlet(np.ones(ns))
    return RobustPomdp(
        num_states=ns, num_actions=na, num_observations=nz,
        obs_of=obs_of, transitions=transitions, cost=cost,
        goals=frozenset({goal}), initial_belief=belief,
    )


def random_fsc(rng: np.random.Generator, num_nodes: int, num_obs: int, num_actions: int) -> Fsc:
    """Random stochastic controller, pruned to its reachable nodes."""
    action_map = rng.dirichlet(np.ones(num_actions), size=(num_nodes, num_obs))
    memory_map = rng.integers(0, num_nodes, size=(num_nodes, num_obs))
    fsc = Fsc(num_nodes, 0, action_map, memory_map)
    return prune_unreachable_nodes(fsc, list(range(num_obs)))


def random_feasible_boxes(rng: np.random.Generator, n: int, degenerate: bool = False):
    """(lo, hi) arrays whose box intersects the simplex, all lo > 0."""
    base = np.maximum(rng.dirichlet(np.ones(n)), 1e-3)
    base /= base.sum()
    if degenerate:
        return base.copy(), base.copy()
    lo = base * (1.0 - rng.uniform(0.0, 0.9, size=n))
    hi = np.minimum(1.0, base * (1.0 + rng.uniform(0.0, 0.9, size=n)))
    return lo, hi
