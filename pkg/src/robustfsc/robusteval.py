"""Exact robust evaluation of a controller on the product chain.

The product of model states and controller nodes is an interval-weighted
Markov chain; its worst-case (or best-case) expected cost to the goal set is
the fixed point of sweeps whose inner step maximizes (minimizes) the expected
successor value over a box-constrained simplex.  That inner problem is solved
exactly by a greedy fill: start every probability at its lower bound and pour
the remaining budget into coordinates in value order.

Sweeps alone can stall when the controller carries near-zero action
probabilities (the chain then mixes at rate 1 - epsilon), so after the sweep
phase the fixed point is pinned down exactly: fix the adversary's greedy
member at the current values, solve that member chain's linear system, and
repeat until the greedy choice reproduces its own values.  Under interval
uncertainty the worst case is attained by a static member, so this
terminates at the exact robust value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix, identity
from scipy.sparse.linalg import spsolve

from robustfsc.model import ConcretePomdp, Fsc, Interval, RobustPomdp
from robustfsc.solvers import DivergenceError


@dataclass
class RobustChain:
    """Reachable product states with interval-weighted successor lists.

    Product states are materialized breadth-first from the support of the
    initial distribution; goal-product states are terminal (no successors,
    zero cost).  Successor weights merge all actions: the interval
    [sum_a delta(a) lo_a(s'), sum_a delta(a) hi_a(s')] per successor.
    """

    state_pairs: list[tuple[int, int]]
    index_of: dict[tuple[int, int], int]
    cost: np.ndarray          # (P,)
    is_goal: np.ndarray       # (P,) bool
    init_idx: np.ndarray      # product indices with initial mass
    init_prob: np.ndarray
    succ: np.ndarray          # (E,) successor product index
    lo: np.ndarray            # (E,)
    hi: np.ndarray            # (E,)
    offsets: np.ndarray       # (T+1,) edge runs per non-terminal state
    row_state: np.ndarray     # (T,) product index per non-terminal row

    @property
    def num_states(self) -> int:
        return len(self.state_pairs)


def build_chain(model: RobustPomdp, fsc: Fsc) -> RobustChain:
    """Product construction restricted to states reachable from the start."""
    if fsc.num_observations < model.num_observations:
        raise ValueError("controller does not cover the model's observations")
    if fsc.num_actions != model.num_actions:
        raise ValueError("controller and model disagree on the action count")

    index_of: dict[tuple[int, int], int] = {}
    state_pairs: list[tuple[int, int]] = []

    def intern(pair: tuple[int, int]) -> int:
        if pair not in index_of:
            index_of[pair] = len(state_pairs)
            state_pairs.append(pair)
        return index_of[pair]

    for s in np.flatnonzero(model.initial_belief):
        intern((int(s), fsc.initial_node))

    rows: dict[int, tuple[float, dict[int, list[float]]]] = {}
    i = 0
    while i < len(state_pairs):
        idx = i
        s, n = state_pairs[i]
        i += 1
        if s in model.goals:
            continue
        z = int(model.obs_of[s])
        n_next = int(fsc.memory_map[n, z])
        weights: dict[int, list[float]] = {}
        cost = 0.0
        for a in range(model.num_actions):
            d = float(fsc.action_map[n, z, a])
            if d == 0.0:
                continue
            cost += d * model.cost[(s, a)]
            for sp, iv in model.row(s, a).items():
                w = weights.setdefault(sp, [0.0, 0.0])
                w[0] += d * iv.lo
                w[1] += d * iv.hi
        for sp in weights:
            intern((sp, n_next))
        rows[idx] = (cost, weights)

    num = len(state_pairs)
    cost_arr = np.zeros(num)
    is_goal = np.zeros(num, dtype=bool)
    succ: list[int] = []
    lo: list[float] = []
    hi: list[float] = []
    offsets = [0]
    row_state: list[int] = []
    for idx, (s, n) in enumerate(state_pairs):
        if s in model.goals:
            is_goal[idx] = True
            continue
        c, weights = rows[idx]
        cost_arr[idx] = c
        z = int(model.obs_of[s])
        n_next = int(fsc.memory_map[n, z])
        row_state.append(idx)
        for sp in sorted(weights):
            succ.append(index_of[(sp, n_next)])
            lo.append(weights[sp][0])
            hi.append(weights[sp][1])
        offsets.append(len(succ))

    init_idx = np.array(
        [index_of[(int(s), fsc.initial_node)] for s in np.flatnonzero(model.initial_belief)],
        dtype=np.int64,
    )
    init_prob = model.initial_belief[np.flatnonzero(model.initial_belief)].astype(np.float64)
    return RobustChain(
        state_pairs=state_pairs,
        index_of=index_of,
        cost=cost_arr,
        is_goal=is_goal,
        init_idx=init_idx,
        init_prob=init_prob,
        succ=np.asarray(succ, dtype=np.int64),
        lo=np.asarray(lo, dtype=np.float64),
        hi=np.asarray(hi, dtype=np.float64),
        offsets=np.asarray(offsets, dtype=np.int64),
        row_state=np.asarray(row_state, dtype=np.int64),
    )


def inner_max(values: np.ndarray, intervals: list[Interval]) -> tuple[float, np.ndarray]:
    """Maximize sum p_i values_i over the box-constrained simplex, exactly.

    Greedy: start each p_i at its lower bound, then raise coordinates to
    their upper bounds in order of decreasing value (ties to the lowest
    index) until the total reaches one.
    """
    return _inner(values, intervals, maximize=True)


def inner_min(values: np.ndarray, intervals: list[Interval]) -> tuple[float, np.ndarray]:
    """Best-case counterpart of inner_max (budget poured into low values)."""
    return _inner(values, intervals, maximize=False)


def _inner(values: np.ndarray, intervals: list[Interval], maximize: bool) -> tuple[float, np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    lo = np.array([iv.lo for iv in intervals])
    hi = np.array([iv.hi for iv in intervals])
    budget = 1.0 - lo.sum()
    if budget < -1e-12 or hi.sum() < 1.0 - 1e-12:
        raise ValueError("box does not intersect the probability simplex")
    p = lo.copy()
    order = np.argsort(-values if maximize else values, kind="stable")
    for i in order:
        if budget <= 0.0:
            break
        add = min(hi[i] - lo[i], budget)
        p[i] += add
        budget -= add
    return float(p @ values), p


@dataclass
class RobustValues:
    """Fixed point of the robust sweeps plus the chain it was computed on."""

    chain: RobustChain
    values: np.ndarray
    at_initial: float
    mode: str
    sweeps: int
    diagnosis: str = ""

    def value_of(self, s: int, n: int) -> float:
        return float(self.values[self.chain.index_of[(s, n)]])


def _goal_reaching_closure(chain: RobustChain) -> np.ndarray:
    """Product states that can reach a goal through the support graph."""
    preds: dict[int, list[int]] = {}
    for row, idx in enumerate(chain.row_state):
        for e in range(chain.offsets[row], chain.offsets[row + 1]):
            preds.setdefault(int(chain.succ[e]), []).append(int(idx))
    closure = chain.is_goal.copy()
    frontier = list(np.flatnonzero(chain.is_goal))
    while frontier:
        tgt = int(frontier.pop())
        for p in preds.get(tgt, ()):
            if not closure[p]:
                closure[p] = True
                frontier.append(p)
    return closure


def _infinite_set(chain: RobustChain) -> np.ndarray:
    """States whose worst/best case cost is infinite.

    A state that cannot reach a goal through the support graph never
    terminates; because every stored edge has a positive lower bound, any
    state that can reach such a state hits it with positive probability
    under every resolution of the intervals, in both modes.
    """
    cannot_finish = ~_goal_reaching_closure(chain)
    preds: dict[int, list[int]] = {}
    for row, idx in enumerate(chain.row_state):
        for e in range(chain.offsets[row], chain.offsets[row + 1]):
            preds.setdefault(int(chain.succ[e]), []).append(int(idx))
    infinite = cannot_finish.copy()
    frontier = list(np.flatnonzero(cannot_finish))
    while frontier:
        tgt = int(frontier.pop())
        for p in preds.get(tgt, ()):
            if not infinite[p]:
                infinite[p] = True
                frontier.append(p)
    return infinite


class _SweepEngine:
    """Vectorized greedy backup over the finite rows of a chain."""

    def __init__(self, chain: RobustChain, finite_rows: np.ndarray, maximize: bool):
        self.chain = chain
        self.maximize = maximize
        self.rows = finite_rows  # indices into chain.row_state
        edge_ids = np.concatenate(
            [np.arange(chain.offsets[r], chain.offsets[r + 1]) for r in finite_rows]
        ) if len(finite_rows) else np.zeros(0, dtype=np.int64)
        self.edge_ids = edge_ids
        self.succ = chain.succ[edge_ids]
        self.lo = chain.lo[edge_ids]
        self.hi = chain.hi[edge_ids]
        self.counts = (chain.offsets[finite_rows + 1] - chain.offsets[finite_rows]) \
            if len(finite_rows) else np.zeros(0, dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(np.int64) \
            if len(finite_rows) else np.zeros(0, dtype=np.int64)
        self.seg = np.repeat(np.arange(len(finite_rows)), self.counts)
        self.slack = self.hi - self.lo
        self.budget = 1.0 - np.add.reduceat(self.lo, self.starts) if len(finite_rows) else np.zeros(0)
        self.states = chain.row_state[finite_rows]

    def greedy(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-row optimal objective and the member probabilities per edge."""
        if not len(self.rows):
            return np.zeros(0), np.zeros(0)
        vals = v[self.succ]
        order = np.lexsort((-vals if self.maximize else vals, self.seg))
        slack = self.slack[order]
        excl = np.cumsum(slack) - slack
        cum_before = excl - np.repeat(excl[self.starts], self.counts)
        alloc = np.clip(np.repeat(self.budget, self.counts) - cum_before, 0.0, slack)
        p_sorted = self.lo[order] + alloc
        objective = np.add.reduceat(p_sorted * vals[order], self.starts)
        p = np.empty_like(p_sorted)
        p[order] = p_sorted
        return objective, p


def robust_value_iteration(
    chain: RobustChain,
    mode: str = "pessimistic",
    tol: float = 1e-6,
    max_sweeps: int = 100_000,
) -> RobustValues:
    """Exact fixed point of v <- cost + inner opt over each interval row.

    Jacobi sweeps from v = 0 (monotone, order-independent) run until the
    sup-norm change drops below tol or the sweep budget is exhausted; the
    result is then refined to the exact fixed point by alternating greedy
    member selection with exact linear solves of the selected member chain.
    States with an infinite worst case (goal unreachable through the support
    graph) are reported as +inf with a diagnosis rather than an error.
    """
    if mode not in ("pessimistic", "optimistic"):
        raise ValueError(f"mode must be 'pessimistic' or 'optimistic', got {mode!r}")
    maximize = mode == "pessimistic"
    num = chain.num_states
    infinite = _infinite_set(chain)
    diagnosis = ""
    if infinite.any():
        diagnosis = (
            f"{int(infinite.sum())} reachable product state(s) cannot reach a goal "
            "under the support graph; worst-case cost is infinite"
        )

    finite_rows = np.array(
        [r for r, idx in enumerate(chain.row_state) if not infinite[idx]], dtype=np.int64
    )
    engine = _SweepEngine(chain, finite_rows, maximize)
    v = np.zeros(num)
    v[infinite] = np.inf

    sweeps = 0
    sweep_budget = min(max_sweeps, 2000)
    while sweeps < sweep_budget and len(finite_rows):
        sweeps += 1
        objective, _ = engine.greedy(v)
        v_new = v.copy()
        v_new[engine.states] = chain.cost[engine.states] + objective
        change = np.max(np.abs(v_new[engine.states] - v[engine.states]), initial=0.0)
        v = v_new
        if change < tol:
            break

    # exact refinement: nature policy iteration over static members
    transient = engine.states
    tmap = {int(idx): t for t, idx in enumerate(transient)}
    refinements = 0
    for _ in range(100):
        if not len(finite_rows):
            break
        objective, p = engine.greedy(v)
        backup = chain.cost[transient] + objective
        residual = np.max(np.abs(backup - v[transient]), initial=0.0)
        scale = max(1.0, float(np.max(np.abs(v[transient]), initial=0.0)))
        if refinements > 0 and residual <= 1e-9 * scale:
            break
        refinements += 1
        rows_i: list[int] = []
        cols_i: list[int] = []
        data: list[float] = []
        for t in range(len(transient)):
            for k in range(engine.starts[t], engine.starts[t] + engine.counts[t]):
                target = int(engine.succ[k])
                if target in tmap:
                    rows_i.append(t)
                    cols_i.append(tmap[target])
                    data.append(float(p[k]))
        size = len(transient)
        p_mat = csr_matrix((data, (rows_i, cols_i)), shape=(size, size))
        solved = spsolve(identity(size, format="csr") - p_mat, chain.cost[transient])
        v[transient] = np.asarray(solved).reshape(-1)
    else:
        raise DivergenceError("robust evaluation failed to stabilize after 100 refinements")

    at_init = float(chain.init_prob @ v[chain.init_idx])
    return RobustValues(
        chain=chain, values=v, at_initial=at_init, mode=mode,
        sweeps=sweeps + refinements, diagnosis=diagnosis,
    )


def concrete_to_robust(member: ConcretePomdp) -> RobustPomdp:
    """View a concrete instance as a degenerate interval model."""
    transitions = {
        key: {sp: Interval(p, p) for sp, p in row.items()}
        for key, row in member.transitions.items()
    }
    return RobustPomdp(
        num_states=member.num_states,
        num_actions=member.num_actions,
        num_observations=member.num_observations,
        obs_of=member.obs_of.copy(),
        transitions=transitions,
        cost=dict(member.cost),
        goals=member.goals,
        initial_belief=member.initial_belief.copy(),
        name=member.name,
    )


def evaluate_member(member: ConcretePomdp, fsc: Fsc, tol: float = 1e-9) -> float:
    """Expected cost of the controller on one concrete instance."""
    chain = build_chain(concrete_to_robust(member), fsc)
    return robust_value_iteration(chain, "pessimistic", tol=tol).at_initial
