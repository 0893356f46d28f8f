import numpy as np
import pytest

from conftest import random_feasible_boxes, random_fsc, random_rpomdp
from oracles import box_simplex_opt, product_chain_cost
from robustfsc.model import Fsc, Interval, RobustPomdp, nominal_midpoint, project_row, sample_member
from robustfsc.robusteval import (
    build_chain,
    evaluate_member,
    inner_max,
    inner_min,
    robust_value_iteration,
)

def self_loop_model():
    """State 0 loops with p in [0.4, 0.6] or advances to the goal, cost 1."""
    return RobustPomdp(
        num_states=2, num_actions=1, num_observations=2,
        obs_of=np.array([0, 1]),
        transitions={(0, 0): {0: Interval(0.4, 0.6), 1: Interval(0.4, 0.6)},
                     (1, 0): {1: Interval(1.0, 1.0)}},
        cost={(0, 0): 1.0, (1, 0): 0.0},
        goals=frozenset({1}),
        initial_belief=np.array([1.0, 0.0]),
    )


def dirac_fsc(num_obs, num_actions, action=0):
    table = np.zeros((1, num_obs, num_actions))
    table[0, :, action] = 1.0
    return Fsc(1, 0, table, np.zeros((1, num_obs), dtype=int))


class TestInnerProblems:
    def test_caps_best_coordinate(self):
        obj, p = inner_max(np.array([0.0, 0.0, 1.0]), [Interval(0.2, 0.5)] * 3)
        assert obj == pytest.approx(0.5, abs=1e-12)
        assert np.allclose(p, [0.3, 0.2, 0.5])

    def test_point_intervals_give_expectation(self):
        vals = np.array([1.0, 2.0, 3.0])
        ivs = [Interval(0.2, 0.2), Interval(0.3, 0.3), Interval(0.5, 0.5)]
        obj, p = inner_max(vals, ivs)
        assert obj == pytest.approx(float(np.array([0.2, 0.3, 0.5]) @ vals), abs=1e-15)

    def test_matches_vertex_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(300):
            n = int(rng.integers(2, 7))
            lo, hi = random_feasible_boxes(rng, n)
            vals = rng.uniform(-10, 10, size=n)
            ivs = [Interval(float(a), float(b)) for a, b in zip(lo, hi)]
            obj_max, p_max = inner_max(vals, ivs)
            obj_min, p_min = inner_min(vals, ivs)
            assert obj_max == pytest.approx(box_simplex_opt(vals, lo, hi, True), abs=1e-12)
            assert obj_min == pytest.approx(box_simplex_opt(vals, lo, hi, False), abs=1e-12)
            for p in (p_max, p_min):
                assert abs(p.sum() - 1.0) < 1e-12
                assert np.all(p >= lo - 1e-12) and np.all(p <= hi + 1e-12)

    def test_dominates_random_feasible_points(self):
        rng = np.random.default_rng(22)
        for _ in range(5):
            n = int(rng.integers(2, 6))
            lo, hi = random_feasible_boxes(rng, n)
            ivs = [Interval(float(a), float(b)) for a, b in zip(lo, hi)]
            vals = rng.uniform(-5, 5, size=n)
            obj, _ = inner_max(vals, ivs)
            samples = rng.uniform(lo, hi, size=(10_000, n))
            for q in samples:
                feasible = project_row(q, ivs)
                assert feasible @ vals <= obj + 1e-9

    def test_infeasible_box_raises(self):
        with pytest.raises(ValueError):
            inner_max(np.array([1.0, 1.0]), [Interval(0.6, 0.7), Interval(0.6, 0.7)])


class TestBuildChain:
    def test_dirac_controller_embeds_model_rows(self):
        model = self_loop_model()
        chain = build_chain(model, dirac_fsc(2, 1))
        idx = chain.index_of[(0, 0)]
        row = {int(chain.succ[e]): (chain.lo[e], chain.hi[e])
               for e in range(chain.offsets[0], chain.offsets[1])}
        assert row[chain.index_of[(0, 0)]] == (0.4, 0.6)
        assert row[chain.index_of[(1, 0)]] == (0.4, 0.6)
        assert chain.cost[idx] == 1.0

    def test_uniform_mix_of_point_rows(self):
        model = RobustPomdp(
            num_states=3, num_actions=2, num_observations=1,
            obs_of=np.zeros(3, dtype=int),
            transitions={
                (0, 0): {1: Interval(0.8, 0.8), 2: Interval(0.2, 0.2)},
                (0, 1): {1: Interval(0.4, 0.4), 2: Interval(0.6, 0.6)},
                (1, 0): {2: Interval(1.0, 1.0)}, (1, 1): {2: Interval(1.0, 1.0)},
                (2, 0): {2: Interval(1.0, 1.0)}, (2, 1): {2: Interval(1.0, 1.0)},
            },
            cost={(0, 0): 1.0, (0, 1): 3.0, (1, 0): 1.0, (1, 1): 1.0, (2, 0): 0.0, (2, 1): 0.0},
            goals=frozenset({2}),
            initial_belief=np.array([1.0, 0.0, 0.0]),
        )
        uniform = Fsc(1, 0, np.full((1, 1, 2), 0.5), np.zeros((1, 1), dtype=int))
        chain = build_chain(model, uniform)
        row = {int(chain.succ[e]): (chain.lo[e], chain.hi[e])
               for e in range(chain.offsets[0], chain.offsets[1])}
        assert row[chain.index_of[(1, 0)]] == (pytest.approx(0.6), pytest.approx(0.6))
        assert row[chain.index_of[(2, 0)]] == (pytest.approx(0.4), pytest.approx(0.4))
        assert chain.cost[chain.index_of[(0, 0)]] == pytest.approx(2.0)

    def test_matches_hand_built_product(self):
        rng = np.random.default_rng(23)
        model = random_rpomdp(rng, num_states=3, num_actions=2)
        fsc = random_fsc(rng, 2, model.num_observations, 2)
        chain = build_chain(model, fsc)
        # hand-built product over the same reachable pairs
        for idx, (s, n) in enumerate(chain.state_pairs):
            if s in model.goals:
                assert chain.is_goal[idx]
                continue
            z = int(model.obs_of[s])
            n2 = int(fsc.memory_map[n, z])
            expect_lo: dict[int, float] = {}
            expect_hi: dict[int, float] = {}
            expect_cost = 0.0
            for a in range(model.num_actions):
                d = float(fsc.action_map[n, z, a])
                expect_cost += d * model.cost[(s, a)]
                for sp, iv in model.transitions[(s, a)].items():
                    expect_lo[sp] = expect_lo.get(sp, 0.0) + d * iv.lo
                    expect_hi[sp] = expect_hi.get(sp, 0.0) + d * iv.hi
            row_pos = int(np.flatnonzero(chain.row_state == idx)[0])
            got = {int(chain.succ[e]): (chain.lo[e], chain.hi[e])
                   for e in range(chain.offsets[row_pos], chain.offsets[row_pos + 1])}
            assert chain.cost[idx] == pytest.approx(expect_cost, abs=1e-12)
            for sp, lo_val in expect_lo.items():
                got_lo, got_hi = got[chain.index_of[(sp, n2)]]
                assert got_lo == pytest.approx(lo_val, abs=1e-12)
                assert got_hi == pytest.approx(expect_hi[sp], abs=1e-12)

    def test_interval_sums_bracket_one(self):
        rng = np.random.default_rng(24)
        for _ in range(20):
            model = random_rpomdp(rng)
            fsc = random_fsc(rng, 2, model.num_observations, model.num_actions)
            chain = build_chain(model, fsc)
            for row_pos in range(len(chain.row_state)):
                sl = slice(chain.offsets[row_pos], chain.offsets[row_pos + 1])
                assert chain.lo[sl].sum() <= 1.0 + 1e-9
                assert chain.hi[sl].sum() >= 1.0 - 1e-9


def test_vectorized_sweep_matches_per_state_inner_opt():
    # the sweep engine must reproduce the standalone greedy row by row
    from robustfsc.robusteval import _SweepEngine

    rng = np.random.default_rng(77)
    for maximize in (True, False):
        for _ in range(10):
            model = random_rpomdp(rng)
            fsc = random_fsc(rng, 2, model.num_observations, model.num_actions)
            chain = build_chain(model, fsc)
            finite_rows = np.arange(len(chain.row_state))
            engine = _SweepEngine(chain, finite_rows, maximize)
            v = rng.uniform(0.0, 10.0, size=chain.num_states)
            objective, probs = engine.greedy(v)
            for r in range(len(chain.row_state)):
                sl = slice(chain.offsets[r], chain.offsets[r + 1])
                ivs = [Interval(float(a), float(b)) for a, b in zip(chain.lo[sl], chain.hi[sl])]
                vals = v[chain.succ[sl]]
                opt = inner_max(vals, ivs) if maximize else inner_min(vals, ivs)
                assert objective[r] == pytest.approx(opt[0], abs=1e-12)
                assert np.allclose(probs[sl], opt[1], atol=1e-12)


class TestRobustValueIteration:
    def test_worst_case_self_loop_closed_form(self):
        chain = build_chain(self_loop_model(), dirac_fsc(2, 1))
        pess = robust_value_iteration(chain, "pessimistic", tol=1e-12)
        opt = robust_value_iteration(chain, "optimistic", tol=1e-12)
        assert pess.at_initial == pytest.approx(2.5, abs=1e-6)   # v = 1 + 0.6 v
        assert opt.at_initial == pytest.approx(1.0 / 0.6, abs=1e-6)

    def test_one_step_goal(self):
        model = RobustPomdp(
            num_states=2, num_actions=1, num_observations=2,
            obs_of=np.array([0, 1]),
            transitions={(0, 0): {1: Interval(1.0, 1.0)}, (1, 0): {1: Interval(1.0, 1.0)}},
            cost={(0, 0): 4.5, (1, 0): 0.0},
            goals=frozenset({1}),
            initial_belief=np.array([1.0, 0.0]),
        )
        values = robust_value_iteration(build_chain(model, dirac_fsc(2, 1)), tol=1e-12)
        assert values.at_initial == pytest.approx(4.5, abs=1e-9)
        assert values.value_of(1, 0) == 0.0

    def test_point_chain_matches_linear_solve(self):
        rng = np.random.default_rng(25)
        for _ in range(10):
            model = random_rpomdp(rng, degenerate=True)
            fsc = random_fsc(rng, 2, model.num_observations, model.num_actions)
            member = nominal_midpoint(model)
            ours = evaluate_member(member, fsc, tol=1e-12)
            oracle = product_chain_cost(member, fsc)
            assert ours == pytest.approx(oracle, abs=1e-6)

    def test_monotone_iterates(self):
        # iterates from v = 0 only grow, so values at tighter tolerances
        # (more sweeps) dominate values at looser ones pointwise
        rng = np.random.default_rng(26)
        model = random_rpomdp(rng, num_states=4, num_actions=2)
        fsc = random_fsc(rng, 2, model.num_observations, model.num_actions)
        chain = build_chain(model, fsc)
        prev = np.zeros(chain.num_states)
        for tol in (1.0, 0.3, 0.1, 0.01, 1e-4, 1e-8, 1e-12):
            vals = robust_value_iteration(chain, "pessimistic", tol=tol)
            assert np.all(vals.values >= prev - 1e-12)
            prev = vals.values

    def test_degenerate_intervals_collapse_modes(self):
        rng = np.random.default_rng(27)
        for _ in range(5):
            model = random_rpomdp(rng, degenerate=True)
            fsc = random_fsc(rng, 2, model.num_observations, model.num_actions)
            chain = build_chain(model, fsc)
            pess = robust_value_iteration(chain, "pessimistic", tol=1e-10)
            opt = robust_value_iteration(chain, "optimistic", tol=1e-10)
            exact = product_chain_cost(nominal_midpoint(model), fsc)
            assert pess.at_initial == pytest.approx(exact, abs=1e-6)
            assert opt.at_initial == pytest.approx(exact, abs=1e-6)

    def test_conservative_bounds_on_sampled_members(self):
        rng = np.random.default_rng(28)
        for _ in range(10):
            model = random_rpomdp(rng)
            fsc = random_fsc(rng, 2, model.num_observations, model.num_actions)
            chain = build_chain(model, fsc)
            pess = robust_value_iteration(chain, "pessimistic", tol=1e-12).at_initial
            opt = robust_value_iteration(chain, "optimistic", tol=1e-12).at_initial
            for k in range(100):
                member = sample_member(model, int(rng.integers(1 << 30)))
                value = product_chain_cost(member, fsc)
                assert value <= pess + 1e-8
                assert value >= opt - 1e-8

    def test_epsilon_probability_chain_solves_exactly(self):
        # an almost-never-terminating controller: pure sweeps would need
        # ~1/eps iterations, the member-solve refinement is exact and fast
        import time

        eps = 1e-9
        model = RobustPomdp(
            num_states=2, num_actions=2, num_observations=2,
            obs_of=np.array([0, 1]),
            transitions={
                (0, 0): {1: Interval(1.0, 1.0)},      # finish, cost 1
                (0, 1): {0: Interval(1.0, 1.0)},      # dawdle forever
                (1, 0): {1: Interval(1.0, 1.0)},
                (1, 1): {1: Interval(1.0, 1.0)},
            },
            cost={(0, 0): 1.0, (0, 1): 1.0, (1, 0): 0.0, (1, 1): 0.0},
            goals=frozenset({1}),
            initial_belief=np.array([1.0, 0.0]),
        )
        table = np.zeros((1, 2, 2))
        table[0, :, 0] = eps
        table[0, :, 1] = 1.0 - eps
        fsc = Fsc(1, 0, table, np.zeros((1, 2), dtype=int))
        start = time.perf_counter()
        values = robust_value_iteration(build_chain(model, fsc), tol=1e-6)
        elapsed = time.perf_counter() - start
        # v = 1 + (1 - eps) v  =>  v = 1 / eps; the linear system has
        # condition ~ 1/eps, so float64 can only pin it to ~1e9 * 2e-16
        assert values.at_initial == pytest.approx(1.0 / eps, rel=1e-6)
        assert elapsed < 2.0

    def test_benchmark_scale_against_dense_solve(self):
        # 4x4 pursuit model x 2-node controller: the full pipeline value
        # must match an independent dense-solve product construction on
        # members, and dominate them in the interval model
        from conftest import random_fsc as _random_fsc

        from robustfsc.grids import GridSpec, generate_grid

        model = generate_grid(GridSpec(4, 4, "intercept"))
        rng = np.random.default_rng(55)
        fsc = _random_fsc(rng, 2, model.num_observations, model.num_actions)
        pess = robust_value_iteration(build_chain(model, fsc), tol=1e-9)
        for seed in range(3):
            member = sample_member(model, seed)
            ours = evaluate_member(member, fsc, tol=1e-9)
            oracle = product_chain_cost(member, fsc)
            assert ours == pytest.approx(oracle, rel=1e-9, abs=1e-9)
            assert ours <= pess.at_initial + 1e-8

    def test_unreachable_goal_reports_infinite(self):
        model = RobustPomdp(
            num_states=3, num_actions=1, num_observations=3,
            obs_of=np.arange(3),
            transitions={(0, 0): {0: Interval(1.0, 1.0)},
                         (1, 0): {2: Interval(1.0, 1.0)},
                         (2, 0): {2: Interval(1.0, 1.0)}},
            cost={(0, 0): 1.0, (1, 0): 1.0, (2, 0): 0.0},
            goals=frozenset({2}),
            initial_belief=np.array([0.5, 0.5, 0.0]),
        )
        values = robust_value_iteration(build_chain(model, dirac_fsc(3, 1)))
        assert np.isinf(values.at_initial)
        assert "cannot reach a goal" in values.diagnosis
        assert values.value_of(1, 0) == pytest.approx(1.0, abs=1e-6)
