import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from highway.mdp import (PolicySet, deterministic_policy, epsilon_greedy, greedy_policy,
                         q_pi_oracle, q_star_oracle, random_mdp, uniform_policy)
from highway.operators import (HighwayConfig, LookaheadSet, bellman_expectation,
                               bellman_optimality, broken_gate_variant, distance_pointwise,
                               distance_sup, fixed_point, gate_choices, highway_generalized,
                               highway_optimality, highway_softmax, multistep_bo,
                               n_step_return_operator, smax)


def random_case(seed, S=5, A=3, num_policies=3, max_depth=6):
    rng = np.random.default_rng(seed)
    gamma = float(rng.uniform(0.5, 0.95))
    mdp = random_mdp(rng, S, A, gamma)
    pols = tuple(epsilon_greedy(rng.normal(size=(S, A)), float(rng.uniform(0.05, 1)))
                 for _ in range(num_policies))
    depths = tuple(sorted(rng.choice(np.arange(1, max_depth + 1), size=3, replace=False)))
    return rng, mdp, PolicySet(pols), LookaheadSet(depths)


def cfg_for(pset, la, **kw):
    return HighwayConfig(pset, la, **kw)


def fork_cfg(tf, depths, **kw):
    return HighwayConfig(PolicySet(tf.policies), LookaheadSet(tuple(depths)), **kw)


class TestBellman:
    def test_gamma_zero_gives_reward(self, rng):
        mdp = random_mdp(rng, 4, 2, 0.0)
        q = rng.normal(size=(4, 2))
        np.testing.assert_allclose(bellman_optimality(mdp, q), mdp.reward)
        np.testing.assert_allclose(bellman_expectation(mdp, uniform_policy(4, 2), q), mdp.reward)

    def test_two_state_one_step(self, two_state):
        out = bellman_optimality(two_state, np.zeros((2, 2)))
        assert out[0, 1] == 1.0 and out[0, 0] == 0.0

    def test_two_state_fixed_point(self, two_state):
        q = q_star_oracle(two_state)
        np.testing.assert_allclose(bellman_optimality(two_state, q), q, atol=1e-12)

    def test_terminal_rows_zero(self, two_state):
        out = bellman_optimality(two_state, np.full((2, 2), 7.0))
        assert np.all(out[1] == 0.0)

    def test_greedy_expectation_equals_optimality(self, rng):
        mdp = random_mdp(rng, 6, 3, 0.9)
        q = rng.normal(size=(6, 3))
        np.testing.assert_allclose(bellman_expectation(mdp, greedy_policy(q), q),
                                   bellman_optimality(mdp, q), atol=1e-12)

    def test_deterministic_expectation(self, threefork):
        mdp = threefork.mdp
        q = np.random.default_rng(0).normal(size=(mdp.num_states, mdp.num_actions))
        acts = threefork.blue.argmax(axis=1)
        out = bellman_expectation(mdp, threefork.blue, q)
        for s in range(mdp.num_states):
            if mdp.terminal[s]:
                continue
            for a in range(mdp.num_actions):
                nxt = int(mdp.transition[s, a].argmax())
                cont = 0.0 if mdp.terminal[nxt] else q[nxt, acts[nxt]]
                assert out[s, a] == pytest.approx(mdp.reward[s, a] + cont)


class TestNStep:
    def test_n1_is_bellman(self, rng):
        mdp = random_mdp(rng, 5, 2, 0.8)
        q = rng.normal(size=(5, 2))
        pi = uniform_policy(5, 2)
        np.testing.assert_array_equal(n_step_return_operator(mdp, pi, 1, q),
                                      bellman_optimality(mdp, q))

    def test_below_q_star(self, rng):
        mdp = random_mdp(rng, 6, 3, 0.9)
        qs = q_star_oracle(mdp)
        for n in (1, 2, 5, 20):
            pi = rng.dirichlet(np.ones(3), size=6)
            assert np.all(n_step_return_operator(mdp, pi, n, qs) <= qs + 1e-9)

    def test_explicit_composition(self, rng):
        mdp = random_mdp(rng, 5, 3, 0.7)
        q = rng.normal(size=(5, 3))
        pi = rng.dirichlet(np.ones(3), size=5)
        expect = bellman_optimality(mdp, q)
        for _ in range(3):
            expect = bellman_expectation(mdp, pi, expect)
        np.testing.assert_allclose(n_step_return_operator(mdp, pi, 4, q), expect)

    def test_rejects_zero(self, two_state):
        with pytest.raises(ValueError):
            n_step_return_operator(two_state, uniform_policy(2, 2), 0, np.zeros((2, 2)))

    def test_threefork_red_two_steps(self, threefork):
        # enumerate red's deterministic path by hand: r(S_A, up) + r(s1, red(s1)) + max Q*(s2)
        mdp = threefork.mdp
        qs = q_star_oracle(mdp)
        s0 = threefork.start
        s1 = int(mdp.transition[s0, 0].argmax())
        a1 = int(threefork.red[s1].argmax())
        s2 = int(mdp.transition[s1, a1].argmax())
        cont = 0.0 if mdp.terminal[s2] else qs[s2].max()
        expect = mdp.reward[s0, 0] + mdp.reward[s1, a1] + cont
        got = n_step_return_operator(mdp, threefork.red, 2, qs)[s0, 0]
        assert got == pytest.approx(expect)
        assert got == pytest.approx(-9.0)


class TestMultistepBo:
    def test_depth_one_is_bellman(self, rng):
        _, mdp, pset, _ = random_case(1)
        q = rng.normal(size=(5, 3))
        out = multistep_bo(mdp, cfg_for(pset, LookaheadSet((1,))), q)
        np.testing.assert_allclose(out, bellman_optimality(mdp, q), atol=1e-12)

    def test_threefork_depth_limit(self, threefork):
        mdp, s = threefork.mdp, threefork.start
        rep = fixed_point(lambda q: multistep_bo(mdp, fork_cfg(threefork, [200]), q),
                          np.zeros((mdp.num_states, 2)))
        assert rep.converged
        target = np.mean([q_pi_oracle(mdp, pi) for pi in threefork.policies], axis=0)
        assert rep.q[s, 0] == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(rep.q[~mdp.terminal], target[~mdp.terminal], atol=1e-6)

    def test_threefork_depth_two_underestimates(self, threefork):
        mdp, s = threefork.mdp, threefork.start
        rep = fixed_point(lambda q: multistep_bo(mdp, fork_cfg(threefork, [2]), q),
                          np.zeros((mdp.num_states, 2)))
        assert rep.q[s, 0] < 9.0
        assert rep.q[s, 0] == pytest.approx(3.0)
        assert rep.q[s].argmax() == 1

    def test_depth_monotonicity_divisor_chain(self, threefork):
        mdp = threefork.mdp
        qs = q_star_oracle(mdp)
        for pi in threefork.policies:
            fps = {}
            for n in (2, 4, 8):
                cfg = HighwayConfig(PolicySet((pi,)), LookaheadSet((n,)))
                fps[n] = fixed_point(lambda q: multistep_bo(mdp, cfg, q),
                                     np.zeros_like(qs)).q
            assert np.all(fps[8] <= fps[4] + 1e-9)
            assert np.all(fps[4] <= fps[2] + 1e-9)
            assert np.all(fps[2] <= qs + 1e-9)

    def test_underestimation_random(self):
        for seed in range(10):
            _, mdp, pset, la = random_case(seed)
            la = LookaheadSet((1, 4))
            qs = q_star_oracle(mdp)
            fp = fixed_point(lambda q: multistep_bo(mdp, cfg_for(pset, la), q), np.zeros_like(qs)).q
            assert np.all(fp <= qs + 1e-8)
            assert np.any(fp < qs - 1e-6)

    def test_empty_policy_set_rejected(self):
        with pytest.raises(ValueError):
            HighwayConfig(PolicySet(()), LookaheadSet((1,)))


class TestHighwayGeneralized:
    def test_depth_one_is_bellman(self, rng):
        _, mdp, pset, _ = random_case(2)
        q = rng.normal(size=(5, 3))
        np.testing.assert_allclose(highway_generalized(mdp, cfg_for(pset, LookaheadSet((1,))), q),
                                   bellman_optimality(mdp, q), atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_highway_equation(self, seed):
        _, mdp, pset, la = random_case(seed)
        qs = q_star_oracle(mdp, tol=1e-12)
        np.testing.assert_allclose(highway_generalized(mdp, cfg_for(pset, la), qs), qs, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_gate_dominance(self, seed):
        rng, mdp, pset, la = random_case(seed)
        q = rng.normal(scale=5, size=(5, 3))
        cfg = cfg_for(pset, la)
        h = highway_generalized(mdp, cfg, q)
        assert np.all(h >= bellman_optimality(mdp, q) - 1e-12)
        assert np.all(h >= multistep_bo(mdp, cfg, q) - 1e-12)

    @pytest.mark.parametrize("n", range(1, 11))
    def test_threefork_any_depth_reaches_q_star(self, threefork, n):
        mdp = threefork.mdp
        qs = q_star_oracle(mdp)
        rep = fixed_point(lambda q: highway_generalized(mdp, fork_cfg(threefork, [n]), q),
                          np.zeros_like(qs))
        assert rep.converged
        np.testing.assert_allclose(rep.q, qs, atol=1e-8)

    def test_rejects_other_thresholds(self, threefork):
        cfg = fork_cfg(threefork, [3], gate_threshold=2)
        with pytest.raises(ValueError):
            highway_generalized(threefork.mdp, cfg, np.zeros((threefork.mdp.num_states, 2)))

    def test_below_q_star_closure(self):
        for seed in range(10):
            rng, mdp, pset, la = random_case(seed)
            qs = q_star_oracle(mdp)
            cfg = cfg_for(pset, la)
            for op in (highway_generalized, multistep_bo):
                q = qs - np.abs(rng.normal(scale=3, size=qs.shape))
                for _ in range(30):
                    q = op(mdp, cfg, q)
                    assert np.all(q <= qs + 1e-9)

    def test_gate_choices(self, threefork):
        mdp = threefork.mdp
        cfg = fork_cfg(threefork, [2, 10])
        qs = q_star_oracle(mdp)
        ch = gate_choices(mdp, cfg, qs)
        s = threefork.start
        # orange follows blue's corridor for two steps, so it only loses at depth 10
        assert ch[:, :, s, 0].tolist() == [[2, 10], [2, 1], [1, 1]]


class TestContraction:
    @pytest.mark.parametrize("name", ["bo", "be", "msbo", "hg", "ho", "hs"])
    def test_gamma_contraction(self, name):
        for seed in range(50):
            rng, mdp, pset, la = random_case(seed)
            cfg = cfg_for(pset, la)
            scfg = cfg_for(pset, la, policy_aggregation="smax", depth_aggregation="smax",
                           temperature=1.0)
            op = {
                "bo": lambda q: bellman_optimality(mdp, q),
                "be": lambda q: bellman_expectation(mdp, pset.policies[0], q),
                "msbo": lambda q: multistep_bo(mdp, cfg, q),
                "hg": lambda q: highway_generalized(mdp, cfg, q),
                "ho": lambda q: highway_optimality(mdp, pset, la, q),
                "hs": lambda q: highway_softmax(mdp, scfg, q),
            }[name]
            q1 = rng.normal(scale=4, size=(5, 3))
            q2 = rng.normal(scale=4, size=(5, 3))
            lhs = np.abs(op(q1) - op(q2)).max()
            assert lhs <= mdp.discount * np.abs(q1 - q2).max() + 1e-9


class TestHighwayOptimality:
    def test_singletons_are_bellman(self, rng):
        _, mdp, pset, _ = random_case(3)
        q = rng.normal(size=(5, 3))
        out = highway_optimality(mdp, PolicySet(pset.policies[:1]), LookaheadSet((1,)), q)
        np.testing.assert_allclose(out, bellman_optimality(mdp, q), atol=1e-12)

    def test_threefork_one_iteration(self, threefork):
        mdp, s = threefork.mdp, threefork.start
        out = highway_optimality(mdp, PolicySet(threefork.policies), LookaheadSet.range(1, 10),
                                 np.zeros((mdp.num_states, 2)))
        assert out[s, 0] == pytest.approx(9.0)

    def test_max_beats_sampled_distributions(self):
        for seed in range(5):
            rng, mdp, pset, la = random_case(seed)
            qs = q_star_oracle(mdp)
            q = qs - np.abs(rng.normal(scale=3, size=qs.shape))
            d_max = distance_pointwise(highway_optimality(mdp, pset, la, q), qs)
            for _ in range(100):
                cfg = HighwayConfig(PolicySet(pset.policies, selection=tuple(rng.dirichlet(np.ones(3)))),
                                    LookaheadSet(la.depths, tuple(rng.dirichlet(np.ones(3)))))
                assert np.all(d_max <= distance_pointwise(highway_generalized(mdp, cfg, q), qs) + 1e-9)

    def test_point_mass_attains_max(self):
        rng, mdp, pset, la = random_case(4)
        qs = q_star_oracle(mdp)
        q = qs - np.abs(rng.normal(scale=3, size=qs.shape))
        d_max = distance_pointwise(highway_optimality(mdp, pset, la, q), qs)
        best = np.full(qs.shape, np.inf)
        for i in range(len(pset)):
            for n in la.depths:
                cfg = HighwayConfig(PolicySet((pset.policies[i],)), LookaheadSet((n,)))
                best = np.minimum(best, distance_pointwise(highway_generalized(mdp, cfg, q), qs))
        np.testing.assert_allclose(d_max, best, atol=1e-9)

    def test_changing_policy_sets(self):
        rng, mdp, _, la = random_case(5)
        qs = q_star_oracle(mdp, tol=1e-12)
        q0 = rng.normal(scale=10, size=qs.shape)
        d0 = np.abs(q0 - qs).max()
        q = q0
        for k in range(1, 40):
            pset = PolicySet(tuple(rng.dirichlet(np.ones(3), size=5) for _ in range(2)))
            q = highway_optimality(mdp, pset, la, q)
            assert np.abs(q - qs).max() <= mdp.discount ** k * d0 + 1e-9


class TestSoftmax:
    def test_constant_vector(self):
        assert smax([3.0, 3.0, 3.0], 0.7) == pytest.approx(3.0)

    def test_small_alpha_is_mean(self):
        assert smax([1.0, 2.0, 6.0], 1e-9) == pytest.approx(3.0, abs=1e-6)

    def test_large_alpha_is_max(self):
        assert smax([0.0, 10.0], 1e6) == pytest.approx(10.0, abs=1e-6)

    def test_infinite_mode(self):
        assert smax([1.0, -4.0], np.inf) == 1.0

    def test_no_overflow(self):
        assert smax([1e5, 1e5 + 1], 1e3) == pytest.approx(1e5 + 1)

    def test_errors(self):
        with pytest.raises(ValueError):
            smax([], 1.0)
        with pytest.raises(ValueError):
            smax([1.0], 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(1e-3, 1e3))
    def test_between_mean_and_max(self, xs, alpha):
        v = smax(xs, alpha)
        assert np.mean(xs) - 1e-6 <= v <= max(xs) + 1e-6

    def test_large_alpha_matches_optimality(self, rng):
        _, mdp, pset, la = random_case(6)
        q = rng.normal(size=(5, 3))
        cfg = cfg_for(pset, la, policy_aggregation="smax", depth_aggregation="smax", temperature=1e6)
        np.testing.assert_allclose(highway_softmax(mdp, cfg, q), highway_optimality(mdp, pset, la, q),
                                   atol=1e-6)

    @pytest.mark.parametrize("alpha", [0.01, 1.0, 100.0])
    def test_fixed_point_and_contraction(self, alpha):
        for seed in range(10):
            rng, mdp, pset, la = random_case(seed)
            qs = q_star_oracle(mdp, tol=1e-12)
            cfg = cfg_for(pset, la, policy_aggregation="smax", depth_aggregation="smax",
                          temperature=alpha)
            np.testing.assert_allclose(highway_softmax(mdp, cfg, qs), qs, atol=1e-9)
            q = rng.normal(scale=5, size=qs.shape)
            assert (np.abs(highway_softmax(mdp, cfg, q) - qs).max()
                    <= mdp.discount * np.abs(q - qs).max() + 1e-9)

    def test_single_policy_depth_one(self, rng):
        _, mdp, pset, _ = random_case(7)
        q = rng.normal(size=(5, 3))
        cfg = cfg_for(PolicySet(pset.policies[:1]), LookaheadSet((1,)),
                      policy_aggregation="smax", depth_aggregation="smax", temperature=0.3)
        np.testing.assert_allclose(highway_softmax(mdp, cfg, q), bellman_optimality(mdp, q), atol=1e-12)


class TestBrokenGate:
    def test_zero_threshold_shift_fixed_point(self):
        _, mdp, pset, la = random_case(8)
        qs = q_star_oracle(mdp, tol=1e-12)
        live = ~mdp.terminal
        shifted = qs.copy()
        shifted[live] += 1.0
        out = broken_gate_variant(mdp, cfg_for(pset, la, gate_threshold=0), shifted)
        np.testing.assert_allclose(out, shifted, atol=1e-9)

    def test_threshold_equal_depth_is_msbo(self, rng):
        _, mdp, pset, _ = random_case(9)
        q = rng.normal(size=(5, 3))
        cfg = cfg_for(pset, LookaheadSet((3,)), gate_threshold=3)
        np.testing.assert_allclose(broken_gate_variant(mdp, cfg, q),
                                   multistep_bo(mdp, cfg_for(pset, LookaheadSet((3,))), q))

    def test_threefork_threshold_three_underestimates(self, threefork):
        mdp, s = threefork.mdp, threefork.start
        cfg = fork_cfg(threefork, [10], gate_threshold=3)
        rep = fixed_point(lambda q: broken_gate_variant(mdp, cfg, q), np.zeros((mdp.num_states, 2)))
        assert rep.q[s, 0] < q_star_oracle(mdp)[s, 0] - 1e-6

    def test_threshold_one_rejected(self, threefork):
        with pytest.raises(ValueError):
            broken_gate_variant(threefork.mdp, fork_cfg(threefork, [3]),
                                np.zeros((threefork.mdp.num_states, 2)))


class TestFixedPoint:
    def test_gamma_zero_two_iterations(self, rng):
        mdp = random_mdp(rng, 4, 2, 0.0)
        pset = PolicySet((uniform_policy(4, 2),))
        cfg = cfg_for(pset, LookaheadSet((1, 3)))
        for op in (lambda q: bellman_optimality(mdp, q), lambda q: highway_generalized(mdp, cfg, q)):
            assert fixed_point(op, rng.normal(size=(4, 2))).iterations <= 2

    def test_two_state(self, two_state):
        rep = fixed_point(lambda q: bellman_optimality(two_state, q), np.zeros((2, 2)))
        assert rep.converged and rep.residual <= 1e-10
        np.testing.assert_allclose(rep.q, q_star_oracle(two_state), atol=1e-9)

    def test_divergence_reported(self):
        rep = fixed_point(lambda q: 2.0 * q + 1.0, np.zeros(3), max_iters=100)
        assert not rep.converged

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            fixed_point(lambda q: q, np.zeros(1), tol=0.0)


class TestDistances:
    def test_zero_and_shift(self, rng):
        q = rng.normal(size=(3, 2))
        assert distance_sup(q, q) == 0.0
        np.testing.assert_allclose(distance_pointwise(q - 2.5, q), 2.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            distance_pointwise(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_threefork_highway_closer_than_bellman(self, threefork):
        mdp = threefork.mdp
        qs = q_star_oracle(mdp)
        q0 = np.zeros_like(qs)
        for n in range(1, 11):
            cfg = fork_cfg(threefork, [n])
            d_h = distance_pointwise(highway_generalized(mdp, cfg, q0), qs)
            d_b = distance_pointwise(bellman_optimality(mdp, q0), qs)
            assert np.all(d_h <= d_b + 1e-12)

    def test_threefork_strict_improvement(self, threefork):
        mdp = threefork.mdp
        qs = q_star_oracle(mdp)
        q0 = np.zeros_like(qs)
        cfg = fork_cfg(threefork, range(1, 11))
        d_h = distance_pointwise(highway_generalized(mdp, cfg, q0), qs)
        assert np.any(d_h < distance_pointwise(bellman_optimality(mdp, q0), qs) - 1e-9)
        assert np.any(d_h < distance_pointwise(multistep_bo(mdp, cfg, q0), qs) - 1e-9)

    def test_distance_bounds_random(self):
        for seed in range(20):
            rng, mdp, pset, la = random_case(seed)
            qs = q_star_oracle(mdp)
            cfg = cfg_for(pset, la)
            q = qs - np.abs(rng.normal(scale=3, size=qs.shape))
            d_h = distance_pointwise(highway_generalized(mdp, cfg, q), qs)
            assert np.all(d_h <= distance_pointwise(bellman_optimality(mdp, q), qs) + 1e-9)
            assert np.all(d_h <= distance_pointwise(multistep_bo(mdp, cfg, q), qs) + 1e-9)
            q = rng.normal(scale=5, size=qs.shape)
            assert (distance_sup(highway_generalized(mdp, cfg, q), qs)
                    <= distance_sup(bellman_optimality(mdp, q), qs) + 1e-9)
