import numpy as np
import pytest

from highway.baselines import (AbsoluteContinuityError, TraceScheme, multistep_be_is,
                               retrace_weight_profile, trace_operator, truncation_bound)
from highway.mdp import (PolicySet, TabularMdp, epsilon_greedy, greedy_policy, q_pi_oracle,
                         random_mdp)
from highway.operators import LookaheadSet, bellman_expectation


def soft_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


def horizon_for(gamma, scale):
    # smallest H with gamma^H * scale < 1e-10
    return int(np.ceil(np.log(1e-10 / max(scale, 1.0)) / np.log(gamma))) + 1


def chain3():
    """Deterministic 3-state chain s0 -> s1 -> s2 (terminal); rewards 1 then 2."""
    P = np.zeros((3, 2, 3))
    P[0, :, 1] = 1.0
    P[1, :, 2] = 1.0
    P[2, :, 2] = 1.0
    r = np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])
    return TabularMdp(P, r, 0.9, np.array([False, False, True]))


class TestTraceScheme:
    def test_lambda_range(self):
        with pytest.raises(ValueError):
            TraceScheme("retrace", 1.5)
        with pytest.raises(ValueError):
            TraceScheme("tree_backup", 0.5)

    def test_coefficients(self):
        target = np.array([[1.0, 0.0]])
        behavior = np.array([[0.5, 0.5]])
        np.testing.assert_allclose(TraceScheme("retrace", 0.8).coefficients(target, behavior), [[0.8, 0.0]])
        np.testing.assert_allclose(TraceScheme("q_lambda", 0.8).coefficients(target, behavior), [[0.8, 0.8]])
        np.testing.assert_allclose(TraceScheme("full_is", 0.8).coefficients(target, behavior), [[1.6, 0.0]])


class TestMultistepBeIs:
    def test_unbiased_at_q_pi(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            mdp = random_mdp(rng, 5, 3, 0.8)
            target = soft_policy(rng, 5, 3)
            qt = q_pi_oracle(mdp, target)
            pset = PolicySet((soft_policy(rng, 5, 3), soft_policy(rng, 5, 3)))
            out = multistep_be_is(mdp, target, pset, LookaheadSet((1, 3, 6)), qt)
            np.testing.assert_allclose(out, qt, atol=1e-8)

    def test_collapses_to_target_expectation(self, rng):
        # IS ratios turn behaviour expectations into target expectations
        mdp = random_mdp(rng, 4, 3, 0.7)
        target = soft_policy(rng, 4, 3)
        q = rng.normal(size=(4, 3))
        out = multistep_be_is(mdp, target, PolicySet((soft_policy(rng, 4, 3),)), LookaheadSet((4,)), q)
        expect = q
        for _ in range(4):
            expect = bellman_expectation(mdp, target, expect)
        np.testing.assert_allclose(out, expect, atol=1e-10)

    def test_on_policy(self, rng):
        mdp = random_mdp(rng, 4, 2, 0.9)
        pi = soft_policy(rng, 4, 2)
        q = rng.normal(size=(4, 2))
        out = multistep_be_is(mdp, pi, PolicySet((pi,)), LookaheadSet((2,)), q)
        np.testing.assert_allclose(out, bellman_expectation(mdp, pi, bellman_expectation(mdp, pi, q)))

    def test_two_state_depth_one(self, two_state):
        # out(s0, a1) = 1 + 0.5 * sum_a target(a|s0) q(s0, a)
        target = np.array([[0.25, 0.75], [0.5, 0.5]])
        q = np.array([[2.0, 4.0], [0.0, 0.0]])
        out = multistep_be_is(two_state, target, PolicySet((np.full((2, 2), 0.5),)), LookaheadSet((1,)), q)
        assert out[0, 1] == pytest.approx(1 + 0.5 * (0.25 * 2 + 0.75 * 4))
        assert out[0, 0] == pytest.approx(0.0)

    def test_absolute_continuity(self, two_state):
        target = np.array([[0.0, 1.0], [0.5, 0.5]])
        behavior = np.array([[1.0, 0.0], [0.5, 0.5]])
        with pytest.raises(AbsoluteContinuityError):
            multistep_be_is(two_state, target, PolicySet((behavior,)), LookaheadSet((2,)), np.zeros((2, 2)))


class TestTraceOperator:
    @pytest.mark.parametrize("kind", ["retrace", "q_lambda", "full_is"])
    def test_unbiased_at_q_pi(self, kind):
        rng = np.random.default_rng(11)
        for _ in range(5):
            mdp = random_mdp(rng, 5, 3, 0.7)
            target = soft_policy(rng, 5, 3)
            behavior = soft_policy(rng, 5, 3)
            qt = q_pi_oracle(mdp, target)
            H = horizon_for(0.7, 10 * np.abs(qt).max())
            out = trace_operator(mdp, target, behavior, TraceScheme(kind, 0.9), H, qt)
            np.testing.assert_allclose(out, qt, atol=1e-8)

    def test_lambda_zero_is_expectation_backup(self, rng):
        mdp = random_mdp(rng, 5, 3, 0.9)
        target, behavior = soft_policy(rng, 5, 3), soft_policy(rng, 5, 3)
        q = rng.normal(size=(5, 3))
        out = trace_operator(mdp, target, behavior, TraceScheme("retrace", 0.0), 10, q)
        np.testing.assert_allclose(out, bellman_expectation(mdp, target, q), atol=1e-12)

    def test_full_is_matches_multistep_be_is(self, rng):
        mdp = random_mdp(rng, 4, 3, 0.6)
        target, behavior = soft_policy(rng, 4, 3), soft_policy(rng, 4, 3)
        q = rng.normal(size=(4, 3))
        H = 60
        trace = trace_operator(mdp, target, behavior, TraceScheme("full_is", 1.0), H, q)
        is_op = multistep_be_is(mdp, target, PolicySet((behavior,)), LookaheadSet((H,)), q)
        np.testing.assert_allclose(trace, is_op, atol=1e-8)

    def test_on_policy_monte_carlo(self):
        mdp = chain3()
        pi = np.full((3, 2), 0.5)
        q = np.random.default_rng(0).normal(size=(3, 2))
        out = trace_operator(mdp, pi, pi, TraceScheme("retrace", 1.0), 5, q)
        np.testing.assert_allclose(out[0], 1 + 0.9 * 2)
        np.testing.assert_allclose(out[1], 2.0)

    def test_horizon_validated(self, two_state):
        with pytest.raises(ValueError):
            trace_operator(two_state, np.full((2, 2), .5), np.full((2, 2), .5), TraceScheme(), 0,
                           np.zeros((2, 2)))

    def test_truncation_bound_holds(self, rng):
        mdp = random_mdp(rng, 4, 2, 0.8)
        target, behavior = soft_policy(rng, 4, 2), soft_policy(rng, 4, 2)
        q = rng.normal(size=(4, 2))
        full = trace_operator(mdp, target, behavior, TraceScheme("retrace", 1.0), 400, q)
        for H in (1, 5, 20):
            part = trace_operator(mdp, target, behavior, TraceScheme("retrace", 1.0), H, q)
            assert np.abs(full - part).max() <= truncation_bound(mdp, H, q) + 1e-12


class TestWeightProfile:
    def test_on_policy_all_ones(self, rng):
        pi = soft_policy(rng, 3, 2)
        traj = [(0, 1), (1, 0), (2, 1), (0, 0)]
        np.testing.assert_array_equal(retrace_weight_profile(pi, pi, traj, 1.0), np.ones(4))

    def test_half_lambda_bound(self, rng):
        target, behavior = soft_policy(rng, 3, 2), soft_policy(rng, 3, 2)
        traj = [(int(rng.integers(3)), int(rng.integers(2))) for _ in range(12)]
        w = retrace_weight_profile(target, behavior, traj, 0.5)
        assert np.all(w <= 0.5 ** np.arange(12) + 1e-15)
        assert np.all(np.diff(w) <= 0)

    def test_epsilon_greedy_behaviour(self):
        q = np.array([[1.0, 0.0, 0.0, 0.0]])
        target = greedy_policy(q)
        behavior = epsilon_greedy(q, 0.2)
        w = retrace_weight_profile(target, behavior, [(0, 0)] * 6, 0.9)
        # ratio 1/0.85 is clipped to one, so only lambda decays the weight
        np.testing.assert_allclose(w, 0.9 ** np.arange(6))

    def test_unsupported_action(self):
        with pytest.raises(ValueError):
            retrace_weight_profile(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), [(0, 0), (0, 1)], 1.0)
