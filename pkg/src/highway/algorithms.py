"""Planning and learning algorithms.

Model-based: value iteration, (modified) policy iteration and Highway Value
Iteration over state values.  Model-free: Highway Q-Learning with per-policy
trajectory datasets, and the classical agents it is compared with (Watkins
Q(lambda), SARSA(lambda), Monte Carlo, n-step Q-learning).

Every learning run logs greedy-policy evaluations so that
:func:`episodes_to_solve` can be applied uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .envs import EpisodicEnv
from .mdp import PolicySet, TabularMdp, deterministic_policy, q_pi_oracle, q_star_oracle
from .operators import LookaheadSet
from .rng import SeedLike, stream

SOLVE_WINDOW = 10


# ---------------------------------------------------------------------------
# Model-based planning on state values


@dataclass
class PlanningReport:
    v: np.ndarray
    iterations: int
    samples: int
    residual: float
    converged: bool
    log: list[dict] = field(default_factory=list, repr=False)


def _one_step_values(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """``r(s,a) + g sum_s' P(s'|s,a) v(s')`` with terminal states pinned to zero."""
    q = mdp.reward + mdp.discount * mdp.live_transition @ v
    q[mdp.terminal] = 0.0
    return q


def _policy_backup(mdp: TabularMdp, pi: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (pi * _one_step_values(mdp, v)).sum(axis=1)


def _live_pairs(mdp: TabularMdp) -> int:
    return int((~mdp.terminal).sum()) * mdp.num_actions


def _policy_queries(mdp: TabularMdp, pi: np.ndarray) -> int:
    return int((pi[~mdp.terminal] > 0).sum())


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 1_000_000,
                    v0: np.ndarray | None = None) -> PlanningReport:
    v = np.zeros(mdp.num_states) if v0 is None else np.array(v0, dtype=float)
    per_iter = _live_pairs(mdp)
    samples = 0
    log = []
    for k in range(1, max_iters + 1):
        new = _one_step_values(mdp, v).max(axis=1)
        samples += per_iter
        residual = float(np.max(np.abs(new - v)))
        log.append({"iteration": k, "samples": samples, "residual": residual})
        v = new
        if residual <= tol:
            return PlanningReport(v, k, samples, residual, True, log)
    return PlanningReport(v, max_iters, samples, residual, False, log)


def policy_iteration(mdp: TabularMdp, eval_depth: int = 10, tol: float = 1e-10,
                     max_iters: int = 1_000_000) -> PlanningReport:
    """Modified policy iteration: greedy improvement then ``eval_depth`` sweeps.

    The first evaluation sweep of an iteration reuses the improvement
    lookahead, so it costs no extra model queries.
    """
    if eval_depth < 1:
        raise ValueError("eval_depth must be >= 1")
    v = np.zeros(mdp.num_states)
    samples = 0
    log = []
    for k in range(1, max_iters + 1):
        q = _one_step_values(mdp, v)
        pi = deterministic_policy(q.argmax(axis=1), mdp.num_actions)
        new = q.max(axis=1)
        samples += _live_pairs(mdp)
        for _ in range(eval_depth - 1):
            new = _policy_backup(mdp, pi, new)
            samples += _policy_queries(mdp, pi)
        residual = float(np.max(np.abs(new - v)))
        log.append({"iteration": k, "samples": samples, "residual": residual})
        v = new
        if residual <= tol:
            return PlanningReport(v, k, samples, residual, True, log)
    return PlanningReport(v, max_iters, samples, residual, False, log)


@dataclass(frozen=True)
class HviParams:
    error_bound: float = 1e-10
    capacity: int = 5
    interval: int = 7
    lookahead: LookaheadSet = LookaheadSet(tuple(range(1, 11)))
    selection: tuple[float, ...] | None = None
    max_iters: int = 1_000_000

    def __post_init__(self):
        if not self.error_bound > 0:
            raise ValueError("error_bound must be positive")
        if self.capacity < 1 or self.interval < 1:
            raise ValueError("capacity and interval must be >= 1")


def highway_v_backup(mdp: TabularMdp, policies: PolicySet, lookahead: LookaheadSet,
                     v: np.ndarray, one_step: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """State-value highway backup ``E_{pi,n} max(B v, (B^pi)^(n-1) B v)``.

    Returns the new values and the number of model queries spent.
    """
    if one_step is None:
        one_step = _one_step_values(mdp, v)
    bv = one_step.max(axis=1)
    queries = _live_pairs(mdp)
    depth_w = dict(zip(lookahead.depths, lookahead.weights()))
    top = lookahead.depths[-1]
    out = np.zeros_like(bv)
    for w_pi, pi in zip(policies.weights(), policies.policies):
        cur = bv
        for n in range(1, top + 1):
            if n > 1:
                cur = _policy_backup(mdp, pi, cur)
                queries += _policy_queries(mdp, pi)
            if n in depth_w:
                out += w_pi * depth_w[n] * np.maximum(bv, cur)
    return out, queries


def highway_value_iteration(mdp: TabularMdp, params: HviParams = HviParams(),
                            initial: PolicySet | None = None,
                            v0: np.ndarray | None = None) -> PlanningReport:
    """Value iteration with the highway operator and a FIFO set of greedy policies.

    Every ``interval`` iterations the greedy policy of the current values joins
    the policy set (oldest evicted past ``capacity``).  The greedy step reads
    the same one-step lookahead as the backup, so it adds no model queries.
    """
    v = np.zeros(mdp.num_states) if v0 is None else np.array(v0, dtype=float)
    policies = initial.policies if initial is not None else ()
    samples = 0
    log = []
    residual = np.inf
    for k in range(1, params.max_iters + 1):
        one_step = _one_step_values(mdp, v)
        if (k - 1) % params.interval == 0:
            greedy = deterministic_policy(one_step.argmax(axis=1), mdp.num_actions)
            policies = (policies + (greedy,))[-params.capacity:]
        sel = params.selection if params.selection and len(params.selection) == len(policies) else None
        pset = PolicySet(policies, params.capacity, sel)
        new, queries = highway_v_backup(mdp, pset, params.lookahead, v, one_step)
        samples += queries
        residual = float(np.max(np.abs(new - v)))
        log.append({"iteration": k, "samples": samples, "residual": residual,
                    "policies": [p.argmax(axis=1).tolist() for p in policies]})
        v = new
        if residual <= params.error_bound:
            return PlanningReport(v, k, samples, residual, True, log)
    return PlanningReport(v, params.max_iters, samples, residual, False, log)


# ---------------------------------------------------------------------------
# Learning logs and the solved criterion


@dataclass
class LearningLog:
    algorithm: str
    env: str
    seed: SeedLike
    evaluations: list[tuple[int, bool]] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list, repr=False)
    q: np.ndarray | None = field(default=None, repr=False)
    episodes: int = 0
    budget: int = 0

    @property
    def solved_at(self) -> int | None:
        return episodes_to_solve(self)


def episodes_to_solve(log: LearningLog, window: int = SOLVE_WINDOW) -> int | None:
    """Episodes consumed at the first of ``window`` consecutive optimal evaluations.

    ``None`` means the run never produced such a streak within its budget.
    """
    run = 0
    for i, (_, ok) in enumerate(log.evaluations):
        run = run + 1 if ok else 0
        if run == window:
            return log.evaluations[i - window + 1][0]
    return None


class GreedyJudge:
    """Checks whether the greedy policy of a Q table is optimal from the start."""

    def __init__(self, env: EpisodicEnv, atol: float = 1e-9):
        self.mdp = env.mdp
        self.start = env.start
        self.v_star = float(q_star_oracle(self.mdp).max(axis=1)[self.start])
        self.atol = atol * max(1.0, abs(self.v_star))
        self._cache: dict[bytes, bool] = {}

    def __call__(self, q: np.ndarray) -> bool:
        actions = q.argmax(axis=1)
        key = actions.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            pi = deterministic_policy(actions, q.shape[1])
            value = q_pi_oracle(self.mdp, pi)[self.start] @ pi[self.start]
            hit = bool(value >= self.v_star - self.atol)
            self._cache[key] = hit
        return hit


def _eps_greedy_action(q_row: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    if rng.random() < eps:
        return int(rng.integers(len(q_row)))
    return int(np.argmax(q_row))


def initial_q(env: EpisodicEnv, q_init: float | None = None) -> np.ndarray:
    """Constant table at ``q_init`` (default: the env's return lower bound).

    Starting below Q* everywhere is what lets the highway gate trust its
    one-step branch; every agent gets the same start for a fair comparison.
    Terminal rows stay at zero.
    """
    value = env.value_floor if q_init is None else q_init
    q = np.full((env.num_states, env.num_actions), float(value))
    q[env.mdp.terminal] = 0.0
    return q


def _run_agent(env: EpisodicEnv, name: str, budget: int, seed: SeedLike,
               episode_fn: Callable[[np.ndarray], float], q: np.ndarray,
               judge: GreedyJudge | None, stop_when_solved: bool) -> LearningLog:
    log = LearningLog(name, env.name, seed, budget=budget)
    judge = judge or GreedyJudge(env)
    log.evaluations.append((0, judge(q)))
    streak = 1 if log.evaluations[-1][1] else 0
    for e in range(1, budget + 1):
        log.returns.append(episode_fn(q))
        log.episodes = e
        ok = judge(q)
        log.evaluations.append((e, ok))
        streak = streak + 1 if ok else 0
        if stop_when_solved and streak >= SOLVE_WINDOW:
            break
    log.q = q
    return log


# ---------------------------------------------------------------------------
# Classical agents


@dataclass(frozen=True)
class AgentParams:
    epsilon: float = 0.2
    lam: float = 0.9
    step_size: float = 0.1
    mc_rate: float = 0.1
    n_step: int = 5
    budget: int = 2000
    stop_when_solved: bool = True
    q_init: float | None = None


def q_lambda_agent(env: EpisodicEnv, params: AgentParams = AgentParams(), seed: SeedLike = 0,
                   judge: GreedyJudge | None = None) -> LearningLog:
    """Watkins Q(lambda) with accumulating traces cut after exploratory actions."""
    rng = stream(seed, 0)
    env.seed(stream(seed, 1))
    g, lam, alpha, eps = env.discount, params.lam, params.step_size, params.epsilon
    q = initial_q(env, params.q_init)
    trace = np.zeros_like(q)

    def episode(q):
        trace[:] = 0.0
        s = env.reset()
        a = _eps_greedy_action(q[s], eps, rng)
        total, done = 0.0, False
        while not done:
            s2, r, done = env.step(a)
            total += r
            if done:
                target, a2, greedy_next = r, None, True
            else:
                a2 = _eps_greedy_action(q[s2], eps, rng)
                best = int(np.argmax(q[s2]))
                greedy_next = q[s2, a2] == q[s2, best]
                target = r + g * q[s2, best]
            trace[s, a] += 1.0
            q += alpha * (target - q[s, a]) * trace
            if greedy_next:
                trace[:] *= g * lam
            else:
                trace[:] = 0.0
            s, a = s2, a2
        return total

    return _run_agent(env, "q_lambda", params.budget, seed, episode, q, judge,
                      params.stop_when_solved)


def sarsa_lambda_agent(env: EpisodicEnv, params: AgentParams = AgentParams(), seed: SeedLike = 0,
                       judge: GreedyJudge | None = None) -> LearningLog:
    rng = stream(seed, 0)
    env.seed(stream(seed, 1))
    g, lam, alpha, eps = env.discount, params.lam, params.step_size, params.epsilon
    q = initial_q(env, params.q_init)
    trace = np.zeros_like(q)

    def episode(q):
        trace[:] = 0.0
        s = env.reset()
        a = _eps_greedy_action(q[s], eps, rng)
        total, done = 0.0, False
        while not done:
            s2, r, done = env.step(a)
            total += r
            if done:
                target, a2 = r, None
            else:
                a2 = _eps_greedy_action(q[s2], eps, rng)
                target = r + g * q[s2, a2]
            trace[s, a] += 1.0
            q += alpha * (target - q[s, a]) * trace
            trace[:] *= g * lam
            s, a = s2, a2
        return total

    return _run_agent(env, "sarsa_lambda", params.budget, seed, episode, q, judge,
                      params.stop_when_solved)


def monte_carlo_agent(env: EpisodicEnv, params: AgentParams = AgentParams(), seed: SeedLike = 0,
                      judge: GreedyJudge | None = None) -> LearningLog:
    """Every-visit Monte Carlo with an exponential moving average of returns."""
    rng = stream(seed, 0)
    env.seed(stream(seed, 1))
    g, eps, rate = env.discount, params.epsilon, params.mc_rate
    q = initial_q(env, params.q_init)

    def episode(q):
        s = env.reset()
        steps, done = [], False
        while not done:
            a = _eps_greedy_action(q[s], eps, rng)
            s2, r, done = env.step(a)
            steps.append((s, a, r))
            s = s2
        ret = 0.0
        for s, a, r in reversed(steps):
            ret = r + g * ret
            q[s, a] += rate * (ret - q[s, a])
        return sum(r for _, _, r in steps)

    return _run_agent(env, "monte_carlo", params.budget, seed, episode, q, judge,
                      params.stop_when_solved)


def n_step_q_agent(env: EpisodicEnv, params: AgentParams = AgentParams(), seed: SeedLike = 0,
                   judge: GreedyJudge | None = None) -> LearningLog:
    """Uncorrected n-step Q-learning: off-policy rewards with a greedy bootstrap."""
    rng = stream(seed, 0)
    env.seed(stream(seed, 1))
    g, eps, alpha, n = env.discount, params.epsilon, params.step_size, params.n_step
    q = initial_q(env, params.q_init)

    def episode(q):
        s = env.reset()
        states, actions, rewards = [s], [], []
        done = False
        while not done:
            a = _eps_greedy_action(q[s], eps, rng)
            s, r, done = env.step(a)
            actions.append(a)
            rewards.append(r)
            states.append(s)
        T = len(rewards)
        for t in range(T):
            end = min(t + n, T)
            target = sum(g ** (k - t) * rewards[k] for k in range(t, end))
            if end < T or not done_terminal(env, states[T]):
                target += g ** (end - t) * q[states[end]].max()
            q[states[t], actions[t]] += alpha * (target - q[states[t], actions[t]])
        return float(sum(rewards))

    return _run_agent(env, "n_step_q", params.budget, seed, episode, q, judge,
                      params.stop_when_solved)


def done_terminal(env: EpisodicEnv, state: int) -> bool:
    return bool(env.mdp.terminal[state])


# ---------------------------------------------------------------------------
# Highway Q-Learning


@dataclass(frozen=True)
class HqlParams:
    """``lookahead=None`` uses every depth up to the end of each stored suffix.

    ``update_epochs=None`` means one update per step of the horizon.
    """

    lookahead: tuple[int, ...] | None = None
    num_policies: int = 3
    rollout_epochs: int = 1
    run_epochs: int = 2000
    update_epochs: int | None = None
    epsilon: float = 0.2
    stop_when_solved: bool = True
    snapshot_every: int = 0
    q_init: float | None = None

    def __post_init__(self):
        if self.num_policies < 1 or self.rollout_epochs < 1 or self.run_epochs < 1:
            raise ValueError("epoch counts and policy budget must be positive")
        if self.update_epochs is not None and self.update_epochs < 1:
            raise ValueError("update_epochs must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.lookahead is not None and (not self.lookahead or min(self.lookahead) < 1):
            raise ValueError("lookahead depths must be >= 1")


@dataclass(frozen=True)
class Episode:
    policy: int
    states: np.ndarray    # s_0 .. s_T
    actions: np.ndarray   # a_0 .. a_{T-1}
    rewards: np.ndarray   # r_0 .. r_{T-1}
    terminal: bool        # whether s_T is terminal (no bootstrap past it)

    def __len__(self) -> int:
        return len(self.actions)


class TrajectoryStore:
    """Episodes tagged by behaviour policy, indexed by every ``(m, s, a)`` suffix.

    ``pairs`` lists the distinct visited state-action pairs in first-visit
    order; it is the pool from which updates draw.
    """

    def __init__(self):
        self.episodes: list[Episode] = []
        self.suffix_index: dict[tuple[int, int, int], list[tuple[int, int]]] = {}
        self.policies_for: dict[tuple[int, int], list[int]] = {}
        self.pairs: list[tuple[int, int]] = []
        self._pair_set: set[tuple[int, int]] = set()

    def add(self, episode: Episode) -> int:
        eid = len(self.episodes)
        for arr in (episode.states, episode.actions, episode.rewards):
            arr.setflags(write=False)
        self.episodes.append(episode)
        m = episode.policy
        for t in range(len(episode)):
            s, a = int(episode.states[t]), int(episode.actions[t])
            refs = self.suffix_index.setdefault((m, s, a), [])
            if not refs:
                self.policies_for.setdefault((s, a), []).append(m)
            refs.append((eid, t))
            if (s, a) not in self._pair_set:
                self._pair_set.add((s, a))
                self.pairs.append((s, a))
        return eid

    def suffix(self, ref: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
        eid, t = ref
        ep = self.episodes[eid]
        return ep.states[t:], ep.actions[t:], ep.rewards[t:], ep.terminal


def suffix_returns(states: np.ndarray, rewards: np.ndarray, terminal: bool,
                   v_boot: np.ndarray, discount: float) -> np.ndarray:
    """All n-step returns of one suffix, ``n = 1 .. len(rewards)``.

    ``G_n = sum_{k<n} g^k r_k + g^n v_boot(s_n)``; the bootstrap after the last
    step is dropped when the episode ended in a terminal state.
    """
    L = len(rewards)
    powers = discount ** np.arange(L + 1)
    partial = np.cumsum(powers[:L] * rewards)
    boot = v_boot[states[1:L + 1]].astype(float)
    if terminal:
        boot[-1] = 0.0
    return partial + powers[1:] * boot


def highway_target(store: TrajectoryStore, s: int, a: int, policies: list[int],
                   q: np.ndarray, discount: float,
                   lookahead: tuple[int, ...] | None) -> float:
    """``max_m max_n max_{n' in {1,n}}`` of empirical n'-step returns from ``(s, a)``."""
    v_boot = q.max(axis=1)
    best = -np.inf
    for m in policies:
        refs = store.suffix_index[(m, s, a)]
        rows = []
        for ref in refs:
            st, _, rw, term = store.suffix(ref)
            rows.append(suffix_returns(st, rw, term, v_boot, discount))
        depth_cap = min(len(r) for r in rows)
        mean = np.mean([r[:depth_cap] for r in rows], axis=0)
        if lookahead is None:
            depths = np.arange(1, depth_cap + 1)
        else:
            depths = np.array([n for n in lookahead if n <= depth_cap] or [1])
        gated = np.maximum(mean[0], mean[depths - 1])
        best = max(best, float(gated.max()))
    return best


def highway_q_learning(env: EpisodicEnv, params: HqlParams = HqlParams(), seed: SeedLike = 0,
                       judge: GreedyJudge | None = None) -> LearningLog:
    """Tabular Highway Q-Learning.

    Each run epoch fixes an epsilon-greedy policy ``pi_m``, rolls it out, files
    every suffix under ``(m, s_t, a_t)`` and then performs literal assignments
    ``Q(s,a) <- target`` at pairs drawn uniformly from the visited pool, with
    up to ``num_policies`` datasets sampled without replacement.
    """
    rng = stream(seed, 0)
    env.seed(stream(seed, 1))
    judge = judge or GreedyJudge(env)
    g = env.discount
    q = initial_q(env, params.q_init)
    store = TrajectoryStore()
    updates = params.update_epochs or env.horizon
    log = LearningLog("highway_q", env.name, seed, budget=params.run_epochs * params.rollout_epochs)
    log.evaluations.append((0, judge(q)))
    streak = 1 if log.evaluations[-1][1] else 0
    episodes = 0
    for m in range(params.run_epochs):
        frozen = q.copy()
        for _ in range(params.rollout_epochs):
            s = env.reset()
            states, actions, rewards = [s], [], []
            done = False
            while not done:
                a = _eps_greedy_action(frozen[s], params.epsilon, rng)
                s, r, done = env.step(a)
                states.append(s)
                actions.append(a)
                rewards.append(r)
            store.add(Episode(m, np.array(states), np.array(actions), np.array(rewards, dtype=float),
                              bool(env.mdp.terminal[states[-1]])))
            log.returns.append(float(sum(rewards)))
            episodes += 1
        for _ in range(updates):
            s, a = store.pairs[int(rng.integers(len(store.pairs)))]
            owners = store.policies_for[(s, a)]
            k = min(params.num_policies, len(owners))
            chosen = [owners[i] for i in rng.choice(len(owners), size=k, replace=False)]
            q[s, a] = highway_target(store, s, a, chosen, q, g, params.lookahead)
        if params.snapshot_every and (m + 1) % params.snapshot_every == 0:
            log.snapshots.append((episodes, q.copy()))
        ok = judge(q)
        log.evaluations.append((episodes, ok))
        log.episodes = episodes
        streak = streak + 1 if ok else 0
        if params.stop_when_solved and streak >= SOLVE_WINDOW:
            break
    log.q = q
    log.store = store
    return log


AGENTS = {
    "highway_q": highway_q_learning,
    "q_lambda": q_lambda_agent,
    "sarsa_lambda": sarsa_lambda_agent,
    "monte_carlo": monte_carlo_agent,
    "n_step_q": n_step_q_agent,
}
