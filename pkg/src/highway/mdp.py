"""Finite MDPs, policies and exact value oracles.

Value tables are plain ``numpy`` arrays: a Q table has shape ``(S, A)`` and a
V table has shape ``(S,)``.  Policies are ``(S, A)`` row-stochastic arrays.

Terminal states are absorbing with zero reward and are pinned to value zero by
every backup in this package, so a terminal row of a Q table carries no
information.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PROB_ATOL = 1e-12


class MdpValidationError(ValueError):
    """Raised when an MDP or policy violates a structural invariant."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with expected rewards.

    Attributes:
        transition: ``P[s, a, s']`` transition probabilities.
        reward: ``r[s, a]`` expected immediate reward.
        discount: discount factor in ``[0, 1]``.
        terminal: boolean flag per state.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    terminal: np.ndarray
    live_transition: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = _readonly(self.transition)
        r = _readonly(self.reward)
        term = np.array(self.terminal, dtype=bool, copy=True)
        term.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "discount", float(self.discount))
        _validate(self)
        # Transitions into terminal states carry no continuation value.
        live = np.array(P, copy=True)
        live[:, :, term] = 0.0
        live.setflags(write=False)
        object.__setattr__(self, "live_transition", live)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def is_episodic(self) -> bool:
        """True if every policy reaches a terminal state with probability one.

        Iterates the worst-case survival probability
        ``v(s) <- max_a sum_{s' live} P(s'|s,a) v(s')`` from ``v = 1``.  Under
        the all-policies-proper condition the ``S``-step survival is below one,
        which is equivalent to the restricted sub-stochastic kernel having
        spectral radius below one for every policy.
        """
        live = ~self.terminal
        if not live.any():
            return True
        P = self.transition[np.ix_(live, np.arange(self.num_actions), live)]
        v = np.ones(int(live.sum()))
        for _ in range(int(live.sum()) + 1):
            v = (P @ v).max(axis=1)
            if v.max() < 1.0 - 1e-12:
                return True
        return False

    def to_dict(self) -> dict:
        S, A = self.num_states, self.num_actions
        transitions = [
            {"s": int(s), "a": int(a), "s'": int(t), "p": float(self.transition[s, a, t])}
            for s, a, t in zip(*np.nonzero(self.transition))
        ]
        rewards = [
            {"s": int(s), "a": int(a), "r": float(self.reward[s, a])}
            for s in range(S) for a in range(A) if self.reward[s, a] != 0.0
        ]
        return {
            "num_states": S,
            "num_actions": A,
            "gamma": self.discount,
            "terminal": [int(s) for s in np.flatnonzero(self.terminal)],
            "transitions": transitions,
            "rewards": rewards,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        try:
            S = int(doc["num_states"])
            A = int(doc["num_actions"])
            gamma = float(doc["gamma"])
            terminal_ids = list(doc.get("terminal", []))
            transitions = doc["transitions"]
            rewards = doc.get("rewards", [])
        except KeyError as exc:
            raise MdpValidationError(f"missing key {exc.args[0]!r}") from None
        if S < 1 or A < 1:
            raise MdpValidationError("num_states and num_actions must be positive")
        P = np.zeros((S, A, S))
        r = np.zeros((S, A))
        term = np.zeros(S, dtype=bool)
        for i, s in enumerate(terminal_ids):
            if not 0 <= int(s) < S:
                raise MdpValidationError(f"terminal[{i}]={s} out of range")
            term[int(s)] = True
        for i, row in enumerate(transitions):
            s, a, t, p = int(row["s"]), int(row["a"]), int(row["s'"]), float(row["p"])
            if not (0 <= s < S and 0 <= a < A and 0 <= t < S):
                raise MdpValidationError(f"transitions[{i}] index out of range: {row}")
            P[s, a, t] += p
        for i, row in enumerate(rewards):
            s, a = int(row["s"]), int(row["a"])
            if not (0 <= s < S and 0 <= a < A):
                raise MdpValidationError(f"rewards[{i}] index out of range: {row}")
            r[s, a] = float(row["r"])
        # Terminal self-loops may be omitted in files.
        for s in np.flatnonzero(term):
            if not P[s].any():
                P[s, :, s] = 1.0
        return cls(P, r, gamma, term)

    @classmethod
    def load(cls, path: str | Path) -> "TabularMdp":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _validate(mdp: TabularMdp) -> None:
    P, r, term = mdp.transition, mdp.reward, mdp.terminal
    if P.ndim != 3 or P.shape[0] != P.shape[2]:
        raise MdpValidationError(f"transition must have shape (S, A, S), got {P.shape}")
    S, A = P.shape[:2]
    if r.shape != (S, A):
        raise MdpValidationError(f"reward shape {r.shape} != {(S, A)}")
    if term.shape != (S,):
        raise MdpValidationError(f"terminal shape {term.shape} != {(S,)}")
    if not 0.0 <= mdp.discount <= 1.0:
        raise MdpValidationError(f"discount {mdp.discount} outside [0, 1]")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(r))):
        raise MdpValidationError("transition and reward must be finite")
    neg = np.argwhere(P < 0)
    if len(neg):
        s, a, t = neg[0]
        raise MdpValidationError(f"negative probability P[{s},{a},{t}]={P[s, a, t]}")
    sums = P.sum(axis=2)
    for s in range(S):
        if term[s]:
            for a in range(A):
                if P[s, a, s] != 1.0 or r[s, a] != 0.0:
                    raise MdpValidationError(
                        f"terminal state {s} must self-loop with zero reward (action {a})")
            continue
        bad = np.flatnonzero(np.abs(sums[s] - 1.0) > PROB_ATOL)
        if len(bad):
            a = bad[0]
            raise MdpValidationError(f"P[{s},{a},:] sums to {sums[s, a]!r}, not 1")
    if mdp.discount == 1.0 and not mdp.is_episodic():
        raise MdpValidationError(
            "discount=1 requires an episodic MDP: some policy never terminates")


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    num_actions: int,
    discount: float,
    *,
    branching: int | None = None,
    reward_scale: float = 1.0,
) -> TabularMdp:
    """Random dense (or ``branching``-sparse) MDP without terminal states."""
    S, A = num_states, num_actions
    if branching is None:
        P = rng.dirichlet(np.ones(S), size=(S, A))
    else:
        P = np.zeros((S, A, S))
        for s in range(S):
            for a in range(A):
                idx = rng.choice(S, size=min(branching, S), replace=False)
                P[s, a, idx] = rng.dirichlet(np.ones(len(idx)))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-reward_scale, reward_scale, size=(S, A))
    return TabularMdp(P, r, discount, np.zeros(S, dtype=bool))


def _check_solvable(mdp: TabularMdp) -> None:
    if mdp.discount >= 1.0 and not mdp.is_episodic():
        raise MdpValidationError("undiscounted MDP is not episodic; values are undefined")


def q_star_oracle(mdp: TabularMdp, tol: float = 1e-12, max_iters: int = 1_000_000) -> np.ndarray:
    """Optimal Q by plain value iteration, stopped when ``||BQ - Q|| <= tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_solvable(mdp)
    live = mdp.live_transition
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(max_iters):
        new = mdp.reward + mdp.discount * live @ q.max(axis=1)
        new[mdp.terminal] = 0.0
        if np.max(np.abs(new - q)) <= tol:
            return new
        q = new
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iters} iterations")


def q_pi_oracle(mdp: TabularMdp, pi: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Q of a fixed policy by a direct linear solve over the live states."""
    _check_solvable(mdp)
    pi = validate_policy(pi, mdp.num_states, mdp.num_actions)
    live = ~mdp.terminal
    P_pi = np.einsum("sat,sa->st", mdp.live_transition, pi)[np.ix_(live, live)]
    r_pi = (mdp.reward * pi).sum(axis=1)[live]
    v = np.zeros(mdp.num_states)
    v[live] = np.linalg.solve(np.eye(int(live.sum())) - mdp.discount * P_pi, r_pi)
    q = mdp.reward + mdp.discount * mdp.live_transition @ v
    q[mdp.terminal] = 0.0
    residual = mdp.reward + mdp.discount * mdp.live_transition @ (pi * q).sum(axis=1)
    residual[mdp.terminal] = 0.0
    if np.max(np.abs(residual - q)) > tol * max(1.0, np.max(np.abs(q))):
        raise RuntimeError("policy evaluation solve is ill-conditioned")
    return q


def validate_policy(pi: np.ndarray, num_states: int | None = None,
                    num_actions: int | None = None) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 2:
        raise MdpValidationError(f"policy must be a 2-d table, got shape {pi.shape}")
    if num_states is not None and pi.shape != (num_states, num_actions):
        raise MdpValidationError(f"policy shape {pi.shape} != {(num_states, num_actions)}")
    if np.any(pi < 0):
        raise MdpValidationError("policy has negative probabilities")
    bad = np.flatnonzero(np.abs(pi.sum(axis=1) - 1.0) > PROB_ATOL)
    if len(bad):
        raise MdpValidationError(f"policy row {bad[0]} sums to {pi[bad[0]].sum()!r}")
    return pi


def deterministic_policy(actions: Sequence[int], num_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=int)
    pi = np.zeros((len(actions), num_actions))
    pi[np.arange(len(actions)), actions] = 1.0
    return pi


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest action index."""
    return np.argmax(q, axis=1)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("Q table has non-finite entries")
    return deterministic_policy(greedy_actions(q), q.shape[1])


def epsilon_greedy(q: np.ndarray, eps: float) -> np.ndarray:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps={eps} outside [0, 1]")
    A = q.shape[1]
    return (1.0 - eps) * greedy_policy(q) + eps / A


def uniform_policy(num_states: int, num_actions: int) -> np.ndarray:
    return np.full((num_states, num_actions), 1.0 / num_actions)


@dataclass(frozen=True)
class PolicySet:
    """Ordered behavioural policy set with FIFO eviction.

    ``selection`` is the probability of each policy; ``None`` means uniform.
    """

    policies: tuple[np.ndarray, ...]
    capacity: int = 1_000_000
    selection: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        pols = tuple(validate_policy(p) for p in self.policies)
        if len(pols) > self.capacity:
            pols = pols[len(pols) - self.capacity:]
        object.__setattr__(self, "policies", pols)
        if self.selection is not None:
            sel = np.asarray(self.selection, dtype=float)
            if len(sel) != len(pols):
                raise ValueError("selection length does not match the policy count")
            if np.any(sel < 0) or abs(sel.sum() - 1.0) > PROB_ATOL:
                raise ValueError("selection must be a probability vector")
            object.__setattr__(self, "selection", tuple(float(x) for x in sel))

    def __len__(self) -> int:
        return len(self.policies)

    def weights(self) -> np.ndarray:
        if self.selection is None:
            return np.full(len(self.policies), 1.0 / len(self.policies))
        return np.asarray(self.selection)

    def push(self, pi: np.ndarray) -> "PolicySet":
        """Append ``pi``, dropping the oldest policy when over capacity.

        The selection resets to uniform because an explicit vector no longer
        lines up with the new members.
        """
        return PolicySet(self.policies + (pi,), self.capacity, None)
