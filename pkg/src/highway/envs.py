"""Benchmark environments.

* :func:`build_threefork` - small deterministic MDP with three behavioural
  policies of very different quality, used to show multi-step underestimation.
* :func:`build_multiroom` - sequential-room gridworld for the planning runs.
* :func:`build_choice` / :func:`build_traceback` - delayed-reward episodic
  tasks where the only reward arrives at the final step.
* :func:`delayed_wrapper` - moves every reward of an episodic env to the end.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .mdp import TabularMdp, deterministic_policy

UP, DOWN = 0, 1  # ThreeFork action names: the upper-right and lower-right moves


# ---------------------------------------------------------------------------
# Episodic simulation


RewardNoise = Callable[[np.random.Generator, int, int], float]


class EpisodicEnv:
    """Seeded episodic simulator over a :class:`TabularMdp`.

    ``step`` returns ``(next_state, reward, done)``.  The episode ends on
    entering a terminal state or after ``horizon`` steps.  ``noise`` adds a
    zero-mean sample to the expected reward of a step.  ``value_floor`` is a
    lower bound on any achievable return, used to start learners below Q*.
    """

    def __init__(self, mdp: TabularMdp, start: int, horizon: int,
                 noise: RewardNoise | None = None, name: str = "env",
                 value_floor: float = 0.0):
        if horizon < 1:
            raise ValueError("horizon must be positive")
        self.mdp = mdp
        self.start = int(start)
        self.horizon = int(horizon)
        self.noise = noise
        self.name = name
        self.value_floor = float(value_floor)
        self._rng = np.random.default_rng(0)
        self._state: int | None = None
        self._t = 0
        self._done = True
        # Deterministic successors skip the sampling call.
        nz = mdp.transition.max(axis=2)
        self._det_next = np.where(nz == 1.0, mdp.transition.argmax(axis=2), -1)

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    @property
    def num_actions(self) -> int:
        return self.mdp.num_actions

    @property
    def discount(self) -> float:
        return self.mdp.discount

    def seed(self, seed) -> None:
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def reset(self, seed=None) -> int:
        if seed is not None:
            self.seed(seed)
        self._state = self.start
        self._t = 0
        self._done = False
        return self._state

    def step(self, action: int) -> tuple[int, float, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        s, a = self._state, int(action)
        nxt = self._det_next[s, a]
        if nxt < 0:
            nxt = int(self._rng.choice(self.num_states, p=self.mdp.transition[s, a]))
        reward = float(self.mdp.reward[s, a])
        if self.noise is not None:
            reward += self.noise(self._rng, s, a)
        self._t += 1
        self._state = int(nxt)
        self._done = bool(self.mdp.terminal[nxt]) or self._t >= self.horizon
        return self._state, reward, self._done


class DelayedEnv(EpisodicEnv):
    """Pays the summed reward of an episode at its last step.

    The observed state is ``inner_state * (horizon + 1) + count`` where
    ``count`` is the number of nonzero rewards withheld so far.
    """

    def __init__(self, inner: EpisodicEnv):
        self.inner = inner
        self.name = f"delayed-{inner.name}"
        self.horizon = inner.horizon
        self.value_floor = inner.value_floor
        self._hidden = 0.0
        self._count = 0
        self._done = True

    @property
    def num_states(self) -> int:
        return self.inner.num_states * (self.horizon + 1)

    @property
    def num_actions(self) -> int:
        return self.inner.num_actions

    @property
    def discount(self) -> float:
        return self.inner.discount

    def _encode(self, s: int) -> int:
        return s * (self.horizon + 1) + self._count

    def seed(self, seed) -> None:
        self.inner.seed(seed)

    def reset(self, seed=None) -> int:
        s = self.inner.reset(seed)
        self._hidden = 0.0
        self._count = 0
        self._done = False
        return self._encode(s)

    def step(self, action: int) -> tuple[int, float, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        s, r, done = self.inner.step(action)
        self._hidden += r
        if r != 0.0:
            self._count += 1
        self._done = done
        paid = self._hidden if done else 0.0
        return self._encode(s), paid, done


def delayed_wrapper(env: EpisodicEnv) -> DelayedEnv:
    return DelayedEnv(env)


def delayed_mdp(mdp: TabularMdp, start: int, max_states: int = 200_000) -> tuple[TabularMdp, int]:
    """Model of the delayed-reward version of an episodic MDP.

    States are the reachable ``(state, withheld reward)`` pairs from ``start``;
    the withheld sum is paid on the transition into a terminal state.  Only
    well defined for deterministic-reward MDPs whose withheld sums take
    finitely many values along reachable paths.
    """
    S, A = mdp.num_states, mdp.num_actions
    index: dict[tuple[int, float], int] = {}
    keys: list[tuple[int, float]] = []
    queue = deque()

    def intern(key):
        if key not in index:
            if len(keys) >= max_states:
                raise ValueError("delayed MDP has too many reachable states")
            index[key] = len(keys)
            keys.append(key)
            queue.append(key)
        return index[key]

    intern((start, 0.0))
    edges = []
    while queue:
        s, held = queue.popleft()
        if mdp.terminal[s]:
            continue
        for a in range(A):
            for t in np.flatnonzero(mdp.transition[s, a]):
                total = round(held + mdp.reward[s, a], 12)
                if mdp.terminal[t]:
                    dst = intern((int(t), 0.0))
                    edges.append((index[(s, held)], a, dst, mdp.transition[s, a, t], total))
                else:
                    dst = intern((int(t), total))
                    edges.append((index[(s, held)], a, dst, mdp.transition[s, a, t], 0.0))
    n = len(keys)
    P = np.zeros((n, A, n))
    r = np.zeros((n, A))
    term = np.array([bool(mdp.terminal[s]) for s, _ in keys])
    for i in np.flatnonzero(term):
        P[i, :, i] = 1.0
    for src, a, dst, p, pay in edges:
        P[src, a, dst] += p
        r[src, a] += p * pay
    return TabularMdp(P, r, mdp.discount, term), 0


# ---------------------------------------------------------------------------
# ThreeFork


@dataclass(frozen=True)
class ThreeForkSpec:
    """Geometry of the three-policy example.

    ``fork_returns`` and ``payout_steps`` are ordered (red, orange, blue).  A
    payout step counts transitions from the start state, so red's default of
    2 means its reward is the second one received.  Orange shares blue's
    corridor for ``orange_branch_step`` transitions before turning off.
    """

    corridor_length: int = 10
    fork_returns: tuple[float, float, float] = (-9.0, 3.0, 9.0)
    alt_action_return: float = 5.0
    payout_steps: tuple[int, int, int] = (2, 10, 10)
    orange_branch_step: int = 2
    discount: float = 1.0

    def __post_init__(self):
        L = self.corridor_length
        red_step, orange_step, blue_step = self.payout_steps
        if L < 2:
            raise ValueError("corridor_length must be >= 2")
        if len(set(self.fork_returns)) != 3:
            raise ValueError("fork returns must be distinct")
        if blue_step != L:
            raise ValueError("blue pays on the last corridor transition")
        if not 2 <= red_step <= L:
            raise ValueError("red payout step must lie in [2, corridor_length]")
        b = self.orange_branch_step
        if not 1 <= b < orange_step:
            raise ValueError("orange must branch before it is paid")
        if b == red_step - 1:
            raise ValueError("red and orange cannot branch from the same corridor state")
        if b > L - 1:
            raise ValueError("orange must branch from a corridor state")


class ThreeFork(NamedTuple):
    mdp: TabularMdp
    blue: np.ndarray
    orange: np.ndarray
    red: np.ndarray
    start: int
    states: dict

    @property
    def policies(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.blue, self.orange, self.red


def build_threefork(spec: ThreeForkSpec = ThreeForkSpec()) -> ThreeFork:
    """Deterministic episodic MDP with two actions.

    From the start ``S_A``, ``DOWN`` ends the episode with ``alt_action_return``;
    ``UP`` enters a corridor ``c1 .. c_{L-1}`` that reaches the goal ``S_Z``
    after ``L`` transitions and pays blue's return.  Red turns off with
    ``DOWN`` at the corridor state preceding its payout and is paid at once;
    orange turns off with ``DOWN`` at ``c_b`` into a private corridor that pays
    at its payout step.  Everywhere else both actions continue forward.
    """
    L = spec.corridor_length
    red_ret, orange_ret, blue_ret = spec.fork_returns
    red_step, orange_step, _ = spec.payout_steps
    b = spec.orange_branch_step

    names = ["S_A"] + [f"c{i}" for i in range(1, L)] + ["S_Z"]
    names += [f"o{i}" for i in range(b + 1, orange_step)] + ["END"]
    sid = {n: i for i, n in enumerate(names)}
    S, A = len(names), 2
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))

    def corridor(i):  # state reached after i transitions along blue's path
        return sid["S_Z"] if i == L else sid[f"c{i}"]

    def orange_state(i):
        return sid["END"] if i == orange_step else sid[f"o{i}"]

    P[sid["S_A"], UP, corridor(1)] = 1.0
    P[sid["S_A"], DOWN, sid["END"]] = 1.0
    r[sid["S_A"], DOWN] = spec.alt_action_return
    for i in range(1, L):
        s = corridor(i)
        P[s, :, corridor(i + 1)] = 1.0
        if i + 1 == L:
            r[s, :] = blue_ret
    # red turns off at c_{red_step-1}
    s = corridor(red_step - 1)
    P[s, DOWN] = 0.0
    P[s, DOWN, sid["END"]] = 1.0
    r[s, DOWN] = red_ret
    # orange turns off at c_b
    s = corridor(b)
    P[s, DOWN] = 0.0
    P[s, DOWN, orange_state(b + 1)] = 1.0
    r[s, DOWN] = orange_ret if b + 1 == orange_step else 0.0
    for i in range(b + 1, orange_step):
        s = orange_state(i)
        P[s, :, orange_state(i + 1)] = 1.0
        if i + 1 == orange_step:
            r[s, :] = orange_ret
    for t in ("S_Z", "END"):
        P[sid[t], :, sid[t]] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[[sid["S_Z"], sid["END"]]] = True
    mdp = TabularMdp(P, r, spec.discount, terminal)

    blue = np.zeros(S, dtype=int)
    orange = blue.copy()
    orange[corridor(b)] = DOWN
    red = blue.copy()
    red[corridor(red_step - 1)] = DOWN
    return ThreeFork(mdp, deterministic_policy(blue, A), deterministic_policy(orange, A),
                     deterministic_policy(red, A), sid["S_A"], sid)


# ---------------------------------------------------------------------------
# Multi-Room


MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left
GOAL_REWARD = 1000.0
DOOR_REWARD = 0.001


class MultiRoom(NamedTuple):
    mdp: TabularMdp
    start: int
    goal: int
    layout: dict


def build_multiroom(num_rooms: int, room_size: int, discount: float = 0.99) -> MultiRoom:
    """Rooms of ``room_size x room_size`` cells laid out left to right.

    Neighbouring rooms share a wall with a one-cell door, alternately in the
    bottom and top row, so the route zig-zags.  The agent starts in the
    top-left cell of the first room; the goal is the opposite (bottom-right)
    corner of the last room and pays 1000.  Stepping into a door for the first
    time pays 0.001.  Doors must be passed in order, so the set of paid doors
    is always a prefix and the state is ``(cell, doors passed)``.
    """
    if num_rooms < 1 or room_size < 3:
        raise ValueError("need num_rooms >= 1 and room_size >= 3")
    width = num_rooms * (room_size + 1) - 1
    cells = {}
    room_of = {}
    for k in range(num_rooms):
        x0 = k * (room_size + 1)
        for y in range(room_size):
            for x in range(x0, x0 + room_size):
                room_of[(y, x)] = k
    doors = {}
    for k in range(num_rooms - 1):
        y = room_size - 1 if k % 2 == 0 else 0
        doors[(y, k * (room_size + 1) + room_size)] = k
    for c in list(room_of) + list(doors):
        cells[c] = len(cells)
    start_cell = (0, 0)
    goal_cell = (room_size - 1, width - 1)

    index: dict[tuple, int] = {}
    keys: list[tuple] = []
    queue = deque()

    def intern(key):
        if key not in index:
            index[key] = len(keys)
            keys.append(key)
            queue.append(key)
        return index[key]

    goal_id = intern(("goal",))
    queue.clear()
    start_id = intern((start_cell, 0))
    edges = []
    while queue:
        key = queue.popleft()
        cell, passed = key
        for a, (dy, dx) in enumerate(MOVES):
            nxt = (cell[0] + dy, cell[1] + dx)
            if nxt not in cells:
                edges.append((index[key], a, index[key], 0.0))
                continue
            if nxt == goal_cell:
                edges.append((index[key], a, goal_id, GOAL_REWARD))
                continue
            reward = 0.0
            new_passed = passed
            if nxt in doors and doors[nxt] == passed:
                reward = DOOR_REWARD
                new_passed = passed + 1
            edges.append((index[key], a, intern((nxt, new_passed)), reward))
    S, A = len(keys), len(MOVES)
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))
    P[goal_id, :, goal_id] = 1.0
    for s, a, t, rew in edges:
        P[s, a, t] = 1.0
        r[s, a] = rew
    terminal = np.zeros(S, dtype=bool)
    terminal[goal_id] = True
    layout = {"cells": cells, "doors": doors, "keys": keys,
              "start_cell": start_cell, "goal_cell": goal_cell, "width": width}
    return MultiRoom(TabularMdp(P, r, discount, terminal), start_id, goal_id, layout)


def multiroom_env(num_rooms: int, room_size: int, discount: float = 0.99,
                  horizon: int | None = None) -> EpisodicEnv:
    mr = build_multiroom(num_rooms, room_size, discount)
    horizon = horizon or 4 * mr.mdp.num_states
    return EpisodicEnv(mr.mdp, mr.start, horizon, name=f"multiroom-{num_rooms}x{room_size}")


# ---------------------------------------------------------------------------
# Delayed-reward toy tasks


CHOICE_MARGIN = 1.0
CHOICE_NOISE = 0.45
TRACEBACK_REWARDS = {(1, 1): 1.0, (1, 0): -1.0, (0, 0): 0.0, (0, 1): 0.0}
TOY_DISCOUNT = 0.99


def build_choice(delay: int, discount: float = TOY_DISCOUNT,
                 noise: float = CHOICE_NOISE) -> EpisodicEnv:
    """Binary choice whose consequence is paid ``delay`` steps later.

    The first action fixes the payout: ``CHOICE_MARGIN`` for action 1 and 0
    for action 0, plus a fair coin of ``+-noise`` drawn at the final step.
    The state is the first action and the time step.  With ``noise`` below
    half the margin every realised payout of the good arm beats every
    realised payout of the bad one.
    """
    if delay < 2:
        raise ValueError("delay must be >= 2")
    T = delay
    # states: 0 = start, 1 + 2*(t-1) + a0 for t in 1..T-1, last = terminal
    S = 1 + 2 * (T - 1) + 1
    end = S - 1
    P = np.zeros((S, 2, S))
    r = np.zeros((S, 2))

    def sid(t, a0):
        return 1 + 2 * (t - 1) + a0

    for a0 in (0, 1):
        P[0, a0, sid(1, a0) if T > 1 else end] = 1.0
    for t in range(1, T):
        for a0 in (0, 1):
            s = sid(t, a0)
            if t == T - 1:
                P[s, :, end] = 1.0
                r[s, :] = CHOICE_MARGIN * a0
            else:
                P[s, :, sid(t + 1, a0)] = 1.0
    P[end, :, end] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[end] = True
    mdp = TabularMdp(P, r, discount, terminal)
    final = np.zeros((S, 2), dtype=bool)
    final[[sid(T - 1, 0), sid(T - 1, 1)], :] = True

    def coin(rng, s, a):
        if not final[s, a]:
            return 0.0
        return noise if rng.random() < 0.5 else -noise

    return EpisodicEnv(mdp, 0, T, noise=coin if noise else None, name=f"choice-{T}",
                        value_floor=-(CHOICE_MARGIN + noise))


def build_traceback(delay: int, discount: float = TOY_DISCOUNT,
                    rewards: dict | None = None) -> EpisodicEnv:
    """The final reward is a deterministic function of the first two actions.

    Only ``(1, 1)`` pays +1; starting with 1 and then deviating costs -1.
    The state is the time step plus the actions taken so far (at most two).
    """
    if delay < 2:
        raise ValueError("delay must be >= 2")
    table = dict(TRACEBACK_REWARDS if rewards is None else rewards)
    T = delay
    # states: 0 start; 1 + a0 at t=1; 3 + 4*(t-2) + 2*a0 + a1 for t in 2..T-1; terminal
    S = 3 + 4 * (T - 2) + 1
    end = S - 1
    P = np.zeros((S, 2, S))
    r = np.zeros((S, 2))

    def sid(t, a0, a1=0):
        if t == 1:
            return 1 + a0
        return 3 + 4 * (t - 2) + 2 * a0 + a1

    for a0 in (0, 1):
        P[0, a0, sid(1, a0)] = 1.0
    for a0 in (0, 1):
        s = sid(1, a0)
        for a1 in (0, 1):
            if T == 2:
                P[s, a1, end] = 1.0
                r[s, a1] = table[(a0, a1)]
            else:
                P[s, a1, sid(2, a0, a1)] = 1.0
    for t in range(2, T):
        for a0 in (0, 1):
            for a1 in (0, 1):
                s = sid(t, a0, a1)
                if t == T - 1:
                    P[s, :, end] = 1.0
                    r[s, :] = table[(a0, a1)]
                else:
                    P[s, :, sid(t + 1, a0, a1)] = 1.0
    P[end, :, end] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[end] = True
    return EpisodicEnv(TabularMdp(P, r, discount, terminal), 0, T, name=f"traceback-{T}",
                       value_floor=-max(abs(v) for v in table.values()))


TOY_TASKS = {"choice": build_choice, "traceback": build_traceback}
