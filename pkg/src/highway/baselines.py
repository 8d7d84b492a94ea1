"""Importance-sampling corrected multi-step operators used as baselines.

Both operators are evaluated exactly by pushing a weighted state-action
measure forward along behaviour-policy trajectories.  Each step multiplies the
behaviour probability ``pi(a'|s')`` by a per-step weight (an IS ratio or a
trace), so the recursion follows the sampled-trajectory definition term for
term instead of substituting the target policy directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .mdp import PolicySet, TabularMdp
from .operators import LookaheadSet

TraceKind = Literal["retrace", "q_lambda", "full_is"]


@dataclass(frozen=True)
class TraceScheme:
    kind: TraceKind = "retrace"
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in ("retrace", "q_lambda", "full_is"):
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda={self.lam} outside [0, 1]")

    def coefficients(self, target_pi: np.ndarray, behavior_pi: np.ndarray) -> np.ndarray:
        """Per-(s, a) trace ``zeta``; zero where the behaviour policy never acts."""
        ratio = _ratio(target_pi, behavior_pi)
        if self.kind == "retrace":
            return self.lam * np.minimum(1.0, ratio)
        if self.kind == "q_lambda":
            return np.full_like(ratio, self.lam)
        return self.lam * ratio


class AbsoluteContinuityError(ValueError):
    pass


def _ratio(target_pi: np.ndarray, behavior_pi: np.ndarray) -> np.ndarray:
    ratio = np.zeros_like(target_pi, dtype=float)
    np.divide(target_pi, behavior_pi, out=ratio, where=behavior_pi > 0)
    return ratio


def check_absolute_continuity(target_pi: np.ndarray, behavior_pi: np.ndarray,
                              live: np.ndarray | None = None) -> None:
    bad = (target_pi > 0) & (behavior_pi <= 0)
    if live is not None:
        bad &= live[:, None]
    if bad.any():
        s, a = np.argwhere(bad)[0]
        raise AbsoluteContinuityError(
            f"target takes action {a} in state {s} where the behaviour policy never does")


def _step_kernel(mdp: TabularMdp, behavior_pi: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """``K[(s,a), (s',a')] = P(s'|s,a) pi(a'|s') weight(s',a')`` on live successors."""
    S, A = mdp.num_states, mdp.num_actions
    K = np.einsum("sat,tb->satb", mdp.live_transition, behavior_pi * weight)
    return K.reshape(S * A, S * A)


def multistep_be_is(mdp: TabularMdp, target_pi: np.ndarray, policy_set: PolicySet,
                    lookahead: LookaheadSet, q: np.ndarray) -> np.ndarray:
    """IS-corrected multi-step expectation operator.

    ``E_{pi,n} E_tau [ sum_{k<n} g^k rho_{1:k} r_k + g^n rho_{1:n} q(s_n, a_n) ]``
    where ``rho_{1:k}`` multiplies target/behaviour ratios from step 1 to k.
    """
    S, A = mdp.num_states, mdp.num_actions
    live = ~mdp.terminal
    r = mdp.reward.ravel()
    qf = q.ravel()
    g = mdp.discount
    out = np.zeros(S * A)
    for w_pi, behavior in zip(policy_set.weights(), policy_set.policies):
        check_absolute_continuity(target_pi, behavior, live)
        K = _step_kernel(mdp, behavior, _ratio(target_pi, behavior))
        measure = np.eye(S * A)
        acc = np.zeros(S * A)
        depth_w = dict(zip(lookahead.depths, lookahead.weights()))
        for k in range(lookahead.depths[-1] + 1):
            if k in depth_w:
                out += w_pi * depth_w[k] * (acc + g ** k * measure @ qf)
            acc = acc + g ** k * measure @ r
            measure = measure @ K
    out = out.reshape(S, A)
    out[mdp.terminal] = 0.0
    return out


def trace_operator(mdp: TabularMdp, target_pi: np.ndarray, behavior_pi: np.ndarray,
                   scheme: TraceScheme, horizon: int, q: np.ndarray) -> np.ndarray:
    """Return-based off-policy operator with traces, truncated at ``horizon``.

    ``q + E_tau sum_{t<H} g^t (prod_{t'=1..t} zeta_t') delta_t`` with
    ``delta_t = r_t + g E_{target} q(s_{t+1}, .) - q(s_t, a_t)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    S, A = mdp.num_states, mdp.num_actions
    g = mdp.discount
    v_target = (target_pi * q).sum(axis=1)
    td = (mdp.reward + g * mdp.live_transition @ v_target - q).ravel()
    K = _step_kernel(mdp, behavior_pi, scheme.coefficients(target_pi, behavior_pi))
    measure = np.eye(S * A)
    total = np.zeros(S * A)
    for t in range(horizon):
        total += g ** t * (measure @ td)
        measure = measure @ K
    out = q + total.reshape(S, A)
    out[mdp.terminal] = 0.0
    return out


def truncation_bound(mdp: TabularMdp, horizon: int, q: np.ndarray) -> float:
    """Upper bound on the neglected tail ``sum_{t>=H}`` of :func:`trace_operator`.

    Holds for traces bounded by one (retrace, q_lambda); ``full_is`` weights
    can exceed it.
    """
    g = mdp.discount
    scale = np.abs(mdp.reward).max() + (1 + g) * np.abs(q).max()
    if g >= 1.0:
        return np.inf
    return float(g ** horizon * scale / (1 - g))


def retrace_weight_profile(target_pi: np.ndarray, behavior_pi: np.ndarray,
                           trajectory: Sequence[tuple[int, int]], lam: float) -> np.ndarray:
    """Cumulative retrace weights ``prod_{t'=1..t} lam min(1, pi'/pi)`` per step.

    Entry 0 is always one; the trajectory is a list of ``(state, action)``.
    """
    weights = np.ones(len(trajectory))
    c = 1.0
    for t, (s, a) in enumerate(trajectory):
        if t == 0:
            continue
        b = behavior_pi[s, a]
        if b <= 0:
            raise ValueError(f"behaviour policy never takes action {a} in state {s}")
        c *= lam * min(1.0, target_pi[s, a] / b)
        weights[t] = c
    return weights
