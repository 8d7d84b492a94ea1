"""Bellman, multi-step and highway operators on Q tables.

Every operator maps a Q table to a new Q table using exact expectations over
the transition kernel and the behavioural policies; nothing here samples.

The building block is the n-step expected return ``(B^pi)^(n-1) B q``: one
optimality backup followed by ``n - 1`` expectation backups under ``pi``.  The
highway gate compares it against the one-step return ``B q`` and keeps the
larger, and the policy/depth aggregation then combines the gated returns by
expectation, max, or temperature-``alpha`` softmax.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .mdp import PROB_ATOL, PolicySet, TabularMdp

Aggregation = Literal["expectation", "max", "smax"]
Operator = Callable[[np.ndarray], np.ndarray]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 100_000
SMAX_FLUSH = 1e-300


@dataclass(frozen=True)
class LookaheadSet:
    depths: tuple[int, ...]
    selection: tuple[float, ...] | None = None

    def __post_init__(self):
        depths = tuple(int(n) for n in self.depths)
        if not depths:
            raise ValueError("lookahead set must be nonempty")
        if any(n < 1 for n in depths):
            raise ValueError(f"lookahead depths must be >= 1, got {depths}")
        if len(set(depths)) != len(depths):
            raise ValueError(f"duplicate lookahead depths {depths}")
        order = np.argsort(depths)
        object.__setattr__(self, "depths", tuple(depths[i] for i in order))
        if self.selection is not None:
            sel = np.asarray(self.selection, dtype=float)
            if len(sel) != len(depths) or np.any(sel < 0) or abs(sel.sum() - 1) > PROB_ATOL:
                raise ValueError("depth selection must be a probability vector over depths")
            object.__setattr__(self, "selection", tuple(float(sel[i]) for i in order))

    @classmethod
    def range(cls, lo: int, hi: int) -> "LookaheadSet":
        return cls(tuple(range(lo, hi + 1)))

    def weights(self) -> np.ndarray:
        if self.selection is None:
            return np.full(len(self.depths), 1.0 / len(self.depths))
        return np.asarray(self.selection)


@dataclass(frozen=True)
class HighwayConfig:
    policy_set: PolicySet
    lookahead: LookaheadSet
    gate_threshold: int = 1
    policy_aggregation: Aggregation = "expectation"
    depth_aggregation: Aggregation = "expectation"
    temperature: float = np.inf

    def __post_init__(self):
        if self.gate_threshold < 0:
            raise ValueError("gate_threshold must be a nonnegative integer")
        for agg in (self.policy_aggregation, self.depth_aggregation):
            if agg not in ("expectation", "max", "smax"):
                raise ValueError(f"unknown aggregation {agg!r}")
        if "smax" in (self.policy_aggregation, self.depth_aggregation):
            if not self.temperature > 0:
                raise ValueError("smax needs a positive temperature")
        if len(self.policy_set) == 0:
            raise ValueError("policy set is empty")


@dataclass
class FixedPointReport:
    q: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# One-step backups


def bellman_optimality(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    out = mdp.reward + mdp.discount * mdp.live_transition @ q.max(axis=1)
    out[mdp.terminal] = 0.0
    return out


def bellman_expectation(mdp: TabularMdp, pi: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = mdp.reward + mdp.discount * mdp.live_transition @ (pi * q).sum(axis=1)
    out[mdp.terminal] = 0.0
    return out


def n_step_returns(mdp: TabularMdp, pi: np.ndarray, depths: Sequence[int],
                   q: np.ndarray, one_step: np.ndarray | None = None) -> dict[int, np.ndarray]:
    """``{n: (B^pi)^(n-1) B q}`` for every requested depth, sharing the prefix."""
    wanted = sorted(set(int(n) for n in depths))
    if not wanted or wanted[0] < 1:
        raise ValueError("depths must be positive")
    cur = bellman_optimality(mdp, q) if one_step is None else one_step
    out = {}
    for n in range(1, wanted[-1] + 1):
        if n > 1:
            cur = bellman_expectation(mdp, pi, cur)
        if n in wanted:
            out[n] = cur
    return out


def n_step_return_operator(mdp: TabularMdp, pi: np.ndarray, n: int, q: np.ndarray) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return n_step_returns(mdp, pi, [n], q)[n]


# ---------------------------------------------------------------------------
# Aggregation


def smax(values, alpha: float, axis: int | None = None):
    """Softmax-weighted average ``sum_x w_x x`` with ``w_x ~ exp(alpha x)``.

    ``alpha = inf`` returns the max.  Weights are computed after subtracting
    the max, and weights under ``1e-300`` are flushed to zero.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("smax of an empty vector")
    if axis is None:
        v = v.ravel()
        axis = 0
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if np.isinf(alpha):
        return v.max(axis=axis)
    z = alpha * (v - v.max(axis=axis, keepdims=True))
    w = np.exp(z)
    w[w < SMAX_FLUSH] = 0.0
    w /= w.sum(axis=axis, keepdims=True)
    return (w * v).sum(axis=axis)


def _aggregate(values: np.ndarray, weights: np.ndarray, mode: Aggregation,
               alpha: float) -> np.ndarray:
    # values has the aggregated axis first
    if mode == "expectation":
        return np.tensordot(weights, values, axes=(0, 0))
    if mode == "max":
        return values.max(axis=0)
    return smax(values, alpha, axis=0)


def gated_returns(mdp: TabularMdp, cfg: HighwayConfig, q: np.ndarray) -> np.ndarray:
    """Array ``[policy, depth, s, a]`` of gated returns ``max_{n' in {n1, n}}``.

    With ``gate_threshold == 0`` the threshold branch is ``q`` itself.
    """
    depths = cfg.lookahead.depths
    n1 = cfg.gate_threshold
    one = bellman_optimality(mdp, q)
    need = list(depths) + ([n1] if n1 >= 1 else [])
    out = np.empty((len(cfg.policy_set), len(depths)) + q.shape)
    for i, pi in enumerate(cfg.policy_set.policies):
        rets = n_step_returns(mdp, pi, need, q, one_step=one)
        threshold = q if n1 == 0 else rets[n1]
        for j, n in enumerate(depths):
            out[i, j] = np.maximum(threshold, rets[n])
    return out


def ungated_returns(mdp: TabularMdp, cfg: HighwayConfig, q: np.ndarray) -> np.ndarray:
    depths = cfg.lookahead.depths
    one = bellman_optimality(mdp, q)
    out = np.empty((len(cfg.policy_set), len(depths)) + q.shape)
    for i, pi in enumerate(cfg.policy_set.policies):
        rets = n_step_returns(mdp, pi, depths, q, one_step=one)
        for j, n in enumerate(depths):
            out[i, j] = rets[n]
    return out


def _combine(cfg: HighwayConfig, values: np.ndarray) -> np.ndarray:
    by_depth = np.moveaxis(values, 1, 0)
    per_policy = _aggregate(by_depth, cfg.lookahead.weights(), cfg.depth_aggregation,
                            cfg.temperature)
    return _aggregate(per_policy, cfg.policy_set.weights(), cfg.policy_aggregation,
                      cfg.temperature)


def highway_operator(mdp: TabularMdp, cfg: HighwayConfig, q: np.ndarray) -> np.ndarray:
    """General gated operator; the aggregation modes and gate come from ``cfg``."""
    out = _combine(cfg, gated_returns(mdp, cfg, q))
    out[mdp.terminal] = 0.0
    return out


# ---------------------------------------------------------------------------
# Named operators


def multistep_bo(mdp: TabularMdp, cfg: HighwayConfig, q: np.ndarray) -> np.ndarray:
    """Ungated multi-step optimality operator ``E_{pi,n} (B^pi)^(n-1) B q``."""
    cfg = _expectation_cfg(cfg)
    out = _combine(cfg, ungated_returns(mdp, cfg, q))
    out[mdp.terminal] = 0.0
    return out


def highway_generalized(mdp: TabularMdp, cfg: HighwayConfig, q: np.ndarray) -> np.ndarray:
    cfg = _expectation_cfg(cfg)
    if cfg.gate_threshold != 1:
        raise ValueError("highway_generalized uses gate threshold 1; "
                         "see broken_gate_variant for other thresholds")
    return highway_operator(mdp, cfg, q)


def highway_optimality(mdp: TabularMdp, policy_set: PolicySet, lookahead: LookaheadSet,
                       q: np.ndarray) -> np.ndarray:
    cfg = HighwayConfig(policy_set, lookahead, 1, "max", "max")
    return highway_operator(mdp, cfg, q)


def highway_softmax(mdp: TabularMdp, cfg: HighwayConfig, q: np.ndarray) -> np.ndarray:
    if not (cfg.policy_aggregation == cfg.depth_aggregation == "smax"):
        raise ValueError("highway_softmax needs smax aggregation over policies and depths")
    return highway_operator(mdp, cfg, q)


def broken_gate_variant(mdp: TabularMdp, cfg: HighwayConfig, q: np.ndarray) -> np.ndarray:
    """Gate ``max_{n' in {n1, n}}`` with ``n1 != 1`` (``n1 = 0`` compares to ``q``)."""
    if cfg.gate_threshold == 1:
        raise ValueError("gate threshold 1 is the highway operator itself")
    return highway_operator(mdp, _expectation_cfg(cfg), q)


def _expectation_cfg(cfg: HighwayConfig) -> HighwayConfig:
    if cfg.policy_aggregation == cfg.depth_aggregation == "expectation":
        return cfg
    raise ValueError("this operator aggregates by expectation only")


def gate_choices(mdp: TabularMdp, cfg: HighwayConfig, q: np.ndarray,
                 atol: float = 1e-12) -> np.ndarray:
    """Chosen ``n'`` per ``[policy, depth, s, a]`` for gate threshold 1.

    The n-step branch wins ties, so a policy whose n-step return matches the
    one-step return is reported as using depth n.
    """
    depths = cfg.lookahead.depths
    one = bellman_optimality(mdp, q)
    out = np.empty((len(cfg.policy_set), len(depths)) + q.shape, dtype=int)
    for i, pi in enumerate(cfg.policy_set.policies):
        rets = n_step_returns(mdp, pi, depths, q, one_step=one)
        for j, n in enumerate(depths):
            out[i, j] = np.where(rets[n] >= one - atol, n, 1)
    return out


# ---------------------------------------------------------------------------
# Fixed points and distances


def fixed_point(operator: Operator, q0: np.ndarray, tol: float = DEFAULT_TOL,
                max_iters: int = DEFAULT_MAX_ITERS, record: bool = False) -> FixedPointReport:
    """Banach iteration ``q_k = K q_{k-1}`` until ``||q_k - q_{k-1}|| <= tol``.

    A residual that grows a thousandfold over the first one is reported as a
    non-converged run instead of raising.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.array(q0, dtype=float)
    first = None
    history = []
    residual = np.inf
    for k in range(1, max_iters + 1):
        new = operator(q)
        residual = float(np.max(np.abs(new - q))) if q.size else 0.0
        if record:
            history.append(residual)
        q = new
        if residual <= tol:
            return FixedPointReport(q, k, residual, True, history)
        if not np.isfinite(residual):
            break
        if first is None:
            first = max(residual, tol)
        elif residual > 1e3 * first:
            break
    return FixedPointReport(q, k, residual, False, history)


def distance_pointwise(q_after: np.ndarray, q_star: np.ndarray) -> np.ndarray:
    q_after = np.asarray(q_after, dtype=float)
    q_star = np.asarray(q_star, dtype=float)
    if q_after.shape != q_star.shape:
        raise ValueError(f"shape mismatch {q_after.shape} vs {q_star.shape}")
    return np.abs(q_after - q_star)


def distance_sup(q_after: np.ndarray, q_star: np.ndarray) -> float:
    return float(distance_pointwise(q_after, q_star).max())
