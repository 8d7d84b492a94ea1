"""Hyperparameter defaults and named experiment configs.

``AGENT_DEFAULTS`` / ``HQL_DEFAULTS`` / ``HVI_DEFAULTS`` hold the published
settings; ``PRESETS`` maps a name to a config document.  The ``acceptance-NN``
presets run the corresponding acceptance check.
"""
from __future__ import annotations

from ..algorithms import AgentParams, HqlParams, HviParams
from ..operators import LookaheadSet

TOY_BUDGET = 2000
TOY_SEEDS = list(range(20))
TOY_DELAYS = [6, 12, 18]
TOY_AGENTS = ["highway_q", "q_lambda", "sarsa_lambda", "monte_carlo"]
MULTIROOM_ROOMS = [2, 4, 6]
MULTIROOM_SIZE = 5

AGENT_DEFAULTS = AgentParams(epsilon=0.2, lam=0.9, step_size=0.1, mc_rate=0.1, budget=TOY_BUDGET)
HQL_DEFAULTS = HqlParams(lookahead=None, num_policies=3, rollout_epochs=1, run_epochs=TOY_BUDGET,
                         update_epochs=None, epsilon=0.2)
HVI_DEFAULTS = HviParams(error_bound=1e-10, capacity=5, interval=7,
                         lookahead=LookaheadSet.range(1, 10))
PI_EVAL_DEPTH = 10

PRESETS: dict[str, dict] = {
    "threefork-fixed-points": {
        "kind": "fixed_point", "experiment": "threefork-fixed-points",
        "env": {"preset": "threefork"},
        "spec": {"operators": ["multistep_bo", "highway_generalized"],
                 "depths": list(range(1, 11))},
    },
    "threefork-convergence": {
        "kind": "convergence_iters", "experiment": "threefork-convergence",
        "env": {"preset": "threefork"},
        "spec": {"operators": ["multistep_bo", "highway_generalized", "highway_optimality"],
                 "depths": list(range(1, 11)), "depth_mode": "range"},
    },
    "threefork-gate-trace": {
        "kind": "gate_trace", "experiment": "threefork-gate-trace",
        "env": {"preset": "threefork"}, "spec": {"depth": 10},
    },
    "multiroom": {
        "kind": "multiroom", "experiment": "multiroom",
        "spec": {"rooms": MULTIROOM_ROOMS, "room_size": MULTIROOM_SIZE,
                 "algorithms": ["value_iteration", "policy_iteration", "highway_value_iteration"]},
    },
    "toy-choice": {
        "kind": "toy_tasks", "experiment": "toy-choice", "seeds": TOY_SEEDS,
        "spec": {"task": "choice", "delays": TOY_DELAYS, "agents": TOY_AGENTS},
    },
    "toy-traceback": {
        "kind": "toy_tasks", "experiment": "toy-traceback", "seeds": TOY_SEEDS,
        "spec": {"task": "traceback", "delays": TOY_DELAYS, "agents": TOY_AGENTS},
    },
    "retrace-profile": {
        "kind": "retrace_profile", "experiment": "retrace-profile", "seeds": [0],
        "spec": {"lams": [0.5, 0.9, 1.0], "steps": 20, "epsilon": 0.2, "num_actions": 4},
    },
}

for _i in range(1, 13):
    _name = f"acceptance-{_i:02d}"
    PRESETS[_name] = {"kind": "property_suite", "experiment": _name,
                      "spec": {"suite": _name}}
