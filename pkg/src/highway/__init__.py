"""Highway operators: gated multi-step Bellman backups for delayed rewards."""
from .mdp import (MdpValidationError, PolicySet, TabularMdp, deterministic_policy, epsilon_greedy,
                  greedy_actions, greedy_policy, q_pi_oracle, q_star_oracle, random_mdp,
                  uniform_policy)
from .operators import (FixedPointReport, HighwayConfig, LookaheadSet, bellman_expectation,
                        bellman_optimality, broken_gate_variant, distance_pointwise, distance_sup,
                        fixed_point, gate_choices, highway_generalized, highway_optimality,
                        highway_softmax, multistep_bo, n_step_return_operator, smax)

__version__ = "0.1.0"
