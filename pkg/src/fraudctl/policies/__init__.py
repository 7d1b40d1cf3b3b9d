from .greedy import (BaselinePolicy, ControlPolicy, MyopicPolicy, NaivePolicy, baseline_decide,
                     myopic_decide, naive_decide)
from .oracles import (ProblemSizeError, ToyMDP, additive_objective, brute_force_policy,
                      build_toy_mdp, greedy_sequence, policy_values, prospective_objective,
                      value_iteration)
from .prospective import (ProspectivePolicy, ProspectiveState, delta_reference,
                          prospective_rewards, rgh_decide, rho_tau)

POLICY_KINDS = {
    "baseline": BaselinePolicy,
    "naive": NaivePolicy,
    "myopic": MyopicPolicy,
    "prospective": ProspectivePolicy,
}

__all__ = [
    "BaselinePolicy", "ControlPolicy", "MyopicPolicy", "NaivePolicy", "ProspectivePolicy",
    "ProspectiveState", "POLICY_KINDS", "ProblemSizeError", "ToyMDP", "additive_objective",
    "baseline_decide", "brute_force_policy", "build_toy_mdp", "delta_reference",
    "greedy_sequence", "myopic_decide", "naive_decide", "policy_values", "prospective_objective",
    "prospective_rewards", "rgh_decide", "rho_tau", "value_iteration",
]
