"""causalign: single domain generalization via counterfactual analysis of
simulated domain shift and effect-weighted feature alignment."""

__version__ = "0.1.0"
