"""Output-constrained Bayesian neural networks.

Constraint-aware priors over network parameters, three black-box posterior
samplers, the matching evaluation metrics, and a config-driven experiment
runner. See README.md for the tour.
"""

__version__ = "0.1.0"
