"""counterfact: retrospective evaluation of age-dependent vaccine allocation.

A data-driven factorized severity model coupled to a Bayesian age-structured
renewal-process simulator, used to compare counterfactual allocation
strategies, uptake increases, alternative disease risk profiles and waning
timescales.
"""

__version__ = "0.1.0"
