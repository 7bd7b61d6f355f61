"""Heterogeneous treatment effect estimators.

Thin python surface over the C++ core: simulation scenarios, propensity
machinery, ATE estimators and the three effect models (pollinated
transformed-outcome forests, causal boosting, causal MARS) plus baselines
and the benchmark runner.
"""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
