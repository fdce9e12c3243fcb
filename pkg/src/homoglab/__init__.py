"""homoglab: a numerical laboratory for quantitative stochastic homogenization.

Tools for sampling uniformly elliptic random coefficient fields with finite
range of dependence, computing variational effective-coefficient brackets on
dyadic cubes, tracking their renormalization across scales, solving corrector
problems, and measuring homogenization error rates.
"""

from homoglab.errors import ConfigError, HomoglabError, SolverError

__version__ = "0.1.0"

__all__ = ["ConfigError", "HomoglabError", "SolverError", "__version__"]
