"""aidlab: adaptive incentive design for games with unknown agent preferences.

A coordinator repeatedly observes strategic agents (equilibrium play or
myopic updates), learns the parameters of their cost/update models online via
Bregman prox-mapping updates, and synthesizes incentive parameters by
constrained least squares so the collective response converges to a desired
point at a desired incentive value.
"""

__version__ = "0.1.0"
