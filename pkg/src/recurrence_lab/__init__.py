"""recurrence-lab: quantitative recurrence statistics for chaotic maps.

Simulates hit counts of shrinking return targets, S_n(x) = #{k <= n :
T^k x within distance r_k(x) of x}, against the expected mass sum
Phi(n), and verifies the measure-theoretic inequalities that control
the error term, for hyperbolic toral automorphisms and full-branch
expanding interval maps.
"""

__version__ = "0.1.0"

from .kernels import COMPILED
from .systems import (
    TorusAutomorphism,
    TorusPoint,
    IntervalMapSpec,
    cat_map,
    linear_map,
    perturbed_map,
    step_torus,
    step_interval,
    torus_distance,
    cylinder_interval,
    periodic_points_torus,
    periodic_point_of_cylinder,
)

__all__ = [
    "COMPILED",
    "__version__",
    "TorusAutomorphism",
    "TorusPoint",
    "IntervalMapSpec",
    "cat_map",
    "linear_map",
    "perturbed_map",
    "step_torus",
    "step_interval",
    "torus_distance",
    "cylinder_interval",
    "periodic_points_torus",
    "periodic_point_of_cylinder",
]
