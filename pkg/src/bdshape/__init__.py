"""Channel shaping with beyond-diagonal reconfigurable intelligent surfaces.

Modules
-------
numerics   matrix exponential, unitary projection, Takagi factorization, water-filling
channel    scenario, channel sampling, assembly through the surface, CSI error
manifold   block-unitary scattering matrices and the geodesic conjugate-gradient optimizer
designs    closed-form scattering matrices
bounds     analytical limits on singular values, power, rank and capacity
solvers    Pareto sweeps, rate maximization, power maximization
cli        experiment runner (``bdshape`` console script)
"""

__version__ = "0.1.0"

from .channel import ChannelSet, Scenario, assemble, sample_channels  # noqa: E402
from .manifold import BlockUnitary, ObjectiveAdapter, OptimizerConfig, optimize  # noqa: E402

__all__ = [
    "BlockUnitary",
    "ChannelSet",
    "ObjectiveAdapter",
    "OptimizerConfig",
    "Scenario",
    "assemble",
    "optimize",
    "sample_channels",
]
