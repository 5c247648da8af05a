"""Characteristic mapping solver for the 3D incompressible Euler equations.

The backward flow map is stored as tricubic Hermite jets on a coarse map
grid and decomposed into submaps; vorticity is recovered at any resolution
by pullback of the initial vorticity, and velocity by a spectral
Biot-Savart inversion on a separate velocity grid.
"""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, NumericalError, SingularMapError  # noqa: E402
from .field_jet import GridSpec, JetScalarField, JetVectorField  # noqa: E402

__all__ = ["__version__", "ConfigError", "ContractError", "NumericalError",
           "SingularMapError", "GridSpec", "JetScalarField", "JetVectorField"]
