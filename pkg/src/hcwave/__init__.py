"""High-contrast wave equation: fine FEM, periodic homogenization and LOD."""
from . import coefficients, fem, homogenize, interpolation, linalg, lod, mesh, timestep

__version__ = "0.1.0"

__all__ = ["coefficients", "fem", "homogenize", "interpolation", "linalg", "lod", "mesh", "timestep"]
