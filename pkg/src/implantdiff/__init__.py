"""Implant generation by conditional point-cloud diffusion and spectral Poisson voxelization."""

__version__ = "0.1.0"
