"""Diffusion-guided SV-BRDF texture optimization for fixed triangle meshes."""

__version__ = "0.1.0"
