"""Guidance service: procedural diffusion model behind a binary HTTP protocol."""

__version__ = "0.1.0"
