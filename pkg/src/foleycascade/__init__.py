"""Cascaded text-to-foley synthesis at desk scale.

Text prompt -> low-resolution mel (diffusion) -> full mel (diffusion
super-resolution) -> waveform (FiLM-conditioned inverter).
"""

__version__ = "0.1.0"
