"""Filter-guided diffusion: structure guidance for black-box diffusion samplers."""

__version__ = "0.1.0"
