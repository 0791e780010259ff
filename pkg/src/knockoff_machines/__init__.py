"""Deep knockoff machines: generative knockoff samplers for model-X variable selection."""
__version__ = "0.1.0"
