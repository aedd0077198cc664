"""Low-light image enhancement with brightness-controllable conditional diffusion."""

__version__ = "0.1.0"
