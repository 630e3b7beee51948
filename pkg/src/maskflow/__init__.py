"""Learning coefficient-solution field pairs from partial observations."""

__version__ = "0.1.0"
