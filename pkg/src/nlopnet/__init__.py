"""Complex-valued operator framework and unrolled MRI reconstruction networks."""

__version__ = "0.1.0"
