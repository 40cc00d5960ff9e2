"""Wave-packet evaluation of Fourier integral operators on 2-D data."""

__version__ = "0.1.0"
