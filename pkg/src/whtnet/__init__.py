"""Walsh-Hadamard transform layers for convolutional networks, in NumPy."""

__version__ = "0.1.0"
