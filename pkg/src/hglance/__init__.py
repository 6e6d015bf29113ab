"""Active haptic exploration for sparse 3D object recognition."""

__version__ = "0.1.0"
