"""Video anomaly detection by completing erased patches of spatio-temporal cubes."""

__version__ = "0.1.0"
