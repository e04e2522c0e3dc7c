"""Vision-based vehicle counting with dynamic textures and Gaussian processes."""

from trafficdt.errors import InputError, NumericalError

__version__ = "0.1.0"

__all__ = ["InputError", "NumericalError", "__version__"]
