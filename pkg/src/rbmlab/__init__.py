"""Penalized-SDE construction of reflected Brownian motion, boundary local
time, and damped parallel transport, with Monte Carlo verification tools."""

from . import damped, estimators, geometry, harness, penalized, reflected, skorohod1d, transport
from .errors import DomainError, IntegrationError, QuadratureError, TubularZoneError
from .geometry import ManifoldModel, TangentVector, parse_model
from .grids import DriverPath, TimeGrid

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "DriverPath",
    "IntegrationError",
    "ManifoldModel",
    "QuadratureError",
    "TangentVector",
    "TimeGrid",
    "TubularZoneError",
    "damped",
    "estimators",
    "geometry",
    "harness",
    "parse_model",
    "penalized",
    "reflected",
    "skorohod1d",
    "transport",
]
