"""Predictive energy management for hybrid-electric aircraft propulsion."""

from .models import PowertrainParams, QuadMap, EtaCoeffs, Topology

__version__ = "0.1.0"

__all__ = ["PowertrainParams", "QuadMap", "EtaCoeffs", "Topology", "__version__"]
