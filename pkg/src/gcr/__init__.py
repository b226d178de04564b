"""Geostatistical capture-recapture (GCR) models."""

__version__ = "0.1.0"

from .estimators import GCRAbundance, SCRAbundance  # noqa: E402

__all__ = ["GCRAbundance", "SCRAbundance", "__version__"]
