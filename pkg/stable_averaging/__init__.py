"""Spectral-Galerkin simulation and averaging-rate experiments for slow-fast SPDEs driven by alpha-stable noise."""

__version__ = "0.3.0"
