"""Simulation and analysis of a Rydberg single-photon source feeding a Raman quantum memory."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
