"""Multi-UAV edge-computing trajectory control: optimisation and learning lab."""

__version__ = "0.1.0"
