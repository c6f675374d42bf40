"""Carbon-aware federated edge intelligence simulator."""

__version__ = "0.1.0"
