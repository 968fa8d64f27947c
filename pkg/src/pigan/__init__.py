"""Physics-informed adversarial generation of two-qubit resource states."""

__version__ = "0.1.0"
