"""Decision-aware conformal uncertainty sets for robust optimization."""

__version__ = "0.1.0"
