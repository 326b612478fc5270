"""derguard: DER dispatch, dispatch-falsification synthesis, and margin-based
attack detection on radial distribution feeders."""

__version__ = "0.1.0"
