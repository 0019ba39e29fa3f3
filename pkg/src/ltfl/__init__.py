"""Joint pruning, quantization and power control for federated learning over lossy uplinks."""

__version__ = "0.1.0"
