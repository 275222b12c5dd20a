"""Semi-supervised multi-modal emotion classification with cross-modal MMD alignment."""

__version__ = "0.1.0"
