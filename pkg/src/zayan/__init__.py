"""Feature-level contrastive pretraining and Transformer classification for tabular data."""

__version__ = "0.1.0"
