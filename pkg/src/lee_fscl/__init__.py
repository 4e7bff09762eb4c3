"""Few-shot class-incremental gesture learning with latent embedding exploitation."""

__version__ = "0.1.0"
