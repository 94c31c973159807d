"""Image geo-localization with dominant-set feature matching."""

__version__ = "0.1.0"
