"""gsedit: local text+image guided editing of Gaussian-splat scenes."""

__version__ = "0.1.0"
