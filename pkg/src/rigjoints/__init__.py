"""Joint localization for rigged human point clouds."""

__version__ = "0.1.0"
