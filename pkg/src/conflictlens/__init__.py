"""Classifying low-PET critical events at signalized intersections as confirmed conflicts."""

__version__ = "0.1.0"
