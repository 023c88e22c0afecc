"""Signed-distance building segmentation with a multi-stage convolutional network."""

__version__ = "0.1.0"
