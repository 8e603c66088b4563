"""Geometry-visual graph networks for multi-person human-object interaction segmentation."""

__version__ = "0.1.0"
