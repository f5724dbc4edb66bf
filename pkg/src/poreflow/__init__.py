"""Coupled graph-network / 3D U-Net surrogate for pore-scale multiphase flow."""

__version__ = "0.1.0"
