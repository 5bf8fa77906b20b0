"""Recurrent multi-stage 3D pose estimation from monocular image sequences."""

__version__ = "0.1.0"
