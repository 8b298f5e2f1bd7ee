"""Photon recoil in collectively radiating atomic arrays."""

__version__ = "0.1.0"
